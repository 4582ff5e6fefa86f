#![allow(dead_code)]

use dispatch_cleo::netmodel::{Bus, Drp, Generator, Line, Load, PowerSystem, ResUnit};
use dispatch_cleo::qpsolve::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// Connected network with a generator and a load on every bus, so any bus
/// injection pattern can be expressed through the device vectors.
pub fn random_network(rng: &mut ChaCha8Rng, nb: usize) -> PowerSystem {
    let slack = rng.random_range(0..nb);
    let buses = (0..nb)
        .map(|id| Bus {
            id,
            is_slack: id == slack,
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for b in 1..nb {
        pairs.push((rng.random_range(0..b), b));
    }
    for _ in 0..rng.random_range(0..=3usize) {
        let f = rng.random_range(0..nb);
        let t = rng.random_range(0..nb);
        if f != t
            && !pairs
                .iter()
                .any(|&(x, y)| (x, y) == (f, t) || (x, y) == (t, f))
        {
            pairs.push((f, t));
        }
    }
    let lines = pairs
        .into_iter()
        .map(|(from_bus, to_bus)| Line {
            from_bus,
            to_bus,
            reactance: rng.random_range(0.02..0.5),
            flow_limit: 100.0,
        })
        .collect();
    let generators = (0..nb)
        .map(|bus| Generator {
            bus,
            a: 1.0,
            b: 1.0,
            p_min: 0.0,
            p_max: 10.0,
        })
        .collect();
    let loads = (0..nb).map(|bus| Load { bus, p: 1.0 }).collect();
    PowerSystem::new(100.0, buses, lines, generators, vec![], vec![], loads).unwrap()
}

/// Dense Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// DC flows from bus injections by solving `B θ = P` with the slack angle at 0.
pub fn direct_dc_flows(sys: &PowerSystem, injection: &[f64]) -> Vec<f64> {
    let nb = sys.n_bus();
    let slack = sys.slack_bus();
    let mut bmat = vec![vec![0.0; nb]; nb];
    for l in &sys.lines {
        let y = 1.0 / l.reactance;
        bmat[l.from_bus][l.from_bus] += y;
        bmat[l.to_bus][l.to_bus] += y;
        bmat[l.from_bus][l.to_bus] -= y;
        bmat[l.to_bus][l.from_bus] -= y;
    }
    let keep: Vec<usize> = (0..nb).filter(|&b| b != slack).collect();
    let reduced: Vec<Vec<f64>> = keep
        .iter()
        .map(|&r| keep.iter().map(|&c| bmat[r][c]).collect())
        .collect();
    let rhs: Vec<f64> = keep.iter().map(|&b| injection[b]).collect();
    let sol = gauss_solve(reduced, rhs);
    let mut theta = vec![0.0; nb];
    for (k, &b) in keep.iter().enumerate() {
        theta[b] = sol[k];
    }
    sys.lines
        .iter()
        .map(|l| (theta[l.from_bus] - theta[l.to_bus]) / l.reactance)
        .collect()
}

const EDGE_TOL: f64 = 1e-12;

fn feasible_within(p: &QpProblem, x: &[f64; 2], tol: f64) -> bool {
    (0..2).all(|i| x[i] >= p.lb[i] - tol && x[i] <= p.ub[i] + tol)
        && (0..p.b_ineq.len())
            .all(|r| p.a_ineq[(r, 0)] * x[0] + p.a_ineq[(r, 1)] * x[1] <= p.b_ineq[r] + tol)
}

fn obj(p: &QpProblem, x: &[f64; 2]) -> f64 {
    let q = &p.q;
    0.5 * (q[(0, 0)] * x[0] * x[0]
        + (q[(0, 1)] + q[(1, 0)]) * x[0] * x[1]
        + q[(1, 1)] * x[1] * x[1])
        + p.c[0] * x[0]
        + p.c[1] * x[1]
}

/// Every constraint boundary as `a·x = b`.
fn boundary_lines(p: &QpProblem) -> Vec<([f64; 2], f64)> {
    let mut lines: Vec<([f64; 2], f64)> = (0..p.b_ineq.len())
        .map(|r| ([p.a_ineq[(r, 0)], p.a_ineq[(r, 1)]], p.b_ineq[r]))
        .collect();
    for i in 0..2 {
        let mut e = [0.0; 2];
        e[i] = 1.0;
        lines.push((e, p.ub[i]));
        lines.push(([-e[0], -e[1]], -p.lb[i]));
    }
    lines
}

fn keep_best(best: &mut Option<(f64, [f64; 2])>, p: &QpProblem, x: [f64; 2], tol: f64) {
    if feasible_within(p, &x, tol) {
        let f = obj(p, &x);
        if best.is_none_or(|(b, _)| f < b) {
            *best = Some((f, x));
        }
    }
}

/// 1-D grid of `step` along a boundary line, then repeated 10x finer grids
/// around the incumbent.
fn line_minimum(p: &QpProblem, a: [f64; 2], b: f64, step: f64, best: &mut Option<(f64, [f64; 2])>) {
    let norm2 = a[0] * a[0] + a[1] * a[1];
    if norm2 == 0.0 {
        return;
    }
    let norm = norm2.sqrt();
    let origin = [a[0] * b / norm2, a[1] * b / norm2];
    let dir = [-a[1] / norm, a[0] / norm];
    let at = |t: f64| [origin[0] + t * dir[0], origin[1] + t * dir[1]];
    let mut local: Option<(f64, f64)> = None;
    let scan = |lo: f64, hi: f64, h: f64, local: &mut Option<(f64, f64)>| {
        let n = ((hi - lo) / h).round() as i64;
        for k in 0..=n {
            let t = lo + k as f64 * h;
            let x = at(t);
            if feasible_within(p, &x, EDGE_TOL) {
                let f = obj(p, &x);
                if local.is_none_or(|(g, _)| f < g) {
                    *local = Some((f, t));
                }
            }
        }
    };
    scan(-4.0, 4.0, step, &mut local);
    let mut h = step;
    for _ in 0..8 {
        let Some((_, t0)) = local else { return };
        scan(t0 - 2.0 * h, t0 + 2.0 * h, h / 10.0, &mut local);
        h /= 10.0;
    }
    if let Some((_, t)) = local {
        keep_best(best, p, at(t), EDGE_TOL);
    }
}

/// Brute-force minimum of a 2-variable QP. The optimum is interior, on one
/// boundary line or at a vertex, so the oracle takes the best of: a `step`
/// grid over the box refined by pattern search, a `step` grid along every
/// boundary line refined by zooming, and every feasible pairwise vertex.
pub fn grid_minimum(p: &QpProblem, step: f64) -> Option<(f64, [f64; 2])> {
    let mut best: Option<(f64, [f64; 2])> = None;
    let steps = |lo: f64, hi: f64, h: f64| ((hi - lo) / h).floor() as usize;
    let (nx, ny) = (steps(p.lb[0], p.ub[0], step), steps(p.lb[1], p.ub[1], step));
    for i in 0..=nx {
        let x0 = p.lb[0] + i as f64 * step;
        for j in 0..=ny {
            keep_best(&mut best, p, [x0, p.lb[1] + j as f64 * step], 0.0);
        }
    }
    // pattern search: stay at a level while it improves, then halve
    let mut h = step / 2.0;
    let mut moves = 0;
    while h > 1e-11 && moves < 10_000 {
        let (f0, center) = best?;
        for i in -20i32..=20 {
            for j in -20i32..=20 {
                keep_best(
                    &mut best,
                    p,
                    [center[0] + i as f64 * h, center[1] + j as f64 * h],
                    0.0,
                );
            }
        }
        if best.unwrap().0 < f0 {
            moves += 1;
        } else {
            h /= 2.0;
        }
    }

    let lines = boundary_lines(p);
    for &(a, b) in &lines {
        line_minimum(p, a, b, step, &mut best);
    }
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let ((a, b), (c, d)) = (lines[i], lines[j]);
            let det = a[0] * c[1] - a[1] * c[0];
            if det.abs() > 1e-12 {
                let x = [(b * c[1] - a[1] * d) / det, (a[0] * d - b * c[0]) / det];
                keep_best(&mut best, p, x, EDGE_TOL);
            }
        }
    }
    best
}

/// Two buses joined by one line of `flow_limit` pu. A cheap generator sits at
/// the slack bus; an expensive one, the load and a single DRP sit at bus 1.
///
/// With DR delivered in full and the line congested, the dispatch cost in
/// the DR commitment `p` is `a1 (L - F - p)² + b1 (L - F - p) + π p + const`,
/// minimised at `p* = L - F - (π - b1) / (2 a1)` = 0.4 pu.
pub fn one_drp_system() -> PowerSystem {
    PowerSystem::new(
        100.0,
        vec![
            Bus {
                id: 0,
                is_slack: true,
            },
            Bus {
                id: 1,
                is_slack: false,
            },
        ],
        vec![Line {
            from_bus: 0,
            to_bus: 1,
            reactance: 0.1,
            flow_limit: 1.0,
        }],
        vec![
            Generator {
                bus: 0,
                a: 100.0,
                b: 1000.0,
                p_min: 0.0,
                p_max: 5.0,
            },
            Generator {
                bus: 1,
                a: 2500.0,
                b: 2000.0,
                p_min: 0.0,
                p_max: 5.0,
            },
        ],
        vec![],
        vec![Drp {
            bus: 1,
            p_base: 0.6,
            pi_s: 300.0,
            pi_max: 400.0,
            pi_rr: 100.0,
            pi_dr: 10_000.0,
        }],
        vec![Load { bus: 1, p: 3.0 }],
    )
    .unwrap()
}

pub const ONE_DRP_OPTIMUM: f64 = 0.4;

/// Random 2-variable PSD QP with a box and three inequalities that keep a
/// ball around an interior point feasible. Every fifth problem has a rank-one
/// Hessian and every tenth is a pure LP.
pub fn random_qp(rng: &mut ChaCha8Rng, k: usize) -> QpProblem {
    let mut lb = DVector::zeros(2);
    let mut ub = DVector::zeros(2);
    for i in 0..2 {
        let w = rng.random_range(0.2..1.0);
        lb[i] = rng.random_range(-1.0..0.0);
        ub[i] = lb[i] + w;
    }
    let x0 = DVector::from_fn(2, |i, _| rng.random_range(lb[i] + 0.05..ub[i] - 0.05));
    let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
    let q = if k.is_multiple_of(10) {
        DMatrix::zeros(2, 2)
    } else if k.is_multiple_of(5) {
        let v = m.column(0).into_owned();
        &v * v.transpose()
    } else {
        &m * m.transpose()
    };
    let c = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(3, |r, _| {
        a.row(r).transpose().dot(&x0) + rng.random_range(0.05..0.5)
    });
    QpProblem {
        q,
        c,
        a_ineq: a,
        b_ineq: b,
        lb,
        ub,
    }
}

/// One generator at the slack bus feeding a load across one line, with an
/// optional RES unit of 1 pu nominal and ±100 % range at the load bus.
pub fn one_gen_system(a: f64, b: f64, load: f64, with_res: bool) -> PowerSystem {
    PowerSystem::new(
        100.0,
        vec![
            Bus {
                id: 0,
                is_slack: true,
            },
            Bus {
                id: 1,
                is_slack: false,
            },
        ],
        vec![Line {
            from_bus: 0,
            to_bus: 1,
            reactance: 0.1,
            flow_limit: 10.0,
        }],
        vec![Generator {
            bus: 0,
            a,
            b,
            p_min: 0.0,
            p_max: 5.0,
        }],
        if with_res {
            vec![ResUnit {
                bus: 1,
                p_nominal: 1.0,
                r_pct: 100.0,
            }]
        } else {
            vec![]
        },
        vec![],
        vec![Load { bus: 1, p: load }],
    )
    .unwrap()
}
