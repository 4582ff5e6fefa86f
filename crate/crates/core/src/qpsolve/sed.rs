use nalgebra::{DMatrix, DVector};

use super::{solve, QpOptions, QpProblem, QpSolution};
use crate::dispatch::{AffineResponse, Decision, DispatchModel, FlowDrBasis};
use crate::error::{Error, Result};

/// How the dispatch QP is specialised.
#[derive(Debug, Clone, Default)]
pub struct SedQpOptions {
    /// Trust-region center for the DR block; `None` means no ball.
    pub center: Option<DVector<f64>>,
    /// ∞-norm radius around `center`; 0 pins DR at the center.
    pub radius: f64,
    /// Add the (decision-independent) variance cost to the reported objective.
    pub include_variance: bool,
}

impl SedQpOptions {
    /// Full-range DR, no ball.
    pub fn unrestricted(include_variance: bool) -> Self {
        SedQpOptions {
            center: None,
            radius: f64::INFINITY,
            include_variance,
        }
    }

    pub fn ball(center: DVector<f64>, radius: f64, include_variance: bool) -> Self {
        SedQpOptions {
            center: Some(center),
            radius,
            include_variance,
        }
    }
}

/// Variable layout `[p_g_base; p_rd]` and the objective constant dropped from the QP.
#[derive(Debug, Clone, PartialEq)]
pub struct SedLayout {
    pub n_gen: usize,
    pub n_drp: usize,
    /// `Σ π_j A0_j` plus the variance cost when included.
    pub constant: f64,
}

impl SedLayout {
    pub fn decision(&self, x: &DVector<f64>) -> Decision {
        Decision::new(
            x.rows(0, self.n_gen).into_owned(),
            // round-off below zero would read as a DR-floor violation
            x.rows(self.n_gen, self.n_drp)
                .map(|v| if v < 0.0 && v > -1e-12 { 0.0 } else { v }),
        )
    }
}

/// Builds the dispatch QP: generation cost plus priced mean DR response,
/// subject to adequacy, two-sided line limits at ζ = 0, generation limits, DR
/// limits and the optional ∞-norm ball around the DR center.
pub fn assemble_sed_qp(
    model: &DispatchModel,
    response: &AffineResponse,
    opts: &SedQpOptions,
) -> Result<(QpProblem, SedLayout)> {
    let sys = &model.sys;
    let ng = sys.n_gen();
    let nd = sys.n_drp();
    let n = ng + nd;
    if response.dim() != nd || response.a1.shape() != (nd, nd) {
        return Err(Error::Dimension(format!(
            "response model has dimension {}, system has {nd} drps",
            response.dim()
        )));
    }
    if let Some(c) = &opts.center {
        if c.len() != nd {
            return Err(Error::Dimension(format!(
                "trust-region center has {} entries, system has {nd} drps",
                c.len()
            )));
        }
    }

    let prices = sys.drp_prices();
    let mut q = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    for (i, g) in sys.generators.iter().enumerate() {
        q[(i, i)] = 2.0 * g.a;
        c[i] = g.b;
        lb[i] = g.p_min;
        ub[i] = g.p_max;
    }
    let dr_price = &response.a1 * &prices;
    for j in 0..nd {
        c[ng + j] = dr_price[j];
        let cap = model.dr_max[j];
        let (lo, hi) = match &opts.center {
            Some(center) => {
                let ctr = center[j].clamp(0.0, cap);
                ((ctr - opts.radius).max(0.0), (ctr + opts.radius).min(cap))
            }
            None => (0.0, cap),
        };
        lb[ng + j] = lo;
        ub[ng + j] = hi.max(lo);
    }

    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();

    // adequacy: Σ p_g + Σ P^R + Σ r(p) >= Σ P^L + margin
    let mut adequacy = DVector::zeros(n);
    for i in 0..ng {
        adequacy[i] = -1.0;
    }
    let delivered = response.a1.column_sum();
    for j in 0..nd {
        adequacy[ng + j] = -delivered[j];
    }
    rows.push(adequacy);
    rhs.push(
        model.res_nominal.sum() + response.a0.sum()
            - model.loads.sum()
            - model.options.adequacy_margin,
    );

    // two-sided line limits at ζ = 0
    let net = &model.net;
    let gen_sens = &net.ptdf * &net.maps.gen;
    let drp_sens = &net.ptdf * &net.maps.drp;
    let mut fixed =
        &net.ptdf * (&net.maps.res * &model.res_nominal - &net.maps.load * &model.loads);
    let drp_coef = match model.options.flow_dr_basis {
        FlowDrBasis::Accepted => drp_sens.clone(),
        FlowDrBasis::Realized => {
            fixed += &drp_sens * &response.a0;
            &drp_sens * response.a1.transpose()
        }
    };
    for (l, line) in sys.lines.iter().enumerate() {
        let mut row = DVector::zeros(n);
        for i in 0..ng {
            row[i] = gen_sens[(l, i)];
        }
        for j in 0..nd {
            row[ng + j] = drp_coef[(l, j)];
        }
        if row.amax() <= 1e-14 && fixed[l].abs() <= line.flow_limit {
            continue;
        }
        rows.push(row.clone());
        rhs.push(line.flow_limit - fixed[l]);
        rows.push(-row);
        rhs.push(line.flow_limit + fixed[l]);
    }

    let a_ineq = DMatrix::from_fn(rows.len(), n, |r, k| rows[r][k]);
    let mut constant = prices.dot(&response.a0);
    if opts.include_variance {
        constant += model.variance_cost();
    }
    Ok((
        QpProblem {
            q,
            c,
            a_ineq,
            b_ineq: DVector::from_vec(rhs),
            lb,
            ub,
        },
        SedLayout {
            n_gen: ng,
            n_drp: nd,
            constant,
        },
    ))
}

/// Solution of an assembled dispatch QP.
#[derive(Debug, Clone)]
pub struct SedSolution {
    pub decision: Decision,
    /// Full objective including the dropped constants.
    pub objective: f64,
    pub qp: QpSolution,
    /// Multiplier of the adequacy row.
    pub adequacy_price: f64,
}

pub fn solve_sed(
    model: &DispatchModel,
    response: &AffineResponse,
    opts: &SedQpOptions,
    qp_opts: &QpOptions,
) -> Result<SedSolution> {
    let (problem, layout) = assemble_sed_qp(model, response, opts)?;
    let qp = solve(&problem, qp_opts)?;
    Ok(SedSolution {
        decision: layout.decision(&qp.x),
        objective: qp.objective + layout.constant,
        adequacy_price: qp.mult_ineq.get(0).copied().unwrap_or(0.0),
        qp,
    })
}
