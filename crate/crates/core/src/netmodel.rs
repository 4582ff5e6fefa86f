//! Power-system data model, case-file ingestion and the DC network matrices.
//!
//! Case files are TOML documents. Powers are given in MW, generator cost
//! coefficients in $/MW²h and $/MWh, and DR offer prices in $/MWh; everything
//! is converted to per-unit on `base_mva` when the system is built, so the
//! in-memory model is entirely per-unit (costs in $/h).

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub is_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series reactance, per-unit.
    pub reactance: f64,
    /// Thermal limit, per-unit; applied as |flow| <= flow_limit.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// Quadratic cost coefficient, $/pu²h.
    pub a: f64,
    /// Linear cost coefficient, $/pu h.
    pub b: f64,
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResUnit {
    pub bus: usize,
    pub p_nominal: f64,
    /// Forecast-error level in percent of `p_nominal`.
    pub r_pct: f64,
}

impl ResUnit {
    /// Half-width of the deviation interval `[-w, w]`.
    pub fn half_width(&self) -> f64 {
        self.p_nominal * self.r_pct / 100.0
    }
}

/// Demand response provider aggregating end-consumers on a linear demand curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drp {
    pub bus: usize,
    /// Consumer baseline, per-unit.
    pub p_base: f64,
    /// Incentive price paid to end-consumers.
    pub pi_s: f64,
    /// Demand-curve price intercept.
    pub pi_max: f64,
    /// Retail price.
    pub pi_rr: f64,
    /// Day-ahead offer price, $/pu h.
    pub pi_dr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSystem {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub res_units: Vec<ResUnit>,
    pub drps: Vec<Drp>,
    pub loads: Vec<Load>,
}

impl PowerSystem {
    /// Builds a validated system. When no bus is flagged as slack, the bus of
    /// the largest-capacity generator becomes the slack (lowest bus id on ties).
    pub fn new(
        base_mva: f64,
        mut buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        res_units: Vec<ResUnit>,
        drps: Vec<Drp>,
        loads: Vec<Load>,
    ) -> Result<Self> {
        buses.sort_by_key(|b| b.id);
        if !buses.iter().any(|b| b.is_slack) {
            let slack = generators
                .iter()
                .fold(None::<&Generator>, |best, g| match best {
                    Some(b) if b.p_max > g.p_max || (b.p_max == g.p_max && b.bus <= g.bus) => {
                        Some(b)
                    }
                    _ => Some(g),
                })
                .map_or(0, |g| g.bus);
            if let Some(bus) = buses.iter_mut().find(|b| b.id == slack) {
                bus.is_slack = true;
            }
        }
        let sys = PowerSystem {
            base_mva,
            buses,
            lines,
            generators,
            res_units,
            drps,
            loads,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_line(&self) -> usize {
        self.lines.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn n_res(&self) -> usize {
        self.res_units.len()
    }

    pub fn n_drp(&self) -> usize {
        self.drps.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .find(|b| b.is_slack)
            .map(|b| b.id)
            .expect("validated system has a slack bus")
    }

    /// Row index of `bus` in vectors over non-slack buses.
    pub fn reduced_index(&self, bus: usize) -> Option<usize> {
        let slack = self.slack_bus();
        match bus.cmp(&slack) {
            std::cmp::Ordering::Less => Some(bus),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(bus - 1),
        }
    }

    pub fn total_load(&self) -> f64 {
        self.loads.iter().map(|l| l.p).sum()
    }

    pub fn total_res(&self) -> f64 {
        self.res_units.iter().map(|r| r.p_nominal).sum()
    }

    pub fn gen_a(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_gen(), self.generators.iter().map(|g| g.a))
    }

    pub fn drp_prices(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_drp(), self.drps.iter().map(|d| d.pi_dr))
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.buses.len();
        if nb == 0 {
            return Err(Error::Validation("system has no buses".into()));
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(Error::Validation(format!(
                "base_mva must be positive, got {}",
                self.base_mva
            )));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i {
                return Err(Error::Validation(format!(
                    "bus ids must be contiguous 0..{}; found id {} at position {}",
                    nb - 1,
                    bus.id,
                    i
                )));
            }
        }
        match self.buses.iter().filter(|b| b.is_slack).count() {
            0 => return Err(Error::Validation("no slack bus".into())),
            1 => {}
            n => return Err(Error::Validation(format!("{n} buses flagged as slack"))),
        }
        let check_bus = |what: &str, idx: usize, bus: usize| -> Result<()> {
            if bus >= nb {
                Err(Error::Validation(format!(
                    "{what} {idx} references unknown bus {bus}"
                )))
            } else {
                Ok(())
            }
        };
        for (i, l) in self.lines.iter().enumerate() {
            check_bus("line", i, l.from_bus)?;
            check_bus("line", i, l.to_bus)?;
            if l.from_bus == l.to_bus {
                return Err(Error::Validation(format!("line {i} is a self-loop")));
            }
            if !(l.reactance.is_finite() && l.reactance > 0.0) {
                return Err(Error::Validation(format!(
                    "line {i} has nonpositive reactance {}",
                    l.reactance
                )));
            }
            if !(l.flow_limit > 0.0) {
                return Err(Error::Validation(format!(
                    "line {i} has nonpositive flow limit {}",
                    l.flow_limit
                )));
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            check_bus("generator", i, g.bus)?;
            if !(g.a.is_finite() && g.a > 0.0) {
                return Err(Error::Validation(format!(
                    "generator {i} needs a > 0 for participation factors, got {}",
                    g.a
                )));
            }
            if !g.b.is_finite() || !(0.0 <= g.p_min && g.p_min <= g.p_max && g.p_max.is_finite()) {
                return Err(Error::Validation(format!(
                    "generator {i} violates 0 <= p_min <= p_max"
                )));
            }
        }
        for (i, r) in self.res_units.iter().enumerate() {
            check_bus("res unit", i, r.bus)?;
            if !(r.p_nominal >= 0.0 && r.p_nominal.is_finite()) {
                return Err(Error::Validation(format!(
                    "res unit {i} has negative nominal output"
                )));
            }
            if !(0.0..=100.0).contains(&r.r_pct) {
                return Err(Error::Validation(format!(
                    "res unit {i} has r_pct {} outside [0, 100]",
                    r.r_pct
                )));
            }
        }
        for (i, d) in self.drps.iter().enumerate() {
            check_bus("drp", i, d.bus)?;
            if !(d.pi_rr > 0.0 && d.pi_max > d.pi_rr) {
                return Err(Error::Validation(format!(
                    "drp {i} needs pi_max > pi_rr > 0 (pi_max = {}, pi_rr = {})",
                    d.pi_max, d.pi_rr
                )));
            }
            if !(d.p_base >= 0.0 && d.pi_s >= 0.0 && d.pi_dr >= 0.0) {
                return Err(Error::Validation(format!(
                    "drp {i} has a negative baseline or price"
                )));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            check_bus("load", i, l.bus)?;
            if !(l.p >= 0.0 && l.p.is_finite()) {
                return Err(Error::Validation(format!("load {i} is negative")));
            }
        }
        if !self.is_connected() {
            return Err(Error::Validation("network is not connected".into()));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let nb = self.buses.len();
        let mut adj = vec![Vec::new(); nb];
        for l in &self.lines {
            if l.from_bus < nb && l.to_bus < nb {
                adj[l.from_bus].push(l.to_bus);
                adj[l.to_bus].push(l.from_bus);
            }
        }
        let mut seen = vec![false; nb];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

// On-disk schema. Units are MW and $/MWh; see the module docs.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    base_mva: f64,
    buses: Vec<BusRecord>,
    lines: Vec<LineRecord>,
    #[serde(default)]
    generators: Vec<GeneratorRecord>,
    #[serde(default)]
    res_units: Vec<ResRecord>,
    #[serde(default)]
    drps: Vec<DrpRecord>,
    #[serde(default)]
    loads: Vec<LoadRecord>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRecord {
    id: usize,
    #[serde(default)]
    is_slack: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRecord {
    from_bus: usize,
    to_bus: usize,
    reactance: f64,
    flow_limit: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorRecord {
    bus: usize,
    a: f64,
    b: f64,
    p_min: f64,
    p_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResRecord {
    bus: usize,
    p_nominal: f64,
    r_pct: f64,
}

fn default_pi_s() -> f64 {
    300.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DrpRecord {
    bus: usize,
    p_base: f64,
    #[serde(default = "default_pi_s")]
    pi_s: f64,
    pi_max: f64,
    pi_rr: f64,
    pi_dr: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRecord {
    bus: usize,
    p: f64,
}

/// Parses a case document from a string (MW units) into a validated system.
pub fn parse_case(text: &str) -> Result<PowerSystem> {
    let file: CaseFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let base = file.base_mva;
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::Validation(format!(
            "base_mva must be positive, got {base}"
        )));
    }
    let marked = file.buses.iter().filter(|b| b.is_slack).count();
    if marked > 1 {
        return Err(Error::Validation(format!(
            "{marked} buses flagged as slack"
        )));
    }
    let mut ids: Vec<usize> = file.buses.iter().map(|b| b.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation("duplicated bus id".into()));
    }
    PowerSystem::new(
        base,
        file.buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                is_slack: b.is_slack,
            })
            .collect(),
        file.lines
            .iter()
            .map(|l| Line {
                from_bus: l.from_bus,
                to_bus: l.to_bus,
                reactance: l.reactance,
                flow_limit: l.flow_limit / base,
            })
            .collect(),
        file.generators
            .iter()
            .map(|g| Generator {
                bus: g.bus,
                a: g.a * base * base,
                b: g.b * base,
                p_min: g.p_min / base,
                p_max: g.p_max / base,
            })
            .collect(),
        file.res_units
            .iter()
            .map(|r| ResUnit {
                bus: r.bus,
                p_nominal: r.p_nominal / base,
                r_pct: r.r_pct,
            })
            .collect(),
        file.drps
            .iter()
            .map(|d| Drp {
                bus: d.bus,
                p_base: d.p_base / base,
                pi_s: d.pi_s,
                pi_max: d.pi_max,
                pi_rr: d.pi_rr,
                pi_dr: d.pi_dr * base,
            })
            .collect(),
        file.loads
            .iter()
            .map(|l| Load {
                bus: l.bus,
                p: l.p / base,
            })
            .collect(),
    )
}

pub fn load_case(path: impl AsRef<Path>) -> Result<PowerSystem> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The 14-bus test system with two DRPs and two RES units.
pub const IEEE14_CASE: &str = include_str!("../cases/ieee14.case");
/// The 39-bus test system with two DRPs and three wind farms.
pub const IEEE39_CASE: &str = include_str!("../cases/ieee39.case");

pub fn ieee14() -> PowerSystem {
    parse_case(IEEE14_CASE).expect("bundled ieee14.case is valid")
}

pub fn ieee39() -> PowerSystem {
    parse_case(IEEE39_CASE).expect("bundled ieee39.case is valid")
}

/// Power transfer distribution factors, `N_L x (N_B - 1)`.
///
/// Columns are indexed over non-slack buses; the slack absorbs the balance.
/// Positive flow runs from `from_bus` to `to_bus`.
pub fn compute_ptdf(sys: &PowerSystem) -> Result<DMatrix<f64>> {
    let nb = sys.n_bus();
    let nl = sys.n_line();
    let nr = nb - 1;
    let mut b_red = DMatrix::<f64>::zeros(nr, nr);
    let mut b_flow = DMatrix::<f64>::zeros(nl, nr);
    for (l, line) in sys.lines.iter().enumerate() {
        let y = 1.0 / line.reactance;
        let f = sys.reduced_index(line.from_bus);
        let t = sys.reduced_index(line.to_bus);
        if let Some(f) = f {
            b_red[(f, f)] += y;
            b_flow[(l, f)] = y;
        }
        if let Some(t) = t {
            b_red[(t, t)] += y;
            b_flow[(l, t)] = -y;
        }
        if let (Some(f), Some(t)) = (f, t) {
            b_red[(f, t)] -= y;
            b_red[(t, f)] -= y;
        }
    }
    if nr == 0 {
        return Ok(DMatrix::zeros(nl, 0));
    }
    let inv = b_red.lu().try_inverse().ok_or(Error::SingularNetwork)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularNetwork);
    }
    Ok(b_flow * inv)
}

/// Device-to-nodal-injection maps over non-slack buses.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMaps {
    pub gen: DMatrix<f64>,
    pub drp: DMatrix<f64>,
    pub res: DMatrix<f64>,
    pub load: DMatrix<f64>,
}

pub fn incidence_maps(sys: &PowerSystem) -> IncidenceMaps {
    let nr = sys.n_bus() - 1;
    let build = |buses: &mut dyn Iterator<Item = usize>, n: usize| {
        let mut m = DMatrix::zeros(nr, n);
        for (col, bus) in buses.enumerate() {
            if let Some(row) = sys.reduced_index(bus) {
                m[(row, col)] = 1.0;
            }
        }
        m
    };
    IncidenceMaps {
        gen: build(&mut sys.generators.iter().map(|g| g.bus), sys.n_gen()),
        drp: build(&mut sys.drps.iter().map(|d| d.bus), sys.n_drp()),
        res: build(&mut sys.res_units.iter().map(|r| r.bus), sys.n_res()),
        load: build(&mut sys.loads.iter().map(|l| l.bus), sys.loads.len()),
    }
}

/// Precomputed network matrices shared by evaluation and QP assembly.
#[derive(Debug, Clone)]
pub struct Network {
    pub ptdf: DMatrix<f64>,
    pub maps: IncidenceMaps,
}

impl Network {
    pub fn new(sys: &PowerSystem) -> Result<Self> {
        Ok(Network {
            ptdf: compute_ptdf(sys)?,
            maps: incidence_maps(sys),
        })
    }

    /// DC line flows for the given device vectors.
    pub fn line_flows(
        &self,
        p_gen: &DVector<f64>,
        p_drp: &DVector<f64>,
        p_res: &DVector<f64>,
        p_load: &DVector<f64>,
    ) -> DVector<f64> {
        let inj = &self.maps.gen * p_gen + &self.maps.drp * p_drp + &self.maps.res * p_res
            - &self.maps.load * p_load;
        &self.ptdf * inj
    }
}

pub fn load_vector(sys: &PowerSystem) -> DVector<f64> {
    DVector::from_iterator(sys.loads.len(), sys.loads.iter().map(|l| l.p))
}

pub fn res_nominal_vector(sys: &PowerSystem) -> DVector<f64> {
    DVector::from_iterator(sys.n_res(), sys.res_units.iter().map(|r| r.p_nominal))
}
