//! Feeder topology, per-unit system and the network matrices derived from it.
//!
//! A [`FeederModel`] stores physical quantities as they appear in a feeder
//! definition file (ohms, kW, kVAr). Everything derived from it, the bus
//! admittance matrix and the reduced bus reactance matrix, is expressed in
//! per-unit on the model's [`PerUnitBase`].

mod file;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub use file::{parse_feeder, FeederFile};

/// The canonical feeder definition shipped with the crate.
pub const CANONICAL_FEEDER_TOML: &str = include_str!("../../data/canonical_feeder.toml");

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid per-unit base: v_base = {v_base} V, s_base = {s_base} VA (both must be positive and finite)")]
    InvalidBase { v_base: f64, s_base: f64 },
    #[error("feeder has no buses")]
    Empty,
    #[error("bus ids must be contiguous 0..{n}; found id {id} at position {position}")]
    NonContiguousIds {
        n: usize,
        id: usize,
        position: usize,
    },
    #[error("feeder must have exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("bus {bus}: invalid DER limits q_min = {q_min} kVAr, q_max = {q_max} kVAr (need q_min < q_max and q_min <= 0 <= q_max)")]
    InvalidDer { bus: usize, q_min: f64, q_max: f64 },
    #[error("bus {0}: the slack bus cannot host a controllable DER")]
    DerOnSlack(usize),
    #[error("slack voltage set-point {0} p.u. must be positive and finite")]
    InvalidSlackVoltage(f64),
    #[error("line {index}: endpoint {bus} does not exist")]
    UnknownBus { index: usize, bus: usize },
    #[error("line {index}: connects bus {bus} to itself")]
    SelfLoop { index: usize, bus: usize },
    #[error("line {index}: r = {r} ohm, x = {x} ohm (need r >= 0, x >= 0, finite)")]
    InvalidImpedance { index: usize, r: f64, x: f64 },
    #[error("line {index}: zero impedance")]
    ZeroImpedance { index: usize },
    #[error("feeder is disconnected: bus {0} is unreachable from the slack bus")]
    Disconnected(usize),
    #[error("feeder is flagged radial but has {lines} lines for {buses} buses")]
    NotRadial { buses: usize, lines: usize },
    #[error("feeder has no controllable DER buses")]
    NoDers,
    #[error("reduced susceptance Laplacian is singular")]
    SingularReduction,
    #[error("permutation of length {got} does not match {expected} buses")]
    BadPermutation { expected: usize, got: usize },
}

/// Voltage and power bases of the per-unit system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBase {
    v_base: f64,
    s_base: f64,
}

impl PerUnitBase {
    /// `v_base` is the line-to-line voltage in V, `s_base` the three-phase
    /// apparent power in VA.
    pub fn new(v_base: f64, s_base: f64) -> Result<Self, GridError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(v_base) || !ok(s_base) {
            return Err(GridError::InvalidBase { v_base, s_base });
        }
        Ok(Self { v_base, s_base })
    }

    pub fn v_base(&self) -> f64 {
        self.v_base
    }

    pub fn s_base(&self) -> f64 {
        self.s_base
    }

    /// Impedance base in ohms.
    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    pub fn ohm_to_pu(&self, z: f64) -> f64 {
        z / self.z_base()
    }

    /// kW or kVAr to p.u.
    pub fn kilo_to_pu(&self, value: f64) -> f64 {
        value * 1e3 / self.s_base
    }

    /// p.u. to kW or kVAr.
    pub fn pu_to_kilo(&self, value: f64) -> f64 {
        value * self.s_base / 1e3
    }
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self {
            v_base: 400.0,
            s_base: 100e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pq,
}

/// Reactive power capability of an inverter-interfaced resource.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerSpec {
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
    pub controllable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub name: String,
    pub kind: BusKind,
    /// Nominal active power injection (generation positive).
    pub p_kw: f64,
    /// Nominal uncontrolled reactive power injection.
    pub q_kvar: f64,
    pub der: Option<DerSpec>,
}

impl Bus {
    pub fn pq(id: usize, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            kind: BusKind::Pq,
            p_kw: 0.0,
            q_kvar: 0.0,
            der: None,
        }
    }

    pub fn slack(id: usize, name: impl Into<String>) -> Self {
        Self {
            kind: BusKind::Slack,
            ..Self::pq(id, name)
        }
    }

    pub fn with_p_kw(mut self, p_kw: f64) -> Self {
        self.p_kw = p_kw;
        self
    }

    pub fn with_der(mut self, q_min_kvar: f64, q_max_kvar: f64) -> Self {
        self.der = Some(DerSpec {
            q_min_kvar,
            q_max_kvar,
            controllable: true,
        });
        self
    }

    pub fn is_controllable_der(&self) -> bool {
        self.der.is_some_and(|d| d.controllable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, r_ohm: f64, x_ohm: f64) -> Self {
        Self {
            from,
            to,
            r_ohm,
            x_ohm,
        }
    }
}

/// A validated distribution feeder.
///
/// Immutable after construction; use the `with_*` helpers to derive
/// modified copies (e.g. a dispatcher's mis-specified model).
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    name: String,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    base: PerUnitBase,
    radial: bool,
    slack: usize,
    slack_voltage: f64,
    ders: Vec<usize>,
    published_x: Option<DMatrix<f64>>,
}

impl FeederModel {
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        base: PerUnitBase,
        radial: bool,
    ) -> Result<Self, GridError> {
        if buses.is_empty() {
            return Err(GridError::Empty);
        }
        let n = buses.len();
        for (position, bus) in buses.iter().enumerate() {
            if bus.id != position {
                return Err(GridError::NonContiguousIds {
                    n,
                    id: bus.id,
                    position,
                });
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        if slacks.len() != 1 {
            return Err(GridError::SlackCount(slacks.len()));
        }
        let slack = slacks[0];
        for bus in &buses {
            if let Some(der) = bus.der {
                let valid = der.q_min_kvar.is_finite()
                    && der.q_max_kvar.is_finite()
                    && der.q_min_kvar < der.q_max_kvar
                    && der.q_min_kvar <= 0.0
                    && der.q_max_kvar >= 0.0;
                if !valid {
                    return Err(GridError::InvalidDer {
                        bus: bus.id,
                        q_min: der.q_min_kvar,
                        q_max: der.q_max_kvar,
                    });
                }
                if bus.kind == BusKind::Slack && der.controllable {
                    return Err(GridError::DerOnSlack(bus.id));
                }
            }
        }
        for (index, line) in lines.iter().enumerate() {
            for bus in [line.from, line.to] {
                if bus >= n {
                    return Err(GridError::UnknownBus { index, bus });
                }
            }
            if line.from == line.to {
                return Err(GridError::SelfLoop {
                    index,
                    bus: line.from,
                });
            }
            let ok = |v: f64| v.is_finite() && v >= 0.0;
            if !ok(line.r_ohm) || !ok(line.x_ohm) {
                return Err(GridError::InvalidImpedance {
                    index,
                    r: line.r_ohm,
                    x: line.x_ohm,
                });
            }
            if line.r_ohm == 0.0 && line.x_ohm == 0.0 {
                return Err(GridError::ZeroImpedance { index });
            }
        }
        if let Some(unreached) = first_unreachable(n, &lines, slack) {
            return Err(GridError::Disconnected(unreached));
        }
        if radial && lines.len() != n - 1 {
            return Err(GridError::NotRadial {
                buses: n,
                lines: lines.len(),
            });
        }
        let ders = buses
            .iter()
            .filter(|b| b.is_controllable_der())
            .map(|b| b.id)
            .collect();
        Ok(Self {
            name: String::new(),
            buses,
            lines,
            base,
            radial,
            slack,
            slack_voltage: 1.0,
            ders,
            published_x: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Sets the slack (PCC) voltage magnitude in p.u.
    pub fn with_slack_voltage(mut self, v: f64) -> Result<Self, GridError> {
        if !(v.is_finite() && v > 0.0) {
            return Err(GridError::InvalidSlackVoltage(v));
        }
        self.slack_voltage = v;
        Ok(self)
    }

    /// Attaches a reference sensitivity matrix over the controllable DERs.
    pub fn with_published_x(mut self, x: DMatrix<f64>) -> Self {
        self.published_x = Some(x);
        self
    }

    /// Copy of the model with every line impedance multiplied by `factor`.
    pub fn with_scaled_impedances(&self, factor: f64) -> Result<Self, GridError> {
        let lines = self
            .lines
            .iter()
            .map(|l| Line::new(l.from, l.to, l.r_ohm * factor, l.x_ohm * factor))
            .collect();
        let mut scaled = Self::new(self.buses.clone(), lines, self.base, self.radial)?;
        scaled.name = self.name.clone();
        scaled.slack_voltage = self.slack_voltage;
        scaled.published_x = self.published_x.clone();
        Ok(scaled)
    }

    /// Relabels buses: new id of old bus `i` is `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GridError> {
        let n = self.buses.len();
        if perm.len() != n {
            return Err(GridError::BadPermutation {
                expected: n,
                got: perm.len(),
            });
        }
        let mut buses = self.buses.clone();
        for (old, bus) in self.buses.iter().enumerate() {
            let mut moved = bus.clone();
            moved.id = perm[old];
            buses[perm[old]] = moved;
        }
        let lines = self
            .lines
            .iter()
            .map(|l| Line::new(perm[l.from], perm[l.to], l.r_ohm, l.x_ohm))
            .collect();
        let mut model = Self::new(buses, lines, self.base, self.radial)?;
        model.name = self.name.clone();
        model.slack_voltage = self.slack_voltage;
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn base(&self) -> &PerUnitBase {
        &self.base
    }

    pub fn is_radial(&self) -> bool {
        self.radial
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn slack_voltage(&self) -> f64 {
        self.slack_voltage
    }

    /// Controllable DER bus ids in ascending order. This order defines the
    /// indexing of every per-DER vector in the crate.
    pub fn der_buses(&self) -> &[usize] {
        &self.ders
    }

    pub fn n_ders(&self) -> usize {
        self.ders.len()
    }

    pub fn published_x(&self) -> Option<&DMatrix<f64>> {
        self.published_x.as_ref()
    }

    /// Reactive power limits of the controllable DERs in p.u.
    pub fn der_limits_pu(&self) -> (Vec<f64>, Vec<f64>) {
        self.ders
            .iter()
            .map(|&b| {
                let der = self.buses[b].der.expect("controllable DER has a spec");
                (
                    self.base.kilo_to_pu(der.q_min_kvar),
                    self.base.kilo_to_pu(der.q_max_kvar),
                )
            })
            .unzip()
    }

    fn line_impedance_pu(&self, line: &Line) -> Complex64 {
        Complex64::new(
            self.base.ohm_to_pu(line.r_ohm),
            self.base.ohm_to_pu(line.x_ohm),
        )
    }

    /// Parent line of every bus in the spanning tree rooted at the slack.
    fn tree_parents(&self) -> Vec<Option<(usize, usize)>> {
        let n = self.buses.len();
        let adjacency = adjacency(n, &self.lines);
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, line) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, line));
                    queue.push_back(v);
                }
            }
        }
        parent
    }
}

fn adjacency(n: usize, lines: &[Line]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n];
    for (index, line) in lines.iter().enumerate() {
        adj[line.from].push((line.to, index));
        adj[line.to].push((line.from, index));
    }
    adj
}

fn first_unreachable(n: usize, lines: &[Line], root: usize) -> Option<usize> {
    let adj = adjacency(n, lines);
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    seen[root] = true;
    while let Some(u) = stack.pop() {
        for &(v, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.iter().position(|s| !s)
}

/// Builds the canonical four-line radial test feeder from the definition
/// shipped in `data/canonical_feeder.toml`.
pub fn canonical_feeder() -> FeederModel {
    parse_feeder(CANONICAL_FEEDER_TOML).expect("shipped feeder definition is valid")
}

/// Bus admittance matrix in p.u.
///
/// No shunt elements are modelled, so every row sums to zero.
pub fn bus_admittance(model: &FeederModel) -> DMatrix<Complex64> {
    let n = model.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for line in model.lines() {
        let series = model.line_impedance_pu(line).inv();
        let (i, k) = (line.from, line.to);
        y[(i, i)] += series;
        y[(k, k)] += series;
        y[(i, k)] -= series;
        y[(k, i)] -= series;
    }
    y
}

/// Reduced bus reactance matrix over the controllable DER buses, in p.u.
///
/// Resistances are ignored. For a radial feeder entry `(h, k)` is the sum of
/// line reactances on the path shared by the slack-to-`h` and slack-to-`k`
/// paths. Meshed feeders fall back to inverting the susceptance Laplacian
/// with the slack row and column removed.
pub fn reduced_reactance(model: &FeederModel) -> Result<DMatrix<f64>, GridError> {
    if model.n_ders() == 0 {
        return Err(GridError::NoDers);
    }
    if model.is_radial() {
        Ok(reactance_by_paths(model))
    } else {
        reactance_by_laplacian(model)
    }
}

fn reactance_by_paths(model: &FeederModel) -> DMatrix<f64> {
    let parents = model.tree_parents();
    let n_lines = model.lines().len();
    let on_path: Vec<Vec<bool>> = model
        .der_buses()
        .iter()
        .map(|&bus| {
            let mut mask = vec![false; n_lines];
            let mut cursor = bus;
            while let Some((up, line)) = parents[cursor] {
                mask[line] = true;
                cursor = up;
            }
            mask
        })
        .collect();
    let m = model.n_ders();
    let mut x = DMatrix::zeros(m, m);
    for h in 0..m {
        for k in h..m {
            let shared: f64 = model
                .lines()
                .iter()
                .enumerate()
                .filter(|(l, _)| on_path[h][*l] && on_path[k][*l])
                .map(|(_, line)| model.base().ohm_to_pu(line.x_ohm))
                .sum();
            x[(h, k)] = shared;
            x[(k, h)] = shared;
        }
    }
    x
}

/// Inverse of the reduced susceptance Laplacian, restricted to DER buses.
pub fn reactance_by_laplacian(model: &FeederModel) -> Result<DMatrix<f64>, GridError> {
    let n = model.n_buses();
    let slack = model.slack();
    let reduced_index = |bus: usize| if bus < slack { bus } else { bus - 1 };
    let mut laplacian = DMatrix::zeros(n - 1, n - 1);
    for line in model.lines() {
        let x = model.base().ohm_to_pu(line.x_ohm);
        if x == 0.0 {
            return Err(GridError::SingularReduction);
        }
        let b = 1.0 / x;
        for (u, v) in [(line.from, line.to), (line.to, line.from)] {
            if u != slack {
                let ru = reduced_index(u);
                laplacian[(ru, ru)] += b;
                if v != slack {
                    laplacian[(ru, reduced_index(v))] -= b;
                }
            }
        }
    }
    let inverse = laplacian
        .cholesky()
        .ok_or(GridError::SingularReduction)?
        .inverse();
    let idx: Vec<usize> = model
        .der_buses()
        .iter()
        .map(|&b| reduced_index(b))
        .collect();
    let m = idx.len();
    Ok(DMatrix::from_fn(m, m, |h, k| inverse[(idx[h], idx[k])]))
}

/// Symmetric positive definiteness check via Cholesky.
pub fn is_positive_definite(x: &DMatrix<f64>) -> bool {
    x.is_square() && x == &x.transpose() && x.clone().cholesky().is_some()
}

/// Nominal exogenous injections of the model in p.u.
pub(crate) fn nominal_injections(model: &FeederModel) -> (DVector<f64>, DVector<f64>) {
    let base = model.base();
    let p = DVector::from_iterator(
        model.n_buses(),
        model.buses().iter().map(|b| base.kilo_to_pu(b.p_kw)),
    );
    let q = DVector::from_iterator(
        model.n_buses(),
        model.buses().iter().map(|b| base.kilo_to_pu(b.q_kvar)),
    );
    (p, q)
}
