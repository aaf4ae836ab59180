use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::{read_file, ConfigError};
use crate::controllers::DroopParams;
use crate::grid::{reduced_reactance, FeederModel};
use crate::optim::VoltageLimits;
use crate::powerflow::Exogenous;

/// The shipped 21-minute experiment.
pub const CANONICAL_SCENARIO_TOML: &str = include_str!("../../data/canonical_scenario.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fo,
    Droop,
    Opf,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fo => "fo",
            Self::Droop => "droop",
            Self::Opf => "opf",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fo" => Ok(Self::Fo),
            "droop" => Ok(Self::Droop),
            "opf" => Ok(Self::Opf),
            other => Err(ConfigError::Invalid(format!(
                "unknown strategy `{other}` (expected fo, droop or opf)"
            ))),
        }
    }
}

/// Where the FO controller takes its sensitivity matrix from.
#[derive(Debug, Clone, PartialEq)]
pub enum XSource {
    /// Derived from the feeder's line reactances.
    Computed,
    /// The matrix stored with the feeder definition (`published_x`).
    Published,
    /// All entries one: no model knowledge beyond the sign.
    Ones,
    File(PathBuf),
}

impl std::str::FromStr for XSource {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "computed" => Ok(Self::Computed),
            "published" | "paper" => Ok(Self::Published),
            "ones" | "all-ones" => Ok(Self::Ones),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(Self::File(PathBuf::from(path))),
                _ => Err(ConfigError::Invalid(format!(
                    "unknown X source `{s}` (expected computed, published, ones or file:PATH)"
                ))),
            },
        }
    }
}

impl<'de> Deserialize<'de> for XSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl XSource {
    /// Resolves the sensitivity matrix for `model`, in p.u.
    pub fn resolve(&self, model: &FeederModel) -> Result<DMatrix<f64>, ConfigError> {
        let m = model.n_ders();
        let x = match self {
            Self::Computed => reduced_reactance(model)?,
            Self::Published => model.published_x().cloned().ok_or_else(|| {
                ConfigError::Invalid(format!("feeder `{}` has no published_x", model.name()))
            })?,
            Self::Ones => DMatrix::from_element(m, m, 1.0),
            Self::File(path) => parse_matrix(&read_file(path)?)?,
        };
        if x.nrows() != m || x.ncols() != m {
            return Err(ConfigError::Invalid(format!(
                "sensitivity matrix is {}x{}, feeder has {m} DERs",
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(x)
    }
}

/// Square matrix from text: one row per line, entries separated by commas
/// or whitespace. Blank lines and `#` comments are ignored.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, ConfigError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|e| {
                    ConfigError::Invalid(format!("matrix line {}: `{t}`: {e}", number + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(ConfigError::Invalid(
            "matrix must be square and non-empty".into(),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Symmetric multiplicative perturbation `X_ij (1 + delta u_ij)` with
/// `u_ij = u_ji` uniform on [-1, 1] drawn from `seed`.
pub fn perturb_symmetric(x: &DMatrix<f64>, delta: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.nrows();
    let mut out = x.clone();
    for i in 0..n {
        for j in i..n {
            let u: f64 = rng.random_range(-1.0..=1.0);
            out[(i, j)] = x[(i, j)] * (1.0 + delta * u);
            out[(j, i)] = x[(j, i)] * (1.0 + delta * u);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation of the voltage measurement noise, p.u. Samples
    /// beyond four standard deviations are redrawn.
    pub stddev: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ControllerOn,
    ControllerOff,
    /// Active power injected at a bus, kW.
    SetActivePower {
        bus: usize,
        p_kw: f64,
    },
    /// Active power consumed at a bus, kW.
    SetLoad {
        bus: usize,
        p_kw: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
}

impl Event {
    pub fn label(&self) -> String {
        match &self.kind {
            EventKind::ControllerOn => "controller_on".into(),
            EventKind::ControllerOff => "controller_off".into(),
            EventKind::SetActivePower { bus, p_kw } => {
                format!("set_active_power(bus{bus}={p_kw}kW)")
            }
            EventKind::SetLoad { bus, p_kw } => format!("set_load(bus{bus}={p_kw}kW)"),
        }
    }

    pub fn is_exogenous(&self) -> bool {
        matches!(
            self.kind,
            EventKind::SetActivePower { .. } | EventKind::SetLoad { .. }
        )
    }

    /// Applies an injection change to `w` (no-op for controller events).
    pub fn apply(&self, model: &FeederModel, w: &mut Exogenous) {
        let base = model.base();
        match self.kind {
            EventKind::SetActivePower { bus, p_kw } => w.p[bus] = base.kilo_to_pu(p_kw),
            EventKind::SetLoad { bus, p_kw } => w.p[bus] = -base.kilo_to_pu(p_kw),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub strategy: Strategy,
    /// FO dual step size (voltages and set-points in p.u.).
    pub alpha: f64,
    pub x_source: XSource,
    /// Relative size of a symmetric random perturbation applied to X.
    pub x_perturbation: f64,
    pub x_perturbation_seed: u64,
    /// Diagonal of the cost weight per kVAr; defaults to `1 / q_max`.
    pub cost_weight_per_kvar: Option<Vec<f64>>,
    pub anti_windup: bool,
    /// Controller steps per control period, each followed by a plant
    /// solve. Values above one emulate fast device-level control.
    pub inner_iterations: usize,
    /// FO runs whose `|lambda|` exceeds this are reported as diverged.
    pub divergence_bound: f64,
    pub droop: DroopParams,
    /// Factor on every line impedance in the OPF dispatcher's model.
    pub opf_impedance_scale: f64,
    /// Buses whose injections the OPF dispatcher does not know.
    pub opf_unknown_buses: Vec<usize>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Fo,
            alpha: 100.0,
            x_source: XSource::Published,
            x_perturbation: 0.0,
            x_perturbation_seed: 0,
            cost_weight_per_kvar: None,
            anti_windup: true,
            inner_iterations: 1,
            divergence_bound: 10.0,
            droop: DroopParams::default(),
            opf_impedance_scale: 1.0,
            opf_unknown_buses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    pub control_period_s: f64,
    pub limits: VoltageLimits,
    pub noise: NoiseModel,
    pub controller: ControllerConfig,
    /// Feeder definition file; the canonical feeder when absent.
    pub feeder: Option<PathBuf>,
    /// Sorted by time.
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn canonical() -> Self {
        Self::from_toml(CANONICAL_SCENARIO_TOML).expect("shipped scenario is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ScenarioFile = toml::from_str(text)?;
        file.into_scenario()
    }

    /// Loads a scenario file; a relative feeder path is resolved against the
    /// scenario's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut scenario = Self::from_toml(&read_file(path)?)?;
        if let Some(feeder) = &scenario.feeder {
            if feeder.is_relative() {
                if let Some(dir) = path.parent() {
                    scenario.feeder = Some(dir.join(feeder));
                }
            }
        }
        Ok(scenario)
    }

    /// Number of control periods, hence log records.
    pub fn steps(&self) -> usize {
        ((self.duration_s / self.control_period_s) - 1e-9)
            .ceil()
            .max(0.0) as usize
    }

    pub fn activation_time(&self) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.kind == EventKind::ControllerOn)
            .map(|e| e.time_s)
    }

    /// Injections in force after every event up to and including `time_s`.
    pub fn exogenous_at(&self, model: &FeederModel, time_s: f64) -> Exogenous {
        let mut w = Exogenous::nominal(model);
        for e in self.events.iter().filter(|e| e.time_s <= time_s) {
            e.apply(model, &mut w);
        }
        w
    }

    /// Checks that everything the scenario refers to exists in `model`.
    pub fn validate_against(&self, model: &FeederModel) -> Result<(), ConfigError> {
        for e in &self.events {
            if let EventKind::SetActivePower { bus, .. } | EventKind::SetLoad { bus, .. } = e.kind {
                if bus >= model.n_buses() || bus == model.slack() {
                    return Err(ConfigError::Invalid(format!(
                        "event at {} s targets bus {bus}, which is not a load bus of `{}`",
                        e.time_s,
                        model.name()
                    )));
                }
            }
        }
        for &bus in &self.controller.opf_unknown_buses {
            if bus >= model.n_buses() {
                return Err(ConfigError::Invalid(format!(
                    "unknown bus {bus} in opf perturbation"
                )));
            }
        }
        if let Some(w) = &self.controller.cost_weight_per_kvar {
            if w.len() != model.n_ders() {
                return Err(ConfigError::Invalid(format!(
                    "cost_weight_per_kvar has {} entries, feeder has {} DERs",
                    w.len(),
                    model.n_ders()
                )));
            }
        }
        if self.controller.strategy == Strategy::Fo {
            self.controller.x_source.resolve(model)?;
        }
        Ok(())
    }

    /// Checks the scenario on its own, without a feeder.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            ));
        }
        if !(self.control_period_s.is_finite() && self.control_period_s > 0.0) {
            return invalid(format!(
                "control_period_s must be positive, got {}",
                self.control_period_s
            ));
        }
        if !(self.noise.stddev.is_finite() && self.noise.stddev >= 0.0) {
            return invalid(format!(
                "noise stddev must be >= 0, got {}",
                self.noise.stddev
            ));
        }
        let c = &self.controller;
        if !(c.alpha.is_finite() && c.alpha > 0.0) {
            return invalid(format!("alpha must be positive, got {}", c.alpha));
        }
        if c.inner_iterations == 0 {
            return invalid("inner_iterations must be at least 1".into());
        }
        if !(c.opf_impedance_scale.is_finite() && c.opf_impedance_scale > 0.0) {
            return invalid(format!(
                "impedance_scale must be positive, got {}",
                c.opf_impedance_scale
            ));
        }
        if !(c.x_perturbation.is_finite() && (0.0..1.0).contains(&c.x_perturbation)) {
            return invalid(format!(
                "x_perturbation must lie in [0, 1), got {}",
                c.x_perturbation
            ));
        }
        if let Some(w) = &c.cost_weight_per_kvar {
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return invalid("cost weights must be positive".into());
            }
        }
        c.droop
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut previous = f64::NEG_INFINITY;
        for e in &self.events {
            if !(0.0..=self.duration_s).contains(&e.time_s) {
                return invalid(format!(
                    "event time {} s outside [0, {}]",
                    e.time_s, self.duration_s
                ));
            }
            if e.time_s < previous {
                return invalid("events must be sorted by time".into());
            }
            previous = e.time_s;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "default_name")]
    name: String,
    duration_s: f64,
    #[serde(default = "default_period")]
    control_period_s: f64,
    #[serde(default = "default_v_min")]
    v_min: f64,
    #[serde(default = "default_v_max")]
    v_max: f64,
    feeder: Option<PathBuf>,
    #[serde(default)]
    noise: NoiseSection,
    #[serde(default)]
    controller: ControllerSection,
    #[serde(default, rename = "event")]
    events: Vec<EventSection>,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_period() -> f64 {
    10.0
}

fn default_v_min() -> f64 {
    0.95
}

fn default_v_max() -> f64 {
    1.05
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    #[serde(default)]
    stddev_pu: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerSection {
    strategy: Strategy,
    alpha: Option<f64>,
    x_source: Option<XSource>,
    x_perturbation: Option<f64>,
    x_perturbation_seed: Option<u64>,
    cost_weight_per_kvar: Option<Vec<f64>>,
    anti_windup: Option<bool>,
    inner_iterations: Option<usize>,
    divergence_bound: Option<f64>,
    droop: Option<DroopSection>,
    opf: Option<OpfSection>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Fo,
            alpha: None,
            x_source: None,
            x_perturbation: None,
            x_perturbation_seed: None,
            cost_weight_per_kvar: None,
            anti_windup: None,
            inner_iterations: None,
            divergence_bound: None,
            droop: None,
            opf: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DroopSection {
    breakpoints: Option<[f64; 4]>,
    damping: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpfSection {
    impedance_scale: Option<f64>,
    #[serde(default)]
    unknown_buses: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventSection {
    time_s: f64,
    kind: String,
    bus: Option<usize>,
    p_kw: Option<f64>,
}

impl EventSection {
    fn into_event(self) -> Result<Event, ConfigError> {
        let power = |what: &str| -> Result<(usize, f64), ConfigError> {
            match (self.bus, self.p_kw) {
                (Some(bus), Some(p)) if p.is_finite() => Ok((bus, p)),
                _ => Err(ConfigError::Invalid(format!(
                    "{what} event at {} s needs `bus` and a finite `p_kw`",
                    self.time_s
                ))),
            }
        };
        let kind = match self.kind.as_str() {
            "controller_on" => EventKind::ControllerOn,
            "controller_off" => EventKind::ControllerOff,
            "set_active_power" => {
                let (bus, p_kw) = power("set_active_power")?;
                EventKind::SetActivePower { bus, p_kw }
            }
            "set_load" => {
                let (bus, p_kw) = power("set_load")?;
                EventKind::SetLoad { bus, p_kw }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown event kind `{other}`"
                )));
            }
        };
        Ok(Event {
            time_s: self.time_s,
            kind,
        })
    }
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, ConfigError> {
        let limits = VoltageLimits::new(self.v_min, self.v_max)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let defaults = ControllerConfig::default();
        let c = self.controller;
        let droop_defaults = DroopParams::default();
        let droop = c.droop.map_or(droop_defaults, |d| DroopParams {
            breakpoints: d.breakpoints.unwrap_or(droop_defaults.breakpoints),
            damping: d.damping.unwrap_or(droop_defaults.damping),
        });
        let (opf_impedance_scale, opf_unknown_buses) = match c.opf {
            Some(o) => (o.impedance_scale.unwrap_or(1.0), o.unknown_buses),
            None => (1.0, Vec::new()),
        };
        let controller = ControllerConfig {
            strategy: c.strategy,
            alpha: c.alpha.unwrap_or(defaults.alpha),
            x_source: c.x_source.unwrap_or(defaults.x_source),
            x_perturbation: c.x_perturbation.unwrap_or(0.0),
            x_perturbation_seed: c.x_perturbation_seed.unwrap_or(0),
            cost_weight_per_kvar: c.cost_weight_per_kvar,
            anti_windup: c.anti_windup.unwrap_or(defaults.anti_windup),
            inner_iterations: c.inner_iterations.unwrap_or(1),
            divergence_bound: c.divergence_bound.unwrap_or(defaults.divergence_bound),
            droop,
            opf_impedance_scale,
            opf_unknown_buses,
        };
        let events = self
            .events
            .into_iter()
            .map(EventSection::into_event)
            .collect::<Result<Vec<_>, _>>()?;
        let scenario = Scenario {
            name: self.name,
            duration_s: self.duration_s,
            control_period_s: self.control_period_s,
            limits,
            noise: NoiseModel {
                stddev: self.noise.stddev_pu,
                seed: self.noise.seed,
            },
            controller,
            feeder: self.feeder,
            events,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_timeline() {
        let s = Scenario::canonical();
        assert_eq!(s.steps(), 126);
        assert_eq!(s.activation_time(), Some(180.0));
        assert_eq!(s.control_period_s, 10.0);
        let times: Vec<f64> = s.events.iter().map(|e| e.time_s).collect();
        assert_eq!(times, vec![180.0, 660.0, 840.0]);
    }

    #[test]
    fn exogenous_follows_events() {
        let s = Scenario::canonical();
        let model = crate::grid::canonical_feeder();
        assert_eq!(s.exogenous_at(&model, 700.0).p[4], 0.0);
        assert!((s.exogenous_at(&model, 900.0).p[4] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Scenario::from_toml("duration_s = -1").is_err());
        assert!(Scenario::from_toml("duration_s = 10\nbogus = 1").is_err());
        let unsorted = "duration_s = 100\n[[event]]\ntime_s = 50\nkind = \"controller_on\"\n[[event]]\ntime_s = 10\nkind = \"controller_off\"\n";
        assert!(Scenario::from_toml(unsorted).is_err());
        let missing_bus =
            "duration_s = 100\n[[event]]\ntime_s = 50\nkind = \"set_load\"\np_kw = 3\n";
        assert!(Scenario::from_toml(missing_bus).is_err());
        let outside = "duration_s = 100\n[[event]]\ntime_s = 150\nkind = \"controller_on\"\n";
        assert!(Scenario::from_toml(outside).is_err());
    }

    #[test]
    fn x_source_parsing() {
        assert_eq!("paper".parse::<XSource>().unwrap(), XSource::Published);
        assert_eq!(
            "file:x.csv".parse::<XSource>().unwrap(),
            XSource::File(PathBuf::from("x.csv"))
        );
        assert!("file:".parse::<XSource>().is_err());
        assert!("guess".parse::<XSource>().is_err());
    }

    #[test]
    fn matrix_text() {
        let x = parse_matrix("# comment\n1, 2\n2 5\n").unwrap();
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]));
        assert!(parse_matrix("1 2\n3").is_err());
        assert!(parse_matrix("a b\n1 2").is_err());
    }

    #[test]
    fn perturbation_is_symmetric_and_zero_is_identity() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.09, 0.09, 0.11]);
        assert_eq!(perturb_symmetric(&x, 0.0, 3), x);
        let p = perturb_symmetric(&x, 0.2, 3);
        assert_eq!(p, p.transpose());
        assert_ne!(p, x);
        assert_eq!(p, perturb_symmetric(&x, 0.2, 3));
    }
}
