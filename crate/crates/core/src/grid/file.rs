//! TOML feeder definition files.
//!
//! ```toml
//! name = "example"
//! radial = true
//!
//! [base]
//! v_base_v = 400.0
//! s_base_va = 100000.0
//!
//! [[bus]]
//! id = 0
//! name = "PCC"
//! kind = "slack"
//! v_set_pu = 1.0
//!
//! [[bus]]
//! id = 1
//! name = "PV"
//! p_kw = 0.0
//! der = { q_min_kvar = -6.0, q_max_kvar = 6.0 }
//!
//! [[line]]
//! from = 0
//! to = 1
//! r_ohm = 0.195
//! x_ohm = 0.124
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Bus, BusKind, DerSpec, FeederModel, Line, PerUnitBase};
use crate::config::ConfigError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_radial")]
    pub radial: bool,
    pub base: BaseSection,
    #[serde(rename = "bus")]
    pub buses: Vec<BusSection>,
    #[serde(rename = "line", default)]
    pub lines: Vec<LineSection>,
    /// Reference sensitivity matrix over the controllable DERs, in p.u.
    #[serde(default)]
    pub published_x: Option<Vec<Vec<f64>>>,
}

fn default_radial() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    pub v_base_v: f64,
    pub s_base_va: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKindSection {
    Slack,
    Pq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSection {
    pub id: usize,
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: BusKindSection,
    #[serde(default)]
    pub p_kw: f64,
    #[serde(default)]
    pub q_kvar: f64,
    #[serde(default)]
    pub v_set_pu: Option<f64>,
    #[serde(default)]
    pub der: Option<DerSection>,
}

fn default_kind() -> BusKindSection {
    BusKindSection::Pq
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerSection {
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
    #[serde(default = "default_controllable")]
    pub controllable: bool,
}

fn default_controllable() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

impl FeederFile {
    pub fn into_model(self) -> Result<FeederModel, ConfigError> {
        let base = PerUnitBase::new(self.base.v_base_v, self.base.s_base_va)?;
        let mut buses: Vec<Bus> = Vec::with_capacity(self.buses.len());
        let mut slack_voltage = None;
        for section in &self.buses {
            let kind = match section.kind {
                BusKindSection::Slack => BusKind::Slack,
                BusKindSection::Pq => BusKind::Pq,
            };
            if kind == BusKind::Slack {
                slack_voltage = section.v_set_pu;
            } else if section.v_set_pu.is_some() {
                return Err(ConfigError::Invalid(format!(
                    "bus {}: v_set_pu is only valid on the slack bus",
                    section.id
                )));
            }
            buses.push(Bus {
                id: section.id,
                name: section.name.clone(),
                kind,
                p_kw: section.p_kw,
                q_kvar: section.q_kvar,
                der: section.der.as_ref().map(|d| DerSpec {
                    q_min_kvar: d.q_min_kvar,
                    q_max_kvar: d.q_max_kvar,
                    controllable: d.controllable,
                }),
            });
        }
        // Bus order in the file is free; ids must still be contiguous.
        buses.sort_by_key(|b| b.id);
        let lines = self
            .lines
            .iter()
            .map(|l| Line::new(l.from, l.to, l.r_ohm, l.x_ohm))
            .collect();
        let mut model = FeederModel::new(buses, lines, base, self.radial)?.with_name(self.name);
        if let Some(v) = slack_voltage {
            model = model.with_slack_voltage(v)?;
        }
        if let Some(rows) = self.published_x {
            let m = model.n_ders();
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(ConfigError::Invalid(format!(
                    "published_x must be {m}x{m} (one row and column per controllable DER)"
                )));
            }
            let x = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
            model = model.with_published_x(x);
        }
        Ok(model)
    }
}

/// Parses and validates a feeder definition.
pub fn parse_feeder(text: &str) -> Result<FeederModel, ConfigError> {
    let file: FeederFile = toml::from_str(text)?;
    file.into_model()
}
