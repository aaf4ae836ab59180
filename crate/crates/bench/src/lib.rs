//! Fixtures shared by the benchmarks: the canonical feeder and scenario
//! with their derived controller inputs.

use voltvar_core::powerflow::{Exogenous, InjectionVector};
use voltvar_core::sim::{cost_weight_pu, der_box_pu, Scenario, XSource};
use voltvar_core::{canonical_feeder, BoxConstraint, CostWeight, FeederModel, FoConfig};

pub struct Fixture {
    pub model: FeederModel,
    pub scenario: Scenario,
    pub bounds: BoxConstraint,
    pub m: CostWeight,
}

impl Fixture {
    pub fn canonical() -> Self {
        let model = canonical_feeder();
        let scenario = Scenario::canonical();
        let m = cost_weight_pu(&scenario, &model).expect("canonical cost weight");
        let bounds = der_box_pu(&model);
        Self {
            model,
            scenario,
            bounds,
            m,
        }
    }

    /// Nominal injections with all set-points at zero.
    pub fn open_loop_injections(&self) -> InjectionVector {
        InjectionVector::new(
            &self.model,
            Exogenous::nominal(&self.model),
            vec![0.0; self.model.n_ders()],
        )
        .expect("canonical injections")
    }

    pub fn fo_config(&self) -> FoConfig {
        FoConfig {
            alpha: self.scenario.controller.alpha,
            x: XSource::Published.resolve(&self.model).expect("stored X"),
            m: self.m.clone(),
            limits: self.scenario.limits,
            bounds: self.bounds.clone(),
            anti_windup: true,
        }
    }
}
