use voltvar_core::grid::canonical_feeder;
use voltvar_core::sim::{
    compare, droop_detriment_probe, run, sweep, violation_metrics, Event, EventKind, Scenario,
    SimError, SimulationLog, Strategy, SweepParam, XSource,
};

fn canonical_with(f: impl FnOnce(&mut Scenario)) -> Scenario {
    let mut s = Scenario::canonical();
    f(&mut s);
    s
}

fn battery_v(log: &SimulationLog, t: f64) -> f64 {
    let r = log.records.iter().find(|r| r.time_s == t).unwrap();
    r.v_true[4]
}

#[test]
fn open_loop_keeps_zero_setpoints_and_overvoltage() {
    let scenario = canonical_with(|s| {
        s.events.retain(|e| e.kind != EventKind::ControllerOn);
    });
    let log = run(&scenario, &canonical_feeder()).unwrap();
    assert_eq!(log.records.len(), 126);
    assert!(log.records.iter().all(|r| r.q.iter().all(|&q| q == 0.0)));
    assert!(battery_v(&log, 600.0) > 1.05);
    assert!(battery_v(&log, 1250.0) > 1.05);
    let m = violation_metrics(&log, &scenario.limits).unwrap();
    assert_eq!(m.steady_state_cost, 0.0);
}

#[test]
fn switching_off_returns_to_open_loop() {
    let scenario = canonical_with(|s| {
        s.events.insert(
            1,
            Event {
                time_s: 400.0,
                kind: EventKind::ControllerOff,
            },
        );
    });
    let log = run(&scenario, &canonical_feeder()).unwrap();
    let before = log.records.iter().find(|r| r.time_s == 390.0).unwrap();
    assert!(before.q.iter().all(|&q| q < 0.0));
    let after = log.records.iter().find(|r| r.time_s == 400.0).unwrap();
    assert!(after.q.iter().all(|&q| q == 0.0));
    assert!(!after.controller_active);
    assert!(battery_v(&log, 400.0) > 1.05);
}

#[test]
fn events_are_applied_once_in_order() {
    let log = run(&Scenario::canonical(), &canonical_feeder()).unwrap();
    let marked: Vec<(f64, &str)> = log
        .records
        .iter()
        .flat_map(|r| r.events.iter().map(move |e| (r.time_s, e.as_str())))
        .collect();
    assert_eq!(
        marked,
        vec![
            (180.0, "controller_on"),
            (660.0, "set_active_power(bus4=0kW)"),
            (840.0, "set_active_power(bus4=10kW)"),
        ]
    );
    let times: Vec<f64> = log.records.iter().map(|r| r.time_s).collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn slack_covers_losses_and_net_injection() {
    let log = run(&Scenario::canonical(), &canonical_feeder()).unwrap();
    for r in &log.records {
        let net: f64 = r.p_kw.iter().sum();
        // power-flow tolerance 1e-8 p.u. is 1e-3 W on a 100 kVA base
        assert!(
            (net - r.loss_kw).abs() < 1e-5,
            "t={} net {net} loss {}",
            r.time_s,
            r.loss_kw
        );
        assert!(r.pf_residual <= 1e-8);
    }
}

#[test]
fn fo_stays_idle_when_nothing_is_violated() {
    let scenario = canonical_with(|s| {
        s.events.retain(|e| e.kind == EventKind::ControllerOn);
        s.events.insert(
            0,
            Event {
                time_s: 0.0,
                kind: EventKind::SetActivePower { bus: 4, p_kw: 0.0 },
            },
        );
    });
    let log = run(&scenario, &canonical_feeder()).unwrap();
    for r in &log.records {
        assert!(r.q.iter().all(|&q| q == 0.0));
        assert!(r.lambda_max.as_ref().unwrap().iter().all(|&l| l == 0.0));
        assert!(r.lambda_min.as_ref().unwrap().iter().all(|&l| l == 0.0));
    }
    let m = violation_metrics(&log, &scenario.limits).unwrap();
    assert_eq!(m.max_violation, 0.0);
    assert_eq!(m.violation_integral, 0.0);
    assert_eq!(m.time_to_feasibility, Some(0.0));

    let droop = canonical_with(|s| {
        s.events = scenario.events.clone();
        s.controller.strategy = Strategy::Droop;
    });
    let droop_log = run(&droop, &canonical_feeder()).unwrap();
    assert!(!droop_detriment_probe(&droop_log, &droop.limits).flagged);
}

#[test]
fn perfect_dispatch_is_feasible_and_missing_load_stalls() {
    let model = canonical_feeder();
    let perfect = canonical_with(|s| s.controller.strategy = Strategy::Opf);
    let log = run(&perfect, &model).unwrap();
    assert!(battery_v(&log, 500.0) <= 1.05 + 1e-8);
    assert!(battery_v(&log, 500.0) > 1.05 - 1e-6);

    let blind = canonical_with(|s| {
        s.controller.strategy = Strategy::Opf;
        s.controller.opf_unknown_buses = vec![1];
    });
    let blind_log = run(&blind, &model).unwrap();
    // Without the load the dispatcher sees a much higher voltage profile
    // that no set-point in the box can fix, so it holds and the real
    // overvoltage persists.
    let r = blind_log
        .records
        .iter()
        .find(|r| r.time_s == 500.0)
        .unwrap();
    assert!(r.setpoints_held);
    assert!(r.q.iter().all(|&q| q == 0.0));
    assert!(battery_v(&blind_log, 500.0) > 1.06);
    let m = violation_metrics(&blind_log, &perfect.limits).unwrap();
    assert_eq!(m.time_to_feasibility_before_next_event, None);
}

#[test]
fn fast_droop_still_cannot_fix_the_battery() {
    let scenario = canonical_with(|s| {
        s.controller.strategy = Strategy::Droop;
        s.controller.inner_iterations = 5;
        s.controller.droop.damping = 1.0;
    });
    let log = run(&scenario, &canonical_feeder()).unwrap();
    assert!(battery_v(&log, 600.0) > 1.05);
    let m = violation_metrics(&log, &scenario.limits).unwrap();
    assert_eq!(m.time_to_feasibility_before_next_event, None);
}

#[test]
fn plant_failure_yields_partial_log() {
    let scenario = canonical_with(|s| {
        s.events.insert(
            0,
            Event {
                time_s: 100.0,
                kind: EventKind::SetLoad {
                    bus: 1,
                    p_kw: 5000.0,
                },
            },
        );
    });
    let log = run(&scenario, &canonical_feeder()).unwrap();
    let failure = log.failure.as_ref().expect("no solution for this load");
    assert_eq!(failure.time_s, 100.0);
    assert_eq!(log.records.len(), 10);
    let csv = log.to_csv_string();
    assert!(csv.lines().last().unwrap().contains("failed:"));
}

#[test]
fn csv_layout() {
    let log = run(&Scenario::canonical(), &canonical_feeder()).unwrap();
    let csv = log.to_csv_string();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "time_s,v_true_bus0,v_true_bus1,v_true_bus2,v_true_bus3,v_true_bus4,\
         v_meas_der0,v_meas_der1,v_meas_der2,q_cmd_der0,q_cmd_der1,q_cmd_der2,\
         lambda_min_0,lambda_min_1,lambda_min_2,lambda_max_0,lambda_max_1,lambda_max_2,\
         p_bus0_kw,p_bus1_kw,p_bus2_kw,p_bus3_kw,p_bus4_kw,event,pf_iters,pf_residual"
    );
    assert_eq!(lines.count(), 126);
    let first = csv.lines().nth(1).unwrap();
    assert!(first.starts_with("0.00000000e0,1.01000000e0,"));

    let droop = run(
        &canonical_with(|s| s.controller.strategy = Strategy::Droop),
        &canonical_feeder(),
    )
    .unwrap();
    let row = droop.to_csv_string().lines().nth(1).unwrap().to_string();
    assert!(
        row.contains(",,,,,,"),
        "multiplier columns must be empty: {row}"
    );
}

#[test]
fn empty_log_has_no_metrics() {
    let mut log = run(&Scenario::canonical(), &canonical_feeder()).unwrap();
    log.records.clear();
    assert!(matches!(
        violation_metrics(&log, &Scenario::canonical().limits),
        Err(SimError::EmptyLog)
    ));
}

#[test]
fn neutral_sweep_values_reproduce_the_baseline() {
    let model = canonical_feeder();
    let base = Scenario::canonical();
    let baseline = run(&base, &model).unwrap();
    let noise = sweep(&base, &model, SweepParam::NoiseStddev, &[0.0]).unwrap();
    assert_eq!(noise[0].summary.log.as_ref().unwrap(), &baseline);
    let x = sweep(&base, &model, SweepParam::XPerturbation, &[0.0, 0.3]).unwrap();
    assert_eq!(x[0].summary.log.as_ref().unwrap(), &baseline);
    assert_ne!(x[1].summary.log.as_ref().unwrap(), &baseline);
}

#[test]
fn comparison_table_orders_the_strategies() {
    let c = compare(&Scenario::canonical(), &canonical_feeder());
    let reference = c.reference.as_ref().unwrap();
    assert!(reference.feasible);
    let row = |label: &str| c.rows.iter().find(|r| r.label == label).unwrap();
    let fo = row("fo_published_x");
    assert!(fo.metrics.as_ref().unwrap().time_to_feasibility.is_some());
    assert!(fo.cost_ratio.unwrap() <= 1.05);
    let ones = row("fo_ones_x");
    assert!(ones.cost_ratio.unwrap() <= 1.25);
    let droop = row("droop");
    assert_eq!(
        droop
            .metrics
            .as_ref()
            .unwrap()
            .time_to_feasibility_before_next_event,
        None
    );
    assert!(c.rows.iter().all(|r| r.error.is_none()));
}

#[test]
fn scenario_file_resolves_relative_feeder() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("feeder.toml"),
        voltvar_core::grid::CANONICAL_FEEDER_TOML,
    )
    .unwrap();
    let text = voltvar_core::sim::CANONICAL_SCENARIO_TOML
        .replace(
            "name = \"canonical\"",
            "name = \"copy\"\nfeeder = \"feeder.toml\"",
        )
        .replace("x_source = \"published\"", "x_source = \"computed\"");
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    let scenario = Scenario::load(&path).unwrap();
    assert_eq!(
        scenario.feeder.as_deref(),
        Some(dir.path().join("feeder.toml").as_path())
    );
    assert_eq!(scenario.controller.x_source, XSource::Computed);
    let log = voltvar_core::sim::run_scenario(&scenario).unwrap();
    let m = violation_metrics(&log, &scenario.limits).unwrap();
    assert!(m.time_to_feasibility_before_next_event.is_some());
}
