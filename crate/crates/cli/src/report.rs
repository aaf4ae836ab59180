//! Plain-text metric summaries and tables.

use std::fmt::Write;

use voltvar_core::sim::{Comparison, ReferenceOptimum, RunSummary, SweepRow};
use voltvar_core::ViolationMetrics;

fn seconds(t: Option<f64>) -> String {
    t.map_or_else(|| "never".to_string(), |t| format!("{t:.0}"))
}

fn ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "-".to_string(), |r| format!("{r:.4}"))
}

fn vector(v: &[f64], digits: usize) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", items.join(", "))
}

/// Key-value summary of one run.
pub fn metrics_text(
    name: &str,
    strategy: &str,
    m: &ViolationMetrics,
    failure: Option<&str>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario                         {name}");
    let _ = writeln!(s, "strategy                         {strategy}");
    let _ = writeln!(
        s,
        "max_violation_pu                 {:.6e}",
        m.max_violation
    );
    let _ = writeln!(
        s,
        "violation_integral_pu_s          {:.6e}",
        m.violation_integral
    );
    let _ = writeln!(
        s,
        "time_to_feasibility_s            {}",
        seconds(m.time_to_feasibility)
    );
    let _ = writeln!(
        s,
        "time_to_feasibility_no_event_s   {}",
        seconds(m.time_to_feasibility_before_next_event)
    );
    let _ = writeln!(
        s,
        "steady_state_violation_pu        {:.6e}",
        m.steady_state_violation
    );
    let _ = writeln!(
        s,
        "steady_state_cost                {:.6}",
        m.steady_state_cost
    );
    let _ = writeln!(
        s,
        "steady_state_der_voltages_pu     {}",
        vector(&m.steady_state_der_voltages, 5)
    );
    let _ = writeln!(
        s,
        "steady_state_q_kvar              {}",
        vector(&m.steady_state_q_kvar, 3)
    );
    let _ = writeln!(
        s,
        "max_abs_lambda                   {:.6e}",
        m.max_abs_lambda
    );
    if let Some(f) = failure {
        let _ = writeln!(s, "failure                          {f}");
    }
    s
}

const HEADER: [&str; 7] = [
    "max_viol_pu",
    "viol_int_pu_s",
    "ttf_s",
    "ttf_no_event_s",
    "ss_cost",
    "cost_ratio",
    "max_lambda",
];

fn summary_cells(r: &RunSummary) -> Vec<String> {
    match &r.metrics {
        Some(m) => vec![
            format!("{:.4e}", m.max_violation),
            format!("{:.4e}", m.violation_integral),
            seconds(m.time_to_feasibility),
            seconds(m.time_to_feasibility_before_next_event),
            format!("{:.4}", m.steady_state_cost),
            ratio(r.cost_ratio),
            format!("{:.3e}", m.max_abs_lambda),
        ],
        None => vec!["-".to_string(); HEADER.len()],
    }
}

fn status(r: &RunSummary) -> String {
    match &r.error {
        Some(e) => format!("failed: {e}"),
        None => "ok".to_string(),
    }
}

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(String::len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<w$}", w = widths[c]))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn comparison_table(c: &Comparison) -> String {
    let mut out = String::new();
    match &c.reference {
        Some(ReferenceOptimum {
            q_kvar,
            cost,
            feasible: true,
        }) => {
            let _ = writeln!(
                out,
                "reference optimum: cost {cost:.4}, q_kvar {}",
                vector(q_kvar, 3)
            );
        }
        _ => out.push_str("reference optimum: infeasible\n"),
    }
    let mut rows = vec![std::iter::once("run")
        .chain(HEADER)
        .chain(["status"])
        .map(String::from)
        .collect::<Vec<_>>()];
    for r in &c.rows {
        let mut row = vec![r.label.clone()];
        row.extend(summary_cells(r));
        row.push(status(r));
        rows.push(row);
    }
    out.push_str(&table(&rows));
    out
}

pub fn sweep_table(param: &str, rows: &[SweepRow]) -> String {
    let mut lines = vec![std::iter::once(param)
        .chain(HEADER)
        .chain(["diverged", "status"])
        .map(String::from)
        .collect::<Vec<_>>()];
    for r in rows {
        let mut row = vec![format!("{}", r.value)];
        row.extend(summary_cells(&r.summary));
        row.push(if r.diverged { "yes" } else { "no" }.to_string());
        row.push(status(&r.summary));
        lines.push(row);
    }
    table(&lines)
}
