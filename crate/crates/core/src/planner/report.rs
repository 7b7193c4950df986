//! Text and CSV renderings of planner outputs.

use super::cost::{CostReport, UnitCost};
use super::results::Contribution;

/// Left-aligned first column, right-aligned remaining columns.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                s += &format!("{c:<w$}");
            } else {
                s += &format!("  {c:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    let dashes: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out += &line(dashes.iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(|s| s.as_str()).collect());
    }
    out
}

pub fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",") + "\n";
    for r in rows {
        s += &r.join(",");
        s.push('\n');
    }
    s
}

const COST_HEADER: [&str; 7] = [
    "rank",
    "layer",
    "ops",
    "params",
    "ops_norm",
    "params_norm",
    "score",
];

fn cost_rows(r: &CostReport) -> Vec<Vec<String>> {
    r.layers
        .iter()
        .map(|l| {
            vec![
                l.rank.to_string(),
                l.label.to_string(),
                l.n_op.to_string(),
                l.n_param.to_string(),
                format!("{:.4}", l.op_norm),
                format!("{:.4}", l.param_norm),
                format!("{:.4}", l.score),
            ]
        })
        .collect()
}

pub fn cost_table(r: &CostReport) -> String {
    aligned_table(&COST_HEADER, &cost_rows(r))
}

pub fn cost_csv(r: &CostReport) -> String {
    csv(&COST_HEADER, &cost_rows(r))
}

const PROFILE_HEADER: [&str; 4] = ["unit", "label", "ops", "params"];

fn profile_rows(costs: &[UnitCost]) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = costs
        .iter()
        .map(|u| {
            vec![
                u.name.clone(),
                u.label.to_string(),
                u.ops.to_string(),
                u.params.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "total".into(),
        String::new(),
        costs.iter().map(|u| u.ops).sum::<u64>().to_string(),
        costs.iter().map(|u| u.params).sum::<u64>().to_string(),
    ]);
    rows
}

pub fn profile_table(costs: &[UnitCost]) -> String {
    aligned_table(&PROFILE_HEADER, &profile_rows(costs))
}

pub fn profile_csv(costs: &[UnitCost]) -> String {
    csv(&PROFILE_HEADER, &profile_rows(costs))
}

const CONTRIB_HEADER: [&str; 4] = ["layer", "mean_gain", "pairs", "skipped"];

fn contribution_rows(c: &[Contribution]) -> Vec<Vec<String>> {
    c.iter()
        .map(|c| {
            vec![
                c.label.to_string(),
                c.mean_gain
                    .map_or("undefined".into(), |g| format!("{g:.6}")),
                c.pairs.to_string(),
                c.skipped.to_string(),
            ]
        })
        .collect()
}

pub fn contribution_table(c: &[Contribution]) -> String {
    aligned_table(&CONTRIB_HEADER, &contribution_rows(c))
}

pub fn contribution_csv(c: &[Contribution]) -> String {
    csv(&CONTRIB_HEADER, &contribution_rows(c))
}
