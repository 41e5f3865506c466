//! JSON and text rendering of FLOP reports.

use std::fmt::Write as _;

use serde_json::{json, Map, Value};
use sparse_scan_core::flops::{BlockFlops, FlopsReport};

pub fn block_name(b: &BlockFlops) -> String {
    format!("stage{}.{}", b.key.stage + 1, b.key.kind.name())
}

pub fn report_json(report: &FlopsReport) -> Value {
    let mut blocks = Map::new();
    for b in &report.blocks {
        blocks.insert(
            block_name(b),
            json!({
                "dense": b.dense,
                "sparse": b.sparse,
                "ratio": b.ratio(),
                "kept_ratio": report.kept_ratios[b.key.stage],
                "token_wise": b.key.kind.is_token_wise(),
            }),
        );
    }
    let tw_dense = report.token_wise_dense();
    json!({
        "blocks": blocks,
        "kept_ratios": report.kept_ratios,
        "totals": {
            "dense": report.dense_total(),
            "sparse": report.sparse_total(),
            "reduction": report.reduction(),
        },
        "token_wise": {
            "dense": tw_dense,
            "sparse": report.token_wise_sparse(),
            "ratio": if tw_dense == 0 { 1.0 } else { report.token_wise_sparse() as f64 / tw_dense as f64 },
        },
    })
}

pub fn report_table(report: &FlopsReport) -> String {
    let mut out = String::new();
    writeln!(out, "{:<22} {:>14} {:>14} {:>8}", "block", "dense", "sparse", "ratio").unwrap();
    for b in &report.blocks {
        writeln!(out, "{:<22} {:>14} {:>14} {:>8.4}", block_name(b), b.dense, b.sparse, b.ratio()).unwrap();
    }
    writeln!(
        out,
        "{:<22} {:>14} {:>14} {:>8.4}",
        "total",
        report.dense_total(),
        report.sparse_total(),
        1.0 - report.reduction()
    )
    .unwrap();
    let kept: Vec<String> = report.kept_ratios.iter().map(|r| format!("{r:.4}")).collect();
    writeln!(out, "kept ratios per stage: {}", kept.join(" ")).unwrap();
    writeln!(out, "reduction: {:.2}%", 100.0 * report.reduction()).unwrap();
    out
}
