//! CSV and JSON report writers. Column names and field names are part of
//! the tool's interface.

use std::io::Write;

use serde::Serialize;

use crate::dse::{AccessCounts, AccessReport, ReductionReport, ReductionRow};
use crate::engine::{LayerRun, Mode, ZeroStats};
use crate::timing::TimingReport;

pub const COUNTERS_HEADER: [&str; 11] = [
    "layer",
    "mode",
    "dwc_act_reads",
    "dwc_wgt_reads",
    "dwc_out_writes",
    "intermediate_reads",
    "pwc_act_reads",
    "pwc_wgt_reads",
    "pwc_psum_accesses",
    "pwc_out_writes",
    "cycles",
];

pub const ZERO_STATS_HEADER: [&str; 3] = ["layer", "dwc_zero_fraction", "pwc_zero_fraction"];

pub const DSE_HEADER: [&str; 13] = [
    "order", "Tn", "Tm", "Td", "Tk", "layer", "dwc_act", "dwc_wgt", "pwc_act", "pwc_wgt", "psum",
    "pe_dwc", "pe_pwc",
];

pub const REDUCTION_HEADER: [&str; 5] = [
    "convention",
    "layer",
    "baseline",
    "proposed",
    "reduction_pct",
];

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory csv writer")
}

pub fn counters_csv(mode: Mode, runs: &[LayerRun]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COUNTERS_HEADER).unwrap();
    for (i, run) in runs.iter().enumerate() {
        let c = &run.counters;
        w.write_record([
            i.to_string(),
            mode.to_string(),
            c.dwc_act_reads.to_string(),
            c.dwc_wgt_reads.to_string(),
            c.dwc_out_writes.to_string(),
            c.intermediate_reads.to_string(),
            c.pwc_act_reads.to_string(),
            c.pwc_wgt_reads.to_string(),
            c.pwc_psum_accesses.to_string(),
            c.pwc_out_writes.to_string(),
            run.trace.total_cycles().to_string(),
        ])
        .unwrap();
    }
    finish(w)
}

pub fn zero_stats_csv(stats: &[ZeroStats]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ZERO_STATS_HEADER).unwrap();
    for s in stats {
        w.write_record([
            s.layer.to_string(),
            format!("{:.6}", s.dwc_zero_fraction),
            format!("{:.6}", s.pwc_zero_fraction),
        ])
        .unwrap();
    }
    finish(w)
}

fn dse_record(rep: &AccessReport, layer: &str, a: &AccessCounts) -> [String; 13] {
    let t = rep.point.tiles();
    [
        rep.point.order.to_string(),
        t.t_n.to_string(),
        t.t_m.to_string(),
        t.t_d.to_string(),
        t.t_k.to_string(),
        layer.to_string(),
        a.dwc_act.to_string(),
        a.dwc_wgt.to_string(),
        a.pwc_act.to_string(),
        a.pwc_wgt.to_string(),
        a.psum.to_string(),
        a.pe_dwc.to_string(),
        a.pe_pwc.to_string(),
    ]
}

/// One row per (point, layer) and a `total` row per point.
pub fn dse_csv(reports: &[AccessReport]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DSE_HEADER).unwrap();
    for rep in reports {
        for (i, a) in rep.layers.iter().enumerate() {
            w.write_record(dse_record(rep, &i.to_string(), a)).unwrap();
        }
        w.write_record(dse_record(rep, "total", &rep.total))
            .unwrap();
    }
    finish(w)
}

pub fn reduction_csv(reports: &[ReductionReport]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REDUCTION_HEADER).unwrap();
    let mut row = |conv: String, layer: String, r: &ReductionRow| {
        w.write_record([
            conv,
            layer,
            r.baseline.to_string(),
            r.proposed.to_string(),
            format!("{:.4}", 100.0 * r.reduction()),
        ])
        .unwrap();
    };
    for rep in reports {
        for (i, r) in rep.layers.iter().enumerate() {
            row(rep.convention.to_string(), i.to_string(), r);
        }
        row(rep.convention.to_string(), "total".into(), &rep.total);
    }
    finish(w)
}

#[derive(Serialize)]
struct TimingLayerJson {
    index: usize,
    cycles: u64,
    ns: f64,
    ops: u64,
    gops: f64,
    dwc_util: f64,
    pwc_util: f64,
}

#[derive(Serialize)]
struct TimingJson {
    layers: Vec<TimingLayerJson>,
    mean_gops: f64,
    weighted_gops: f64,
    total_ns: f64,
}

pub fn timing_json(report: &TimingReport) -> Vec<u8> {
    let doc = TimingJson {
        layers: report
            .layers
            .iter()
            .map(|l| TimingLayerJson {
                index: l.index,
                cycles: l.total_cycles,
                ns: l.total_ns,
                ops: l.ops,
                gops: l.throughput_gops,
                dwc_util: l.dwc_utilization,
                pwc_util: l.pwc_utilization,
            })
            .collect(),
        mean_gops: report.mean_gops,
        weighted_gops: report.weighted_gops,
        total_ns: report.total_ns,
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("timing report serializes");
    out.write_all(b"\n").unwrap();
    out
}
