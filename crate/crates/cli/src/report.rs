//! CSV and JSON renderings of sweep reports and position maps.

use std::io::Write;

use fier_core::harness::{AggregateRow, PositionMap};
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "policy,budget,knob,load_ratio,recall_mean,recall_std,out_err_mean,margin_mean,maxerr_mean,trials,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: String,
    pub budget: usize,
    pub knob: String,
    pub load_ratio: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub out_err_mean: f64,
    pub margin_mean: Option<f64>,
    pub maxerr_mean: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl From<&AggregateRow> for ReportRow {
    fn from(row: &AggregateRow) -> Self {
        Self {
            policy: row.policy.name().to_string(),
            budget: row.budget,
            knob: row.policy.knob(),
            load_ratio: row.load_ratio.value(),
            recall_mean: row.recall_mean,
            recall_std: row.recall_std,
            out_err_mean: row.out_err_mean,
            margin_mean: row.margin_mean,
            maxerr_mean: row.maxerr_mean,
            trials: row.trials,
            seed: row.seed,
        }
    }
}

pub fn rows(aggregates: &[AggregateRow]) -> Vec<ReportRow> {
    aggregates.iter().map(ReportRow::from).collect()
}

pub fn to_csv(rows: &[ReportRow]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner()?)
}

pub fn from_csv(bytes: &[u8]) -> anyhow::Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    Ok(r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?)
}

pub fn to_json(rows: &[ReportRow]) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(rows)?;
    out.push(b'\n');
    Ok(out)
}

/// One row per map: `policy,recall,t0,…,t{l-1}`.
pub fn position_maps_csv(maps: &[PositionMap]) -> anyhow::Result<Vec<u8>> {
    let len = maps.first().map_or(0, |m| m.mask.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["policy".to_string(), "recall".to_string()];
    header.extend((0..len).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for m in maps {
        let mut record = vec![m.label.clone(), m.recall.to_string()];
        record.extend(m.mask.iter().map(|b| b.to_string()));
        w.write_record(&record)?;
    }
    Ok(w.into_inner()?)
}

pub fn write_summary(out: &mut impl Write, maps: &[PositionMap]) -> std::io::Result<()> {
    for m in maps {
        let ones = m.mask.iter().filter(|&&b| b == 1).count();
        writeln!(out, "{} recall {:.4} selected {}", m.label, m.recall, ones)?;
    }
    Ok(())
}
