use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sweep::ResultRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "series,kind,x,y,y_err,count";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    RiskVsN,
    RiskVsLambda,
    Spectrum,
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::RiskVsN => "risk_vs_n",
            PlotKind::RiskVsLambda => "risk_vs_lambda",
            PlotKind::Spectrum => "spectrum",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "risk_vs_n" => Ok(PlotKind::RiskVsN),
            "risk_vs_lambda" => Ok(PlotKind::RiskVsLambda),
            "spectrum" => Ok(PlotKind::Spectrum),
            other => Err(Error::Config(format!("unknown plot kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub series: String,
    pub kind: PlotKind,
    pub x: f64,
    pub y: f64,
    pub y_err: f64,
    pub count: usize,
}

#[derive(Default)]
struct Acc {
    sum: f64,
    sum_sq: f64,
    count: usize,
    order: Option<f64>,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Standard error of the mean; zero for a single observation.
    fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = (self.sum_sq - self.count as f64 * m * m).max(0.0) / (self.count - 1) as f64;
        (var / self.count as f64).sqrt()
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Aggregates records into tidy rows, one per `(series, x)`, plus a `rate_guide` series per curve.
pub fn emit_plotdata(records: &[ResultRecord], kind: PlotKind) -> Vec<PlotRow> {
    match kind {
        PlotKind::Spectrum => spectrum_rows(records),
        _ => risk_rows(records, kind),
    }
}

fn risk_rows(records: &[ResultRecord], kind: PlotKind) -> Vec<PlotRow> {
    // curve key -> x bits -> (x, sim, se, bo)
    let mut curves: BTreeMap<String, BTreeMap<u64, (f64, Acc, Acc, Acc)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.error.is_none() || r.risk_sim.is_some() || r.risk_se.is_some()) {
        let (x, key) = match kind {
            PlotKind::RiskVsN => (
                r.n_eff,
                format!("{}|{}|d={}|lambda={}|gamma={}|delta={}", r.model_name(), r.solver, r.d, fmt_num(r.lambda), r.gamma, r.delta),
            ),
            _ => (r.lambda, format!("{}|{}|d={}|n={}|gamma={}|delta={}", r.model_name(), r.solver, r.d, r.n, r.gamma, r.delta)),
        };
        let slot = curves.entry(key).or_default().entry(x.to_bits()).or_insert_with(|| (x, Acc::default(), Acc::default(), Acc::default()));
        if let Some(v) = r.risk_sim {
            slot.1.push(v);
        }
        if let Some(v) = r.risk_se {
            slot.2.push(v);
            slot.2.order = r.rate_order;
        } else if r.rate_order.is_some() {
            slot.1.order = r.rate_order;
        }
        if let Some(v) = r.risk_bo {
            slot.3.push(v);
        }
    }
    let mut rows = Vec::new();
    for (key, points) in curves {
        let mut pts: Vec<_> = points.into_values().collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (label, pick) in [("sim", 1usize), ("se", 2), ("bo", 3)] {
            for p in &pts {
                let acc = match pick {
                    1 => &p.1,
                    2 => &p.2,
                    _ => &p.3,
                };
                if acc.count > 0 {
                    // SE values are repeated across replicates; they carry no sampling error.
                    let y_err = if pick == 1 { acc.stderr() } else { 0.0 };
                    rows.push(PlotRow { series: format!("{label}:{key}"), kind, x: p.0, y: acc.mean(), y_err, count: acc.count });
                }
            }
        }
        let anchor = pts.iter().find_map(|p| {
            let order = p.2.order.or(p.1.order)?;
            let y = if p.2.count > 0 { p.2.mean() } else if p.1.count > 0 { p.1.mean() } else { return None };
            (order > 0.0).then_some(y / order)
        });
        if let Some(c) = anchor {
            for p in &pts {
                if let Some(order) = p.2.order.or(p.1.order) {
                    rows.push(PlotRow { series: format!("rate_guide:{key}"), kind, x: p.0, y: c * order, y_err: 0.0, count: 1 });
                }
            }
        }
    }
    rows
}

fn spectrum_rows(records: &[ResultRecord]) -> Vec<PlotRow> {
    let mut curves: BTreeMap<String, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.spectrum.is_some()) {
        let key = format!(
            "spectrum:{}|{}|d={}|n={}|lambda={}|gamma={}|delta={}",
            r.model_name(),
            r.solver,
            r.d,
            r.n,
            fmt_num(r.lambda),
            r.gamma,
            r.delta
        );
        curves.entry(key).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (key, recs) in curves {
        let mut zero = Acc::default();
        for r in &recs {
            zero.push(r.spectrum.as_ref().unwrap().zero_mass);
        }
        rows.push(PlotRow { series: format!("{key}|zero_atom"), kind: PlotKind::Spectrum, x: 0.0, y: zero.mean(), y_err: zero.stderr(), count: zero.count });
        // Histograms from different replicates have different ranges, so bins are pooled by center.
        let mut bins: BTreeMap<u64, (f64, Acc)> = BTreeMap::new();
        for r in &recs {
            let h = r.spectrum.as_ref().unwrap();
            for (i, m) in h.mass.iter().enumerate() {
                let center = 0.5 * (h.edges[i] + h.edges[i + 1]);
                bins.entry(center.to_bits()).or_insert_with(|| (center, Acc::default())).1.push(*m);
            }
        }
        let mut pts: Vec<_> = bins.into_values().collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (x, acc) in pts {
            rows.push(PlotRow { series: key.clone(), kind: PlotKind::Spectrum, x, y: acc.mean(), y_err: acc.stderr(), count: acc.count });
        }
    }
    rows
}

pub fn to_csv(rows: &[PlotRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.series, r.kind.name(), r.x, r.y, r.y_err, r.count);
    }
    out
}

pub fn write_plotdata(records: &[ResultRecord], kind: PlotKind, path: &Path) -> Result<usize> {
    let rows = emit_plotdata(records, kind);
    std::fs::write(path, to_csv(&rows))?;
    Ok(rows.len())
}

impl ResultRecord {
    fn model_name(&self) -> &'static str {
        match self.model {
            crate::model_gen::Model::Diagonal => "diagonal",
            crate::model_gen::Model::Quadratic => "quadratic",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_records_give_header_only() {
        assert_eq!(to_csv(&emit_plotdata(&[], PlotKind::RiskVsN)), format!("{CSV_HEADER}\n"));
        assert_eq!(to_csv(&emit_plotdata(&[], PlotKind::Spectrum)), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!("risk_vs_d".parse::<PlotKind>(), Err(Error::Config(_))));
        assert_eq!("spectrum".parse::<PlotKind>().unwrap(), PlotKind::Spectrum);
    }
}
