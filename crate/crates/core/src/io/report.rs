use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::Result;
use crate::metrics::{BoundReport, HybridScan, RunRow};
use crate::train::fmt_f64;

pub const REPORT_COLUMNS: [&str; 10] = [
    "n", "m", "M", "seed", "k", "term", "total", "ell_hat", "predictor", "residual",
];

/// One flat row: a hybrid-scan layer (`k`, `term` set) or a grid run
/// (`predictor`, `residual` set). Unused columns are empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "M")]
    pub big_m: usize,
    pub seed: u64,
    pub k: Option<usize>,
    pub term: Option<f64>,
    pub total: Option<f64>,
    pub ell_hat: Option<f64>,
    pub predictor: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundReport>,
}

impl Report {
    /// One row per layer of a scan.
    pub fn push_scan(&mut self, n: usize, m: usize, big_m: usize, seed: u64, scan: &HybridScan) {
        for (k, term) in scan.terms.iter().enumerate() {
            self.rows.push(ReportRow {
                n,
                m,
                big_m,
                seed,
                k: Some(k + 1),
                term: Some(*term),
                total: Some(scan.total),
                ell_hat: Some(scan.amplification[k]),
                ..ReportRow::default()
            });
        }
    }

    /// One row per run, with residuals against the fitted constant.
    pub fn from_runs(runs: &[RunRow], bound: &BoundReport) -> Self {
        let rows = runs
            .iter()
            .map(|r| {
                let predictor = r.ell_hat * r.n as f64 / (r.m as f64).sqrt();
                ReportRow {
                    n: r.n,
                    m: r.m,
                    big_m: r.big_m,
                    seed: r.seed,
                    total: Some(r.d),
                    ell_hat: Some(r.ell_hat),
                    predictor: Some(predictor),
                    residual: Some(r.d.ln() - (bound.constant * predictor).ln()),
                    ..ReportRow::default()
                }
            })
            .collect();
        Report {
            rows,
            bound: Some(bound.clone()),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(REPORT_COLUMNS)?;
        let opt_f = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.m.to_string(),
                r.big_m.to_string(),
                r.seed.to_string(),
                r.k.map(|k| k.to_string()).unwrap_or_default(),
                opt_f(r.term),
                opt_f(r.total),
                opt_f(r.ell_hat),
                opt_f(r.predictor),
                opt_f(r.residual),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn write_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    let bytes = match format {
        ReportFormat::Json => report.to_json().into_bytes(),
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            buf
        }
    };
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_string(r: &Report) -> String {
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_and_single_row() {
        assert_eq!(csv_string(&Report::default()), "n,m,M,seed,k,term,total,ell_hat,predictor,residual\n");
        let scan = HybridScan {
            samples: 4,
            terms: vec![0.25],
            total: 0.25,
            handoffs: vec![0.25],
            amplification: vec![1.0],
            skipped: vec![0],
        };
        let mut r = Report::default();
        r.push_scan(1, 16, 512, 3, &scan);
        assert_eq!(
            csv_string(&r),
            "n,m,M,seed,k,term,total,ell_hat,predictor,residual\n1,16,512,3,1,0.25,0.25,1.0,,\n"
        );
    }

    #[test]
    fn json_and_csv_carry_same_values() {
        let runs: Vec<RunRow> = [2usize, 4, 8]
            .iter()
            .flat_map(|&n| {
                [16usize, 64, 256].into_iter().map(move |m| RunRow {
                    n,
                    m,
                    big_m: 32 * m,
                    seed: (n * m) as u64,
                    d: 0.1 * n as f64 / (m as f64).sqrt() * (1.0 + 0.01 * n as f64),
                    ell_hat: 1.3,
                })
            })
            .collect();
        let bound = crate::metrics::bound_report(&runs).unwrap();
        let rep = Report::from_runs(&runs, &bound);
        let from_json: Report = serde_json::from_str(&rep.to_json()).unwrap();
        let text = csv_string(&rep);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), REPORT_COLUMNS);
        let parsed: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(parsed.len(), from_json.rows.len());
        for (rec, row) in parsed.iter().zip(&from_json.rows) {
            assert_eq!(rec[0].parse::<usize>().unwrap(), row.n);
            assert_eq!(rec[3].parse::<u64>().unwrap(), row.seed);
            assert_eq!(rec[6].parse::<f64>().unwrap(), row.total.unwrap());
            assert_eq!(rec[8].parse::<f64>().unwrap(), row.predictor.unwrap());
            assert_eq!(rec[9].parse::<f64>().unwrap(), row.residual.unwrap());
            assert_eq!(&rec[4], "");
        }
    }
}
