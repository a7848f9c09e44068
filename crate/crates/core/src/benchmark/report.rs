use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{Accuracies, BenchmarkReport};
use crate::error::{Error, Result};
use crate::io::write_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::invalid(format!("unknown report format {s:?}"))),
        }
    }
}

impl ReportFormat {
    pub fn render(self, report: &BenchmarkReport) -> Result<String> {
        match self {
            Self::Json => report.to_json(),
            Self::Table => Ok(emit_table(report)),
            Self::Csv => emit_csv(report),
        }
    }

    pub fn write(self, report: &BenchmarkReport, path: &Path) -> Result<()> {
        write_file(path, self.render(report)?.as_bytes())
    }
}

const FAMILIES: [(&str, &str); 4] = [
    ("top1", "novel"),
    ("top5", "novel"),
    ("top1", "all"),
    ("top5", "all"),
];

fn pick(a: &Accuracies, metric: &str, subset: &str) -> f64 {
    match (metric, subset) {
        ("top1", "novel") => a.novel_top1,
        ("top5", "novel") => a.novel_top5,
        ("top1", "all") => a.all_top1,
        _ => a.all_top5,
    }
}

/// `method,n,metric,subset,mean,std`, one row per method, shot count,
/// metric and class subset.
pub fn emit_csv(report: &BenchmarkReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "n", "metric", "subset", "mean", "std"])?;
    for name in &report.methods {
        let Some(shots) = report.results.get(name) else { continue };
        for (n, r) in shots {
            for (metric, subset) in FAMILIES {
                w.write_record([
                    name.as_str(),
                    &n.to_string(),
                    metric,
                    subset,
                    &pick(&r.mean, metric, subset).to_string(),
                    &pick(&r.std, metric, subset).to_string(),
                ])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

/// One block per metric family: methods down, shot counts across, cells
/// `mean ± std` in percent.
pub fn emit_table(report: &BenchmarkReport) -> String {
    let mut shots: Vec<usize> = report
        .results
        .values()
        .flat_map(|m| m.keys().copied())
        .collect();
    shots.sort_unstable();
    shots.dedup();
    let width = report.methods.iter().map(String::len).max().unwrap_or(0).max(6);
    let mut out = String::new();
    for (metric, subset) in FAMILIES {
        let _ = writeln!(out, "{subset} classes, {metric} accuracy (%)");
        let _ = write!(out, "{:<width$}", "method");
        for n in &shots {
            let _ = write!(out, " {:>13}", format!("n={n}"));
        }
        out.push('\n');
        for name in &report.methods {
            let _ = write!(out, "{name:<width$}");
            for n in &shots {
                match report.get(name, *n) {
                    Some(r) => {
                        let cell = format!(
                            "{:.2} ± {:.2}",
                            100.0 * pick(&r.mean, metric, subset),
                            100.0 * pick(&r.std, metric, subset)
                        );
                        let _ = write!(out, " {cell:>13}");
                    }
                    None => {
                        let _ = write!(out, " {:>13}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
