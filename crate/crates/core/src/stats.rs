//! Summary tables and paired comparisons of plan metrics.

use std::fmt::Write as _;
use std::io::Write;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dose::MetricsRow;
use crate::error::{validation, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Degenerate("no values to summarize".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Summary { n, mean, std })
}

/// Column names of the metrics table, in file order.
pub fn metric_columns() -> Vec<&'static str> {
    MetricsRow::CSV_HEADER.split(',').collect()
}

/// Per-column summaries for one technique.
#[derive(Debug, Clone, PartialEq)]
pub struct TechniqueSummary {
    pub technique: String,
    pub columns: Vec<Summary>,
}

impl TechniqueSummary {
    pub fn from_rows(technique: impl Into<String>, rows: &[MetricsRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Degenerate("no metrics rows".into()));
        }
        let columns = (0..9)
            .map(|i| summarize(&rows.iter().map(|r| r.as_array()[i]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(Self {
            technique: technique.into(),
            columns,
        })
    }

    pub fn n(&self) -> usize {
        self.columns[0].n
    }
}

/// One line per technique: `technique,n,<col>_mean,<col>_std,...`.
pub fn write_report_csv<W: Write>(mut w: W, summaries: &[TechniqueSummary]) -> Result<()> {
    let mut header = vec!["technique".to_string(), "n".to_string()];
    for c in metric_columns() {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    writeln!(w, "{}", header.join(","))?;
    for s in summaries {
        let mut line = format!("{},{}", s.technique, s.n());
        for c in &s.columns {
            write!(line, ",{},{}", c.mean, c.std).unwrap();
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Aligned `mean ± std` table.
pub fn format_report_text(summaries: &[TechniqueSummary]) -> String {
    let mut header = vec!["technique".to_string(), "n".to_string()];
    header.extend(metric_columns().into_iter().map(String::from));
    let mut rows = vec![header];
    for s in summaries {
        let mut row = vec![s.technique.clone(), s.n().to_string()];
        row.extend(s.columns.iter().map(|c| format!("{:.2} ± {:.2}", c.mean, c.std)));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                let pad = w - cell.chars().count();
                if i == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
}

/// Two-sided paired t-test on `a - b`.
///
/// Differences with zero spread but nonzero mean give an infinite `t` and
/// `p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return validation(format!("series lengths differ: {} vs {}", a.len(), b.len()));
    }
    if a.len() < 2 {
        return validation("a paired t-test needs at least two pairs");
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return validation("series contain non-finite values");
    }
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let s = summarize(&d)?;
    let df = d.len() - 1;
    if s.std == 0.0 {
        return Ok(TTest {
            t: f64::INFINITY.copysign(s.mean),
            p: 0.0,
            df,
            mean_diff: s.mean,
        });
    }
    let t = s.mean / (s.std / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df ≥ 1");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        df,
        mean_diff: s.mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let s = summarize(&[94.0, 96.0]).unwrap();
        assert_eq!(s.mean, 95.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(summarize(&[3.0]).unwrap().std, 0.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn t_test_guards() {
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        let r = paired_t_test(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(r.t.is_infinite() && r.p < 1e-12);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn t_test_hand_value() {
        let r = paired_t_test(&[2.0, -1.0, 3.0, 0.0, 1.0], &[0.0; 5]).unwrap();
        let sd = (10.0f64 / 4.0).sqrt();
        assert!((r.t - 1.0 / (sd / 5f64.sqrt())).abs() < 1e-12);
        assert!((r.p - 0.2302).abs() < 5e-5);
        assert_eq!(r.df, 4);
    }

    #[test]
    fn report_layout() {
        let row = |v: f64| MetricsRow {
            ptv_v100: v,
            ..MetricsRow::default()
        };
        let s = TechniqueSummary::from_rows("SA", &[row(94.0), row(96.0)]).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, std::slice::from_ref(&s)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("technique,n,PTV_V100_mean,PTV_V100_std,PTV_V150_mean"));
        assert!(lines.next().unwrap().starts_with("SA,2,95,1.4142135623730951,"));
        let table = format_report_text(&[s]);
        assert!(table.contains("95.00 ± 1.41"));
        let widths: Vec<usize> = table.lines().map(|l| l.chars().count()).collect();
        assert_eq!(widths[0], widths[1]);
    }
}
