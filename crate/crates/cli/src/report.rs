//! Run reports and the long-format plot data files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const PLOT_HEADER: &str = "experiment,x_name,x,y_name,y,y_stderr";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Recorded for information; never affects the exit code.
    Info,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check_id: String,
    /// What is being compared, in words.
    pub anchor: String,
    pub target: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub status: Status,
    /// Tolerance and any extra numbers behind the verdict.
    pub detail: String,
}

impl CheckRow {
    pub fn new(id: &str, anchor: &str, target: f64, estimate: f64, se: f64, status: Status, detail: impl Into<String>) -> Self {
        Self { check_id: id.into(), anchor: anchor.into(), target, estimate, standard_error: se, status, detail: detail.into() }
    }

    /// |estimate − target| ≤ k·se.
    pub fn within_se(id: &str, anchor: &str, target: f64, estimate: f64, se: f64, k: f64) -> Self {
        let ok = (estimate - target).abs() <= k * se;
        Self::new(id, anchor, target, estimate, se, Status::from_bool(ok), format!("tolerance {k} SE"))
    }

    /// |estimate − target| ≤ rel·|target|.
    pub fn within_rel(id: &str, anchor: &str, target: f64, estimate: f64, se: f64, rel: f64) -> Self {
        let ok = (estimate - target).abs() <= rel * target.abs();
        Self::new(id, anchor, target, estimate, se, Status::from_bool(ok), format!("tolerance {}%", rel * 100.0))
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<10} {}: target {:.6} estimate {:.6} (se {:.2e}) {}",
            self.status.label(),
            self.check_id,
            self.anchor,
            self.target,
            self.estimate,
            self.standard_error,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub experiment: String,
    pub x_name: String,
    pub x: f64,
    pub y_name: String,
    pub y: f64,
    pub y_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub seed: u64,
    /// Fully resolved configuration text.
    pub config: String,
    pub checks: Vec<CheckRow>,
    pub plot: Vec<PlotRow>,
    pub events: u64,
    pub wall_clock_seconds: f64,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            config: String::new(),
            checks: Vec::new(),
            plot: Vec::new(),
            events: 0,
            wall_clock_seconds: 0.0,
            warnings: Vec::new(),
        }
    }

    pub fn point(&mut self, x_name: &str, x: f64, y_name: &str, y: f64, y_stderr: f64) {
        self.plot.push(PlotRow { experiment: self.experiment.clone(), x_name: x_name.into(), x, y_name: y_name.into(), y, y_stderr });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn checks_csv(&self) -> String {
        let mut s = String::from("check_id,anchor,target,estimate,standard_error,status,detail\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.check_id,
                quote(&c.anchor),
                c.target,
                c.estimate,
                c.standard_error,
                c.status.label().to_lowercase(),
                quote(&c.detail)
            );
        }
        s
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long-format CSV of the plot rows.
pub fn plot_csv(rows: &[PlotRow]) -> String {
    let mut s = String::from(PLOT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.experiment, r.x_name, r.x, r.y_name, r.y, r.y_stderr);
    }
    s
}

pub fn plot_json(rows: &[PlotRow]) -> String {
    serde_json::to_string_pretty(rows).expect("plot rows serialize")
}

pub fn parse_plot_csv(text: &str) -> Result<Vec<PlotRow>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(PLOT_HEADER) {
        return Err(CliError::Validation("plot data header mismatch".into()));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(CliError::Validation(format!("bad plot row `{l}`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| CliError::Validation(format!("bad number `{s}`")));
            Ok(PlotRow {
                experiment: f[0].into(),
                x_name: f[1].into(),
                x: num(f[2])?,
                y_name: f[3].into(),
                y: num(f[4])?,
                y_stderr: num(f[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let mut r = RunReport::new("walk", 1);
        r.point("distance", 0.0, "green", 1.25, 0.0);
        r.point("distance", 1.0, "green", 0.1 + 0.2, 1e-17);
        r.point("level", 2.0, "pairing", -3.5e-300, f64::MIN_POSITIVE);
        r
    }

    #[test]
    fn header_and_row_count() {
        let r = sample();
        let csv = plot_csv(&r.plot);
        assert_eq!(csv.lines().next(), Some("experiment,x_name,x,y_name,y,y_stderr"));
        assert_eq!(csv.lines().count(), r.plot.len() + 1);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = sample();
        assert_eq!(parse_plot_csv(&plot_csv(&r.plot)).unwrap(), r.plot);
        let back: Vec<PlotRow> = serde_json::from_str(&plot_json(&r.plot)).unwrap();
        assert_eq!(back, r.plot);
    }

    #[test]
    fn verdicts() {
        assert_eq!(CheckRow::within_se("x", "a", 1.0, 1.3, 0.1, 4.0).status, Status::Pass);
        assert_eq!(CheckRow::within_se("x", "a", 1.0, 1.5, 0.1, 4.0).status, Status::Fail);
        assert_eq!(CheckRow::within_rel("x", "a", 2.0, 2.15, 0.0, 0.1).status, Status::Pass);
        let mut r = sample();
        r.checks.push(CheckRow::new("i", "info", 0.0, 1.0, 0.0, Status::Info, ""));
        assert!(r.all_pass());
        r.checks.push(CheckRow::within_rel("f", "a, quoted", 1.0, 3.0, 0.0, 0.1));
        assert!(!r.all_pass());
        assert!(r.checks_csv().contains("\"a, quoted\""));
    }
}
