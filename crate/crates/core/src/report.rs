//! Multi-seed comparison of the developed and baseline controllers.

use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

use crate::config::{Mode, SimConfig};
use crate::error::Result;
use crate::metrics::{improvement_percent, rms, rms_scalar};
use crate::simulator::{run_arm, SimTrace};

/// RMS summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mode: Mode,
    pub rms_e: f64,
    pub rms_tau: f64,
    pub rms_e_tilde: f64,
    pub rms_err_m: f64,
    pub rms_err_c: f64,
    pub rms_err_f: f64,
    pub rms_f_tilde: f64,
    pub aborted: Option<String>,
    pub excursion: bool,
    /// Largest `‖θ̂_i‖ − θ̄_i` seen during the run.
    pub max_theta_excess: f64,
}

impl RunSummary {
    pub fn from_trace(trace: &SimTrace) -> Result<Self> {
        let rows = &trace.rows;
        Ok(Self {
            seed: trace.seed,
            mode: trace.mode,
            rms_e: rms(rows.iter().map(|r| r.e))?,
            rms_tau: rms(rows.iter().map(|r| r.tau))?,
            rms_e_tilde: rms_scalar(rows.iter().map(|r| r.e_tilde))?,
            rms_err_m: rms_scalar(rows.iter().map(|r| r.err_m))?,
            rms_err_c: rms_scalar(rows.iter().map(|r| r.err_c))?,
            rms_err_f: rms_scalar(rows.iter().map(|r| r.err_f))?,
            rms_f_tilde: rms_scalar(rows.iter().map(|r| r.f_tilde_norm))?,
            aborted: trace.abort.clone(),
            excursion: trace.excursion,
            max_theta_excess: trace.max_theta_excess,
        })
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::E => self.rms_e,
            Metric::Tau => self.rms_tau,
            Metric::ETilde => self.rms_e_tilde,
            Metric::ErrM => self.rms_err_m,
            Metric::ErrC => self.rms_err_c,
            Metric::ErrF => self.rms_err_f,
            Metric::FTilde => self.rms_f_tilde,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    E,
    Tau,
    ETilde,
    ErrM,
    ErrC,
    ErrF,
    FTilde,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::E,
        Metric::Tau,
        Metric::ETilde,
        Metric::ErrM,
        Metric::ErrC,
        Metric::ErrF,
        Metric::FTilde,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::E => "rms_e",
            Metric::Tau => "rms_tau",
            Metric::ETilde => "rms_E_tilde",
            Metric::ErrM => "rms_err_M",
            Metric::ErrC => "rms_err_C",
            Metric::ErrF => "rms_err_F",
            Metric::FTilde => "rms_f_tilde",
        }
    }
}

/// Paired developed/baseline runs, one pair per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub developed: Vec<RunSummary>,
    pub baseline: Vec<RunSummary>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

impl ComparisonReport {
    /// Median over seeds where neither arm aborted.
    pub fn median(&self, mode: Mode, metric: Metric) -> Option<f64> {
        let runs = match mode {
            Mode::Baseline => &self.baseline,
            _ => &self.developed,
        };
        let mut values: Vec<f64> = runs
            .iter()
            .zip(self.valid_pairs())
            .filter(|(_, ok)| *ok)
            .map(|(r, _)| r.metric(metric))
            .collect();
        median(&mut values)
    }

    fn valid_pairs(&self) -> Vec<bool> {
        self.developed
            .iter()
            .zip(&self.baseline)
            .map(|(d, b)| d.aborted.is_none() && b.aborted.is_none())
            .collect()
    }

    /// Improvement of median developed over median baseline, in percent.
    pub fn improvement(&self, metric: Metric) -> Option<f64> {
        improvement_percent(self.median(Mode::Baseline, metric)?, self.median(Mode::Developed, metric)?)
    }

    /// Seeds (of the non-aborted pairs) where developed ≤ baseline.
    pub fn wins(&self, metric: Metric) -> (usize, usize) {
        let valid = self.valid_pairs();
        let total = valid.iter().filter(|v| **v).count();
        let wins = self
            .developed
            .iter()
            .zip(&self.baseline)
            .zip(valid)
            .filter(|(_, ok)| *ok)
            .filter(|((d, b), _)| d.metric(metric) <= b.metric(metric))
            .count();
        (wins, total)
    }

    pub fn aborted(&self) -> impl Iterator<Item = &RunSummary> {
        self.developed.iter().chain(&self.baseline).filter(|r| r.aborted.is_some())
    }

    /// Human-readable table: per-seed rows, then medians and improvement.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config {}", self.config_hash);
        let _ = write!(out, "{:>6} {:>10}", "seed", "arm");
        for m in Metric::ALL {
            let _ = write!(out, " {:>12}", m.label());
        }
        out.push('\n');
        for (d, b) in self.developed.iter().zip(&self.baseline) {
            for run in [d, b] {
                let arm = if run.mode == Mode::Baseline { "baseline" } else { "developed" };
                let _ = write!(out, "{:>6} {:>10}", run.seed, arm);
                for m in Metric::ALL {
                    let _ = write!(out, " {:>12.6}", run.metric(m));
                }
                if let Some(reason) = &run.aborted {
                    let _ = write!(out, "  ABORTED: {reason}");
                }
                out.push('\n');
            }
        }
        for (name, mode) in [("median dev", Mode::Developed), ("median base", Mode::Baseline)] {
            let _ = write!(out, "{:>17}", name);
            for m in Metric::ALL {
                match self.median(mode, m) {
                    Some(v) => {
                        let _ = write!(out, " {:>12.6}", v);
                    }
                    None => {
                        let _ = write!(out, " {:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "{:>17}", "improvement %");
        for m in Metric::ALL {
            match self.improvement(m) {
                Some(v) => {
                    let _ = write!(out, " {:>12.2}", v);
                }
                None => {
                    let _ = write!(out, " {:>12}", "-");
                }
            }
        }
        out.push('\n');
        out
    }

    /// One CSV row per run.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["seed".to_string(), "arm".to_string()];
        header.extend(Metric::ALL.iter().map(|m| m.label().to_string()));
        header.push("aborted".into());
        header.push("excursion".into());
        w.write_record(&header)?;
        for run in self.developed.iter().chain(&self.baseline) {
            let mut rec = vec![
                run.seed.to_string(),
                if run.mode == Mode::Baseline { "baseline" } else { "developed" }.to_string(),
            ];
            rec.extend(Metric::ALL.iter().map(|m| format!("{:.12e}", run.metric(*m))));
            rec.push(run.aborted.clone().unwrap_or_default());
            rec.push(run.excursion.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Both arms for every seed, in parallel. Arms share the initial weights and
/// the noise sequence of their seed.
pub fn compare(cfg: &SimConfig, seeds: &[u64]) -> Result<ComparisonReport> {
    let jobs: Vec<(u64, Mode)> = seeds
        .iter()
        .flat_map(|&s| [(s, Mode::Developed), (s, Mode::Baseline)])
        .collect();
    let summaries: Vec<RunSummary> = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let trace = run_arm(cfg, mode, seed)?;
            RunSummary::from_trace(&trace)
        })
        .collect::<Result<_>>()?;
    let (developed, baseline): (Vec<_>, Vec<_>) = summaries.into_iter().partition(|r| r.mode != Mode::Baseline);
    Ok(ComparisonReport {
        config_hash: cfg.hash(),
        developed,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
