//! Parallel sweeps of a scenario template over delay bounds and seeds.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{derive_seed, prepare, run_prepared, SchemeInfo};
use crate::error::{Error, Result};
use crate::metrics::{compute_rate, RateReport};
use crate::scenario::Scenario;

/// Seed stream used for per-run seeds in a sweep: run `i` gets
/// `derive_seed(master, SWEEP_STREAM + i)`.
pub const SWEEP_STREAM: u64 = 1000;

pub fn sweep_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(master, SWEEP_STREAM + i)).collect()
}

/// Parse `start:stop:count` into `count` evenly spaced values (inclusive).
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::config(format!("grid `{text}` is not start:stop:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    match count {
        0 => Err(bad()),
        1 => Ok(vec![start]),
        n => Ok((0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    /// Requested delay bound (s).
    pub gamma: f64,
    /// Delay bound after rounding to the step grid (s).
    pub gamma_effective: f64,
    pub g_bits: u32,
    pub exact_bits: Option<f64>,
    /// Mean of the per-run rates that are defined.
    pub rate: Option<f64>,
    pub rate_sd: Option<f64>,
    pub entropy_ref: f64,
    pub max_z: f64,
    pub violations: usize,
    pub reports: Vec<RateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SweepOutcome {
    Point(SweepPoint),
    Skipped { gamma: f64, reason: String },
}

pub fn with_gamma(template: &Scenario, gamma: f64) -> Scenario {
    let mut sc = template.clone();
    sc.channel.gamma_s = gamma;
    sc
}

/// Run `template` at every delay bound in `gammas` for every seed.
/// Infeasible points are skipped with their reason.
pub fn sweep(template: &Scenario, gammas: &[f64], seeds: &[u64]) -> Vec<SweepOutcome> {
    let prepared: Vec<_> = gammas.iter().map(|&g| prepare(&with_gamma(template, g))).collect();
    let jobs: Vec<(usize, u64)> = prepared
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_ok())
        .flat_map(|(i, _)| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<(usize, Result<RateReport>)> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let mut p = prepared[i].as_ref().expect("feasible point").clone();
            p.scenario.seed = seed;
            if p.scenario.channel.seed.is_none() {
                p.channel.seed = derive_seed(seed, crate::engine::CHANNEL_STREAM);
            }
            (i, run_prepared(&p).map(|t| compute_rate(&t)))
        })
        .collect();

    let mut out = Vec::with_capacity(gammas.len());
    for (i, (&gamma, p)) in gammas.iter().zip(&prepared).enumerate() {
        let p = match p {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping gamma = {gamma}: {e}");
                out.push(SweepOutcome::Skipped { gamma, reason: e.to_string() });
                continue;
            }
        };
        let mut reports = Vec::with_capacity(seeds.len());
        let mut failure = None;
        for (_, r) in results.iter().filter(|(j, _)| *j == i) {
            match r {
                Ok(rep) => reports.push(rep.clone()),
                Err(e) => failure = Some(e.to_string()),
            }
        }
        if let Some(reason) = failure {
            out.push(SweepOutcome::Skipped { gamma, reason });
            continue;
        }
        let rates: Vec<f64> = reports.iter().filter_map(|r| r.rate).collect();
        let mean = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
        let sd = mean
            .filter(|_| rates.len() > 1)
            .map(|m| (rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rates.len() - 1) as f64).sqrt());
        let exact_bits = match &p.info {
            SchemeInfo::Nonlinear { exact_bits, .. } => Some(*exact_bits),
            SchemeInfo::Linear { .. } => None,
        };
        out.push(SweepOutcome::Point(SweepPoint {
            gamma,
            // Trim float noise from steps·δ (e.g. 0.6900000000000001).
            gamma_effective: (p.channel.gamma() * 1e12).round() / 1e12,
            g_bits: p.g_bits(),
            exact_bits,
            rate: mean,
            rate_sd: sd,
            entropy_ref: reports.first().map_or(f64::NAN, |r| r.entropy.reference),
            max_z: reports.iter().map(|r| r.max_abs_z).fold(0.0, f64::max),
            violations: reports.iter().map(|r| r.violations).sum(),
            reports,
        }));
    }
    out
}
