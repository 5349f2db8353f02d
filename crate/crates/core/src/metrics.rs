//! Rates, entropy references and envelope checks computed from traces.

use serde::Serialize;

use crate::engine::{AbortKind, SchemeInfo, SimTrace};
use crate::error::{Error, Result};
use crate::plants::NonlinearMap;

/// `Σ_{k<N} g_k / (t_N − t_1)` over sends `(step, bits)`, each interval
/// paired with the packet that opens it. Absent with fewer than two sends.
pub fn rate_from_sends(sends: &[(u64, u32)], delta: f64) -> Option<f64> {
    if sends.len() < 2 {
        return None;
    }
    let mut sorted = sends.to_vec();
    sorted.sort_unstable();
    let span = (sorted[sorted.len() - 1].0 - sorted[0].0) as f64 * delta;
    let bits: u64 = sorted[..sorted.len() - 1].iter().map(|&(_, g)| g as u64).sum();
    (span > 0.0).then(|| bits as f64 / span)
}

/// `Σg / ΣΔ` over `(bits, interval)` pairs.
pub fn rate_from_intervals(packets: &[(u32, f64)]) -> Option<f64> {
    let total: f64 = packets.iter().map(|&(_, d)| d).sum();
    let bits: u64 = packets.iter().map(|&(g, _)| g as u64).sum();
    (!packets.is_empty() && total > 0.0).then(|| bits as f64 / total)
}

pub fn entropy_rate_linear(lambda1: f64) -> Result<f64> {
    if !(lambda1 > 0.0) {
        return Err(Error::config(format!("entropy rate needs λ₁ > 0, got {lambda1}")));
    }
    Ok(lambda1 / std::f64::consts::LN_2)
}

/// Entropy reference for a run. For linear plants `reference` is
/// `λ₁/ln 2` bits/s; for the scalar demo it is `inf ∂f/∂x` and the
/// pointwise statistics are `∂f/∂x` along the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReference {
    pub reference: f64,
    pub pointwise_mean: Option<f64>,
    pub pointwise_min: Option<f64>,
    pub pointwise_max: Option<f64>,
}

pub fn entropy_reference(trace: &SimTrace) -> EntropyReference {
    match &trace.info {
        SchemeInfo::Linear { lambda1, .. } => EntropyReference {
            reference: entropy_rate_linear(*lambda1).unwrap_or(f64::NAN),
            pointwise_mean: None,
            pointwise_min: None,
            pointwise_max: None,
        },
        SchemeInfo::Nonlinear { .. } => {
            let map = NonlinearMap::Demo;
            let h: Vec<f64> = trace.steps.iter().map(|r| map.state_derivative(r.x[0])).collect();
            let n = h.len() as f64;
            EntropyReference {
                reference: map.entropy_lower_bound(),
                pointwise_mean: (!h.is_empty()).then(|| h.iter().sum::<f64>() / n),
                pointwise_min: h.iter().copied().reduce(f64::min),
                pointwise_max: h.iter().copied().reduce(f64::max),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// Bits per second; absent with fewer than two sends.
    pub rate: Option<f64>,
    pub total_bits: u64,
    /// Time between the first and the last send (s).
    pub elapsed: f64,
    pub trigger_count: usize,
    pub mean_interval: Option<f64>,
    pub min_interval: Option<f64>,
    pub max_interval: Option<f64>,
    pub violations: usize,
    pub max_abs_z: f64,
    pub entropy: EntropyReference,
}

pub fn compute_rate(trace: &SimTrace) -> RateReport {
    let sends: Vec<(u64, u32)> = trace.events.iter().map(|e| (e.send_step, e.g_bits)).collect();
    let mut steps: Vec<u64> = sends.iter().map(|s| s.0).collect();
    steps.sort_unstable();
    let intervals: Vec<f64> = steps.windows(2).map(|w| (w[1] - w[0]) as f64 * trace.delta).collect();
    let elapsed = match (steps.first(), steps.last()) {
        (Some(a), Some(b)) => (b - a) as f64 * trace.delta,
        _ => 0.0,
    };
    RateReport {
        rate: rate_from_sends(&sends, trace.delta),
        total_bits: sends.iter().map(|s| s.1 as u64).sum(),
        elapsed,
        trigger_count: sends.len(),
        mean_interval: (!intervals.is_empty()).then(|| intervals.iter().sum::<f64>() / intervals.len() as f64),
        min_interval: intervals.iter().copied().reduce(f64::min),
        max_interval: intervals.iter().copied().reduce(f64::max),
        violations: verify_envelopes(trace).total_violations,
        max_abs_z: max_abs_z(trace),
        entropy: entropy_reference(trace),
    }
}

/// Largest `|z|` seen, including values just before each jump.
pub fn max_abs_z(trace: &SimTrace) -> f64 {
    let steps = trace.steps.iter().map(|r| r.z.abs());
    let pre = trace.events.iter().filter_map(|e| e.z_before_jump).map(f64::abs);
    steps.chain(pre).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    pub name: String,
    pub bound: f64,
    pub slack: f64,
    pub samples: usize,
    pub max_observed: f64,
    /// `max(observed − bound − slack)`; negative when the bound holds.
    pub max_excess: f64,
    pub violations: usize,
}

impl EnvelopeCheck {
    fn new(name: &str, bound: f64, slack: f64) -> Self {
        Self {
            name: name.to_string(),
            bound,
            slack,
            samples: 0,
            max_observed: 0.0,
            max_excess: f64::NEG_INFINITY,
            violations: 0,
        }
    }

    fn observe(&mut self, value: f64) {
        self.observe_against(value, self.bound);
    }

    fn observe_against(&mut self, value: f64, bound: f64) {
        let v = value.abs();
        self.samples += 1;
        self.max_observed = self.max_observed.max(v);
        let excess = v - bound - self.slack;
        self.max_excess = self.max_excess.max(excess);
        if excess > 0.0 {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub checks: Vec<EnvelopeCheck>,
    pub total_violations: usize,
}

impl EnvelopeReport {
    pub fn check(&self, name: &str) -> Option<&EnvelopeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Check the global and post-reception envelopes of the trace's scheme.
///
/// Linear: `global` is `|z₁| ≤ J·e^{λ₁γ} + (M/λ₁)(e^{λ₁γ}−1)` and `jump` is
/// `|z₁(t_c⁺)| ≤ ρ₀·J`. Nonlinear: `global` is `|z| ≤ Υ(γ)`, `sampling` is
/// `|z(t_s^k)| ≤ Υ(0)` at every candidate preceded only by receptions that
/// met their contract, and `reception` is `|z(t_c⁺)| ≤ J`. Every bound gets
/// the one-step slack of its scheme. A run stopped by an envelope breach
/// counts one `sampling` violation.
pub fn verify_envelopes(trace: &SimTrace) -> EnvelopeReport {
    let checks = match &trace.info {
        SchemeInfo::Linear { cfg, .. } => {
            let slack = cfg.slack(trace.delta);
            let mut global = EnvelopeCheck::new("global", cfg.envelope(), slack);
            let mut jump = EnvelopeCheck::new("jump", cfg.jump_bound(), slack);
            trace.steps.iter().for_each(|r| global.observe(r.z));
            for ev in &trace.events {
                if let Some(z) = ev.z_before_jump {
                    global.observe(z);
                }
                if let Some(z) = ev.z_after_jump {
                    jump.observe(z);
                }
            }
            vec![global, jump]
        }
        SchemeInfo::Nonlinear { cfg, period_steps, .. } => {
            let slack = cfg.slack(trace.delta);
            let mut global = EnvelopeCheck::new("global", cfg.upsilon(cfg.gamma, cfg.m), slack);
            let mut sampling = EnvelopeCheck::new("sampling", cfg.upsilon(0.0, cfg.m), slack);
            let mut reception = EnvelopeCheck::new("reception", cfg.j, slack);
            trace.steps.iter().for_each(|r| global.observe(r.z));
            let mut deliveries: Vec<(u64, f64)> =
                trace.events.iter().filter_map(|e| Some((e.deliver_step?, e.z_after_jump?))).collect();
            deliveries.sort_by_key(|d| d.0);
            for ev in &trace.events {
                if let Some(z) = ev.z_before_jump {
                    global.observe(z);
                }
            }
            let mut contract_held = true;
            let mut next = 0;
            for r in &trace.steps {
                while next < deliveries.len() && deliveries[next].0 <= r.step {
                    let z = deliveries[next].1;
                    let before = reception.violations;
                    reception.observe(z);
                    contract_held &= reception.violations == before;
                    next += 1;
                }
                if r.step % period_steps == 0 && contract_held {
                    sampling.observe(r.z);
                }
            }
            if matches!(&trace.abort, Some(a) if a.kind == AbortKind::EnvelopeBreach) {
                sampling.violations += 1;
                sampling.max_excess = sampling.max_excess.max(f64::INFINITY);
            }
            vec![global, sampling, reception]
        }
    };
    let total_violations = checks.iter().map(|c| c.violations).sum();
    EnvelopeReport { checks, total_violations }
}

/// Instrumented check of the inter-reception envelope
/// `|z(t)| ≤ Υ_w(t − t_s^k)` on `[t̄^k, t_c^k)`, where `t̄^k` is the first step
/// after both the previous candidate and the previous reception at which
/// `|z| ≥ J`, and `Υ_w` uses the running supremum of `|w|`.
pub fn inter_reception_check(trace: &SimTrace) -> Option<EnvelopeCheck> {
    let SchemeInfo::Nonlinear { cfg, period_steps, .. } = &trace.info else {
        return None;
    };
    let mut check = EnvelopeCheck::new("inter-reception", f64::NAN, cfg.slack(trace.delta));
    let mut sup_w = Vec::with_capacity(trace.steps.len());
    let mut running: f64 = 0.0;
    for r in &trace.steps {
        running = running.max(r.w[0].abs());
        sup_w.push(running);
    }
    let mut last_reception = 0u64;
    for ev in &trace.events {
        let Some(tc) = ev.deliver_step else { break };
        let ts = ev.send_step;
        let start = last_reception.max(ts.saturating_sub(*period_steps));
        let lo = if start == 0 { 0 } else { start + 1 };
        let first = (lo..=ts).find(|&s| trace.steps[s as usize].z.abs() >= cfg.j);
        if let Some(t_bar) = first {
            for s in t_bar..tc.min(trace.steps.len() as u64) {
                let r = &trace.steps[s as usize];
                let theta = (s as f64 - ts as f64) * trace.delta;
                let bound = cfg.upsilon(theta, sup_w[s as usize]);
                check.observe_against(r.z, bound);
            }
        }
        last_reception = tc;
    }
    Some(check)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZenoReport {
    pub intervals: usize,
    pub min_interval_steps: Option<u64>,
    pub required_steps: u64,
    pub violations: usize,
}

/// Every inter-send interval must be a whole number of steps no shorter than
/// `α+γ` (nonlinear) or than one step (linear).
pub fn zeno_check(trace: &SimTrace) -> ZenoReport {
    let required = match &trace.info {
        SchemeInfo::Nonlinear { period_steps, .. } => *period_steps,
        SchemeInfo::Linear { .. } => 1,
    };
    let mut steps: Vec<u64> = trace.events.iter().map(|e| e.send_step).collect();
    steps.sort_unstable();
    let gaps: Vec<u64> = steps.windows(2).map(|w| w[1] - w[0]).collect();
    ZenoReport {
        intervals: gaps.len(),
        min_interval_steps: gaps.iter().copied().min(),
        required_steps: required,
        violations: gaps.iter().filter(|&&g| g < required).count(),
    }
}

/// `sup |x|` over `t ≥ t0`, in the plant's first coordinate (scalar) or
/// angle (pendulum).
pub fn tail_sup(trace: &SimTrace, t0: f64) -> Option<f64> {
    let start = (t0 / trace.delta).ceil() as usize;
    let p = match &trace.info {
        SchemeInfo::Linear { p, .. } => Some(*p),
        SchemeInfo::Nonlinear { .. } => None,
    };
    trace.steps.get(start..).filter(|s| !s.is_empty()).map(|s| {
        s.iter()
            .map(|r| match p {
                Some(p) => (p[0][0] * r.x[0] + p[0][1] * r.x[1]).abs(),
                None => r.x[0].abs(),
            })
            .fold(0.0, f64::max)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interval_rate_example() {
        let packets = vec![(3u32, 0.11); 10];
        assert_abs_diff_eq!(rate_from_intervals(&packets).unwrap(), 30.0 / 1.1, epsilon = 1e-12);
    }

    #[test]
    fn periodic_sends_give_per_period_rate() {
        let sends: Vec<(u64, u32)> = (0..11).map(|k| (22 * k, 3)).collect();
        assert_abs_diff_eq!(rate_from_sends(&sends, 0.005).unwrap(), 3.0 / 0.11, epsilon = 1e-9);
    }

    #[test]
    fn too_few_sends() {
        assert_eq!(rate_from_sends(&[], 0.01), None);
        assert_eq!(rate_from_sends(&[(5, 3)], 0.01), None);
        assert_eq!(rate_from_intervals(&[]), None);
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(entropy_rate_linear(7.3198).unwrap(), 10.5602, epsilon = 1e-4);
        assert_abs_diff_eq!(entropy_rate_linear(std::f64::consts::LN_2).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(entropy_rate_linear(2.0 * std::f64::consts::LN_2).unwrap(), 2.0, epsilon = 1e-15);
        assert!(entropy_rate_linear(0.0).is_err());
        assert_eq!(NonlinearMap::Demo.entropy_lower_bound(), 1.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_is_permutation_stable(mut sends in prop::collection::vec((0u64..100_000, 1u32..16), 2..50), seed in any::<u64>()) {
                let a = rate_from_sends(&sends, 0.01);
                let n = sends.len();
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    sends.swap(i, (s >> 33) as usize % (i + 1));
                }
                prop_assert_eq!(a, rate_from_sends(&sends, 0.01));
            }

            #[test]
            fn pointwise_entropy_in_range(x in -100.0..100.0f64) {
                let h = NonlinearMap::Demo.state_derivative(x);
                prop_assert!((1.0..=3.0).contains(&h));
            }
        }
    }
}
