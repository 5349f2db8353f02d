//! Event-triggered transmission for the unstable coordinate of a linear
//! plant: threshold trigger, sign-plus-timing payload, decode and jump.

use crate::channel::Payload;
use crate::error::{Error, Result};

/// Trigger and coding parameters for the unstable mode `ż₁ = λ₁z₁ + w₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTriggerConfig {
    pub j: f64,
    pub rho0: f64,
    /// Safety factor on the timing resolution, `> 1`.
    pub b: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub m: f64,
}

impl LinearTriggerConfig {
    /// Threshold chosen as the feasibility floor plus `margin`.
    pub fn from_margin(lambda1: f64, m: f64, rho0: f64, b: f64, gamma: f64, margin: f64) -> Self {
        let mut cfg = Self { j: 0.0, rho0, b, gamma, lambda1, m };
        cfg.j = cfg.j_floor() + margin;
        cfg
    }

    /// `(M/(λ₁ρ₀))(e^{λ₁γ}−1)`; `J` must exceed it.
    pub fn j_floor(&self) -> f64 {
        self.m / (self.lambda1 * self.rho0) * (self.lambda1 * self.gamma).exp_m1()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1.is_finite() && self.lambda1 > 0.0) {
            return Err(Error::config(format!("lambda1 must be > 0, got {}", self.lambda1)));
        }
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) {
            return Err(Error::config(format!("rho0 must lie in (0, 1), got {}", self.rho0)));
        }
        if !(self.b > 1.0) {
            return Err(Error::config(format!("b must be > 1, got {}", self.b)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be ≥ 0, got {}", self.gamma)));
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return Err(Error::config(format!("M must be ≥ 0, got {}", self.m)));
        }
        let floor = self.j_floor();
        if !(self.j > floor) {
            return Err(Error::infeasible(format!("J > (M/(λ₁ρ₀))(e^{{λ₁γ}}−1) violated: J = {} ≤ {}", self.j, floor)));
        }
        Ok(())
    }

    /// `J·e^{λ₁γ} + (M/λ₁)(e^{λ₁γ}−1)`, the bound on `|z₁|` at all times.
    pub fn envelope(&self) -> f64 {
        let e = (self.lambda1 * self.gamma).exp();
        self.j * e + self.m / self.lambda1 * (e - 1.0)
    }

    /// `ρ₀·J`, the bound on `|z₁|` just after a reception.
    pub fn jump_bound(&self) -> f64 {
        self.rho0 * self.j
    }

    /// One-step discretisation slack `(e^{λ₁δ}−1)(J·e^{λ₁γ} + M/λ₁)`.
    pub fn slack(&self, delta: f64) -> f64 {
        (self.lambda1 * delta).exp_m1() * (self.j * (self.lambda1 * self.gamma).exp() + self.m / self.lambda1)
    }
}

/// Payload length (sign bit plus timing bits) that guarantees the jump
/// contract `|z₁(t_c⁺)| ≤ ρ₀J`.
pub fn linear_packet_size(cfg: &LinearTriggerConfig) -> Result<u32> {
    cfg.validate()?;
    let e = (cfg.lambda1 * cfg.gamma).exp();
    let inner = cfg.rho0 - cfg.m / (cfg.j * cfg.lambda1) * (e - 1.0);
    if !(inner > 0.0) {
        return Err(Error::infeasible(format!("ρ₀ > (M/(Jλ₁))(e^{{λ₁γ}}−1) violated: margin {inner}")));
    }
    if cfg.gamma == 0.0 {
        return Ok(1);
    }
    let arg = cfg.lambda1 * cfg.b * cfg.gamma / (inner / e).ln_1p();
    let raw = 1.0 + arg.log2();
    Ok(raw.ceil().max(1.0) as u32)
}

/// `(1/λ₁)·ln((J + M/λ₁)/(ρ₀J + M/λ₁))`, a lower bound on the time between
/// consecutive triggers.
pub fn min_intertrigger_bound(cfg: &LinearTriggerConfig) -> f64 {
    let c = cfg.m / cfg.lambda1;
    ((cfg.j + c) / (cfg.rho0 * cfg.j + c)).ln() / cfg.lambda1
}

/// Modulo-γ uniform quantizer of the send step, in exact step arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingQuantizer {
    pub gamma_steps: u64,
    /// Number of timing bits (`g − 1`).
    pub bits: u32,
}

/// Result of locating a send time from its timing cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingEstimate {
    /// Estimated send step; may fall halfway between steps.
    pub q_steps: f64,
    /// The cell occurred in more than one disjoint run inside the window.
    pub ambiguous: bool,
}

impl TimingQuantizer {
    pub fn new(gamma_steps: u64, bits: u32) -> Result<Self> {
        if gamma_steps == 0 {
            return Err(Error::config("timing quantizer needs gamma ≥ one step"));
        }
        if bits > 63 {
            return Err(Error::config(format!("{bits} timing bits exceed the 63-bit limit")));
        }
        Ok(Self { gamma_steps, bits })
    }

    pub fn cells(&self) -> u64 {
        1u64 << self.bits
    }

    /// `⌊(s mod G)·2^bits / G⌋`.
    pub fn cell_of_step(&self, step: u64) -> u64 {
        let r = (step % self.gamma_steps) as u128;
        ((r << self.bits) / self.gamma_steps as u128) as u64
    }

    /// Offsets within one period covered by `cell`, as an inclusive range
    /// (empty when the cell holds no grid point).
    fn cell_span(&self, cell: u64) -> Option<(u64, u64)> {
        let g = self.gamma_steps as u128;
        let n = 1u128 << self.bits;
        let lo = (cell as u128 * g).div_ceil(n);
        let hi = ((cell as u128 + 1) * g).div_ceil(n);
        if hi == 0 || lo > hi - 1 {
            None
        } else {
            Some((lo as u64, (hi - 1) as u64))
        }
    }

    /// Largest number of consecutive grid points sharing one cell.
    pub fn max_cell_span(&self) -> u64 {
        self.gamma_steps.div_ceil(self.cells())
    }

    /// Whether a window of `min_delay_steps` can see the same cell twice.
    pub fn may_be_ambiguous(&self, min_delay_steps: u64) -> bool {
        self.bits > 0 && self.max_cell_span() > min_delay_steps
    }

    /// Locate the send step for a packet in `cell` delivered at
    /// `deliver_step`, knowing the delay lies in `[min_delay, G]` and the
    /// send was not before `earliest`.
    pub fn decode(&self, cell: u64, deliver_step: u64, min_delay_steps: u64, earliest: u64) -> Result<TimingEstimate> {
        if cell >= self.cells() {
            return Err(Error::Decode(format!("cell {cell} out of range for {} bits", self.bits)));
        }
        let lo = deliver_step.saturating_sub(self.gamma_steps).max(earliest);
        let hi = deliver_step
            .checked_sub(min_delay_steps)
            .ok_or_else(|| Error::Decode(format!("delivery at step {deliver_step} precedes minimum delay")))?;
        if lo > hi {
            return Err(Error::Decode(format!("empty send window [{lo}, {hi}]")));
        }
        let (off_lo, off_hi) =
            self.cell_span(cell).ok_or_else(|| Error::Decode(format!("cell {cell} holds no grid point")))?;
        let g = self.gamma_steps;
        let mut runs: Vec<(u64, u64)> = Vec::new();
        for period in lo / g..=hi / g {
            let a = (period * g + off_lo).max(lo);
            let b = (period * g + off_hi).min(hi);
            if a > b {
                continue;
            }
            match runs.last_mut() {
                Some(last) if last.1 + 1 == a => last.1 = b,
                _ => runs.push((a, b)),
            }
        }
        let best = runs
            .iter()
            .copied()
            .max_by_key(|&(a, b)| (b - a, b))
            .ok_or_else(|| Error::Decode(format!("cell {cell} inconsistent with window [{lo}, {hi}]")))?;
        Ok(TimingEstimate { q_steps: (best.0 + best.1) as f64 / 2.0, ambiguous: runs.len() > 1 })
    }
}

/// Sign bit (1 for non-negative) followed by the timing cell of `send_step`.
pub fn encode_timing(send_step: u64, positive: bool, quantizer: &TimingQuantizer) -> Payload {
    let sign = u64::from(positive);
    let bits = (sign << quantizer.bits) | quantizer.cell_of_step(send_step);
    Payload::new(bits, quantizer.bits + 1).expect("timing payload fits")
}

/// Split a payload into `(positive, cell)`.
pub fn split_timing(payload: &Payload, quantizer: &TimingQuantizer) -> Result<(bool, u64)> {
    if payload.len() != quantizer.bits + 1 {
        return Err(Error::Decode(format!("payload has {} bits, expected {}", payload.len(), quantizer.bits + 1)));
    }
    let mask = if quantizer.bits == 0 { 0 } else { (1u64 << quantizer.bits) - 1 };
    Ok((payload.bit(0), payload.bits() & mask))
}

/// Controller estimate of the unstable coordinate and trigger bookkeeping.
/// The sensor keeps an identical copy through acknowledgement.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearSchemeState {
    pub xhat1: f64,
    /// `(send step, sign of z₁)` of the most recent trigger.
    pub last_trigger: Option<(u64, bool)>,
    pub awaiting_ack: bool,
    pub receptions: Vec<u64>,
    pub next_seq: u64,
}

pub fn check_trigger(z1: f64, cfg: &LinearTriggerConfig, state: &LinearSchemeState) -> bool {
    z1.abs() >= cfg.j && !state.awaiting_ack
}

/// Outcome of a reception.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub zbar: f64,
    pub q_steps: f64,
    pub ambiguous: bool,
}

/// The complete linear scheme: configuration, payload size and quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScheme {
    pub cfg: LinearTriggerConfig,
    pub g_bits: u32,
    pub quantizer: TimingQuantizer,
    pub delta: f64,
    pub min_delay_steps: u64,
    /// Input gain on the unstable coordinate.
    pub input_gain: f64,
}

impl LinearScheme {
    /// `g_bits = None` uses [`linear_packet_size`].
    pub fn new(
        cfg: LinearTriggerConfig,
        g_bits: Option<u32>,
        gamma_steps: u64,
        delta: f64,
        min_delay_steps: u64,
        input_gain: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let g = match g_bits {
            Some(0) => return Err(Error::config("linear payload needs at least the sign bit")),
            Some(g) => g,
            None => linear_packet_size(&cfg)?,
        };
        let quantizer = TimingQuantizer::new(gamma_steps, g - 1)?;
        if quantizer.may_be_ambiguous(min_delay_steps) {
            log::warn!(
                "timing cells span up to {} steps, wider than the minimum delay of {} steps; decode may be ambiguous",
                quantizer.max_cell_span(),
                min_delay_steps
            );
        }
        Ok(Self { cfg, g_bits: g, quantizer, delta, min_delay_steps, input_gain })
    }

    pub fn check_trigger(&self, z1: f64, state: &LinearSchemeState) -> bool {
        check_trigger(z1, &self.cfg, state)
    }

    /// Build the payload for a trigger at `send_step` and mark the state busy.
    pub fn on_trigger(&self, state: &mut LinearSchemeState, send_step: u64, z1: f64) -> Result<Payload> {
        if state.awaiting_ack {
            return Err(Error::Protocol("trigger while the previous packet is unacknowledged".into()));
        }
        let positive = z1 >= 0.0;
        state.last_trigger = Some((send_step, positive));
        state.awaiting_ack = true;
        state.next_seq += 1;
        Ok(encode_timing(send_step, positive, &self.quantizer))
    }

    /// Decode a packet delivered at `deliver_step` and apply the jump
    /// `x̂₁ ← x̂₁ + sign·J·e^{λ₁(t_c − q)}`.
    pub fn decode_and_jump(&self, state: &mut LinearSchemeState, payload: &Payload, deliver_step: u64) -> Result<Jump> {
        let (positive, cell) = split_timing(payload, &self.quantizer)?;
        let earliest = state.receptions.last().copied().unwrap_or(0);
        let est = self.quantizer.decode(cell, deliver_step, self.min_delay_steps, earliest)?;
        let elapsed = (deliver_step as f64 - est.q_steps) * self.delta;
        let magnitude = self.cfg.j * (self.cfg.lambda1 * elapsed).exp();
        let zbar = if positive { magnitude } else { -magnitude };
        state.xhat1 += zbar;
        state.awaiting_ack = false;
        state.receptions.push(deliver_step);
        Ok(Jump { zbar, q_steps: est.q_steps, ambiguous: est.ambiguous })
    }

    /// Euler step of the estimate between receptions.
    pub fn flow(&self, state: &mut LinearSchemeState, u: f64) {
        state.xhat1 += self.delta * (self.cfg.lambda1 * state.xhat1 + self.input_gain * u);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const LAMBDA: f64 = 7.3198;

    fn recipe(gamma: f64) -> LinearTriggerConfig {
        LinearTriggerConfig::from_margin(LAMBDA, 0.047, 0.01, 1.00001, gamma, 0.1)
    }

    #[test]
    fn packet_size_gamma_two_steps() {
        let cfg = recipe(0.006);
        assert_abs_diff_eq!(cfg.j, 0.128_828_42, epsilon = 1e-8);
        assert_eq!(linear_packet_size(&cfg).unwrap(), 4);
    }

    #[test]
    fn packet_size_gamma_five_steps() {
        let cfg = recipe(0.015);
        assert_abs_diff_eq!(cfg.j, 0.174_515_97, epsilon = 1e-8);
        assert_eq!(linear_packet_size(&cfg).unwrap(), 6);
        assert!(linear_packet_size(&cfg).unwrap() > linear_packet_size(&recipe(0.006)).unwrap());
    }

    #[test]
    fn packet_size_small_gamma_limit() {
        for gamma in [1e-3, 1e-6, 1e-9, 0.0] {
            let cfg = LinearTriggerConfig { j: 1.0, rho0: 0.01, b: 1.00001, gamma, lambda1: LAMBDA, m: 0.0 };
            assert_eq!(linear_packet_size(&cfg).unwrap(), 1);
        }
    }

    #[test]
    fn packet_size_infeasible() {
        let mut cfg = recipe(0.006);
        cfg.j = cfg.j_floor() * 0.5;
        let err = linear_packet_size(&cfg).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("J >")), "{err}");
    }

    #[test]
    fn trigger_rule() {
        let cfg = recipe(0.006);
        let mut st = LinearSchemeState::default();
        assert!(check_trigger(cfg.j, &cfg, &st));
        assert!(check_trigger(-cfg.j, &cfg, &st));
        assert!(!check_trigger(cfg.j * 0.999, &cfg, &st));
        st.awaiting_ack = true;
        assert!(!check_trigger(cfg.j * 2.0, &cfg, &st));
    }

    #[test]
    fn sign_only_payload() {
        let q = TimingQuantizer::new(2, 0).unwrap();
        assert_eq!(encode_timing(17, true, &q).to_string(), "1");
        assert_eq!(encode_timing(17, false, &q).to_string(), "0");
    }

    #[test]
    fn payload_at_period_boundary() {
        // t_s = 0.300 s with δ = 0.003 s is step 100; γ = 0.015 s is 5 steps.
        let q = TimingQuantizer::new(5, 3).unwrap();
        assert_eq!(encode_timing(100, true, &q).to_string(), "1000");
        assert_eq!(encode_timing(100, false, &q).to_string(), "0000");
    }

    #[test]
    fn cell_assignment_matches_float_reference() {
        let q = TimingQuantizer::new(5, 3).unwrap();
        let cells: Vec<u64> = (0..5).map(|s| q.cell_of_step(s)).collect();
        assert_eq!(cells, vec![0, 1, 3, 4, 6]);
    }

    #[test]
    fn decode_with_known_delay() {
        let delta = 0.003;
        let cfg = recipe(0.006);
        let scheme = LinearScheme::new(cfg, Some(1), 2, delta, 2, 0.2523).unwrap();
        let mut st = LinearSchemeState::default();
        let p = scheme.on_trigger(&mut st, 40, 0.2).unwrap();
        let jump = scheme.decode_and_jump(&mut st, &p, 42).unwrap();
        assert_eq!(jump.q_steps, 40.0);
        assert_abs_diff_eq!(jump.zbar, cfg.j * (2.0 * LAMBDA * delta).exp(), epsilon = 1e-15);
        assert!(!st.awaiting_ack);
        assert_eq!(st.receptions, vec![42]);
    }

    #[test]
    fn exact_decode_cancels_noise_free_error() {
        // With M = 0 the error grows as (1 + λδ)^d under Euler; the exact
        // exponential matches it up to O(δ²) per step.
        let delta = 0.003;
        let cfg = LinearTriggerConfig { m: 0.0, ..recipe(0.006) };
        let scheme = LinearScheme::new(cfg, Some(1), 2, delta, 2, 0.0).unwrap();
        let mut st = LinearSchemeState { xhat1: 0.0, ..Default::default() };
        let z0 = cfg.j;
        let x_true = z0 * (1.0 + LAMBDA * delta).powi(2);
        let p = scheme.on_trigger(&mut st, 0, z0).unwrap();
        scheme.flow(&mut st, 0.0);
        scheme.flow(&mut st, 0.0);
        scheme.decode_and_jump(&mut st, &p, 2).unwrap();
        let residual = (x_true - st.xhat1).abs();
        assert!(residual <= cfg.slack(delta), "{residual}");
        let exact = z0 * (2.0 * LAMBDA * delta).exp();
        assert_abs_diff_eq!(st.xhat1, exact, epsilon = 1e-15);
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let cfg = recipe(0.015);
        let scheme = LinearScheme::new(cfg, None, 5, 0.003, 2, 0.2523).unwrap();
        let mut st = LinearSchemeState::default();
        let bad = Payload::new(1, 2).unwrap();
        assert!(matches!(scheme.decode_and_jump(&mut st, &bad, 10), Err(Error::Decode(_))));
    }

    #[test]
    fn double_trigger_is_protocol_error() {
        let scheme = LinearScheme::new(recipe(0.015), None, 5, 0.003, 2, 0.2523).unwrap();
        let mut st = LinearSchemeState::default();
        scheme.on_trigger(&mut st, 0, 1.0).unwrap();
        assert!(matches!(scheme.on_trigger(&mut st, 1, 1.0), Err(Error::Protocol(_))));
    }

    #[test]
    fn ambiguity_is_flagged() {
        // 2 cells of 8 steps each, minimum delay 1: the window of 16 steps
        // sees the same cell in two periods.
        let q = TimingQuantizer::new(16, 1).unwrap();
        assert!(q.may_be_ambiguous(1));
        let est = q.decode(0, 100, 1, 0).unwrap();
        assert!(est.ambiguous);
        let q = TimingQuantizer::new(5, 5).unwrap();
        assert!(!q.may_be_ambiguous(2));
    }

    #[test]
    fn min_intertrigger_examples() {
        let cfg = LinearTriggerConfig { j: 0.1288, rho0: 0.01, b: 1.00001, gamma: 0.006, lambda1: LAMBDA, m: 0.047 };
        assert_abs_diff_eq!(min_intertrigger_bound(&cfg), 0.391_339_83, epsilon = 1e-8);
        let no_noise = LinearTriggerConfig { m: 0.0, ..cfg };
        assert_abs_diff_eq!(min_intertrigger_bound(&no_noise), 0.629_138_80, epsilon = 1e-8);
        let doubled = LinearTriggerConfig { j: 2.0 * cfg.j, ..no_noise };
        assert_abs_diff_eq!(min_intertrigger_bound(&doubled), min_intertrigger_bound(&no_noise), epsilon = 1e-15);
        let near_one = LinearTriggerConfig { rho0: 1.0 - 1e-12, ..no_noise };
        assert!(min_intertrigger_bound(&near_one) < 1e-9);
    }

    #[test]
    fn envelope_terms() {
        let cfg = recipe(0.006);
        let e = (LAMBDA * 0.006).exp();
        assert_abs_diff_eq!(cfg.envelope(), cfg.j * e + 0.047 / LAMBDA * (e - 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.jump_bound(), 0.01 * cfg.j, epsilon = 1e-15);
        assert!(cfg.slack(0.003) > 0.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn timing_round_trip(send in 0u64..1_000_000, g in 1u32..12, gamma_steps in 2u64..400, dmin_frac in 0.0..1.0f64, delay_frac in 0.0..1.0f64) {
                let q = TimingQuantizer::new(gamma_steps, g - 1).unwrap();
                let dmin = 1 + ((gamma_steps - 1) as f64 * dmin_frac) as u64;
                let d = dmin + ((gamma_steps - dmin) as f64 * delay_frac).round() as u64;
                let cell = q.cell_of_step(send);
                let est = q.decode(cell, send + d, dmin, 0).unwrap();
                if !q.may_be_ambiguous(dmin) {
                    prop_assert!(!est.ambiguous);
                    let err = (est.q_steps - send as f64).abs();
                    prop_assert!(err <= gamma_steps as f64 / 2f64.powi(g as i32) + 1e-12);
                }
            }

            #[test]
            fn packet_size_monotone_in_gamma(steps in 1u32..12) {
                let g1 = linear_packet_size(&recipe(0.003 * steps as f64)).unwrap();
                let g2 = linear_packet_size(&recipe(0.003 * (steps + 1) as f64)).unwrap();
                prop_assert!(g2 >= g1);
            }
        }
    }
}
