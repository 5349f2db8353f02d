//! Periodic event-triggered transmission for scalar nonlinear plants:
//! candidate instants every `α+γ`, interval quantization of the estimation
//! error, and reconstruction by forward integration at the controller.

use crate::channel::Payload;
use crate::error::{Error, Result};
use crate::plants::ScalarNonlinearPlant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearTriggerConfig {
    pub j: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lx: f64,
    pub lw: f64,
    pub m: f64,
}

impl NonlinearTriggerConfig {
    /// `J = (L_w·M/L_x)(e^{L_x·γ}−1) + margin`.
    pub fn from_margin(plant: &ScalarNonlinearPlant, alpha: f64, gamma: f64, margin: f64) -> Self {
        let mut cfg = Self { j: 0.0, alpha, gamma, lx: plant.lx, lw: plant.lw, m: plant.m };
        cfg.j = cfg.j_floor() + margin;
        cfg
    }

    /// `(L_w·M/L_x)(e^{L_x·γ}−1)`.
    pub fn j_floor(&self) -> f64 {
        self.lw * self.m / self.lx * (self.lx * self.gamma).exp_m1()
    }

    pub fn period(&self) -> f64 {
        self.alpha + self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lx > 0.0 && self.lw > 0.0) {
            return Err(Error::config(format!("L_x and L_w must be > 0, got {} and {}", self.lx, self.lw)));
        }
        if !(self.alpha >= 0.0 && self.gamma >= 0.0 && self.m >= 0.0) {
            return Err(Error::config(format!(
                "alpha, gamma and M must be ≥ 0, got {}, {}, {}",
                self.alpha, self.gamma, self.m
            )));
        }
        if !(self.j > 0.0) {
            return Err(Error::config(format!("J must be > 0, got {}", self.j)));
        }
        let floor = self.j_floor();
        if self.j < floor {
            return Err(Error::infeasible(format!(
                "J ≥ (L_w·M/L_x)(e^{{L_x·γ}}−1) violated: J = {} < {}",
                self.j, floor
            )));
        }
        Ok(())
    }

    /// `Υ(θ)` evaluated with disturbance bound `wbound`:
    /// `J·e^{L_x(α+γ+θ)} + (L_w·wbound/L_x)(e^{L_x(α+γ+θ)}−1)`.
    pub fn upsilon(&self, theta: f64, wbound: f64) -> f64 {
        let a = self.lx * (self.alpha + self.gamma + theta);
        self.j * a.exp() + self.lw * wbound / self.lx * a.exp_m1()
    }

    pub fn bounds(&self) -> UpsilonBounds {
        UpsilonBounds { upsilon0: self.upsilon(0.0, self.m), upsilon_gamma: self.upsilon(self.gamma, self.m) }
    }

    /// One-step discretisation slack `(e^{L_x·δ}−1)(Υ(γ) + L_w·M/L_x)`.
    pub fn slack(&self, delta: f64) -> f64 {
        (self.lx * delta).exp_m1() * (self.upsilon(self.gamma, self.m) + self.lw * self.m / self.lx)
    }
}

pub fn upsilon(cfg: &NonlinearTriggerConfig, theta: f64, wbound: f64) -> f64 {
    cfg.upsilon(theta, wbound)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsilonBounds {
    /// Bound on `|z|` at a trigger candidate.
    pub upsilon0: f64,
    /// Bound on `|z|` at all times.
    pub upsilon_gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketSize {
    /// `max{0, log₂(Υ(0)·e^{L_x·γ} / (J − (L_w·M/L_x)(e^{L_x·γ}−1)))}`.
    pub exact_bits: f64,
    /// `max{1, ⌈log₂(·)⌉}`.
    pub bits: u32,
}

pub fn nonlinear_packet_size(cfg: &NonlinearTriggerConfig) -> Result<PacketSize> {
    cfg.validate()?;
    let denom = cfg.j - cfg.j_floor();
    if !(denom > 0.0) {
        return Err(Error::infeasible(format!(
            "J > (L_w·M/L_x)(e^{{L_x·γ}}−1) violated (strict form needed for a finite payload): J = {}",
            cfg.j
        )));
    }
    let log_ratio = (cfg.upsilon(0.0, cfg.m) * (cfg.lx * cfg.gamma).exp() / denom).log2();
    Ok(PacketSize { exact_bits: log_ratio.max(0.0), bits: log_ratio.ceil().max(1.0) as u32 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBound {
    /// `g/(α+γ)` for the deployed payload.
    pub deployable: f64,
    /// Real-valued packet-size bound over `(α+γ)`.
    pub exact: f64,
}

pub fn rate_lower_bound(cfg: &NonlinearTriggerConfig, g_bits: u32) -> Result<RateBound> {
    let size = nonlinear_packet_size(cfg)?;
    let period = cfg.period();
    let per_period = |bits: f64| if bits == 0.0 { 0.0 } else { bits / period };
    if period <= 0.0 && (g_bits > 0 || size.exact_bits > 0.0) {
        return Err(Error::config("rate bound needs α+γ > 0"));
    }
    Ok(RateBound { deployable: per_period(g_bits as f64), exact: per_period(size.exact_bits) })
}

/// Uniform quantizer of `[−Υ(0), Υ(0)]` into `2^bits` cells, decoding to the
/// cell center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZQuantizer {
    pub half_range: f64,
    pub bits: u32,
}

impl ZQuantizer {
    pub fn new(half_range: f64, bits: u32) -> Result<Self> {
        if !(half_range.is_finite() && half_range > 0.0) {
            return Err(Error::config(format!("quantizer range must be > 0, got {half_range}")));
        }
        if bits > 63 {
            return Err(Error::config(format!("{bits} bits exceed the 63-bit limit")));
        }
        Ok(Self { half_range, bits })
    }

    pub fn cells(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.half_range / self.cells() as f64
    }

    pub fn encode(&self, z: f64) -> Result<u64> {
        if !(z.abs() <= self.half_range * (1.0 + 1e-12)) {
            return Err(Error::EnvelopeBreach(format!(
                "|z| = {} outside the quantizer range {}",
                z.abs(),
                self.half_range
            )));
        }
        let idx = ((z + self.half_range) / self.cell_width()).floor();
        Ok(idx.clamp(0.0, (self.cells() - 1) as f64) as u64)
    }

    pub fn decode(&self, cell: u64) -> Result<f64> {
        if cell >= self.cells() {
            return Err(Error::Decode(format!("cell {cell} out of range for {} bits", self.bits)));
        }
        Ok(-self.half_range + (cell as f64 + 0.5) * self.cell_width())
    }

    /// Worst-case decode error `Υ(0)/2^bits`.
    pub fn resolution(&self) -> f64 {
        self.half_range / self.cells() as f64
    }
}

pub fn encode_z(z: f64, quant: &ZQuantizer) -> Result<Payload> {
    Payload::new(quant.encode(z)?, quant.bits)
}

pub fn periodic_trigger(z: f64, cfg: &NonlinearTriggerConfig) -> bool {
    z.abs() >= cfg.j
}

/// Integrate `ẋ = f(x, u, 0)` from `x̄ = z̄ + x̂(t_s)` over the recorded
/// inputs, one Euler step per input sample.
pub fn reconstruct(zbar: f64, xhat_at_send: f64, inputs: &[f64], plant: &ScalarNonlinearPlant, delta: f64) -> f64 {
    inputs.iter().fold(zbar + xhat_at_send, |x, &u| x + delta * plant.rhs(x, u, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingSend {
    pub seq: u64,
    pub send_step: u64,
    pub xhat_at_send: f64,
    /// Inputs applied on `[t_s, t_c)`, one per step.
    pub inputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NonlinearSchemeState {
    pub xhat: f64,
    pub pending: Option<PendingSend>,
    pub next_seq: u64,
    pub receptions: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearScheme {
    pub cfg: NonlinearTriggerConfig,
    pub plant: ScalarNonlinearPlant,
    pub g_bits: u32,
    pub quantizer: ZQuantizer,
    pub delta: f64,
    pub period_steps: u64,
}

impl NonlinearScheme {
    /// `g_bits = None` uses the deployable size from [`nonlinear_packet_size`].
    /// `cfg.alpha + cfg.gamma` must be a whole number of steps.
    pub fn new(
        cfg: NonlinearTriggerConfig,
        plant: ScalarNonlinearPlant,
        g_bits: Option<u32>,
        delta: f64,
    ) -> Result<Self> {
        plant.validate()?;
        let size = nonlinear_packet_size(&cfg)?;
        let g = g_bits.unwrap_or(size.bits);
        let raw = cfg.period() / delta;
        let period_steps = raw.round();
        if period_steps < 1.0 || (raw - period_steps).abs() > 1e-9 * period_steps.max(1.0) {
            return Err(Error::config(format!(
                "trigger period α+γ = {} s is not a positive multiple of δ = {delta} s",
                cfg.period()
            )));
        }
        let quantizer = ZQuantizer::new(cfg.upsilon(0.0, cfg.m), g)?;
        Ok(Self { cfg, plant, g_bits: g, quantizer, delta, period_steps: period_steps as u64 })
    }

    pub fn is_candidate(&self, step: u64) -> bool {
        step.is_multiple_of(self.period_steps)
    }

    /// Evaluate the trigger at `step`; on a send, returns the payload and
    /// records the pending packet.
    pub fn on_candidate(&self, state: &mut NonlinearSchemeState, step: u64, z: f64) -> Result<Option<Payload>> {
        if !self.is_candidate(step) || !periodic_trigger(z, &self.cfg) {
            return Ok(None);
        }
        if state.pending.is_some() {
            return Err(Error::Protocol(format!("candidate at step {step} while a packet is in flight")));
        }
        let payload = encode_z(z, &self.quantizer)?;
        state.pending =
            Some(PendingSend { seq: state.next_seq, send_step: step, xhat_at_send: state.xhat, inputs: Vec::new() });
        state.next_seq += 1;
        Ok(Some(payload))
    }

    /// Append the input applied during the current step to the pending
    /// packet's history.
    pub fn record_input(&self, state: &mut NonlinearSchemeState, u: f64) {
        if let Some(p) = state.pending.as_mut() {
            p.inputs.push(u);
        }
    }

    /// Decode, reconstruct and assign `x̂(t_c⁺)`. Returns `z̄`.
    pub fn reconstruct_and_jump(
        &self,
        state: &mut NonlinearSchemeState,
        payload: &Payload,
        deliver_step: u64,
    ) -> Result<f64> {
        let pending = state.pending.take().ok_or_else(|| Error::Internal("reception with no pending packet".into()))?;
        let expected = deliver_step
            .checked_sub(pending.send_step)
            .ok_or_else(|| Error::Internal("delivery precedes send".into()))?;
        if pending.inputs.len() as u64 != expected {
            return Err(Error::Internal(format!(
                "input history holds {} samples, need {expected}",
                pending.inputs.len()
            )));
        }
        if payload.len() != self.g_bits {
            return Err(Error::Decode(format!("payload has {} bits, expected {}", payload.len(), self.g_bits)));
        }
        let zbar = self.quantizer.decode(payload.bits())?;
        state.xhat = reconstruct(zbar, pending.xhat_at_send, &pending.inputs, &self.plant, self.delta);
        state.receptions.push(deliver_step);
        Ok(zbar)
    }

    pub fn flow(&self, state: &mut NonlinearSchemeState, u: f64) {
        state.xhat += self.delta * self.plant.rhs(state.xhat, u, 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn demo_cfg(gamma: f64) -> NonlinearTriggerConfig {
        NonlinearTriggerConfig::from_margin(&ScalarNonlinearPlant::demo(0.1), 0.01, gamma, 0.01)
    }

    #[test]
    fn demo_packet_sizes() {
        let c1 = demo_cfg(0.1);
        assert_abs_diff_eq!(c1.j, 0.021_661_960_3, epsilon = 1e-10);
        let p1 = nonlinear_packet_size(&c1).unwrap();
        assert_eq!(p1.bits, 3);
        assert_abs_diff_eq!(p1.exact_bits, 2.542_615_9, epsilon = 1e-6);

        let c2 = demo_cfg(0.99);
        assert_abs_diff_eq!(c2.j, 0.626_397_32, epsilon = 1e-8);
        let p2 = nonlinear_packet_size(&c2).unwrap();
        assert_eq!(p2.bits, 15);
        assert_abs_diff_eq!(p2.exact_bits, 14.653_060_9, epsilon = 1e-6);
    }

    #[test]
    fn upsilon_values() {
        let cfg = demo_cfg(0.1);
        let b = cfg.bounds();
        assert_abs_diff_eq!(b.upsilon0, 0.043_163_367_3, epsilon = 1e-10);
        assert_abs_diff_eq!(b.upsilon_gamma, 0.069_926_411_7, epsilon = 1e-10);
        assert!(b.upsilon_gamma > b.upsilon0);
        let bare = NonlinearTriggerConfig { alpha: 0.0, ..cfg };
        assert_abs_diff_eq!(bare.upsilon(0.0, 0.0), bare.j * (3.0f64 * 0.1).exp(), epsilon = 1e-15);
    }

    #[test]
    fn noise_free_zero_delay_bound() {
        let cfg = NonlinearTriggerConfig { j: 0.3, alpha: 0.2, gamma: 0.0, lx: 3.0, lw: 1.0, m: 0.0 };
        let p = nonlinear_packet_size(&cfg).unwrap();
        assert_abs_diff_eq!(p.exact_bits, 3.0 * 0.2 / std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_threshold() {
        let mut cfg = demo_cfg(0.1);
        cfg.j = cfg.j_floor() * 0.9;
        assert!(matches!(nonlinear_packet_size(&cfg), Err(Error::Infeasible(_))));
        cfg.j = cfg.j_floor();
        assert!(cfg.validate().is_ok());
        assert!(matches!(nonlinear_packet_size(&cfg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn rate_bounds() {
        let cfg = demo_cfg(0.1);
        let r = rate_lower_bound(&cfg, 3).unwrap();
        assert_abs_diff_eq!(r.deployable, 27.272_727, epsilon = 1e-5);
        assert_abs_diff_eq!(r.exact, 23.114_690, epsilon = 1e-4);
        let cfg0 = NonlinearTriggerConfig { j: 10.0, alpha: 0.0, gamma: 0.0, lx: 3.0, lw: 1.0, m: 0.0 };
        let r0 = rate_lower_bound(&cfg0, 0).unwrap();
        assert_eq!(r0.deployable, 0.0);
        assert_eq!(r0.exact, 0.0);
    }

    #[test]
    fn quantizer_examples() {
        let q = ZQuantizer::new(0.043164, 3).unwrap();
        assert_eq!(q.encode(-0.043164).unwrap(), 0);
        assert_abs_diff_eq!(q.decode(0).unwrap(), -0.043164 + 0.043164 / 8.0, epsilon = 1e-15);
        for bits in 0..10 {
            let q = ZQuantizer::new(1.0, bits).unwrap();
            let zb = q.decode(q.encode(0.0).unwrap()).unwrap();
            assert!(zb.abs() <= q.resolution());
        }
        assert!(matches!(q.encode(0.05), Err(Error::EnvelopeBreach(_))));
        assert!(matches!(q.decode(8), Err(Error::Decode(_))));
    }

    #[test]
    fn zero_bit_quantizer_decodes_to_origin() {
        let q = ZQuantizer::new(2.0, 0).unwrap();
        assert_eq!(q.encode(1.9).unwrap(), 0);
        assert_eq!(q.decode(0).unwrap(), 0.0);
        assert_eq!(encode_z(-1.0, &q).unwrap().len(), 0);
    }

    #[test]
    fn empty_history_reconstruction() {
        let plant = ScalarNonlinearPlant::demo(0.1);
        assert_eq!(reconstruct(0.02, 0.5, &[], &plant, 0.005), 0.52);
    }

    #[test]
    fn noise_free_reception_within_gronwall_bound() {
        let plant = ScalarNonlinearPlant::demo(0.0);
        let delta = 0.005;
        let cfg = NonlinearTriggerConfig::from_margin(&plant, 0.01, 0.1, 0.01);
        let scheme = NonlinearScheme::new(cfg, plant, None, delta).unwrap();
        let mut st = NonlinearSchemeState { xhat: 0.5, ..Default::default() };
        let mut x = 0.5 + 0.9 * scheme.quantizer.half_range;
        let z0 = x - st.xhat;
        let payload = scheme.on_candidate(&mut st, 0, z0).unwrap().unwrap();
        for k in 0..20 {
            let u = -4.0 * st.xhat + 0.1 * k as f64;
            scheme.record_input(&mut st, u);
            x += delta * plant.rhs(x, u, 0.0);
            scheme.flow(&mut st, u);
        }
        scheme.reconstruct_and_jump(&mut st, &payload, 20).unwrap();
        let bound = scheme.quantizer.resolution() * (cfg.lx * cfg.gamma).exp();
        assert!((x - st.xhat).abs() <= bound, "{} > {bound}", (x - st.xhat).abs());
    }

    #[test]
    fn missing_history_is_internal_error() {
        let plant = ScalarNonlinearPlant::demo(0.1);
        let scheme = NonlinearScheme::new(demo_cfg(0.1), plant, None, 0.005).unwrap();
        let mut st = NonlinearSchemeState::default();
        let p = scheme.on_candidate(&mut st, 0, scheme.cfg.j).unwrap().unwrap();
        scheme.record_input(&mut st, 0.0);
        assert!(matches!(scheme.reconstruct_and_jump(&mut st, &p, 5), Err(Error::Internal(_))));
    }

    #[test]
    fn schedule_and_threshold() {
        let plant = ScalarNonlinearPlant::demo(0.1);
        let scheme = NonlinearScheme::new(demo_cfg(0.1), plant, None, 0.005).unwrap();
        assert_eq!(scheme.period_steps, 22);
        let j = scheme.cfg.j;
        let mut st = NonlinearSchemeState::default();
        assert!(scheme.on_candidate(&mut st, 1, 2.0 * j).unwrap().is_none());
        assert!(scheme.on_candidate(&mut st, 22, 0.5 * j).unwrap().is_none());
        assert!(scheme.on_candidate(&mut st, 22, j).unwrap().is_some());
    }

    #[test]
    fn period_must_sit_on_grid() {
        let plant = ScalarNonlinearPlant::demo(0.1);
        let cfg = NonlinearTriggerConfig { alpha: 0.0123, ..demo_cfg(0.1) };
        assert!(matches!(NonlinearScheme::new(cfg, plant, None, 0.005), Err(Error::Config(_))));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(10_000))]

            #[test]
            fn quantizer_round_trip(frac in -1.0..=1.0f64, bits in 0u32..20, range in 1e-3..1e3f64) {
                let q = ZQuantizer::new(range, bits).unwrap();
                let z = frac * range;
                let zb = q.decode(q.encode(z).unwrap()).unwrap();
                prop_assert!((z - zb).abs() <= q.resolution() * (1.0 + 1e-12));
            }
        }

        proptest! {
            #[test]
            fn upsilon_monotone(theta in 0.0..0.99f64, gamma in 0.01..0.99f64) {
                let cfg = demo_cfg(gamma);
                let t = theta.min(gamma);
                let u = cfg.upsilon(t, cfg.m);
                prop_assert!(cfg.upsilon(0.0, cfg.m) <= u && u <= cfg.upsilon(gamma, cfg.m));
                prop_assert!(cfg.upsilon(t, 0.5 * cfg.m) <= u);
            }
        }
    }
}
