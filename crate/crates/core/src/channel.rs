//! Single-slot digital channel with bounded random delay.
//!
//! Time is counted in integer sampling steps. A packet sent at step `s`
//! arrives at `s + d` with `min_delay_steps ≤ d ≤ gamma_steps`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayLaw {
    /// Uniform over `{min_delay_steps, …, gamma_steps}`.
    #[default]
    Uniform,
    /// Always the full bound.
    WorstCase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub delta: f64,
    pub gamma_steps: u64,
    pub min_delay_steps: u64,
    pub seed: u64,
    pub law: DelayLaw,
}

/// Number of whole steps covering `duration`, rounding up.
pub fn steps_ceil(duration: f64, delta: f64) -> u64 {
    let raw = duration / delta;
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as u64
    } else {
        raw.ceil() as u64
    }
}

impl ChannelConfig {
    /// Build from a delay bound in seconds. A bound that is not a multiple
    /// of `delta` is rounded up with a warning.
    pub fn from_seconds(gamma: f64, delta: f64, min_delay_steps: u64, seed: u64, law: DelayLaw) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::config(format!("delta must be > 0, got {delta}")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::config(format!("gamma must be finite and ≥ 0, got {gamma}")));
        }
        let gamma_steps = steps_ceil(gamma, delta);
        let snapped = gamma_steps as f64 * delta;
        if (snapped - gamma).abs() > 1e-9 * gamma.max(delta) {
            log::warn!("gamma = {gamma} s is not a multiple of delta = {delta} s; rounded up to {snapped} s");
        }
        let cfg = Self { delta, gamma_steps, min_delay_steps, seed, law };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_delay_steps == 0 {
            return Err(Error::config("min_delay_steps must be ≥ 1"));
        }
        if self.gamma_steps < self.min_delay_steps {
            return Err(Error::infeasible(format!(
                "delay bound gamma ≥ min_delay_steps·delta violated: {} steps < {} steps",
                self.gamma_steps, self.min_delay_steps
            )));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_steps as f64 * self.delta
    }
}

/// A bit string of at most 64 bits, most significant bit sent first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Payload {
    bits: u64,
    len: u32,
}

impl Payload {
    pub const MAX_BITS: u32 = 64;

    pub fn new(bits: u64, len: u32) -> Result<Self> {
        if len > Self::MAX_BITS {
            return Err(Error::config(format!("payload of {len} bits exceeds {} bits", Self::MAX_BITS)));
        }
        if len < 64 && bits >> len != 0 {
            return Err(Error::Internal(format!("value {bits} does not fit in {len} bits")));
        }
        Ok(Self { bits, len })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit `i`, counting from the first bit sent.
    pub fn bit(&self, i: u32) -> bool {
        assert!(i < self.len);
        (self.bits >> (self.len - 1 - i)) & 1 == 1
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub seq: u64,
    pub payload: Payload,
    pub send_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InFlight {
    pub packet: Packet,
    pub deliver_step: u64,
}

impl InFlight {
    pub fn delay_steps(&self) -> u64 {
        self.deliver_step - self.packet.send_step
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    slot: Option<InFlight>,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed), slot: None })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn in_flight(&self) -> Option<&InFlight> {
        self.slot.as_ref()
    }

    pub fn send(&mut self, packet: Packet) -> Result<InFlight> {
        if let Some(busy) = &self.slot {
            return Err(Error::Protocol(format!(
                "packet {} sent at step {} while packet {} is in flight",
                packet.seq, packet.send_step, busy.packet.seq
            )));
        }
        let d = match self.cfg.law {
            DelayLaw::Uniform => self.rng.random_range(self.cfg.min_delay_steps..=self.cfg.gamma_steps),
            DelayLaw::WorstCase => self.cfg.gamma_steps,
        };
        let flight = InFlight { packet, deliver_step: packet.send_step + d };
        self.slot = Some(flight);
        Ok(flight)
    }

    /// Deliver the in-flight packet if `now_step` has reached its arrival step.
    pub fn poll(&mut self, now_step: u64) -> Option<InFlight> {
        match self.slot {
            Some(f) if now_step >= f.deliver_step => self.slot.take(),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(seq: u64, send_step: u64) -> Packet {
        Packet { seq, payload: Payload::new(0b101, 3).unwrap(), send_step }
    }

    #[test]
    fn singleton_support() {
        let cfg = ChannelConfig::from_seconds(0.006, 0.003, 2, 7, DelayLaw::Uniform).unwrap();
        let mut ch = Channel::new(cfg).unwrap();
        for k in 0..1000 {
            let f = ch.send(packet(k, 10 * k)).unwrap();
            assert_eq!(f.delay_steps(), 2);
            assert!(ch.poll(f.deliver_step).is_some());
        }
    }

    #[test]
    fn uniform_frequencies() {
        let cfg = ChannelConfig::from_seconds(0.015, 0.003, 2, 99, DelayLaw::Uniform).unwrap();
        assert_eq!(cfg.gamma_steps, 5);
        let mut ch = Channel::new(cfg).unwrap();
        let n = 100_000u64;
        let mut counts = [0u64; 6];
        for k in 0..n {
            let f = ch.send(packet(k, 0)).unwrap();
            counts[f.delay_steps() as usize] += 1;
            ch.poll(f.deliver_step).unwrap();
        }
        assert_eq!(counts[0] + counts[1], 0);
        let p = 0.25;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[2..] {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn delays_within_bound() {
        let cfg = ChannelConfig::from_seconds(0.1, 0.005, 1, 3, DelayLaw::Uniform).unwrap();
        let mut ch = Channel::new(cfg).unwrap();
        for k in 0..100_000 {
            let f = ch.send(packet(k, 0)).unwrap();
            let d = f.delay_steps() as f64 * cfg.delta;
            assert!(d > 0.0 && d <= 0.1 + 1e-12);
            ch.poll(f.deliver_step).unwrap();
        }
    }

    #[test]
    fn poll_boundary_inclusive() {
        let cfg = ChannelConfig::from_seconds(0.015, 0.003, 5, 0, DelayLaw::Uniform).unwrap();
        let mut ch = Channel::new(cfg).unwrap();
        let f = ch.send(packet(0, 4)).unwrap();
        assert_eq!(f.deliver_step, 9);
        assert!(ch.poll(8).is_none());
        assert_eq!(ch.poll(9).unwrap(), f);
        assert!(ch.poll(10).is_none());
    }

    #[test]
    fn send_while_in_flight_is_rejected() {
        let cfg = ChannelConfig::from_seconds(0.015, 0.003, 2, 0, DelayLaw::WorstCase).unwrap();
        let mut ch = Channel::new(cfg).unwrap();
        ch.send(packet(0, 0)).unwrap();
        assert!(matches!(ch.send(packet(1, 1)), Err(Error::Protocol(_))));
    }

    #[test]
    fn sequential_sends_arrive_in_order() {
        let cfg = ChannelConfig::from_seconds(0.015, 0.003, 2, 5, DelayLaw::Uniform).unwrap();
        let mut ch = Channel::new(cfg).unwrap();
        let mut seen = Vec::new();
        let mut step = 0;
        for seq in 0..50 {
            ch.send(packet(seq, step)).unwrap();
            loop {
                step += 1;
                if let Some(f) = ch.poll(step) {
                    assert_eq!(f.packet.payload, packet(seq, 0).payload);
                    seen.push(f.packet.seq);
                    break;
                }
            }
        }
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn gamma_rounded_up() {
        let cfg = ChannelConfig::from_seconds(0.0161, 0.003, 2, 0, DelayLaw::Uniform).unwrap();
        assert_eq!(cfg.gamma_steps, 6);
        let cfg = ChannelConfig::from_seconds(0.015000000001, 0.003, 2, 0, DelayLaw::Uniform).unwrap();
        assert_eq!(cfg.gamma_steps, 5);
    }

    #[test]
    fn gamma_below_minimum_delay() {
        let r = ChannelConfig::from_seconds(0.003, 0.003, 2, 0, DelayLaw::Uniform);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn payload_rendering() {
        assert_eq!(Payload::new(0b1000, 4).unwrap().to_string(), "1000");
        assert_eq!(Payload::new(1, 1).unwrap().to_string(), "1");
        assert_eq!(Payload::empty().to_string(), "");
        assert!(Payload::new(4, 2).is_err());
    }
}
