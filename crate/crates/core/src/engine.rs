//! Fixed-step closed-loop simulator.
//!
//! Each step `k` runs, in order:
//! 1. poll the channel and, on a delivery, decode and jump the estimate;
//! 2. compute the input from the estimate;
//! 3. let the sensor evaluate its trigger and send if it fires;
//! 4. sample the disturbance;
//! 5. advance the plant and the estimate by one Euler step.
//!
//! The controller and the sensor share one estimate: the sensor learns each
//! reception time through the input it observes, so its copy never differs.

use serde::Serialize;

use crate::channel::{steps_ceil, Channel, ChannelConfig, Packet};
use crate::error::{Error, Result};
use crate::linear_etc::{LinearScheme, LinearSchemeState, LinearTriggerConfig};
use crate::nonlinear_etc::{nonlinear_packet_size, NonlinearScheme, NonlinearSchemeState, NonlinearTriggerConfig};
use crate::plants::{
    linearize_and_diagonalize, step_dynamics, DisturbanceSource, LinearDiagonalSystem, PendulumTruth, PlantModel,
    ScalarNonlinearPlant, State,
};
use crate::scenario::{PlantSection, Scenario, SchemeKind, SchemeSection, Threshold};

/// States whose magnitude exceeds this abort the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Stream indices for [`derive_seed`].
pub const DISTURBANCE_STREAM: u64 = 1;
pub const CHANNEL_STREAM: u64 = 2;

/// Split a master seed into independent per-stream seeds (SplitMix64 of
/// `master + (stream+1)·φ`).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scheme parameters as deployed, carried with every trace so that metrics
/// can recompute bounds from configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SchemeInfo {
    Linear {
        #[serde(skip)]
        cfg: LinearTriggerConfig,
        j: f64,
        g_bits: u32,
        gamma_steps: u64,
        min_delay_steps: u64,
        lambda1: f64,
        /// Diagonal-to-physical transform, row major.
        p: [[f64; 2]; 2],
    },
    Nonlinear {
        #[serde(skip)]
        cfg: NonlinearTriggerConfig,
        j: f64,
        alpha: f64,
        g_bits: u32,
        exact_bits: f64,
        gamma_steps: u64,
        period_steps: u64,
    },
}

impl SchemeInfo {
    pub fn kind(&self) -> SchemeKind {
        match self {
            SchemeInfo::Linear { .. } => SchemeKind::Linear,
            SchemeInfo::Nonlinear { .. } => SchemeKind::Nonlinear,
        }
    }

    pub fn g_bits(&self) -> u32 {
        match self {
            SchemeInfo::Linear { g_bits, .. } | SchemeInfo::Nonlinear { g_bits, .. } => *g_bits,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            SchemeInfo::Linear { j, .. } | SchemeInfo::Nonlinear { j, .. } => *j,
        }
    }

    pub fn gamma_steps(&self) -> u64 {
        match self {
            SchemeInfo::Linear { gamma_steps, .. } | SchemeInfo::Nonlinear { gamma_steps, .. } => *gamma_steps,
        }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // one per run
enum Loop {
    Linear { sys: LinearDiagonalSystem, model: PlantModel, scheme: LinearScheme },
    Nonlinear { plant: ScalarNonlinearPlant, scheme: NonlinearScheme, gain: f64 },
}

/// A validated scenario with all derived objects built.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub steps: u64,
    pub channel: ChannelConfig,
    pub info: SchemeInfo,
    inner: Loop,
}

impl Prepared {
    pub fn g_bits(&self) -> u32 {
        self.info.g_bits()
    }

    pub fn diagonal_system(&self) -> Option<&LinearDiagonalSystem> {
        match &self.inner {
            Loop::Linear { sys, .. } => Some(sys),
            Loop::Nonlinear { .. } => None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be > 0, got {v}")))
    }
}

/// Validate a scenario and build the plant, channel and scheme.
pub fn prepare(sc: &Scenario) -> Result<Prepared> {
    positive("delta_s", sc.delta_s)?;
    positive("horizon_s", sc.horizon_s)?;
    let raw_steps = sc.horizon_s / sc.delta_s;
    let steps = raw_steps.round();
    if (raw_steps - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::config(format!("horizon {} s is not a multiple of delta {} s", sc.horizon_s, sc.delta_s)));
    }
    let steps = steps as u64;
    if !(sc.disturbance.bound.is_finite() && sc.disturbance.bound >= 0.0) {
        return Err(Error::config(format!("disturbance bound must be ≥ 0, got {}", sc.disturbance.bound)));
    }
    let channel = ChannelConfig::from_seconds(
        sc.channel.gamma_s,
        sc.delta_s,
        sc.channel.min_delay_steps,
        sc.channel.seed.unwrap_or_else(|| derive_seed(sc.seed, CHANNEL_STREAM)),
        sc.channel.delay_law,
    )?;
    let gamma = channel.gamma();

    match (&sc.plant, &sc.scheme) {
        (
            PlantSection::PendulumDiagonal { .. } | PlantSection::PendulumNonlinear { .. },
            SchemeSection::Linear(opts),
        ) => {
            let params = sc.plant.pendulum_params().expect("pendulum plant");
            let m = opts.disturbance_bound.unwrap_or(sc.disturbance.bound);
            let sys = linearize_and_diagonalize(&params)?.with_disturbance_bound(m).with_gain(opts.gain);
            let cfg = match opts.threshold()? {
                Threshold::Value(j) => {
                    LinearTriggerConfig { j, rho0: opts.rho0, b: opts.b, gamma, lambda1: sys.lambda1, m }
                }
                Threshold::Margin(margin) => {
                    LinearTriggerConfig::from_margin(sys.lambda1, m, opts.rho0, opts.b, gamma, margin)
                }
            };
            let scheme = LinearScheme::new(
                cfg,
                opts.g_bits,
                channel.gamma_steps,
                sc.delta_s,
                channel.min_delay_steps,
                sys.b[0],
            )?;
            let x0 = sys.to_diagonal([sc.initial.phi_rad, sc.initial.phi_dot_rad_s]);
            if !(sc.initial.z.abs() <= cfg.j) {
                return Err(Error::infeasible(format!(
                    "|z₁(0)| ≤ J violated: |z₁(0)| = {} > J = {}",
                    sc.initial.z.abs(),
                    cfg.j
                )));
            }
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("initial state is not finite"));
            }
            let model = match sc.plant {
                PlantSection::PendulumNonlinear { .. } => PlantModel::Pendulum(PendulumTruth::new(&sys)),
                _ => PlantModel::Diagonal(sys.clone()),
            };
            let info = SchemeInfo::Linear {
                cfg,
                j: cfg.j,
                g_bits: scheme.g_bits,
                gamma_steps: channel.gamma_steps,
                min_delay_steps: channel.min_delay_steps,
                lambda1: sys.lambda1,
                p: sys.p,
            };
            Ok(Prepared { scenario: sc.clone(), steps, channel, info, inner: Loop::Linear { sys, model, scheme } })
        }
        (PlantSection::ScalarDemo, SchemeSection::Nonlinear(opts)) => {
            let plant = ScalarNonlinearPlant::demo(sc.disturbance.bound);
            if !(opts.alpha_s >= 0.0) {
                return Err(Error::config(format!("alpha_s must be ≥ 0, got {}", opts.alpha_s)));
            }
            let period_steps = steps_ceil(gamma + opts.alpha_s, sc.delta_s).max(1);
            let alpha = period_steps as f64 * sc.delta_s - gamma;
            if (alpha - opts.alpha_s).abs() > 1e-9 {
                log::warn!(
                    "alpha = {} s rounded up to {alpha} s so that alpha + gamma is a multiple of delta",
                    opts.alpha_s
                );
            }
            let cfg = match opts.threshold()? {
                Threshold::Value(j) => {
                    NonlinearTriggerConfig { j, alpha, gamma, lx: plant.lx, lw: plant.lw, m: plant.m }
                }
                Threshold::Margin(margin) => NonlinearTriggerConfig::from_margin(&plant, alpha, gamma, margin),
            };
            let size = nonlinear_packet_size(&cfg)?;
            let scheme = NonlinearScheme::new(cfg, plant, opts.g_bits, sc.delta_s)?;
            if !(sc.initial.z.abs() < cfg.j) {
                return Err(Error::infeasible(format!(
                    "|z(0)| < J violated: |z(0)| = {} ≥ J = {}",
                    sc.initial.z.abs(),
                    cfg.j
                )));
            }
            let info = SchemeInfo::Nonlinear {
                cfg,
                j: cfg.j,
                alpha,
                g_bits: scheme.g_bits,
                exact_bits: size.exact_bits,
                gamma_steps: channel.gamma_steps,
                period_steps: scheme.period_steps,
            };
            Ok(Prepared {
                scenario: sc.clone(),
                steps,
                channel,
                info,
                inner: Loop::Nonlinear { plant, scheme, gain: opts.gain },
            })
        }
        (plant, scheme) => {
            Err(Error::config(format!("plant {plant:?} cannot be driven by a {:?} scheme", scheme.kind())))
        }
    }
}

/// State of the loop at the start of one step, after any reception.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub t: f64,
    pub x: State,
    pub xhat: State,
    /// Estimation error on the transmitted coordinate.
    pub z: f64,
    pub u: f64,
    pub w: State,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketEvent {
    pub seq: u64,
    pub send_step: u64,
    pub deliver_step: Option<u64>,
    pub g_bits: u32,
    pub payload: String,
    pub z_at_send: f64,
    pub z_before_jump: Option<f64>,
    pub z_after_jump: Option<f64>,
    pub decoded: Option<f64>,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortKind {
    Divergence,
    EnvelopeBreach,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbortReport {
    pub kind: AbortKind,
    pub step: u64,
    pub t: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub scenario: String,
    pub seed: u64,
    pub delta: f64,
    pub horizon_steps: u64,
    pub info: SchemeInfo,
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
    #[serde(skip)]
    pub events: Vec<PacketEvent>,
    /// Set when the run stopped early; `steps` then ends at `abort.step`.
    pub abort: Option<AbortReport>,
}

impl SimTrace {
    pub fn kind(&self) -> SchemeKind {
        self.info.kind()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.abort, Some(AbortReport { kind: AbortKind::Divergence, .. }))
    }

    pub fn time(&self, step: u64) -> f64 {
        step as f64 * self.delta
    }
}

pub fn run(sc: &Scenario) -> Result<SimTrace> {
    run_prepared(&prepare(sc)?)
}

pub fn run_prepared(p: &Prepared) -> Result<SimTrace> {
    let sc = &p.scenario;
    let mut trace = SimTrace {
        scenario: sc.name.clone(),
        seed: sc.seed,
        delta: sc.delta_s,
        horizon_steps: p.steps,
        info: p.info.clone(),
        steps: Vec::with_capacity(p.steps as usize),
        events: Vec::new(),
        abort: None,
    };
    let mut channel = Channel::new(p.channel)?;
    let mut noise =
        DisturbanceSource::new(sc.disturbance.bound, sc.disturbance.law, derive_seed(sc.seed, DISTURBANCE_STREAM))?;
    let delta = sc.delta_s;
    let abort = |kind, step: u64, detail: String| AbortReport { kind, step, t: step as f64 * delta, detail };

    match &p.inner {
        Loop::Linear { sys, model, scheme } => {
            let mut x = sys.to_diagonal([sc.initial.phi_rad, sc.initial.phi_dot_rad_s]);
            let mut st = LinearSchemeState { xhat1: x[0] - sc.initial.z, ..Default::default() };
            let mut xhat2 = x[1];
            let truth = matches!(model, PlantModel::Pendulum(_));
            for k in 0..p.steps {
                if let Some(f) = channel.poll(k) {
                    let z_before = x[0] - st.xhat1;
                    let jump = scheme.decode_and_jump(&mut st, &f.packet.payload, k)?;
                    let ev = &mut trace.events[f.packet.seq as usize];
                    ev.deliver_step = Some(k);
                    ev.z_before_jump = Some(z_before);
                    ev.z_after_jump = Some(x[0] - st.xhat1);
                    ev.decoded = Some(jump.zbar);
                    ev.ambiguous = jump.ambiguous;
                }
                let xhat = [st.xhat1, xhat2];
                let u = sys.feedback(xhat);
                let z = x[0] - st.xhat1;
                if scheme.check_trigger(z, &st) {
                    let seq = st.next_seq;
                    let payload = scheme.on_trigger(&mut st, k, z)?;
                    channel.send(Packet { seq, payload, send_step: k })?;
                    trace.events.push(PacketEvent {
                        seq,
                        send_step: k,
                        deliver_step: None,
                        g_bits: payload.len(),
                        payload: payload.to_string(),
                        z_at_send: z,
                        z_before_jump: None,
                        z_after_jump: None,
                        decoded: None,
                        ambiguous: false,
                    });
                }
                let w = if truth { [0.0, noise.sample()] } else { [noise.sample(), noise.sample()] };
                trace.steps.push(StepRecord { step: k, t: k as f64 * delta, x, xhat, z, u, w });
                match step_dynamics(model, x, u, w, delta) {
                    Ok(next) if next.iter().all(|v| v.abs() <= DIVERGENCE_THRESHOLD) => x = next,
                    Ok(next) => {
                        trace.abort = Some(abort(
                            AbortKind::Divergence,
                            k + 1,
                            format!("|x| exceeded {DIVERGENCE_THRESHOLD:e}: {next:?}"),
                        ));
                        break;
                    }
                    Err(e) => {
                        trace.abort = Some(abort(AbortKind::Divergence, k + 1, e.to_string()));
                        break;
                    }
                }
                scheme.flow(&mut st, u);
                xhat2 += delta * (sys.lambda2 * xhat2 + sys.b[1] * u);
            }
        }
        Loop::Nonlinear { plant, scheme, gain } => {
            let model = PlantModel::Scalar(*plant);
            let mut x = sc.initial.x;
            let mut st = NonlinearSchemeState { xhat: sc.initial.x - sc.initial.z, ..Default::default() };
            for k in 0..p.steps {
                if let Some(f) = channel.poll(k) {
                    let z_before = x - st.xhat;
                    let zbar = scheme.reconstruct_and_jump(&mut st, &f.packet.payload, k)?;
                    let ev = &mut trace.events[f.packet.seq as usize];
                    ev.deliver_step = Some(k);
                    ev.z_before_jump = Some(z_before);
                    ev.z_after_jump = Some(x - st.xhat);
                    ev.decoded = Some(zbar);
                }
                let u = -gain * st.xhat;
                let z = x - st.xhat;
                let seq = st.next_seq;
                match scheme.on_candidate(&mut st, k, z) {
                    Ok(Some(payload)) => {
                        channel.send(Packet { seq, payload, send_step: k })?;
                        trace.events.push(PacketEvent {
                            seq,
                            send_step: k,
                            deliver_step: None,
                            g_bits: payload.len(),
                            payload: payload.to_string(),
                            z_at_send: z,
                            z_before_jump: None,
                            z_after_jump: None,
                            decoded: None,
                            ambiguous: false,
                        });
                    }
                    Ok(None) => {}
                    Err(Error::EnvelopeBreach(detail)) => {
                        trace.abort = Some(abort(AbortKind::EnvelopeBreach, k, detail));
                        break;
                    }
                    Err(e) => return Err(e),
                }
                scheme.record_input(&mut st, u);
                let w = [noise.sample(), 0.0];
                trace.steps.push(StepRecord {
                    step: k,
                    t: k as f64 * delta,
                    x: [x, 0.0],
                    xhat: [st.xhat, 0.0],
                    z,
                    u,
                    w,
                });
                match step_dynamics(&model, [x, 0.0], u, w, delta) {
                    Ok(next) if next[0].abs() <= DIVERGENCE_THRESHOLD => x = next[0],
                    Ok(next) => {
                        trace.abort = Some(abort(
                            AbortKind::Divergence,
                            k + 1,
                            format!("|x| exceeded {DIVERGENCE_THRESHOLD:e}: {}", next[0]),
                        ));
                        break;
                    }
                    Err(e) => {
                        trace.abort = Some(abort(AbortKind::Divergence, k + 1, e.to_string()));
                        break;
                    }
                }
                scheme.flow(&mut st, u);
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;

    fn scenario(name: &str) -> Scenario {
        builtin(name).unwrap().remove(0).1
    }

    #[test]
    fn seed_streams_differ() {
        assert_ne!(derive_seed(1, DISTURBANCE_STREAM), derive_seed(1, CHANNEL_STREAM));
        assert_ne!(derive_seed(1, DISTURBANCE_STREAM), derive_seed(2, DISTURBANCE_STREAM));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn linear_builtins_use_formula_sizes() {
        assert_eq!(prepare(&scenario("paper/linear-gamma2delta")).unwrap().g_bits(), 4);
        assert_eq!(prepare(&scenario("paper/linear-gamma5delta")).unwrap().g_bits(), 6);
    }

    #[test]
    fn nonlinear_builtins_use_computed_sizes() {
        let fig = builtin("paper/nonlinear-fig").unwrap();
        assert_eq!(prepare(&fig[0].1).unwrap().g_bits(), 3);
        assert_eq!(prepare(&fig[1].1).unwrap().g_bits(), 15);
    }

    #[test]
    fn horizon_must_be_grid_multiple() {
        let mut sc = scenario("paper/nonlinear-rate");
        sc.horizon_s = 1.0005;
        assert!(matches!(prepare(&sc), Err(Error::Config(_))));
    }

    #[test]
    fn initial_error_must_be_below_threshold() {
        let mut sc = scenario("paper/nonlinear-rate");
        sc.initial.z = 1.0;
        let err = prepare(&sc).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("|z(0)| < J")), "{err}");
    }

    #[test]
    fn mismatched_plant_and_scheme() {
        let mut sc = scenario("paper/nonlinear-rate");
        sc.plant = PlantSection::PendulumDiagonal { params: None };
        assert!(matches!(prepare(&sc), Err(Error::Config(_))));
    }

    #[test]
    fn alpha_is_snapped_to_grid() {
        let mut sc = scenario("paper/nonlinear-rate");
        sc.scheme = match sc.scheme {
            SchemeSection::Nonlinear(mut s) => {
                s.alpha_s = 0.013;
                SchemeSection::Nonlinear(s)
            }
            other => other,
        };
        let p = prepare(&sc).unwrap();
        match p.info {
            SchemeInfo::Nonlinear { alpha, period_steps, .. } => {
                assert_eq!(period_steps, 4);
                assert!((alpha - 0.02).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn quiet_stable_plant_never_triggers() {
        let mut sc = scenario("paper/nonlinear-rate");
        sc.disturbance.bound = 0.0;
        sc.initial.z = 0.0;
        sc.horizon_s = 10.0;
        let trace = run(&sc).unwrap();
        assert!(trace.events.is_empty());
        assert!(trace.steps.iter().all(|r| r.z == 0.0));
        assert_eq!(trace.steps.len(), 1000);
    }

    #[test]
    fn receptions_follow_sends_within_bound() {
        for name in ["paper/linear-gamma5delta", "paper/nonlinear-fig"] {
            let trace = run(&scenario(name)).unwrap();
            assert!(trace.abort.is_none());
            let g = trace.info.gamma_steps();
            for ev in &trace.events {
                if let Some(d) = ev.deliver_step {
                    assert!(d > ev.send_step && d - ev.send_step <= g);
                }
            }
            for pair in trace.events.windows(2) {
                assert!(pair[0].deliver_step.unwrap() <= pair[1].send_step);
            }
        }
    }

    #[test]
    fn unstable_loop_reports_divergence() {
        let mut sc = scenario("paper/nonlinear-rate");
        sc.scheme = match sc.scheme {
            SchemeSection::Nonlinear(mut s) => {
                s.gain = -5.0;
                SchemeSection::Nonlinear(s)
            }
            other => other,
        };
        let trace = run(&sc).unwrap();
        assert!(trace.diverged(), "{:?}", trace.abort);
        assert!((trace.steps.len() as u64) < trace.horizon_steps);
    }

    #[test]
    fn runs_are_deterministic() {
        let sc = scenario("paper/linear-gamma5delta");
        assert_eq!(run(&sc).unwrap(), run(&sc).unwrap());
        let mut other = sc.clone();
        other.seed += 1;
        assert_ne!(run(&sc).unwrap().steps, run(&other).unwrap().steps);
    }
}
