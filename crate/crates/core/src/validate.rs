//! Invariant suite behind the `validate` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{Channel, ChannelConfig, DelayLaw, Packet, Payload};
use crate::engine::{prepare, run, SchemeInfo};
use crate::linear_etc::{linear_packet_size, LinearTriggerConfig, TimingQuantizer};
use crate::metrics::{inter_reception_check, rate_from_sends, tail_sup, verify_envelopes, zeno_check};
use crate::nonlinear_etc::{nonlinear_packet_size, NonlinearTriggerConfig, ZQuantizer};
use crate::output::trace_csv_bytes;
use crate::plants::{
    linearize_and_diagonalize, step_scalar_linear, DisturbanceLaw, DisturbanceSource, NonlinearMap, PendulumParams,
    ScalarNonlinearPlant, Stepper,
};
use crate::scenario::{builtins, Scenario};
use crate::sweep::{parse_grid, sweep_seeds, with_gamma};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult { name: name.to_string(), passed, detail: detail.into() }
}

/// Run every invariant. `runs` seeded simulations are used per built-in
/// scenario column.
pub fn validate(runs: usize, master_seed: u64) -> ValidationReport {
    let mut checks = vec![
        diagonalisation(),
        lipschitz(master_seed),
        stepper_agreement(master_seed),
        disturbance_bound(master_seed),
        channel_contract(master_seed),
        timing_round_trip(),
        z_round_trip(master_seed),
        packet_sizes(),
        upsilon_ordering(),
        rate_permutation(master_seed),
        exact_rate_monotone(),
    ];
    for b in builtins() {
        for (column, text) in b.columns {
            let label = format!("{}/{}", b.name, column);
            match Scenario::from_toml(text) {
                Ok(sc) => checks.extend(scenario_checks(&label, &sc, runs, master_seed)),
                Err(e) => checks.push(check(&label, false, e.to_string())),
            }
        }
    }
    ValidationReport { checks }
}

fn diagonalisation() -> CheckResult {
    match linearize_and_diagonalize(&PendulumParams::laboratory()) {
        Ok(sys) => {
            let err = sys.round_trip_error();
            let ok = err <= 1e-9 && sys.lambda1 > 0.0 && sys.lambda2 < 0.0;
            check(
                "diagonalisation round trip",
                ok,
                format!("relative error {err:e}, λ = ({}, {})", sys.lambda1, sys.lambda2),
            )
        }
        Err(e) => check("diagonalisation round trip", false, e.to_string()),
    }
}

fn lipschitz(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = NonlinearMap::Demo;
    let bad = (0..10_000)
        .filter(|_| {
            let (x, xh) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let (u, w): (f64, f64) = (rng.random_range(-100.0..100.0), rng.random_range(-1.0..1.0));
            (f.eval(x, u, w) - f.eval(xh, u, 0.0)).abs() > 3.0 * (x - xh).abs() + w.abs() + 1e-9
        })
        .count();
    check("demo map Lipschitz constants", bad == 0, format!("{bad} of 10000 triples violate"))
}

fn stepper_agreement(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let lambda = 7.3198;
    let bad = (0..10_000)
        .filter(|_| {
            let x: f64 = rng.random_range(-10.0..10.0);
            let d: f64 = rng.random_range(1e-4..0.01);
            let e = step_scalar_linear(lambda, 0.0, x, 0.0, 0.0, d, Stepper::Euler);
            let ex = step_scalar_linear(lambda, 0.0, x, 0.0, 0.0, d, Stepper::ExactExponential);
            (e - ex).abs() > lambda * lambda * d * d * x.abs() + 1e-15
        })
        .count();
    check("Euler and exact steps agree to second order", bad == 0, format!("{bad} of 10000 cases exceed λ²δ²|x|"))
}

fn disturbance_bound(seed: u64) -> CheckResult {
    let mut src = match DisturbanceSource::new(0.047, DisturbanceLaw::Uniform, seed) {
        Ok(s) => s,
        Err(e) => return check("disturbance bound", false, e.to_string()),
    };
    let max = (0..1_000_000).map(|_| src.sample().abs()).fold(0.0, f64::max);
    check("disturbance bound", max <= 0.047, format!("max |w| = {max} over 10^6 samples"))
}

fn channel_contract(seed: u64) -> CheckResult {
    let run = || -> crate::Result<(u64, u64)> {
        let cfg = ChannelConfig::from_seconds(0.015, 0.003, 2, seed, DelayLaw::Uniform)?;
        let mut ch = Channel::new(cfg)?;
        let (mut lo, mut hi) = (u64::MAX, 0);
        let mut step = 0;
        for seq in 0..100_000 {
            let payload = Payload::new(seq % 16, 4)?;
            ch.send(Packet { seq, payload, send_step: step })?;
            if ch.send(Packet { seq, payload, send_step: step }).is_ok() {
                return Err(crate::Error::Internal("second send accepted while in flight".into()));
            }
            let f = loop {
                step += 1;
                if let Some(f) = ch.poll(step) {
                    break f;
                }
            };
            if f.packet.seq != seq || f.packet.payload != payload {
                return Err(crate::Error::Internal(format!("packet {seq} altered or reordered")));
            }
            lo = lo.min(f.delay_steps());
            hi = hi.max(f.delay_steps());
        }
        Ok((lo, hi))
    };
    match run() {
        Ok((lo, hi)) => {
            check("channel delay bound and ordering", lo >= 2 && hi <= 5, format!("delays in [{lo}, {hi}] steps"))
        }
        Err(e) => check("channel delay bound and ordering", false, e.to_string()),
    }
}

/// Exhaustive send-step grid of 2^16 points for each payload size.
fn timing_round_trip() -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    for (gamma_steps, dmin) in [(2u64, 2u64), (5, 2), (64, 8), (1000, 1)] {
        for g in 1..=8u32 {
            let Ok(q) = TimingQuantizer::new(gamma_steps, g - 1) else { continue };
            if q.may_be_ambiguous(dmin) {
                continue;
            }
            let bound = gamma_steps as f64 / 2f64.powi(g as i32);
            for s in 0..(1u64 << 16) {
                let d = dmin + s % (gamma_steps - dmin + 1);
                match q.decode(q.cell_of_step(s), s + d, dmin, 0) {
                    Ok(est) => {
                        let err = (est.q_steps - s as f64).abs();
                        worst = worst.max(err / bound);
                        if err > bound + 1e-12 {
                            failures += 1;
                        }
                    }
                    Err(_) => failures += 1,
                }
            }
        }
    }
    check(
        "timing quantizer round trip",
        failures == 0,
        format!("{failures} failures; worst error / (γ/2^g) = {worst:.3}"),
    )
}

fn z_round_trip(seed: u64) -> CheckResult {
    let mut failures = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    for bits in [0u32, 1, 3, 8, 15] {
        let range = rng.random_range(0.01..20.0);
        let Ok(q) = ZQuantizer::new(range, bits) else {
            failures += 1;
            continue;
        };
        let n = 1u64 << 16;
        for i in 0..=n {
            let z = -range + 2.0 * range * i as f64 / n as f64;
            match q.encode(z).and_then(|c| q.decode(c)) {
                Ok(zb) if (z - zb).abs() <= q.resolution() + 8.0 * f64::EPSILON * range => {}
                _ => failures += 1,
            }
        }
    }
    check("interval quantizer round trip", failures == 0, format!("{failures} failures over 5 × (2^16+1) grid points"))
}

fn packet_sizes() -> CheckResult {
    let lin = |gamma| linear_packet_size(&LinearTriggerConfig::from_margin(7.3198, 0.047, 0.01, 1.00001, gamma, 0.1));
    let plant = ScalarNonlinearPlant::demo(0.1);
    let nl =
        |gamma| nonlinear_packet_size(&NonlinearTriggerConfig::from_margin(&plant, 0.01, gamma, 0.01)).map(|p| p.bits);
    match (lin(0.006), lin(0.015), nl(0.1), nl(0.99)) {
        (Ok(a), Ok(b), Ok(c), Ok(d)) => {
            check("packet sizes", (a, b, c, d) == (4, 6, 3, 15), format!("linear {a}, {b}; nonlinear {c}, {d}"))
        }
        other => check("packet sizes", false, format!("{other:?}")),
    }
}

fn upsilon_ordering() -> CheckResult {
    let plant = ScalarNonlinearPlant::demo(0.1);
    let bad = (1..=99)
        .filter(|&i| {
            let gamma = i as f64 / 100.0;
            let cfg = NonlinearTriggerConfig::from_margin(&plant, 0.01, gamma, 0.01);
            !(0..=10).all(|k| {
                let theta = if k == 10 { gamma } else { gamma * k as f64 / 10.0 };
                let u = cfg.upsilon(theta, cfg.m);
                cfg.upsilon(0.0, cfg.m) <= u && u <= cfg.upsilon(gamma, cfg.m)
            })
        })
        .count();
    check("envelope ordering Υ(0) ≤ Υ(θ) ≤ Υ(γ)", bad == 0, format!("{bad} delay bounds out of order"))
}

fn rate_permutation(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    let bad = (0..1000)
        .filter(|_| {
            let mut sends: Vec<(u64, u32)> =
                (0..20).map(|_| (rng.random_range(0..10_000), rng.random_range(1..16))).collect();
            let a = rate_from_sends(&sends, 0.01);
            sends.reverse();
            sends.rotate_left(7);
            a != rate_from_sends(&sends, 0.01)
        })
        .count();
    check("rate is permutation stable", bad == 0, format!("{bad} of 1000 shuffles changed the rate"))
}

/// The real-valued packet-size bound per period grows with the delay bound
/// on the rate-sweep grid.
fn exact_rate_monotone() -> CheckResult {
    let name = "real-valued rate bound increases with delay bound";
    let tpl = match crate::scenario::builtin("paper/nonlinear-rate") {
        Ok(mut v) => v.remove(0).1,
        Err(e) => return check(name, false, e.to_string()),
    };
    let grid = parse_grid("0.02:0.99:20").expect("static grid");
    let mut rates = Vec::new();
    for g in grid {
        match prepare(&with_gamma(&tpl, g)) {
            Ok(p) => {
                if let SchemeInfo::Nonlinear { exact_bits, period_steps, .. } = p.info {
                    rates.push(exact_bits / (period_steps as f64 * p.scenario.delta_s));
                }
            }
            Err(e) => return check(name, false, e.to_string()),
        }
    }
    let ok = rates.windows(2).all(|w| w[1] > w[0]);
    check(name, ok, format!("{:.3} → {:.3} bits/s", rates[0], rates[rates.len() - 1]))
}

fn scenario_checks(label: &str, sc: &Scenario, runs: usize, master: u64) -> Vec<CheckResult> {
    let seeds = sweep_seeds(master, runs);
    let results: Vec<_> = seeds
        .par_iter()
        .map(|&seed| {
            let mut s = sc.clone();
            s.seed = seed;
            run(&s).map(|t| {
                let env = verify_envelopes(&t);
                let inter = inter_reception_check(&t).map_or(0, |c| c.violations);
                let tail = match t.info {
                    SchemeInfo::Linear { .. } => tail_sup(&t, 2.0),
                    SchemeInfo::Nonlinear { .. } => None,
                };
                (t.abort.is_some(), env.total_violations, zeno_check(&t).violations, inter, tail)
            })
        })
        .collect();
    let mut out = Vec::new();
    let mut aborted = 0;
    let mut envelope = 0;
    let mut zeno = 0;
    let mut inter = 0;
    let mut tail: f64 = 0.0;
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok((a, e, z, l, t)) => {
                aborted += usize::from(a);
                envelope += e;
                zeno += z;
                inter += l;
                tail = tail.max(t.unwrap_or(0.0));
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        out.push(check(&format!("{label}: runs complete"), false, errors.join("; ")));
        return out;
    }
    out.push(check(&format!("{label}: no aborts"), aborted == 0, format!("{aborted} of {runs} runs aborted")));
    out.push(check(&format!("{label}: envelopes"), envelope == 0, format!("{envelope} violations over {runs} runs")));
    out.push(check(&format!("{label}: inter-send intervals"), zeno == 0, format!("{zeno} short intervals")));
    if sc.scheme.kind() == crate::scenario::SchemeKind::Nonlinear {
        out.push(check(&format!("{label}: inter-reception envelope"), inter == 0, format!("{inter} violations")));
    } else {
        out.push(check(&format!("{label}: angle after 2 s"), tail < 0.2, format!("max |φ| = {tail:.4} rad")));
    }
    let det = (|| -> crate::Result<bool> {
        let a = trace_csv_bytes(&run(sc)?)?;
        let b = trace_csv_bytes(&run(sc)?)?;
        Ok(a == b)
    })();
    out.push(match det {
        Ok(same) => check(&format!("{label}: determinism"), same, if same { "identical" } else { "traces differ" }),
        Err(e) => check(&format!("{label}: determinism"), false, e.to_string()),
    });
    out
}
