//! CSV and JSON artifacts.
//!
//! Trace CSV, one row per step:
//! - linear: `step,t,x1,x2,xhat1,xhat2,z1,u,w1,w2,phi,phi_dot`
//! - nonlinear: `step,t,x,xhat,z,u,w`
//!
//! Events CSV, one row per packet:
//! `seq,t_send,t_deliver,g_bits,payload,z_at_send,z_before_jump,z_after_jump`
//! (delivery columns are empty for a packet still in flight at the horizon;
//! `payload` is a bit string, most significant bit first).
//!
//! Sweep CSV: `gamma,g_bits,R_s,entropy_ref,max_z,violations`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::engine::{AbortReport, SchemeInfo, SimTrace};
use crate::error::Result;
use crate::metrics::{
    compute_rate, inter_reception_check, tail_sup, verify_envelopes, zeno_check, EnvelopeCheck, EnvelopeReport,
    RateReport, ZenoReport,
};
use crate::scenario::{ReferenceSection, Scenario};
use crate::sweep::SweepOutcome;

pub const LINEAR_TRACE_HEADER: [&str; 12] =
    ["step", "t", "x1", "x2", "xhat1", "xhat2", "z1", "u", "w1", "w2", "phi", "phi_dot"];
pub const NONLINEAR_TRACE_HEADER: [&str; 7] = ["step", "t", "x", "xhat", "z", "u", "w"];
pub const EVENTS_HEADER: [&str; 8] =
    ["seq", "t_send", "t_deliver", "g_bits", "payload", "z_at_send", "z_before_jump", "z_after_jump"];
pub const SWEEP_HEADER: [&str; 6] = ["gamma", "g_bits", "R_s", "entropy_ref", "max_z", "violations"];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match &trace.info {
        SchemeInfo::Linear { p, .. } => {
            w.write_record(LINEAR_TRACE_HEADER)?;
            for r in &trace.steps {
                let phi = p[0][0] * r.x[0] + p[0][1] * r.x[1];
                let phi_dot = p[1][0] * r.x[0] + p[1][1] * r.x[1];
                w.write_record([
                    r.step.to_string(),
                    num(trace.time(r.step)),
                    num(r.x[0]),
                    num(r.x[1]),
                    num(r.xhat[0]),
                    num(r.xhat[1]),
                    num(r.z),
                    num(r.u),
                    num(r.w[0]),
                    num(r.w[1]),
                    num(phi),
                    num(phi_dot),
                ])?;
            }
        }
        SchemeInfo::Nonlinear { .. } => {
            w.write_record(NONLINEAR_TRACE_HEADER)?;
            for r in &trace.steps {
                w.write_record([
                    r.step.to_string(),
                    num(trace.time(r.step)),
                    num(r.x[0]),
                    num(r.xhat[0]),
                    num(r.z),
                    num(r.u),
                    num(r.w[0]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_csv<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENTS_HEADER)?;
    for e in &trace.events {
        w.write_record([
            e.seq.to_string(),
            num(trace.time(e.send_step)),
            e.deliver_step.map(|s| num(trace.time(s))).unwrap_or_default(),
            e.g_bits.to_string(),
            e.payload.clone(),
            num(e.z_at_send),
            opt(e.z_before_jump),
            opt(e.z_after_jump),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(outcomes: &[SweepOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for o in outcomes {
        if let SweepOutcome::Point(p) = o {
            w.write_record([
                num(p.gamma_effective),
                p.g_bits.to_string(),
                opt(p.rate),
                num(p.entropy_ref),
                num(p.max_z),
                p.violations.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub delta_s: f64,
    pub horizon_s: f64,
    pub steps_run: usize,
    pub scheme: SchemeInfo,
    pub rate: RateReport,
    pub envelopes: EnvelopeReport,
    pub inter_reception: Option<EnvelopeCheck>,
    pub zeno: ZenoReport,
    /// `sup |x|` after a settling time of `5/L_x` (scalar) or 2 s (pendulum).
    pub tail_sup: Option<f64>,
    pub abort: Option<AbortReport>,
    pub reference: ReferenceSection,
}

impl RunSummary {
    pub fn new(trace: &SimTrace, scenario: &Scenario) -> Self {
        let settle = match &trace.info {
            SchemeInfo::Nonlinear { cfg, .. } => 5.0 / cfg.lx,
            SchemeInfo::Linear { .. } => 2.0,
        };
        Self {
            scenario: trace.scenario.clone(),
            seed: trace.seed,
            delta_s: trace.delta,
            horizon_s: trace.horizon_steps as f64 * trace.delta,
            steps_run: trace.steps.len(),
            scheme: trace.info.clone(),
            rate: compute_rate(trace),
            envelopes: verify_envelopes(trace),
            inter_reception: inter_reception_check(trace),
            zeno: zeno_check(trace),
            tail_sup: tail_sup(trace, settle),
            abort: trace.abort.clone(),
            reference: scenario.reference.clone(),
        }
    }

    pub fn passed(&self) -> bool {
        self.abort.is_none() && self.envelopes.total_violations == 0 && self.zeno.violations == 0
    }
}

pub fn write_summary_json<W: Write>(summary: &RunSummary, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, summary)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn trace_csv_bytes(trace: &SimTrace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf)?;
    Ok(buf)
}

pub fn events_csv_bytes(trace: &SimTrace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_events_csv(trace, &mut buf)?;
    Ok(buf)
}

/// Write `trace.csv`, `events.csv` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, trace: &SimTrace, scenario: &Scenario) -> Result<RunSummary> {
    let summary = RunSummary::new(trace, scenario);
    write_atomic(&dir.join("trace.csv"), &trace_csv_bytes(trace)?)?;
    write_atomic(&dir.join("events.csv"), &events_csv_bytes(trace)?)?;
    let mut json = Vec::new();
    write_summary_json(&summary, &mut json)?;
    write_atomic(&dir.join("summary.json"), &json)?;
    Ok(summary)
}
