//! Demand-bound analysis for fog nodes.
//!
//! `dbf` uses the ceiling form
//! `max(0, ceil((Δ - (D - T)) / T) * C)`, which is never below the classical
//! `floor((Δ - D) / T) + 1` demand bound and coincides with it only where
//! `(Δ - D) / T` is an integer. Admission is `max_load <= 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

fn positive(name: &str, v: f64) -> Result<(), SchedError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SchedError::Parameter(format!("{name} must be finite and > 0 (got {v})")))
    }
}

/// Slot-level demand of one stream on the analysed node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamDemand {
    pub exec: f64,
    pub period: f64,
    pub deadline: f64,
}

impl StreamDemand {
    pub fn new(exec: f64, period: f64, deadline: f64) -> Result<Self, SchedError> {
        positive("C", exec)?;
        positive("T", period)?;
        positive("D", deadline)?;
        Ok(Self { exec, period, deadline })
    }
}

/// Block generation/validation times scaled to fog conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBounds {
    pub gen_block: f64,
    pub val_block: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gen_fog: f64,
    pub val_fog: f64,
}

pub fn scale_bounds(gen_block: f64, val_block: f64, alpha: f64, beta: f64) -> Result<TimingBounds, SchedError> {
    positive("C_gen_block", gen_block)?;
    positive("C_val_block", val_block)?;
    positive("alpha", alpha)?;
    positive("beta", beta)?;
    Ok(TimingBounds {
        gen_block,
        val_block,
        alpha,
        beta,
        gen_fog: alpha * gen_block,
        val_fog: beta * val_block,
    })
}

pub fn dbf(d: &StreamDemand, delta: f64) -> Result<f64, SchedError> {
    if !(delta >= 0.0) {
        return Err(SchedError::Parameter(format!("delta must be >= 0 (got {delta})")));
    }
    let jobs = ((delta - (d.deadline - d.period)) / d.period).ceil();
    let demand = jobs * d.exec;
    // also folds -0.0 into 0.0
    Ok(if demand > 0.0 { demand } else { 0.0 })
}

pub fn load(demands: &[StreamDemand], delta: f64) -> Result<f64, SchedError> {
    if !(delta > 0.0) {
        return Err(SchedError::Parameter(format!("delta must be > 0 (got {delta})")));
    }
    let mut total = 0.0;
    for d in demands {
        total += dbf(d, delta)?;
    }
    Ok(total / delta)
}

/// Candidate interval lengths: every `k*T_i + D_i <= delta_max` plus
/// `delta_max` itself, sorted and deduplicated.
pub fn test_points(demands: &[StreamDemand], delta_max: f64) -> Vec<f64> {
    let mut pts = vec![delta_max];
    for d in demands {
        let mut k = 0u64;
        loop {
            let p = k as f64 * d.period + d.deadline;
            if p > delta_max {
                break;
            }
            pts.push(p);
            k += 1;
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Maximum load over [`test_points`]; ties resolve to the smallest Δ.
pub fn max_load(demands: &[StreamDemand], delta_max: f64) -> Result<(f64, f64), SchedError> {
    positive("delta_max", delta_max)?;
    if demands.is_empty() {
        return Ok((0.0, delta_max));
    }
    let mut best = (f64::NEG_INFINITY, delta_max);
    for p in test_points(demands, delta_max) {
        let l = load(demands, p)?;
        if l > best.0 {
            best = (l, p);
        }
    }
    Ok(best)
}

pub fn admit(node_demands: &[StreamDemand], candidate: StreamDemand, delta_max: f64) -> Result<bool, SchedError> {
    let mut all = node_demands.to_vec();
    all.push(candidate);
    Ok(max_load(&all, delta_max)?.0 <= 1.0)
}

const MAX_DELTA: f64 = 1e4;

/// Default analysis window: twice the hyperperiod when every period is a
/// multiple of 1 ms, capped at 10^4 s; otherwise 10^4 s.
pub fn default_delta_max(demands: &[StreamDemand]) -> f64 {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut h: u128 = 1;
    for d in demands {
        let scaled = d.period * 1000.0;
        let r = scaled.round();
        if (scaled - r).abs() > 1e-6 * scaled.max(1.0) || r < 1.0 {
            return MAX_DELTA;
        }
        let p = r as u128;
        h = h / gcd(h, p) * p;
        if h > (MAX_DELTA as u128) * 1000 {
            return MAX_DELTA;
        }
    }
    if demands.is_empty() {
        return MAX_DELTA;
    }
    (2.0 * h as f64 / 1000.0).min(MAX_DELTA)
}
