//! Horvitz–Thompson estimators of the direct and spillover effects:
//! inverse-probability-weighted contrasts of constant-path outcomes,
//! averaged over `t = p+1..=T` per unit and then over units.
//!
//! Exposure probabilities are computed analytically from the design and
//! policy, never estimated from the realized trajectory. A term whose
//! indicator is 0 contributes 0; no ratio normalization is applied, which
//! is what keeps the estimators exactly unbiased.

use serde::{Deserialize, Serialize};

use crate::design::DecisionContext;
use crate::engine::{AssignmentPolicy, Trajectory};
use crate::optim::{arm_probability, ProbLevel};
use crate::{Error, Result};

/// Which finite-population contrast is being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum Estimand {
    /// Treatment-vs-control contrast holding the probability path at `q`.
    Direct(ProbLevel),
    /// q1-vs-q2 contrast holding the unit's own arm at `z`.
    Spillover(bool),
}

impl Estimand {
    pub const ALL: [Estimand; 4] = [
        Estimand::Direct(ProbLevel::Q1),
        Estimand::Direct(ProbLevel::Q2),
        Estimand::Spillover(true),
        Estimand::Spillover(false),
    ];

    /// Stable identifier used in reports and CSV columns.
    pub fn label(&self) -> &'static str {
        match self {
            Estimand::Direct(ProbLevel::Q1) => "direct_q1",
            Estimand::Direct(ProbLevel::Q2) => "direct_q2",
            Estimand::Spillover(true) => "spillover_z1",
            Estimand::Spillover(false) => "spillover_z0",
        }
    }
}

/// An estimand together with the carryover order used to estimate it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimandId {
    pub estimand: Estimand,
    pub order: usize,
}

/// A point estimate with its unit-level components and, when inference
/// has been run, a conservative variance estimate and confidence
/// interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub id: EstimandId,
    pub point: f64,
    pub per_unit: Vec<f64>,
    pub variance_estimate: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

/// Constant-path exposure probability `r_q^{J_t} * q_z^{J_t}`.
pub fn exposure_probability(
    ctx: &DecisionContext,
    policy: &AssignmentPolicy,
    t: usize,
    level: ProbLevel,
    z: bool,
) -> f64 {
    let j = ctx.exposure_count(t) as i32;
    (policy.r(level) * arm_probability(policy.q(level), z)).powi(j)
}

/// 1 iff `Q_{ t' } = q` and `Z_{i, t'} = z` for every `t'` in `[t-p, t]`.
pub fn constant_path_indicator(traj: &Trajectory, unit: usize, t: usize, p: usize, q: f64, z: bool) -> bool {
    debug_assert!(t >= p + 1 && t <= traj.horizon);
    (t - p..=t).all(|s| traj.q_at(s) == q && traj.z(unit, s) == z)
}

fn check_trajectory(traj: &Trajectory, ctx: &DecisionContext, policy: &AssignmentPolicy) -> Result<()> {
    if traj.horizon != ctx.horizon() {
        return Err(Error::Mismatch(format!(
            "horizon mismatch: trajectory has T = {}, design context has T = {}",
            traj.horizon,
            ctx.horizon()
        )));
    }
    for t in 1..=traj.horizon {
        if policy.level_of(traj.q_at(t)).is_none() {
            return Err(Error::Mismatch(format!(
                "trajectory q = {} at time {t} matches neither q1 = {} nor q2 = {}",
                traj.q_at(t),
                policy.q1,
                policy.q2
            )));
        }
    }
    Ok(())
}

fn ht_estimate(
    traj: &Trajectory,
    ctx: &DecisionContext,
    policy: &AssignmentPolicy,
    id: EstimandId,
    positive: (f64, bool),
    negative: (f64, bool),
    pr: impl Fn(usize) -> (f64, f64),
) -> EffectEstimate {
    let p = ctx.order();
    let horizon = ctx.horizon();
    let scale = 1.0 / (horizon - p) as f64;
    let _ = policy;
    let per_unit: Vec<f64> = (0..traj.n_units)
        .map(|unit| {
            let mut acc = 0.0;
            for t in p + 1..=horizon {
                let (pr_pos, pr_neg) = pr(t);
                let y = traj.y(unit, t);
                if constant_path_indicator(traj, unit, t, p, positive.0, positive.1) {
                    acc += y / pr_pos;
                }
                if constant_path_indicator(traj, unit, t, p, negative.0, negative.1) {
                    acc -= y / pr_neg;
                }
            }
            acc * scale
        })
        .collect();
    let point = per_unit.iter().sum::<f64>() / traj.n_units as f64;
    EffectEstimate { id, point, per_unit, variance_estimate: None, ci: None }
}

/// Direct-effect estimator at probability level `q`: the estimation order
/// is the context's order, which may differ from the outcome model's
/// true order.
pub fn ht_direct(
    traj: &Trajectory,
    ctx: &DecisionContext,
    policy: &AssignmentPolicy,
    level: ProbLevel,
) -> Result<EffectEstimate> {
    check_trajectory(traj, ctx, policy)?;
    let q = policy.q(level);
    let id = EstimandId { estimand: Estimand::Direct(level), order: ctx.order() };
    Ok(ht_estimate(
        traj,
        ctx,
        policy,
        id,
        (q, true),
        (q, false),
        |t| {
            (
                exposure_probability(ctx, policy, t, level, true),
                exposure_probability(ctx, policy, t, level, false),
            )
        },
    ))
}

/// Spillover-effect estimator at arm `z`.
pub fn ht_spillover(
    traj: &Trajectory,
    ctx: &DecisionContext,
    policy: &AssignmentPolicy,
    z: bool,
) -> Result<EffectEstimate> {
    check_trajectory(traj, ctx, policy)?;
    let id = EstimandId { estimand: Estimand::Spillover(z), order: ctx.order() };
    Ok(ht_estimate(
        traj,
        ctx,
        policy,
        id,
        (policy.q1, z),
        (policy.q2, z),
        |t| {
            (
                exposure_probability(ctx, policy, t, ProbLevel::Q1, z),
                exposure_probability(ctx, policy, t, ProbLevel::Q2, z),
            )
        },
    ))
}

/// Estimates all four effects from one trajectory.
pub fn ht_all(
    traj: &Trajectory,
    ctx: &DecisionContext,
    policy: &AssignmentPolicy,
) -> Result<Vec<EffectEstimate>> {
    Estimand::ALL
        .iter()
        .map(|e| match e {
            Estimand::Direct(level) => ht_direct(traj, ctx, policy, *level),
            Estimand::Spillover(z) => ht_spillover(traj, ctx, policy, *z),
        })
        .collect()
}

/// Pools per-center estimates with the given unit-share weights. The
/// per-unit components are concatenated, so the pooled point stays the
/// mean of the per-unit values when the weights are `N_g / N`.
pub fn pooled_estimate(center_estimates: &[EffectEstimate], weights: &[f64]) -> Result<EffectEstimate> {
    if center_estimates.is_empty() {
        return Err(Error::invalid("centers", "nothing to pool"));
    }
    if center_estimates.len() != weights.len() {
        return Err(Error::Mismatch(format!(
            "{} estimates but {} weights",
            center_estimates.len(),
            weights.len()
        )));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("weights", "center weights must sum to 1"));
    }
    let id = center_estimates[0].id;
    if center_estimates.iter().any(|e| e.id != id) {
        return Err(Error::Mismatch("pooled estimates must share one estimand id".to_string()));
    }
    let point = center_estimates.iter().zip(weights).map(|(e, w)| w * e.point).sum();
    let per_unit = center_estimates.iter().flat_map(|e| e.per_unit.iter().copied()).collect();
    Ok(EffectEstimate { id, point, per_unit, variance_estimate: None, ci: None })
}
