//! Exact brute force on tiny instances: full enumeration of the
//! randomization distribution, exact estimator moments and risks,
//! worst-case corner search, and exhaustive design search.
//!
//! Everything here is deliberately independent of the closed-form and
//! block-variance machinery it validates: expectations are plain
//! probability-weighted sums over atoms.

use crate::design::{validate_candidate, DecisionContext, Design};
use crate::engine::{
    realize_outcomes, trajectory_from_parts, AssignmentPolicy, ConstantPathTable, OutcomeModel,
    Trajectory,
};
use crate::estimator::{ht_direct, ht_spillover, Estimand};
use crate::optim::{worst_case_objective_general, ExperimentParams, ProbLevel};
use crate::stats::KahanSum;
use crate::{Error, Result};

/// Enumeration guard: `2^{(L+1)(N+1)}` atoms must stay at or below this.
const MAX_ATOM_BITS: u32 = 24;

/// One realization of the whole experiment with its exact probability.
#[derive(Debug, Clone)]
pub struct AtomicOutcome {
    pub probability: f64,
    pub trajectory: Trajectory,
}

/// Enumerates every (probability-choice, assignment) combination with its
/// exact probability.
pub fn enumerate_distribution(
    policy: &AssignmentPolicy,
    model: &dyn OutcomeModel,
    n_units: usize,
) -> Result<Vec<AtomicOutcome>> {
    let points = policy.design.decision_points.clone();
    let draws = points.len();
    let bits = (draws * (n_units + 1)) as u32;
    if bits > MAX_ATOM_BITS {
        return Err(Error::InstanceTooLarge(format!(
            "enumeration needs 2^{bits} atoms (limit 2^{MAX_ATOM_BITS}); shrink N, T, or the design"
        )));
    }
    let horizon = policy.design.horizon;
    let mut atoms = Vec::with_capacity(1usize << bits);
    for q_bits in 0..(1usize << draws) {
        let mut q_prob = 1.0;
        let mut q = vec![0.0; horizon];
        for (k, &start) in points.iter().enumerate() {
            let end = if k + 1 < draws { points[k + 1] - 1 } else { horizon };
            let at_q1 = q_bits >> k & 1 == 1;
            q_prob *= if at_q1 { policy.r_q1 } else { 1.0 - policy.r_q1 };
            let value = if at_q1 { policy.q1 } else { policy.q2 };
            for t in start..=end {
                q[t - 1] = value;
            }
        }
        for z_bits in 0..(1usize << (draws * n_units)) {
            let mut prob = q_prob;
            let mut z = vec![false; n_units * horizon];
            for (k, &start) in points.iter().enumerate() {
                let end = if k + 1 < draws { points[k + 1] - 1 } else { horizon };
                let level_q = q[start - 1];
                for unit in 0..n_units {
                    let treated = z_bits >> (k * n_units + unit) & 1 == 1;
                    prob *= if treated { level_q } else { 1.0 - level_q };
                    for t in start..=end {
                        z[unit * horizon + (t - 1)] = treated;
                    }
                }
            }
            let y = realize_outcomes(model, n_units, &q, &z);
            atoms.push(AtomicOutcome {
                probability: prob,
                trajectory: trajectory_from_parts(n_units, q.clone(), z, y),
            });
        }
    }
    Ok(atoms)
}

/// Exact first and second moments of one Horvitz–Thompson estimator over
/// the enumerated distribution, and its risk against `target`.
#[derive(Debug, Clone, Copy)]
pub struct ExactMoments {
    pub expectation: f64,
    pub variance: f64,
    /// Mean squared error `E(estimate - target)^2`.
    pub risk: f64,
}

/// Computes moments of the estimator for `estimand` at the context's
/// order. Compensated summation keeps the tiny-instance equalities sharp.
pub fn exact_moments(
    atoms: &[AtomicOutcome],
    ctx: &DecisionContext,
    policy: &AssignmentPolicy,
    estimand: Estimand,
    target: f64,
) -> Result<ExactMoments> {
    let mut mean = KahanSum::new();
    let mut second = KahanSum::new();
    let mut risk = KahanSum::new();
    for atom in atoms {
        let est = match estimand {
            Estimand::Direct(level) => ht_direct(&atom.trajectory, ctx, policy, level)?,
            Estimand::Spillover(z) => ht_spillover(&atom.trajectory, ctx, policy, z)?,
        };
        mean.add(atom.probability * est.point);
        second.add(atom.probability * est.point * est.point);
        let err = est.point - target;
        risk.add(atom.probability * err * err);
    }
    let expectation = mean.value();
    Ok(ExactMoments {
        expectation,
        variance: second.value() - expectation * expectation,
        risk: risk.value(),
    })
}

/// Exact weighted risk `psi_d {risk_d(q1) + risk_d(q2)} + psi_s {risk_s(1)
/// + risk_s(0)}` of a constant-path table.
pub fn exact_combined_risk(
    atoms: &[AtomicOutcome],
    ctx: &DecisionContext,
    policy: &AssignmentPolicy,
    params: &ExperimentParams,
    table: &ConstantPathTable,
) -> Result<f64> {
    let mut total = 0.0;
    for estimand in Estimand::ALL {
        let target = match estimand {
            Estimand::Direct(level) => table.direct_effect(level),
            Estimand::Spillover(z) => table.spillover_effect(z),
        };
        let weight = match estimand {
            Estimand::Direct(_) => params.psi_d,
            Estimand::Spillover(_) => params.psi_s,
        };
        if weight == 0.0 {
            continue;
        }
        total += weight * exact_moments(atoms, ctx, policy, estimand, target)?.risk;
    }
    Ok(total)
}

/// Result of the corner search: the maximizing sign pattern
/// (`signs[level][z]`) and the exact risk it attains.
#[derive(Debug, Clone, Copy)]
pub struct CornerSearchResult {
    pub max_risk: f64,
    pub signs: [[f64; 2]; 2],
}

/// Maximizes the combined risk over all 16 sign corners of constant
/// tables (the proven-sufficient worst-case class).
pub fn worst_case_corner_search(design: &Design, params: &ExperimentParams) -> Result<CornerSearchResult> {
    params.validate()?;
    let policy = AssignmentPolicy::from_params(params, design.clone())?;
    let ctx = DecisionContext::new(design.clone(), params.order)?;
    let mut best: Option<CornerSearchResult> = None;
    for mask in 0..16u32 {
        let sign = |bit: u32| if mask >> bit & 1 == 1 { 1.0 } else { -1.0 };
        let signs = [[sign(0), sign(1)], [sign(2), sign(3)]];
        let table = ConstantPathTable::corner(
            params.order,
            params.n_units,
            design.horizon,
            params.q1,
            params.q2,
            signs,
            params.bound,
        );
        let atoms = enumerate_distribution(&policy, &table, params.n_units)?;
        let risk = exact_combined_risk(&atoms, &ctx, &policy, params, &table)?;
        if best.map_or(true, |b| risk > b.max_risk) {
            best = Some(CornerSearchResult { max_risk: risk, signs });
        }
    }
    Ok(best.expect("sixteen corners evaluated"))
}

/// Exhaustively searches every decision-point subset containing 1,
/// pruned by the feasibility constraints, scoring each by the worst-case
/// objective. Ties break toward the lexicographically smaller point set.
pub fn exhaustive_design_search(horizon: usize, params: &ExperimentParams) -> Result<(Design, f64)> {
    if horizon > 18 {
        return Err(Error::InstanceTooLarge(format!(
            "exhaustive search over 2^{} designs refused (T <= 18)",
            horizon - 1
        )));
    }
    params.validate()?;
    let mut best: Option<(Design, f64)> = None;
    for mask in 0..(1u32 << (horizon - 1)) {
        let mut points = vec![1usize];
        for t in 2..=horizon {
            if mask >> (t - 2) & 1 == 1 {
                points.push(t);
            }
        }
        let design = Design::new(horizon, points)?;
        if !validate_candidate(&design, params.order) {
            continue;
        }
        let objective = worst_case_objective_general(&design, params)?.value()?;
        let better = match &best {
            None => true,
            Some((bd, bo)) => {
                objective < *bo || (objective == *bo && design.decision_points < bd.decision_points)
            }
        };
        if better {
            best = Some((design, objective));
        }
    }
    best.ok_or_else(|| Error::HorizonTooShort(format!("no valid design for T = {horizon}")))
}

/// The lag-p estimand the order-p estimator actually targets when the
/// outcome order is `m > p`: expectations of forced-window contrasts over
/// the randomization distribution, computed by path-conditioning
/// enumeration.
pub fn misspecified_estimand(
    policy: &AssignmentPolicy,
    model: &dyn OutcomeModel,
    n_units: usize,
    estimation_order: usize,
    estimand: Estimand,
) -> Result<f64> {
    let p = estimation_order;
    let m = model.order();
    let horizon = policy.design.horizon;
    let ctx = DecisionContext::new(policy.design.clone(), p)?;
    let atoms = enumerate_distribution(policy, model, n_units)?;

    let mut total = KahanSum::new();
    let mut q_buf = Vec::with_capacity(m + 1);
    let mut z_pos = Vec::with_capacity(m + 1);
    let mut z_neg = Vec::with_capacity(m + 1);
    for atom in &atoms {
        let traj = &atom.trajectory;
        let mut atom_sum = KahanSum::new();
        for unit in 0..n_units {
            for t in p + 1..=horizon {
                // the indicator pins every draw from the governing point
                // of t - p onward, so the forced window is [f, t]
                let f = ctx.governing(t - p);
                let start = (t + 1).saturating_sub(m + 1).max(1);
                let (q_pos, q_neg, zp, zn): (f64, f64, bool, bool) = match estimand {
                    Estimand::Direct(level) => {
                        let q = policy.q(level);
                        (q, q, true, false)
                    }
                    Estimand::Spillover(z) => (policy.q1, policy.q2, z, z),
                };
                q_buf.clear();
                z_pos.clear();
                z_neg.clear();
                let mut q_neg_buf = Vec::with_capacity(m + 1);
                for u in start..=t {
                    if u >= f {
                        q_buf.push(q_pos);
                        q_neg_buf.push(q_neg);
                        z_pos.push(zp);
                        z_neg.push(zn);
                    } else {
                        q_buf.push(traj.q_at(u));
                        q_neg_buf.push(traj.q_at(u));
                        z_pos.push(traj.z(unit, u));
                        z_neg.push(traj.z(unit, u));
                    }
                }
                let positive = model.eval(unit, t, &q_buf, &z_pos);
                let negative = model.eval(unit, t, &q_neg_buf, &z_neg);
                atom_sum.add(positive - negative);
            }
        }
        total.add(atom.probability * atom_sum.value());
    }
    Ok(total.value() / (n_units * (horizon - p)) as f64)
}
