//! Worst-case (minimax) risk objectives and the polynomial-time search
//! for the optimal schedule.
//!
//! The objective `L(psi_d, psi_s)` is the weighted sum of the worst-case
//! mean squared errors of the four Horvitz–Thompson estimators, maximized
//! over all potential-outcome tables bounded by `B`. Two routes compute
//! it: a closed form over interval lengths (valid on the feasible design
//! class at selection probability 1/2) and a general form over the
//! J-histogram (valid for any design and selection probability). The two
//! must agree on feasible designs; the tests and the enumeration oracle
//! hold them to that.

use serde::{Deserialize, Serialize};

use crate::design::{validate_candidate, Design, DecisionContext, JHistogram};
use crate::{Error, Result};

/// Which of the two treated-probability levels is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbLevel {
    Q1,
    Q2,
}

impl ProbLevel {
    pub const BOTH: [ProbLevel; 2] = [ProbLevel::Q1, ProbLevel::Q2];
}

/// Probability that a unit lands in treatment arm `z` when the treated
/// probability is `q`.
pub fn arm_probability(q: f64, z: bool) -> f64 {
    if z {
        q
    } else {
        1.0 - q
    }
}

/// Experiment-level parameters shared by design search, simulation, and
/// estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    /// Number of units N.
    pub n_units: usize,
    /// Number of time periods T.
    pub horizon: usize,
    /// Specified carryover order p.
    pub order: usize,
    pub q1: f64,
    pub q2: f64,
    /// Chance of selecting q1 at each decision point.
    #[serde(default = "default_half")]
    pub r_q1: f64,
    pub psi_d: f64,
    pub psi_s: f64,
    /// Uniform bound B on potential outcomes.
    #[serde(default = "default_one")]
    pub bound: f64,
}

fn default_half() -> f64 {
    0.5
}

fn default_one() -> f64 {
    1.0
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 1 {
            return Err(Error::invalid("N", "need at least one unit"));
        }
        if self.horizon < 1 {
            return Err(Error::invalid("T", "need at least one period"));
        }
        if self.order + 1 > self.horizon {
            return Err(Error::invalid(
                "p",
                format!("order p = {} leaves no estimable period for T = {}", self.order, self.horizon),
            ));
        }
        for (name, q) in [("q1", self.q1), ("q2", self.q2), ("r_q1", self.r_q1)] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::invalid("q", format!("{name} must lie strictly in (0,1), got {q}")));
            }
        }
        if self.q1 == self.q2 {
            return Err(Error::invalid("q", "q1 and q2 must differ"));
        }
        if self.psi_d < 0.0 || self.psi_s < 0.0 || (self.psi_d + self.psi_s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("psi", "risk weights must be non-negative and sum to 1"));
        }
        if !(self.bound > 0.0) {
            return Err(Error::invalid("B", "outcome bound must be positive"));
        }
        Ok(())
    }

    pub fn q(&self, level: ProbLevel) -> f64 {
        match level {
            ProbLevel::Q1 => self.q1,
            ProbLevel::Q2 => self.q2,
        }
    }

    pub fn r(&self, level: ProbLevel) -> f64 {
        match level {
            ProbLevel::Q1 => self.r_q1,
            ProbLevel::Q2 => 1.0 - self.r_q1,
        }
    }

    pub fn r_q2(&self) -> f64 {
        1.0 - self.r_q1
    }

    pub fn is_half_selection(&self) -> bool {
        (self.r_q1 - 0.5).abs() < 1e-12
    }

    fn check_half_selection(&self) -> Result<()> {
        if self.is_half_selection() {
            Ok(())
        } else {
            Err(Error::invalid("r_q1", "this operation requires r_q1 = r_q2 = 0.5"))
        }
    }
}

/// The worst-case risk coefficients of the closed-form objective,
/// including the `1/{N (T-p)^2}` prefactor, and their psi-weighted
/// combinations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammaSet {
    pub gamma1_d: f64,
    pub gamma2_d: f64,
    pub gamma3_d: f64,
    pub gamma1_s: f64,
    pub gamma2_s: f64,
    pub gamma3_s: f64,
    pub gamma1_star: f64,
    pub gamma2_star: f64,
    pub gamma3_star: f64,
    pub theta_star: f64,
}

/// Computes the six base risk coefficients, their psi-weighted stars, and
/// `theta* = gamma2*/gamma1*`. The `N = 1` population uses the branch
/// without the `8N`/`16N` direct-effect terms.
pub fn gamma_coefficients(params: &ExperimentParams) -> Result<GammaSet> {
    params.validate()?;
    let n = params.n_units as f64;
    let t = params.horizon as f64;
    let p = params.order as f64;
    let pref = 1.0 / (n * (t - p) * (t - p));

    let levels = [params.q1, 1.0 - params.q1, params.q2, 1.0 - params.q2];
    let sum_inv: f64 = levels.iter().map(|&x| 1.0 / x).sum();
    let sum_inv2: f64 = levels.iter().map(|&x| 1.0 / (x * x)).sum();
    let sum_cube: f64 = levels
        .iter()
        .map(|&x| {
            let inv = 1.0 / x;
            2.0 * inv * (2.0 * inv - 1.0) * (2.0 * inv - 1.0)
        })
        .sum();

    // gamma3_d carries 16(N-1), the value the alpha_J increments produce,
    // parallel to gamma3_s's 4(N-1); both vanish at N = 1.
    let (gamma1_d, gamma2_d, gamma3_d) = if params.n_units >= 2 {
        (
            pref * (8.0 * n + 2.0 * sum_inv - 16.0),
            pref * (8.0 * n + 4.0 * sum_inv2 - 4.0 * sum_inv),
            pref * (sum_cube + 16.0 * (n - 1.0)),
        )
    } else {
        (
            pref * (2.0 * sum_inv),
            pref * (4.0 * sum_inv2 - 4.0 * sum_inv),
            pref * sum_cube,
        )
    };
    let gamma1_s = pref * (8.0 * n + 2.0 * sum_inv - 8.0);
    let gamma2_s = pref * 4.0 * (sum_inv2 - sum_inv);
    // 8(N-1): the per-z increment contributes 4(N-1) for each of z = 0, 1
    let gamma3_s = pref * (sum_cube + 8.0 * (n - 1.0));

    let gamma1_star = params.psi_d * gamma1_d + params.psi_s * gamma1_s;
    let gamma2_star = params.psi_d * gamma2_d + params.psi_s * gamma2_s;
    let gamma3_star = params.psi_d * gamma3_d + params.psi_s * gamma3_s;

    Ok(GammaSet {
        gamma1_d,
        gamma2_d,
        gamma3_d,
        gamma1_s,
        gamma2_s,
        gamma3_s,
        gamma1_star,
        gamma2_star,
        gamma3_star,
        theta_star: gamma2_star / gamma1_star,
    })
}

/// Per-exposure-level worst-case expectation values at the given
/// parameters' selection probabilities.
#[derive(Debug, Clone)]
pub struct WorstCaseTerms {
    /// `alpha_J(q)` for q in {q1, q2}, J in 1..=p+1 (large-N regime uses
    /// the signed-corner form, small-N the aligned-corner form).
    pub alpha_large_n: [Vec<f64>; 2],
    pub alpha_small_n: [Vec<f64>; 2],
    /// `beta_J(z)` for z in {0, 1}, J in 1..=p+1.
    pub beta: [Vec<f64>; 2],
    /// `zeta_j` for j in 1..=p+1.
    pub zeta: Vec<f64>,
}

impl WorstCaseTerms {
    pub fn compute(params: &ExperimentParams) -> Result<Self> {
        params.validate()?;
        let n = params.n_units as f64;
        let b2 = params.bound * params.bound;
        let max_j = params.order + 1;
        let mut alpha_large_n = [vec![0.0; max_j + 1], vec![0.0; max_j + 1]];
        let mut alpha_small_n = [vec![0.0; max_j + 1], vec![0.0; max_j + 1]];
        let mut beta = [vec![0.0; max_j + 1], vec![0.0; max_j + 1]];
        let mut zeta = vec![0.0; max_j + 1];
        for j in 1..=max_j {
            let jf = j as i32;
            for (qi, level) in ProbLevel::BOTH.iter().enumerate() {
                let q = params.q(*level);
                let rinv = params.r(*level).powi(-jf);
                alpha_large_n[qi][j] = 4.0 * (rinv - 1.0) * b2
                    + rinv * (q.powi(-jf) + (1.0 - q).powi(-jf) - 4.0) * b2 / n;
                alpha_small_n[qi][j] = rinv * (q.powi(-jf) + (1.0 - q).powi(-jf)) * b2 / n;
            }
            for (zi, z) in [false, true].iter().enumerate() {
                let q1z = arm_probability(params.q1, *z);
                let q2z = arm_probability(params.q2, *z);
                let r1inv = params.r_q1.powi(-jf);
                let r2inv = params.r_q2().powi(-jf);
                beta[zi][j] = (r1inv + r2inv) * b2 * (1.0 - 1.0 / n)
                    + (r1inv * q1z.powi(-jf) + r2inv * q2z.powi(-jf)) * b2 / n;
            }
            zeta[j] = params.r_q1.powi(-jf)
                * (params.q1.powi(-jf) + (1.0 - params.q1).powi(-jf))
                + params.r_q2().powi(-jf)
                    * (params.q2.powi(-jf) + (1.0 - params.q2).powi(-jf));
        }
        Ok(WorstCaseTerms { alpha_large_n, alpha_small_n, beta, zeta })
    }
}

/// Which worst-case corner characterization applies for the population
/// size at hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `N >= (1 - max r)^{-1}`: worst case has opposed treatment/control
    /// outcomes.
    LargeN,
    /// `N <= (1 - min r^{p+1})^{-1}`: worst case has aligned outcomes.
    SmallN,
    /// N falls strictly between the two characterized ranges.
    Indeterminate,
}

/// Result of the J-histogram-based worst-case objective: the value under
/// each regime's corner, plus which regime the population size selects.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WorstCaseObjective {
    pub regime: Regime,
    pub large_n_value: f64,
    pub small_n_value: f64,
}

impl WorstCaseObjective {
    /// The objective value when the regime is determinate.
    pub fn value(&self) -> Result<f64> {
        match self.regime {
            Regime::LargeN => Ok(self.large_n_value),
            Regime::SmallN => Ok(self.small_n_value),
            Regime::Indeterminate => Err(Error::Mismatch(
                "population size is regime-indeterminate; both candidate values are reported"
                    .to_string(),
            )),
        }
    }
}

fn regime_for(params: &ExperimentParams) -> Regime {
    let n = params.n_units as f64;
    let r_max = params.r_q1.max(params.r_q2());
    let r_min = params.r_q1.min(params.r_q2());
    let large_threshold = 1.0 / (1.0 - r_max);
    let small_threshold = 1.0 / (1.0 - r_min.powi(params.order as i32 + 1));
    if n >= large_threshold {
        Regime::LargeN
    } else if n <= small_threshold {
        Regime::SmallN
    } else {
        Regime::Indeterminate
    }
}

/// Worst-case objective via the J-histogram. Valid for any well-formed
/// design and any selection probability; feasibility is not required.
pub fn worst_case_objective_general(design: &Design, params: &ExperimentParams) -> Result<WorstCaseObjective> {
    params.validate()?;
    if design.horizon != params.horizon {
        return Err(Error::Mismatch(format!(
            "design horizon {} does not match params horizon {}",
            design.horizon, params.horizon
        )));
    }
    let ctx = DecisionContext::new(design.clone(), params.order)?;
    let hist = ctx.j_histogram();
    Ok(worst_case_objective_from_histogram(&hist, params))
}

/// Same objective from a precomputed histogram.
pub fn worst_case_objective_from_histogram(hist: &JHistogram, params: &ExperimentParams) -> WorstCaseObjective {
    let n = params.n_units as f64;
    let b2 = params.bound * params.bound;
    let t = params.horizon as f64;
    let p = params.order as f64;
    let scale = 1.0 / ((t - p) * (t - p));

    let mut large = 0.0;
    let mut small = 0.0;
    for j in 1..=params.order + 1 {
        let mass = hist.count(j) as f64;
        if mass == 0.0 {
            continue;
        }
        let jf = j as i32;
        let rsum = params.r_q1.powi(-jf) + params.r_q2().powi(-jf);
        let zeta = params.r_q1.powi(-jf) * (params.q1.powi(-jf) + (1.0 - params.q1).powi(-jf))
            + params.r_q2().powi(-jf) * (params.q2.powi(-jf) + (1.0 - params.q2).powi(-jf));
        let direct_large = 4.0 * rsum * b2 * (1.0 - 1.0 / n) - 8.0 * b2 + zeta * b2 / n;
        let direct_small = zeta * b2 / n;
        let spill = 2.0 * rsum * b2 * (1.0 - 1.0 / n) + zeta * b2 / n;
        large += mass * (params.psi_d * direct_large + params.psi_s * spill);
        small += mass * (params.psi_d * direct_small + params.psi_s * spill);
    }
    WorstCaseObjective {
        regime: regime_for(params),
        large_n_value: large * scale,
        small_n_value: small * scale,
    }
}

/// Worst-case objective in closed form over interval lengths. Only valid
/// on feasible designs (Lemma constraints) at selection probability 1/2,
/// with at least two decision points.
pub fn worst_case_objective_closed(design: &Design, params: &ExperimentParams) -> Result<f64> {
    params.check_half_selection()?;
    if design.horizon != params.horizon {
        return Err(Error::Mismatch(format!(
            "design horizon {} does not match params horizon {}",
            design.horizon, params.horizon
        )));
    }
    if !validate_candidate(design, params.order) {
        return Err(Error::InfeasibleDesign(
            "closed-form objective is only proved on designs satisfying t_1 >= p+2, t_L <= T-p, t_{l+1}-t_{l-1} >= p".to_string(),
        ));
    }
    let l = design.num_intervals_l();
    if l == 0 {
        return Err(Error::InfeasibleDesign(
            "closed-form objective needs at least two decision points".to_string(),
        ));
    }
    let gamma = gamma_coefficients(params)?;
    let pts = &design.decision_points;
    let p = params.order as f64;

    let mut sum_sq = 0.0;
    for i in 0..=l {
        let next = if i + 1 <= l { pts[i + 1] } else { design.horizon + 1 };
        let gap = (next - pts[i]) as f64;
        sum_sq += gap * gap;
    }
    let bracket = sum_sq + (l as f64 - 1.0) * p * p + 2.0 * p * (pts[l] - pts[1]) as f64;

    let mut penalty = 0.0;
    for i in 2..=l {
        let shortfall = p - (pts[i] - pts[i - 1]) as f64;
        if shortfall > 0.0 {
            penalty += shortfall * shortfall;
        }
    }

    let b2 = params.bound * params.bound;
    Ok((bracket * gamma.gamma1_star + l as f64 * p * p * gamma.gamma2_star + penalty * gamma.gamma3_star) * b2)
}

/// Which end-interval pattern a searched design uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndCase {
    /// `t_1 - t_0 = t_{L+1} - t_L = a`.
    EqualEnds,
    /// Ends of length `a` and `a + 1` (canonically `a` first).
    UnequalEnds,
}

/// Outcome of the minimax design search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSearchResult {
    pub a_star: usize,
    pub b_star: usize,
    pub case_tag: EndCase,
    pub l: usize,
    /// Full closed-form objective of the returned design (gamma-scaled,
    /// including the B^2 factor).
    pub objective: f64,
    pub design: Design,
    pub theta_star: f64,
}

struct Candidate {
    value: f64,
    a: usize,
    b: usize,
    case: EndCase,
    count_b: usize,
    count_b1: usize,
}

impl Candidate {
    /// Tie order: objective, then smaller b, smaller a, equal ends first.
    fn key(&self) -> (f64, usize, usize, u8) {
        (self.value, self.b, self.a, if self.case == EndCase::EqualEnds { 0 } else { 1 })
    }
}

/// Polynomial-time minimax design detection: iterates end length `a` and
/// minimum middle length `b`, resolves how many middle intervals of
/// length `b` and `b + 1` the theta* branch prescribes, and keeps the
/// minimizing candidate. `p = 0` short-circuits to the independent
/// design.
pub fn optimal_design(params: &ExperimentParams) -> Result<DesignSearchResult> {
    params.validate()?;
    params.check_half_selection()?;
    let t = params.horizon;
    let p = params.order;
    let gamma = gamma_coefficients(params)?;
    let theta = gamma.theta_star;

    if p == 0 {
        let design = Design::standard(crate::design::StandardDesign::Independent, t, 0)?;
        let objective = worst_case_objective_closed(&design, params)?;
        return Ok(DesignSearchResult {
            a_star: 1,
            b_star: 1,
            case_tag: EndCase::EqualEnds,
            l: t - 1,
            objective,
            design,
            theta_star: theta,
        });
    }

    let pf = p as f64;
    let b_min = p.div_ceil(2).max(1);
    let mut best: Option<Candidate> = None;

    for a in (p + 1)..=t {
        for b in b_min..=t {
            for case in [EndCase::EqualEnds, EndCase::UnequalEnds] {
                let ends = match case {
                    EndCase::EqualEnds => 2 * a,
                    EndCase::UnequalEnds => 2 * a + 1,
                };
                if ends > t {
                    continue;
                }
                let span = t - ends;
                // theta* <= b(b+1)/p^2 - 1 favors length-b intervals
                // (floor branch); otherwise length-(b+1) (ceiling branch).
                let intervals = if theta <= (b * (b + 1)) as f64 / (pf * pf) - 1.0 {
                    span / b
                } else {
                    span.div_ceil(b + 1)
                };
                let count_b1 = span as i64 - (intervals * b) as i64;
                let count_b = intervals as i64 - count_b1;
                if count_b < 0 || count_b1 < 0 {
                    continue;
                }
                // a decomposition with no length-b interval is the same
                // design relabeled; it is visited again at (a, b + 1)
                if count_b == 0 && count_b1 > 0 {
                    continue;
                }
                let (count_b, count_b1) = (count_b as usize, count_b1 as usize);
                let l = intervals + 1;

                let mut sum_sq = match case {
                    EndCase::EqualEnds => 2.0 * (a * a) as f64,
                    EndCase::UnequalEnds => (a * a + (a + 1) * (a + 1)) as f64,
                };
                sum_sq += (count_b * b * b + count_b1 * (b + 1) * (b + 1)) as f64;
                let value = sum_sq
                    + (l as f64 - 1.0 + theta * l as f64) * pf * pf
                    + 2.0 * pf * span as f64;

                let cand = Candidate { value, a, b, case, count_b, count_b1 };
                let better = match &best {
                    None => true,
                    Some(b) => cand.key() < b.key(),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
    }

    let best = best.ok_or_else(|| {
        Error::HorizonTooShort(format!("no feasible (a, b) pair for T = {t}, p = {p}; need T >= 2(p+1)"))
    })?;

    // canonical construction: first end a, all length-(b+1) intervals,
    // then length-b intervals, closing end a (equal) or a + 1 (unequal)
    let mut points = vec![1usize, 1 + best.a];
    let mut cursor = 1 + best.a;
    for _ in 0..best.count_b1 {
        cursor += best.b + 1;
        points.push(cursor);
    }
    for _ in 0..best.count_b {
        cursor += best.b;
        points.push(cursor);
    }
    let closing = t + 1 - cursor;
    debug_assert_eq!(
        closing,
        match best.case {
            EndCase::EqualEnds => best.a,
            EndCase::UnequalEnds => best.a + 1,
        }
    );
    let design = Design::new(t, points)?;
    let objective = worst_case_objective_closed(&design, params)?;
    Ok(DesignSearchResult {
        a_star: best.a,
        b_star: best.b,
        case_tag: best.case,
        l: design.num_intervals_l(),
        objective,
        design,
        theta_star: theta,
    })
}

/// How `closed_form_design` arrived at its answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFormRoute {
    Star1,
    Star2,
    /// theta* outside both closed-form regimes, or divisibility failed;
    /// fell back to the full search.
    Delegated { warning: Option<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedFormResult {
    pub design: Design,
    pub route: ClosedFormRoute,
    pub theta_star: f64,
}

/// Closed-form regime selection: `theta* <= 1/p` picks the star-1
/// schedule, `theta* in (1/p, (3p+2)/p^2]` the star-2 schedule; anything
/// else (or a horizon failing the divisibility requirement) delegates to
/// the full search.
pub fn closed_form_design(params: &ExperimentParams) -> Result<ClosedFormResult> {
    params.validate()?;
    let p = params.order;
    let theta = gamma_coefficients(params)?.theta_star;
    if p == 0 {
        let design = Design::standard(crate::design::StandardDesign::Independent, params.horizon, 0)?;
        return Ok(ClosedFormResult { design, route: ClosedFormRoute::Delegated { warning: None }, theta_star: theta });
    }
    let pf = p as f64;
    let kind = if theta <= 1.0 / pf {
        Some(crate::design::StandardDesign::Star1)
    } else if theta <= (3.0 * pf + 2.0) / (pf * pf) {
        Some(crate::design::StandardDesign::Star2)
    } else {
        None
    };
    match kind {
        Some(kind) => match Design::standard(kind, params.horizon, p) {
            Ok(design) => {
                let route = if kind == crate::design::StandardDesign::Star1 {
                    ClosedFormRoute::Star1
                } else {
                    ClosedFormRoute::Star2
                };
                Ok(ClosedFormResult { design, route, theta_star: theta })
            }
            Err(Error::Divisibility { message, .. }) => {
                let result = optimal_design(params)?;
                Ok(ClosedFormResult {
                    design: result.design,
                    route: ClosedFormRoute::Delegated { warning: Some(message) },
                    theta_star: theta,
                })
            }
            Err(e) => Err(e),
        },
        None => {
            let result = optimal_design(params)?;
            Ok(ClosedFormResult {
                design: result.design,
                route: ClosedFormRoute::Delegated {
                    warning: Some(format!("theta* = {theta} exceeds (3p+2)/p^2; no closed form applies")),
                },
                theta_star: theta,
            })
        }
    }
}

/// Output of the selection-probability optimization: the minimizer under
/// each regime's objective, and which regime the population size selects.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionProbability {
    pub regime: Regime,
    pub large_n_r_q1: f64,
    pub small_n_r_q1: f64,
    /// True when the answer is exactly 1/2 (q1 + q2 = 1 or the asymptotic
    /// flag), not a numeric minimum.
    pub exact: bool,
}

impl SelectionProbability {
    pub fn r_q1(&self) -> Result<f64> {
        match self.regime {
            Regime::LargeN => Ok(self.large_n_r_q1),
            Regime::SmallN => Ok(self.small_n_r_q1),
            Regime::Indeterminate => Err(Error::Mismatch(
                "population size is regime-indeterminate; both candidate probabilities are reported".to_string(),
            )),
        }
    }
}

/// Objective for the selection-probability minimization at a given r_q1.
pub fn selection_objective(params: &ExperimentParams, hist: &JHistogram, r_q1: f64, regime: Regime) -> f64 {
    let n = params.n_units as f64;
    let r2 = 1.0 - r_q1;
    let mut total = 0.0;
    for j in 1..=params.order + 1 {
        let mass = hist.count(j) as f64;
        if mass == 0.0 {
            continue;
        }
        let jf = j as i32;
        let rsum = r_q1.powi(-jf) + r2.powi(-jf);
        let zeta = r_q1.powi(-jf) * (params.q1.powi(-jf) + (1.0 - params.q1).powi(-jf))
            + r2.powi(-jf) * (params.q2.powi(-jf) + (1.0 - params.q2).powi(-jf));
        let term = match regime {
            Regime::SmallN => 2.0 * params.psi_s * rsum * (1.0 - 1.0 / n) + zeta / n,
            _ => (4.0 * params.psi_d + 2.0 * params.psi_s) * rsum * (1.0 - 1.0 / n) - 8.0 * params.psi_d
                + zeta / n,
        };
        total += mass * term;
    }
    total
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let invphi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - invphi * (hi - lo);
    let mut x2 = lo + invphi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - invphi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + invphi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Minimizes the worst-case objective over the selection probability
/// `r_q1` (with `r_q2 = 1 - r_q1`) for the given J-histogram.
///
/// Returns 0.5 exactly when `q1 + q2 = 1` or when `asymptotic` is set
/// (the `N -> infinity` limit); otherwise refines a golden-section
/// bracket to 1e-8 on r under each regime objective.
pub fn optimal_selection_probability(
    params: &ExperimentParams,
    hist: &JHistogram,
    asymptotic: bool,
) -> Result<SelectionProbability> {
    params.validate()?;
    if asymptotic || (params.q1 + params.q2 - 1.0).abs() < 1e-12 {
        return Ok(SelectionProbability {
            regime: regime_for(params),
            large_n_r_q1: 0.5,
            small_n_r_q1: 0.5,
            exact: true,
        });
    }
    let lo = 1e-6;
    let hi = 1.0 - 1e-6;
    let large = golden_section_min(
        |r| selection_objective(params, hist, r, Regime::LargeN),
        lo,
        hi,
        1e-8,
    );
    let small = golden_section_min(
        |r| selection_objective(params, hist, r, Regime::SmallN),
        lo,
        hi,
        1e-8,
    );
    Ok(SelectionProbability {
        regime: regime_for(params),
        large_n_r_q1: large,
        small_n_r_q1: small,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::StandardDesign;

    pub(crate) fn params(n: usize, t: usize, p: usize, psi_d: f64) -> ExperimentParams {
        ExperimentParams {
            n_units: n,
            horizon: t,
            order: p,
            q1: 0.6,
            q2: 0.4,
            r_q1: 0.5,
            psi_d,
            psi_s: 1.0 - psi_d,
            bound: 1.0,
        }
    }

    #[test]
    fn theta_star_reproduces_reported_values() {
        let g = gamma_coefficients(&params(20, 100, 1, 1.0)).unwrap();
        assert!((g.theta_star - 1.238).abs() < 1e-3, "theta*={}", g.theta_star);
        let g = gamma_coefficients(&params(20, 100, 1, 0.5)).unwrap();
        assert!((g.theta_star - 0.722).abs() < 1e-3, "theta*={}", g.theta_star);
        // The psi_d = 0 entry evaluates to ~0.2306 from the coefficient
        // formulas (the published table prints 0.296 for this cell; the
        // formula value is what the design selection uses, and both fall
        // in the same selection regime for p in {1, 2}).
        let g = gamma_coefficients(&params(20, 100, 1, 0.0)).unwrap();
        assert!((g.theta_star - 0.23057).abs() < 1e-4, "theta*={}", g.theta_star);
    }

    #[test]
    fn theta_star_independent_of_t_and_p() {
        let a = gamma_coefficients(&params(20, 100, 1, 0.5)).unwrap().theta_star;
        let b = gamma_coefficients(&params(20, 160, 2, 0.5)).unwrap().theta_star;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gamma_n1_branch_matches_hand_expansion() {
        let p = ExperimentParams { n_units: 1, ..params(1, 50, 1, 1.0) };
        let g = gamma_coefficients(&p).unwrap();
        let pref = 1.0 / (1.0 * 49.0 * 49.0);
        let sum_inv = 1.0 / 0.6 + 1.0 / 0.4 + 1.0 / 0.4 + 1.0 / 0.6;
        // no 8N term in the N = 1 branch
        assert!((g.gamma1_d - pref * 2.0 * sum_inv).abs() < 1e-15);
        // N = 1 direct coefficients equal alpha-increment sums
        let terms = WorstCaseTerms::compute(&p).unwrap();
        let t_scale = 49.0 * 49.0;
        let a1 = (terms.alpha_small_n[0][1] + terms.alpha_small_n[1][1]) / t_scale;
        assert!((g.gamma1_d - a1).abs() < 1e-15);
        let a2 = (terms.alpha_small_n[0][2] - 2.0 * terms.alpha_small_n[0][1]
            + terms.alpha_small_n[1][2]
            - 2.0 * terms.alpha_small_n[1][1])
            / t_scale;
        assert!((g.gamma2_d - a2).abs() < 1e-14);
    }

    #[test]
    fn gamma_matches_alpha_beta_route_for_large_n() {
        // two algebraic routes: the printed coefficient formulas vs the
        // alpha/beta increment sums
        for psi_d in [0.0, 0.5, 1.0] {
            let p = params(20, 100, 2, psi_d);
            let g = gamma_coefficients(&p).unwrap();
            let terms = WorstCaseTerms::compute(&p).unwrap();
            let scale = (100.0 - 2.0) * (100.0 - 2.0);
            let a = &terms.alpha_large_n;
            let b = &terms.beta;
            let g1d = (a[0][1] + a[1][1]) / scale;
            let g2d = (a[0][2] - 2.0 * a[0][1] + a[1][2] - 2.0 * a[1][1]) / scale;
            let g3d = (a[0][3] - 2.0 * a[0][2] + a[0][1] + a[1][3] - 2.0 * a[1][2] + a[1][1]) / scale;
            let g1s = (b[0][1] + b[1][1]) / scale;
            let g2s = (b[0][2] - 2.0 * b[0][1] + b[1][2] - 2.0 * b[1][1]) / scale;
            let g3s = (b[0][3] - 2.0 * b[0][2] + b[0][1] + b[1][3] - 2.0 * b[1][2] + b[1][1]) / scale;
            for (lhs, rhs) in [
                (g.gamma1_d, g1d),
                (g.gamma2_d, g2d),
                (g.gamma3_d, g3d),
                (g.gamma1_s, g1s),
                (g.gamma2_s, g2s),
                (g.gamma3_s, g3s),
            ] {
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn alpha_beta_increments_positive_and_increasing() {
        for n in [1usize, 2, 5, 20] {
            for psi_d in [0.0, 1.0] {
                let p = ExperimentParams { n_units: n, order: 3, ..params(n, 100, 3, psi_d) };
                let terms = WorstCaseTerms::compute(&p).unwrap();
                for series in terms
                    .alpha_large_n
                    .iter()
                    .chain(terms.alpha_small_n.iter())
                    .chain(terms.beta.iter())
                {
                    let mut prev_inc = 0.0;
                    for j in 1..=3 {
                        let inc = series[j + 1] - series[j];
                        assert!(inc > 0.0, "alpha/beta increment not positive at j={j}");
                        assert!(inc > prev_inc, "increment not increasing at j={j}");
                        prev_inc = inc;
                    }
                }
            }
        }
    }

    #[test]
    fn closed_equals_general_on_feasible_designs() {
        for (t, p) in [(16usize, 2usize), (16, 1), (12, 1), (12, 2), (100, 1), (160, 2)] {
            for n in [1usize, 2, 20] {
                for psi_d in [0.0, 0.5, 1.0] {
                    let pr = ExperimentParams { n_units: n, horizon: t, order: p, ..params(n, t, p, psi_d) };
                    for kind in [StandardDesign::Star1, StandardDesign::Star2, StandardDesign::Blocked] {
                        let Ok(design) = Design::standard(kind, t, p) else { continue };
                        if !validate_candidate(&design, p) || design.num_intervals_l() == 0 {
                            continue;
                        }
                        let closed = worst_case_objective_closed(&design, &pr).unwrap();
                        let general = worst_case_objective_general(&design, &pr).unwrap().value().unwrap();
                        assert!(
                            (closed - general).abs() <= 1e-9 * closed.abs().max(1.0),
                            "{kind} T={t} p={p} N={n}: closed={closed} general={general}"
                        );
                    }

                    // a feasible design with sub-p gaps exercises gamma3
                    if p == 2 && t == 12 {
                        let design = Design::new(12, vec![1, 4, 5, 8, 9]).unwrap();
                        assert!(validate_candidate(&design, p));
                        let closed = worst_case_objective_closed(&design, &pr).unwrap();
                        let general = worst_case_objective_general(&design, &pr).unwrap().value().unwrap();
                        assert!(
                            (closed - general).abs() <= 1e-9 * closed.abs().max(1.0),
                            "penalty design N={n} psi_d={psi_d}: closed={closed} general={general}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn p0_objective_collapses() {
        let pr = params(20, 10, 0, 0.5);
        let design = Design::standard(StandardDesign::Independent, 10, 0).unwrap();
        let gamma = gamma_coefficients(&pr).unwrap();
        let closed = worst_case_objective_closed(&design, &pr).unwrap();
        assert!((closed - 10.0 * gamma.gamma1_star).abs() < 1e-12);
    }

    #[test]
    fn objective_scales_with_bound_squared() {
        let pr = params(20, 16, 2, 0.5);
        let pr2 = ExperimentParams { bound: 2.0, ..pr };
        let design = Design::standard(StandardDesign::Star2, 16, 2).unwrap();
        let v1 = worst_case_objective_closed(&design, &pr).unwrap();
        let v2 = worst_case_objective_closed(&design, &pr2).unwrap();
        assert!((v2 - 4.0 * v1).abs() < 1e-9 * v2.abs());
    }

    #[test]
    fn objective_invariant_under_q_and_r_swap() {
        let base = ExperimentParams { q1: 0.8, q2: 0.5, r_q1: 0.3, ..params(20, 16, 2, 0.5) };
        let swapped = ExperimentParams { q1: 0.5, q2: 0.8, r_q1: 0.7, ..base };
        let design = Design::standard(StandardDesign::Star2, 16, 2).unwrap();
        let a = worst_case_objective_general(&design, &base).unwrap();
        let b = worst_case_objective_general(&design, &swapped).unwrap();
        assert!((a.large_n_value - b.large_n_value).abs() < 1e-12 * a.large_n_value.abs());
        assert!((a.small_n_value - b.small_n_value).abs() < 1e-12);
    }

    #[test]
    fn optimal_design_table_case() {
        let result = optimal_design(&params(20, 16, 2, 0.5)).unwrap();
        assert_eq!(result.design.decision_points, vec![1, 6, 9, 12]);
        assert_eq!(result.a_star, 5);
        assert_eq!(result.b_star, 3);
        assert_eq!(result.case_tag, EndCase::EqualEnds);
        // Corollary interval endpoints for theta* = 0.722, p = 2:
        // b* in [2.17, 3.17], a* in [4.15, 5.15]
        let theta = result.theta_star;
        let disc = (1.0 + 4.0 * (theta + 1.0) * 4.0).sqrt();
        assert!((result.b_star as f64) >= (-1.0 + disc) / 2.0 && (result.b_star as f64) <= (1.0 + disc) / 2.0);
        let mid = 4.0 + result.b_star as f64 + (theta + 1.0) * 4.0 / result.b_star as f64;
        assert!((result.a_star as f64) >= (mid - 1.0) / 2.0 && (result.a_star as f64) <= (mid + 1.0) / 2.0);
    }

    #[test]
    fn optimal_design_p0_and_too_short() {
        let result = optimal_design(&params(20, 7, 0, 0.5)).unwrap();
        assert_eq!(result.design.decision_points, (1..=7).collect::<Vec<_>>());
        assert!(matches!(optimal_design(&params(20, 3, 2, 0.5)), Err(Error::HorizonTooShort(_))));
    }

    #[test]
    fn optimal_design_beats_standard_designs() {
        for (t, p) in [(16usize, 2usize), (16, 1), (100, 1), (160, 2)] {
            for psi_d in [0.0, 0.5, 1.0] {
                let pr = ExperimentParams { horizon: t, order: p, ..params(20, t, p, psi_d) };
                let best = optimal_design(&pr).unwrap();
                for kind in [
                    StandardDesign::Star1,
                    StandardDesign::Star2,
                    StandardDesign::Independent,
                    StandardDesign::Blocked,
                ] {
                    let Ok(design) = Design::standard(kind, t, p) else { continue };
                    let obj = worst_case_objective_general(&design, &pr).unwrap().value().unwrap();
                    assert!(
                        best.objective <= obj + 1e-9 * obj.abs(),
                        "search lost to {kind} at T={t} p={p} psi_d={psi_d}: {} vs {obj}",
                        best.objective
                    );
                }
            }
        }
    }

    #[test]
    fn closed_form_regimes() {
        // psi_d = 0, p = 2: theta* ~ 0.2306 <= 1/2 -> star1
        let r = closed_form_design(&params(20, 16, 2, 0.0)).unwrap();
        assert_eq!(r.route, ClosedFormRoute::Star1);
        assert_eq!(r.design.decision_points, vec![1, 5, 7, 9, 11, 13]);
        // psi_d = 1, p = 1: theta* ~ 1.238 > 1 -> star2
        let r = closed_form_design(&params(20, 100, 1, 1.0)).unwrap();
        assert_eq!(r.route, ClosedFormRoute::Star2);
        // psi_d = 0.5, p = 1: theta* ~ 0.722 <= 1 -> star1
        let r = closed_form_design(&params(20, 100, 1, 0.5)).unwrap();
        assert_eq!(r.route, ClosedFormRoute::Star1);
        // divisibility failure delegates with a warning
        let r = closed_form_design(&params(20, 15, 2, 0.0)).unwrap();
        assert!(matches!(r.route, ClosedFormRoute::Delegated { warning: Some(_) }));
    }

    #[test]
    fn selection_probability_exact_and_numeric() {
        let pr = params(20, 16, 2, 0.5);
        let hist = DecisionContext::new(Design::standard(StandardDesign::Star2, 16, 2).unwrap(), 2)
            .unwrap()
            .j_histogram();
        let sel = optimal_selection_probability(&pr, &hist, false).unwrap();
        assert!(sel.exact);
        assert_eq!(sel.large_n_r_q1, 0.5);

        let skew = ExperimentParams { q1: 0.8, q2: 0.5, ..pr };
        let sel = optimal_selection_probability(&skew, &hist, true).unwrap();
        assert!(sel.exact && sel.large_n_r_q1 == 0.5);

        // numeric path: golden section matches a fine-grid oracle
        let skew_small = ExperimentParams { n_units: 5, q1: 0.8, q2: 0.5, ..pr };
        let hist2 = JHistogram::from_counts(vec![0, 2, 1]);
        let sel = optimal_selection_probability(&skew_small, &hist2, false).unwrap();
        let mut grid_best = (f64::INFINITY, 0.0);
        let mut r = 1e-5;
        while r < 1.0 {
            let v = selection_objective(&skew_small, &hist2, r, Regime::LargeN);
            if v < grid_best.0 {
                grid_best = (v, r);
            }
            r += 1e-5;
        }
        assert!(
            (sel.large_n_r_q1 - grid_best.1).abs() < 2e-5,
            "golden {} vs grid {}",
            sel.large_n_r_q1,
            grid_best.1
        );
        // local optimality
        let v = selection_objective(&skew_small, &hist2, sel.large_n_r_q1, Regime::LargeN);
        for dr in [-1e-4, 1e-4] {
            assert!(v <= selection_objective(&skew_small, &hist2, sel.large_n_r_q1 + dr, Regime::LargeN));
        }
        // convergence to 1/2 as N grows
        let huge = ExperimentParams { n_units: 1_000_000_000, q1: 0.8, q2: 0.5, ..pr };
        let sel = optimal_selection_probability(&huge, &hist2, false).unwrap();
        assert!((sel.large_n_r_q1 - 0.5).abs() < 1e-3);
    }
}
