//! The two-stage assignment mechanism and outcome realization.
//!
//! At every decision point the treated probability `Q` is drawn from
//! `{q1, q2}` and each unit's assignment is drawn Bernoulli(Q),
//! independently across units; both persist until the next decision
//! point. Outcomes come from pluggable [`OutcomeModel`]s evaluated on the
//! realized probability and treatment paths.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::optim::{ExperimentParams, ProbLevel};
use crate::{Error, Result};

/// Stable seed derivation: each (purpose, index, ...) stream gets its own
/// generator so results do not depend on scheduling or worker count.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    fn splitmix64(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut x = splitmix64(master);
    for &s in stream {
        x = splitmix64(x ^ s.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    x
}

pub fn rng_for(master: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

/// First-stage/second-stage randomization parameters tied to a design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentPolicy {
    pub design: Design,
    pub q1: f64,
    pub q2: f64,
    pub r_q1: f64,
}

impl AssignmentPolicy {
    pub fn new(design: Design, q1: f64, q2: f64, r_q1: f64) -> Result<Self> {
        for (name, v) in [("q1", q1), ("q2", q2), ("r_q1", r_q1)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid("policy", format!("{name} must lie in (0,1), got {v}")));
            }
        }
        Ok(AssignmentPolicy { design, q1, q2, r_q1 })
    }

    pub fn from_params(params: &ExperimentParams, design: Design) -> Result<Self> {
        params.validate()?;
        AssignmentPolicy::new(design, params.q1, params.q2, params.r_q1)
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

    /// Maps a realized treated probability back to its level.
    pub fn level_of(&self, q: f64) -> Option<ProbLevel> {
        if q == self.q1 {
            Some(ProbLevel::Q1)
        } else if q == self.q2 {
            Some(ProbLevel::Q2)
        } else {
            None
        }
    }
}

/// One realized experiment: treated probabilities `Q_t`, the assignment
/// matrix `Z`, and observed outcomes `Y`. Time is 1-based; units are
/// 0-based in code and 1-based in files.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_units: usize,
    pub horizon: usize,
    /// Realized treated probability per time, length T.
    pub q: Vec<f64>,
    /// Row-major N x T assignment matrix.
    z: Vec<bool>,
    /// Row-major N x T outcome matrix.
    y: Vec<f64>,
}

impl Trajectory {
    fn idx(&self, unit: usize, t: usize) -> usize {
        debug_assert!(unit < self.n_units && (1..=self.horizon).contains(&t));
        unit * self.horizon + (t - 1)
    }

    pub fn z(&self, unit: usize, t: usize) -> bool {
        self.z[self.idx(unit, t)]
    }

    pub fn y(&self, unit: usize, t: usize) -> f64 {
        self.y[self.idx(unit, t)]
    }

    pub fn q_at(&self, t: usize) -> f64 {
        self.q[t - 1]
    }

    /// Scales every outcome in place (used by linearity checks).
    pub fn scale_outcomes(&mut self, c: f64) {
        for y in &mut self.y {
            *y *= c;
        }
    }
}

/// Potential outcomes as a function of the last `m + 1` entries of the
/// probability and assignment paths (clipped at the series start, so the
/// paths have length `min(t, m + 1)` with the last entry at time `t`).
pub trait OutcomeModel: Sync {
    /// Carryover order `m`.
    fn order(&self) -> usize;

    /// Potential outcome of `unit` at time `t` under the given paths.
    fn eval(&self, unit: usize, t: usize, q_path: &[f64], z_path: &[bool]) -> f64;
}

/// Worst-case outcomes: `+B` under treatment, `-B` under control,
/// regardless of the probability path. Order 0.
#[derive(Debug, Clone)]
pub struct Model1 {
    pub bound: f64,
}

impl OutcomeModel for Model1 {
    fn order(&self) -> usize {
        0
    }

    fn eval(&self, _unit: usize, _t: usize, _q_path: &[f64], z_path: &[bool]) -> f64 {
        if *z_path.last().expect("non-empty path") {
            self.bound
        } else {
            -self.bound
        }
    }
}

/// Linear outcome model with time fixed effects, per-lag effects of the
/// treated probability, the assignment, and their interaction, plus
/// frozen unit-time noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model2Spec {
    /// Carryover order m.
    pub order: usize,
    /// Per-lag coefficients, length m + 1 (lag 0 first).
    pub delta_q: Vec<f64>,
    pub delta_z: Vec<f64>,
    pub delta_qz: Vec<f64>,
    pub noise_sd: f64,
}

impl Model2Spec {
    /// All-ones coefficients, unit noise: the configuration used by the
    /// reported simulations.
    pub fn with_defaults(order: usize) -> Self {
        Model2Spec {
            order,
            delta_q: vec![1.0; order + 1],
            delta_z: vec![1.0; order + 1],
            delta_qz: vec![1.0; order + 1],
            noise_sd: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta_q", &self.delta_q), ("delta_z", &self.delta_z), ("delta_qz", &self.delta_qz)] {
            if v.len() != self.order + 1 {
                return Err(Error::invalid(
                    "model2",
                    format!("{name} must have length m + 1 = {}", self.order + 1),
                ));
            }
        }
        if self.noise_sd < 0.0 {
            return Err(Error::invalid("model2", "noise_sd must be non-negative"));
        }
        Ok(())
    }
}

/// A frozen draw of Model 2: the time fixed effect `alpha_t = log t` plus
/// one noise table shared by every potential-outcome cell of a unit-time
/// (noise is additive and path-independent, so it cancels in contrasts).
#[derive(Debug, Clone)]
pub struct Model2 {
    spec: Model2Spec,
    q1: f64,
    horizon: usize,
    noise: Vec<f64>,
}

impl Model2 {
    pub fn new(spec: Model2Spec, q1: f64, n_units: usize, horizon: usize, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let noise = (0..n_units * horizon)
            .map(|_| {
                if spec.noise_sd == 0.0 {
                    0.0
                } else {
                    spec.noise_sd * standard_normal(rng)
                }
            })
            .collect();
        Ok(Model2 { spec, q1, horizon, noise })
    }

    pub fn spec(&self) -> &Model2Spec {
        &self.spec
    }
}

/// Box–Muller standard normal draw.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            let v: f64 = rng.gen();
            return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
        }
    }
}

impl OutcomeModel for Model2 {
    fn order(&self) -> usize {
        self.spec.order
    }

    fn eval(&self, unit: usize, t: usize, q_path: &[f64], z_path: &[bool]) -> f64 {
        debug_assert_eq!(q_path.len(), z_path.len());
        debug_assert_eq!(q_path.len(), (self.spec.order + 1).min(t));
        let len = q_path.len();
        let mut v = (t as f64).ln() + self.noise[unit * self.horizon + (t - 1)];
        for lag in 0..=self.spec.order {
            // lags reaching before the series start contribute nothing
            if lag >= len {
                break;
            }
            let pos = len - 1 - lag;
            let at_q1 = q_path[pos] == self.q1;
            let treated = z_path[pos];
            if at_q1 {
                v += self.spec.delta_q[lag];
            }
            if treated {
                v += self.spec.delta_z[lag];
            }
            if at_q1 && treated {
                v += self.spec.delta_qz[lag];
            }
        }
        v
    }
}

/// Potential outcomes specified only on constant paths: a value per
/// `(unit, time, probability level, arm)`. Non-constant paths evaluate to
/// 0; the Horvitz–Thompson machinery never weights them.
#[derive(Debug, Clone)]
pub struct ConstantPathTable {
    pub order: usize,
    pub n_units: usize,
    pub horizon: usize,
    pub q1: f64,
    pub q2: f64,
    /// `[q_level][z]` -> row-major N x T values.
    values: [[Vec<f64>; 2]; 2],
}

impl ConstantPathTable {
    pub fn from_fn(
        order: usize,
        n_units: usize,
        horizon: usize,
        q1: f64,
        q2: f64,
        mut f: impl FnMut(usize, usize, ProbLevel, bool) -> f64,
    ) -> Self {
        let mut values = [
            [vec![0.0; n_units * horizon], vec![0.0; n_units * horizon]],
            [vec![0.0; n_units * horizon], vec![0.0; n_units * horizon]],
        ];
        for (li, level) in ProbLevel::BOTH.iter().enumerate() {
            for (zi, z) in [false, true].iter().enumerate() {
                for unit in 0..n_units {
                    for t in 1..=horizon {
                        values[li][zi][unit * horizon + t - 1] = f(unit, t, *level, *z);
                    }
                }
            }
        }
        ConstantPathTable { order, n_units, horizon, q1, q2, values }
    }

    /// The worst-case corner table: a constant `signs[level][z] * bound`
    /// in every cell.
    pub fn corner(
        order: usize,
        n_units: usize,
        horizon: usize,
        q1: f64,
        q2: f64,
        signs: [[f64; 2]; 2],
        bound: f64,
    ) -> Self {
        ConstantPathTable::from_fn(order, n_units, horizon, q1, q2, |_, _, level, z| {
            let li = if level == ProbLevel::Q1 { 0 } else { 1 };
            signs[li][usize::from(z)] * bound
        })
    }

    pub fn value(&self, unit: usize, t: usize, level: ProbLevel, z: bool) -> f64 {
        let li = if level == ProbLevel::Q1 { 0 } else { 1 };
        self.values[li][usize::from(z)][unit * self.horizon + t - 1]
    }

    /// Population direct effect at probability level `q` over
    /// `t = p+1..=T`.
    pub fn direct_effect(&self, level: ProbLevel) -> f64 {
        let p = self.order;
        let mut total = 0.0;
        for unit in 0..self.n_units {
            for t in p + 1..=self.horizon {
                total += self.value(unit, t, level, true) - self.value(unit, t, level, false);
            }
        }
        total / (self.n_units * (self.horizon - p)) as f64
    }

    /// Population spillover effect at arm `z` over `t = p+1..=T`.
    pub fn spillover_effect(&self, z: bool) -> f64 {
        let p = self.order;
        let mut total = 0.0;
        for unit in 0..self.n_units {
            for t in p + 1..=self.horizon {
                total += self.value(unit, t, ProbLevel::Q1, z) - self.value(unit, t, ProbLevel::Q2, z);
            }
        }
        total / (self.n_units * (self.horizon - p)) as f64
    }
}

impl OutcomeModel for ConstantPathTable {
    fn order(&self) -> usize {
        self.order
    }

    fn eval(&self, unit: usize, t: usize, q_path: &[f64], z_path: &[bool]) -> f64 {
        let q = *q_path.last().expect("non-empty path");
        let z = *z_path.last().expect("non-empty path");
        if q_path.iter().any(|&x| x != q) || z_path.iter().any(|&x| x != z) {
            return 0.0;
        }
        let level = if q == self.q1 {
            ProbLevel::Q1
        } else {
            debug_assert_eq!(q, self.q2);
            ProbLevel::Q2
        };
        self.value(unit, t, level, z)
    }
}

/// Fully general potential outcomes: one value per `(unit, time,
/// probability path, assignment path)` with paths of length
/// `min(t, m + 1)`. Used by the enumeration oracle for misspecification
/// checks.
#[derive(Debug, Clone)]
pub struct PathTable {
    pub order: usize,
    pub n_units: usize,
    pub horizon: usize,
    pub q1: f64,
    values: Vec<f64>,
}

impl PathTable {
    fn index(&self, unit: usize, t: usize, q_bits: usize, z_bits: usize) -> usize {
        let w = self.order + 1;
        ((unit * self.horizon + (t - 1)) << (2 * w)) | (q_bits << w) | z_bits
    }

    /// Random table bounded by `bound`.
    pub fn random(
        order: usize,
        n_units: usize,
        horizon: usize,
        q1: f64,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = order + 1;
        let len = (n_units * horizon) << (2 * w);
        let values = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        PathTable { order, n_units, horizon, q1, values }
    }
}

impl OutcomeModel for PathTable {
    fn order(&self) -> usize {
        self.order
    }

    fn eval(&self, unit: usize, t: usize, q_path: &[f64], z_path: &[bool]) -> f64 {
        let mut q_bits = 0usize;
        let mut z_bits = 0usize;
        for (&q, &z) in q_path.iter().zip(z_path) {
            q_bits = (q_bits << 1) | usize::from(q == self.q1);
            z_bits = (z_bits << 1) | usize::from(z);
        }
        self.values[self.index(unit, t, q_bits, z_bits)]
    }
}

/// Draws one realization of the assignment mechanism: `Q` per time and
/// the N x T assignment matrix.
pub fn draw_assignment(policy: &AssignmentPolicy, n_units: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let horizon = policy.design.horizon;
    let mut q = vec![0.0; horizon];
    let mut z = vec![false; n_units * horizon];
    let points = &policy.design.decision_points;
    for (k, &start) in points.iter().enumerate() {
        let end = if k + 1 < points.len() { points[k + 1] - 1 } else { horizon };
        let level_q = if rng.gen::<f64>() < policy.r_q1 { policy.q1 } else { policy.q2 };
        let draws: Vec<bool> = (0..n_units).map(|_| rng.gen::<f64>() < level_q).collect();
        for t in start..=end {
            q[t - 1] = level_q;
            for (unit, &d) in draws.iter().enumerate() {
                z[unit * horizon + (t - 1)] = d;
            }
        }
    }
    (q, z)
}

/// Fills the outcome matrix from the realized paths, clipping path
/// windows at the series start.
pub fn realize_outcomes(model: &dyn OutcomeModel, n_units: usize, q: &[f64], z: &[bool]) -> Vec<f64> {
    let horizon = q.len();
    let m = model.order();
    let mut y = vec![0.0; n_units * horizon];
    for unit in 0..n_units {
        for t in 1..=horizon {
            let from = t.saturating_sub(m + 1);
            let q_path = &q[from..t];
            let z_path = &z[unit * horizon + from..unit * horizon + t];
            y[unit * horizon + (t - 1)] = model.eval(unit, t, q_path, z_path);
        }
    }
    y
}

/// One seeded experiment: assignment draw plus outcome realization.
pub fn run_trial(policy: &AssignmentPolicy, model: &dyn OutcomeModel, n_units: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q, z) = draw_assignment(policy, n_units, &mut rng);
    let y = realize_outcomes(model, n_units, &q, &z);
    Trajectory { n_units, horizon: policy.design.horizon, q, z, y }
}

/// Builds a trajectory from explicit parts (used by the oracle, which
/// enumerates assignments instead of drawing them).
pub fn trajectory_from_parts(n_units: usize, q: Vec<f64>, z: Vec<bool>, y: Vec<f64>) -> Trajectory {
    let horizon = q.len();
    debug_assert_eq!(z.len(), n_units * horizon);
    debug_assert_eq!(y.len(), n_units * horizon);
    Trajectory { n_units, horizon, q, z, y }
}

/// One center of a multi-center experiment.
#[derive(Debug, Clone)]
pub struct CenterSpec {
    pub label: String,
    pub n_units: usize,
    pub policy: AssignmentPolicy,
}

/// Unit-share weights `pi_g = N_g / N`.
pub fn center_weights(centers: &[CenterSpec]) -> Vec<f64> {
    let total: usize = centers.iter().map(|c| c.n_units).sum();
    centers.iter().map(|c| c.n_units as f64 / total as f64).collect()
}

/// Runs every center independently with per-center derived seeds;
/// deterministic in the master seed regardless of scheduling.
pub fn run_multicenter(
    centers: &[CenterSpec],
    models: &[&dyn OutcomeModel],
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    if centers.is_empty() {
        return Err(Error::invalid("centers", "need at least one center"));
    }
    if centers.len() != models.len() {
        return Err(Error::Mismatch(format!("{} centers but {} models", centers.len(), models.len())));
    }
    Ok(centers
        .iter()
        .zip(models)
        .enumerate()
        .map(|(g, (center, model))| {
            let seed = derive_seed(master_seed, &[0x6365_6e74, g as u64]);
            run_trial(&center.policy, *model, center.n_units, seed)
        })
        .collect())
}

/// Writes the fixed trajectory CSV format `unit,time,q,z,y` (units and
/// times 1-based). Floats are written in shortest round-trip form, so a
/// write/read cycle is bit-exact.
pub fn write_trajectory_csv<W: std::io::Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "time", "q", "z", "y"])?;
    for unit in 0..traj.n_units {
        for t in 1..=traj.horizon {
            w.write_record(&[
                (unit + 1).to_string(),
                t.to_string(),
                traj.q_at(t).to_string(),
                u8::from(traj.z(unit, t)).to_string(),
                traj.y(unit, t).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the trajectory CSV format, checking the (unit, time) grid is
/// complete and consistent.
pub fn read_trajectory_csv<R: std::io::Read>(input: R) -> Result<Trajectory> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["unit", "time", "q", "z", "y"] {
        return Err(Error::invalid("csv", format!("expected header unit,time,q,z,y, got {headers:?}")));
    }
    let mut rows: Vec<(usize, usize, f64, bool, f64)> = Vec::new();
    let mut n_units = 0usize;
    let mut horizon = 0usize;
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::invalid("csv", format!("short record: {record:?}")))
        };
        let unit: usize = field(0)?.parse().map_err(|e| Error::invalid("unit", format!("{e}")))?;
        let time: usize = field(1)?.parse().map_err(|e| Error::invalid("time", format!("{e}")))?;
        let q: f64 = field(2)?.parse().map_err(|e| Error::invalid("q", format!("{e}")))?;
        let z: u8 = field(3)?.parse().map_err(|e| Error::invalid("z", format!("{e}")))?;
        if z > 1 {
            return Err(Error::invalid("z", format!("assignment must be 0 or 1, got {z}")));
        }
        let y: f64 = field(4)?.parse().map_err(|e| Error::invalid("y", format!("{e}")))?;
        if unit == 0 || time == 0 {
            return Err(Error::invalid("csv", "unit and time are 1-based"));
        }
        n_units = n_units.max(unit);
        horizon = horizon.max(time);
        rows.push((unit - 1, time, q, z == 1, y));
    }
    if rows.len() != n_units * horizon {
        return Err(Error::invalid(
            "csv",
            format!(
                "expected {} rows for {n_units} units x {horizon} times, got {}",
                n_units * horizon,
                rows.len()
            ),
        ));
    }
    let mut q = vec![f64::NAN; horizon];
    let mut z = vec![false; n_units * horizon];
    let mut y = vec![f64::NAN; n_units * horizon];
    let mut seen = vec![false; n_units * horizon];
    for (unit, time, qv, zv, yv) in rows {
        let idx = unit * horizon + (time - 1);
        if seen[idx] {
            return Err(Error::invalid("csv", format!("duplicate row for unit {} time {time}", unit + 1)));
        }
        seen[idx] = true;
        if q[time - 1].is_nan() {
            q[time - 1] = qv;
        } else if q[time - 1] != qv {
            return Err(Error::invalid("q", format!("conflicting treated probabilities at time {time}")));
        }
        z[idx] = zv;
        y[idx] = yv;
    }
    Ok(Trajectory { n_units, horizon, q, z, y })
}
