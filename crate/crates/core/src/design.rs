//! Designs (sets of decision points over a horizon) and the exposure
//! combinatorics they induce: governing points, exposure counts `J_t`,
//! pair overlaps, and the `J`-histogram that drives the worst-case risk.
//!
//! Time is 1-based throughout. A design always contains the point 1; the
//! sentinel `T + 1` closing the last interval is derived, never stored.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A randomization schedule: horizon `T` and decision points
/// `1 = t_0 < t_1 < ... < t_L <= T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub decision_points: Vec<usize>,
}

/// The four named schedules compared throughout: the independent design,
/// the blocked design with periods of length `p + 1`, and the two
/// closed-form minimax designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardDesign {
    Independent,
    Blocked,
    Star1,
    Star2,
}

impl std::fmt::Display for StandardDesign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StandardDesign::Independent => "independent",
            StandardDesign::Blocked => "blocked",
            StandardDesign::Star1 => "star1",
            StandardDesign::Star2 => "star2",
        };
        f.write_str(s)
    }
}

impl Design {
    /// Builds a design, enforcing the structural invariants.
    pub fn new(horizon: usize, decision_points: Vec<usize>) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::invalid("T", "horizon must be at least 1"));
        }
        if decision_points.first() != Some(&1) {
            return Err(Error::invalid(
                "decision_points",
                "first decision point must be exactly 1",
            ));
        }
        for w in decision_points.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(
                    "decision_points",
                    format!("points must be strictly increasing, found {} after {}", w[1], w[0]),
                ));
            }
        }
        if let Some(&last) = decision_points.last() {
            if last > horizon {
                return Err(Error::invalid(
                    "decision_points",
                    format!("point {last} exceeds horizon T={horizon}"),
                ));
            }
        }
        Ok(Design { horizon, decision_points })
    }

    /// Number of decision points minus one (the paper's `L`).
    pub fn num_intervals_l(&self) -> usize {
        self.decision_points.len() - 1
    }

    /// Parses and validates the design JSON file format
    /// `{"T": 16, "decision_points": [1,5,7,9,11,13]}`.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: Design = serde_json::from_str(s)?;
        Design::new(raw.horizon, raw.decision_points)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("design serialization cannot fail")
    }

    /// Constructs one of the four standard schedules.
    ///
    /// Star designs with `p = 0` degenerate to the independent design.
    /// Star designs whose horizon fails the divisibility requirement are
    /// rejected.
    pub fn standard(kind: StandardDesign, horizon: usize, order: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::invalid("T", "horizon must be at least 1"));
        }
        let p = order;
        match kind {
            StandardDesign::Independent => Design::new(horizon, (1..=horizon).collect()),
            StandardDesign::Blocked => {
                let mut points = Vec::new();
                let mut t = 1usize;
                while t + p <= horizon {
                    points.push(t);
                    t += p + 1;
                }
                Design::new(horizon, points)
            }
            StandardDesign::Star1 => {
                if p == 0 {
                    return Design::standard(StandardDesign::Independent, horizon, 0);
                }
                if horizon < 4 * p || (horizon - 4 * p) % p != 0 {
                    return Err(Error::Divisibility {
                        kind: "star1",
                        message: format!("T - 4p = {} must be a non-negative multiple of p = {p}", horizon as i64 - 4 * p as i64),
                    });
                }
                let k = (horizon - 4 * p) / p + 4;
                let mut points = vec![1];
                points.extend((2..=k - 2).map(|j| j * p + 1));
                Design::new(horizon, points)
            }
            StandardDesign::Star2 => {
                if p == 0 {
                    return Design::standard(StandardDesign::Independent, horizon, 0);
                }
                if horizon < 4 * p + 2 || (horizon - 4 * p - 2) % (p + 1) != 0 {
                    return Err(Error::Divisibility {
                        kind: "star2",
                        message: format!(
                            "T - 4p - 2 = {} must be a non-negative multiple of p + 1 = {}",
                            horizon as i64 - 4 * p as i64 - 2,
                            p + 1
                        ),
                    });
                }
                let k = (horizon - 4 * p - 2) / (p + 1) + 4;
                let mut points = vec![1];
                points.extend((2..=k - 2).map(|j| j * (p + 1)));
                Design::new(horizon, points)
            }
        }
    }
}

/// Feasibility of a design for carryover order `p`: `t_1 >= p + 2`,
/// `t_L <= T - p`, and `t_{l+1} - t_{l-1} >= p` for `l = 1..L` with the
/// sentinel `t_{L+1} = T + 1`. A design with no point beyond 1 passes
/// vacuously.
pub fn validate_candidate(design: &Design, p: usize) -> bool {
    let pts = &design.decision_points;
    let l = design.num_intervals_l();
    if l == 0 {
        return true;
    }
    if pts[1] < p + 2 {
        return false;
    }
    if pts[l] + p > design.horizon {
        return false;
    }
    for i in 1..=l {
        let next = if i + 1 <= l { pts[i + 1] } else { design.horizon + 1 };
        if next - pts[i - 1] < p {
            return false;
        }
    }
    true
}

/// A design paired with a carryover order; precomputes the governing
/// decision point of every time and answers exposure-count and overlap
/// queries in O(1).
#[derive(Debug, Clone)]
pub struct DecisionContext {
    design: Design,
    order: usize,
    /// For each t in 1..=T (index t-1), the index into `decision_points`
    /// of the governing point F(t).
    gov_index: Vec<usize>,
}

impl DecisionContext {
    pub fn new(design: Design, order: usize) -> Result<Self> {
        if order + 1 > design.horizon {
            return Err(Error::invalid(
                "p",
                format!("order p = {order} leaves no estimable period for T = {}", design.horizon),
            ));
        }
        let mut gov_index = Vec::with_capacity(design.horizon);
        let mut idx = 0;
        for t in 1..=design.horizon {
            while idx + 1 < design.decision_points.len() && design.decision_points[idx + 1] <= t {
                idx += 1;
            }
            gov_index.push(idx);
        }
        Ok(DecisionContext { design, order, gov_index })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn horizon(&self) -> usize {
        self.design.horizon
    }

    /// The governing decision point F(t).
    pub fn governing(&self, t: usize) -> usize {
        self.design.decision_points[self.gov_index[t - 1]]
    }

    /// The set F^p(t) of decision points governing the window
    /// `[t - p, t]`, as an inclusive index range into `decision_points`.
    fn governing_range(&self, t: usize) -> (usize, usize) {
        debug_assert!(t >= self.order + 1 && t <= self.design.horizon);
        (self.gov_index[t - self.order - 1], self.gov_index[t - 1])
    }

    /// Exposure count `J_t`: how many decision points govern `[t - p, t]`.
    pub fn exposure_count(&self, t: usize) -> usize {
        let (lo, hi) = self.governing_range(t);
        hi - lo + 1
    }

    /// Pair overlap `J°(t, t')`: size of the intersection of the two
    /// governing sets. Zero when the windows share no decision point.
    pub fn overlap_count(&self, t: usize, t2: usize) -> usize {
        let (lo_a, hi_a) = self.governing_range(t);
        let (lo_b, hi_b) = self.governing_range(t2);
        let lo = lo_a.max(lo_b);
        let hi = hi_a.min(hi_b);
        if hi >= lo {
            hi - lo + 1
        } else {
            0
        }
    }

    /// The J-histogram: for each `j` in `1..=p+1`, the number of times
    /// `J_t = j` plus the number of ordered pairs `t != t'` with
    /// `J°(t,t') = j`. Zero-overlap pairs are excluded (they contribute
    /// zero risk).
    pub fn j_histogram(&self) -> JHistogram {
        let p = self.order;
        let horizon = self.design.horizon;
        let mut counts = vec![0u64; p + 2];
        let ranges: Vec<(usize, usize)> =
            (p + 1..=horizon).map(|t| self.governing_range(t)).collect();
        for &(lo, hi) in &ranges {
            counts[hi - lo + 1] += 1;
        }
        for (i, &(lo_a, hi_a)) in ranges.iter().enumerate() {
            for &(lo_b, hi_b) in &ranges[i + 1..] {
                let lo = lo_a.max(lo_b);
                let hi = hi_a.min(hi_b);
                if hi >= lo {
                    // ordered pairs: (t, t') and (t', t) each count once
                    counts[hi - lo + 1] += 2;
                }
            }
        }
        JHistogram { counts }
    }
}

/// Counts of exposure levels: `counts[j]` is the paper's `J_j` mass at
/// level `j` (index 0 unused).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JHistogram {
    counts: Vec<u64>,
}

impl JHistogram {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        JHistogram { counts }
    }

    /// Mass at level `j` (0 for out-of-range `j`).
    pub fn count(&self, j: usize) -> u64 {
        self.counts.get(j).copied().unwrap_or(0)
    }

    /// Largest level with any mass.
    pub fn max_level(&self) -> usize {
        (1..self.counts.len()).rev().find(|&j| self.counts[j] > 0).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn ctx(points: &[usize], horizon: usize, p: usize) -> DecisionContext {
        DecisionContext::new(Design::new(horizon, points.to_vec()).unwrap(), p).unwrap()
    }

    /// Definition-level recomputation of F^p(t) used as an oracle for the
    /// index-interval fast path.
    fn governing_set_by_definition(design: &Design, p: usize, t: usize) -> HashSet<usize> {
        let mut set = HashSet::new();
        for i in t.saturating_sub(p).max(1)..=t {
            let gov = *design.decision_points.iter().filter(|&&d| d <= i).max().unwrap();
            set.insert(gov);
        }
        set
    }

    #[test]
    fn golden_designs_table_rows() {
        let t16p2 = |kind| Design::standard(kind, 16, 2).unwrap().decision_points;
        assert_eq!(t16p2(StandardDesign::Star1), vec![1, 5, 7, 9, 11, 13]);
        assert_eq!(t16p2(StandardDesign::Star2), vec![1, 6, 9, 12]);
        assert_eq!(t16p2(StandardDesign::Independent), (1..=16).collect::<Vec<_>>());
        assert_eq!(t16p2(StandardDesign::Blocked), vec![1, 4, 7, 10, 13]);
    }

    #[test]
    fn independent_design_p0() {
        let d = Design::standard(StandardDesign::Independent, 4, 0).unwrap();
        assert_eq!(d.decision_points, vec![1, 2, 3, 4]);
        let d = Design::standard(StandardDesign::Star1, 7, 0).unwrap();
        assert_eq!(d.decision_points, (1..=7).collect::<Vec<_>>());
    }

    #[test]
    fn star_divisibility_errors() {
        assert!(matches!(
            Design::standard(StandardDesign::Star1, 15, 2),
            Err(Error::Divisibility { kind: "star1", .. })
        ));
        assert!(matches!(
            Design::standard(StandardDesign::Star2, 16, 3),
            Err(Error::Divisibility { kind: "star2", .. })
        ));
    }

    #[test]
    fn exposure_count_examples() {
        let c = ctx(&[1, 5, 7, 9, 11, 13], 16, 2);
        assert_eq!(c.exposure_count(6), 2); // F over {4,5,6} = {1, 5}
        assert_eq!(c.exposure_count(13), 2); // F over {11,12,13} = {11, 13}
        // level 3 needs decision points packed closer than p
        let tight = ctx(&[1, 4, 5], 8, 2);
        assert_eq!(tight.exposure_count(5), 3); // F over {3,4,5} = {1,4,5}
        let ind = ctx(&[1, 2, 3, 4], 4, 0);
        for t in 1..=4 {
            assert_eq!(ind.exposure_count(t), 1);
        }
    }

    #[test]
    fn overlap_count_examples() {
        let c = ctx(&[1, 5, 7, 9, 11, 13], 16, 2);
        assert_eq!(c.overlap_count(5, 9), 0); // {1,5} vs {7,9}
        assert_eq!(c.overlap_count(7, 8), 2); // {5,7} vs {5,7}
        assert_eq!(c.overlap_count(13, 13), c.exposure_count(13));
        assert_eq!(c.overlap_count(5, 9), c.overlap_count(9, 5));
    }

    #[test]
    fn j_histogram_independent_p0() {
        let c = ctx(&[1, 2, 3, 4], 4, 0);
        let h = c.j_histogram();
        assert_eq!(h.count(1), 4);
        assert_eq!(h.count(2), 0);
    }

    #[test]
    fn j_histogram_small_example_by_hand() {
        // design {1,3}, T=4, p=1: F^1(2)={1}, F^1(3)={1,3}, F^1(4)={3}.
        let c = ctx(&[1, 3], 4, 1);
        let h = c.j_histogram();
        // singles: J_2=1, J_3=2, J_4=1 -> two at level 1, one at level 2
        // ordered pairs: (2,3),(3,2),(3,4),(4,3) at level 1; (2,4) disjoint
        assert_eq!(h.count(1), 2 + 4);
        assert_eq!(h.count(2), 1);
    }

    #[test]
    fn validate_candidate_examples() {
        let star1 = Design::new(16, vec![1, 5, 7, 9, 11, 13]).unwrap();
        assert!(validate_candidate(&star1, 2));
        let ind = Design::new(16, (1..=16).collect()).unwrap();
        assert!(!validate_candidate(&ind, 2)); // t_1 = 2 < p + 2
        let d = Design::new(8, vec![1, 4]).unwrap();
        assert!(validate_candidate(&d, 0));
    }

    #[test]
    fn json_round_trip_and_rejects() {
        let d = Design::from_json_str(r#"{"T": 16, "decision_points": [1,5,7,9,11,13]}"#).unwrap();
        assert_eq!(d.horizon, 16);
        let back = Design::from_json_str(&d.to_json_string()).unwrap();
        assert_eq!(back, d);

        let err = Design::from_json_str(r#"{"T": 16, "decision_points": [2,5]}"#).unwrap_err();
        assert!(err.to_string().contains("decision_points"));
        let err = Design::from_json_str(r#"{"T": 4, "decision_points": [1,3,3]}"#).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"));
        let err = Design::from_json_str(r#"{"T": 4, "decision_points": [1,5]}"#).unwrap_err();
        assert!(err.to_string().contains("exceeds horizon"));
    }

    proptest! {
        #[test]
        fn governing_matches_definition(
            horizon in 2usize..=20,
            p in 0usize..=3,
            mask in 0u32..(1 << 19),
        ) {
            let mut points = vec![1usize];
            for t in 2..=horizon {
                if mask & (1 << (t - 2)) != 0 {
                    points.push(t);
                }
            }
            let design = Design::new(horizon, points).unwrap();
            prop_assume!(p + 1 <= horizon);
            let c = DecisionContext::new(design.clone(), p).unwrap();

            for t in 1..=horizon {
                let gov = c.governing(t);
                prop_assert!(design.decision_points.contains(&gov));
                prop_assert!(gov <= t);
                prop_assert_eq!(gov == t, design.decision_points.contains(&t));
            }
            for t in p + 1..=horizon {
                let set = governing_set_by_definition(&design, p, t);
                prop_assert_eq!(c.exposure_count(t), set.len());
                prop_assert!(c.exposure_count(t) >= 1 && c.exposure_count(t) <= p + 1);
                for t2 in p + 1..=horizon {
                    let set2 = governing_set_by_definition(&design, p, t2);
                    prop_assert_eq!(c.overlap_count(t, t2), set.intersection(&set2).count());
                    prop_assert_eq!(c.overlap_count(t, t2), c.overlap_count(t2, t));
                    prop_assert!(c.overlap_count(t, t2) <= c.exposure_count(t).min(c.exposure_count(t2)));
                }
            }

            // histogram equals the oracle's direct double loop
            let h = c.j_histogram();
            let mut singles_total = 0u64;
            for j in 1..=p + 1 {
                let singles = (p + 1..=horizon).filter(|&t| c.exposure_count(t) == j).count() as u64;
                let pairs = {
                    let mut n = 0u64;
                    for t in p + 1..=horizon {
                        for t2 in p + 1..=horizon {
                            if t != t2 && c.overlap_count(t, t2) == j {
                                n += 1;
                            }
                        }
                    }
                    n
                };
                prop_assert_eq!(h.count(j), singles + pairs);
                singles_total += singles;
            }
            prop_assert_eq!(singles_total as usize, horizon - p);
        }
    }
}
