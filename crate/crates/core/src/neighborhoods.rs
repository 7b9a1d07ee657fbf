//! Neighborhood machinery: the weighted distance metric, the recursive radius
//! ladder, residual statistics and the two confidence measures.
//!
//! A neighborhood `B(x, r)` collects every knowledge-base member at the same
//! assessment index whose weighted distance to `x` is at most `r` (the radius
//! is inclusive, so distance ties are all included). The ladder starts at the
//! smallest radius containing three members and each subsequent rung is the
//! smallest radius holding strictly more members than the previous one.

use thiserror::Error;

use crate::domain::{AssessmentSchedule, FeatureVector, PoolEntry};

#[derive(Debug, Error, PartialEq)]
pub enum NeighborhoodError {
    #[error("feature vectors have different lengths ({left} vs {right}); cross-k distance is undefined")]
    DimensionMismatch { left: usize, right: usize },
    #[error("pool holds {available} members; at least {required} required")]
    InsufficientNeighbors { available: usize, required: usize },
    #[error("epsilon must be positive, got {epsilon}")]
    InvalidEpsilon { epsilon: f64 },
    #[error("confidence threshold must be <= 1, got {q_th}")]
    InvalidThreshold { q_th: f64 },
}

/// Minimum members before a neighborhood's sample variance is trusted.
pub const MIN_NEIGHBORS: usize = 3;

/// Confidence parameters: the desired confidence interval `epsilon` (in
/// normalized score units) and the stopping threshold `q_th`.
///
/// `q_th` may be any value `<= 1`; the confidence itself is unbounded below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    pub epsilon: f64,
    pub q_th: f64,
}

impl ConfidenceParams {
    pub fn new(epsilon: f64, q_th: f64) -> Result<Self, NeighborhoodError> {
        if !(epsilon > 0.0) {
            return Err(NeighborhoodError::InvalidEpsilon { epsilon });
        }
        if !(q_th <= 1.0) {
            return Err(NeighborhoodError::InvalidThreshold { q_th });
        }
        Ok(Self { epsilon, q_th })
    }
}

/// Weighted L1 distance between two same-length feature vectors, normalized by
/// the prefix weight sum. Symmetric, non-negative, zero iff equal, and a true
/// metric (scaled L1).
pub fn distance(
    x_i: FeatureVector<'_>,
    x_j: FeatureVector<'_>,
    schedule: &AssessmentSchedule,
) -> Result<f64, NeighborhoodError> {
    if x_i.k() != x_j.k() {
        return Err(NeighborhoodError::DimensionMismatch {
            left: x_i.k(),
            right: x_j.k(),
        });
    }
    let k = x_i.k();
    let mut num = 0.0;
    for ((a, b), desc) in x_i
        .entries()
        .iter()
        .zip(x_j.entries())
        .zip(schedule.assessments())
    {
        num += desc.weight * (a - b).abs();
    }
    Ok(num / schedule.prefix_weight(k))
}

/// Sample mean and (n-1)-denominator sample variance of a residual list.
pub fn neighborhood_stats(members: &[f64]) -> Result<(f64, f64), NeighborhoodError> {
    let n = members.len();
    if n < 2 {
        return Err(NeighborhoodError::InsufficientNeighbors {
            available: n,
            required: 2,
        });
    }
    let mean = members.iter().sum::<f64>() / n as f64;
    let variance = members.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok((mean, variance))
}

/// Confidence on a residual prediction: `q = 1 - variance / epsilon^2`.
///
/// Not floored at zero; `q` equals 1 exactly when the variance is zero.
pub fn confidence(variance: f64, epsilon: f64) -> f64 {
    debug_assert!(epsilon > 0.0);
    1.0 - variance / (epsilon * epsilon)
}

/// Classification-setting confidence: `q_bin = 1 - e^{-d} * variance / epsilon^2`
/// where `d` is the distance from the predicted score to the class threshold
/// (for several thresholds, to the nearest one). Always `>= q`.
pub fn binary_confidence(variance: f64, epsilon: f64, z_hat: f64, z_th: f64) -> f64 {
    binary_confidence_with_distance(variance, epsilon, (z_hat - z_th).abs())
}

/// `q_bin` with the threshold distance supplied directly.
pub fn binary_confidence_with_distance(variance: f64, epsilon: f64, d: f64) -> f64 {
    debug_assert!(epsilon > 0.0);
    debug_assert!(d >= 0.0);
    1.0 - (-d).exp() * variance / (epsilon * epsilon)
}

/// One candidate neighborhood: a rung of the radius ladder with its residual
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub radius: f64,
    /// Indices into the pool, in ascending (distance, pool index) order.
    pub member_indices: Vec<usize>,
    pub mean: f64,
    pub variance: f64,
}

impl Neighborhood {
    pub fn member_count(&self) -> usize {
        self.member_indices.len()
    }

    pub fn confidence(&self, epsilon: f64) -> f64 {
        confidence(self.variance, epsilon)
    }
}

/// The full radius ladder around one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodLadder {
    rungs: Vec<Neighborhood>,
}

impl NeighborhoodLadder {
    /// Assemble a ladder from externally built rungs (ascending radii).
    pub fn from_rungs(rungs: Vec<Neighborhood>) -> Self {
        Self { rungs }
    }

    pub fn rungs(&self) -> &[Neighborhood] {
        &self.rungs
    }

    pub fn len(&self) -> usize {
        self.rungs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rungs.is_empty()
    }

    /// Rung counts, smallest radius first.
    pub fn member_counts(&self) -> Vec<usize> {
        self.rungs.iter().map(Neighborhood::member_count).collect()
    }
}

/// Build the recursive radius ladder of `center` over a same-`k` pool.
///
/// The first rung is the smallest radius containing at least
/// [`MIN_NEIGHBORS`] members; each later rung is the smallest radius with
/// strictly more members, until the whole pool is included or `m_max` rungs
/// have been produced.
pub fn radius_ladder(
    center: FeatureVector<'_>,
    pool: &[PoolEntry<'_>],
    schedule: &AssessmentSchedule,
    m_max: Option<usize>,
) -> Result<NeighborhoodLadder, NeighborhoodError> {
    if pool.len() < MIN_NEIGHBORS {
        return Err(NeighborhoodError::InsufficientNeighbors {
            available: pool.len(),
            required: MIN_NEIGHBORS,
        });
    }
    let mut by_distance: Vec<(f64, usize)> = Vec::with_capacity(pool.len());
    for (idx, entry) in pool.iter().enumerate() {
        by_distance.push((distance(center, entry.features, schedule)?, idx));
    }
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut rungs = Vec::new();
    let n = pool.len();
    let mut cut = MIN_NEIGHBORS - 1; // index of the last member of the candidate rung
    loop {
        // Inclusive radius: extend across ties so every equidistant member joins.
        while cut + 1 < n && by_distance[cut + 1].0 == by_distance[cut].0 {
            cut += 1;
        }
        let member_indices: Vec<usize> = by_distance[..=cut].iter().map(|(_, i)| *i).collect();
        let residuals: Vec<f64> = member_indices
            .iter()
            .map(|&i| pool[i].residual)
            .collect();
        let (mean, variance) = neighborhood_stats(&residuals)?;
        rungs.push(Neighborhood {
            radius: by_distance[cut].0,
            member_indices,
            mean,
            variance,
        });
        if cut + 1 >= n || m_max.is_some_and(|m| rungs.len() >= m) {
            break;
        }
        cut += 1;
    }
    Ok(NeighborhoodLadder { rungs })
}

/// Index and rung with the highest confidence, i.e. the smallest sample
/// variance; ties go to the smaller radius (fewer, closer neighbors).
pub fn select_best(ladder: &NeighborhoodLadder) -> (usize, &Neighborhood) {
    let mut best = 0;
    for (i, rung) in ladder.rungs.iter().enumerate().skip(1) {
        if rung.variance < ladder.rungs[best].variance {
            best = i;
        }
    }
    (best, &ladder.rungs[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AssessmentDesc, AssessmentKind, AssessmentSchedule, StudentRecord};

    fn schedule(weights: &[f64]) -> AssessmentSchedule {
        AssessmentSchedule::new(
            weights
                .iter()
                .enumerate()
                .map(|(i, &w)| AssessmentDesc {
                    id: format!("a{i}"),
                    kind: AssessmentKind::TakeHome,
                    topic: format!("t{i}"),
                    weight: w,
                })
                .collect(),
        )
        .unwrap()
    }

    fn fv(entries: &[f64]) -> FeatureVector<'_> {
        FeatureVector::new(entries)
    }

    #[test]
    fn distance_hand_values() {
        let s = schedule(&[0.2, 0.4, 0.4]);
        assert_eq!(
            distance(fv(&[1.0, 0.5]), fv(&[1.0, 0.5]), &s).unwrap(),
            0.0
        );
        let d = distance(fv(&[1.0, 0.5]), fv(&[0.0, 0.5]), &s).unwrap();
        assert!((d - 0.2 / 0.6).abs() < 1e-12);

        let eq = schedule(&[0.5, 0.5]);
        let d = distance(fv(&[1.0, 0.0]), fv(&[0.0, 1.0]), &eq).unwrap();
        assert!((d - 1.0).abs() < 1e-12);

        assert!(matches!(
            distance(fv(&[1.0]), fv(&[1.0, 2.0]), &s),
            Err(NeighborhoodError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn stats_hand_values() {
        let (mean, var) = neighborhood_stats(&[0.2, 0.4, 0.6]).unwrap();
        assert!((mean - 0.4).abs() < 1e-12);
        assert!((var - 0.04).abs() < 1e-12);
        let (_, var) = neighborhood_stats(&[0.3, 0.3, 0.3, 0.3]).unwrap();
        assert_eq!(var, 0.0);
        assert!(neighborhood_stats(&[0.1]).is_err());
    }

    #[test]
    fn stats_match_two_pass_reference_on_random_sets() {
        // Independent two-pass reference, separate accumulation code path.
        fn reference(values: &[f64]) -> (f64, f64) {
            let n = values.len() as f64;
            let mut total = 0.0;
            for v in values {
                total += v;
            }
            let mean = total / n;
            let mut ss = 0.0;
            for v in values {
                ss += (v - mean) * (v - mean);
            }
            (mean, ss / (n - 1.0))
        }
        let mut state = 0x5eed_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..1000 {
            let n = 2 + (next().abs() * 20.0) as usize;
            let values: Vec<f64> = (0..n).map(|_| next()).collect();
            let (mean, var) = neighborhood_stats(&values).unwrap();
            let (want_mean, want_var) = reference(&values);
            assert_eq!(mean, want_mean);
            assert!((var - want_var).abs() < 1e-15);
        }
    }

    #[test]
    fn confidence_hand_values() {
        assert_eq!(confidence(0.0, 0.4), 1.0);
        assert!((confidence(0.04, 0.4) - 0.75).abs() < 1e-12);
        assert!((confidence(0.25, 0.5)).abs() < 1e-12);
        // Negative values are allowed.
        assert!(confidence(1.0, 0.5) < 0.0);
    }

    #[test]
    fn binary_confidence_hand_values() {
        // d = 0 collapses to the unmodified confidence.
        assert_eq!(
            binary_confidence(0.04, 0.4, 0.7, 0.7),
            confidence(0.04, 0.4)
        );
        // d = ln 2 halves the variance penalty.
        let q = binary_confidence_with_distance(0.04, 0.4, std::f64::consts::LN_2);
        assert!((q - 0.875).abs() < 1e-12);
        // Zero variance gives q_bin = 1 regardless of d.
        assert_eq!(binary_confidence(0.0, 0.4, 5.0, 0.0), 1.0);
    }

    fn pool_from_scores<'a>(records: &'a [StudentRecord], residuals: &[f64]) -> Vec<PoolEntry<'a>> {
        records
            .iter()
            .zip(residuals)
            .map(|(r, &c)| PoolEntry {
                features: FeatureVector::new(&r.scores),
                residual: c,
                overall: 0.0,
                student_id: &r.student_id,
                year: r.year,
                letter_grade: None,
            })
            .collect()
    }

    fn one_d_records(values: &[f64]) -> Vec<StudentRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| StudentRecord {
                student_id: format!("s{i}"),
                year: 1,
                scores: vec![v],
                raw_scores: vec![v],
                letter_grade: None,
            })
            .collect()
    }

    #[test]
    fn ladder_on_distinct_distances() {
        let s = schedule(&[1.0]);
        // Center at 0; member scores produce distances 0.1..0.5.
        let records = one_d_records(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let pool = pool_from_scores(&records, &[0.0; 5]);
        let center = [0.0];
        let ladder = radius_ladder(fv(&center), &pool, &s, None).unwrap();
        let radii: Vec<f64> = ladder.rungs().iter().map(|r| r.radius).collect();
        assert_eq!(radii, vec![0.3, 0.4, 0.5]);
        assert_eq!(ladder.member_counts(), vec![3, 4, 5]);
    }

    #[test]
    fn ladder_with_ties_is_inclusive() {
        let s = schedule(&[1.0]);
        let records = one_d_records(&[0.1, 0.2, 0.2, 0.5]);
        let pool = pool_from_scores(&records, &[0.0; 4]);
        let center = [0.0];
        let ladder = radius_ladder(fv(&center), &pool, &s, None).unwrap();
        let radii: Vec<f64> = ladder.rungs().iter().map(|r| r.radius).collect();
        assert_eq!(radii, vec![0.2, 0.5]);
        assert_eq!(ladder.member_counts(), vec![3, 4]);
    }

    #[test]
    fn ladder_minimum_pool() {
        let s = schedule(&[1.0]);
        let records = one_d_records(&[0.1, 0.4, 0.9]);
        let pool = pool_from_scores(&records, &[0.0; 3]);
        let center = [0.0];
        let ladder = radius_ladder(fv(&center), &pool, &s, None).unwrap();
        assert_eq!(ladder.len(), 1);
        assert_eq!(ladder.member_counts(), vec![3]);

        let too_small = &pool[..2];
        assert!(matches!(
            radius_ladder(fv(&center), too_small, &s, None),
            Err(NeighborhoodError::InsufficientNeighbors { available: 2, .. })
        ));
    }

    #[test]
    fn ladder_m_max_caps_rungs() {
        let s = schedule(&[1.0]);
        let records = one_d_records(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let pool = pool_from_scores(&records, &[0.0; 6]);
        let center = [0.0];
        let ladder = radius_ladder(fv(&center), &pool, &s, Some(2)).unwrap();
        assert_eq!(ladder.member_counts(), vec![3, 4]);
    }

    #[test]
    fn ladder_stats_track_members() {
        let s = schedule(&[1.0]);
        let records = one_d_records(&[0.1, 0.2, 0.3, 0.4]);
        let pool = pool_from_scores(&records, &[0.2, 0.4, 0.6, 1.4]);
        let center = [0.0];
        let ladder = radius_ladder(fv(&center), &pool, &s, None).unwrap();
        let first = &ladder.rungs()[0];
        assert!((first.mean - 0.4).abs() < 1e-12);
        assert!((first.variance - 0.04).abs() < 1e-12);
        let second = &ladder.rungs()[1];
        assert_eq!(second.member_count(), 4);
        assert!((second.mean - 0.65).abs() < 1e-12);
    }

    #[test]
    fn select_best_prefers_smaller_variance_then_radius() {
        let mk = |radius: f64, variance: f64| Neighborhood {
            radius,
            member_indices: vec![0, 1, 2],
            mean: 0.0,
            variance,
        };
        let ladder = NeighborhoodLadder {
            rungs: vec![mk(0.1, 0.05), mk(0.2, 0.01), mk(0.3, 0.03)],
        };
        assert_eq!(select_best(&ladder).0, 1);

        let tied = NeighborhoodLadder {
            rungs: vec![mk(0.1, 0.02), mk(0.2, 0.02)],
        };
        assert_eq!(select_best(&tied).0, 0);

        let single = NeighborhoodLadder {
            rungs: vec![mk(0.5, 0.9)],
        };
        assert_eq!(select_best(&single).0, 0);
    }
}
