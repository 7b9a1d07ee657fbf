//! Executable error bounds: the three-term bound on the probability that a
//! prediction misses by more than `epsilon`, its Chebyshev /
//! Chernoff-Hoeffding / empirical-Bernstein building blocks, the
//! wrong-neighborhood selection bound, and a Monte Carlo validator.
//!
//! The three-term bound takes *true* neighborhood variances and the residual
//! standard-deviation gap as explicit inputs; these are unknown in production,
//! so a plug-in constructor from sample statistics exists but is flagged as
//! non-rigorous. All bounds are probabilities and are capped at 1 on output;
//! the uncapped values remain available for decomposition checks.
//!
//! The bound's hypotheses assume scores in `[0, 1]`, which production
//! normalization does not satisfy; the Monte Carlo generator therefore works
//! with residual models whose support is checked to lie inside `[0, 1]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::neighborhoods::NeighborhoodLadder;

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("epsilon must be positive, got {epsilon}")]
    InvalidEpsilon { epsilon: f64 },
    #[error("variance must be non-negative, got {variance}")]
    InvalidVariance { variance: f64 },
    #[error("standard-deviation gap must be non-negative, got {delta}")]
    InvalidDelta { delta: f64 },
    #[error("need at least one neighborhood with >= 2 members, got sizes {sizes:?}")]
    InvalidSizes { sizes: Vec<usize> },
    #[error("sample count must be at least {required}, got {n}")]
    SampleCount { n: usize, required: usize },
    #[error("residual model support [{lo}, {hi}] leaves [0, 1]")]
    Validity { lo: f64, hi: f64 },
    #[error("generator has {generator} neighborhoods but inputs list {inputs} sizes")]
    GeneratorMismatch { generator: usize, inputs: usize },
    #[error("need at least {required} trials, got {trials}")]
    TooFewTrials { trials: usize, required: usize },
}

/// Inputs to the three-term error bound. `var_star` and `delta` are the true
/// (or plug-in) quantities; `neighborhood_sizes` are the member counts of the
/// `M` candidate neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub epsilon: f64,
    pub var_star: f64,
    pub neighborhood_sizes: Vec<usize>,
    pub delta: f64,
    /// True when `var_star`/`delta` are sample estimates, not true values;
    /// the resulting bound is then indicative, not rigorous.
    pub plug_in: bool,
}

impl BoundInputs {
    pub fn new(
        epsilon: f64,
        var_star: f64,
        neighborhood_sizes: Vec<usize>,
        delta: f64,
    ) -> Result<Self, BoundsError> {
        if !(epsilon > 0.0) {
            return Err(BoundsError::InvalidEpsilon { epsilon });
        }
        if !(var_star >= 0.0) {
            return Err(BoundsError::InvalidVariance { variance: var_star });
        }
        if !(delta >= 0.0) {
            return Err(BoundsError::InvalidDelta { delta });
        }
        if neighborhood_sizes.is_empty() || neighborhood_sizes.iter().any(|s| *s < 2) {
            return Err(BoundsError::InvalidSizes {
                sizes: neighborhood_sizes,
            });
        }
        Ok(Self {
            epsilon,
            var_star,
            neighborhood_sizes,
            delta,
            plug_in: false,
        })
    }

    /// Plug-in inputs from a built ladder: smallest sample variance, rung
    /// member counts, and the gap between the two smallest sample standard
    /// deviations (zero for a single rung).
    pub fn plug_in_from_ladder(
        ladder: &NeighborhoodLadder,
        epsilon: f64,
    ) -> Result<Self, BoundsError> {
        let mut stds: Vec<f64> = ladder.rungs().iter().map(|r| r.variance.sqrt()).collect();
        stds.sort_by(f64::total_cmp);
        let delta = if stds.len() >= 2 { stds[1] - stds[0] } else { 0.0 };
        let mut inputs = Self::new(
            epsilon,
            stds[0] * stds[0],
            ladder.member_counts(),
            delta,
        )?;
        inputs.plug_in = true;
        Ok(inputs)
    }

    pub fn m(&self) -> usize {
        self.neighborhood_sizes.len()
    }

    pub fn min_size(&self) -> usize {
        *self.neighborhood_sizes.iter().min().expect("non-empty")
    }
}

/// The three-term bound with its decomposition. `total` is capped at 1;
/// `total_uncapped = chebyshev_term + hoeffding_term + selection_term`
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremBound {
    pub chebyshev_term: f64,
    pub hoeffding_term: f64,
    pub selection_term: f64,
    pub total_uncapped: f64,
    pub total: f64,
    /// Set when `delta = 0`: the selection term degenerates to `2M` and the
    /// bound caps at 1.
    pub degenerate_gap: bool,
    pub plug_in: bool,
}

/// Uncapped Chebyshev tail: upper bound on `P[|C - mu| >= epsilon]`.
pub fn chebyshev_tail(variance: f64, epsilon: f64) -> f64 {
    variance / (epsilon * epsilon)
}

/// Lower bound on `P[|C - mu| < epsilon]`, floored at 0.
pub fn chebyshev_bound(variance: f64, epsilon: f64) -> Result<f64, BoundsError> {
    if !(epsilon > 0.0) {
        return Err(BoundsError::InvalidEpsilon { epsilon });
    }
    if !(variance >= 0.0) {
        return Err(BoundsError::InvalidVariance { variance });
    }
    Ok((1.0 - chebyshev_tail(variance, epsilon)).max(0.0))
}

/// Uncapped Chernoff-Hoeffding tail: `2 exp(-2 n epsilon^2)`.
pub fn hoeffding_tail(n: usize, epsilon: f64) -> f64 {
    2.0 * (-2.0 * n as f64 * epsilon * epsilon).exp()
}

/// Upper bound on `P[|sample mean - mean| >= epsilon]` for `[0,1]`-valued
/// samples, capped at 1.
pub fn hoeffding_bound(n: usize, epsilon: f64) -> Result<f64, BoundsError> {
    if n < 1 {
        return Err(BoundsError::SampleCount { n, required: 1 });
    }
    if !(epsilon > 0.0) {
        return Err(BoundsError::InvalidEpsilon { epsilon });
    }
    Ok(hoeffding_tail(n, epsilon).min(1.0))
}

/// Uncapped empirical-Bernstein tail for the sample standard deviation:
/// `2 exp(-(n-1) epsilon^2 / 2)`.
pub fn bernstein_std_tail(n: usize, epsilon: f64) -> f64 {
    2.0 * (-(n as f64 - 1.0) * epsilon * epsilon / 2.0).exp()
}

/// Upper bound on `P[|sample std - std| >= epsilon]` for `[0,1]`-valued
/// samples, capped at 1.
pub fn bernstein_std_bound(n: usize, epsilon: f64) -> Result<f64, BoundsError> {
    if n < 2 {
        return Err(BoundsError::SampleCount { n, required: 2 });
    }
    if !(epsilon > 0.0) {
        return Err(BoundsError::InvalidEpsilon { epsilon });
    }
    Ok(bernstein_std_tail(n, epsilon).min(1.0))
}

/// Uncapped wrong-neighborhood bound:
/// `2 M exp(-delta^2 min_m (|B_m| - 1) / 8)`.
pub fn lemma1_tail(m: usize, delta: f64, neighborhood_sizes: &[usize]) -> f64 {
    let min_size = *neighborhood_sizes.iter().min().expect("non-empty sizes");
    2.0 * m as f64 * (-delta * delta * (min_size as f64 - 1.0) / 8.0).exp()
}

/// Upper bound on the probability of selecting a neighborhood other than the
/// true-variance minimizer, capped at 1.
pub fn lemma1_bound(
    m: usize,
    delta: f64,
    neighborhood_sizes: &[usize],
) -> Result<f64, BoundsError> {
    if neighborhood_sizes.is_empty() || neighborhood_sizes.iter().any(|s| *s < 2) {
        return Err(BoundsError::InvalidSizes {
            sizes: neighborhood_sizes.to_vec(),
        });
    }
    if !(delta >= 0.0) {
        return Err(BoundsError::InvalidDelta { delta });
    }
    Ok(lemma1_tail(m, delta, neighborhood_sizes).min(1.0))
}

/// The full three-term bound on `P[|z - z_hat| >= epsilon]`:
/// a Chebyshev term at `epsilon / 2` for the best neighborhood's spread, a
/// Hoeffding term at `epsilon / 2` for its sample mean, and the
/// wrong-neighborhood selection term.
pub fn theorem_bound(inputs: &BoundInputs) -> TheoremBound {
    let half = inputs.epsilon / 2.0;
    let chebyshev_term = chebyshev_tail(inputs.var_star, half);
    let hoeffding_term = hoeffding_tail(inputs.min_size(), half);
    let selection_term = lemma1_tail(inputs.m(), inputs.delta, &inputs.neighborhood_sizes);
    let total_uncapped = chebyshev_term + hoeffding_term + selection_term;
    TheoremBound {
        chebyshev_term,
        hoeffding_term,
        selection_term,
        total_uncapped,
        total: total_uncapped.min(1.0),
        degenerate_gap: inputs.delta == 0.0,
        plug_in: inputs.plug_in,
    }
}

/// A bounded residual distribution for the Monte Carlo validator. Supports
/// must lie within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualModel {
    /// Point mass.
    Constant { value: f64 },
    /// Uniform on `[center - half_width, center + half_width]`.
    Uniform { center: f64, half_width: f64 },
    /// Two-point: `lo` or `hi`, each with probability 1/2.
    TwoPoint { lo: f64, hi: f64 },
    /// `center` with probability `1 - tail_prob`, `center ± offset` each with
    /// probability `tail_prob / 2`. Gives a controllable heavy-ish tail.
    Spike {
        center: f64,
        offset: f64,
        tail_prob: f64,
    },
}

impl ResidualModel {
    fn support(&self) -> (f64, f64) {
        match *self {
            ResidualModel::Constant { value } => (value, value),
            ResidualModel::Uniform { center, half_width } => {
                (center - half_width, center + half_width)
            }
            ResidualModel::TwoPoint { lo, hi } => (lo, hi),
            ResidualModel::Spike { center, offset, .. } => (center - offset, center + offset),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ResidualModel::Constant { value } => value,
            ResidualModel::Uniform { center, .. } => center,
            ResidualModel::TwoPoint { lo, hi } => (lo + hi) / 2.0,
            ResidualModel::Spike { center, .. } => center,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ResidualModel::Constant { .. } => 0.0,
            ResidualModel::Uniform { half_width, .. } => half_width * half_width / 3.0,
            ResidualModel::TwoPoint { lo, hi } => {
                let half = (hi - lo) / 2.0;
                half * half
            }
            ResidualModel::Spike {
                offset, tail_prob, ..
            } => tail_prob * offset * offset,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ResidualModel::Constant { value } => value,
            ResidualModel::Uniform { center, half_width } => {
                center + half_width * (2.0 * rng.random::<f64>() - 1.0)
            }
            ResidualModel::TwoPoint { lo, hi } => {
                if rng.random::<f64>() < 0.5 {
                    lo
                } else {
                    hi
                }
            }
            ResidualModel::Spike {
                center,
                offset,
                tail_prob,
            } => {
                let u = rng.random::<f64>();
                if u < tail_prob / 2.0 {
                    center - offset
                } else if u < tail_prob {
                    center + offset
                } else {
                    center
                }
            }
        }
    }
}

/// Synthetic neighborhood structure: per candidate neighborhood, its member
/// count and residual distribution. The student's own residual is drawn from
/// the distribution of the true best (smallest-variance) neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct McGenerator {
    neighborhoods: Vec<(usize, ResidualModel)>,
}

impl McGenerator {
    pub fn new(neighborhoods: Vec<(usize, ResidualModel)>) -> Result<Self, BoundsError> {
        if neighborhoods.is_empty() || neighborhoods.iter().any(|(n, _)| *n < 2) {
            return Err(BoundsError::InvalidSizes {
                sizes: neighborhoods.iter().map(|(n, _)| *n).collect(),
            });
        }
        for (_, model) in &neighborhoods {
            let (lo, hi) = model.support();
            if lo < 0.0 || hi > 1.0 {
                return Err(BoundsError::Validity { lo, hi });
            }
        }
        Ok(Self { neighborhoods })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.neighborhoods.iter().map(|(n, _)| *n).collect()
    }

    /// Index of the smallest true-variance neighborhood (ties to the first).
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, (_, model)) in self.neighborhoods.iter().enumerate().skip(1) {
            if model.variance() < self.neighborhoods[best].1.variance() {
                best = i;
            }
        }
        best
    }
}

/// Result of a Monte Carlo validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub trials: usize,
    pub violations: usize,
    pub observed: f64,
    pub bound: TheoremBound,
    /// Three worst-case binomial standard deviations, `1.5 / sqrt(trials)`.
    pub slack: f64,
    pub within_bound: bool,
}

pub const MC_MIN_TRIALS: usize = 10_000;

/// Replay the single-checkpoint prediction on freshly sampled neighborhoods
/// and compare the observed violation frequency `P[|c - mean_hat| >= epsilon]`
/// against the three-term bound (plus binomial slack).
///
/// Each trial draws every neighborhood's members, selects the rung with the
/// smallest sample variance exactly as the predictor does, and tests the
/// student's own residual (drawn from the true best neighborhood's
/// distribution) against that rung's sample mean.
pub fn monte_carlo_validate(
    generator: &McGenerator,
    inputs: &BoundInputs,
    trials: usize,
    seed: u64,
) -> Result<McReport, BoundsError> {
    if trials < MC_MIN_TRIALS {
        return Err(BoundsError::TooFewTrials {
            trials,
            required: MC_MIN_TRIALS,
        });
    }
    if generator.neighborhoods.len() != inputs.neighborhood_sizes.len() {
        return Err(BoundsError::GeneratorMismatch {
            generator: generator.neighborhoods.len(),
            inputs: inputs.neighborhood_sizes.len(),
        });
    }
    let bound = theorem_bound(inputs);
    let true_best = generator.best_index();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut draws = Vec::new();
    for _ in 0..trials {
        // Pick the rung with the smallest sample variance, ties to the
        // smaller index, exactly as the predictor selects.
        let mut chosen_var = f64::INFINITY;
        let mut chosen_mean = 0.0;
        for (size, model) in &generator.neighborhoods {
            draws.clear();
            draws.extend((0..*size).map(|_| model.sample(&mut rng)));
            let mean = draws.iter().sum::<f64>() / *size as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (*size as f64 - 1.0);
            if var < chosen_var {
                chosen_var = var;
                chosen_mean = mean;
            }
        }
        let c = generator.neighborhoods[true_best].1.sample(&mut rng);
        if (c - chosen_mean).abs() >= inputs.epsilon {
            violations += 1;
        }
    }
    let observed = violations as f64 / trials as f64;
    let slack = 1.5 / (trials as f64).sqrt();
    let within_bound = observed <= bound.total + slack;
    Ok(McReport {
        trials,
        violations,
        observed,
        bound,
        slack,
        within_bound,
    })
}
