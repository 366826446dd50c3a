//! Synthetic annotations around a known distribution, for calibrating the
//! detection statistics without a live annotation model.

use super::ProbabilityAnnotation;
use crate::domain::{DistError, Distribution};
use crate::rng::stream_rng;
use rand_distr::{Distribution as _, Gamma};

/// Dirichlet concentration for which the largest component of `truth` has
/// standard deviation `max_stddev` (`var_j = g_j(1 − g_j) / (α + 1)`).
pub fn concentration_for_stddev(truth: &Distribution, max_stddev: f64) -> f64 {
    let peak = truth
        .weights()
        .iter()
        .map(|g| g * (1.0 - g))
        .fold(0.0, f64::max);
    (peak / (max_stddev * max_stddev) - 1.0).max(f64::MIN_POSITIVE)
}

/// `n` annotations drawn from `Dirichlet(α · truth)`, whose mean is exactly
/// `truth`. Draws are keyed by `(seed, stream)`.
pub fn dirichlet_annotations(
    truth: &Distribution,
    concentration: f64,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<ProbabilityAnnotation>, DistError> {
    let alpha: Vec<f64> = truth
        .weights()
        .iter()
        .map(|g| (g * concentration).max(1e-9))
        .collect();
    // Normalized independent Gamma(α_j, 1) draws are Dirichlet(α).
    let gammas: Vec<Gamma<f64>> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|_| DistError::AllZero))
        .collect::<Result<_, _>>()?;
    let mut rng = stream_rng(seed, stream);
    (0..n)
        .map(|i| {
            let w: Vec<f64> = gammas.iter().map(|g| g.sample(&mut rng)).collect();
            Ok(ProbabilityAnnotation {
                sample_id: format!("syn-{stream}-{i}"),
                probs: Distribution::normalize(&w)?,
            })
        })
        .collect()
}
