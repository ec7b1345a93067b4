use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::TinyModel;
use super::{LsgConfig, LsgError};
use crate::num::Real;

/// Below this magnitude on both sides the absolute error is used.
pub const SMALL_GRADIENT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(flat index, analytic, numeric, error)` per sampled parameter.
    pub samples: Vec<(usize, f64, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs() < SMALL_GRADIENT && numeric.abs() < SMALL_GRADIENT {
        diff
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Compares backprop against central differences on `n_params_sampled`
/// parameters drawn without replacement by `seed`. Run it in `f64`.
pub fn grad_check<T: Real>(
    model: &TinyModel<T>,
    example: (&[usize], &[usize]),
    cfg: &LsgConfig,
    epsilon: f64,
    n_params_sampled: usize,
    seed: u64,
) -> Result<GradCheckReport, LsgError> {
    let total = model.parameter_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, total, n_params_sampled.min(total)).into_vec();
    indices.sort_unstable();
    grad_check_indices(model, example, cfg, epsilon, &indices)
}

pub fn grad_check_indices<T: Real>(
    model: &TinyModel<T>,
    (src, tgt): (&[usize], &[usize]),
    cfg: &LsgConfig,
    epsilon: f64,
    indices: &[usize],
) -> Result<GradCheckReport, LsgError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(LsgError::InvalidConfig("epsilon must be positive".into()));
    }
    let mut grads = model.params.zeros_like();
    let (_, tokens) = model.accumulate_gradients(src, tgt, cfg, &mut grads)?;
    let eps = T::from_f64_lossy(epsilon);
    let mut probe = model.clone();
    let mut samples = Vec::with_capacity(indices.len());
    let mut max_err: f64 = 0.0;
    for &idx in indices {
        let original = probe
            .params
            .flat_get(idx)
            .ok_or_else(|| LsgError::DimensionMismatch(format!("parameter index {idx} out of range")))?;
        probe.params.flat_set(idx, original + eps);
        let plus = probe.loss(src, tgt, cfg)?.as_f64();
        probe.params.flat_set(idx, original - eps);
        let minus = probe.loss(src, tgt, cfg)?.as_f64();
        probe.params.flat_set(idx, original);
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = grads.flat_get(idx).expect("same layout").as_f64() / tokens as f64;
        let err = relative_error(analytic, numeric);
        max_err = max_err.max(err);
        samples.push((idx, analytic, numeric, err));
    }
    Ok(GradCheckReport {
        max_relative_error: max_err,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_rules() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(1e-10, -1e-10), 2e-10);
    }
}
