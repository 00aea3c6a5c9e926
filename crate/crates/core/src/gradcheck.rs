//! Central-difference gradient checking.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::rng::rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Number of coordinates to probe; `None` probes all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// `|num - ana| / (|ana| + 1e-8)`, maximized over coordinates.
pub fn relative_error(numeric: &[f64], analytic: &[f64]) -> f64 {
    numeric
        .iter()
        .zip(analytic)
        .map(|(n, a)| (n - a).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Full central-difference gradient of `f` at `point`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], eps: f64) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// Returns the maximum relative error over the probed coordinates. A
/// non-finite loss evaluation is an error rather than a large number.
pub fn finite_diff_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() {
        return Err(Error::shape("finite_diff_check", &[params.len()], &[analytic.len()]));
    }
    let coords: Vec<usize> = match opts.max_coords {
        Some(m) if m < params.len() => sample(&mut rng(opts.seed, &[]), params.len(), m).into_vec(),
        _ => (0..params.len()).collect(),
    };
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        coords_checked: coords.len(),
    };
    for &i in &coords {
        let orig = p[i];
        p[i] = orig + opts.eps;
        let up = loss(&p);
        p[i] = orig - opts.eps;
        let down = loss(&p);
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite_diff_check loss"));
        }
        let num = (up - down) / (2.0 * opts.eps);
        let err = (num - analytic[i]).abs() / (analytic[i].abs() + 1e-8);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Concatenation of every parameter value, in `params()` order.
pub fn flatten_values(model: &mut dyn Parameterized) -> Vec<f64> {
    model
        .params()
        .into_iter()
        .flat_map(|p| p.value.data().to_vec())
        .collect()
}

/// Concatenation of every gradient buffer, in `params()` order.
pub fn flatten_grads(model: &mut dyn Parameterized) -> Vec<f64> {
    model
        .params()
        .into_iter()
        .flat_map(|p| p.grad.data().to_vec())
        .collect()
}

/// Inverse of [`flatten_values`].
pub fn assign_values(model: &mut dyn Parameterized, flat: &[f64]) {
    let mut offset = 0;
    for p in model.params() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    debug_assert_eq!(offset, flat.len());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_sq(p: &[f64]) -> f64 {
        0.5 * p.iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn quadratic_is_exact() {
        let p = [0.3, -1.2, 2.5, 0.7];
        let opts = GradCheckOptions {
            eps: 1e-5,
            ..Default::default()
        };
        let r = finite_diff_check(half_sq, &p, &p, &opts).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let p = [0.3, -1.2, 2.5, 0.7];
        let doubled: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let r = finite_diff_check(half_sq, &p, &doubled, &GradCheckOptions::default()).unwrap();
        // |g - 2g| / |2g|
        assert!((r.max_rel_error - 0.5).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let err = finite_diff_check(|p| 1.0 / (p[0] - p[0]), &[1.0], &[0.0], &Default::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn sampled_coordinates() {
        let p: Vec<f64> = (0..100).map(f64::from).collect();
        let opts = GradCheckOptions {
            max_coords: Some(10),
            ..Default::default()
        };
        let r = finite_diff_check(half_sq, &p, &p, &opts).unwrap();
        assert_eq!(r.coords_checked, 10);
    }
}
