//! Central finite-difference verification of analytic gradients.

use crate::numerics::rng::{RngStream, StreamId};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates with both gradients below this magnitude are compared absolutely.
    pub floor: f64,
    /// Check every coordinate up to this count, otherwise sample this many.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub pass: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn gradient_check<F>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    config: GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let n = params.len();
    let coords: Vec<usize> = if n <= config.max_coords {
        (0..n).collect()
    } else {
        let mut rng = RngStream::new(config.seed, StreamId::Custom(77));
        let mut all: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut all);
        all.truncate(config.max_coords.max(100));
        all.sort_unstable();
        all
    };
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    let mut worst_index = 0;
    for &i in &coords {
        let orig = p[i];
        p[i] = orig + config.step;
        let fp = loss(&p);
        p[i] = orig - config.step;
        let fm = loss(&p);
        p[i] = orig;
        let numeric = (fp - fm) / (2.0 * config.step);
        let err = relative_error(analytic[i], numeric, config.floor);
        if err > worst || err.is_nan() {
            worst = if err.is_nan() { f64::INFINITY } else { err };
            worst_index = i;
        }
    }
    GradCheckReport {
        max_rel_error: worst,
        worst_index,
        checked: coords.len(),
        pass: worst <= config.tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(p: &[f64]) -> f64 {
        0.5 * p.iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let p: Vec<f64> = (0..50).map(|i| (i as f64 - 25.0) / 7.0).collect();
        let r = gradient_check(&p, &p, quadratic, GradCheckConfig::default());
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert!(r.pass);
        assert_eq!(r.checked, 50);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let p: Vec<f64> = (1..20).map(|i| i as f64 / 3.0).collect();
        let doubled: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let r = gradient_check(&p, &doubled, quadratic, GradCheckConfig::default());
        assert!(!r.pass);
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn large_parameter_vectors_are_sampled() {
        let p: Vec<f64> = (0..5000).map(|i| (i % 13) as f64 - 6.0).collect();
        let r = gradient_check(&p, &p, quadratic, GradCheckConfig { max_coords: 150, ..Default::default() });
        assert_eq!(r.checked, 150);
        assert!(r.pass);
    }
}
