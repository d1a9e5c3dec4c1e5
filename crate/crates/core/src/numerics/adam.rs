use serde::{Deserialize, Serialize};

/// Adaptive-moment optimizer state for one flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Updates rejected because the gradient contained NaN or infinity.
    pub skipped_updates: u64,
}

impl AdamState {
    pub fn new(num_params: usize, step_size: f64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            skipped_updates: 0,
        }
    }

    /// Applies one bias-corrected update in place. Returns `false` (and leaves
    /// everything but the skip counter untouched) when `grad` is not finite.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> bool {
        assert_eq!(params.len(), grad.len(), "gradient shape");
        assert_eq!(params.len(), self.first_moment.len(), "optimizer shape");
        if grad.iter().any(|g| !g.is_finite()) {
            self.skipped_updates += 1;
            log::warn!("adam: non-finite gradient, update skipped");
            return false;
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        true
    }
}
