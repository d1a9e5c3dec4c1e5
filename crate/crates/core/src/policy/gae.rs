/// Generalised advantage estimates and value targets.
///
/// `values` holds `V(s_0) … V(s_{T-1})` followed by the bootstrap value of the
/// state after the last step; `dones[t]` marks that the episode ended after step `t`
/// (the next value is then ignored). Returns `(advantages, returns)` with
/// `returns = advantages + values[..T]`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = rewards.len();
    assert_eq!(values.len(), t_len + 1, "values need a bootstrap entry");
    assert_eq!(dones.len(), t_len);
    let mut adv = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * not_done - values[t];
        running = delta + gamma * lambda * not_done * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales in place to mean 0 and (population) std 1.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { *a - mean };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngStream, StreamId};

    /// O(T²) direct sum `Â_t = Σ_k (γλ)^k δ_{t+k}`, cut at episode ends.
    fn naive(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
        let t_len = rewards.len();
        let delta: Vec<f64> = (0..t_len)
            .map(|t| {
                let nd = if dones[t] { 0.0 } else { 1.0 };
                rewards[t] + gamma * values[t + 1] * nd - values[t]
            })
            .collect();
        (0..t_len)
            .map(|t| {
                let mut total = 0.0;
                let mut weight = 1.0;
                for k in t..t_len {
                    total += weight * delta[k];
                    if dones[k] {
                        break;
                    }
                    weight *= gamma * lambda;
                }
                total
            })
            .collect()
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2, 0.7];
        let d = [false, false, false];
        let (adv, _) = gae_advantages(&r, &v, &d, 0.9, 0.0);
        for t in 0..3 {
            assert_eq!(adv[t], r[t] + 0.9 * v[t + 1] - v[t]);
        }
    }

    #[test]
    fn undiscounted_zero_values_sum_remaining_rewards() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let (adv, ret) = gae_advantages(&r, &[0.0; 5], &[false; 4], 1.0, 1.0);
        assert_eq!(adv, vec![10.0, 9.0, 7.0, 4.0]);
        assert_eq!(ret, adv);
    }

    #[test]
    fn three_step_hand_recursion() {
        // δ = (1 + 0.9·0.5 − 0.5, 0 + 0.45 − 0.5, 1 + 0 − 0.5) = (0.95, −0.05, 0.5)
        // Â₂ = 0.5, Â₁ = −0.05 + 0.72·0.5 = 0.31, Â₀ = 0.95 + 0.72·0.31 = 1.1732
        let (adv, ret) = gae_advantages(&[1.0, 0.0, 1.0], &[0.5, 0.5, 0.5, 0.0], &[false; 3], 0.9, 0.8);
        let expected = [1.1732, 0.31, 0.5];
        for t in 0..3 {
            assert!((adv[t] - expected[t]).abs() < 1e-12);
            assert!((ret[t] - (expected[t] + 0.5)).abs() < 1e-12);
        }
        let direct = naive(&[1.0, 0.0, 1.0], &[0.5, 0.5, 0.5, 0.0], &[false; 3], 0.9, 0.8);
        for t in 0..3 {
            assert!((adv[t] - direct[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn recursion_matches_direct_sum_on_random_buffers() {
        let mut rng = RngStream::new(21, StreamId::Custom(9));
        for _ in 0..50 {
            let t_len = 1 + rng.index(200);
            let r: Vec<f64> = (0..t_len).map(|_| rng.normal()).collect();
            let v: Vec<f64> = (0..=t_len).map(|_| rng.normal()).collect();
            let d: Vec<bool> = (0..t_len).map(|_| rng.uniform() < 0.05).collect();
            let (g, l) = (rng.uniform(), rng.uniform());
            let (adv, _) = gae_advantages(&r, &v, &d, g, l);
            let direct = naive(&r, &v, &d, g, l);
            for t in 0..t_len {
                assert!((adv[t] - direct[t]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalisation_moments() {
        let mut rng = RngStream::new(5, StreamId::Custom(10));
        let mut a: Vec<f64> = (0..2048).map(|_| 3.0 + 7.0 * rng.normal()).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-8);
        assert!((std - 1.0).abs() < 1e-6);
    }
}
