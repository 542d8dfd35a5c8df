//! Generalized advantage estimation.

use crate::error::{Error, Result};

/// Advantages and critic targets for one contiguous trajectory segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GaeOutput {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// `values` holds V(s_0..s_{T-1}) followed by the bootstrap value V(s_T) of the
/// state after the last reward (0 for a true terminal state).
///
/// δ_t = R_t + γ V(s_{t+1}) − V(s_t), Â_t = Σ_l (γλ)^l δ_{t+l}, V̂_t = Â_t + V(s_t).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<GaeOutput> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::contract(format!(
            "GAE needs {} values (one per slot plus a bootstrap), got {}",
            rewards.len() + 1,
            values.len()
        )));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(GaeOutput { advantages, returns })
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
/// Leaves a constant vector centred but unscaled.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std > 1e-8 {
            *v /= std;
        }
    }
}
