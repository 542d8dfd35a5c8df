//! PPO loss terms.
//!
//! Sign convention: [`clipped_surrogate`] returns the surrogate *objective*
//! (to be maximised); [`total_loss`] negates it so that minimising the total
//! loss maximises the surrogate and the entropy bonus.

/// Clipped surrogate objective with per-sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    /// Mean over finite samples of min(ρÂ, clip(ρ, 1−ε, 1+ε)Â).
    pub objective: f64,
    /// d(objective)/d(new log-prob) per sample, already divided by the
    /// number of finite samples; 0 for clipped or excluded samples.
    pub d_log_prob: Vec<f64>,
    pub mean_ratio: f64,
    /// Fraction of finite samples with |ρ − 1| > ε.
    pub clip_fraction: f64,
    /// Samples dropped because their ratio was not finite.
    pub excluded: usize,
}

pub fn clipped_surrogate(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], epsilon: f64) -> Surrogate {
    assert_eq!(new_log_probs.len(), old_log_probs.len());
    assert_eq!(new_log_probs.len(), advantages.len());
    let ratios: Vec<f64> = new_log_probs
        .iter()
        .zip(old_log_probs)
        .map(|(n, o)| (n - o).exp())
        .collect();
    let finite = ratios.iter().filter(|r| r.is_finite()).count();
    let mut out = Surrogate {
        objective: 0.0,
        d_log_prob: vec![0.0; ratios.len()],
        mean_ratio: 0.0,
        clip_fraction: 0.0,
        excluded: ratios.len() - finite,
    };
    if finite == 0 {
        return out;
    }
    let scale = 1.0 / finite as f64;
    let mut clipped = 0usize;
    for (i, (&ratio, &adv)) in ratios.iter().zip(advantages).enumerate() {
        if !ratio.is_finite() {
            continue;
        }
        let bounded = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
        let unclipped_term = ratio * adv;
        let clipped_term = bounded * adv;
        if (ratio - 1.0).abs() > epsilon {
            clipped += 1;
        }
        if unclipped_term <= clipped_term {
            out.objective += unclipped_term * scale;
            // d(ρÂ)/d log π = ρÂ
            out.d_log_prob[i] = unclipped_term * scale;
        } else {
            out.objective += clipped_term * scale;
        }
        out.mean_ratio += ratio * scale;
    }
    out.clip_fraction = clipped as f64 * scale;
    out
}

/// Mean squared error between critic predictions and targets.
pub fn value_loss(values: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(values.len(), targets.len());
    if values.is_empty() {
        return 0.0;
    }
    values.iter().zip(targets).map(|(v, t)| (v - t).powi(2)).sum::<f64>() / values.len() as f64
}

/// −L_CLIP + c_v·L_value − c_e·L_entropy.
pub fn total_loss(
    policy_objective: f64,
    value_term: f64,
    entropy_term: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> f64 {
    -policy_objective + value_coef * value_term - entropy_coef * entropy_term
}
