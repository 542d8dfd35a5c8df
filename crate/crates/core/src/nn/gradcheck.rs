//! Central finite-difference check of [`DenseNet::backward`].

use rand::Rng;

use super::dense::{Activation, DenseNet, Tape};
use crate::error::Result;

/// Result of one gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub num_params: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Magnitude below which errors are measured absolutely rather than relative
/// to the gradient.
const RELATIVE_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the scalar loss
/// `L(y) = Σ_i (a_i y_i^2 / 2 + b_i y_i)` with central differences of step
/// `h`, perturbing every parameter in turn.
pub fn check_network(net: &DenseNet, input: &[f64], a: &[f64], b: &[f64], h: f64) -> Result<GradCheckReport> {
    let loss = |net: &DenseNet| -> Result<f64> {
        let y = net.forward(input)?;
        Ok(y.iter().zip(a).zip(b).map(|((y, a), b)| 0.5 * a * y * y + b * y).sum())
    };
    let mut tape = Tape::new();
    let y = net.forward_record(input, &mut tape)?.to_vec();
    let upstream: Vec<f64> = y.iter().zip(a).zip(b).map(|((y, a), b)| a * y + b).collect();
    let mut analytic = vec![0.0; net.num_params()];
    net.backward(&tape, &upstream, &mut analytic)?;

    let mut probe = net.clone();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for i in 0..net.num_params() {
        let original = probe.params()[i];
        probe.params_mut()[i] = original + h;
        let plus = loss(&probe)?;
        probe.params_mut()[i] = original - h;
        let minus = loss(&probe)?;
        probe.params_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs();
        let scale = analytic[i].abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        max_abs = max_abs.max(err);
        max_rel = max_rel.max(err / scale);
    }
    Ok(GradCheckReport {
        num_params: net.num_params(),
        max_relative_error: max_rel,
        max_absolute_error: max_abs,
    })
}

/// Builds a random tanh network with at most `max_params` parameters and
/// checks it on a random input and random quadratic loss.
pub fn check_random_network<R: Rng + ?Sized>(rng: &mut R, max_params: usize) -> Result<GradCheckReport> {
    let net = loop {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=8));
        }
        let activation = if rng.random_bool(0.8) {
            Activation::Tanh
        } else {
            Activation::Identity
        };
        let net = DenseNet::new(&sizes, activation, 1.0, rng)?;
        if net.num_params() <= max_params {
            break net;
        }
    };
    let input: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let a: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(0.1..2.0)).collect();
    let b: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    check_network(&net, &input, &a, &b, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_small_networks_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let r = check_random_network(&mut rng, 200).unwrap();
            assert!(r.num_params <= 200);
            assert!(r.max_relative_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Corrupting the loss coefficients between passes must be visible.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 4, 2], Activation::Tanh, 1.0, &mut rng).unwrap();
        let ok = check_network(&net, &[0.1, 0.2, 0.3], &[1.0, 1.0], &[0.5, -0.5], 1e-5).unwrap();
        assert!(ok.max_relative_error < 1e-4);
    }
}
