use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adaptive-moment optimizer with bias correction and global gradient-norm
/// clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients whose global L2 norm exceeds this are rescaled to it.
    pub max_grad_norm: Option<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

/// What happened in one [`Adam::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepStatus {
    /// Update applied; carries the gradient norm before clipping.
    Applied { grad_norm: f64 },
    /// Gradient contained NaN/Inf; parameters left untouched.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64, max_grad_norm: Option<f64>) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn num_params(&self) -> usize {
        self.first_moment.len()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<StepStatus> {
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: if params.len() != n { params.len() } else { grads.len() },
                context: "optimizer parameters/gradients",
            });
        }
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Ok(StepStatus::SkippedNonFinite);
        }
        let scale = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..n {
            let g = grads[i] * scale;
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(StepStatus::Applied { grad_norm: norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = Adam::new(3, 0.1, Some(1.0));
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut opt = Adam::new(2, 0.01, None);
        let mut p = vec![0.0, 0.0];
        for _ in 0..100 {
            opt.step(&mut p, &[2.0, -0.5]).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn quadratic_converges_to_minimizer() {
        // f(x) = 3 (x - 1.7)^2, minimizer 1.7
        let mut opt = Adam::new(1, 0.01, None);
        let mut x = vec![-4.0];
        let mut converged_at = None;
        for step in 1..=5000 {
            let g = 6.0 * (x[0] - 1.7);
            opt.step(&mut x, &[g]).unwrap();
            if converged_at.is_none() && (x[0] - 1.7).abs() < 1e-3 {
                converged_at = Some(step);
            }
        }
        assert!(converged_at.is_some());
        assert!((x[0] - 1.7).abs() < 1e-3, "{}", x[0]);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut opt = Adam::new(2, 0.1, None);
        let mut p = vec![1.0, 1.0];
        assert_eq!(
            opt.step(&mut p, &[f64::NAN, 0.0]).unwrap(),
            StepStatus::SkippedNonFinite
        );
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn clipping_bounds_first_step() {
        // With bias correction the first step is lr * g/|g| per coordinate
        // regardless of scale; clipping must not change its direction.
        let mut opt = Adam::new(2, 0.1, Some(0.5));
        let mut p = vec![0.0, 0.0];
        match opt.step(&mut p, &[300.0, -400.0]).unwrap() {
            StepStatus::Applied { grad_norm } => assert!((grad_norm - 500.0).abs() < 1e-9),
            s => panic!("{s:?}"),
        }
        assert!((p[0] + 0.1).abs() < 1e-6 && (p[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = Adam::new(2, 0.1, None);
        assert!(opt.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
