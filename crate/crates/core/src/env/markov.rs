//! Two-state availability chain of a single server.
//!
//! State 0 is "available", state 1 is "unavailable". The transition matrix is
//!
//! ```text
//! [ φ    1-φ ]
//! [ 1-ψ  ψ   ]
//! ```

use rand::Rng;

use crate::error::{Error, Result};

/// Long-run probabilities of the two availability states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationary {
    pub available: f64,
    pub unavailable: f64,
}

/// Solves πP = π, π₀ + π₁ = 1 for the two-state chain.
///
/// Both stay probabilities must lie in the open unit interval.
pub fn stationary_distribution(stay_available: f64, stay_unavailable: f64) -> Result<Stationary> {
    for (name, p) in [
        ("stay_available", stay_available),
        ("stay_unavailable", stay_unavailable),
    ] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::config(format!("{name} = {p} must lie in (0,1)")));
        }
    }
    Ok(stationary_unchecked(stay_available, stay_unavailable))
}

/// Closed form π₀ = (1-ψ)/(2-φ-ψ); also valid for one absorbing state.
pub(crate) fn stationary_unchecked(stay_available: f64, stay_unavailable: f64) -> Stationary {
    let available = (1.0 - stay_unavailable) / (2.0 - stay_available - stay_unavailable);
    Stationary {
        available,
        unavailable: 1.0 - available,
    }
}

/// Draws the next availability given the current one.
pub fn transition_availability<R: Rng + ?Sized>(
    available: bool,
    stay_available: f64,
    stay_unavailable: f64,
    rng: &mut R,
) -> bool {
    let u: f64 = rng.random();
    if available {
        u < stay_available
    } else {
        u >= stay_unavailable
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent route: solve (Pᵀ - I)π = 0 with the normalisation row by
    /// Cramer's rule on the 2x2 system.
    fn linear_solve_oracle(phi: f64, psi: f64) -> (f64, f64) {
        // Equations: (phi - 1) π0 + (1 - psi) π1 = 0 ; π0 + π1 = 1
        let (a, b, c, d) = (phi - 1.0, 1.0 - psi, 1.0, 1.0);
        let det = a * d - b * c;
        let pi0 = (0.0 * d - b * 1.0) / det;
        let pi1 = (a * 1.0 - c * 0.0) / det;
        (pi0, pi1)
    }

    #[test]
    fn symmetric_chain_is_uniform() {
        let s = stationary_distribution(0.5, 0.5).unwrap();
        assert_eq!((s.available, s.unavailable), (0.5, 0.5));
    }

    #[test]
    fn heterogeneous_servers_match_oracle() {
        let (o0, o1) = linear_solve_oracle(0.95, 0.50);
        assert!((o0 - 10.0 / 11.0).abs() < 1e-12 && (o1 - 1.0 / 11.0).abs() < 1e-12);
        let s = stationary_distribution(0.95, 0.50).unwrap();
        assert!((s.available - 10.0 / 11.0).abs() < 1e-12);
        assert!((s.unavailable - 1.0 / 11.0).abs() < 1e-12);

        let s = stationary_distribution(0.50, 0.95).unwrap();
        let (o0, o1) = linear_solve_oracle(0.50, 0.95);
        assert!((s.available - 1.0 / 11.0).abs() < 1e-12 && (s.available - o0).abs() < 1e-12);
        assert!((s.unavailable - 10.0 / 11.0).abs() < 1e-12 && (s.unavailable - o1).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_of_transition_matrix() {
        for &(phi, psi) in &[(0.1, 0.9), (0.3, 0.3), (0.99, 0.01), (0.7, 0.85)] {
            let s = stationary_distribution(phi, psi).unwrap();
            let next0 = s.available * phi + s.unavailable * (1.0 - psi);
            let next1 = s.available * (1.0 - phi) + s.unavailable * psi;
            assert!((next0 - s.available).abs() < 1e-12);
            assert!((next1 - s.unavailable).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_closed_endpoints() {
        assert!(stationary_distribution(1.0, 0.5).is_err());
        assert!(stationary_distribution(0.5, 0.0).is_err());
        assert!(stationary_distribution(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn absorbing_available_state_stays() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(transition_availability(true, 1.0, 0.5, &mut rng));
        }
    }

    #[test]
    fn empirical_stay_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 100_000;
        let stays = (0..trials)
            .filter(|_| transition_availability(true, 0.95, 0.5, &mut rng))
            .count();
        let freq = stays as f64 / trials as f64;
        assert!((freq - 0.95).abs() < 0.01, "{freq}");
    }

    #[test]
    fn empirical_long_run_availability() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = true;
        let steps = 200_000;
        let mut up = 0usize;
        for _ in 0..steps {
            state = transition_availability(state, 0.95, 0.50, &mut rng);
            up += state as usize;
        }
        let freq = up as f64 / steps as f64;
        assert!((freq - 10.0 / 11.0).abs() < 0.01, "{freq}");
    }
}
