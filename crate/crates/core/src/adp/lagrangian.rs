//! Augmented-Lagrangian multipliers and the step-size schedule.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LagrangianState {
    pub lambda: f64,
    pub nu: f64,
    /// Growth factor for `ν` (`b > 1`).
    pub growth: f64,
    pub nu_max: f64,
}

impl LagrangianState {
    pub fn new(lambda: f64, nu: f64, growth: f64, nu_max: f64) -> Self {
        Self { lambda, nu, growth, nu_max }
    }
}

/// `λ ← λ + ν·E[B(g)]`, then `ν ← min(b·ν, ν_max)`.
pub fn update_multipliers(ls: &mut LagrangianState, expected_violation: f64) {
    ls.lambda += ls.nu * expected_violation;
    ls.nu = (ls.growth * ls.nu).min(ls.nu_max);
}

/// `η_0` for the first `hold` epochs, then halving every `half_life` epochs.
pub fn step_size(eta0: f64, hold: usize, half_life: f64, epoch: usize) -> f64 {
    let past = epoch.saturating_sub(hold) as f64;
    eta0 * 0.5f64.powf(past / half_life)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_update_examples() {
        let mut ls = LagrangianState::new(0.0, 2.0, 1.5, 100.0);
        update_multipliers(&mut ls, 0.5);
        assert_eq!(ls.lambda, 1.0);
        assert_eq!(ls.nu, 3.0);
        update_multipliers(&mut ls, 0.0);
        assert_eq!(ls.lambda, 1.0);
        assert_eq!(ls.nu, 4.5);
    }

    #[test]
    fn nu_is_capped() {
        let mut ls = LagrangianState::new(0.0, 8.0, 1.5, 10.0);
        update_multipliers(&mut ls, 1.0);
        assert_eq!(ls.lambda, 8.0);
        assert_eq!(ls.nu, 10.0);
    }

    #[test]
    fn step_decay() {
        assert_eq!(step_size(0.1, 5, 10.0, 0), 0.1);
        assert_eq!(step_size(0.1, 5, 10.0, 5), 0.1);
        assert!((step_size(0.1, 5, 10.0, 15) - 0.05).abs() < 1e-15);
        assert_eq!(step_size(0.1, 5, f64::INFINITY, 1000), 0.1);
    }
}
