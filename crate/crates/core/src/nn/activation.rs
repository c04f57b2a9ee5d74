use serde::{Deserialize, Serialize};

/// Exponential linear unit: `x` for `x > 0`, `alpha * (e^x - 1)` otherwise.
#[inline]
pub fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

/// Derivative of [`elu`]. At exactly zero the right limit (1) is used.
#[inline]
pub fn elu_grad(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EluActivation {
    pub alpha: f64,
}

impl Default for EluActivation {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Elu(EluActivation),
    Identity,
}

impl Activation {
    pub fn elu() -> Self {
        Activation::Elu(EluActivation::default())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Elu(e) => elu(x, e.alpha),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Elu(e) => elu_grad(x, e.alpha),
            Activation::Identity => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_at_zero() {
        assert_eq!(elu(0.0, 1.0), 0.0);
        assert_eq!(elu_grad(0.0, 1.0), 1.0);
    }

    #[test]
    fn positive_branch_is_identity() {
        assert_eq!(elu(2.5, 1.0), 2.5);
        assert_eq!(elu_grad(2.5, 0.3), 1.0);
    }

    #[test]
    fn negative_branch() {
        // e^-1 - 1 to 16 digits
        let expected = -0.632_120_558_828_557_7;
        assert!((elu(-1.0, 1.0) - expected).abs() < 1e-15);
        assert!((elu_grad(-1.0, 2.0) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn continuous_at_zero() {
        for alpha in [0.5, 1.0, 2.0] {
            assert!(elu(-1e-12, alpha).abs() < 1e-11);
            assert!(elu(1e-12, alpha).abs() < 1e-11);
        }
    }
}
