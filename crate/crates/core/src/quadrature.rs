//! Gauss–Legendre panels under the substitution `s = a + (b - a) sin²θ`.
//!
//! The substitution maps `θ ∈ [0, π/2]` onto the panel with
//! `ds = (b - a) sin 2θ dθ`, which vanishes at both panel ends. Integrands
//! with `(s - a)^{-1/2}` or `(b - s)^{-1/2}` endpoint behaviour become smooth
//! in `θ`, so a fixed Gauss–Legendre order in `θ` handles them.

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRule {
    /// Points as fractions of the panel, in `(0, 1)`, ascending.
    fractions: Vec<f64>,
    /// Weights for a unit-length panel; they sum to 1.
    weights: Vec<f64>,
}

impl PanelRule {
    pub fn new(order: usize) -> Result<Self> {
        let gl = GaussLegendre::new(order)
            .map_err(|e| Error::InvalidArgument(format!("quadrature order {order}: {e}")))?;
        let quarter_pi = std::f64::consts::FRAC_PI_4;
        let mut pairs: Vec<(f64, f64)> = gl
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| {
                let theta = quarter_pi * (x + 1.0);
                let sin = theta.sin();
                (sin * sin, w * quarter_pi * (2.0 * theta).sin())
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (fractions, weights) = pairs.into_iter().unzip();
        Ok(Self { fractions, weights })
    }

    pub fn order(&self) -> usize {
        self.fractions.len()
    }

    /// Quadrature points `(s, weight)` on `[a, b]`.
    pub fn points(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let width = b - a;
        self.fractions
            .iter()
            .zip(&self.weights)
            .map(move |(&f, &w)| (a + width * f, width * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.points(a, b).map(|(s, w)| w * f(s)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_sum_to_one() {
        // The weights integrate sin 2θ, which Gauss–Legendre resolves spectrally.
        let defect = |order| (PanelRule::new(order).unwrap().weights.iter().sum::<f64>() - 1.0).abs();
        assert!(defect(2) < 5e-2);
        assert!(defect(5) < defect(2));
        assert!(defect(16) < 1e-14, "{}", defect(16));
    }

    #[test]
    fn order_one_is_rejected() {
        assert!(PanelRule::new(1).is_err());
    }

    #[test]
    fn beta_half_half_is_exact() {
        // ∫₀¹ σ^{-1/2}(1-σ)^{-1/2} dσ = π; in θ the integrand is the constant 2.
        let rule = PanelRule::new(3).unwrap();
        let got = rule.integrate(0.0, 1.0, |s| 1.0 / (s * (1.0 - s)).sqrt());
        assert!((got - PI).abs() < 1e-13, "{got}");
    }

    #[test]
    fn three_quarter_singularity_converges() {
        // ∫₀¹ σ^{-1/2}(1-σ)^{-3/4} dσ = B(1/2, 1/4) = Γ(1/2)Γ(1/4)/Γ(3/4).
        let exact = 5.244_115_108_584_24;
        let err = |order| (PanelRule::new(order).unwrap().integrate(0.0, 1.0, |s| s.powf(-0.5) * (1.0 - s).powf(-0.75)) - exact).abs();
        assert!(err(64) < err(8));
        assert!(err(64) < 5e-2);
    }

    #[test]
    fn smooth_integrand_on_shifted_panel() {
        let rule = PanelRule::new(16).unwrap();
        let got = rule.integrate(0.5, 2.0, |s| (-3.0 * s).exp());
        let want = ((-1.5f64).exp() - (-6.0f64).exp()) / 3.0;
        assert!((got - want).abs() < 1e-10 * want);
    }
}
