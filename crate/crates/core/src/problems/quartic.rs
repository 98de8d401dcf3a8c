//! A small smooth test objective: quadratic `H` plus a quartic double well.

use crate::linops::{LinearOperator, Vector};
use crate::splitting::{AffinePart, Problem};

/// `H = ½⟨Au, u⟩ − ⟨b₀, u⟩`, `F = (γ/4)Σ(uᵢ² − 1)²`.
///
/// `lip` is the declared Lipschitz constant of `f`; [`Problem::lipschitz_covering`]
/// widens it to `γ(3‖u‖²_∞ − 1)` away from the origin.
#[derive(Debug, Clone)]
pub struct QuadCubic {
    pub affine: AffinePart,
    pub gamma: f64,
    pub lip: f64,
}

impl QuadCubic {
    /// Dirichlet chain `A = κ·tridiag(−1, 2, −1)` on `n` nodes with load `b₀`,
    /// and `lip` set for `‖u‖_∞ ≤ box_radius`.
    pub fn chain(kappa: f64, b0: Vector, gamma: f64, box_radius: f64) -> crate::Result<Self> {
        let n = b0.len();
        let trip = (0..n).flat_map(|i| {
            let diag = std::iter::once((i, i, 2.0 * kappa));
            let off = (i > 0).then(|| (i, i - 1, -kappa));
            diag.chain(off)
        });
        let a = LinearOperator::Sparse(crate::linops::SymmetricCsr::from_triplets(n, trip)?);
        Ok(Self {
            affine: AffinePart::new(a, b0)?,
            gamma,
            lip: (gamma * (3.0 * box_radius * box_radius - 1.0)).max(gamma),
        })
    }
}

impl Problem for QuadCubic {
    fn dim(&self) -> usize {
        self.affine.b0.len()
    }
    fn convex_value(&self, u: &Vector) -> f64 {
        0.5 * self.affine.a.quad_form(u).unwrap_or(f64::NAN) - self.affine.b0.dot(u)
    }
    fn convex_grad(&self, u: &Vector) -> Vector {
        self.affine.a.apply_unchecked(u) - &self.affine.b0
    }
    fn smooth_value(&self, u: &Vector) -> f64 {
        0.25 * self.gamma * u.iter().map(|v| (v * v - 1.0).powi(2)).sum::<f64>()
    }
    fn smooth_grad(&self, u: &Vector) -> Vector {
        u.map(|v| self.gamma * (v * v * v - v))
    }
    fn lipschitz(&self) -> f64 {
        self.lip
    }
    fn lipschitz_covering(&self, u: &Vector) -> f64 {
        let r = u.amax();
        self.lip.max(self.gamma * (3.0 * r * r - 1.0))
    }
    fn affine_part(&self) -> Option<&AffinePart> {
        Some(&self.affine)
    }
}
