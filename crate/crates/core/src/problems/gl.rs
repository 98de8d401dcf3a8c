//! Semi-supervised segmentation with the graph Ginzburg-Landau energy
//!
//! ```text
//! E(u) = Σᵢⱼ (ε/2) wᵢⱼ (uᵢ − uⱼ)² + (1/ε) Σᵢ (uᵢ² − 1)²/4 + (η/2) Σᵢ Λᵢ (uᵢ − yᵢ)²
//! ```
//!
//! The sum runs over ordered pairs, so the Dirichlet part is `ε uᵀL_w u`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::error::{check_dim, Error, Result};
use crate::linops::{cg_solve, LinearOperator, SymmetricCsr, Vector};
use crate::precond::power_iteration;
use crate::solver::baselines::{DcSplitting, ProxDcSplitting};
use crate::splitting::{AffinePart, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlParams {
    pub epsilon: f64,
    pub eta: f64,
    /// Kernel width; the median squared feature distance over adjacent pixels when unset.
    pub sigma2: Option<f64>,
    /// Chebyshev radius of the proximity window.
    pub radius: usize,
    /// Features are the intensities of a `(2p+1)²` patch. Wider patches blur
    /// region edges, so the default is the bare pixel.
    pub patch_radius: usize,
    /// `L` is taken on the box `‖u‖_∞ ≤ box_radius`.
    pub box_radius: f64,
}

impl Default for GlParams {
    fn default() -> Self {
        Self {
            epsilon: 10.0,
            eta: 10.0,
            sigma2: None,
            radius: 3,
            patch_radius: 0,
            box_radius: 1.1,
        }
    }
}

impl GlParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", format!("must be positive, got {}", self.epsilon));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be nonnegative, got {}", self.eta));
        }
        if let Some(s) = self.sigma2 {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sigma2", format!("must be positive, got {s}"));
            }
        }
        if self.radius == 0 {
            return bad("radius", "must be at least 1".into());
        }
        if !(self.box_radius > 1.0 / 3f64.sqrt()) {
            return bad("box_radius", format!("must exceed 1/√3, got {}", self.box_radius));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlInstance {
    pub width: usize,
    pub height: usize,
    pub features: Vec<Vec<f64>>,
    /// Undirected edges `(i, j, wᵢⱼ)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
    /// Labels in `{−1, 0, +1}`; `Λᵢ = 1` exactly where the label is nonzero.
    pub labels: Vec<i8>,
    pub truth: Option<Vec<bool>>,
    pub sigma2: f64,
    pub params: GlParams,
}

impl GlInstance {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `u⁰ = y` on labeled nodes and 0 elsewhere.
    pub fn initial_guess(&self) -> Vector {
        Vector::from_iterator(self.len(), self.labels.iter().map(|&l| f64::from(l)))
    }
}

/// Intensities of the `(2p+1)²` patch around each pixel, edges clamped.
pub fn patch_features(img: &GrayImage, p: usize) -> Vec<Vec<f64>> {
    let (w, h) = (img.width as isize, img.height as isize);
    let p = p as isize;
    let mut out = Vec::with_capacity(img.len());
    for r in 0..h {
        for c in 0..w {
            let mut f = Vec::with_capacity(((2 * p + 1) * (2 * p + 1)) as usize);
            for dr in -p..=p {
                for dc in -p..=p {
                    let rr = (r + dr).clamp(0, h - 1) as usize;
                    let cc = (c + dc).clamp(0, w - 1) as usize;
                    f.push(img.get(rr, cc));
                }
            }
            out.push(f);
        }
    }
    out
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of `‖Pᵢ − Pⱼ‖²` over horizontally and vertically adjacent pixels.
/// Falls back to the mean, then to 1, when the median is zero.
pub fn median_sigma2(features: &[Vec<f64>], width: usize, height: usize) -> f64 {
    let mut d = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if c + 1 < width {
                d.push(dist_sq(&features[i], &features[i + 1]));
            }
            if r + 1 < height {
                d.push(dist_sq(&features[i], &features[i + width]));
            }
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let median = d[d.len() / 2];
    if median > 0.0 {
        return median;
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// `wᵢⱼ = exp(−‖Pᵢ − Pⱼ‖²/σ²)` for distinct pixels within Chebyshev distance
/// `radius` on the grid, 0 otherwise. Returns each edge once with `i < j`.
pub fn build_weights(
    features: &[Vec<f64>],
    width: usize,
    height: usize,
    sigma2: f64,
    radius: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    check_dim(width * height, features.len())?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma2",
            reason: format!("must be positive, got {sigma2}"),
        });
    }
    let rad = radius as isize;
    let mut edges = Vec::new();
    for r in 0..height as isize {
        for c in 0..width as isize {
            let i = r as usize * width + c as usize;
            for dr in 0..=rad {
                for dc in -rad..=rad {
                    // Visit each unordered pair once: later rows, or the same row to the right.
                    if dr == 0 && dc <= 0 {
                        continue;
                    }
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= height as isize || cc < 0 || cc >= width as isize {
                        continue;
                    }
                    let j = rr as usize * width + cc as usize;
                    let w = (-dist_sq(&features[i], &features[j]) / sigma2).exp();
                    edges.push((i, j, w));
                }
            }
        }
    }
    Ok(edges)
}

pub fn gl_instance(img: &GrayImage, labels: Vec<i8>, truth: Option<Vec<bool>>, params: GlParams) -> Result<GlInstance> {
    params.validate()?;
    check_dim(img.len(), labels.len())?;
    if let Some(t) = &truth {
        check_dim(img.len(), t.len())?;
    }
    if let Some(l) = labels.iter().find(|l| !(-1..=1).contains(*l)) {
        return Err(Error::InvalidParameter {
            name: "labels",
            reason: format!("label {l} not in {{-1, 0, 1}}"),
        });
    }
    let features = patch_features(img, params.patch_radius);
    let sigma2 = params
        .sigma2
        .unwrap_or_else(|| median_sigma2(&features, img.width, img.height));
    let edges = build_weights(&features, img.width, img.height, sigma2, params.radius)?;
    Ok(GlInstance {
        width: img.width,
        height: img.height,
        features,
        edges,
        labels,
        truth,
        sigma2,
        params,
    })
}

/// Two bright disks on a dark background with Gaussian noise, plus labels on
/// `label_fraction` of the pixels of each class and the ground-truth mask.
pub fn synthetic_two_disks(
    size: usize,
    noise: f64,
    label_fraction: f64,
    seed: u64,
) -> Result<(GrayImage, Vec<i8>, Vec<bool>)> {
    if size < 8 {
        return Err(Error::InvalidParameter {
            name: "size",
            reason: format!("must be at least 8, got {size}"),
        });
    }
    if !(0.0..=1.0).contains(&label_fraction) {
        return Err(Error::InvalidParameter {
            name: "label_fraction",
            reason: format!("must lie in [0, 1], got {label_fraction}"),
        });
    }
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidParameter {
        name: "noise",
        reason: e.to_string(),
    })?;
    let s = size as f64;
    let disks = [(0.32 * s, 0.34 * s, 0.17 * s), (0.66 * s, 0.64 * s, 0.2 * s)];
    let mut truth = vec![false; size * size];
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            truth[r * size + c] = disks
                .iter()
                .any(|&(cy, cx, rad)| (y - cy).powi(2) + (x - cx).powi(2) <= rad * rad);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = truth
        .iter()
        .map(|&t| {
            let base = if t { 0.75 } else { 0.25 };
            (base + normal.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();
    let mut labels = vec![0i8; size * size];
    for (class, label) in [(true, 1i8), (false, -1i8)] {
        let members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == class).collect();
        let count = ((members.len() as f64) * label_fraction).round() as usize;
        for k in sample(&mut rng, members.len(), count.min(members.len())) {
            labels[members[k]] = label;
        }
    }
    Ok((GrayImage::new(size, size, data)?, labels, truth))
}

/// `H(u) = ½uᵀAu − b₀ᵀu + c` with `F(u) = (γ/4) Σ (uᵢ² − 1)²`.
/// `f` is Lipschitz with `γ(3r² − 1)` on the box `‖u‖_∞ ≤ r`.
#[derive(Debug, Clone)]
pub struct QuadraticWell {
    pub affine: AffinePart,
    pub constant: f64,
    pub gamma: f64,
    pub box_radius: f64,
    pub truth: Option<Vec<bool>>,
}

impl QuadraticWell {
    fn lipschitz_on(&self, r: f64) -> f64 {
        self.gamma * (3.0 * r * r - 1.0)
    }
}

impl Problem for QuadraticWell {
    fn dim(&self) -> usize {
        self.affine.b0.len()
    }
    fn convex_value(&self, u: &Vector) -> f64 {
        0.5 * self.affine.a.apply_unchecked(u).dot(u) - self.affine.b0.dot(u) + self.constant
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
        self.lipschitz_on(self.box_radius)
    }
    fn lipschitz_covering(&self, u: &Vector) -> f64 {
        self.lipschitz_on(self.box_radius.max(u.amax()))
    }
    fn affine_part(&self) -> Option<&AffinePart> {
        Some(&self.affine)
    }
    fn quality(&self, u: &Vector) -> Option<f64> {
        let truth = self.truth.as_ref()?;
        dice(&threshold_seg(u), truth).ok()
    }
}

/// Assembles `A = 2εL_w + ηΛ`, `b₀ = ηΛy`, `γ = 1/ε`.
pub fn gl_problem(inst: &GlInstance) -> Result<QuadraticWell> {
    let p = &inst.params;
    let n = inst.len();
    let mut trip = Vec::with_capacity(3 * inst.edges.len() + n);
    for &(i, j, w) in &inst.edges {
        let v = 2.0 * p.epsilon * w;
        trip.extend([(i, i, v), (j, j, v), (i, j, -v)]);
    }
    let mut b0 = Vector::zeros(n);
    let mut constant = 0.0;
    for (i, &l) in inst.labels.iter().enumerate() {
        if l != 0 {
            trip.push((i, i, p.eta));
            b0[i] = p.eta * f64::from(l);
            constant += 0.5 * p.eta;
        }
    }
    let a = LinearOperator::Sparse(SymmetricCsr::from_triplets(n, trip)?);
    Ok(QuadraticWell {
        affine: AffinePart::new(a, b0)?,
        constant,
        gamma: 1.0 / p.epsilon,
        box_radius: p.box_radius,
        truth: inst.truth.clone(),
    })
}

/// `uᵢ > 0`; ties go to the negative class.
pub fn threshold_seg(u: &Vector) -> Vec<bool> {
    u.iter().map(|&v| v > 0.0).collect()
}

/// `2|X ∩ Y| / (|X| + |Y|)`.
pub fn dice(seg: &[bool], truth: &[bool]) -> Result<f64> {
    check_dim(truth.len(), seg.len())?;
    let x = seg.iter().filter(|&&v| v).count();
    let y = truth.iter().filter(|&&v| v).count();
    if x + y == 0 {
        return Err(Error::InvalidParameter {
            name: "masks",
            reason: "both masks are empty".into(),
        });
    }
    let both = seg.iter().zip(truth).filter(|(&a, &b)| a && b).count();
    Ok(2.0 * both as f64 / (x + y) as f64)
}

/// The DC pair `G = H + (L/2)‖u‖²`, `K = (L/2)‖u‖² − F`, whose convex step
/// is a CG solve with `A + LI`. Also a proximal splitting with `f = H`,
/// `g = (L/2)‖u‖²`.
#[derive(Debug, Clone)]
pub struct WellDc {
    well: QuadraticWell,
    shift: f64,
    shifted: LinearOperator,
    smooth_lipschitz: f64,
    pub cg_tol: f64,
}

impl WellDc {
    pub fn new(well: &QuadraticWell) -> Result<Self> {
        let shift = well.lipschitz();
        let a = &well.affine.a;
        let shifted = match a {
            LinearOperator::Sparse(s) => LinearOperator::Sparse(s.shifted(shift)),
            other => other
                .clone()
                .plus(LinearOperator::Identity(other.dim()).scaled(shift))?,
        };
        let smooth_lipschitz = power_iteration(a, 1e-8, 2000, 0x91) * (1.0 + 1e-6);
        Ok(Self {
            well: well.clone(),
            shift,
            shifted,
            smooth_lipschitz,
            cg_tol: 1e-10,
        })
    }
}

impl DcSplitting for WellDc {
    fn dim(&self) -> usize {
        self.well.dim()
    }
    fn energy(&self, u: &Vector) -> f64 {
        self.well.energy(u)
    }
    fn gradient(&self, u: &Vector) -> Vector {
        self.well.gradient(u)
    }
    fn concave_grad(&self, u: &Vector) -> Vector {
        u * self.shift - self.well.smooth_grad(u)
    }
    fn convex_argmin(&self, v: &Vector, warm: &Vector) -> Result<Vector> {
        let rhs = &self.well.affine.b0 + v;
        cg_solve(&self.shifted, &rhs, warm, self.cg_tol, 10 * self.well.dim() + 100)?.into_result()
    }
    fn quality(&self, u: &Vector) -> Option<f64> {
        self.well.quality(u)
    }
}

impl ProxDcSplitting for WellDc {
    fn dim(&self) -> usize {
        self.well.dim()
    }
    fn energy(&self, u: &Vector) -> f64 {
        self.well.energy(u)
    }
    fn gradient(&self, u: &Vector) -> Vector {
        self.well.gradient(u)
    }
    fn smooth_grad(&self, u: &Vector) -> Vector {
        self.well.convex_grad(u)
    }
    fn smooth_lipschitz(&self) -> f64 {
        self.smooth_lipschitz
    }
    fn prox(&self, z: &Vector, t: f64) -> Vector {
        z / (1.0 + t * self.shift)
    }
    fn concave_grad(&self, u: &Vector) -> Vector {
        DcSplitting::concave_grad(self, u)
    }
    fn quality(&self, u: &Vector) -> Option<f64> {
        self.well.quality(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::fd_gradient_oracle;
    use crate::linops::laplacian_from_edges;
    use rand::Rng;

    fn small_instance(seed: u64) -> GlInstance {
        let (img, labels, truth) = synthetic_two_disks(12, 0.05, 0.2, seed).unwrap();
        gl_instance(&img, labels, Some(truth), GlParams::default()).unwrap()
    }

    #[test]
    fn weight_examples() {
        let f = vec![vec![0.0], vec![0.0], vec![1.0], vec![0.5]];
        // 4x1 strip, radius 1: only consecutive pixels are adjacent.
        let e = build_weights(&f, 4, 1, 0.25, 1).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[0], (0, 1, 1.0));
        assert!((e[2].2 - (-1.0f64).exp()).abs() < 1e-15);
        assert!(!e.iter().any(|&(i, j, _)| (i, j) == (0, 2)));
    }

    #[test]
    fn weights_window_and_symmetry() {
        let inst = small_instance(1);
        for &(i, j, w) in &inst.edges {
            assert!(i < j);
            assert!((0.0..=1.0).contains(&w));
            let (ri, ci) = (i / inst.width, i % inst.width);
            let (rj, cj) = (j / inst.width, j % inst.width);
            assert!(ri.abs_diff(rj).max(ci.abs_diff(cj)) <= 3);
        }
        let mut seen = std::collections::HashSet::new();
        assert!(inst.edges.iter().all(|&(i, j, _)| seen.insert((i, j))));
    }

    #[test]
    fn well_examples() {
        let inst = small_instance(2);
        let p = gl_problem(&inst).unwrap();
        let ones = Vector::from_element(p.dim(), 1.0);
        assert_eq!(p.smooth_grad(&ones), Vector::zeros(p.dim()));
        assert_eq!(p.smooth_value(&-&ones), 0.0);
        let two = Vector::from_element(p.dim(), 2.0);
        assert!((p.smooth_grad(&two)[0] - 0.6).abs() < 1e-15);
        assert!((p.lipschitz() - (3.0 * 1.21 - 1.0) / 10.0).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_matches_double_sum() {
        let inst = small_instance(3);
        let n = inst.len();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = Vector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        let lap = laplacian_from_edges(n, &inst.edges).unwrap();
        let eps = inst.params.epsilon;
        let quad = eps * lap.quad_form(&u).unwrap();
        let mut w = nalgebra::DMatrix::zeros(n, n);
        for &(i, j, v) in &inst.edges {
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        let mut double = 0.0;
        for i in 0..n {
            for j in 0..n {
                double += 0.5 * eps * w[(i, j)] * (u[i] - u[j]).powi(2);
            }
        }
        assert!(quad >= 0.0);
        assert!((quad - double).abs() <= 1e-10 * double);

        // H from its displayed form.
        let p = gl_problem(&inst).unwrap();
        let fidelity: f64 = (0..n)
            .filter(|&i| inst.labels[i] != 0)
            .map(|i| 0.5 * inst.params.eta * (u[i] - f64::from(inst.labels[i])).powi(2))
            .sum();
        assert!((p.convex_value(&u) - (double + fidelity)).abs() <= 1e-10 * (double + fidelity));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let inst = small_instance(5);
        let p = gl_problem(&inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let u = Vector::from_fn(p.dim(), |_, _| rng.random_range(-1.2..1.2));
            let g = p.gradient(&u);
            let fd = fd_gradient_oracle(|x| p.energy(x), &u);
            assert!((&g - &fd).norm() <= 1e-6 * g.norm());
        }
    }

    #[test]
    fn declared_lipschitz_is_respected() {
        let p = gl_problem(&small_instance(7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fprime = |x: f64| p.gamma * (x * x * x - x);
        for _ in 0..10_000 {
            let a: f64 = rng.random_range(-1.1..1.1);
            let b: f64 = rng.random_range(-1.1..1.1);
            if a != b {
                assert!((fprime(a) - fprime(b)).abs() / (a - b).abs() <= p.lipschitz() + 1e-8);
            }
        }
    }

    #[test]
    fn dice_examples() {
        let x = vec![true; 100];
        assert_eq!(dice(&x, &x).unwrap(), 1.0);
        assert_eq!(dice(&[true, false], &[false, true]).unwrap(), 0.0);
        let mut a = vec![false; 200];
        let mut b = vec![false; 200];
        a[..100].iter_mut().for_each(|v| *v = true);
        b[1..101].iter_mut().for_each(|v| *v = true);
        assert!((dice(&a, &b).unwrap() - 0.99).abs() < 1e-15);
        assert!(dice(&[false], &[false]).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(
            threshold_seg(&Vector::from_vec(vec![0.2, -0.3, 0.0])),
            vec![true, false, false]
        );
        assert!(threshold_seg(&Vector::from_element(4, 1.0)).iter().all(|&v| v));
        assert!(!threshold_seg(&Vector::from_element(4, -1.0)).iter().any(|&v| v));
    }

    #[test]
    fn synthetic_labels_follow_truth() {
        let (img, labels, truth) = synthetic_two_disks(64, 0.05, 0.05, 9).unwrap();
        assert_eq!(img.len(), 4096);
        for (l, t) in labels.iter().zip(&truth) {
            assert!(*l == 0 || (*l == 1) == *t);
        }
        let pos = truth.iter().filter(|&&t| t).count();
        let lab_pos = labels.iter().filter(|&&l| l == 1).count();
        assert_eq!(lab_pos, (pos as f64 * 0.05).round() as usize);
        assert_eq!(synthetic_two_disks(64, 0.05, 0.05, 9).unwrap().0, img);
    }

    #[test]
    fn dc_argmin_solves_shifted_system() {
        let p = gl_problem(&small_instance(10)).unwrap();
        let dc = WellDc::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = Vector::from_fn(p.dim(), |_, _| rng.random_range(-1.0..1.0));
        let y = dc.convex_argmin(&v, &Vector::zeros(p.dim())).unwrap();
        // ∇G(y) = v.
        let grad_g = p.convex_grad(&y) + &y * p.lipschitz();
        assert!((grad_g - v).norm() < 1e-8);
    }
}
