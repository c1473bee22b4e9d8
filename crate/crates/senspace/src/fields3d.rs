//! Multi-center harmonic potentials on ℝ³.
//!
//! The adiabatic potential is
//!
//! ```text
//! h_ε(x) = c + w_hole ε/|x| + Σ_ν w_ν ε (1/|x − p_ν| + 1/|x + p_ν|)
//! ```
//!
//! with the centers coming in antipodal pairs. Pairs are always summed
//! together, so `h(−x)` and `h(x)` are bitwise equal.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Highest multipole degree supported.
pub const MAX_ORDER: usize = 12;

/// Symmetric center configuration and adiabatic parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    /// All centers, including both members of each antipodal pair.
    pub centers: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub hole_weight: f64,
    pub epsilon: f64,
    pub constant: f64,
    /// Representatives p of each pair ±p with their weight.
    pairs: Vec<(Vec3, f64)>,
}

impl PotentialSpec {
    /// Validate an explicit center list. Weights default to 1/2.
    pub fn new(centers: Vec<Vec3>, weights: Option<Vec<f64>>, hole_weight: f64, epsilon: f64) -> Result<Self> {
        let weights = weights.unwrap_or_else(|| vec![0.5; centers.len()]);
        if weights.len() != centers.len() {
            return Err(Error::InvalidSpec("one weight per center required".into()));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidSpec(format!("epsilon must be positive, got {epsilon}")));
        }
        let scale = centers.iter().fold(1.0f64, |m, c| m.max(c.norm()));
        let tiny = 1e-12 * scale;
        for (i, c) in centers.iter().enumerate() {
            if c.norm() <= tiny {
                return Err(Error::InvalidSpec(format!("center {i} is at the origin")));
            }
            for d in &centers[..i] {
                if (c - d).norm() <= tiny {
                    return Err(Error::InvalidSpec(format!("center {i} is repeated")));
                }
            }
        }
        let mut used = vec![false; centers.len()];
        let mut pairs = Vec::new();
        for i in 0..centers.len() {
            if used[i] {
                continue;
            }
            let j = (0..centers.len())
                .find(|&j| !used[j] && j != i && (centers[j] + centers[i]).norm() <= tiny)
                .ok_or_else(|| Error::InvalidSpec(format!("center {i} has no antipodal partner")))?;
            if weights[i] != weights[j] {
                return Err(Error::InvalidSpec(format!("centers {i} and {j} are antipodal but weighted differently")));
            }
            used[i] = true;
            used[j] = true;
            pairs.push((centers[i], weights[i]));
        }
        Ok(PotentialSpec { centers, weights, hole_weight, epsilon, constant: 1.0, pairs })
    }

    /// Build from one representative per pair; weights 1/2, hole weight −2.
    pub fn symmetric(half: &[Vec3], epsilon: f64) -> Result<Self> {
        let mut centers = Vec::with_capacity(2 * half.len());
        for p in half {
            centers.push(*p);
            centers.push(-p);
        }
        Self::new(centers, None, -2.0, epsilon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut s = Self::new(self.centers.clone(), Some(self.weights.clone()), self.hole_weight, epsilon)?;
        s.constant = self.constant;
        Ok(s)
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    /// Number of antipodal pairs k.
    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(Vec3, f64)] {
        &self.pairs
    }

    /// Scene scale used for the exclusion radius.
    pub fn scale(&self) -> f64 {
        self.centers.iter().fold(1.0f64, |m, c| m.max(c.norm()))
    }

    pub fn exclusion_radius(&self) -> f64 {
        1e-9 * self.scale()
    }

    pub fn max_center_norm(&self) -> f64 {
        self.centers.iter().fold(0.0f64, |m, c| m.max(c.norm()))
    }

    pub fn min_separation(&self) -> f64 {
        let mut d = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            d = d.min(c.norm());
            for e in &self.centers[..i] {
                d = d.min((c - e).norm());
            }
        }
        d
    }

    /// Sum of all center weights (the hole excluded).
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// All singular points: the hole first, then the centers, each with its coefficient.
    pub fn sources(&self) -> Vec<(Vec3, f64)> {
        let mut v = vec![(Vec3::zeros(), self.hole_weight)];
        v.extend(self.centers.iter().copied().zip(self.weights.iter().copied()));
        v
    }

    fn check(&self, x: &Vec3) -> Result<()> {
        let r = self.exclusion_radius();
        let mut d = x.norm();
        for (p, _) in &self.pairs {
            d = d.min((x - p).norm()).min((x + p).norm());
        }
        if d < r {
            Err(Error::EvaluationAtSingularity { distance: d })
        } else {
            Ok(())
        }
    }
}

/// h_ε(x).
pub fn eval_potential(spec: &PotentialSpec, x: &Vec3) -> Result<f64> {
    spec.check(x)?;
    Ok(potential_unchecked(spec, x))
}

fn potential_unchecked(spec: &PotentialSpec, x: &Vec3) -> f64 {
    let eps = spec.epsilon;
    let mut s = 0.0;
    for (p, w) in &spec.pairs {
        s += w * (1.0 / (x - p).norm() + 1.0 / (x + p).norm());
    }
    spec.constant + eps * spec.hole_weight / x.norm() + eps * s
}

/// ∇h_ε(x).
pub fn eval_gradient(spec: &PotentialSpec, x: &Vec3) -> Result<Vec3> {
    spec.check(x)?;
    let eps = spec.epsilon;
    let mono = |d: Vec3| -d / d.norm().powi(3);
    let mut g = Vec3::zeros();
    for (p, w) in &spec.pairs {
        g += *w * (mono(x - p) + mono(x + p));
    }
    Ok(eps * (spec.hole_weight * mono(*x) + g))
}

/// Hessian of h_ε.
pub fn eval_hessian(spec: &PotentialSpec, x: &Vec3) -> Result<nalgebra::Matrix3<f64>> {
    spec.check(x)?;
    let hess = |d: Vec3| {
        let r = d.norm();
        (3.0 * d * d.transpose() - nalgebra::Matrix3::identity() * r * r) / r.powi(5)
    };
    let mut m = spec.hole_weight * hess(*x);
    for (p, w) in &spec.pairs {
        m += *w * (hess(x - p) + hess(x + p));
    }
    Ok(spec.epsilon * m)
}

/// Decomposition h_ε = H_ε + u_ε near the origin, with the model
/// H_ε = 1 + με − 2ε/|x|.
#[derive(Debug, Clone)]
pub struct NearZeroSplit {
    pub mu: f64,
    pub spec: PotentialSpec,
}

impl NearZeroSplit {
    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    /// H_ε(x) = 1 + με − 2ε/|x|.
    pub fn model(&self, x: &Vec3) -> f64 {
        1.0 + self.mu * self.spec.epsilon - 2.0 * self.spec.epsilon / x.norm()
    }

    pub fn model_gradient(&self, x: &Vec3) -> Vec3 {
        2.0 * self.spec.epsilon * x / x.norm().powi(3)
    }

    /// u_ε = h_ε − H_ε, written so that every term vanishes at 0.
    pub fn remainder(&self, x: &Vec3) -> f64 {
        let eps = self.spec.epsilon;
        let mut s = 0.0;
        for (p, w) in self.spec.pairs() {
            s += w * (1.0 / (x - p).norm() + 1.0 / (x + p).norm() - 2.0 / p.norm());
        }
        let mut u = eps * s + (self.spec.constant - 1.0);
        let extra = self.spec.hole_weight + 2.0;
        if extra != 0.0 {
            u += eps * extra / x.norm();
        }
        u
    }

    pub fn remainder_gradient(&self, x: &Vec3) -> Vec3 {
        let eps = self.spec.epsilon;
        let mono = |d: Vec3| -d / d.norm().powi(3);
        let mut g = Vec3::zeros();
        for (p, w) in self.spec.pairs() {
            g += *w * (mono(x - p) + mono(x + p));
        }
        let extra = self.spec.hole_weight + 2.0;
        if extra != 0.0 {
            g += extra * mono(*x);
        }
        eps * g
    }
}

pub fn split_near_zero(spec: &PotentialSpec) -> NearZeroSplit {
    let mu = spec.pairs().iter().map(|(p, w)| 2.0 * w / p.norm()).sum();
    NearZeroSplit { mu, spec: spec.clone() }
}

/// Exterior solid-harmonic expansion of h − c:
/// `Σ_{ℓ,m} M_ℓm S_ℓm(x̂) / |x|^{ℓ+1}` with Schmidt semi-normalized real harmonics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipoleExpansion {
    pub order: usize,
    /// Validity radius: the expansion converges for |x| > radius.
    pub radius: f64,
    /// `coefficients[ℓ][ℓ + m]` for m in −ℓ..=ℓ.
    pub coefficients: Vec<Vec<f64>>,
}

/// Real Schmidt semi-normalized harmonics `S_ℓm(dir)`, indexed `[ℓ][ℓ + m]`.
///
/// m > 0 carries cos(mφ), m < 0 carries sin(|m|φ). They satisfy the
/// addition theorem `P_ℓ(a·b) = Σ_m S_ℓm(a) S_ℓm(b)`.
pub fn real_harmonics(order: usize, dir: &Vec3) -> Vec<Vec<f64>> {
    let r = dir.norm();
    let t = dir.z / r;
    let rho = (dir.x * dir.x + dir.y * dir.y).sqrt();
    let s = rho / r;
    let (cphi, sphi) = if rho > 0.0 { (dir.x / rho, dir.y / rho) } else { (1.0, 0.0) };
    // p[l][m]
    let mut p = vec![vec![0.0; order + 1]; order + 1];
    p[0][0] = 1.0;
    for m in 1..=order {
        p[m][m] = if m == 1 { s } else { ((2 * m - 1) as f64 / (2 * m) as f64).sqrt() * s * p[m - 1][m - 1] };
    }
    for m in 0..order {
        p[m + 1][m] = ((2 * m + 1) as f64).sqrt() * t * p[m][m];
    }
    for m in 0..=order {
        for l in (m + 2)..=order {
            let a = (2 * l - 1) as f64 * t * p[l - 1][m];
            let b = (((l - 1) * (l - 1) - m * m) as f64).sqrt() * p[l - 2][m];
            p[l][m] = (a - b) / ((l * l - m * m) as f64).sqrt();
        }
    }
    let mut cos_m = vec![1.0; order + 1];
    let mut sin_m = vec![0.0; order + 1];
    for m in 1..=order {
        cos_m[m] = cos_m[m - 1] * cphi - sin_m[m - 1] * sphi;
        sin_m[m] = sin_m[m - 1] * cphi + cos_m[m - 1] * sphi;
    }
    (0..=order)
        .map(|l| {
            let mut row = vec![0.0; 2 * l + 1];
            row[l] = p[l][0];
            for m in 1..=l {
                row[l + m] = p[l][m] * cos_m[m];
                row[l - m] = p[l][m] * sin_m[m];
            }
            row
        })
        .collect()
}

/// Expansion valid outside the ball of radius `radius`.
pub fn multipole_expand(spec: &PotentialSpec, order: usize, radius: f64) -> Result<MultipoleExpansion> {
    let max_center = spec.max_center_norm();
    if radius <= max_center {
        return Err(Error::RadiusInsideSources { radius, max_center });
    }
    if order > MAX_ORDER {
        return Err(Error::InvalidSpec(format!("multipole order {order} exceeds {MAX_ORDER}")));
    }
    let eps = spec.epsilon;
    let mut coefficients: Vec<Vec<f64>> = (0..=order).map(|l| vec![0.0; 2 * l + 1]).collect();
    coefficients[0][0] = eps * spec.hole_weight;
    for (p, w) in spec.pairs() {
        let sp = real_harmonics(order, p);
        let sm = real_harmonics(order, &-p);
        let r = p.norm();
        for l in 0..=order {
            let rl = r.powi(l as i32);
            for i in 0..=2 * l {
                coefficients[l][i] += eps * w * rl * (sp[l][i] + sm[l][i]);
            }
        }
    }
    Ok(MultipoleExpansion { order, radius, coefficients })
}

impl MultipoleExpansion {
    /// Value of the truncated expansion (h − c) at x.
    pub fn eval(&self, x: &Vec3) -> f64 {
        let r = x.norm();
        let s = real_harmonics(self.order, x);
        let mut v = 0.0;
        for l in 0..=self.order {
            let rl = r.powi(l as i32 + 1);
            let row: f64 = self.coefficients[l].iter().zip(&s[l]).map(|(c, y)| c * y).sum();
            v += row / rl;
        }
        v
    }

    /// Rows (ℓ, m, coefficient) for tabular export.
    pub fn rows(&self) -> Vec<(usize, i64, f64)> {
        let mut out = Vec::new();
        for (l, row) in self.coefficients.iter().enumerate() {
            for (i, c) in row.iter().enumerate() {
                out.push((l, i as i64 - l as i64, *c));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(rng: &mut ChaCha8Rng, k: usize, eps: f64) -> PotentialSpec {
        let half: Vec<Vec3> = (0..k)
            .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.3..2.0)))
            .collect();
        PotentialSpec::symmetric(&half, eps).unwrap()
    }

    #[test]
    fn empty_configuration() {
        let s = PotentialSpec::symmetric(&[], 0.1).unwrap();
        let v = eval_potential(&s, &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn widely_separated_pair() {
        let s = PotentialSpec::symmetric(&[Vec3::new(10.0, 0.0, 0.0)], 1.0).unwrap();
        let v = eval_potential(&s, &Vec3::new(5.0, 0.0, 0.0)).unwrap();
        assert!((v - (1.0 - 2.0 / 5.0 + 1.0 / 10.0 + 1.0 / 30.0)).abs() < 1e-15);
    }

    #[test]
    fn far_field_monopole_fit() {
        let s = PotentialSpec::symmetric(&[Vec3::new(0.3, -0.2, 1.0)], 0.01).unwrap();
        let x = Vec3::new(60.0, 0.0, 80.0);
        let m = x.norm() * (eval_potential(&s, &x).unwrap() - 1.0) / s.epsilon;
        assert!((m + 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_asymmetric_and_singular() {
        let one = PotentialSpec::new(vec![Vec3::new(1.0, 0.0, 0.0)], None, -2.0, 0.1);
        assert!(matches!(one, Err(Error::InvalidSpec(_))));
        let s = PotentialSpec::symmetric(&[Vec3::new(1.0, 0.0, 0.0)], 0.1).unwrap();
        assert!(matches!(eval_potential(&s, &Vec3::zeros()), Err(Error::EvaluationAtSingularity { .. })));
        assert!(eval_potential(&s, &Vec3::new(1.0, 0.0, 1e-10)).is_err());
    }

    #[test]
    fn mu_and_remainder_at_origin() {
        let s = PotentialSpec::symmetric(&[Vec3::new(0.0, 0.0, 2.0)], 0.1).unwrap();
        let sp = split_near_zero(&s);
        assert!((sp.mu - 0.5).abs() < 1e-15);
        assert_eq!(sp.remainder(&Vec3::zeros()), 0.0);
        let x = Vec3::new(0.3, 0.1, -0.2);
        let h = eval_potential(&s, &x).unwrap();
        assert!((sp.model(&x) + sp.remainder(&x) - h).abs() < 1e-14);
    }

    #[test]
    fn remainder_gradient_vanishes_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_spec(&mut rng, 2, 0.05);
        let sp = split_near_zero(&s);
        let h = 1e-4;
        let g: Vec<f64> = (0..3)
            .map(|i| {
                let mut e = Vec3::zeros();
                e[i] = h;
                (sp.remainder(&e) - sp.remainder(&-e)) / (2.0 * h)
            })
            .collect();
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        assert!(n < 1e-7 * s.epsilon, "{n}");
    }

    #[test]
    fn harmonics_addition_theorem() {
        let a = Vec3::new(0.3, -0.5, 0.8);
        let b = Vec3::new(-0.1, 0.9, 0.2);
        let sa = real_harmonics(MAX_ORDER, &a);
        let sb = real_harmonics(MAX_ORDER, &b);
        let c = a.normalize().dot(&b.normalize());
        let (mut p0, mut p1) = (1.0, c);
        for l in 0..=MAX_ORDER {
            let pl = if l == 0 { 1.0 } else if l == 1 { c } else {
                let p2 = ((2 * l - 1) as f64 * c * p1 - (l - 1) as f64 * p0) / l as f64;
                p0 = p1;
                p1 = p2;
                p2
            };
            let dot: f64 = sa[l].iter().zip(&sb[l]).map(|(x, y)| x * y).sum();
            assert!((dot - pl).abs() < 1e-13, "l={l}");
        }
    }

    #[test]
    fn multipole_dipole_and_monopole() {
        let s = PotentialSpec::symmetric(&[Vec3::new(0.4, 0.2, 1.0)], 0.1).unwrap();
        let m = multipole_expand(&s, 4, 2.0).unwrap();
        assert!(m.coefficients[1].iter().all(|c| c.abs() < 1e-16));
        assert!((m.coefficients[0][0] + s.epsilon).abs() < 1e-15);
        assert!(matches!(multipole_expand(&s, 4, 0.5), Err(Error::RadiusInsideSources { .. })));
    }

    #[test]
    fn multipole_truncation_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spec(&mut rng, 3, 0.1);
        let m = multipole_expand(&s, 4, 2.0 * s.max_center_norm()).unwrap();
        for _ in 0..50 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let x = 10.0 * s.max_center_norm() * d;
            let exact = eval_potential(&s, &x).unwrap() - 1.0;
            let rel = (m.eval(&x) - exact).abs() / exact.abs();
            assert!(rel < 1e-5 * 10.0, "{rel}");
        }
    }

    #[test]
    fn harmonicity_converges_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_spec(&mut rng, 2, 0.2);
        let lap = |x: &Vec3, h: f64| {
            let mut acc = -6.0 * eval_potential(&s, x).unwrap();
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = h;
                acc += eval_potential(&s, &(x + e)).unwrap() + eval_potential(&s, &(x - e)).unwrap();
            }
            acc / (h * h)
        };
        let mut worst_ratio = 0.0f64;
        for _ in 0..1000 {
            let x = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let dist = s.sources().iter().map(|(c, _)| (x - c).norm()).fold(f64::INFINITY, f64::min);
            if dist < 0.3 {
                continue;
            }
            let (a, b) = (lap(&x, 0.02).abs(), lap(&x, 0.01).abs());
            if a > 1e-6 {
                worst_ratio = worst_ratio.max(b / a);
            }
        }
        // second order: halving the step divides the error by 4
        assert!(worst_ratio < 0.3, "{worst_ratio}");
    }

    #[test]
    fn odd_multipoles_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_spec(&mut rng, 3, 0.3);
        let m = multipole_expand(&s, MAX_ORDER, 3.0 * s.max_center_norm()).unwrap();
        for l in (1..=MAX_ORDER).step_by(2) {
            let scale = s.max_center_norm().powi(l as i32);
            assert!(m.coefficients[l].iter().all(|c| c.abs() < 1e-14 * scale), "l={l}");
        }
    }

    proptest! {
        #[test]
        fn parity_is_bitwise(px in -2.0f64..2.0, py in -2.0f64..2.0, pz in 0.1f64..2.0,
                             x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            let s = PotentialSpec::symmetric(&[Vec3::new(px, py, pz), Vec3::new(1.5, -0.5, 0.25)], 0.05).unwrap();
            let v = Vec3::new(x, y, z);
            if let (Ok(a), Ok(b)) = (eval_potential(&s, &v), eval_potential(&s, &-v)) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn remainder_is_even(x in -0.5f64..0.5, y in -0.5f64..0.5, z in -0.5f64..0.5) {
            let s = PotentialSpec::symmetric(&[Vec3::new(0.2, 0.7, 1.1)], 0.05).unwrap();
            let sp = split_near_zero(&s);
            let v = Vec3::new(x, y, z);
            prop_assert_eq!(sp.remainder(&v).to_bits(), sp.remainder(&-v).to_bits());
        }
    }
}
