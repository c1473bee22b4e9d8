//! The blow-up of ℝ³ × [0, ε₀) at the origin, its three charts, and the
//! boundary defining functions of the gluing space at fixed ε.
//!
//! Homogeneous coordinates [Z, R, S] ~ [tZ, tR, S/t] blow down to
//! x = SZ, ε = SR. The front face is S = 0 and the lift of ε = 0 is R = 0.

use crate::cutoff::smoothstep;
use crate::error::{Error, Result};
use crate::fields3d::{PotentialSpec, Vec3};

/// Normalized representative: |Z|² + R² = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousPoint {
    pub z: Vec3,
    pub r: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    /// (x', ε') = (Z/R, RS), valid for R > 0.
    Prime,
    /// (x, ε) = (SZ, SR), valid for S > 0.
    Plain,
    /// (y, ρ, σ) = (Z/|Z|, R/|Z|, S|Z|), valid for Z ≠ 0.
    Corner,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartCoords {
    Prime { xp: Vec3, eps_p: f64 },
    Plain { x: Vec3, eps: f64 },
    Corner { y: Vec3, rho: f64, sigma: f64 },
}

impl HomogeneousPoint {
    fn normalized(z: Vec3, r: f64, s: f64) -> Self {
        let n = (z.norm_squared() + r * r).sqrt();
        HomogeneousPoint { z: z / n, r: r / n, s: s * n }
    }

    pub fn from_coords(c: &ChartCoords) -> Self {
        match *c {
            ChartCoords::Plain { x, eps } => Self::normalized(x, eps, 1.0),
            ChartCoords::Prime { xp, eps_p } => Self::normalized(xp, 1.0, eps_p),
            ChartCoords::Corner { y, rho, sigma } => Self::normalized(y, rho, sigma),
        }
    }

    /// π = ε = RS, the same in every chart.
    pub fn pi(&self) -> f64 {
        self.r * self.s
    }

    /// β = (SZ, SR).
    pub fn blow_down(&self) -> (Vec3, f64) {
        (self.z * self.s, self.r * self.s)
    }
}

pub fn chart_convert(p: &HomogeneousPoint, target: Chart) -> Result<ChartCoords> {
    let zn = p.z.norm();
    match target {
        Chart::Plain => {
            if !(p.s > 0.0) {
                return Err(Error::ChartDomainViolation("plain"));
            }
            Ok(ChartCoords::Plain { x: p.z * p.s, eps: p.r * p.s })
        }
        Chart::Prime => {
            if !(p.r > 0.0) {
                return Err(Error::ChartDomainViolation("prime"));
            }
            Ok(ChartCoords::Prime { xp: p.z / p.r, eps_p: p.r * p.s })
        }
        Chart::Corner => {
            if !(zn > 0.0) {
                return Err(Error::ChartDomainViolation("corner"));
            }
            Ok(ChartCoords::Corner { y: p.z / zn, rho: p.r / zn, sigma: p.s * zn })
        }
    }
}

/// r[Z, R, S] = [Z, R, 0]: the extension of x/ε to the front face.
pub fn lift_rescale(p: &HomogeneousPoint) -> HomogeneousPoint {
    HomogeneousPoint { s: 0.0, ..*p }
}

/// The lift of ε/|x|, namely R/|Z|; it vanishes on the lifted boundary R = 0.
pub fn lift_eps_over_r(p: &HomogeneousPoint) -> f64 {
    p.r / p.z.norm()
}

/// Chart-wise components of the lift of ε∂/∂x_j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorFieldLift {
    pub axis: usize,
}

pub fn lift_vector_field(axis: usize) -> VectorFieldLift {
    VectorFieldLift { axis }
}

impl VectorFieldLift {
    /// Components along the chart's coordinate fields:
    /// plain (∂_x, ∂_ε), prime (∂_x', ∂_ε'), corner (∂_y, ∂_ρ, ∂_σ).
    pub fn coefficients(&self, c: &ChartCoords) -> Vec<f64> {
        let j = self.axis;
        match *c {
            ChartCoords::Plain { eps, .. } => {
                let mut v = vec![0.0; 4];
                v[j] = eps;
                v
            }
            ChartCoords::Prime { .. } => {
                let mut v = vec![0.0; 4];
                v[j] = 1.0;
                v
            }
            ChartCoords::Corner { y, rho, sigma } => {
                // −y_j(ρ²∂_ρ − ρσ∂_σ) + ρ(δ_ij − y_i y_j)∂_{y_i}
                let mut v: Vec<f64> = (0..3).map(|i| rho * ((i == j) as u8 as f64 - y[i] * y[j])).collect();
                v.push(-y[j] * rho * rho);
                v.push(y[j] * rho * sigma);
                v
            }
        }
    }
}

/// Boundary defining functions of the gluing space at fixed ε and δ.
///
/// For each singular point c_ν (the hole first, then the centers) with
/// r = |x − c_ν|:
///
/// * σ_ν = ε for r ≤ ε/√δ,
/// * σ_ν = r on ε/δ ≤ r ≤ R_a,
/// * σ_ν = 1 for r ≥ R_b,
///
/// joined by log-scale smoothstep blends; R_b = min(d/2, 1) with d the
/// minimal separation and R_a = 0.6 R_b. Then ρ = ε / Π σ_ν, so the
/// product identity is exact, and σ_I = 1/|x| beyond 2R_I, 1 inside R_I.
#[derive(Debug, Clone)]
pub struct BdfSuite {
    pub epsilon: f64,
    pub delta: f64,
    pub centers: Vec<Vec3>,
    pub r_inner: f64,
    pub r_neck: f64,
    pub r_a: f64,
    pub r_b: f64,
    pub r_infinity: f64,
}

fn log_blend(r: f64, lo: f64, hi: f64) -> f64 {
    smoothstep((r.ln() - lo.ln()) / (hi.ln() - lo.ln()))
}

impl BdfSuite {
    /// σ as a function of the distance to one center.
    pub fn sigma_of_distance(&self, r: f64) -> f64 {
        let eps = self.epsilon;
        if r <= self.r_inner {
            eps
        } else if r < self.r_neck {
            let w = log_blend(r, self.r_inner, self.r_neck);
            (eps.ln() + w * (r.ln() - eps.ln())).exp()
        } else if r <= self.r_a {
            r
        } else if r < self.r_b {
            let w = log_blend(r, self.r_a, self.r_b);
            ((1.0 - w) * r.ln()).exp()
        } else {
            1.0
        }
    }

    pub fn sigma_nu(&self, nu: usize, x: &Vec3) -> f64 {
        self.sigma_of_distance((x - self.centers[nu]).norm())
    }

    pub fn sigmas(&self, x: &Vec3) -> Vec<f64> {
        (0..self.centers.len()).map(|nu| self.sigma_nu(nu, x)).collect()
    }

    pub fn rho(&self, x: &Vec3) -> f64 {
        self.epsilon / self.sigmas(x).iter().product::<f64>()
    }

    pub fn sigma_infinity(&self, x: &Vec3) -> f64 {
        let r = x.norm();
        if r <= self.r_infinity {
            1.0
        } else if r >= 2.0 * self.r_infinity {
            1.0 / r
        } else {
            (-log_blend(r, self.r_infinity, 2.0 * self.r_infinity) * r.ln()).exp()
        }
    }
}

pub fn build_bdf_suite(spec: &PotentialSpec, delta: f64) -> Result<BdfSuite> {
    let eps = spec.epsilon;
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::BadDelta(format!("delta = {delta} must lie in (0, 1/2)")));
    }
    if !(eps < delta * delta) {
        return Err(Error::BadDelta(format!("epsilon = {eps} must be below delta^2 = {}", delta * delta)));
    }
    let centers: Vec<Vec3> = spec.sources().iter().map(|s| s.0).collect();
    let r_b = (0.5 * spec.min_separation()).min(1.0);
    let r_a = 0.6 * r_b;
    let r_neck = eps / delta;
    if r_neck >= r_a {
        return Err(Error::BadDelta(format!("neck radius {r_neck} reaches the outer blend at {r_a}")));
    }
    Ok(BdfSuite {
        epsilon: eps,
        delta,
        centers,
        r_inner: eps / delta.sqrt(),
        r_neck,
        r_a,
        r_b,
        r_infinity: (2.0 * spec.max_center_norm() + 1.0).max(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> HomogeneousPoint {
        let x = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        HomogeneousPoint::from_coords(&ChartCoords::Plain { x, eps: rng.gen_range(1e-4..0.5) })
    }

    #[test]
    fn corner_example() {
        let p = HomogeneousPoint::from_coords(&ChartCoords::Plain { x: Vec3::new(2.0, 0.0, 0.0), eps: 0.1 });
        match chart_convert(&p, Chart::Corner).unwrap() {
            ChartCoords::Corner { y, rho, sigma } => {
                assert!((y - Vec3::x()).norm() < 1e-15);
                assert!((rho - 0.05).abs() < 1e-15);
                assert!((sigma - 2.0).abs() < 1e-15);
                assert!((rho * sigma - 0.1).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn round_trips_and_chart_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = random_point(&mut rng);
            assert!((p.z.norm_squared() + p.r * p.r - 1.0).abs() < 1e-14);
            for ch in [Chart::Plain, Chart::Prime, Chart::Corner] {
                let c = chart_convert(&p, ch).unwrap();
                let q = HomogeneousPoint::from_coords(&c);
                assert!((q.z - p.z).norm() < 1e-13 && (q.r - p.r).abs() < 1e-13 && (q.s - p.s).abs() < 1e-13 * p.s);
                let pi = match c {
                    ChartCoords::Plain { eps, .. } => eps,
                    ChartCoords::Prime { eps_p, .. } => eps_p,
                    ChartCoords::Corner { rho, sigma, .. } => rho * sigma,
                };
                assert!((pi - p.pi()).abs() < 1e-13 * p.pi());
                let (x, e) = q.blow_down();
                let (x0, e0) = p.blow_down();
                assert!((x - x0).norm() < 1e-12 && (e - e0).abs() < 1e-13);
            }
        }
        let front = lift_rescale(&random_point(&mut rng));
        assert_eq!(chart_convert(&front, Chart::Plain), Err(Error::ChartDomainViolation("plain")));
    }

    #[test]
    fn rescale_lift() {
        let p = HomogeneousPoint::from_coords(&ChartCoords::Plain { x: Vec3::new(3.0, 0.0, 0.0), eps: 0.5 });
        match chart_convert(&lift_rescale(&p), Chart::Prime).unwrap() {
            ChartCoords::Prime { xp, eps_p } => {
                assert!((xp - Vec3::new(6.0, 0.0, 0.0)).norm() < 1e-14);
                assert_eq!(eps_p, 0.0);
            }
            _ => unreachable!(),
        }
        // ε/|x| -> 1/|x'| and 0 on the lifted boundary
        assert!((lift_eps_over_r(&p) - 1.0 / 6.0).abs() < 1e-15);
        let y = HomogeneousPoint::from_coords(&ChartCoords::Corner { y: Vec3::z(), rho: 0.0, sigma: 1.0 });
        assert_eq!(lift_eps_over_r(&y), 0.0);
        // along ε = c|x| the rescaled point is constant
        for t in [1.0, 1e-3, 1e-8] {
            let q = HomogeneousPoint::from_coords(&ChartCoords::Plain { x: Vec3::new(t, 0.0, 0.0), eps: 0.25 * t });
            match chart_convert(&lift_rescale(&q), Chart::Corner).unwrap() {
                ChartCoords::Corner { rho, .. } => assert!((rho - 0.25).abs() < 1e-14),
                _ => unreachable!(),
            }
        }
    }

    /// Plain → corner map evaluated on complex arguments, for complex-step Jacobians.
    fn plain_to_corner(x: [C; 3], eps: C) -> [C; 5] {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        [x[0] / r, x[1] / r, x[2] / r, eps / r, r]
    }

    fn prime_to_corner(x: [C; 3], ep: C) -> [C; 5] {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        [x[0] / r, x[1] / r, x[2] / r, 1.0 / r, ep * r]
    }

    fn push_forward(map: fn([C; 3], C) -> [C; 5], x: Vec3, e: f64, v: &[f64]) -> [f64; 5] {
        let h = 1e-30;
        let xs = [0, 1, 2].map(|i| C::new(x[i], h * v[i]));
        let out = map(xs, C::new(e, h * v[3]));
        out.map(|c| c.im / h)
    }

    #[test]
    fn vector_field_lifts_agree_across_charts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = random_point(&mut rng);
            let corner = chart_convert(&p, Chart::Corner).unwrap();
            let plain = chart_convert(&p, Chart::Plain).unwrap();
            let prime = chart_convert(&p, Chart::Prime).unwrap();
            for j in 0..3 {
                let l = lift_vector_field(j);
                let want = l.coefficients(&corner);
                let (ChartCoords::Plain { x, eps }, ChartCoords::Prime { xp, eps_p }) = (plain, prime) else { unreachable!() };
                let a = push_forward(plain_to_corner, x, eps, &l.coefficients(&plain));
                let b = push_forward(prime_to_corner, xp, eps_p, &l.coefficients(&prime));
                for k in 0..5 {
                    assert!((a[k] - want[k]).abs() < 1e-10);
                    assert!((b[k] - want[k]).abs() < 1e-10);
                }
                // applied to ρ the lift lands in ρ²·bounded
                if let ChartCoords::Corner { rho, .. } = corner {
                    assert!(want[3].abs() <= rho * rho * (1.0 + 1e-12));
                }
            }
        }
    }

    fn suite() -> (PotentialSpec, BdfSuite) {
        let spec = PotentialSpec::symmetric(&[Vec3::new(0.0, 0.0, 1.0)], 0.02).unwrap();
        let b = build_bdf_suite(&spec, 0.25).unwrap();
        (spec, b)
    }

    #[test]
    fn bdf_normalizations() {
        let (_, b) = suite();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let nu = rng.gen_range(0..b.centers.len());
            // neck near the corner
            let r = rng.gen_range(b.r_neck..b.r_a);
            let x = b.centers[nu] + r * d;
            assert_eq!(b.sigma_nu(nu, &x), (x - b.centers[nu]).norm());
            assert!((b.rho(&x) - b.epsilon / (x - b.centers[nu]).norm()).abs() < 1e-15);
            // core
            let x = b.centers[nu] + rng.gen_range(0.0..b.r_inner) * d;
            assert_eq!(b.sigma_nu(nu, &x), b.epsilon);
            // product identity anywhere
            let x = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let prod: f64 = b.sigmas(&x).iter().product();
            assert!((b.rho(&x) * prod - b.epsilon).abs() < 1e-12 * b.epsilon);
            assert!(b.rho(&x) > 0.0 && b.sigma_infinity(&x) > 0.0);
        }
        let far = Vec3::new(0.0, 50.0, 0.0);
        assert!((b.sigma_infinity(&far) - 1.0 / 50.0).abs() < 1e-16);
    }

    #[test]
    fn bad_delta() {
        let (spec, _) = suite();
        assert!(matches!(build_bdf_suite(&spec, 0.6), Err(Error::BadDelta(_))));
        assert!(matches!(build_bdf_suite(&spec, 0.1), Err(Error::BadDelta(_))));
    }
}
