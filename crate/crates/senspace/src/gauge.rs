//! Circle-bundle connections for the Gibbons–Hawking potentials.
//!
//! Convention: the triple is ω_j = α∧e_j + h e_k∧e_l with e = dx/ε, and
//! closure of that triple fixes the curvature to dα = −*_ε dh. A potential
//! term w ε/|x − c| therefore contributes the Dirac monopole of charge w,
//! whose flux through a sphere around c is 4πw (degree 2w).

use crate::error::{Error, Result};
use crate::fd;
use crate::fields3d::{NearZeroSplit, PotentialSpec, Vec3};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Homotopy integrals are converged to this relative tolerance.
pub const HOMOTOPY_TOL: f64 = 1e-10;

/// Which Wu–Yang chart a monopole potential is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chart {
    /// Regular away from the ray below the center.
    North,
    /// Regular away from the ray above the center.
    South,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonopoleTerm {
    pub center: Vec3,
    pub coeff: f64,
    pub chart: Chart,
}

impl MonopoleTerm {
    pub fn potential(&self, x: &Vec3, chart: Chart) -> Vec3 {
        let d = x - self.center;
        let r = d.norm();
        let v = Vec3::new(-d.y, d.x, 0.0);
        match chart {
            Chart::North => self.coeff * v / (r * (r + d.z)),
            Chart::South => -self.coeff * v / (r * (r - d.z)),
        }
    }

    /// Exact line integral of the potential along the straight segment
    /// from `p` to `q`, as a signed solid angle (the segment must avoid
    /// the Dirac string of `chart`).
    pub fn segment_integral(&self, p: &Vec3, q: &Vec3, chart: Chart) -> f64 {
        let a = (p - self.center).normalize();
        let b = (q - self.center).normalize();
        let n = match chart {
            Chart::North => Vec3::z(),
            Chart::South => -Vec3::z(),
        };
        let num = n.dot(&a.cross(&b));
        let den = 1.0 + n.dot(&a) + a.dot(&b) + b.dot(&n);
        self.coeff * 2.0 * num.atan2(den)
    }
}

/// α = dθ + A, with A a sum of monopole potentials in dx components.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionForm {
    pub terms: Vec<MonopoleTerm>,
    pub epsilon: f64,
    /// Whether the canonical dθ summand is present (always true for
    /// connections built here).
    pub fiber_term: bool,
}

impl ConnectionForm {
    /// Horizontal part A(x) in the stored charts.
    pub fn base_form(&self, x: &Vec3) -> Vec3 {
        self.terms.iter().map(|t| t.potential(x, t.chart)).sum()
    }

    /// A in a gauge that is regular near `about`: each term uses the chart
    /// whose Dirac string points away from `about`.
    pub fn base_form_regular(&self, x: &Vec3, about: &Vec3) -> Vec3 {
        self.terms
            .iter()
            .map(|t| {
                let c = if about.z >= t.center.z { Chart::North } else { Chart::South };
                t.potential(x, c)
            })
            .sum()
    }

    /// Exact ∫ A along the segment p → q in the stored charts.
    pub fn segment_integral(&self, p: &Vec3, q: &Vec3) -> f64 {
        self.terms.iter().map(|t| t.segment_integral(p, q, t.chart)).sum()
    }

    /// Curvature dA as a vector in the (dx₂∧dx₃, dx₃∧dx₁, dx₁∧dx₂) basis,
    /// by a fourth-order difference curl in a locally regular gauge.
    pub fn curvature_fd(&self, x: &Vec3, h: f64) -> Vec3 {
        fd::curl(|y| self.base_form_regular(y, x), x, h, 4)
    }

    /// Pull back under x ↦ −x.
    pub fn pullback_antipodal(&self, x: &Vec3) -> Vec3 {
        // ι*A at x has dx components −A(−x)
        -self.base_form(&-x)
    }
}

/// The two-chart Dirac monopole serving the potential term coeff·ε/|x − center|.
pub fn monopole_connection(center: Vec3, coeff: f64, epsilon: f64) -> ConnectionForm {
    ConnectionForm { terms: vec![MonopoleTerm { center, coeff, chart: Chart::North }], epsilon, fiber_term: true }
}

/// Connection with dα = −*_ε dh_ε for the full potential.
///
/// Pair members use mirrored charts (north at p, south at −p), which makes
/// ι*α = −α hold exactly away from the hole, whose own term is
/// antisymmetric up to the gauge shift 2w dφ.
pub fn assemble_connection(spec: &PotentialSpec) -> ConnectionForm {
    let mut terms = vec![MonopoleTerm { center: Vec3::zeros(), coeff: spec.hole_weight, chart: Chart::North }];
    for (p, w) in spec.pairs() {
        terms.push(MonopoleTerm { center: *p, coeff: *w, chart: Chart::North });
        terms.push(MonopoleTerm { center: -p, coeff: *w, chart: Chart::South });
    }
    ConnectionForm { terms, epsilon: spec.epsilon, fiber_term: true }
}

/// One sphere-flux measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxRecord {
    pub center: [f64; 3],
    pub coeff: f64,
    pub radius: f64,
    pub flux_over_2pi: f64,
    pub nearest_integer: i64,
    pub error: f64,
}

/// Nodes of the product sphere rule used for flux integrals.
pub const FLUX_RULE: (usize, usize) = (48, 96);

/// Flux of the curvature through the sphere |x − center| = radius, over 2π.
pub fn sphere_flux(conn: &ConnectionForm, center: Vec3, radius: f64, coeff: f64) -> FluxRecord {
    let rule = quad::sphere_rule(FLUX_RULE.0, FLUX_RULE.1);
    let h = 1e-3 * radius;
    let mut flux = 0.0;
    for (n, w) in &rule {
        let x = center + radius * n;
        flux += w * radius * radius * conn.curvature_fd(&x, h).dot(n);
    }
    let f = flux / (2.0 * PI);
    let nearest = f.round();
    FluxRecord { center: [center.x, center.y, center.z], coeff, radius, flux_over_2pi: f, nearest_integer: nearest as i64, error: (f - nearest).abs() }
}

/// Flux records for every center, the hole, and a sphere enclosing everything.
pub fn flux_report(spec: &PotentialSpec) -> Vec<FluxRecord> {
    let conn = assemble_connection(spec);
    let r_local = 0.4 * spec.min_separation();
    let mut out = Vec::new();
    for (c, w) in spec.sources() {
        out.push(sphere_flux(&conn, c, if c.norm() == 0.0 && spec.k() == 0 { 1.0 } else { r_local }, w));
    }
    let total = spec.hole_weight + spec.total_weight();
    out.push(sphere_flux(&conn, Vec3::zeros(), 2.0 * spec.max_center_norm() + 1.0, total));
    out
}

/// ∮ (A_N − A_S) around the equator of a single term, over 2π: the degree.
pub fn wu_yang_degree(term: &MonopoleTerm, radius: f64, n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let a = 2.0 * PI * i as f64 / n as f64;
        let b = 2.0 * PI * (i + 1) as f64 / n as f64;
        let p = term.center + radius * Vec3::new(a.cos(), a.sin(), 0.0);
        let q = term.center + radius * Vec3::new(b.cos(), b.sin(), 0.0);
        s += term.segment_integral(&p, &q, Chart::North) - term.segment_integral(&p, &q, Chart::South);
    }
    s / (2.0 * PI)
}

/// Radial-homotopy primitive of β = −*_ε du on a ball.
///
/// `α₁(x) = −(1/ε) ∫₀¹ t ∇u(tx) × x dt`, so that dα₁ = −*_ε du.
pub struct CurlSolution<G> {
    grad_u: G,
    pub ball_radius: f64,
    pub epsilon: f64,
}

impl<G: Fn(&Vec3) -> Vec3> CurlSolution<G> {
    pub fn eval(&self, x: &Vec3) -> Result<Vec3> {
        if x.norm() > self.ball_radius * (1.0 + 1e-12) {
            return Err(Error::InvalidSpec(format!("point outside the primitive's ball of radius {}", self.ball_radius)));
        }
        let v = quad::integrate_vec(
            |t| {
                let c = (self.grad_u)(&(t * x)).cross(x) * t;
                [c.x, c.y, c.z]
            },
            0.0,
            1.0,
            HOMOTOPY_TOL,
        )?;
        Ok(-Vec3::new(v[0], v[1], v[2]) / self.epsilon)
    }
}

pub fn curl_solve<G: Fn(&Vec3) -> Vec3>(grad_u: G, ball_radius: f64, epsilon: f64) -> CurlSolution<G> {
    CurlSolution { grad_u, ball_radius, epsilon }
}

/// Least-squares growth exponent of sup_{|x|=r} f(x) over the given radii.
pub fn growth_exponent<F: Fn(&Vec3) -> f64>(f: F, radii: &[f64]) -> f64 {
    let dirs = quad::fibonacci_sphere(64);
    let lr: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let lv: Vec<f64> = radii
        .iter()
        .map(|r| dirs.iter().map(|d| f(&(*r * d))).fold(0.0f64, f64::max).ln())
        .collect();
    quad::ols_slope(&lr, &lv)
}

/// Primitive b of η = ω − Ω, the difference between the triple of h_ε and
/// the model triple of H_ε (same fibre coordinate, α = α₀ + α₁).
///
/// In dx components, η_j has the vector
/// `B_j = (α₁ × ê_j)/ε + u ê_j/ε²` and `b_j = ∫₀¹ t B_j(tx) × x dt`.
pub struct PrimitiveForm {
    pub split: NearZeroSplit,
    pub epsilon: f64,
    pub ball_radius: f64,
    pub growth_exponent: f64,
}

impl PrimitiveForm {
    fn alpha1(&self, x: &Vec3) -> Result<Vec3> {
        let sol = curl_solve(|y: &Vec3| self.split.remainder_gradient(y), self.ball_radius, self.epsilon);
        sol.eval(x)
    }

    /// α₁ at x.
    pub fn alpha_correction(&self, x: &Vec3) -> Result<Vec3> {
        self.alpha1(x)
    }

    /// Vectors B_j of η_j in the (dx₂∧dx₃, dx₃∧dx₁, dx₁∧dx₂) basis.
    pub fn eta(&self, x: &Vec3) -> Result<[Vec3; 3]> {
        let a1 = self.alpha1(x)?;
        Ok(eta_from(&a1, self.split.remainder(x), self.epsilon))
    }

    /// dx components of b_1, b_2, b_3.
    pub fn b(&self, x: &Vec3) -> Result<[Vec3; 3]> {
        let eps = self.epsilon;
        let fail = std::cell::RefCell::new(None);
        let v = quad::integrate_vec(
            |t| {
                let y = t * x;
                let a1 = match self.alpha1(&y) {
                    Ok(a) => a,
                    Err(e) => {
                        *fail.borrow_mut() = Some(e);
                        Vec3::zeros()
                    }
                };
                let eta = eta_from(&a1, self.split.remainder(&y), eps);
                let mut out = [0.0; 9];
                for j in 0..3 {
                    let c = eta[j].cross(x) * t;
                    out[3 * j] = c.x;
                    out[3 * j + 1] = c.y;
                    out[3 * j + 2] = c.z;
                }
                out
            },
            0.0,
            1.0,
            HOMOTOPY_TOL,
        );
        let v = v?;
        if let Some(e) = fail.into_inner() {
            return Err(e);
        }
        Ok([Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]), Vec3::new(v[6], v[7], v[8])])
    }

    /// |b|_ε: the largest of the three 1-form norms in the metric |dx|²/ε².
    pub fn norm_eps(&self, x: &Vec3) -> Result<f64> {
        let b = self.b(x)?;
        Ok(self.epsilon * b.iter().map(|v| v.norm()).fold(0.0, f64::max))
    }
}

fn eta_from(a1: &Vec3, u: f64, eps: f64) -> [Vec3; 3] {
    let e = [Vec3::x(), Vec3::y(), Vec3::z()];
    [0, 1, 2].map(|j| a1.cross(&e[j]) / eps + e[j] * (u / (eps * eps)))
}

/// Build b for the near-zero split; the growth exponent is fitted on radii
/// {0.1, 0.05, 0.025}·min|p|.
pub fn triple_primitive(split: &NearZeroSplit, epsilon: f64) -> Result<PrimitiveForm> {
    let pmin = split.spec.pairs().iter().map(|(p, _)| p.norm()).fold(f64::INFINITY, f64::min);
    let ball_radius = if pmin.is_finite() { 0.9 * pmin } else { 1.0 };
    let mut pf = PrimitiveForm { split: split.clone(), epsilon, ball_radius, growth_exponent: f64::NAN };
    if pmin.is_finite() {
        let radii = [0.1 * pmin, 0.05 * pmin, 0.025 * pmin];
        let dirs = quad::fibonacci_sphere(32);
        let mut lv = Vec::new();
        for r in radii {
            let mut m = 0.0f64;
            for d in &dirs {
                m = m.max(pf.norm_eps(&(r * d))?);
            }
            lv.push(m.ln());
        }
        let lr: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        pf.growth_exponent = quad::ols_slope(&lr, &lv);
    }
    Ok(pf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields3d::{eval_gradient, split_near_zero};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_point(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
        Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
    }

    #[test]
    fn segment_integral_matches_quadrature() {
        let t = MonopoleTerm { center: Vec3::new(0.1, -0.2, 0.3), coeff: 0.5, chart: Chart::North };
        let p = Vec3::new(1.0, 0.4, 0.9);
        let q = Vec3::new(-0.2, 1.1, 0.5);
        for chart in [Chart::North, Chart::South] {
            let num = quad::integrate(|s| t.potential(&(p + s * (q - p)), chart).dot(&(q - p)), 0.0, 1.0, 1e-13).unwrap();
            assert!((num - t.segment_integral(&p, &q, chart)).abs() < 1e-12);
        }
    }

    #[test]
    fn chart_transition_is_integer_gauge_shift() {
        let t = MonopoleTerm { center: Vec3::zeros(), coeff: -2.0, chart: Chart::North };
        assert!((wu_yang_degree(&t, 0.7, 64) + 4.0).abs() < 1e-12);
        let t = MonopoleTerm { center: Vec3::zeros(), coeff: 0.5, chart: Chart::North };
        assert!((wu_yang_degree(&t, 0.7, 64) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curvature_is_minus_star_dh() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let half = [Vec3::new(0.8, 0.1, 0.4), Vec3::new(-0.3, 0.9, 0.6)];
        let spec = PotentialSpec::symmetric(&half, 0.05).unwrap();
        let conn = assemble_connection(&spec);
        let mut worst = 0.0f64;
        let mut n = 0;
        while n < 1000 {
            let x = rand_point(&mut rng, 1.5);
            if spec.sources().iter().any(|(c, _)| (x - c).norm() < 0.2) || x.xy().norm() < 0.05 {
                continue;
            }
            // stay clear of the stored Dirac strings
            if spec.sources().iter().any(|(c, _)| (x - c).xy().norm() < 0.05) {
                continue;
            }
            n += 1;
            let f = fd::curl(|y| conn.base_form(y), &x, 1e-4, 4);
            let target = -eval_gradient(&spec, &x).unwrap() / spec.epsilon;
            worst = worst.max((f - target).norm());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn antipodal_pullback_is_minus_alpha_up_to_hole_gauge() {
        let spec = PotentialSpec::symmetric(&[Vec3::new(0.3, 0.5, 0.9)], 0.1).unwrap();
        let conn = assemble_connection(&spec);
        let hole = conn.terms[0];
        let x = Vec3::new(0.7, -0.4, 0.2);
        let lhs = conn.pullback_antipodal(&x);
        let gauge = hole.potential(&x, Chart::North) - hole.potential(&x, Chart::South);
        let rhs = -conn.base_form(&x) + gauge;
        assert!((lhs - rhs).norm() < 1e-14);
        // and the pure-pair part is exactly odd
        let pairs = ConnectionForm { terms: conn.terms[1..].to_vec(), ..conn };
        assert!((pairs.pullback_antipodal(&x) + pairs.base_form(&x)).norm() < 1e-15);
    }

    #[test]
    fn flux_degrees() {
        let c = monopole_connection(Vec3::new(0.0, 0.0, 1.0), 0.5, 0.1);
        assert!((sphere_flux(&c, Vec3::new(0.0, 0.0, 1.0), 0.3, 0.5).flux_over_2pi - 1.0).abs() < 1e-6);
        let c = monopole_connection(Vec3::zeros(), -2.0, 0.1);
        assert!((sphere_flux(&c, Vec3::zeros(), 0.3, -2.0).flux_over_2pi + 4.0).abs() < 1e-6);
    }

    #[test]
    fn curl_solve_constant_and_quadratic() {
        let s = curl_solve(|_x: &Vec3| Vec3::zeros(), 1.0, 0.1);
        assert_eq!(s.eval(&Vec3::new(0.3, 0.2, 0.1)).unwrap(), Vec3::zeros());
        let eps = 0.1;
        let grad = move |x: &Vec3| eps * Vec3::new(x.y, x.x, 0.0);
        let s = curl_solve(grad, 1.0, eps);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = rand_point(&mut rng, 0.5);
            let f = fd::curl(|y| s.eval(y).unwrap(), &x, 1e-4, 2);
            assert!((f + grad(&x) / eps).norm() < 1e-6);
        }
        let slope = growth_exponent(|x| eps * s.eval(x).unwrap().norm(), &[0.5, 0.25, 0.125, 0.0625]);
        assert!(slope >= 2.0 - 0.05, "{slope}");
    }

    #[test]
    fn primitive_growth_and_exactness() {
        let spec = PotentialSpec::symmetric(&[Vec3::new(0.0, 0.0, 2.0)], 0.05).unwrap();
        let split = split_near_zero(&spec);
        let pf = triple_primitive(&split, spec.epsilon).unwrap();
        assert!(pf.growth_exponent >= 2.9, "{}", pf.growth_exponent);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let d = rand_point(&mut rng, 1.0).normalize();
            let x = rng.gen_range(0.2..0.6) * d;
            let eta = pf.eta(&x).unwrap();
            for j in 0..3 {
                let db = fd::curl(|y| pf.b(y).unwrap()[j], &x, 1e-4, 2);
                let scale = eta[j].norm().max(1.0);
                assert!((db - eta[j]).norm() < 1e-6 * scale, "{}", (db - eta[j]).norm());
            }
        }
    }

    #[test]
    fn zero_remainder_gives_zero_primitive() {
        let spec = PotentialSpec::symmetric(&[], 0.05).unwrap();
        let pf = triple_primitive(&split_near_zero(&spec), 0.05).unwrap();
        assert_eq!(pf.b(&Vec3::new(0.1, 0.2, 0.3)).unwrap(), [Vec3::zeros(); 3]);
    }
}
