//! Triples of 2-forms: Gram matrix, defect, metric reconstruction,
//! complex structures and torsion coefficients.
//!
//! Coframes put the fibre direction first: (α or dθ, dx₁/ε, dx₂/ε, dx₃/ε),
//! oriented by e⁰∧e¹∧e²∧e³.

use crate::error::{Error, Result};
use crate::fields3d::{eval_potential, PotentialSpec, Vec3};
use crate::forms::{self, basis2, wedge22, Form2, Form3};
use crate::gauge::ConnectionForm;
use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coframe {
    /// (dθ, dx/ε) coordinate coframe of the adiabatic GH space.
    Rescaled { epsilon: f64 },
    /// (α, dx/ε): the connection itself as the fibre covector.
    Adapted { epsilon: f64 },
    /// An abstract coframe with no coordinate meaning.
    Abstract,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub coframe: Coframe,
    pub components: [Form2; 3],
    pub volume_unit: f64,
}

impl Triple {
    pub fn new(coframe: Coframe, components: [Form2; 3]) -> Self {
        Triple { coframe, components, volume_unit: 1.0 }
    }

    /// ω₁ = e⁰¹ + e²³ and cyclic.
    pub fn flat() -> Self {
        Triple::new(Coframe::Abstract, flat_components())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Triple { components: self.components.map(|w| w * c), ..*self }
    }

    /// q_ij = ω_i∧ω_j / volume_unit.
    pub fn gram(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| wedge22(&self.components[i], &self.components[j]) / self.volume_unit)
    }

    pub fn min_gram_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.gram()).eigenvalues.min()
    }

    pub fn is_symplectic(&self) -> bool {
        self.min_gram_eigenvalue() > 0.0
    }
}

pub fn flat_components() -> [Form2; 3] {
    [basis2(0, 1) + basis2(2, 3), basis2(0, 2) + basis2(3, 1), basis2(0, 3) + basis2(1, 2)]
}

/// (q, Q) with Q the trace-free part of q.
pub fn gram_and_defect(t: &Triple) -> (Matrix3<f64>, Matrix3<f64>) {
    let q = t.gram();
    let qq = q - Matrix3::identity() * (q.trace() / 3.0);
    (q, qq)
}

/// |Q| / (tr q / 3): the scale-free defect used throughout.
pub fn normalized_defect(t: &Triple) -> f64 {
    let (q, qq) = gram_and_defect(t);
    qq.norm() / (q.trace() / 3.0)
}

/// ω_j = α∧e_j + h e_k∧e_l, with `alpha_row` the components of α in
/// the coframe (dθ, dx/ε).
pub fn gh_triple(h_val: f64, alpha_row: &Vector4<f64>, epsilon: f64) -> Result<Triple> {
    if !(h_val > 0.0) {
        return Err(Error::NonpositivePotential { value: h_val });
    }
    let e = |i: usize| Vector4::from_fn(|k, _| if k == i { 1.0 } else { 0.0 });
    let comps = [(1, 2, 3), (2, 3, 1), (3, 1, 2)].map(|(j, k, l)| forms::wedge11(alpha_row, &e(j)) + basis2(k, l) * h_val);
    Ok(Triple::new(Coframe::Rescaled { epsilon }, comps))
}

/// The GH triple of the full potential at x, with α = dθ + A.
pub fn gh_triple_at(spec: &PotentialSpec, conn: &ConnectionForm, x: &Vec3) -> Result<Triple> {
    let h = eval_potential(spec, x)?;
    let a = conn.base_form(x) * spec.epsilon;
    gh_triple(h, &Vector4::new(1.0, a.x, a.y, a.z), spec.epsilon)
}

/// Symmetric positive-definite metric in the triple's coframe.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetric {
    pub components: Matrix4<f64>,
    pub min_eigenvalue: f64,
}

impl FrameMetric {
    pub fn new(components: Matrix4<f64>) -> Self {
        let min_eigenvalue = SymmetricEigen::new(components).eigenvalues.min();
        FrameMetric { components, min_eigenvalue }
    }
}

/// Rescale the triple so that φ_i∧φ_j = 2ν δ_ij with ν = tr q / 6.
pub fn orthonormalize(t: &Triple) -> Result<(Triple, f64)> {
    let q = t.gram();
    let eig = SymmetricEigen::new(q);
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(Error::NotSymplectic { min_eig });
    }
    let nu = q.trace() / 6.0;
    let inv_sqrt = eig.eigenvectors * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * eig.eigenvectors.transpose();
    let c = (2.0 * nu).sqrt();
    let comps = [0, 1, 2].map(|i| {
        let mut m = Form2::zeros();
        for j in 0..3 {
            m += t.components[j] * (c * inv_sqrt[(i, j)]);
        }
        m
    });
    Ok((Triple { components: comps, ..*t }, nu))
}

/// The metric whose self-dual forms are spanned by the triple, with
/// volume density ν = tr q / 6 (so the flat triple gives the identity).
pub fn metric_from_triple(t: &Triple) -> Result<FrameMetric> {
    let (phi, nu) = orthonormalize(t)?;
    let [p1, p2, p3] = &phi.components;
    let mut g = Matrix4::zeros();
    for a in 0..4 {
        for b in 0..4 {
            let mut s = 0.0;
            for c in 0..4 {
                for d in 0..4 {
                    for e in 0..4 {
                        for f in 0..4 {
                            let l = forms::levi(c, d, e, f);
                            if l != 0.0 {
                                s += l * p1[(a, c)] * p2[(d, e)] * p3[(f, b)];
                            }
                        }
                    }
                }
            }
            g[(a, b)] = s;
        }
    }
    let g = 0.5 * (g + g.transpose());
    let det = g.determinant();
    let mut kappa = (nu * nu / det.abs()).powf(0.25);
    if g.trace() < 0.0 {
        kappa = -kappa;
    }
    let g = g * kappa;
    let m = FrameMetric::new(g);
    if !(m.min_eigenvalue > 0.0) {
        return Err(Error::NotSymplectic { min_eig: m.min_eigenvalue });
    }
    Ok(m)
}

/// I_j β = *_g(φ_j∧β) on covectors, with φ the orthonormalized triple.
pub fn complex_structures(t: &Triple, g: &FrameMetric) -> Result<[Matrix4<f64>; 3]> {
    let (phi, _) = orthonormalize(t)?;
    Ok([0, 1, 2].map(|j| {
        let mut m = Matrix4::zeros();
        for c in 0..4 {
            let beta = Vector4::from_fn(|k, _| if k == c { 1.0 } else { 0.0 });
            let col = forms::hodge3(&forms::wedge12(&beta, &phi.components[j]), &g.components);
            m.set_column(c, &col);
        }
        m
    }))
}

/// u₁ = ½(*dφ₁ + I₃*dφ₂ − I₂*dφ₃) and cyclic, for an orthonormal frame φ
/// (φ_i∧φ_j = 2δ_ij vol_g) and its exterior derivatives.
///
/// With the star fixed by *β = ι_{β♯}vol on 1-forms, the star of a 3-form
/// carries the opposite sign to the one this formula assumes, so the
/// whole expression is negated here.
pub fn torsion_coefficients(phis: &Triple, g: &FrameMetric, dphi: &[Form3; 3]) -> Result<[Vector4<f64>; 3]> {
    let ii = complex_structures(phis, g)?;
    let star: Vec<Vector4<f64>> = dphi.iter().map(|d| forms::hodge3(d, &g.components)).collect();
    Ok([0, 1, 2].map(|a| {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        -0.5 * (star[a] + ii[c] * star[b] - ii[b] * star[c])
    }))
}

/// dφ_a − (u_c∧φ_b − u_b∧φ_c) for (a, b, c) cyclic, as 3-forms.
pub fn torsion_residual(phis: &Triple, dphi: &[Form3; 3], u: &[Vector4<f64>; 3]) -> [Form3; 3] {
    [0, 1, 2].map(|a| {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        let lhs = forms::wedge12(&u[c], &phis.components[b]);
        let rhs = forms::wedge12(&u[b], &phis.components[c]);
        let s = forms::form3_add(&lhs, &rhs, -1.0);
        forms::form3_add(&dphi[a], &s, -1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields3d::eval_gradient;
    use crate::gauge::assemble_connection;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent expansion of the GH Gram matrix: with α = a₀e⁰ + Σ aᵢeⁱ,
    /// ω_i∧ω_j = 2 h a₀ δ_ij exactly.
    fn gh_gram_oracle(h: f64, a0: f64) -> Matrix3<f64> {
        Matrix3::identity() * (2.0 * h * a0)
    }

    fn random_alpha(rng: &mut ChaCha8Rng) -> Vector4<f64> {
        Vector4::new(1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn flat_triple_gram_and_metric() {
        let (q, qq) = gram_and_defect(&Triple::flat());
        assert_eq!(q, Matrix3::identity() * 2.0);
        assert_eq!(qq, Matrix3::zeros());
        let g = metric_from_triple(&Triple::flat()).unwrap();
        assert!((g.components - Matrix4::identity()).norm() < 1e-14);
    }

    #[test]
    fn gh_gram_matches_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let h = rng.gen_range(0.1..5.0);
            let a = random_alpha(&mut rng);
            let t = gh_triple(h, &a, 0.1).unwrap();
            let (q, qq) = gram_and_defect(&t);
            assert!((q - gh_gram_oracle(h, a[0])).norm() < 1e-13);
            assert!(qq.norm() / q.norm() < 1e-12);
            assert!((q.trace() - 6.0 * h).abs() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_potential_rejected() {
        assert!(matches!(gh_triple(0.0, &Vector4::new(1.0, 0.0, 0.0, 0.0), 0.1), Err(Error::NonpositivePotential { .. })));
    }

    #[test]
    fn gh_metric_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let h = rng.gen_range(0.1..5.0);
            let a = random_alpha(&mut rng);
            let g = metric_from_triple(&gh_triple(h, &a, 0.1).unwrap()).unwrap();
            let mut oracle = a * a.transpose() / h;
            for i in 1..4 {
                oracle[(i, i)] += h;
            }
            assert!((g.components - oracle).abs().max() < 1e-12 * oracle.abs().max());
        }
    }

    #[test]
    fn metric_scales_linearly() {
        let t = gh_triple(1.7, &Vector4::new(1.0, 0.3, -0.2, 0.5), 0.1).unwrap();
        let g1 = metric_from_triple(&t).unwrap().components;
        let g2 = metric_from_triple(&t.scaled(3.0)).unwrap().components;
        assert!((g2 - g1 * 3.0).norm() < 1e-12 * g1.norm());
        let (q1, _) = gram_and_defect(&t);
        let (q2, _) = gram_and_defect(&t.scaled(3.0));
        assert!((q2 - q1 * 9.0).norm() < 1e-12);
    }

    #[test]
    fn flat_quaternion_relations() {
        let t = Triple::flat();
        let g = metric_from_triple(&t).unwrap();
        let [i1, i2, i3] = complex_structures(&t, &g).unwrap();
        let id = Matrix4::identity();
        assert!((i1 * i2 - i3).norm() < 1e-15);
        for i in [i1, i2, i3] {
            assert!((i * i + id).norm() < 1e-15);
        }
    }

    #[test]
    fn gh_quaternions_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let t = gh_triple(rng.gen_range(0.2..3.0), &random_alpha(&mut rng), 0.1).unwrap();
            let g = metric_from_triple(&t).unwrap();
            let ii = complex_structures(&t, &g).unwrap();
            assert!((ii[0] * ii[1] * ii[2] + Matrix4::identity()).norm() < 1e-10);
            let gi = g.components.try_inverse().unwrap();
            let xi = Vector4::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
            let et = Vector4::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
            for i in &ii {
                let lhs = (i * xi).dot(&(gi * (i * et)));
                assert!((lhs - xi.dot(&(gi * et))).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn torsion_round_trip_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let t = gh_triple(rng.gen_range(0.3..2.0), &random_alpha(&mut rng), 0.1).unwrap();
            let g = metric_from_triple(&t).unwrap();
            let (phi, _) = orthonormalize(&t).unwrap();
            let dphi: [Form3; 3] = [0, 1, 2].map(|_| [0, 1, 2, 3].map(|_| rng.gen_range(-1.0..1.0)));
            let u = torsion_coefficients(&phi, &g, &dphi).unwrap();
            let res = torsion_residual(&phi, &dphi, &u);
            let worst = res.iter().map(forms::form3_norm).fold(0.0, f64::max);
            assert!(worst < 1e-10, "{worst}");
        }
    }

    #[test]
    fn flat_torsion_vanishes() {
        let t = Triple::flat();
        let g = metric_from_triple(&t).unwrap();
        let u = torsion_coefficients(&t, &g, &[[0.0; 4]; 3]).unwrap();
        assert!(u.iter().all(|v| v.norm() == 0.0));
    }

    /// dω of the GH triple field by central differences in y = x/ε.
    fn gh_dphi(spec: &PotentialSpec, conn: &ConnectionForm, x: &Vec3, h: f64) -> [Form3; 3] {
        let eps = spec.epsilon;
        let field = |y: &Vec3| orthonormalize(&gh_triple_at(spec, conn, y).unwrap()).unwrap().0.components;
        let mut partials = [[Form2::zeros(); 3]; 3];
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            let (p, m) = (field(&(x + e)), field(&(x - e)));
            for j in 0..3 {
                // ∂/∂y = ε ∂/∂x
                partials[j][i] = (p[j] - m[j]) * (eps / (2.0 * h));
            }
        }
        partials.map(|p| forms::d_of_2form(&p))
    }

    #[test]
    fn gh_triple_is_closed_and_torsion_free() {
        let spec = PotentialSpec::symmetric(&[Vec3::new(0.4, 0.3, 0.8)], 0.1).unwrap();
        let conn = assemble_connection(&spec);
        let x = Vec3::new(0.5, -0.4, 0.3);
        let t = gh_triple_at(&spec, &conn, &x).unwrap();
        let g = metric_from_triple(&t).unwrap();
        let (phi, _) = orthonormalize(&t).unwrap();
        let mut prev = f64::NAN;
        for h in [4e-3, 2e-3, 1e-3] {
            let dphi = gh_dphi(&spec, &conn, &x, h);
            let u = torsion_coefficients(&phi, &g, &dphi).unwrap();
            let n = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(n < 5.0 * h * h, "h={h}: {n}");
            if prev.is_finite() {
                assert!(n < 0.35 * prev);
            }
            prev = n;
        }
        let _ = eval_gradient(&spec, &x).unwrap();
    }

    #[test]
    fn perturbed_triple_has_torsion() {
        let spec = PotentialSpec::symmetric(&[Vec3::new(0.4, 0.3, 0.8)], 0.1).unwrap();
        let conn = assemble_connection(&spec);
        let x = Vec3::new(0.5, -0.4, 0.3);
        let eps = spec.epsilon;
        // multiply ω₁ by a non-constant factor so that it is no longer closed
        let field = |y: &Vec3| {
            let mut t = gh_triple_at(&spec, &conn, y).unwrap();
            t.components[0] *= 1.0 + 0.1 * y.x;
            t
        };
        let (phi, _) = orthonormalize(&field(&x)).unwrap();
        let g = metric_from_triple(&field(&x)).unwrap();
        let h = 1e-4;
        let mut partials = [[Form2::zeros(); 3]; 3];
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            let p = orthonormalize(&field(&(x + e))).unwrap().0.components;
            let m = orthonormalize(&field(&(x - e))).unwrap().0.components;
            for j in 0..3 {
                partials[j][i] = (p[j] - m[j]) * (eps / (2.0 * h));
            }
        }
        let dphi = partials.map(|p| forms::d_of_2form(&p));
        let u = torsion_coefficients(&phi, &g, &dphi).unwrap();
        assert!(u.iter().map(|v| v.norm()).fold(0.0, f64::max) > 1e-4);
    }

    proptest! {
        #[test]
        fn defect_identity_for_gh(h in 0.05f64..10.0, a1 in -3.0f64..3.0, a2 in -3.0f64..3.0, a3 in -3.0f64..3.0) {
            let t = gh_triple(h, &Vector4::new(1.0, a1, a2, a3), 0.1).unwrap();
            let q = t.gram();
            let rhs = Matrix3::identity() * (q.trace() / 3.0);
            prop_assert!((q - rhs).abs().max() < 1e-12 * q.trace());
        }
    }
}
