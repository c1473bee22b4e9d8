//! Pointwise exterior algebra on a 4-dimensional coframe (e⁰, e¹, e², e³).
//!
//! 2-forms are antisymmetric 4×4 matrices; 3-forms are stored by the
//! missing index, `T[m] = T_{abc}` for the ascending complement (a, b, c) of m.

use nalgebra::{Matrix4, Vector4};

pub type Form2 = Matrix4<f64>;
pub type Form3 = [f64; 4];

/// Ascending complements of each index.
pub const COMPLEMENT: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Sign of the permutation (m, complement(m)).
pub const COMPLEMENT_SIGN: [f64; 4] = [1.0, -1.0, 1.0, -1.0];

/// Levi-Civita symbol.
pub fn levi(a: usize, b: usize, c: usize, d: usize) -> f64 {
    let p = [a, b, c, d];
    for i in 0..4 {
        for j in (i + 1)..4 {
            if p[i] == p[j] {
                return 0.0;
            }
        }
    }
    let mut s = 1.0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            if p[i] > p[j] {
                s = -s;
            }
        }
    }
    s
}

/// Coefficient of e⁰¹²³ in A∧B.
pub fn wedge22(a: &Form2, b: &Form2) -> f64 {
    a[(0, 1)] * b[(2, 3)] - a[(0, 2)] * b[(1, 3)] + a[(0, 3)] * b[(1, 2)] + a[(2, 3)] * b[(0, 1)] - a[(1, 3)] * b[(0, 2)]
        + a[(1, 2)] * b[(0, 3)]
}

/// β∧A.
pub fn wedge12(beta: &Vector4<f64>, a: &Form2) -> Form3 {
    let mut t = [0.0; 4];
    for (m, &[i, j, k]) in COMPLEMENT.iter().enumerate() {
        t[m] = beta[i] * a[(j, k)] + beta[j] * a[(k, i)] + beta[k] * a[(i, j)];
    }
    t
}

/// a∧b for 1-forms.
pub fn wedge11(a: &Vector4<f64>, b: &Vector4<f64>) -> Form2 {
    a * b.transpose() - b * a.transpose()
}

/// Build e^i∧e^j.
pub fn basis2(i: usize, j: usize) -> Form2 {
    let mut m = Form2::zeros();
    m[(i, j)] = 1.0;
    m[(j, i)] = -1.0;
    m
}

/// Coefficients of a 2-form against the flat self-dual basis
/// (e⁰¹+e²³, e⁰²−e¹³, e⁰³+e¹²), i.e. the flat triple.
pub fn selfdual_coefficients(a: &Form2) -> [f64; 3] {
    // wedge with each basis element, divided by its square 2
    [
        0.5 * (a[(0, 1)] + a[(2, 3)]),
        0.5 * (a[(0, 2)] - a[(1, 3)]),
        0.5 * (a[(0, 3)] + a[(1, 2)]),
    ]
}

/// Hodge star of a 2-form for the metric `g` (covariant components).
pub fn hodge2(a: &Form2, g: &Matrix4<f64>) -> Form2 {
    let gi = g.try_inverse().expect("metric must be invertible");
    let up = gi * a * gi.transpose();
    let vol = g.determinant().abs().sqrt();
    let mut out = Form2::zeros();
    for c in 0..4 {
        for d in 0..4 {
            let mut s = 0.0;
            for x in 0..4 {
                for y in 0..4 {
                    s += up[(x, y)] * levi(x, y, c, d);
                }
            }
            out[(c, d)] = 0.5 * vol * s;
        }
    }
    out
}

/// *_g of a 1-form: the 3-form ι_{β♯} vol_g.
pub fn hodge1(beta: &Vector4<f64>, g: &Matrix4<f64>) -> Form3 {
    let gi = g.try_inverse().expect("metric must be invertible");
    let v = gi * beta;
    let vol = g.determinant().abs().sqrt();
    [0, 1, 2, 3].map(|m| vol * COMPLEMENT_SIGN[m] * v[m])
}

/// *_g of a 3-form, inverse to [`hodge1`] up to the sign ** = −1.
pub fn hodge3(t: &Form3, g: &Matrix4<f64>) -> Vector4<f64> {
    let vol = g.determinant().abs().sqrt();
    let v = Vector4::from_fn(|m, _| t[m] / (vol * COMPLEMENT_SIGN[m]));
    -(g * v)
}

pub fn form3_add(a: &Form3, b: &Form3, s: f64) -> Form3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]]
}

pub fn form3_norm(a: &Form3) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exterior derivative of a 2-form field whose components depend on the
/// coordinates y¹, y², y³ conjugate to e¹, e², e³ (e⁰ is dθ, with no θ
/// dependence). `partials[i]` is ∂ω/∂yⁱ⁺¹.
pub fn d_of_2form(partials: &[Form2; 3]) -> Form3 {
    let comp = |a: usize, j: usize, k: usize| if a == 0 { 0.0 } else { partials[a - 1][(j, k)] };
    let mut t = [0.0; 4];
    for (m, &[i, j, k]) in COMPLEMENT.iter().enumerate() {
        t[m] = comp(i, j, k) + comp(j, k, i) + comp(k, i, j);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat() -> [Form2; 3] {
        [basis2(0, 1) + basis2(2, 3), basis2(0, 2) + basis2(3, 1), basis2(0, 3) + basis2(1, 2)]
    }

    #[test]
    fn flat_triple_gram() {
        let w = flat();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(wedge22(&w[i], &w[j]), if i == j { 2.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn levi_signs() {
        assert_eq!(levi(0, 1, 2, 3), 1.0);
        assert_eq!(levi(1, 0, 2, 3), -1.0);
        assert_eq!(levi(3, 0, 1, 2), -1.0);
        assert_eq!(levi(0, 0, 1, 2), 0.0);
    }

    #[test]
    fn flat_triple_is_selfdual() {
        for w in flat() {
            assert!((hodge2(&w, &Matrix4::identity()) - w).norm() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn double_star_on_odd_forms(b in proptest::array::uniform4(-1.0f64..1.0), s in 0.5f64..2.0) {
            let beta = Vector4::from(b);
            let g = Matrix4::from_diagonal(&Vector4::new(s, 1.0 / s, 2.0, 0.7)) + Matrix4::from_element(0.05);
            let back = hodge3(&hodge1(&beta, &g), &g);
            prop_assert!((back + beta).norm() < 1e-13);
        }

        #[test]
        fn wedge_is_symmetric(a in proptest::array::uniform6(-1.0f64..1.0), b in proptest::array::uniform6(-1.0f64..1.0)) {
            let mk = |v: [f64; 6]| {
                let mut m = Form2::zeros();
                let mut n = 0;
                for i in 0..4 { for j in (i + 1)..4 { m[(i, j)] = v[n]; m[(j, i)] = -v[n]; n += 1; } }
                m
            };
            let (x, y) = (mk(a), mk(b));
            prop_assert!((wedge22(&x, &y) - wedge22(&y, &x)).abs() < 1e-15);
        }
    }
}
