//! Projector algebra on pairs of spinors and the ellipse parameters of the
//! Atiyah–Hitchin moduli.
//!
//! For z, w ∈ ℂ² with z∧w = z₁w₂ − w₁z₂ and ⟨w, z⟩ = w̄₁z₁ + w̄₂z₂:
//!
//! ```text
//! P v = z (w∧v)/(w∧z),   Q v = z ⟨w, v⟩/⟨w, z⟩,
//! M = 2P − 1 = X·σ,      N = 2Q − 1 = Y·σ,
//! ```
//!
//! with X = x̃ + iξ and Y = y + iη on the quadric Σ Z_i² = 1.

use crate::error::{Error, Result};
use nalgebra::{Matrix2, Matrix3, Vector3};
use num_complex::Complex64 as C;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type CMat2 = Matrix2<C>;
pub type CVec3 = Vector3<C>;
pub type RVec3 = Vector3<f64>;

/// Threshold for membership of the excluded loci.
pub const DEGENERACY_TOL: f64 = 1e-12;

const I: C = C::new(0.0, 1.0);

pub fn pauli() -> [CMat2; 3] {
    let o = C::new(0.0, 0.0);
    let l = C::new(1.0, 0.0);
    [
        CMat2::new(o, l, l, o),
        CMat2::new(o, -I, I, o),
        CMat2::new(l, o, o, -l),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinorPair {
    pub z: [C; 2],
    pub w: [C; 2],
}

pub fn wedge(a: &[C; 2], b: &[C; 2]) -> C {
    a[0] * b[1] - b[0] * a[1]
}

pub fn inner(a: &[C; 2], b: &[C; 2]) -> C {
    a[0].conj() * b[0] + a[1].conj() * b[1]
}

/// w^⊥ = (−w̄₂, w̄₁).
pub fn perp(a: &[C; 2]) -> [C; 2] {
    [-a[1].conj(), a[0].conj()]
}

fn norm2(a: &[C; 2]) -> f64 {
    (a[0].norm_sqr() + a[1].norm_sqr()).sqrt()
}

fn outer(a: &[C; 2], row: [C; 2]) -> CMat2 {
    CMat2::new(a[0] * row[0], a[0] * row[1], a[1] * row[0], a[1] * row[1])
}

impl SpinorPair {
    pub fn new(z: [C; 2], w: [C; 2]) -> Self {
        SpinorPair { z, w }
    }

    /// |z∧w| / (|z||w|): distance from the diagonal locus.
    pub fn diagonal_distance(&self) -> f64 {
        wedge(&self.z, &self.w).norm() / (norm2(&self.z) * norm2(&self.w))
    }

    /// |⟨w,z⟩| / (|z||w|): distance from the anti-diagonal locus.
    pub fn antidiagonal_distance(&self) -> f64 {
        inner(&self.w, &self.z).norm() / (norm2(&self.z) * norm2(&self.w))
    }

    /// Complex-normal entries, resampled near either excluded locus.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        loop {
            let mut c = || C::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let sp = SpinorPair { z: [c(), c()], w: [c(), c()] };
            if sp.diagonal_distance() > 1e-6 && sp.antidiagonal_distance() > 1e-6 {
                return sp;
            }
        }
    }

    pub fn act(&self, u: &CMat2) -> Self {
        let m = |a: &[C; 2]| [u[(0, 0)] * a[0] + u[(0, 1)] * a[1], u[(1, 0)] * a[0] + u[(1, 1)] * a[1]];
        SpinorPair { z: m(&self.z), w: m(&self.w) }
    }
}

pub fn projector_p(sp: &SpinorPair) -> Result<CMat2> {
    if sp.diagonal_distance() < DEGENERACY_TOL {
        return Err(Error::OnDiagonal);
    }
    let den = wedge(&sp.w, &sp.z);
    // w∧v = −w₂v₁ + w₁v₂
    Ok(outer(&sp.z, [-sp.w[1] / den, sp.w[0] / den]))
}

pub fn projector_q(sp: &SpinorPair) -> Result<CMat2> {
    if sp.antidiagonal_distance() < DEGENERACY_TOL {
        return Err(Error::OnAntidiagonal);
    }
    let den = inner(&sp.w, &sp.z);
    Ok(outer(&sp.z, [sp.w[0].conj() / den, sp.w[1].conj() / den]))
}

/// (P, Q).
pub fn projectors(sp: &SpinorPair) -> Result<(CMat2, CMat2)> {
    Ok((projector_p(sp)?, projector_q(sp)?))
}

/// Coefficients of a traceless 2×2 matrix in the Pauli basis.
pub fn pauli_coefficients(a: &CMat2) -> CVec3 {
    CVec3::new(
        (a[(0, 1)] + a[(1, 0)]) * 0.5,
        I * (a[(0, 1)] - a[(1, 0)]) * 0.5,
        (a[(0, 0)] - a[(1, 1)]) * 0.5,
    )
}

pub fn from_pauli(v: &CVec3) -> CMat2 {
    let s = pauli();
    s[0] * v[0] + s[1] * v[1] + s[2] * v[2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    X,
    Y,
}

/// A point Z on the quadric Σ Z_i² = 1, with axes (Re Z, Im Z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseState {
    pub flavor: Flavor,
    pub vector: CVec3,
}

impl EllipseState {
    pub fn from_axes(flavor: Flavor, major: RVec3, minor: RVec3) -> Self {
        EllipseState { flavor, vector: CVec3::from_fn(|i, _| C::new(major[i], minor[i])) }
    }

    /// x̃ or y.
    pub fn major(&self) -> RVec3 {
        self.vector.map(|c| c.re)
    }

    /// ξ or η.
    pub fn minor(&self) -> RVec3 {
        self.vector.map(|c| c.im)
    }

    /// (|Σ Z² − 1|, | |major|² − 1 − |minor|² |, |major·minor|).
    pub fn constraint_residuals(&self) -> [f64; 3] {
        let q: C = self.vector.iter().map(|z| z * z).sum();
        let (a, b) = (self.major(), self.minor());
        [(q - 1.0).norm(), (a.norm_squared() - 1.0 - b.norm_squared()).abs(), a.dot(&b).abs()]
    }

    pub fn distance(&self, other: &EllipseState) -> f64 {
        (self.vector - other.vector).norm()
    }

    pub fn rotate(&self, g: &Matrix3<f64>) -> Self {
        EllipseState { flavor: self.flavor, vector: g.map(|x| C::new(x, 0.0)) * self.vector }
    }
}

/// X from M = 2P − 1 or Y from N = 2Q − 1.
pub fn to_ellipse(sp: &SpinorPair, flavor: Flavor) -> Result<EllipseState> {
    let m = match flavor {
        Flavor::X => projector_p(sp)?,
        Flavor::Y => projector_q(sp)?,
    };
    let id = CMat2::identity();
    Ok(EllipseState { flavor, vector: pauli_coefficients(&(m * C::new(2.0, 0.0) - id)) })
}

/// x̃ = y×η/|η|², ξ = −η/|η|², and the same formula in the other direction.
pub fn dualize(e: &EllipseState) -> Result<EllipseState> {
    let (a, b) = (e.major(), e.minor());
    let n2 = b.norm_squared();
    if n2.sqrt() < DEGENERACY_TOL {
        return Err(Error::DegenerateMinorAxis);
    }
    let flavor = match e.flavor {
        Flavor::X => Flavor::Y,
        Flavor::Y => Flavor::X,
    };
    Ok(EllipseState::from_axes(flavor, a.cross(&b) / n2, -b / n2))
}

/// The Vierergruppe {1, s, r, a}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vier {
    One,
    S,
    R,
    A,
}

impl Vier {
    pub const ALL: [Vier; 4] = [Vier::One, Vier::S, Vier::R, Vier::A];

    pub fn compose(self, other: Vier) -> Vier {
        use Vier::*;
        match (self, other) {
            (One, x) | (x, One) => x,
            (x, y) if x == y => One,
            (S, R) | (R, S) => A,
            (S, A) | (A, S) => R,
            _ => S,
        }
    }

    /// Action on spinor pairs: s (z,w) ↦ (w,z), r ↦ (w^⊥, z^⊥), a ↦ (z^⊥, w^⊥).
    pub fn act_spinors(self, sp: &SpinorPair) -> SpinorPair {
        match self {
            Vier::One => *sp,
            Vier::S => SpinorPair { z: sp.w, w: sp.z },
            Vier::R => SpinorPair { z: perp(&sp.w), w: perp(&sp.z) },
            Vier::A => SpinorPair { z: perp(&sp.z), w: perp(&sp.w) },
        }
    }
}

/// s: (y,η)↦(y,−η), (x̃,ξ)↦(−x̃,−ξ); r: (y,η)↦(−y,−η), (x̃,ξ)↦(x̃,−ξ);
/// a: (y,η)↦(−y,η), (x̃,ξ)↦(−x̃,ξ).
pub fn act_symmetry(g: Vier, e: &EllipseState) -> Result<EllipseState> {
    let (a, b) = (e.major(), e.minor());
    let (sa, sb) = match (e.flavor, g) {
        (_, Vier::One) => (1.0, 1.0),
        (Flavor::Y, Vier::S) => (1.0, -1.0),
        (Flavor::Y, Vier::R) => (-1.0, -1.0),
        (Flavor::Y, Vier::A) => (-1.0, 1.0),
        (Flavor::X, Vier::S) => (-1.0, -1.0),
        (Flavor::X, Vier::R) => (1.0, -1.0),
        (Flavor::X, Vier::A) => (-1.0, 1.0),
    };
    if e.flavor == Flavor::X && g != Vier::One && b.norm() < DEGENERACY_TOL {
        return Err(Error::DegenerateMinorAxis);
    }
    Ok(EllipseState::from_axes(e.flavor, a * sa, b * sb))
}

/// R_ℓ = exp(−iπσ₃/ℓ).
pub fn r_ell(l: f64) -> CMat2 {
    r_zero(std::f64::consts::PI / l)
}

/// exp(−iθσ₃).
pub fn r_zero(theta: f64) -> CMat2 {
    let o = C::new(0.0, 0.0);
    CMat2::new(C::from_polar(1.0, -theta), o, o, C::from_polar(1.0, theta))
}

/// S = −iσ₂.
pub fn s_matrix() -> CMat2 {
    let o = C::new(0.0, 0.0);
    let l = C::new(1.0, 0.0);
    CMat2::new(o, -l, l, o)
}

/// The rotation G with U (v·σ) U† = (Gv)·σ.
pub fn su2_to_so3(u: &CMat2) -> Matrix3<f64> {
    let s = pauli();
    Matrix3::from_fn(|i, j| 0.5 * (s[i] * u * s[j] * u.adjoint()).trace().re)
}

/// An SU(2) lift of a rotation; the sign is not determined.
pub fn so3_to_su2(g: &Matrix3<f64>) -> CMat2 {
    let q = nalgebra::UnitQuaternion::from_matrix(g);
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    // exp(−iθ n·σ/2) = w − i(x σ₁ + y σ₂ + z σ₃)
    let s = pauli();
    CMat2::identity() * C::new(w, 0.0) - (s[0] * C::new(x, 0.0) + s[1] * C::new(y, 0.0) + s[2] * C::new(z, 0.0)).map(|c| c * I)
}

/// Rodrigues rotation of v about the unit axis m by θ.
pub fn rotate_about(m: &RVec3, theta: f64, v: &RVec3) -> RVec3 {
    let m = m.normalize();
    v * theta.cos() + m.cross(v) * theta.sin() + m * m.dot(v) * (1.0 - theta.cos())
}

/// g ∈ SU(2) with M = g(|x̃|σ₃ + i|ξ|σ₁)g†, for an X-state with ξ ≠ 0.
/// Both g and −g are valid; this returns one of them.
pub fn lift_g(e: &EllipseState) -> Result<CMat2> {
    let (a, b) = (e.major(), e.minor());
    if b.norm() < DEGENERACY_TOL {
        return Err(Error::DegenerateMinorAxis);
    }
    let m = a.normalize();
    let n = b.normalize();
    let g = Matrix3::from_columns(&[n, m.cross(&n), m]);
    Ok(so3_to_su2(&g))
}

/// The X-state of the matrix g(|x̃|σ₃ + i|ξ|σ₁)g† for a lift g and fixed axis lengths.
pub fn state_from_lift(g: &CMat2, major_len: f64, minor_len: f64) -> EllipseState {
    let s = pauli();
    let core = s[2] * C::new(major_len, 0.0) + s[0] * C::new(0.0, minor_len);
    EllipseState { flavor: Flavor::X, vector: pauli_coefficients(&(g * core * g.adjoint())) }
}

/// Maximum residuals of the Appendix A checks over a seeded sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixAReport {
    pub samples: usize,
    pub seed: u64,
    pub residuals: Vec<(String, f64)>,
    pub worked_pair: bool,
}

impl AppendixAReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.1).fold(0.0, f64::max)
    }
}

fn max_abs(m: &CMat2) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Random rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Run every identity, the duality, the involution and SO(3)-equivariance.
pub fn appendix_a_suite(samples: usize, seed: u64) -> AppendixAReport {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "P^2 = P", "Q^2 = Q", "PQ = Q", "PQ^dag = 0", "QP = P", "QP^dag = 0", "M^2 = id", "N^2 = id",
        "MN = id + N - M", "MN^dag + N^dag + M + id = 0", "constraints", "X = dual(Y)", "dual o dual = id",
        "dual(GY) = G dual(Y)", "symmetry actions on spinors",
    ];
    let mut worst = vec![0.0f64; names.len()];
    let id = CMat2::identity();
    let two = C::new(2.0, 0.0);
    for _ in 0..samples {
        let sp = SpinorPair::random(&mut rng);
        let (p, q) = projectors(&sp).expect("sampled away from the loci");
        let m = p * two - id;
        let n = q * two - id;
        let r = [
            max_abs(&(p * p - p)),
            max_abs(&(q * q - q)),
            max_abs(&(p * q - q)),
            max_abs(&(p * q.adjoint())),
            max_abs(&(q * p - p)),
            max_abs(&(q * p.adjoint())),
            max_abs(&(m * m - id)),
            max_abs(&(n * n - id)),
            max_abs(&(m * n - id - n + m)),
            max_abs(&(m * n.adjoint() + n.adjoint() + m + id)),
        ];
        for (k, v) in r.iter().enumerate() {
            worst[k] = worst[k].max(*v);
        }
        let x = to_ellipse(&sp, Flavor::X).unwrap();
        let y = to_ellipse(&sp, Flavor::Y).unwrap();
        let c = x.constraint_residuals().into_iter().chain(y.constraint_residuals()).fold(0.0, f64::max);
        let scale = 1.0 + x.vector.norm_squared() + y.vector.norm_squared();
        worst[10] = worst[10].max(c / scale);
        let dy = dualize(&y).unwrap();
        worst[11] = worst[11].max(dy.distance(&x) / x.vector.norm());
        worst[12] = worst[12].max(dualize(&dy).unwrap().distance(&y) / y.vector.norm());
        let g = random_rotation(&mut rng);
        let lhs = dualize(&y.rotate(&g)).unwrap();
        let rhs = dy.rotate(&g);
        worst[13] = worst[13].max(lhs.distance(&rhs) / rhs.vector.norm());
        let mut sym = 0.0f64;
        for v in [Vier::S, Vier::R, Vier::A] {
            let sp2 = v.act_spinors(&sp);
            for (fl, e) in [(Flavor::X, &x), (Flavor::Y, &y)] {
                let lhs = to_ellipse(&sp2, fl).unwrap();
                let rhs = act_symmetry(v, e).unwrap();
                sym = sym.max(lhs.distance(&rhs) / rhs.vector.norm());
            }
        }
        worst[14] = worst[14].max(sym);
    }
    AppendixAReport {
        samples,
        seed,
        residuals: names.iter().map(|s| s.to_string()).zip(worst).collect(),
        worked_pair: worked_pair_holds(),
    }
}

/// z = (1,0), w = (1,1)/√2 gives Y = (1, i, 1) and X = (−1, −i, 1).
pub fn worked_pair_holds() -> bool {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let sp = SpinorPair::new([C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(h, 0.0), C::new(h, 0.0)]);
    let y = to_ellipse(&sp, Flavor::Y).unwrap();
    let x = dualize(&y).unwrap();
    let x_direct = to_ellipse(&sp, Flavor::X).unwrap();
    let want_y = CVec3::new(C::new(1.0, 0.0), I, C::new(1.0, 0.0));
    let want_x = CVec3::new(C::new(-1.0, 0.0), -I, C::new(1.0, 0.0));
    (y.vector - want_y).norm() < 1e-14 && (x.vector - want_x).norm() < 1e-14 && (x_direct.vector - want_x).norm() < 1e-14
}
