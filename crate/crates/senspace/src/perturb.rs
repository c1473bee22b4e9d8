//! The nonlinear map F(a) = (d*a_j, d₊a_j + R_js p_sk ω_k) on the flat
//! 4-torus [0, 2π)⁴, and a Newton corrector for Q(ω + da) = 0.
//!
//! Fields live on an n⁴ node grid with spectral derivatives. 2-forms are
//! stored by six components in the basis (e01, e02, e03, e23, e31, e12),
//! so that the flat triple is ω_j = e0j + e_kl and α∧β pairs each
//! component with its complement.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Matrix3;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::{basis2, Form2};
use crate::triples::{Coframe, Triple};

/// Index pairs of the 2-form basis.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2)];

/// Position of the complementary basis element, so that
/// e_P ∧ e_COMPLEMENT[P] = e0123.
const COMPLEMENT: [usize; 6] = [3, 4, 5, 0, 1, 2];

/// Coefficient of e0123 in α∧β.
pub fn wedge6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    (0..6).map(|p| a[p] * b[COMPLEMENT[p]]).sum()
}

/// Six-component form of a 4×4 antisymmetric matrix.
pub fn to_six(f: &Form2) -> [f64; 6] {
    PAIRS.map(|(i, j)| f[(i, j)])
}

pub fn from_six(c: &[f64; 6]) -> Form2 {
    let mut f = Form2::zeros();
    for (p, &(i, j)) in PAIRS.iter().enumerate() {
        f += basis2(i, j) * c[p];
    }
    f
}

fn trace_free(m: &Matrix3<f64>) -> Matrix3<f64> {
    m - Matrix3::identity() * (m.trace() / 3.0)
}

fn gram6(x: &[[f64; 6]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| wedge6(&x[i], &x[j]))
}

fn zeros_c(len: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); len]
}

/// Spectral grid on [0, 2π)⁴.
pub struct Torus {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
    /// Derivative wavenumber of each bin; the Nyquist bin differentiates to zero.
    kd: Vec<f64>,
    neg: Vec<u32>,
}

impl Torus {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || n % 2 != 0 || n > 64 {
            return Err(Error::InvalidSpec(format!("torus resolution {n} must be even and in [4, 64]")));
        }
        let mut p = FftPlanner::new();
        let kd = (0..n)
            .map(|i| {
                if 2 * i == n {
                    0.0
                } else if 2 * i < n {
                    i as f64
                } else {
                    i as f64 - n as f64
                }
            })
            .collect();
        let len = n.pow(4);
        let neg = (0..len)
            .map(|idx| {
                let d = Self::digits_of(idx, n);
                let m = d.map(|i| (n - i) % n);
                (((m[0] * n + m[1]) * n + m[2]) * n + m[3]) as u32
            })
            .collect();
        Ok(Torus { n, forward: p.plan_fft_forward(n), backward: p.plan_fft_inverse(n), kd, neg })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(4)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        std::f64::consts::TAU / self.n as f64
    }

    fn digits_of(idx: usize, n: usize) -> [usize; 4] {
        [idx / (n * n * n), (idx / (n * n)) % n, (idx / n) % n, idx % n]
    }

    pub fn coords(&self, idx: usize) -> [f64; 4] {
        Self::digits_of(idx, self.n).map(|i| i as f64 * self.step())
    }

    /// Derivative wavenumbers of a bin.
    pub fn wave(&self, idx: usize) -> [f64; 4] {
        Self::digits_of(idx, self.n).map(|i| self.kd[i])
    }

    /// In-place 4D transform; the inverse carries the 1/n⁴ factor.
    fn transform(&self, data: &mut Vec<C64>, inverse: bool) {
        let n = self.n;
        let n3 = n * n * n;
        let fft = if inverse { &self.backward } else { &self.forward };
        let mut scratch = zeros_c(data.len());
        // transform the contiguous axis, then rotate the axes so the next
        // one becomes contiguous; four rotations restore the layout
        for _ in 0..4 {
            fft.process(data);
            for jb in (0..n3).step_by(64) {
                let je = (jb + 64).min(n3);
                for i in 0..n {
                    let out = &mut scratch[i * n3 + jb..i * n3 + je];
                    for (o, j) in out.iter_mut().zip(jb..je) {
                        *o = data[j * n + i];
                    }
                }
            }
            std::mem::swap(data, &mut scratch);
        }
        if inverse {
            let s = 1.0 / data.len() as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn forward_real(&self, f: &[f64]) -> Vec<C64> {
        let mut z: Vec<C64> = f.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.transform(&mut z, false);
        z
    }

    /// Spectra of two real fields from one complex transform.
    pub fn forward_pair(&self, f: &[f64], g: &[f64]) -> (Vec<C64>, Vec<C64>) {
        let mut z: Vec<C64> = f.iter().zip(g).map(|(&x, &y)| C64::new(x, y)).collect();
        self.transform(&mut z, false);
        let mut a = zeros_c(z.len());
        let mut b = zeros_c(z.len());
        for idx in 0..z.len() {
            let zc = z[self.neg[idx] as usize].conj();
            a[idx] = (z[idx] + zc) * 0.5;
            b[idx] = (z[idx] - zc) * C64::new(0.0, -0.5);
        }
        (a, b)
    }

    /// Two real fields from Hermitian spectra. `spec(idx)` returns both.
    fn inverse_pair_with<F: Fn(usize) -> (C64, C64)>(&self, spec: F) -> (Vec<f64>, Vec<f64>) {
        let mut z: Vec<C64> = (0..self.len())
            .map(|idx| {
                let (a, b) = spec(idx);
                a + C64::new(0.0, 1.0) * b
            })
            .collect();
        self.transform(&mut z, true);
        (z.iter().map(|v| v.re).collect(), z.iter().map(|v| v.im).collect())
    }

    pub fn inverse_real(&self, f_hat: &[C64]) -> Vec<f64> {
        let mut z = f_hat.to_vec();
        self.transform(&mut z, true);
        z.iter().map(|v| v.re).collect()
    }

    /// ∂_axis of a real field.
    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let f_hat = self.forward_real(f);
        let d: Vec<C64> = f_hat
            .iter()
            .enumerate()
            .map(|(idx, v)| C64::new(0.0, self.wave(idx)[axis]) * v)
            .collect();
        self.inverse_real(&d)
    }

    fn spectrum(&self, a: &OneFormTriple) -> Spectrum {
        let mut out: Spectrum = std::array::from_fn(|_| std::array::from_fn(|_| Vec::new()));
        for j in 0..3 {
            for mu in [0, 2] {
                let (x, y) = self.forward_pair(&a.comps[j][mu], &a.comps[j][mu + 1]);
                out[j][mu] = x;
                out[j][mu + 1] = y;
            }
        }
        out
    }

    fn real_of(&self, a_hat: &Spectrum) -> OneFormTriple {
        let mut a = OneFormTriple::zeros(self.n);
        for j in 0..3 {
            for mu in [0, 2] {
                let (x, y) = self.inverse_pair_with(|idx| (a_hat[j][mu][idx], a_hat[j][mu + 1][idx]));
                a.comps[j][mu] = x;
                a.comps[j][mu + 1] = y;
            }
        }
        a
    }

    /// d of each component, from spectra.
    fn exterior_hat(&self, a_hat: &Spectrum) -> TripleField {
        let items: Vec<(usize, usize)> = (0..3).flat_map(|j| (0..6).map(move |p| (j, p))).collect();
        let mut forms: [[Vec<f64>; 6]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| Vec::new()));
        let d = |idx: usize, j: usize, p: usize| {
            let (mu, nu) = PAIRS[p];
            let k = self.wave(idx);
            C64::new(0.0, 1.0) * (a_hat[j][nu][idx] * k[mu] - a_hat[j][mu][idx] * k[nu])
        };
        for pair in items.chunks(2) {
            let (j1, p1) = pair[0];
            let (j2, p2) = pair[1];
            let (x, y) = self.inverse_pair_with(|idx| (d(idx, j1, p1), d(idx, j2, p2)));
            forms[j1][p1] = x;
            forms[j2][p2] = y;
        }
        TripleField { n: self.n, forms }
    }

    /// The exterior derivative (da₁, da₂, da₃).
    pub fn exterior(&self, a: &OneFormTriple) -> TripleField {
        self.exterior_hat(&self.spectrum(a))
    }

    /// d*a_j = −Σ ∂_μ a_jμ.
    pub fn codifferential(&self, a: &OneFormTriple) -> [Vec<f64>; 3] {
        let a_hat = self.spectrum(a);
        let div = self.div_hat(&a_hat);
        let (x, y) = self.inverse_pair_with(|idx| (div[0][idx], div[1][idx]));
        [x, y, self.inverse_real(&div[2])]
    }

    fn div_hat(&self, a_hat: &Spectrum) -> [Vec<C64>; 3] {
        std::array::from_fn(|j| {
            (0..self.len())
                .map(|idx| {
                    let k = self.wave(idx);
                    C64::new(0.0, -1.0) * (0..4).map(|mu| a_hat[j][mu][idx] * k[mu]).sum::<C64>()
                })
                .collect()
        })
    }

    /// Removes every bin the discrete operator annihilates: the mean and
    /// the pure-Nyquist bins.
    pub fn project_kernel(&self, a: &OneFormTriple) -> OneFormTriple {
        let mut a_hat = self.spectrum(a);
        for comp in a_hat.iter_mut().flatten() {
            for (idx, v) in comp.iter_mut().enumerate() {
                if self.wave(idx).iter().all(|&k| k == 0.0) {
                    *v = C64::new(0.0, 0.0);
                }
            }
        }
        self.real_of(&a_hat)
    }

    /// Inverse of the flat symbol on the complement of its kernel. `div`
    /// and `m` are spectra of the d* rows and of the rows of M.
    fn flat_inverse(&self, div: &[Vec<C64>; 3], m: &[[Vec<C64>; 3]; 3]) -> Spectrum {
        let len = self.len();
        let mut out: Spectrum = std::array::from_fn(|_| std::array::from_fn(|_| zeros_c(len)));
        for idx in 0..len {
            let k = self.wave(idx);
            let k2: f64 = k.iter().map(|x| x * x).sum();
            if k2 == 0.0 {
                continue;
            }
            let b = symbol(&k);
            for j in 0..3 {
                let v = [div[j][idx], m[j][0][idx], m[j][1][idx], m[j][2][idx]];
                for mu in 0..4 {
                    let s: C64 = (0..4).map(|r| v[r] * b[r][mu]).sum();
                    out[j][mu][idx] = C64::new(0.0, -1.0) * s / k2;
                }
            }
        }
        out
    }

    /// Root-mean-square of a field given by its spectrum.
    fn rms_hat(&self, f: &[C64]) -> f64 {
        (f.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt() / self.len() as f64
    }
}

/// The flat symbol matrix B, with the linear rows equal to i·B·â.
fn symbol(k: &[f64; 4]) -> [[f64; 4]; 4] {
    [
        [-k[0], -k[1], -k[2], -k[3]],
        [-k[1], k[0], -k[3], k[2]],
        [-k[2], k[3], k[0], -k[1]],
        [-k[3], -k[2], k[1], k[0]],
    ]
}

type Spectrum = [[Vec<C64>; 4]; 3];

/// Three 1-form fields a_j = Σ a_jμ dx^μ on the node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OneFormTriple {
    pub n: usize,
    pub comps: [[Vec<f64>; 4]; 3],
}

impl OneFormTriple {
    pub fn zeros(n: usize) -> Self {
        let len = n.pow(4);
        OneFormTriple { n, comps: std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; len])) }
    }

    pub fn from_fn<F: Fn([f64; 4]) -> [[f64; 4]; 3]>(torus: &Torus, f: F) -> Self {
        let mut a = Self::zeros(torus.n());
        for idx in 0..torus.len() {
            let v = f(torus.coords(idx));
            for j in 0..3 {
                for mu in 0..4 {
                    a.comps[j][mu][idx] = v[j][mu];
                }
            }
        }
        a
    }

    /// A seeded trigonometric polynomial with frequencies |m_μ| ≤ `max_mode`
    /// and unit-variance coefficients.
    pub fn random(torus: &Torus, seed: u64, max_mode: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = torus.n();
        let bins: Vec<usize> = (0..torus.len())
            .filter(|&idx| {
                Torus::digits_of(idx, n).iter().all(|&i| i <= max_mode || n - i <= max_mode)
                    && torus.wave(idx).iter().any(|&k| k != 0.0)
            })
            .collect();
        let mut a = Self::zeros(n);
        for j in 0..3 {
            for mu in 0..4 {
                let mut spec = zeros_c(torus.len());
                for &idx in &bins {
                    spec[idx] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
                a.comps[j][mu] = torus.inverse_real(&spec).iter().map(|v| v * torus.len() as f64).collect();
            }
        }
        a
    }

    pub fn sup(&self) -> f64 {
        self.comps.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, c: f64) {
        self.comps.iter_mut().flatten().flatten().for_each(|v| *v *= c);
    }

    pub fn axpy(&mut self, c: f64, other: &OneFormTriple) {
        for (x, y) in self.comps.iter_mut().flatten().zip(other.comps.iter().flatten()) {
            x.iter_mut().zip(y).for_each(|(a, b)| *a += c * b);
        }
    }

    /// The interior-product triple a_j = ι_v ω_j.
    pub fn interior(v: &[Vec<f64>; 4], omega: &TripleField) -> Self {
        let mut a = Self::zeros(omega.n);
        let len = omega.n.pow(4);
        for j in 0..3 {
            for idx in 0..len {
                let w = from_six(&omega.at(j, idx));
                for nu in 0..4 {
                    a.comps[j][nu][idx] = (0..4).map(|mu| v[mu][idx] * w[(mu, nu)]).sum();
                }
            }
        }
        a
    }
}

/// Three 2-form fields in the six-component basis.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleField {
    pub n: usize,
    pub forms: [[Vec<f64>; 6]; 3],
}

impl TripleField {
    pub fn flat(n: usize) -> Self {
        let len = n.pow(4);
        let forms = std::array::from_fn(|j| {
            std::array::from_fn(|p| if p == j || p == j + 3 { vec![1.0; len] } else { vec![0.0; len] })
        });
        TripleField { n, forms }
    }

    pub fn zeros(n: usize) -> Self {
        let len = n.pow(4);
        TripleField { n, forms: std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; len])) }
    }

    pub fn at(&self, j: usize, idx: usize) -> [f64; 6] {
        std::array::from_fn(|p| self.forms[j][p][idx])
    }

    pub fn node(&self, idx: usize) -> [[f64; 6]; 3] {
        std::array::from_fn(|j| self.at(j, idx))
    }

    /// The pointwise triple, for the triples-module oracles.
    pub fn triple(&self, idx: usize) -> Triple {
        Triple::new(Coframe::Abstract, std::array::from_fn(|j| from_six(&self.at(j, idx))))
    }

    pub fn plus(&self, c: f64, other: &TripleField) -> TripleField {
        let mut out = self.clone();
        for (x, y) in out.forms.iter_mut().flatten().zip(other.forms.iter().flatten()) {
            x.iter_mut().zip(y).for_each(|(a, b)| *a += c * b);
        }
        out
    }

    pub fn sup(&self) -> f64 {
        self.forms.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Smallest eigenvalue of q over the grid.
    pub fn min_gram_eigenvalue(&self) -> f64 {
        (0..self.n.pow(4))
            .map(|idx| gram6(&self.node(idx)).symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }

    /// sup of |Q| / (tr q / 3).
    pub fn sup_defect(&self) -> f64 {
        (0..self.n.pow(4))
            .map(|idx| {
                let q = gram6(&self.node(idx));
                trace_free(&q).norm() / (q.trace() / 3.0)
            })
            .fold(0.0, f64::max)
    }

    fn require_symplectic(&self) -> Result<()> {
        // leading minors first; the eigenvalue is only needed for the error
        let definite = (0..self.n.pow(4)).all(|idx| {
            let q = gram6(&self.node(idx));
            q[(0, 0)] > 0.0 && q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)] > 0.0 && q.determinant() > 0.0
        });
        if definite {
            return Ok(());
        }
        Err(Error::NotSymplectic { min_eig: self.min_gram_eigenvalue() })
    }
}

/// ω = flat + dβ for a seeded β with frequencies |m_μ| ≤ 1, scaled so
/// that sup|dβ| equals `amplitude`.
pub fn perturbed_flat(torus: &Torus, amplitude: f64, seed: u64) -> TripleField {
    let beta = OneFormTriple::random(torus, seed, 1);
    let db = torus.exterior(&beta);
    let s = db.sup();
    TripleField::flat(torus.n()).plus(if s > 0.0 { amplitude / s } else { 0.0 }, &db)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FResult {
    pub divergence_part: [Vec<f64>; 3],
    pub selfdual_part: TripleField,
}

impl FResult {
    pub fn sup(&self) -> f64 {
        let d = self.divergence_part.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        d.max(self.selfdual_part.sup())
    }

    pub fn sup_distance(&self, other: &FResult) -> f64 {
        let d = self
            .divergence_part
            .iter()
            .flatten()
            .zip(other.divergence_part.iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        d.max(self.selfdual_part.plus(-1.0, &other.selfdual_part).sup())
    }
}

/// M_js = da_j∧ω_s + R_js with R = ½Q(ω) + ½Q(da).
fn m_matrix(da: &[[f64; 6]; 3], om: &[[f64; 6]; 3], include_quadratic: bool) -> Matrix3<f64> {
    let mut r = trace_free(&gram6(om)) * 0.5;
    if include_quadratic {
        r += trace_free(&gram6(da)) * 0.5;
    }
    Matrix3::from_fn(|j, s| wedge6(&da[j], &om[s])) + r
}

/// Σ_sk N_js p_sk ω_k.
fn span_of(nm: &Matrix3<f64>, p: &Matrix3<f64>, om: &[[f64; 6]; 3]) -> [[f64; 6]; 3] {
    let c = nm * p;
    std::array::from_fn(|j| std::array::from_fn(|e| (0..3).map(|k| c[(j, k)] * om[k][e]).sum()))
}

fn selfdual_field(torus: &Torus, da: &TripleField, omega: &TripleField, include_quadratic: bool) -> TripleField {
    let mut out = TripleField::zeros(torus.n());
    for idx in 0..torus.len() {
        let om = omega.node(idx);
        let nm = m_matrix(&da.node(idx), &om, include_quadratic);
        let p = gram6(&om).try_inverse().unwrap_or_else(Matrix3::zeros);
        let v = span_of(&nm, &p, &om);
        for j in 0..3 {
            for e in 0..6 {
                out.forms[j][e][idx] = v[j][e];
            }
        }
    }
    out
}

/// F(a) for the background triple ω.
pub fn f_map(torus: &Torus, a: &OneFormTriple, omega: &TripleField) -> Result<FResult> {
    check_sizes(torus, a, omega)?;
    omega.require_symplectic()?;
    let da = torus.exterior(a);
    Ok(FResult { divergence_part: torus.codifferential(a), selfdual_part: selfdual_field(torus, &da, omega, true) })
}

/// The linear part D a = (d*a_j, d₊a_j) at ω.
pub fn dirac(torus: &Torus, a: &OneFormTriple, omega: &TripleField) -> Result<FResult> {
    check_sizes(torus, a, omega)?;
    omega.require_symplectic()?;
    let da = torus.exterior(a);
    let mut sd = selfdual_field(torus, &da, omega, false);
    // drop the constant ½Q(ω) term
    let e = selfdual_field(torus, &TripleField::zeros(torus.n()), omega, false);
    sd = sd.plus(-1.0, &e);
    Ok(FResult { divergence_part: torus.codifferential(a), selfdual_part: sd })
}

/// r̂(da) by three-point polarization: (F(a) + F(−a))/2 − F(0).
pub fn r_hat(torus: &Torus, a: &OneFormTriple, omega: &TripleField) -> Result<TripleField> {
    let mut minus = a.clone();
    minus.scale(-1.0);
    let fp = f_map(torus, a, omega)?;
    let fm = f_map(torus, &minus, omega)?;
    let f0 = f_map(torus, &OneFormTriple::zeros(torus.n()), omega)?;
    let mut half = fp.selfdual_part.plus(1.0, &fm.selfdual_part);
    half.forms.iter_mut().flatten().flatten().for_each(|v| *v *= 0.5);
    Ok(half.plus(-1.0, &f0.selfdual_part))
}

fn check_sizes(torus: &Torus, a: &OneFormTriple, omega: &TripleField) -> Result<()> {
    if a.n != torus.n() || omega.n != torus.n() {
        return Err(Error::GridMismatch(format!("fields at {} and {}, torus at {}", a.n, omega.n, torus.n())));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearizationReport {
    pub ts: Vec<f64>,
    pub errors: Vec<f64>,
    /// Measured order between consecutive t.
    pub orders: Vec<f64>,
    pub min_order: f64,
}

/// ‖F(ta) − t·Da‖ over a t-ladder for a seeded random a, with ω hyperKähler.
pub fn linearization_check(torus: &Torus, omega: &TripleField, seed: u64, ts: &[f64]) -> Result<LinearizationReport> {
    let a = OneFormTriple::random(torus, seed, 2);
    let lin = dirac(torus, &a, omega)?;
    let mut errors = Vec::with_capacity(ts.len());
    for &t in ts {
        let mut ta = a.clone();
        ta.scale(t);
        let f = f_map(torus, &ta, omega)?;
        let mut tl = lin.clone();
        tl.divergence_part.iter_mut().flatten().for_each(|v| *v *= t);
        tl.selfdual_part.forms.iter_mut().flatten().flatten().for_each(|v| *v *= t);
        errors.push(f.sup_distance(&tl));
    }
    let orders: Vec<f64> =
        ts.windows(2).zip(errors.windows(2)).map(|(t, e)| (e[0] / e[1]).ln() / (t[0] / t[1]).ln()).collect();
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(LinearizationReport { ts: ts.to_vec(), errors, orders, min_order })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRow {
    pub step: usize,
    /// sup of the normalized defect of ω + da.
    pub residual_q: f64,
    /// rms size of the update taken at this step.
    pub residual_fixed_point: f64,
    pub cpu_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub a: OneFormTriple,
    pub log: Vec<IterationRow>,
}

impl SolveOutcome {
    pub fn final_residual(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.residual_q)
    }

    /// log C_j with r_{j+1} = C_j r_j², over steps above `floor`.
    pub fn quadratic_constants(&self, floor: f64) -> Vec<f64> {
        self.log
            .windows(2)
            .filter(|w| w[1].residual_q > floor)
            .map(|w| w[1].residual_q / (w[0].residual_q * w[0].residual_q))
            .collect()
    }
}

struct NewtonState {
    da: TripleField,
    residual_q: f64,
}

/// Solves F(a) = 0 for a near-hyperKähler ω by Newton's method, each
/// linear solve being a Richardson iteration preconditioned by the flat
/// inverse on the complement of the kernel. Returns a with
/// sup|Q(ω + da)| / (tr q / 3) < `tol`.
pub fn contract_solve(torus: &Torus, omega: &TripleField, tol: f64, max_steps: usize) -> Result<SolveOutcome> {
    if omega.n != torus.n() {
        return Err(Error::GridMismatch(format!("background at {}, torus at {}", omega.n, torus.n())));
    }
    omega.require_symplectic()?;
    let len = torus.len();
    let clock = Instant::now();
    let mut a_hat: Spectrum = std::array::from_fn(|_| std::array::from_fn(|_| zeros_c(len)));
    let mut state = newton_state(torus, &a_hat, omega);
    let mut log = vec![IterationRow {
        step: 0,
        residual_q: state.residual_q,
        residual_fixed_point: 0.0,
        cpu_ms: clock.elapsed().as_secs_f64() * 1e3,
    }];
    let mut slow = 0;
    for step in 1..=max_steps {
        if state.residual_q < tol {
            break;
        }
        let g = residual_spectra(torus, &a_hat, &state.da, omega, None);
        let forcing = (0.5 * state.residual_q).min(1e-2);
        let delta = inner_solve(torus, &g, &state.da, omega, forcing);
        let size: f64 = delta.iter().flatten().map(|c| torus.rms_hat(c).powi(2)).sum::<f64>().sqrt();
        for (x, d) in a_hat.iter_mut().flatten().zip(delta.iter().flatten()) {
            x.iter_mut().zip(d).for_each(|(u, v)| *u += v);
        }
        let prev = state.residual_q;
        state = newton_state(torus, &a_hat, omega);
        log.push(IterationRow {
            step,
            residual_q: state.residual_q,
            residual_fixed_point: size,
            cpu_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        let ratio = state.residual_q / prev;
        if !(ratio < 0.9) {
            slow += 1;
            if slow >= 2 {
                return Err(Error::ContractionFailure { step, ratio });
            }
        } else {
            slow = 0;
        }
    }
    if !(state.residual_q < tol) {
        return Err(Error::SolverDivergence { residual: state.residual_q });
    }
    Ok(SolveOutcome { a: torus.real_of(&a_hat), log })
}

fn newton_state(torus: &Torus, a_hat: &Spectrum, omega: &TripleField) -> NewtonState {
    let da = torus.exterior_hat(a_hat);
    let residual_q = omega.plus(1.0, &da).sup_defect();
    NewtonState { da, residual_q }
}

/// Spectra of (d*a, M). With `tangent = Some(dδ)` this is the Jacobian
/// applied to δ instead: (d*δ, dδ_j∧ω_s + ½TF(da_j∧dδ_s + dδ_j∧da_s)).
fn residual_spectra(
    torus: &Torus,
    a_hat: &Spectrum,
    da: &TripleField,
    omega: &TripleField,
    tangent: Option<&TripleField>,
) -> (Vec<[Vec<C64>; 3]>, [Vec<C64>; 3]) {
    let len = torus.len();
    let mut m: [[Vec<f64>; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; len]));
    for idx in 0..len {
        let om = omega.node(idx);
        let x = da.node(idx);
        let v = match tangent {
            None => m_matrix(&x, &om, true),
            Some(t) => {
                let y = t.node(idx);
                let mixed = Matrix3::from_fn(|j, s| wedge6(&x[j], &y[s]) + wedge6(&y[j], &x[s]));
                Matrix3::from_fn(|j, s| wedge6(&y[j], &om[s])) + trace_free(&mixed) * 0.5
            }
        };
        for j in 0..3 {
            for s in 0..3 {
                m[j][s][idx] = v[(j, s)];
            }
        }
    }
    let flat: Vec<&Vec<f64>> = m.iter().flatten().collect();
    let mut spectra: Vec<Vec<C64>> = Vec::with_capacity(9);
    for pair in flat.chunks(2) {
        if pair.len() == 2 {
            let (x, y) = torus.forward_pair(pair[0], pair[1]);
            spectra.push(x);
            spectra.push(y);
        } else {
            spectra.push(torus.forward_real(pair[0]));
        }
    }
    let mut it = spectra.into_iter();
    let rows: Vec<[Vec<C64>; 3]> = (0..3).map(|_| std::array::from_fn(|_| it.next().unwrap())).collect();
    (rows, torus.div_hat(a_hat))
}

fn inner_solve(
    torus: &Torus,
    g: &(Vec<[Vec<C64>; 3]>, [Vec<C64>; 3]),
    da: &TripleField,
    omega: &TripleField,
    forcing: f64,
) -> Spectrum {
    let rows = |v: &Vec<[Vec<C64>; 3]>| -> [[Vec<C64>; 3]; 3] { std::array::from_fn(|j| v[j].clone()) };
    let mut delta = torus.flat_inverse(&g.1, &rows(&g.0));
    delta.iter_mut().flatten().flatten().for_each(|v| *v = -*v);
    for _ in 0..60 {
        let d_delta = torus.exterior_hat(&delta);
        let (jm, jdiv) = residual_spectra(torus, &delta, da, omega, Some(&d_delta));
        let sum_m: Vec<[Vec<C64>; 3]> = (0..3)
            .map(|j| std::array::from_fn(|s| jm[j][s].iter().zip(&g.0[j][s]).map(|(x, y)| x + y).collect()))
            .collect();
        let sum_div: [Vec<C64>; 3] =
            std::array::from_fn(|j| jdiv[j].iter().zip(&g.1[j]).map(|(x, y)| x + y).collect());
        let corr = torus.flat_inverse(&sum_div, &rows(&sum_m));
        let c: f64 = corr.iter().flatten().map(|v| torus.rms_hat(v).powi(2)).sum::<f64>().sqrt();
        let d: f64 = delta.iter().flatten().map(|v| torus.rms_hat(v).powi(2)).sum::<f64>().sqrt();
        for (x, y) in delta.iter_mut().flatten().zip(corr.iter().flatten()) {
            x.iter_mut().zip(y).for_each(|(u, v)| *u -= v);
        }
        if !(c > (forcing * d).max(1e-15)) {
            break;
        }
    }
    delta
}
