//! Fibrewise Laplacian of the adiabatic Gibbons–Hawking metric and its
//! approximate inverse.
//!
//! A circle-invariant function on the total space is a scalar field on a
//! box in ℝ³; a general one is split into Fourier modes e^{inθ}. On mode n
//! the Laplacian is ε²h⁻¹Δ̃₀ + h n², with Δ̃₀ = −Σ∇_j² built from the
//! covariant derivatives ∇_j = ∂_j − i n a_j. The discrete covariant
//! derivative transports neighbours with the exact link phases
//! exp(−i n ∫ a) so the stencil is gauge covariant.
//!
//! All Laplacians here are positive: Δ₀ = −Σ∂_j².

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::rc::Rc;

use crate::blowup_atlas::{build_bdf_suite, BdfSuite};
use crate::conv::{Convolver, Grid3, Kernel};
use crate::cutoff::{chi, chi_d1, chi_d2, smoothstep};
use crate::error::{Error, Result};
use crate::fields3d::{eval_potential, real_harmonics, PotentialSpec, Vec3};
use crate::gauge::{assemble_connection, ConnectionForm};
use crate::quad;

/// Largest grid accepted by the direct quadrature.
pub const DIRECT_MAX_N: usize = 96;

/// ∫ 1/|x| over the unit cube centred at 0.
const CUBE_SELF: f64 = 2.380_077_364_646_435;

const SECOND: [&[f64]; 5] = [
    &[-2.0, 1.0],
    &[-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0],
    &[-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0],
    &[-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0],
    &[-5269.0 / 1800.0, 5.0 / 3.0, -5.0 / 21.0, 5.0 / 126.0, -5.0 / 1008.0, 1.0 / 3150.0],
];

const FIRST: [&[f64]; 4] = [
    &[0.5],
    &[2.0 / 3.0, -1.0 / 12.0],
    &[3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0],
    &[4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0],
];

fn second_coeffs(order: usize) -> Result<&'static [f64]> {
    match order {
        2 | 4 | 6 | 8 | 10 => Ok(SECOND[order / 2 - 1]),
        _ => Err(Error::InvalidSpec(format!("no second-derivative stencil of order {order}"))),
    }
}

fn first_coeffs(order: usize) -> Result<&'static [f64]> {
    match order {
        2 | 4 | 6 | 8 => Ok(FIRST[order / 2 - 1]),
        _ => Err(Error::InvalidSpec(format!("no first-derivative stencil of order {order}"))),
    }
}

fn zero_c() -> C64 {
    C64::new(0.0, 0.0)
}

/// A function on the circle bundle over a box, stored by Fourier mode.
///
/// When `real` is set only modes n ≥ 0 are stored and mode −n is the
/// conjugate of mode n.
#[derive(Debug, Clone, PartialEq)]
pub struct FibredField {
    pub grid: Grid3,
    pub epsilon: f64,
    pub modes: BTreeMap<i32, Vec<C64>>,
    pub real: bool,
}

impl FibredField {
    pub fn new(grid: Grid3, epsilon: f64, real: bool) -> Self {
        FibredField { grid, epsilon, modes: BTreeMap::new(), real }
    }

    /// A circle-invariant real field.
    pub fn invariant(grid: Grid3, epsilon: f64, f0: &[f64]) -> Self {
        let mut f = Self::new(grid, epsilon, true);
        f.modes.insert(0, f0.iter().map(|&x| C64::new(x, 0.0)).collect());
        f
    }

    pub fn insert(&mut self, n: i32, values: Vec<C64>) -> Result<()> {
        if values.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!("mode {n} has {} values for {} nodes", values.len(), self.grid.len())));
        }
        if self.real && n < 0 {
            return Err(Error::InvalidSpec("real fields store only n >= 0".into()));
        }
        if self.real && n == 0 && values.iter().any(|z| z.im != 0.0) {
            return Err(Error::InvalidSpec("the invariant mode of a real field must be real".into()));
        }
        self.modes.insert(n, values);
        Ok(())
    }

    /// Mode n, conjugating a stored mode −n for real fields.
    pub fn mode(&self, n: i32) -> Option<Vec<C64>> {
        if let Some(v) = self.modes.get(&n) {
            return Some(v.clone());
        }
        if self.real && n < 0 {
            return self.modes.get(&-n).map(|v| v.iter().map(|z| z.conj()).collect());
        }
        None
    }

    /// Real part of the invariant mode.
    pub fn invariant_part(&self) -> Vec<f64> {
        match self.modes.get(&0) {
            Some(v) => v.iter().map(|z| z.re).collect(),
            None => vec![0.0; self.grid.len()],
        }
    }

    /// Every mode index present, including implied conjugates.
    pub fn mode_indices(&self) -> Vec<i32> {
        let mut v: Vec<i32> = self.modes.keys().copied().collect();
        if self.real {
            v.extend(self.modes.keys().filter(|&&n| n > 0).map(|n| -n));
        }
        v.sort();
        v
    }

    /// An empty field with the same grid, ε and symmetry.
    pub fn like(&self) -> Self {
        Self::new(self.grid, self.epsilon, self.real)
    }

    /// Pointwise value on the total space at node `idx` and angle θ.
    pub fn value(&self, idx: usize, theta: f64) -> C64 {
        self.mode_indices()
            .into_iter()
            .map(|n| self.mode(n).unwrap()[idx] * C64::from_polar(1.0, n as f64 * theta))
            .sum()
    }

    pub fn axpy(&mut self, a: f64, other: &FibredField) {
        for (n, v) in &other.modes {
            let dst = self.modes.entry(*n).or_insert_with(|| vec![zero_c(); v.len()]);
            for (d, s) in dst.iter_mut().zip(v) {
                *d += a * s;
            }
        }
    }

    pub fn sub(&self, other: &FibredField) -> FibredField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Multiply every mode by a real node field.
    pub fn scale_by(&mut self, w: &[f64]) {
        for v in self.modes.values_mut() {
            for (z, s) in v.iter_mut().zip(w) {
                *z *= *s;
            }
        }
    }

    /// sup over stored modes and nodes of |value|.
    pub fn sup(&self) -> f64 {
        self.modes.values().flat_map(|v| v.iter().map(|z| z.norm())).fold(0.0, f64::max)
    }
}

/// Background data of the adiabatic metric sampled on a grid.
pub struct AdiabaticBackground {
    pub grid: Grid3,
    pub epsilon: f64,
    pub spec: PotentialSpec,
    /// h_ε at every node.
    pub h: Vec<f64>,
    pub conn: ConnectionForm,
    links: RefCell<HashMap<usize, Rc<Vec<f64>>>>,
}

impl AdiabaticBackground {
    pub fn new(spec: &PotentialSpec, grid: Grid3) -> Result<Self> {
        let h = (0..grid.len()).map(|i| eval_potential(spec, &grid.node(i))).collect::<Result<Vec<f64>>>()?;
        Ok(AdiabaticBackground {
            grid,
            epsilon: spec.epsilon,
            spec: spec.clone(),
            h,
            conn: assemble_connection(spec),
            links: RefCell::new(HashMap::new()),
        })
    }

    /// h ≡ 1 and a = 0.
    pub fn flat(grid: Grid3, epsilon: f64) -> Result<Self> {
        let spec = PotentialSpec::new(Vec::new(), None, 0.0, epsilon)?;
        Self::new(&spec, grid)
    }

    /// Warning text when the grid step exceeds ε/4 and a center lies in
    /// the box.
    pub fn resolution_warning(&self) -> Option<String> {
        let step = self.grid.h();
        let l = self.grid.half_width;
        let inside = self
            .spec
            .sources()
            .iter()
            .any(|(c, w)| *w != 0.0 && c.iter().all(|x| x.abs() < l));
        if inside && step > self.epsilon / 4.0 {
            Some(format!("grid step {step} exceeds epsilon/4 = {} near centers", self.epsilon / 4.0))
        } else {
            None
        }
    }

    /// ∫ a along the unit link from node idx to idx + e_axis (0 past the last node).
    fn unit_links(&self, axis: usize) -> Rc<Vec<f64>> {
        if let Some(v) = self.links.borrow().get(&axis) {
            return v.clone();
        }
        let g = self.grid;
        let mut e = Vec3::zeros();
        e[axis] = g.h();
        let v: Vec<f64> = (0..g.len())
            .map(|idx| {
                let t = g.triple(idx);
                let c = [t.0, t.1, t.2][axis];
                if c + 1 >= g.n || self.conn.terms.iter().all(|t| t.coeff == 0.0) {
                    0.0
                } else {
                    let p = g.node(idx);
                    self.conn.segment_integral(&p, &(p + e))
                }
            })
            .collect();
        let v = Rc::new(v);
        self.links.borrow_mut().insert(axis, v.clone());
        v
    }
}

fn stride(grid: &Grid3, axis: usize) -> usize {
    match axis {
        0 => grid.n * grid.n,
        1 => grid.n,
        _ => 1,
    }
}

/// Covariant second differences Σ_j D_j² u for one mode (unscaled by the
/// step), zero within `order/2` nodes of the faces.
fn covariant_sum(bg: &AdiabaticBackground, u: &[C64], n: i32, order: usize) -> Result<Vec<C64>> {
    let c = second_coeffs(order)?;
    let g = bg.grid;
    let w = c.len() - 1;
    let mut out = vec![zero_c(); g.len()];
    for axis in 0..3 {
        let s = stride(&g, axis);
        let links = if n != 0 { Some(bg.unit_links(axis)) } else { None };
        for idx in 0..g.len() {
            if !g.interior(idx, w) {
                continue;
            }
            let mut acc = zero_c();
            match &links {
                None => {
                    for (m, cm) in c.iter().enumerate().skip(1) {
                        acc += *cm * (u[idx + m * s] + u[idx - m * s]);
                    }
                }
                Some(l) => {
                    let (mut fwd, mut back) = (0.0, 0.0);
                    for (m, cm) in c.iter().enumerate().skip(1) {
                        fwd += l[idx + (m - 1) * s];
                        back -= l[idx - m * s];
                        let pf = C64::from_polar(1.0, -(n as f64) * fwd);
                        let pb = C64::from_polar(1.0, -(n as f64) * back);
                        acc += *cm * (pf * u[idx + m * s] + pb * u[idx - m * s]);
                    }
                }
            }
            out[idx] += acc;
        }
    }
    for (idx, o) in out.iter_mut().enumerate() {
        if g.interior(idx, w) {
            *o += 3.0 * c[0] * u[idx];
        }
    }
    Ok(out)
}

/// The Laplacian of the adiabatic metric applied mode by mode, with a
/// central stencil of the given even order (2 to 10).
pub fn apply_laplacian(u: &FibredField, bg: &AdiabaticBackground, order: usize) -> Result<FibredField> {
    check_grid(&u.grid, &bg.grid)?;
    let dx2 = bg.grid.h().powi(2);
    let eps2 = bg.epsilon * bg.epsilon;
    let mut out = u.like();
    for (&n, v) in &u.modes {
        let lap = covariant_sum(bg, v, n, order)?;
        let w = second_coeffs(order)?.len() - 1;
        let nn = (n * n) as f64;
        let r: Vec<C64> = (0..v.len())
            .map(|i| {
                if !bg.grid.interior(i, w) {
                    return zero_c();
                }
                let h = bg.h[i];
                -eps2 / h * lap[i] / dx2 + h * nn * v[i]
            })
            .collect();
        out.modes.insert(n, r);
    }
    Ok(out)
}

fn check_grid(a: &Grid3, b: &Grid3) -> Result<()> {
    if a != b {
        Err(Error::GridMismatch(format!("{a:?} vs {b:?}")))
    } else {
        Ok(())
    }
}

/// Convolvers on one grid, built on first use.
pub struct KernelCache {
    pub grid: Grid3,
    items: RefCell<Vec<(Kernel, Rc<Convolver>)>>,
}

impl KernelCache {
    pub fn new(grid: Grid3) -> Self {
        KernelCache { grid, items: RefCell::new(Vec::new()) }
    }

    pub fn get(&self, kernel: Kernel) -> Rc<Convolver> {
        if let Some((_, c)) = self.items.borrow().iter().find(|(k, _)| *k == kernel) {
            return c.clone();
        }
        let c = Rc::new(Convolver::new(self.grid, kernel));
        self.items.borrow_mut().push((kernel, c.clone()));
        c
    }

    pub fn len(&self) -> usize {
        self.items.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// u = (1/4πε) ∫ h f₀ / |x − y| dy, which solves Δ_g u = ε f₀.
pub fn invariant_poisson(f0: &[f64], bg: &AdiabaticBackground, cache: &KernelCache) -> Result<Vec<f64>> {
    check_grid(&cache.grid, &bg.grid)?;
    let src: Vec<f64> = f0.iter().zip(&bg.h).map(|(f, h)| f * h).collect();
    let u = cache.get(Kernel::Newton).apply(&src);
    Ok(u.into_iter().map(|x| x / bg.epsilon).collect())
}

/// The same integral by direct summation over cells; the self cell uses
/// the exact cube average of the kernel.
pub fn invariant_poisson_direct(f0: &[f64], bg: &AdiabaticBackground) -> Result<Vec<f64>> {
    let g = bg.grid;
    if g.n > DIRECT_MAX_N {
        return Err(Error::QuadratureOverflow(g.n));
    }
    let step = g.h();
    let vol = step.powi(3);
    let nodes = g.nodes();
    let src: Vec<f64> = f0.iter().zip(&bg.h).map(|(f, h)| f * h).collect();
    let self_term = CUBE_SELF * step * step / (4.0 * PI);
    let u = (0..g.len())
        .map(|i| {
            let mut s = self_term * src[i];
            for (j, y) in nodes.iter().enumerate() {
                if j != i && src[j] != 0.0 {
                    s += vol * src[j] / (4.0 * PI * (nodes[i] - y).norm());
                }
            }
            s / bg.epsilon
        })
        .collect();
    Ok(u)
}

/// u = ε⁻² (Yukawa_{|n|/ε} ∗ f), which solves (ε²Δ₀ + n²)u = f.
pub fn mode_poisson(f: &[C64], n: i32, epsilon: f64, cache: &KernelCache) -> Result<Vec<C64>> {
    if n == 0 {
        return Err(Error::InvalidSpec("mode_poisson needs n != 0".into()));
    }
    let mu = n.unsigned_abs() as f64 / epsilon;
    let u = cache.get(Kernel::Yukawa { mu }).apply_complex(f);
    Ok(u.into_iter().map(|z| z / (epsilon * epsilon)).collect())
}

/// One first-order central difference along `axis`, zero near the faces.
fn partial(grid: &Grid3, f: &[f64], axis: usize, order: usize) -> Result<Vec<f64>> {
    let c = first_coeffs(order)?;
    let s = stride(grid, axis);
    let w = c.len();
    let step = grid.h();
    Ok((0..grid.len())
        .map(|idx| {
            let t = grid.triple(idx);
            let a = [t.0, t.1, t.2][axis];
            if a < w || a + w >= grid.n {
                return 0.0;
            }
            c.iter().enumerate().map(|(m, cm)| cm * (f[idx + (m + 1) * s] - f[idx - (m + 1) * s])).sum::<f64>() / step
        })
        .collect())
}

/// The constant-coefficient operator M of the coclosure map; its rows are
/// [0,∂₁,∂₂,∂₃], [−∂₁,0,−∂₃,∂₂], [−∂₂,∂₃,0,−∂₁], [−∂₃,−∂₂,∂₁,0].
fn apply_m(grid: &Grid3, phi: &[Vec<f64>; 4], order: usize) -> Result<[Vec<f64>; 4]> {
    let mut d = Vec::with_capacity(4);
    for comp in phi {
        let mut row = Vec::with_capacity(3);
        for axis in 0..3 {
            row.push(partial(grid, comp, axis, order)?);
        }
        d.push(row);
    }
    let len = grid.len();
    let combine = |terms: &[(f64, usize, usize)]| -> Vec<f64> {
        (0..len).map(|i| terms.iter().map(|&(s, c, a)| s * d[c][a][i]).sum()).collect()
    };
    Ok([
        combine(&[(1.0, 1, 0), (1.0, 2, 1), (1.0, 3, 2)]),
        combine(&[(-1.0, 0, 0), (-1.0, 2, 2), (1.0, 3, 1)]),
        combine(&[(-1.0, 0, 1), (1.0, 1, 2), (-1.0, 3, 0)]),
        combine(&[(-1.0, 0, 2), (-1.0, 1, 1), (1.0, 2, 0)]),
    ])
}

/// The coclosure operator on invariant data, w = (ε/√h) M φ, in the
/// orthonormal frame e₀ = α/√h, e_j = √h dx_j/ε.
pub fn dstar_invariant(phi: &[Vec<f64>; 4], bg: &AdiabaticBackground, order: usize) -> Result<[Vec<f64>; 4]> {
    let mut w = apply_m(&bg.grid, phi, order)?;
    for comp in w.iter_mut() {
        for (x, h) in comp.iter_mut().zip(&bg.h) {
            *x *= bg.epsilon / h.sqrt();
        }
    }
    Ok(w)
}

/// Formal adjoint of [`dstar_invariant`] for the volume form h dx:
/// h⁻¹ M (ε√h w), since M is formally self-adjoint.
pub fn dstar_adjoint(w: &[Vec<f64>; 4], bg: &AdiabaticBackground, order: usize) -> Result<[Vec<f64>; 4]> {
    let scaled: [Vec<f64>; 4] = std::array::from_fn(|a| w[a].iter().zip(&bg.h).map(|(x, h)| bg.epsilon * h.sqrt() * x).collect());
    let mut out = apply_m(&bg.grid, &scaled, order)?;
    for comp in out.iter_mut() {
        for (x, h) in comp.iter_mut().zip(&bg.h) {
            *x /= h;
        }
    }
    Ok(out)
}

/// The log-scale cutoffs of the patching construction.
///
/// χ_ν = χ(σ_ν/δ) and χ_ad = 1 − Σχ_ν partition unity; η_ν falls from 1
/// at σ_ν = δ to 0 at σ_ν = √δ and η_ad rises from 0 at σ_ν = δ²/2 to 1
/// at σ_ν = δ/2, so η χ = χ for every piece.
#[derive(Debug, Clone)]
pub struct CutoffFamily {
    pub delta: f64,
    pub bdf: BdfSuite,
    /// Indices into the source list of the centers that carry weight.
    pub active: Vec<usize>,
}

impl CutoffFamily {
    pub fn new(spec: &PotentialSpec, delta: f64) -> Result<Self> {
        let bdf = build_bdf_suite(spec, delta)?;
        let active = spec.sources().iter().enumerate().filter(|(_, s)| s.1 != 0.0).map(|(i, _)| i).collect();
        Ok(CutoffFamily { delta, bdf, active })
    }

    pub fn sigma(&self, nu: usize, x: &Vec3) -> f64 {
        self.bdf.sigma_nu(self.active[nu], x)
    }

    pub fn count(&self) -> usize {
        self.active.len()
    }

    pub fn chi_nu(&self, nu: usize, x: &Vec3) -> f64 {
        chi(self.sigma(nu, x) / self.delta)
    }

    pub fn chi_ad(&self, x: &Vec3) -> f64 {
        1.0 - (0..self.count()).map(|nu| self.chi_nu(nu, x)).sum::<f64>()
    }

    pub fn eta_nu(&self, nu: usize, x: &Vec3) -> f64 {
        eta_profile(self.sigma(nu, x), self.delta)
    }

    pub fn eta_ad(&self, x: &Vec3) -> f64 {
        let l = self.delta.ln();
        1.0 - (0..self.count())
            .map(|nu| 1.0 - chi((2.0 * self.sigma(nu, x)).ln() / (2.0 * l)))
            .sum::<f64>()
    }
}

/// 1 − χ(log σ / log δ): 1 for σ ≤ δ, 0 for σ ≥ √δ.
pub fn eta_profile(sigma: f64, delta: f64) -> f64 {
    1.0 - chi(sigma.ln() / delta.ln())
}

/// d/dσ of [`eta_profile`].
pub fn eta_profile_d1(sigma: f64, delta: f64) -> f64 {
    let l = delta.ln();
    -chi_d1(sigma.ln() / l) / (sigma * l)
}

/// Flat Laplacian −∇² of the radial profile η(|x − c|).
pub fn eta_profile_laplacian(sigma: f64, delta: f64) -> f64 {
    let l = delta.ln();
    let t = sigma.ln() / l;
    (chi_d1(t) / l + chi_d2(t) / (l * l)) / (sigma * sigma)
}

/// Settings of the patched approximate inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSettings {
    pub delta: f64,
    /// Stencil order of the residual Laplacian.
    pub order: usize,
    /// Decay weight of the invariant mode, ρ^{−(α+2)}.
    pub alpha: f64,
    /// Decay weight of the other modes, ρ^{−β}.
    pub beta: f64,
    /// Balls of this radius around the centers are left out of the
    /// residual norm. The default δ/2 + (order/2)h keeps every stencil
    /// clear of the transition of η_ad on [δ²/2, δ/2], which desk grids do
    /// not resolve.
    pub exclusion: f64,
    /// Coefficient levels of the frozen-coefficient Yukawa solves.
    pub mu_levels: usize,
    /// Nonzero modes are measured only at cylindrical radius ≥ this from
    /// the z axis, where the Dirac strings of the connection lie.
    pub axis_tube: f64,
}

impl PatchSettings {
    pub fn new(delta: f64, grid: &Grid3) -> Self {
        let order = 4;
        let exclusion = 0.5 * delta + (order / 2) as f64 * grid.h();
        PatchSettings { delta, order, alpha: 0.5, beta: 3.5, exclusion, mu_levels: 3, axis_tube: 0.15 }
    }
}

/// Residual of one region, as written to the JSON reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResidual {
    pub region: String,
    pub residual: f64,
    pub grid: usize,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub regions: Vec<RegionResidual>,
    pub total: f64,
}

/// Result of a patched solve with Neumann refinement.
#[derive(Debug, Clone)]
pub struct PatchedSolve {
    pub u: FibredField,
    /// Relative weighted residual after 0, 1, … refinements.
    pub history: Vec<f64>,
    pub report: ResidualReport,
}

/// The patched approximate inverse with every node field precomputed.
pub struct PatchedInverse {
    pub bg: AdiabaticBackground,
    pub cutoffs: CutoffFamily,
    pub settings: PatchSettings,
    pub cache: KernelCache,
    chi_nu: Vec<Vec<f64>>,
    eta_nu: Vec<Vec<f64>>,
    h_nu: Vec<Vec<f64>>,
    chi_ad: Vec<f64>,
    eta_ad: Vec<f64>,
    weight0: Vec<f64>,
    weight_n: Vec<f64>,
    /// Nodes where the residual is measured, for the invariant mode and
    /// for the others.
    mask0: Vec<bool>,
    mask_n: Vec<bool>,
    /// distance to the nearest active center
    pub dist: Vec<f64>,
    /// region label per node: Some(ν) inside supp χ_ν
    region: Vec<Option<usize>>,
}

impl PatchedInverse {
    pub fn new(bg: AdiabaticBackground, settings: PatchSettings) -> Result<Self> {
        let cutoffs = CutoffFamily::new(&bg.spec, settings.delta)?;
        let g = bg.grid;
        let nodes = g.nodes();
        let sources = bg.spec.sources();
        let eps = bg.epsilon;
        let k = cutoffs.count();
        let mut chi_nu = Vec::with_capacity(k);
        let mut eta_nu = Vec::with_capacity(k);
        let mut h_nu = Vec::with_capacity(k);
        for nu in 0..k {
            chi_nu.push(nodes.iter().map(|x| cutoffs.chi_nu(nu, x)).collect());
            eta_nu.push(nodes.iter().map(|x| cutoffs.eta_nu(nu, x)).collect());
            let (c, w) = sources[cutoffs.active[nu]];
            // frozen model: the own singular term plus the rest at the center
            let m: f64 = bg.spec.constant
                + sources
                    .iter()
                    .enumerate()
                    .filter(|(i, s)| *i != cutoffs.active[nu] && s.1 != 0.0)
                    .map(|(_, s)| s.1 * eps / (c - s.0).norm())
                    .sum::<f64>();
            h_nu.push(nodes.iter().map(|x| m + w * eps / (x - c).norm()).collect());
        }
        let chi_ad = nodes.iter().map(|x| cutoffs.chi_ad(x)).collect();
        let eta_ad = nodes.iter().map(|x| cutoffs.eta_ad(x)).collect();
        let rho: Vec<f64> = nodes
            .iter()
            .map(|x| eps / (0..k).map(|nu| cutoffs.sigma(nu, x)).product::<f64>())
            .collect();
        let weight0 = rho.iter().map(|r| r.powf(-(settings.alpha + 2.0))).collect();
        let weight_n = rho.iter().map(|r| r.powf(-settings.beta)).collect();
        let active: Vec<Vec3> = cutoffs.active.iter().map(|&i| sources[i].0).collect();
        let dist: Vec<f64> = nodes
            .iter()
            .map(|x| active.iter().map(|c| (x - c).norm()).fold(f64::INFINITY, f64::min))
            .collect();
        let w = second_coeffs(settings.order)?.len() - 1;
        let ex = settings.exclusion;
        let mask0: Vec<bool> = (0..g.len()).map(|i| g.interior(i, w) && dist[i] >= ex).collect();
        let tube = settings.axis_tube;
        let axial: Vec<f64> = nodes.iter().map(|x| (x.x * x.x + x.y * x.y).sqrt()).collect();
        let mask_n = mask0.iter().zip(&axial).map(|(m, r)| *m && *r >= tube).collect();

        let region = nodes
            .iter()
            .map(|x| (0..k).find(|&nu| cutoffs.sigma(nu, x) < settings.delta))
            .collect();
        let cache = KernelCache::new(g);
        Ok(PatchedInverse {
            bg,
            cutoffs,
            settings,
            cache,
            chi_nu,
            eta_nu,
            h_nu,
            chi_ad,
            eta_ad,
            weight0,
            weight_n,
            mask0,
            mask_n,
            dist,
            region,
        })
    }

    fn zero_mode_piece(&self, g: &[C64], coeff: &[f64]) -> Vec<C64> {
        let src: Vec<C64> = g.iter().zip(coeff).map(|(z, c)| z * *c).collect();
        let eps2 = self.bg.epsilon.powi(2);
        self.cache.get(Kernel::Newton).apply_complex(&src).into_iter().map(|z| z / eps2).collect()
    }

    /// Frozen-coefficient solve of (ε²Δ₀ + c² n²) u = c g: Yukawa solves
    /// at a few levels of c, interpolated at each node in 1/c².
    fn mode_piece(&self, g: &[C64], coeff: &[f64], n: i32) -> Vec<C64> {
        let eps = self.bg.epsilon;
        let support: Vec<f64> = g.iter().zip(coeff).filter(|(z, _)| z.norm() > 0.0).map(|(_, c)| *c).collect();
        if support.is_empty() {
            return vec![zero_c(); g.len()];
        }
        let lo = support.iter().copied().fold(f64::INFINITY, f64::min).max(1e-3);
        let hi = support.iter().copied().fold(0.0, f64::max).max(lo);
        let levels = if hi - lo < 1e-12 { 1 } else { self.settings.mu_levels.max(2) };
        let (s_lo, s_hi) = (1.0 / (hi * hi), 1.0 / (lo * lo));
        let svals: Vec<f64> = (0..levels)
            .map(|l| if levels == 1 { s_lo } else { s_lo + (s_hi - s_lo) * l as f64 / (levels - 1) as f64 })
            .collect();
        let src: Vec<C64> = g.iter().zip(coeff).map(|(z, c)| z * *c).collect();
        let solves: Vec<Vec<C64>> = svals
            .iter()
            .map(|s| {
                let mu = n.unsigned_abs() as f64 / (eps * s.sqrt());
                self.cache.get(Kernel::Yukawa { mu }).apply_complex(&src)
            })
            .collect();
        (0..g.len())
            .map(|i| {
                let c = coeff[i].max(1e-3);
                let s = (1.0 / (c * c)).clamp(s_lo, s_hi);
                let mut acc = zero_c();
                for (a, sa) in svals.iter().enumerate() {
                    let mut l = 1.0;
                    for (b, sb) in svals.iter().enumerate() {
                        if a != b {
                            l *= (s - sb) / (sa - sb);
                        }
                    }
                    acc += l * solves[a][i];
                }
                acc / (eps * eps)
            })
            .collect()
    }

    /// The parametrix u = Σ η_ν G_ν(χ_ν f) + η_ad G_ad(χ_ad f).
    pub fn apply(&self, f: &FibredField) -> Result<FibredField> {
        check_grid(&f.grid, &self.bg.grid)?;
        let mut out = f.like();
        for (&n, v) in &f.modes {
            let mut total = vec![zero_c(); v.len()];
            let mut pieces: Vec<(&[f64], &[f64], &[f64])> = (0..self.cutoffs.count())
                .map(|nu| (&self.chi_nu[nu][..], &self.eta_nu[nu][..], &self.h_nu[nu][..]))
                .collect();
            pieces.push((&self.chi_ad, &self.eta_ad, &self.bg.h));
            for (chi, eta, coeff) in pieces {
                let g: Vec<C64> = v.iter().zip(chi).map(|(z, c)| z * *c).collect();
                if g.iter().all(|z| z.norm() == 0.0) {
                    continue;
                }
                let u = if n == 0 { self.zero_mode_piece(&g, coeff) } else { self.mode_piece(&g, coeff, n) };
                for ((t, x), e) in total.iter_mut().zip(&u).zip(eta) {
                    *t += x * *e;
                }
            }
            out.modes.insert(n, total);
        }
        Ok(out)
    }

    /// f − Δu on the measured nodes, zero elsewhere.
    pub fn residual(&self, f: &FibredField, u: &FibredField) -> Result<FibredField> {
        let lu = apply_laplacian(u, &self.bg, self.settings.order)?;
        let mut r = f.sub(&lu);
        for (n, v) in r.modes.iter_mut() {
            let m = if *n == 0 { &self.mask0 } else { &self.mask_n };
            for (z, keep) in v.iter_mut().zip(m) {
                if !keep {
                    *z = zero_c();
                }
            }
        }
        Ok(r)
    }

    fn weighted_sup(&self, v: &FibredField, region: Option<Option<usize>>) -> f64 {
        let mut s: f64 = 0.0;
        for (&n, vals) in &v.modes {
            let (w, mask) = if n == 0 { (&self.weight0, &self.mask0) } else { (&self.weight_n, &self.mask_n) };
            for i in 0..vals.len() {
                if !mask[i] || region.is_some_and(|r| r != self.region[i]) {
                    continue;
                }
                s = s.max(w[i] * vals[i].norm());
            }
        }
        s
    }

    /// Weighted sup norm over the measured nodes.
    pub fn norm(&self, v: &FibredField) -> f64 {
        self.weighted_sup(v, None)
    }

    /// Per-region and total relative residuals of u against f.
    pub fn report(&self, f: &FibredField, u: &FibredField) -> Result<ResidualReport> {
        let r = self.residual(f, u)?;
        let fnorm = self.norm(f);
        let mk = |region: String, residual: f64| RegionResidual {
            region,
            residual,
            grid: self.bg.grid.n,
            delta: self.settings.delta,
            epsilon: self.bg.epsilon,
        };
        let mut regions: Vec<RegionResidual> = (0..self.cutoffs.count())
            .map(|nu| mk(format!("nu{nu}"), self.weighted_sup(&r, Some(Some(nu))) / fnorm))
            .collect();
        regions.push(mk("ad".into(), self.weighted_sup(&r, Some(None)) / fnorm));
        let total = self.norm(&r) / fnorm;
        regions.push(mk("total".into(), total));
        Ok(ResidualReport { regions, total })
    }

    /// The parametrix followed by `refinements` steps u += G(f − Δu), the
    /// residual being restricted to the measured nodes.
    pub fn solve(&self, f: &FibredField, refinements: usize) -> Result<PatchedSolve> {
        let fnorm = self.norm(f);
        let mut u = self.apply(f)?;
        let mut history = Vec::with_capacity(refinements + 1);
        for step in 0..=refinements {
            let r = self.residual(f, &u)?;
            history.push(self.norm(&r) / fnorm);
            if step == refinements {
                break;
            }
            let du = self.apply(&r)?;
            u.axpy(1.0, &du);
        }
        let report = self.report(f, &u)?;
        Ok(PatchedSolve { u, history, report })
    }

    /// Window applied to battery fields: zero within r_in of every center,
    /// one beyond 2 r_in, and zero near the box faces.
    fn source_window(&self, r_in: f64, axis_width: Option<f64>) -> Vec<f64> {
        let g = self.bg.grid;
        let l = g.half_width;
        (0..g.len())
            .map(|i| {
                let x = g.node(i);
                let mut w = smoothstep((self.dist[i] - r_in) / r_in);
                for c in x.iter() {
                    w *= smoothstep((0.85 * l - c.abs()) / (0.1 * l));
                }
                if let Some(a) = axis_width {
                    w *= smoothstep(((x.x * x.x + x.y * x.y).sqrt() - a) / a);
                }
                w
            })
            .collect()
    }

    /// A seeded random smooth real test field with modes 0..=max_mode.
    pub fn battery_field(&self, seed: u64, max_mode: i32) -> FibredField {
        let g = self.bg.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = FibredField::new(g, self.bg.epsilon, true);
        let l = g.half_width;
        let r_in = 0.5 * self.settings.delta;
        for n in 0..=max_mode {
            let win = self.source_window(r_in, if n == 0 { None } else { Some(1.5 * self.settings.axis_tube) });
            let bumps: Vec<(Vec3, f64, C64)> = (0..6)
                .map(|_| {
                    let c = Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)) * l;
                    let s = rng.gen_range(0.2..0.35);
                    let a = if n == 0 {
                        C64::new(rng.gen_range(-1.0..1.0), 0.0)
                    } else {
                        C64::from_polar(rng.gen_range(0.2..1.0), rng.gen_range(0.0..2.0 * PI))
                    };
                    (c, s, a)
                })
                .collect();
            let vals: Vec<C64> = (0..g.len())
                .map(|i| {
                    let x = g.node(i);
                    let s: C64 = bumps.iter().map(|(c, w, a)| a * (-(x - c).norm_squared() / (2.0 * w * w)).exp()).sum();
                    s * win[i]
                })
                .collect();
            f.modes.insert(n, vals);
        }
        f
    }
}

/// Patched solve of Δu = f; fails when the parametrix residual exceeds 0.9.
pub fn patched_inverse(f: &FibredField, inverse: &PatchedInverse) -> Result<(FibredField, ResidualReport)> {
    let u = inverse.apply(f)?;
    let report = inverse.report(f, &u)?;
    if report.total > 0.9 {
        return Err(Error::SolverDivergence { residual: report.total });
    }
    Ok((u, report))
}

/// One row of the commutator scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutatorRow {
    pub delta: f64,
    pub epsilon: f64,
    /// sup over the battery of ‖[Δ, η]G f‖/‖f‖ in the weighted norm.
    pub norm: f64,
    /// norm / norm of the previous row.
    pub ratio: Option<f64>,
    /// 1/|log δ| relative to the previous row, the predicted ratio.
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutatorScan {
    pub alpha: f64,
    pub battery: usize,
    pub rows: Vec<CommutatorRow>,
}

const SCAN_LMAX: usize = 2;

struct ScanSource {
    /// coefficients a_ℓm of the angular part
    angular: Vec<Vec<f64>>,
    /// radial polynomial b₀ + b₁ X² in the scaled variable X = r/δ
    radial: [f64; 2],
}

fn scan_sources(seed: u64, count: usize) -> Vec<ScanSource> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ScanSource {
            angular: (0..=SCAN_LMAX).map(|l| (0..=2 * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            radial: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        })
        .collect()
}

/// Commutator norms of the cutoff η_ν around one center of weight 1/2.
///
/// Each test source is f = χ(r/δ) P(x/δ) with P a random polynomial of
/// degree ≤ 2 in each harmonic sector. The Newton potential outside the
/// support is its exact multipole sum, which makes the commutator
/// −ε²h⁻¹[u ∇²η + 2η′∂_r u] available in closed form on the transition
/// annulus δ ≤ r ≤ √δ. Norms carry the weight (r/ε)^{α+2}.
pub fn commutator_scan(deltas: &[f64], battery: usize, seed: u64) -> Result<CommutatorScan> {
    commutator_scan_weighted(deltas, battery, seed, 0.5)
}

/// [`commutator_scan`] with an explicit decay exponent α ∈ (0, 1).
pub fn commutator_scan_weighted(deltas: &[f64], battery: usize, seed: u64, alpha: f64) -> Result<CommutatorScan> {
    if deltas.len() < 3 {
        return Err(Error::BadDelta("commutator scan needs at least three scales".into()));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && **d < 0.25)) {
        return Err(Error::BadDelta(format!("delta = {d} outside (0, 1/4)")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidSpec(format!("alpha = {alpha} outside (0, 1)")));
    }
    let weight = 0.5;
    let sources = scan_sources(seed, battery);
    let dirs = quad::sphere_rule(8, 16);
    let mut rows: Vec<CommutatorRow> = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let eps = 0.01 * delta * delta;
        let h = |r: f64| 1.0 + weight * eps / r;
        let mut worst: f64 = 0.0;
        for src in &sources {
            let radial = |r: f64| {
                let x = r / delta;
                chi(x) * (src.radial[0] + src.radial[1] * x * x)
            };
            // q_ℓ = ∫ h χ R(r) (r/δ)^ℓ r^ℓ r² dr times ∫ S_ℓm² = 4π/(2ℓ+1)
            let mut q = Vec::with_capacity(SCAN_LMAX + 1);
            for l in 0..=SCAN_LMAX {
                let li = l as i32;
                let radial_moment = quad::integrate(
                    |r| h(r) * radial(r) * (r / delta).powi(li) * r.powi(li + 2),
                    0.0,
                    delta,
                    1e-12,
                )?;
                q.push(radial_moment * 4.0 * PI / (2 * l + 1) as f64);
            }
            // input norm: sup of (max(r, ε)/ε)^{α+2} |f| over the support
            let mut fin: f64 = 0.0;
            for i in 1..=200 {
                let r = delta * i as f64 / 200.0;
                let wr = (r.max(eps) / eps).powf(alpha + 2.0);
                for (d, _) in &dirs {
                    let s = real_harmonics(SCAN_LMAX, d);
                    let ang: f64 = (0..=SCAN_LMAX)
                        .map(|l| {
                            let a: f64 = src.angular[l].iter().zip(&s[l]).map(|(a, y)| a * y).sum();
                            a * (r / delta).powi(l as i32)
                        })
                        .sum();
                    fin = fin.max(wr * (radial(r) * ang).abs());
                }
            }
            // output norm on the transition annulus
            let mut fout: f64 = 0.0;
            let (lo, hi) = (delta.ln(), 0.5 * delta.ln());
            for i in 0..=400 {
                let r = (lo + (hi - lo) * i as f64 / 400.0).exp();
                let wr = (r / eps).powf(alpha + 2.0);
                let lap_eta = eta_profile_laplacian(r, delta);
                let d_eta = eta_profile_d1(r, delta);
                for (d, _) in &dirs {
                    let s = real_harmonics(SCAN_LMAX, d);
                    let (mut u, mut du) = (0.0, 0.0);
                    for l in 0..=SCAN_LMAX {
                        let a: f64 = src.angular[l].iter().zip(&s[l]).map(|(a, y)| a * y).sum();
                        let term = q[l] * a / (4.0 * PI * r.powi(l as i32 + 1));
                        u += term;
                        du -= (l + 1) as f64 * term / r;
                    }
                    // ε⁻² from G and ε² from Δ cancel
                    let c = -(lap_eta * u + 2.0 * d_eta * du) / h(r);
                    fout = fout.max(wr * c.abs());
                }
            }
            worst = worst.max(fout / fin);
        }
        let prev = rows.last().map(|r: &CommutatorRow| (r.norm, r.delta));
        rows.push(CommutatorRow {
            delta,
            epsilon: eps,
            norm: worst,
            ratio: prev.map(|(n, _)| worst / n),
            predicted: prev.map(|(_, d)| d.ln() / delta.ln()),
        });
    }
    Ok(CommutatorScan { alpha, battery, rows })
}
