//! Quadrature rules shared by the geometric modules.

use crate::error::{Error, Result};
use nalgebra::Vector3;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss–Kronrod 7/15 panel for a vector-valued integrand.
/// Returns (Kronrod estimate, |Kronrod - Gauss|).
fn gk15<const N: usize, F>(f: &F, a: f64, b: f64) -> ([f64; N], f64)
where
    F: Fn(f64) -> [f64; N],
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    let fc = f(c);
    for i in 0..N {
        k[i] = WGK[7] * fc[i];
        g[i] = WG[3] * fc[i];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for i in 0..N {
            let s = f1[i] + f2[i];
            k[i] += WGK[j] * s;
            if j % 2 == 1 {
                g[i] += WG[j / 2] * s;
            }
        }
    }
    let mut err = 0.0f64;
    for i in 0..N {
        k[i] *= h;
        g[i] *= h;
        err = err.max((k[i] - g[i]).abs());
    }
    (k, err)
}

/// Adaptive Gauss–Kronrod integration of a vector-valued function on [a, b].
///
/// Bisects the worst panel until the summed error estimate falls below
/// `tol * max(1, |I|)`.
pub fn integrate_vec<const N: usize, F>(f: F, a: f64, b: f64, tol: f64) -> Result<[f64; N]>
where
    F: Fn(f64) -> [f64; N],
{
    let mut panels = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..200 {
        let mut total = [0.0; N];
        let mut err = 0.0;
        for (_, _, (v, e)) in &panels {
            for i in 0..N {
                total[i] += v[i];
            }
            err += e;
        }
        let scale = total.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if err <= tol * scale {
            return Ok(total);
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .unwrap();
        let (lo, hi, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        panels.push((lo, mid, gk15(&f, lo, mid)));
        panels.push((mid, hi, gk15(&f, mid, hi)));
    }
    let err: f64 = panels.iter().map(|p| p.2 .1).sum();
    Err(Error::QuadratureFailure { estimate: err })
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    integrate_vec(|t| [f(t)], a, b, tol).map(|v| v[0])
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Product rule on the unit sphere: Gauss–Legendre in cos θ times the
/// trapezoid rule in φ. Exact for spherical harmonics of degree
/// < min(2 n_theta, n_phi).
pub fn sphere_rule(n_theta: usize, n_phi: usize) -> Vec<(Vector3<f64>, f64)> {
    let (ct, wt) = gauss_legendre(n_theta);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for (c, w) in ct.iter().zip(&wt) {
        let s = (1.0 - c * c).sqrt();
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * dphi;
            out.push((Vector3::new(s * phi.cos(), s * phi.sin(), *c), w * dphi));
        }
    }
    out
}

/// Quasi-uniform Fibonacci directions on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Ordinary least-squares slope of y against x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
