//! Cell-centred box grids, 3-D FFTs and free-space convolution with the
//! Newton and Yukawa kernels.
//!
//! Free-space convolutions use the truncated-kernel method: the kernel is
//! cut off at R ≥ √3·(box side), whose Fourier transform is smooth, so a
//! 4× oversampled transform followed by a crop yields a discrete kernel
//! that is spectrally accurate for smooth, well resolved data. The
//! convolution itself is an aperiodic (2× zero padded) FFT product.

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::fields3d::Vec3;

/// n³ nodes at the cell centres of the cube [−L, L]³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub n: usize,
    pub half_width: f64,
}

impl Grid3 {
    pub fn new(n: usize, half_width: f64) -> Self {
        Grid3 { n, half_width }
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn triple(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    pub fn node(&self, idx: usize) -> Vec3 {
        let (i, j, k) = self.triple(idx);
        Vec3::new(self.coord(i), self.coord(j), self.coord(k))
    }

    pub fn nodes(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Sample a function at every node.
    pub fn sample<T, F: Fn(&Vec3) -> T>(&self, f: F) -> Vec<T> {
        (0..self.len()).map(|i| f(&self.node(i))).collect()
    }

    /// Whether the node is at least `w` nodes away from every face.
    pub fn interior(&self, idx: usize, w: usize) -> bool {
        let (i, j, k) = self.triple(idx);
        let ok = |a: usize| a >= w && a + w < self.n;
        ok(i) && ok(j) && ok(k)
    }
}

/// In-place 3-D FFT of an m³ array (unnormalized in both directions).
pub struct Fft3 {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(m: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft3 { m, forward: p.plan_fft_forward(m), backward: p.plan_fft_inverse(m) }
    }

    pub fn process(&self, data: &mut [C64], inverse: bool) {
        let m = self.m;
        assert_eq!(data.len(), m * m * m);
        let fft = if inverse { &self.backward } else { &self.forward };
        // last axis: contiguous lines
        fft.process(data);
        let mut buf = vec![C64::new(0.0, 0.0); m * m];
        // middle axis: transpose each i-plane
        for i in 0..m {
            let plane = &mut data[i * m * m..(i + 1) * m * m];
            for j in 0..m {
                for k in 0..m {
                    buf[k * m + j] = plane[j * m + k];
                }
            }
            fft.process(&mut buf);
            for j in 0..m {
                for k in 0..m {
                    plane[j * m + k] = buf[k * m + j];
                }
            }
        }
        // first axis: gather (i, k) planes at fixed j
        for j in 0..m {
            for i in 0..m {
                let row = &data[(i * m + j) * m..(i * m + j + 1) * m];
                for k in 0..m {
                    buf[k * m + i] = row[k];
                }
            }
            fft.process(&mut buf);
            for i in 0..m {
                let row = &mut data[(i * m + j) * m..(i * m + j + 1) * m];
                for k in 0..m {
                    row[k] = buf[k * m + i];
                }
            }
        }
    }
}

/// Signed frequency index of FFT bin `i` on an m-point grid.
pub fn freq(i: usize, m: usize) -> f64 {
    if i < m.div_ceil(2) {
        i as f64
    } else {
        i as f64 - m as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// 1/(4π|x|): inverse of −∇².
    Newton,
    /// e^{−μ|x|}/(4π|x|): inverse of −∇² + μ².
    Yukawa { mu: f64 },
}

impl Kernel {
    /// Fourier transform of the kernel truncated to |x| < r.
    pub fn truncated_symbol(&self, k: f64, r: f64) -> f64 {
        match *self {
            Kernel::Newton => {
                if k * r < 1e-4 {
                    let x = k * r;
                    r * r * (0.5 - x * x / 24.0)
                } else {
                    2.0 * (0.5 * k * r).sin().powi(2) / (k * k)
                }
            }
            Kernel::Yukawa { mu } => {
                let decay = (-mu * r).exp();
                let sinc = if k * r < 1e-8 { r } else { (k * r).sin() / k };
                (1.0 - decay * ((k * r).cos() + mu * sinc)) / (k * k + mu * mu)
            }
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Kernel::Newton => 1.0 / (4.0 * PI * r),
            Kernel::Yukawa { mu } => (-mu * r).exp() / (4.0 * PI * r),
        }
    }
}

/// Free-space convolution u = G ∗ f on a grid.
pub struct Convolver {
    pub grid: Grid3,
    pub kernel: Kernel,
    fft: Fft3,
    /// Transform of the discrete kernel on the 2n padded grid, scaled so
    /// that u = IFFT(kernel_hat · FFT(f)) / (2n)³.
    kernel_hat: Vec<C64>,
}

impl Convolver {
    pub fn new(grid: Grid3, kernel: Kernel) -> Self {
        let n = grid.n;
        let m = 2 * n;
        let h = grid.h();
        let side = 2.0 * grid.half_width;
        let fft = Fft3::new(m);
        let direct = matches!(kernel, Kernel::Yukawa { mu } if mu * side > 40.0);
        let kernel_hat = if direct {
            // the kernel decays below e^{-40} within one box side, so the
            // periodic symbol on the padded grid is already free-space
            let dk = 2.0 * PI / (m as f64 * h);
            let mut v = vec![C64::new(0.0, 0.0); m * m * m];
            for (idx, x) in v.iter_mut().enumerate() {
                let (a, b, c) = (idx / (m * m), (idx / m) % m, idx % m);
                let k2 = (freq(a, m).powi(2) + freq(b, m).powi(2) + freq(c, m).powi(2)) * dk * dk;
                let Kernel::Yukawa { mu } = kernel else { unreachable!() };
                *x = C64::new(1.0 / (k2 + mu * mu), 0.0);
            }
            v
        } else {
            truncated_kernel_hat(n, h, kernel, &fft)
        };
        Convolver { grid, kernel, fft, kernel_hat }
    }

    pub fn apply_complex(&self, f: &[C64]) -> Vec<C64> {
        let n = self.grid.n;
        let m = 2 * n;
        assert_eq!(f.len(), n * n * n);
        let mut buf = vec![C64::new(0.0, 0.0); m * m * m];
        for i in 0..n {
            for j in 0..n {
                let src = &f[(i * n + j) * n..(i * n + j + 1) * n];
                buf[(i * m + j) * m..(i * m + j) * m + n].copy_from_slice(src);
            }
        }
        self.fft.process(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.fft.process(&mut buf, true);
        let scale = 1.0 / (m * m * m) as f64;
        let mut out = vec![C64::new(0.0, 0.0); n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[(i * n + j) * n + k] = buf[(i * m + j) * m + k] * scale;
                }
            }
        }
        out
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let c: Vec<C64> = f.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.apply_complex(&c).into_iter().map(|z| z.re).collect()
    }
}

fn truncated_kernel_hat(n: usize, h: f64, kernel: Kernel, fft2: &Fft3) -> Vec<C64> {
    let big = 4 * n;
    let side = n as f64 * h;
    let r_t = 1.01 * 3f64.sqrt() * side;
    let p = big as f64 * h;
    let dk = 2.0 * PI / p;
    let fft4 = Fft3::new(big);
    let mut g = vec![C64::new(0.0, 0.0); big * big * big];
    for (idx, x) in g.iter_mut().enumerate() {
        let (a, b, c) = (idx / (big * big), (idx / big) % big, idx % big);
        let k = (freq(a, big).powi(2) + freq(b, big).powi(2) + freq(c, big).powi(2)).sqrt() * dk;
        *x = C64::new(kernel.truncated_symbol(k, r_t), 0.0);
    }
    fft4.process(&mut g, true);
    let m = 2 * n;
    let wrap = |i: usize, from: usize, to: usize| -> usize {
        let s = freq(i, to) as i64;
        ((s + from as i64) % from as i64) as usize
    };
    let scale = h * h * h / (p * p * p);
    let mut kk = vec![C64::new(0.0, 0.0); m * m * m];
    for a in 0..m {
        let ia = wrap(a, big, m);
        for b in 0..m {
            let ib = wrap(b, big, m);
            for c in 0..m {
                let ic = wrap(c, big, m);
                kk[(a * m + b) * m + c] = C64::new(g[(ia * big + ib) * big + ic].re * scale, 0.0);
            }
        }
    }
    drop(g);
    fft2.process(&mut kk, false);
    kk
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::{erf, erfc};

    fn gaussian(s: f64) -> impl Fn(&Vec3) -> f64 {
        move |x: &Vec3| (-x.norm_squared() / (2.0 * s * s)).exp() / ((2.0 * PI).powf(1.5) * s.powi(3))
    }

    #[test]
    fn fft_round_trip() {
        let f = Fft3::new(6);
        let orig: Vec<C64> = (0..216).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut d = orig.clone();
        f.process(&mut d, false);
        f.process(&mut d, true);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a / 216.0 - b).norm() < 1e-13);
        }
    }

    #[test]
    fn newton_potential_of_gaussian() {
        let g = Grid3::new(32, 1.6);
        let s = 0.2;
        let conv = Convolver::new(g, Kernel::Newton);
        let u = conv.apply(&g.sample(gaussian(s)));
        let mut worst = 0.0f64;
        for (idx, x) in g.nodes().iter().enumerate() {
            let r = x.norm();
            let exact = erf(r / (2f64.sqrt() * s)) / (4.0 * PI * r);
            worst = worst.max((u[idx] - exact).abs());
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn yukawa_potential_of_gaussian() {
        let g = Grid3::new(32, 1.6);
        let s = 0.2;
        for mu in [0.5, 3.0, 20.0] {
            let conv = Convolver::new(g, Kernel::Yukawa { mu });
            let u = conv.apply(&g.sample(gaussian(s)));
            let mut worst = 0.0f64;
            let mut top = 0.0f64;
            for (idx, x) in g.nodes().iter().enumerate() {
                let r = x.norm();
                let a = (mu * s * s - r) / (2f64.sqrt() * s);
                let b = (mu * s * s + r) / (2f64.sqrt() * s);
                let e = (0.5 * mu * mu * s * s).exp();
                let exact = e * ((-mu * r).exp() * erfc(a) - (mu * r).exp() * erfc(b)) / (8.0 * PI * r);
                worst = worst.max((u[idx] - exact).abs());
                top = top.max(exact.abs());
            }
            assert!(worst < 1e-9 * top.max(1.0), "mu {mu}: {worst}");
        }
    }
}
