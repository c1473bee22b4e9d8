//! The Atiyah–Hitchin radial profile.
//!
//! The metric is f²dτ² + a²σ₁² + b²σ₂² + c²σ₃² with f = −b/τ, and the
//! coefficients obey (2bc/f) a' = (b − c)² − a² and cyclic permutations.
//! The profile is integrated inward from the negative-mass Taub–NUT
//! asymptote a = b = τ√(1 − 2/τ), c = −2/√(1 − 2/τ).
//!
//! That asymptote is an exact solution and the locus a = b is invariant,
//! so the seed carries the decaying mode a − b = K τ² e^{−τ} √(1 − 2/τ).
//! K is fixed by shooting: it is the unique value for which a reaches 0 at
//! a point where b = −c, the bolt.

use crate::error::{Error, Result};
use crate::ode::{self, Termination, Tolerances};
use crate::triples::{gh_triple, FrameMetric, Triple};
use crate::fields3d::Vec3;
use nalgebra::{Matrix4, Vector4};

/// Right-hand side of the system with a general lapse f.
pub fn ah_rhs_lapse(f: f64, a: f64, b: f64, c: f64) -> [f64; 3] {
    [
        f * ((b - c).powi(2) - a * a) / (2.0 * b * c),
        f * ((c - a).powi(2) - b * b) / (2.0 * c * a),
        f * ((a - b).powi(2) - c * c) / (2.0 * a * b),
    ]
}

/// (a', b', c') with f = −b/τ substituted.
pub fn ah_rhs(tau: f64, a: f64, b: f64, c: f64) -> Result<[f64; 3]> {
    if a.abs() < 1e-12 || b.abs() < 1e-12 || c.abs() < 1e-12 {
        return Err(Error::SingularCoefficient);
    }
    Ok(rhs_unchecked(tau, a, b, c))
}

fn rhs_unchecked(tau: f64, a: f64, b: f64, c: f64) -> [f64; 3] {
    [
        -((b - c).powi(2) - a * a) / (2.0 * tau * c),
        -b * ((c - a).powi(2) - b * b) / (2.0 * tau * c * a),
        -((a - b).powi(2) - c * c) / (2.0 * tau * a),
    ]
}

/// State (m, d, c) with m = (a + b)/2 and d = a − b, so that the tiny
/// difference a − b keeps full relative precision.
fn rhs_mdc(tau: f64, y: &[f64; 3]) -> [f64; 3] {
    let (m, d, c) = (y[0], y[1], y[2]);
    let a = m + 0.5 * d;
    let b = m - 0.5 * d;
    let [ap, bp, cp] = rhs_unchecked(tau, a, b, c);
    let dp = -d * (c * c - (a + b).powi(2)) / (2.0 * tau * c * a);
    [0.5 * (ap + bp), dp, cp]
}

/// Negative-mass Taub–NUT asymptote with potential H' = 1 + με − 2/τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TNAsymptote {
    pub mu_eps: f64,
}

impl TNAsymptote {
    fn s(&self, tau: f64) -> f64 {
        (1.0 + self.mu_eps - 2.0 / tau).sqrt()
    }

    /// a_∞ = b_∞ = τ√H'; NaN for τ ≤ 2/(1+με).
    pub fn a_inf(&self, tau: f64) -> f64 {
        tau * self.s(tau)
    }

    pub fn c_inf(&self, tau: f64) -> f64 {
        -2.0 / self.s(tau)
    }
}

/// Sampled profile, τ increasing.
#[derive(Debug, Clone)]
pub struct AHProfile {
    pub tau: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub f: Vec<f64>,
    /// a − b, integrated directly.
    pub d: Vec<f64>,
    /// Shooting constant of the decaying mode.
    pub k: f64,
    /// Location where a vanishes on the shooting trajectory.
    pub bolt_tau: f64,
    /// b at the bolt (equal to −c there).
    pub bolt_b: f64,
    /// Largest scaled local error estimate over accepted steps (≤ 1).
    pub max_step_error: f64,
    traj: ode::Trajectory<3>,
}

fn seed(tau: f64, k: f64) -> [f64; 3] {
    let s = (1.0 - 2.0 / tau).sqrt();
    [tau * s, k * tau * tau * (-tau).exp() * s, -2.0 / s]
}

fn shoot(tau_seed: f64, k: f64, tau_end: f64, event: bool) -> ode::Trajectory<3> {
    let tol = Tolerances::default();
    let ev = |_t: f64, y: &[f64; 3]| y[0] + 0.5 * y[1];
    if event {
        ode::integrate(rhs_mdc, tau_seed, seed(tau_seed, k), tau_end, tol, Some(ev))
    } else {
        ode::integrate(rhs_mdc, tau_seed, seed(tau_seed, k), tau_end, tol, None::<fn(f64, &[f64; 3]) -> f64>)
    }
}

/// Sign of b + c where the shot ends (at a = 0 or at τ = 2.05).
fn shot_sign(tau_seed: f64, k: f64) -> (f64, Option<(f64, f64)>) {
    let tr = shoot(tau_seed, k, 2.05, true);
    let y = tr.y.last().unwrap();
    let b = y[0] - 0.5 * y[1];
    let ev = match tr.termination {
        Termination::Event(t) => Some((t, b)),
        _ => None,
    };
    ((b + y[2]).signum(), ev)
}

/// Shoot for the bolt, then integrate the profile from τ_seed down to τ_min.
pub fn integrate_profile(tau_seed: f64, tau_min: f64) -> Result<AHProfile> {
    if tau_seed < 40.0 {
        return Err(Error::OutOfRange(tau_seed));
    }
    if tau_min <= std::f64::consts::PI || tau_min >= tau_seed {
        return Err(Error::OutOfRange(tau_min));
    }
    // bisection in log10(−K)
    let (mut lo, mut hi) = (0.5f64, 1.5f64);
    let s_lo = shot_sign(tau_seed, -(10f64.powf(lo))).0;
    let s_hi = shot_sign(tau_seed, -(10f64.powf(hi))).0;
    if s_lo == s_hi {
        return Err(Error::IntegrationBlowup { tau: tau_seed });
    }
    let mut bolt = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (s, ev) = shot_sign(tau_seed, -(10f64.powf(mid)));
        if ev.is_some() {
            bolt = ev;
        }
        if s == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = -(10f64.powf(0.5 * (lo + hi)));
    let (bolt_tau, bolt_b) = bolt.ok_or(Error::IntegrationBlowup { tau: tau_min })?;
    let tr = shoot(tau_seed, k, tau_min, false);
    if let Termination::Blowup(t) = tr.termination {
        return Err(Error::IntegrationBlowup { tau: t });
    }
    let n = tr.t.len();
    let mut p = AHProfile {
        tau: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        f: Vec::with_capacity(n),
        d: Vec::with_capacity(n),
        k,
        bolt_tau,
        bolt_b,
        max_step_error: tr.err.iter().cloned().fold(0.0, f64::max),
        traj: tr.clone(),
    };
    for i in (0..n).rev() {
        let t = tr.t[i];
        let [m, d, c] = tr.y[i];
        let (a, b) = (m + 0.5 * d, m - 0.5 * d);
        p.tau.push(t);
        p.a.push(a);
        p.b.push(b);
        p.c.push(c);
        p.f.push(-b / t);
        p.d.push(d);
    }
    Ok(p)
}

/// Profile values at one τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub tau: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub f: f64,
    pub a_minus_b: f64,
}

impl AHProfile {
    pub fn tau_range(&self) -> (f64, f64) {
        (self.tau[0], *self.tau.last().unwrap())
    }

    /// Dense (cubic Hermite) evaluation.
    pub fn at(&self, tau: f64) -> Result<ProfilePoint> {
        let [m, d, c] = self.traj.eval(tau).ok_or(Error::OutOfRange(tau))?;
        let (a, b) = (m + 0.5 * d, m - 0.5 * d);
        Ok(ProfilePoint { tau, a, b, c, f: -b / tau, a_minus_b: d })
    }

    /// Rows (tau, a, b, c, f, a_inf, c_inf, log|a − b|) for tabular export.
    pub fn rows(&self) -> Vec<[f64; 8]> {
        let tn = TNAsymptote { mu_eps: 0.0 };
        (0..self.tau.len())
            .map(|i| {
                let t = self.tau[i];
                [t, self.a[i], self.b[i], self.c[i], self.f[i], tn.a_inf(t), tn.c_inf(t), self.d[i].abs().ln()]
            })
            .collect()
    }
}

/// diag(f², a², b², c²) in the coframe (dτ, σ₁, σ₂, σ₃).
///
/// The off-diagonal zeros are exact; [`tn_metric_bianchi`] gives the
/// asymptotic comparison in the same frame.
pub fn ah_metric_at(p: &AHProfile, tau: f64) -> Result<FrameMetric> {
    let v = p.at(tau)?;
    Ok(FrameMetric::new(Matrix4::from_diagonal(&Vector4::new(v.f * v.f, v.a * v.a, v.b * v.b, v.c * v.c))))
}

/// H'_ε(x') = 1 + με − 2/|x'|, checked positive.
fn tn_potential(mu: f64, eps: f64, xp: &Vec3) -> Result<f64> {
    let h = 1.0 + mu * eps - 2.0 / xp.norm();
    if !(h > 0.0) {
        return Err(Error::NonpositivePotential { value: h });
    }
    Ok(h)
}

/// GH metric of H'_ε in the coframe (α', dx'): diag(1/H', H', H', H').
pub fn tn_family_metric(mu: f64, eps: f64, xp: &Vec3) -> Result<FrameMetric> {
    let h = tn_potential(mu, eps, xp)?;
    Ok(FrameMetric::new(Matrix4::from_diagonal(&Vector4::new(1.0 / h, h, h, h))))
}

/// The GH triple of H'_ε in the same coframe.
pub fn tn_family_triple(mu: f64, eps: f64, xp: &Vec3) -> Result<Triple> {
    let h = tn_potential(mu, eps, xp)?;
    gh_triple(h, &Vector4::new(1.0, 0.0, 0.0, 0.0), 1.0)
}

/// [`tn_family_metric`] at |x'| = τ rewritten in (dτ, σ₁, σ₂, σ₃) under the
/// identifications |dx'|² = dτ² + τ²(σ₁² + σ₂²) and α' = 2σ₃.
pub fn tn_metric_bianchi(mu: f64, eps: f64, tau: f64) -> Result<FrameMetric> {
    let dir = Vec3::new(0.3, -0.5, 0.8).normalize();
    let g = tn_family_metric(mu, eps, &(tau * dir))?.components;
    // orthonormal Euclidean frame (radial, two tangential) at x'
    let t1 = dir.cross(&Vec3::z()).normalize();
    let t2 = dir.cross(&t1);
    let frame = [dir, t1, t2];
    let block = g.fixed_view::<3, 3>(1, 1);
    let mut out = Matrix4::zeros();
    let scale = [1.0, tau, tau];
    for i in 0..3 {
        for j in 0..3 {
            out[(i, j)] = (frame[i].transpose() * block * frame[j])[(0, 0)] * scale[i] * scale[j];
        }
    }
    out[(3, 3)] = 4.0 * g[(0, 0)];
    Ok(FrameMetric::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::ols_slope;
    use crate::triples::normalized_defect;

    fn profile() -> AHProfile {
        integrate_profile(60.0, 3.2).unwrap()
    }

    #[test]
    fn asymptote_solves_the_system() {
        let tn = TNAsymptote { mu_eps: 0.0 };
        for tau in [30.0, 45.0, 8.0] {
            let (a, c) = (tn.a_inf(tau), tn.c_inf(tau));
            let r = ah_rhs(tau, a, a, c).unwrap();
            let s = (1.0 - 2.0 / tau).sqrt();
            let da = s + 1.0 / (tau * s);
            let dc = 2.0 / (tau * tau * s.powi(3));
            assert!((r[0] - da).abs() < 1e-10 && (r[1] - da).abs() < 1e-10 && (r[2] - dc).abs() < 1e-10);
        }
    }

    #[test]
    fn cyclic_structure() {
        let (a, b, c, f) = (1.3, 0.7, -2.1, 0.4);
        let r = ah_rhs_lapse(f, a, b, c);
        let p = ah_rhs_lapse(f, b, c, a);
        assert_eq!([r[1], r[2], r[0]], p);
    }

    #[test]
    fn diagonal_locus_is_invariant() {
        // a = b forces a' = b': the difference carries a factor (a − b)
        let tau = 12.0;
        for (a, c) in [(3.0, -1.5), (10.0, -2.2)] {
            let r = ah_rhs(tau, a, a, c).unwrap();
            assert!((r[0] - r[1]).abs() < 1e-14);
            let e = 1e-6;
            let r2 = ah_rhs(tau, a + e, a, c).unwrap();
            let slope = (r2[0] - r2[1]) / e;
            let d = rhs_mdc(tau, &[a + 0.5 * e, e, c]); // same point in (m, d, c)
            assert!((d[1] / e - slope).abs() < 1e-4 * slope.abs().max(1.0));
        }
    }

    #[test]
    fn singular_coefficient() {
        assert_eq!(ah_rhs(5.0, 0.0, 1.0, -1.0), Err(Error::SingularCoefficient));
    }

    #[test]
    fn profile_asymptotics_and_bolt() {
        let p = profile();
        let v = p.at(30.0).unwrap();
        let s = (1.0 - 2.0 / 30.0f64).sqrt();
        assert!((v.a / (30.0 * s) - 1.0).abs() < 1e-6);
        assert!((v.c * s + 2.0).abs() < 1e-6);
        assert!((p.bolt_tau - std::f64::consts::PI).abs() < 0.05 * std::f64::consts::PI);
        assert!((p.bolt_b - std::f64::consts::PI).abs() < 1e-3);
        let ts: Vec<f64> = (0..=60).map(|i| 15.0 + 0.25 * i as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| p.at(*t).unwrap().a_minus_b.abs().ln()).collect();
        let slope = ols_slope(&ts, &ys);
        assert!((slope + 1.0).abs() < 0.15, "{slope}");
        assert!(p.max_step_error <= 1.0);
    }

    #[test]
    fn profile_invariants() {
        let p = profile();
        for i in 0..p.tau.len() {
            if p.tau[i] >= 6.0 {
                assert!(p.a[i] > 0.0 && p.b[i] > 0.0 && p.c[i] < 0.0);
            }
        }
        let mut prev = f64::INFINITY;
        let mut prev_vol = 0.0;
        for i in 0..=60 {
            let t = 10.0 + 0.5 * i as f64;
            let v = p.at(t).unwrap();
            assert!(v.a_minus_b.abs() < prev);
            prev = v.a_minus_b.abs();
            let vol = (v.f * v.a * v.b * v.c).abs();
            assert!(vol > prev_vol);
            prev_vol = vol;
        }
    }

    #[test]
    fn metric_matches_taub_nut_asymptote() {
        let p = profile();
        let g = ah_metric_at(&p, 25.0).unwrap();
        let tn = tn_metric_bianchi(0.0, 0.0, 25.0).unwrap();
        // componentwise, relative to each entry
        for i in 0..4 {
            let rel = (g.components[(i, i)] - tn.components[(i, i)]).abs() / tn.components[(i, i)];
            assert!(rel < 1e-6, "{i}: {rel}");
        }
        assert!(g.min_eigenvalue > 0.0);
        assert!(matches!(ah_metric_at(&p, 100.0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn tn_family() {
        let far = tn_family_metric(0.0, 0.0, &Vec3::new(1e9, 0.0, 0.0)).unwrap();
        assert!((far.components - Matrix4::identity()).norm() < 1e-8);
        assert!(tn_family_metric(0.5, 0.1, &Vec3::new(1.9, 0.0, 0.0)).is_err());
        let t = tn_family_triple(0.5, 0.1, &Vec3::new(3.0, 1.0, 0.0)).unwrap();
        assert!(normalized_defect(&t) < 1e-12);
    }
}
