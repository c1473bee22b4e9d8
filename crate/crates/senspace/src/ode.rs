//! Dormand–Prince 5(4) integrator with cubic Hermite dense output and
//! terminal events.

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Tolerances and step limits.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-10, atol: 1e-12, h_min: 1e-14, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Reached,
    /// The event function changed sign; the trajectory ends at its root.
    Event(f64),
    /// Step size underflowed or the right-hand side became non-finite.
    Blowup(f64),
}

/// Accepted steps of an integration, with derivatives for dense output.
#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub dy: Vec<[f64; N]>,
    /// Local error estimate (scaled, <= 1 when accepted) per step.
    pub err: Vec<f64>,
    pub termination: Termination,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, k: &[[f64; N]; 7], row: &[f64], upto: usize) -> [f64; N] {
    let mut out = *y;
    for (j, kj) in k.iter().enumerate().take(upto) {
        if row[j] != 0.0 {
            for i in 0..N {
                out[i] += h * row[j] * kj[i];
            }
        }
    }
    out
}

fn finite<const N: usize>(v: &[f64; N]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Cubic Hermite interpolation on one step.
pub fn hermite<const N: usize>(
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    t1: f64,
    y1: &[f64; N],
    f1: &[f64; N],
    t: f64,
) -> [f64; N] {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
    out
}

impl<const N: usize> Trajectory<N> {
    /// Dense output at `t` inside the integrated range.
    pub fn eval(&self, t: f64) -> Option<[f64; N]> {
        let n = self.t.len();
        if n == 0 {
            return None;
        }
        let (lo, hi) = if self.t[0] <= self.t[n - 1] { (self.t[0], self.t[n - 1]) } else { (self.t[n - 1], self.t[0]) };
        if t < lo || t > hi {
            return None;
        }
        if n == 1 {
            return Some(self.y[0]);
        }
        let dir = (self.t[n - 1] - self.t[0]).signum();
        // first index with dir*(t_i) >= dir*t
        let idx = self.t.partition_point(|&ti| dir * ti < dir * t).clamp(1, n - 1);
        let (i0, i1) = (idx - 1, idx);
        Some(hermite(self.t[i0], &self.y[i0], &self.dy[i0], self.t[i1], &self.y[i1], &self.dy[i1], t))
    }
}

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `event(t, y)` is monitored after every accepted step; when it changes
/// sign the root is located on the dense output and integration stops.
pub fn integrate<const N: usize, F, G>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    tol: Tolerances,
    event: Option<G>,
) -> Trajectory<N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(f64, &[f64; N]) -> f64,
{
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut y = y0;
    let mut fy = f(t, &y);
    let mut traj = Trajectory { t: vec![t], y: vec![y], dy: vec![fy], err: vec![0.0], termination: Termination::Reached };
    if !finite(&fy) {
        traj.termination = Termination::Blowup(t);
        return traj;
    }
    let mut h = 1e-3 * (t1 - t0).abs().max(1e-3);
    let mut g_prev = event.as_ref().map(|g| g(t, &y));
    let mut steps = 0;
    while dir * (t1 - t) > 0.0 {
        steps += 1;
        if steps > tol.max_steps || h < tol.h_min {
            traj.termination = Termination::Blowup(t);
            return traj;
        }
        let step = h.min((t1 - t).abs()) * dir;
        let mut k = [[0.0; N]; 7];
        k[0] = fy;
        let mut ok = true;
        for s in 1..7 {
            let ys = axpy(&y, step, &k, &A[s], s);
            k[s] = f(t + C[s] * step, &ys);
            if !finite(&k[s]) {
                ok = false;
                break;
            }
        }
        if !ok {
            h *= 0.25;
            continue;
        }
        let y_new = axpy(&y, step, &k, &A[6], 6);
        let mut e2 = 0.0;
        for i in 0..N {
            let mut e = -B4[6] * k[6][i];
            for j in 0..6 {
                e += (A[6][j] - B4[j]) * k[j][i];
            }
            e *= step;
            let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            e2 += (e / sc) * (e / sc);
        }
        let err = (e2 / N as f64).sqrt();
        if err <= 1.0 {
            let t_new = t + step;
            let f_new = k[6];
            if let (Some(g), Some(gp)) = (event.as_ref(), g_prev) {
                let gn = g(t_new, &y_new);
                if gp.signum() != gn.signum() && gp != 0.0 {
                    // secant/bisection on the Hermite interpolant
                    let (mut lo, mut hi, mut glo) = (t, t_new, gp);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        let ym = hermite(t, &y, &fy, t_new, &y_new, &f_new, mid);
                        let gm = g(mid, &ym);
                        if gm.signum() == glo.signum() {
                            lo = mid;
                            glo = gm;
                        } else {
                            hi = mid;
                        }
                        if (hi - lo).abs() < 1e-15 * t_new.abs().max(1.0) {
                            break;
                        }
                    }
                    let te = 0.5 * (lo + hi);
                    let ye = hermite(t, &y, &fy, t_new, &y_new, &f_new, te);
                    traj.t.push(te);
                    traj.y.push(ye);
                    traj.dy.push(hermite_derivative(t, &y, &fy, t_new, &y_new, &f_new, te));
                    traj.err.push(err);
                    traj.termination = Termination::Event(te);
                    return traj;
                }
                g_prev = Some(gn);
            }
            t = t_new;
            y = y_new;
            fy = f_new;
            traj.t.push(t);
            traj.y.push(y);
            traj.dy.push(fy);
            traj.err.push(err);
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = step.abs() * fac;
    }
    traj
}

fn hermite_derivative<const N: usize>(
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    t1: f64,
    y1: &[f64; N],
    f1: &[f64; N],
    t: f64,
) -> [f64; N] {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let d00 = 6.0 * s * s - 6.0 * s;
    let d10 = 3.0 * s * s - 4.0 * s + 1.0;
    let d01 = -d00;
    let d11 = 3.0 * s * s - 2.0 * s;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = (d00 * y0[i] + d01 * y1[i]) / h + d10 * f0[i] + d11 * f1[i];
    }
    out
}
