//! Finite-difference derivatives of pointwise fields.

use crate::fields3d::Vec3;

// central first-derivative weights for offsets 1..=4
const W2: [f64; 1] = [0.5];
const W4: [f64; 2] = [2.0 / 3.0, -1.0 / 12.0];

fn weights(order: usize) -> &'static [f64] {
    match order {
        2 => &W2,
        _ => &W4,
    }
}

/// Partial derivative along axis `i` of a vector-valued field.
pub fn partial<const N: usize, F>(f: &F, x: &Vec3, i: usize, h: f64, order: usize) -> [f64; N]
where
    F: Fn(&Vec3) -> [f64; N],
{
    let mut out = [0.0; N];
    for (m, w) in weights(order).iter().enumerate() {
        let mut e = Vec3::zeros();
        e[i] = (m + 1) as f64 * h;
        let a = f(&(x + e));
        let b = f(&(x - e));
        for k in 0..N {
            out[k] += w * (a[k] - b[k]) / h;
        }
    }
    out
}

pub fn gradient<F: Fn(&Vec3) -> f64>(f: F, x: &Vec3, h: f64, order: usize) -> Vec3 {
    let g = |y: &Vec3| [f(y)];
    Vec3::new(partial(&g, x, 0, h, order)[0], partial(&g, x, 1, h, order)[0], partial(&g, x, 2, h, order)[0])
}

/// Curl of a 1-form given by its dx components; the result is the vector of
/// the 2-form in the basis (dx₂∧dx₃, dx₃∧dx₁, dx₁∧dx₂).
pub fn curl<F: Fn(&Vec3) -> Vec3>(f: F, x: &Vec3, h: f64, order: usize) -> Vec3 {
    let g = |y: &Vec3| {
        let v = f(y);
        [v.x, v.y, v.z]
    };
    let d: Vec<[f64; 3]> = (0..3).map(|i| partial(&g, x, i, h, order)).collect();
    Vec3::new(d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0])
}

/// Divergence of a vector field.
pub fn divergence<F: Fn(&Vec3) -> Vec3>(f: F, x: &Vec3, h: f64, order: usize) -> f64 {
    let g = |y: &Vec3| {
        let v = f(y);
        [v.x, v.y, v.z]
    };
    (0..3).map(|i| partial(&g, x, i, h, order)[i]).sum()
}
