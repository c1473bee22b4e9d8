//! The single cutoff profile used everywhere: a C³ polynomial smoothstep.

/// s⁴(35 − 84s + 70s² − 20s³), rising from 0 at s ≤ 0 to 1 at s ≥ 1.
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s.powi(4) * (35.0 + s * (-84.0 + s * (70.0 - 20.0 * s)))
    }
}

pub fn smoothstep_d1(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        140.0 * (s * (1.0 - s)).powi(3)
    }
}

pub fn smoothstep_d2(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        420.0 * (s * (1.0 - s)).powi(2) * (1.0 - 2.0 * s)
    }
}

/// The unit cutoff χ(t): 1 for t ≤ 1/2, 0 for t ≥ 1.
pub fn chi(t: f64) -> f64 {
    1.0 - smoothstep(2.0 * t - 1.0)
}

pub fn chi_d1(t: f64) -> f64 {
    -2.0 * smoothstep_d1(2.0 * t - 1.0)
}

pub fn chi_d2(t: f64) -> f64 {
    -4.0 * smoothstep_d2(2.0 * t - 1.0)
}

/// χ(t/δ): 1 for t ≤ δ/2, 0 for t ≥ δ.
pub fn chi_scaled(t: f64, delta: f64) -> f64 {
    chi(t / delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        assert_eq!(chi(0.5), 1.0);
        assert_eq!(chi(1.0), 0.0);
        assert!((chi(0.75) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn derivatives_match_differences(s in 0.01f64..0.99) {
            let h = 1e-5;
            let d1 = (smoothstep(s + h) - smoothstep(s - h)) / (2.0 * h);
            prop_assert!((d1 - smoothstep_d1(s)).abs() < 1e-7);
            let d2 = (smoothstep_d1(s + h) - smoothstep_d1(s - h)) / (2.0 * h);
            prop_assert!((d2 - smoothstep_d2(s)).abs() < 1e-6);
        }

        #[test]
        fn monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(smoothstep(lo) <= smoothstep(hi));
        }
    }
}
