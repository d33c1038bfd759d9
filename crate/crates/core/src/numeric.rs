//! Small numerical kernels shared by the analytic and statistical code.

use std::f64::consts::PI;

use num_complex::Complex64;

const SINC_SERIES_BELOW: f64 = 1e-4;
const RATIO_SERIES_BELOW: f64 = 1e-3;

/// `sin(x)/x`, with the removable singularity handled by its Taylor series.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < SINC_SERIES_BELOW {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `(1 - e^{-x}) / x` for `x >= 0`, equal to 1 at `x = 0`.
pub fn relax_fraction(x: f64) -> f64 {
    if x.abs() < RATIO_SERIES_BELOW {
        1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(1 - (1 - e^{-x})/x) / x`, the decay-before-detection fraction divided by
/// `x`. Tends to 1/2 as `x -> 0`.
pub fn early_decay_density(x: f64) -> f64 {
    if x.abs() < RATIO_SERIES_BELOW {
        0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0
    } else {
        (1.0 - relax_fraction(x)) / x
    }
}

/// `(e^w - 1) / w` for complex `w`.
pub fn exp_ratio1(w: Complex64) -> Complex64 {
    if w.norm() < RATIO_SERIES_BELOW {
        Complex64::new(1.0, 0.0) + w / 2.0 + w * w / 6.0 + w * w * w / 24.0
    } else {
        (w.exp() - 1.0) / w
    }
}

/// `(e^w - 1 - w) / w^2` for complex `w`.
pub fn exp_ratio2(w: Complex64) -> Complex64 {
    if w.norm() < RATIO_SERIES_BELOW {
        Complex64::new(0.5, 0.0) + w / 6.0 + w * w / 24.0 + w * w * w / 120.0
    } else {
        (w.exp() - 1.0 - w) / (w * w)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Removes 2π jumps from a sequence of wrapped phases so that neighbours
/// differ by at most π.
pub fn unwrap_phases(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &p in phases {
        if let Some(q) = prev {
            let step = p + offset - q;
            offset -= 2.0 * PI * (step / (2.0 * PI)).round();
        }
        let v = p + offset;
        out.push(v);
        prev = Some(v);
    }
    out
}
