//! Principal branch of the Lambert W function on the real line.

use crate::error::{domain, Result};
use crate::scalar::Scalar;

const MAX_HALLEY_ITERS: usize = 24;

/// `W₀(x)`: the unique `w ≥ -1` with `w·eʷ = x`, for `x ≥ -1/e`.
///
/// Arguments a few ulps below the branch point (rounding noise from
/// computing `-1/e`) return `-1`; anything further below is a domain error.
pub fn lambert_w0<T: Scalar>(x: T) -> Result<T> {
    if x.is_nan() {
        return Err(domain("lambert_w0 of NaN"));
    }
    let inv_e = T::one() / T::E();
    let branch = -inv_e;
    if x <= branch {
        if x >= branch - T::lit(8.0) * T::epsilon() * inv_e {
            return Ok(-T::one());
        }
        return Err(domain(format!("lambert_w0 argument {x} is below -1/e")));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    if x.is_infinite() {
        return Ok(x);
    }
    if x > T::lit(1e20) {
        return Ok(large_argument(x));
    }

    let mut w = initial_guess(x);
    for _ in 0..MAX_HALLEY_ITERS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + T::one();
        if wp1 <= T::zero() {
            break;
        }
        let denom = ew * wp1 - (w + T::lit(2.0)) * f / (T::lit(2.0) * wp1);
        if denom == T::zero() || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = (w - step).max(-T::one());
        let done = (next - w).abs() <= T::lit(4.0) * T::epsilon() * (T::one() + next.abs());
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

fn initial_guess<T: Scalar>(x: T) -> T {
    let one = T::one();
    let two = T::lit(2.0);
    if x < T::lit(-0.25) {
        // branch-point series in p = sqrt(2(ex + 1))
        let p = (two * (T::E() * x + one)).max(T::zero()).sqrt();
        -one + p - p * p / T::lit(3.0) + T::lit(11.0 / 72.0) * p * p * p
    } else if x < T::lit(3.0) {
        // Winitzki's approximation
        let l = x.ln_1p();
        l * (one - l.ln_1p() / (two + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// Newton on `w + ln w = ln x`, which avoids overflowing `eʷ`.
fn large_argument<T: Scalar>(x: T) -> T {
    let lx = x.ln();
    let mut w = lx - lx.ln();
    for _ in 0..MAX_HALLEY_ITERS {
        let step = (w + w.ln() - lx) / (T::one() + w.recip());
        w = w - step;
        if step.abs() <= T::lit(4.0) * T::epsilon() * w {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn fixed_points() {
        assert_eq!(lambert_w0(0.0f64).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
        // omega constant
        assert!((lambert_w0(1.0f64).unwrap() - 0.567_143_290_409_783_8).abs() < 1e-15);
    }

    #[test]
    fn below_branch_point_is_a_domain_error() {
        assert!(lambert_w0(-0.4f64).is_err());
        assert!(lambert_w0(f64::NAN).is_err());
    }

    #[test]
    fn absolute_accuracy_on_moderate_arguments() {
        let mut x = -1.0 / E + 1e-12;
        while x < 1.0 {
            let w = lambert_w0(x).unwrap();
            assert!((w * w.exp() - x).abs() <= 1e-12, "x = {x}");
            x += 0.013;
        }
    }

    #[test]
    fn huge_arguments_satisfy_log_identity() {
        for x in [1e25f64, 1e100, 1e300, f64::MAX] {
            let w = lambert_w0(x).unwrap();
            assert!((w + w.ln() - x.ln()).abs() <= 1e-12 * x.ln(), "x = {x}");
        }
    }

    #[test]
    fn single_precision() {
        for x in [-0.3f32, 0.1, 1.0, 10.0, 1e6] {
            let w = lambert_w0(x).unwrap();
            assert!((w * w.exp() - x).abs() <= 1e-5 * x.abs().max(1.0), "x = {x}");
        }
    }
}
