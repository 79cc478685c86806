//! Principal branch of the Lambert W function on `[0, ∞)`.

use super::ControlError;

const MAX_ITER: usize = 64;

/// `w ≥ 0` with `w·e^w = x`, by Halley iteration from a logarithmic guess.
pub fn lambert_w(x: f64) -> Result<f64, ControlError> {
    if x.is_nan() || x < 0.0 {
        return Err(ControlError::LambertDomain(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut w = if x <= std::f64::consts::E {
        x.ln_1p()
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(w)
}

/// `W(e^y)`, i.e. the root of `w + ln w = y`; stays finite where `e^y`
/// would overflow.
pub fn lambert_w_of_exp(y: f64) -> Result<f64, ControlError> {
    if y.is_nan() {
        return Err(ControlError::LambertDomain(y));
    }
    if y < 700.0 {
        return lambert_w(y.exp());
    }
    let mut w = y - y.ln();
    for _ in 0..MAX_ITER {
        let f = w + w.ln() - y;
        let step = f / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    Ok(w)
}
