//! Scalar kernels shared by the tape primitives.
//!
//! All of these stay finite over the whole finite `f64` range where the
//! mathematical function is finite.

/// ln 2.
pub const LN_2: f64 = std::f64::consts::LN_2;

/// Logistic sigmoid, evaluated on the branch where `exp` cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` as `max(x, 0) + ln1p(e^{-|x|})`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`: `ln(e^y - 1)`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 20.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// `ln(softplus(x))` without underflow for very negative `x`.
pub fn log_softplus(x: f64) -> f64 {
    if x < -30.0 {
        // ln(ln1p(e^x)) = x + ln(1 - e^x/2 + ...) and the dropped terms are
        // below 1e-26 here.
        x - 0.5 * x.exp()
    } else if x > 30.0 {
        x.ln() + ((-x).exp().ln_1p() / x).ln_1p()
    } else {
        softplus(x).ln()
    }
}

/// Derivative of [`log_softplus`]: `sigmoid(x) / softplus(x)`.
pub fn log_softplus_grad(x: f64) -> f64 {
    log_softplus_grad_from(x, log_softplus(x))
}

/// [`log_softplus_grad`] reusing `y = log_softplus(x)`: with `s = e^y`,
/// `sigmoid(x) = 1 - e^{-s}`.
pub fn log_softplus_grad_from(x: f64, y: f64) -> f64 {
    if x < -30.0 {
        1.0 - 0.5 * x.exp()
    } else {
        let s = y.exp();
        -(-s).exp_m1() / s
    }
}

/// `ln(e^a + e^b)`, exactly symmetric in its arguments.
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a == f64::INFINITY || b == f64::INFINITY {
        return f64::INFINITY;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// `ln(1 - e^x)` for `x <= 0`, switching branches at `-ln 2`.
pub fn log1mexp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Derivative of [`log1mexp`]: `-1 / expm1(-x)`.
pub fn log1mexp_grad(x: f64) -> f64 {
    -1.0 / (-x).exp_m1()
}

/// Numerically stable logit for `p` in (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
