//! Mish activation, `x * tanh(softplus(x))`.
//!
//! `tanh(ln(1 + e^x))` has the closed form `n(n + 2) / (n(n + 2) + 2)` with
//! `n = e^x`. That form is exact for negative inputs; for large positive
//! inputs the complement `2 / (n(n + 2) + 2)` is rewritten in `e^-x` so
//! nothing overflows.

const SATURATION: f64 = 20.0;

/// `tanh(softplus(x))`, evaluated without overflow or cancellation.
#[inline]
fn tanh_softplus(x: f64) -> f64 {
    if x > SATURATION {
        let u = (-x).exp();
        1.0 - 2.0 * u * u / (1.0 + 2.0 * u + 2.0 * u * u)
    } else {
        let n = x.exp();
        let p = n * (n + 2.0);
        p / (p + 2.0)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn mish(x: f64) -> f64 {
    x * tanh_softplus(x)
}

/// d/dx mish(x) = tanh(sp(x)) + x * (1 - tanh²(sp(x))) * sigmoid(x).
#[inline]
pub fn mish_grad(x: f64) -> f64 {
    let t = tanh_softplus(x);
    t + x * (1.0 - t * t) * sigmoid(x)
}
