//! Dilogarithm and logistic antiderivatives used by the closed-form
//! logistic-loss objective.

use std::f64::consts::PI;

/// Bernoulli numbers B_0..B_20 (B_1 = -1/2, odd ones above vanish).
const BERNOULLI: [f64; 21] = [
    1.0,
    -0.5,
    1.0 / 6.0,
    0.0,
    -1.0 / 30.0,
    0.0,
    1.0 / 42.0,
    0.0,
    -1.0 / 30.0,
    0.0,
    5.0 / 66.0,
    0.0,
    -691.0 / 2730.0,
    0.0,
    7.0 / 6.0,
    0.0,
    -3617.0 / 510.0,
    0.0,
    43867.0 / 798.0,
    0.0,
    -174611.0 / 330.0,
];

/// Li_2(z) for real z <= 0.
pub fn dilog_nonpositive(z: f64) -> f64 {
    debug_assert!(z <= 0.0);
    if z == 0.0 {
        return 0.0;
    }
    if z < -1.0 {
        let l = (-z).ln();
        return -PI * PI / 6.0 - 0.5 * l * l - dilog_nonpositive(1.0 / z);
    }
    // Series in u = -ln(1 - z); |u| <= ln 2 here.
    let u = -(-z).ln_1p();
    let mut power = u;
    let mut factorial = 1.0;
    let mut sum = 0.0;
    for (n, b) in BERNOULLI.iter().enumerate() {
        factorial *= (n + 1) as f64;
        sum += b * power / factorial;
        power *= u;
    }
    sum
}

/// ln(1 + e^u) without overflow.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Logistic sigmoid 1 / (1 + e^{-u}).
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Li_2(-e^u).
fn dilog_neg_exp(u: f64) -> f64 {
    if u > 0.0 {
        // Inversion keeps the argument inside [-1, 0).
        -PI * PI / 6.0 - 0.5 * u * u - dilog_nonpositive(-(-u).exp())
    } else {
        dilog_nonpositive(-u.exp())
    }
}

/// Antiderivative of softplus: -Li_2(-e^u).
pub fn softplus_integral(u: f64) -> f64 {
    -dilog_neg_exp(u)
}

/// Antiderivative of u * sigmoid(u).
pub fn u_sigmoid_integral(u: f64) -> f64 {
    u * softplus(u) + dilog_neg_exp(u)
}

/// Antiderivative of u^2 * sigmoid'(u).
pub fn u2_sigmoid_prime_integral(u: f64) -> f64 {
    u * u * sigmoid(u) - 2.0 * u_sigmoid_integral(u)
}
