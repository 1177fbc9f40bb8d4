//! Standard normal distribution.
//!
//! The CDF goes through `erfc`, taken from `libm` (a port of the FreeBSD/Sun
//! msun rational minimax approximations, accurate to about one ulp). Using
//! `erfc` of the negated argument keeps full relative accuracy in the lower
//! tail, which the implied-volatility solver depends on for far OTM quotes.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}
