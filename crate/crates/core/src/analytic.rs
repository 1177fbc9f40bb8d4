//! Black-Scholes pricing, implied-volatility inversion and geometric Asian closed forms.
//!
//! Prices are quoted in log variables: `x` is the log-forward (log-spot at
//! zero rates) and `k` the log-strike, so that
//! `BS = e^x N(d+) - e^k N(d-)` with `d± = (x - k) / (sigma sqrt(tau)) ± sigma sqrt(tau) / 2`.

use thiserror::Error;

use crate::model::MarketSetup;
use crate::normal::{norm_cdf, norm_pdf};
use crate::paths::TimeGrid;

pub const IV_LOWER: f64 = 1e-9;
pub const IV_UPPER: f64 = 10.0;
/// Price tolerance of the inversion, relative to `e^x`.
pub const IV_PRICE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IvError {
    #[error("price {price} is at or below the intrinsic bound {bound}")]
    BelowIntrinsic { price: f64, bound: f64 },
    #[error("price {price} is at or above the upper bound e^x = {bound}")]
    AboveUpper { price: f64, bound: f64 },
    #[error("price {price} needs a volatility above {IV_UPPER}")]
    OutsideBracket { price: f64 },
    #[error("time to maturity must be > 0, got {0}")]
    NonPositiveTau(f64),
    #[error("non-finite input: price={price}, x={x}, k={k}")]
    NonFinite { price: f64, x: f64, k: f64 },
    #[error("implied volatility did not converge (last sigma {sigma}, residual {residual:e})")]
    NoConvergence { sigma: f64, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsQuote {
    pub x: f64,
    pub k: f64,
    pub tau: f64,
    pub sigma: f64,
}

impl BsQuote {
    pub fn new(x: f64, k: f64, tau: f64, sigma: f64) -> Self {
        Self { x, k, tau, sigma }
    }

    fn total_vol(&self) -> f64 {
        self.sigma * self.tau.max(0.0).sqrt()
    }
}

fn intrinsic(x: f64, k: f64) -> f64 {
    (x.exp() - k.exp()).max(0.0)
}

/// Price of the out-of-the-money side: the call when `x <= k`, the put otherwise.
///
/// Both are increasing in volatility and carry no intrinsic value, so they
/// keep relative precision where the in-the-money call would not.
fn otm_price(x: f64, k: f64, total_vol: f64) -> f64 {
    if total_vol <= 0.0 {
        return 0.0;
    }
    let d_plus = (x - k) / total_vol + 0.5 * total_vol;
    let d_minus = d_plus - total_vol;
    let v = if x <= k {
        x.exp() * norm_cdf(d_plus) - k.exp() * norm_cdf(d_minus)
    } else {
        k.exp() * norm_cdf(-d_minus) - x.exp() * norm_cdf(-d_plus)
    };
    v.max(0.0)
}

/// Black-Scholes call price. Falls back to intrinsic value when `sigma sqrt(tau) = 0`.
pub fn bs_price(q: &BsQuote) -> f64 {
    let w = q.total_vol();
    if w <= 0.0 {
        return intrinsic(q.x, q.k);
    }
    intrinsic(q.x, q.k) + otm_price(q.x, q.k, w)
}

/// Sensitivity of the call price to `sigma`.
pub fn bs_vega(q: &BsQuote) -> f64 {
    let w = q.total_vol();
    if w <= 0.0 || q.tau <= 0.0 {
        return 0.0;
    }
    let d_plus = (q.x - q.k) / w + 0.5 * w;
    q.x.exp() * norm_pdf(d_plus) * q.tau.sqrt()
}

/// Inverts [`bs_price`] for `sigma` in `[IV_LOWER, IV_UPPER]`.
///
/// Newton iterations run on the logarithm of the out-of-the-money price,
/// which is increasing and concave in `sigma` for small volatilities; any step
/// that leaves the current bracket is replaced by bisection.
pub fn implied_vol(price: f64, x: f64, k: f64, tau: f64) -> Result<f64, IvError> {
    if !(price.is_finite() && x.is_finite() && k.is_finite()) {
        return Err(IvError::NonFinite { price, x, k });
    }
    if !(tau > 0.0) {
        return Err(IvError::NonPositiveTau(tau));
    }
    let lower_bound = intrinsic(x, k);
    let upper_bound = x.exp();
    if price <= lower_bound {
        return Err(IvError::BelowIntrinsic {
            price,
            bound: lower_bound,
        });
    }
    if price >= upper_bound {
        return Err(IvError::AboveUpper {
            price,
            bound: upper_bound,
        });
    }

    let sqrt_tau = tau.sqrt();
    let target = price - lower_bound;
    let log_target = target.ln();
    let tol = IV_PRICE_TOL * upper_bound;

    if otm_price(x, k, IV_UPPER * sqrt_tau) < target {
        return Err(IvError::OutsideBracket { price });
    }

    let (mut lo, mut hi) = (IV_LOWER, IV_UPPER);
    // Start at the inflection point of the price in sigma, or at the ATM
    // linearisation when that sits at zero.
    let mut sigma = if x != k {
        (2.0 * (x - k).abs() / tau).sqrt()
    } else {
        target / upper_bound * (2.0 * std::f64::consts::PI / tau).sqrt()
    };
    sigma = sigma.clamp(lo * 10.0, hi * 0.5);

    for _ in 0..200 {
        let w = sigma * sqrt_tau;
        let v = otm_price(x, k, w);
        let resid = v - target;
        if resid == 0.0 {
            return Ok(sigma);
        }
        if resid > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }

        let d_plus = (x - k) / w + 0.5 * w;
        let vega = x.exp() * norm_pdf(d_plus) * sqrt_tau;
        let candidate = if v > 0.0 && vega > 0.0 {
            sigma - (v.ln() - log_target) * v / vega
        } else {
            f64::NAN
        };
        let next = if candidate.is_finite() && candidate > lo && candidate < hi {
            candidate
        } else if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };

        let step = (next - sigma).abs();
        sigma = next;
        if step <= 4.0 * f64::EPSILON * sigma || (hi - lo) <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }

    let residual = bs_price(&BsQuote::new(x, k, tau, sigma)) - price;
    if residual.abs() < tol {
        Ok(sigma)
    } else {
        Err(IvError::NoConvergence { sigma, residual })
    }
}

/// Which geometric-average contract to price.
#[derive(Debug, Clone, Copy)]
pub enum GeometricMode<'a> {
    /// Continuous geometric average, `sigma_G = sigma / sqrt(3)`.
    Continuous,
    /// Weighted geometric mean over the grid nodes, using the grid's averaging weights.
    Discrete(&'a TimeGrid),
}

/// Geometric Asian call under constant volatility.
pub fn geometric_asian_price(market: &MarketSetup, sigma: f64, mode: GeometricMode<'_>) -> f64 {
    let s0 = market.s0;
    let strike = market.strike;
    match mode {
        GeometricMode::Continuous => {
            let t = market.maturity;
            let sigma_g = sigma / 3f64.sqrt();
            let w = sigma_g * t.sqrt();
            if w <= 0.0 {
                return (s0 - strike).max(0.0);
            }
            let d1 = ((s0 / strike).ln() + 0.25 * sigma_g * sigma_g * t) / w;
            let d2 = d1 - w;
            (-0.25 * sigma_g * sigma_g * t).exp() * s0 * norm_cdf(d1) - strike * norm_cdf(d2)
        }
        GeometricMode::Discrete(grid) => {
            if sigma == 0.0 {
                return (s0 - strike).max(0.0);
            }
            let (mean_log, var_log) = grid.geometric_log_moments(s0.ln(), sigma);
            lognormal_call(mean_log, var_log, strike)
        }
    }
}

/// `E[(e^Y - K)+]` for `Y ~ N(mean, var)`.
pub(crate) fn lognormal_call(mean: f64, var: f64, strike: f64) -> f64 {
    if var <= 0.0 {
        return (mean.exp() - strike).max(0.0);
    }
    let sd = var.sqrt();
    let log_fwd = mean + 0.5 * var;
    let d1 = (log_fwd - strike.ln()) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    log_fwd.exp() * norm_cdf(d1) - strike * norm_cdf(d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atm_price_reference() {
        // scipy: norm.cdf(0.1) - norm.cdf(-0.1)
        let p = bs_price(&BsQuote::new(0.0, 0.0, 1.0, 0.2));
        assert!((p - 0.07965567455405798).abs() < 1e-15);
    }

    #[test]
    fn degenerate_vol_gives_intrinsic() {
        assert_eq!(bs_price(&BsQuote::new(0.0, 0.0, 1.0, 0.0)), 0.0);
        let deep = bs_price(&BsQuote::new(3.0, 0.0, 1.0, 0.0));
        assert_eq!(deep, 3f64.exp() - 1.0);
        let near_itm = bs_price(&BsQuote::new(30.0, 0.0, 1.0, 0.2));
        assert!((near_itm / (30f64.exp() - 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_atm() {
        let p = bs_price(&BsQuote::new(0.0, 0.0, 1.0, 0.2));
        let iv = implied_vol(p, 0.0, 0.0, 1.0).unwrap();
        assert!((iv - 0.2).abs() < 1e-10);
        let iv = implied_vol(0.0796557, 0.0, 0.0, 1.0).unwrap();
        assert!((iv - 0.2).abs() < 1e-6);
    }

    #[test]
    fn rejects_prices_outside_bounds() {
        let err = implied_vol(0.0, 0.0, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, IvError::BelowIntrinsic { .. }));
        let intrinsic = 0.1f64.exp() - 1.0;
        let err = implied_vol(intrinsic, 0.1, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, IvError::BelowIntrinsic { .. }));
        let err = implied_vol(1.0, 0.0, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, IvError::AboveUpper { .. }));
        let err = implied_vol(0.5, 0.0, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, IvError::NonPositiveTau(_)));
    }

    #[test]
    fn price_needing_huge_vol_is_outside_bracket() {
        let err = implied_vol(0.999999, 0.0, 0.0, 1.0 / 252.0).unwrap_err();
        assert!(matches!(err, IvError::OutsideBracket { .. }));
    }

    #[test]
    fn increasing_in_sigma_at_the_money() {
        let mut prev = 0.0;
        for i in 1..=500 {
            let s = 0.01 * i as f64;
            let p = bs_price(&BsQuote::new(0.0, 0.0, 0.5, s));
            assert!(p > prev, "sigma={s}");
            prev = p;
        }
    }

    #[test]
    fn vega_matches_finite_difference() {
        let q = BsQuote::new(0.05, 0.0, 0.7, 0.3);
        let h = 1e-6;
        let up = bs_price(&BsQuote { sigma: 0.3 + h, ..q });
        let dn = bs_price(&BsQuote { sigma: 0.3 - h, ..q });
        assert!(((up - dn) / (2.0 * h) - bs_vega(&q)).abs() < 1e-8);
    }

    #[test]
    fn continuous_geometric_reference() {
        // direct evaluation of the closed form with scipy
        let m = MarketSetup::new(10.0, 10.0, 1.0 / 252.0, 0.0).unwrap();
        let p = geometric_asian_price(&m, 0.3, GeometricMode::Continuous);
        assert!((p - 0.04337866235802679).abs() < 1e-14);
    }

    #[test]
    fn geometric_limits() {
        let m = MarketSetup::new(10.0, 10.0, 1.0 / 252.0, 0.0).unwrap();
        assert_eq!(geometric_asian_price(&m, 0.0, GeometricMode::Continuous), 0.0);
        let grid = TimeGrid::new(m.maturity, 50).unwrap();
        assert_eq!(geometric_asian_price(&m, 0.0, GeometricMode::Discrete(&grid)), 0.0);

        let tiny = m.with_strike(1e-12);
        let sigma = 0.3;
        let sg2 = sigma * sigma / 3.0;
        let expect = 10.0 * (-0.25 * sg2 * m.maturity).exp();
        let p = geometric_asian_price(&tiny, sigma, GeometricMode::Continuous);
        assert!((p - expect).abs() < 1e-10);
    }
}
