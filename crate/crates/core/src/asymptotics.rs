//! Short-maturity level and slope of the Asian implied volatility at the money.
//!
//! With `k* = log S0` the implied volatility tends to `sigma0 / sqrt(3)` and
//! its log-strike slope to
//!
//! ```text
//! T^(1/2 - H)_+ [ 3 sqrt(3) rho / (sigma0 T^5) * J(T) + sqrt(3) sigma0 / 30 ]
//! J(T) = int_0^T (T - r) int_r^T (T - u)^2 E[D_r sigma_u] du dr
//! ```
//!
//! where the prefactor only applies for rough kernels (`H < 1/2`). The closed
//! forms below are that expression evaluated per model; `atm_skew_general`
//! evaluates it by quadrature for any [`SkewKernel`].

use thiserror::Error;

use crate::analytic::{bs_price, BsQuote};
use crate::model::{skew_kernel, spot_vol, LocalVol, MarketSetup, ModelSpec, SkewKernel};
use crate::quadrature::GaussJacobi;

/// Node count of both the inner and outer rules.
pub const SKEW_NODES: usize = 32;
/// Lowest volatility the linear smile proxy is allowed to produce.
pub const PROXY_IV_FLOOR: f64 = 1e-6;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("maturity must be > 0, got {0}")]
    NonPositiveMaturity(f64),
    #[error("sigma0 must be > 0, got {0}")]
    NonPositiveSigma0(f64),
    #[error("kernel exponent must lie in (0, 1), got {0}")]
    BadExponent(f64),
    #[error("Richardson extrapolation is not converging; sequence {0:?}")]
    NotConverging(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkewMode {
    /// The bracket at the given maturity.
    Finite,
    /// The `T -> 0` limit, extrapolated from `T, T/4, T/16, T/64`.
    Limit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkewSource {
    /// Closed-form slope when the model has one at order zero, otherwise the finite-`T` quadrature.
    Closed,
    /// Always the finite-`T` quadrature at the contract maturity.
    GeneralAtT,
}

/// ATM level and slope of the implied volatility.
///
/// For rough kernels `skew` holds the finite constant `lim T^(1/2 - H) dI/dk`
/// and `scaling_exponent = H - 1/2`, so the slope at maturity `T` is
/// `skew * T^scaling_exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticQuote {
    pub level: f64,
    pub skew: f64,
    pub scaling_exponent: f64,
    pub scaled: bool,
}

impl AsymptoticQuote {
    fn unscaled(level: f64, skew: f64) -> Self {
        Self {
            level,
            skew,
            scaling_exponent: 0.0,
            scaled: false,
        }
    }

    fn rough(level: f64, skew: f64, hurst: f64) -> Self {
        Self {
            level,
            skew,
            scaling_exponent: hurst - 0.5,
            scaled: true,
        }
    }

    /// Slope in log-strike at maturity `t`.
    pub fn skew_at(&self, t: f64) -> f64 {
        if self.scaled {
            self.skew * t.powf(self.scaling_exponent)
        } else {
            self.skew
        }
    }
}

pub fn atm_level(sigma0: f64) -> f64 {
    sigma0 / SQRT3
}

/// `sqrt(3) sigma0 / 30`, the slope contributed by averaging alone.
fn averaging_skew(sigma0: f64) -> f64 {
    SQRT3 * sigma0 / 30.0
}

/// `3 sqrt(6H) rho v / ((H + 1/2)(H + 3/2)(H + 5/2)(H + 9/2))`.
pub fn rough_bergomi_constant(rho: f64, vov: f64, hurst: f64) -> f64 {
    3.0 * (6.0 * hurst).sqrt() * rho * vov / ((hurst + 0.5) * (hurst + 1.5) * (hurst + 2.5) * (hurst + 4.5))
}

/// Closed-form limits per model. Local volatility ignores `market.rho`.
pub fn atm_skew_closed(model: &ModelSpec, market: &MarketSetup) -> AsymptoticQuote {
    let rho = market.rho;
    let level = atm_level(spot_vol(model, market));
    match model {
        ModelSpec::ConstantVol { sigma } => AsymptoticQuote::unscaled(level, averaging_skew(*sigma)),
        ModelSpec::Sabr { sigma0, alpha } => {
            AsymptoticQuote::unscaled(level, SQRT3 * rho * alpha / 5.0 + averaging_skew(*sigma0))
        }
        ModelSpec::FractionalBergomi { sigma0, vov, hurst } => {
            if *hurst > 0.5 {
                AsymptoticQuote::unscaled(level, averaging_skew(*sigma0))
            } else if *hurst == 0.5 {
                AsymptoticQuote::unscaled(level, SQRT3 * rho * vov / 10.0 + averaging_skew(*sigma0))
            } else {
                AsymptoticQuote::rough(level, rough_bergomi_constant(rho, *vov, *hurst), *hurst)
            }
        }
        ModelSpec::LocalVol(lv) => {
            let s0 = market.s0;
            let skew = (lv.sigma(s0) + 6.0 * s0 * lv.sigma_deriv(s0)) * SQRT3 / 30.0;
            AsymptoticQuote::unscaled(level, skew)
        }
    }
}

/// `T^-(H + 9/2) J(T)`, computed on the unit square.
///
/// The inner rule carries the `(y - x)^(H - 1/2)` singularity in its weight.
fn normalised_integral(kernel: &SkewKernel, t: f64, nodes: usize) -> Result<f64, AsymptoticsError> {
    let h = kernel.exponent();
    let inner = GaussJacobi::new(nodes, 0.0, h - 0.5).map_err(|_| AsymptoticsError::BadExponent(h))?;
    let outer = GaussJacobi::legendre(nodes).map_err(|_| AsymptoticsError::BadExponent(h))?;
    let value = outer.integrate(0.0, 1.0, |x| {
        let inner_value = inner.integrate(x, 1.0, |y| (1.0 - y).powi(2) * kernel.regular(t * x, t * y));
        (1.0 - x) * inner_value
    });
    Ok(value)
}

/// `J(T)` with `nodes`-point inner and outer rules.
pub fn skew_double_integral(kernel: &SkewKernel, t: f64, nodes: usize) -> Result<f64, AsymptoticsError> {
    if !(t > 0.0) {
        return Err(AsymptoticsError::NonPositiveMaturity(t));
    }
    let h = kernel.exponent();
    Ok(t.powf(h + 4.5) * normalised_integral(kernel, t, nodes)?)
}

/// `T^(1/2 - H) * 3 sqrt(3) rho / (sigma0 T^5) * J(T)`: the kernel part of
/// the bracket, already multiplied by the rough prefactor when `H < 1/2`.
fn kernel_term(sigma0: f64, rho: f64, kernel: &SkewKernel, t: f64, nodes: usize) -> Result<f64, AsymptoticsError> {
    if rho == 0.0 || kernel.is_zero() {
        return Ok(0.0);
    }
    let h = kernel.exponent();
    let scaled = 3.0 * SQRT3 * rho / sigma0 * normalised_integral(kernel, t, nodes)?;
    Ok(if h < 0.5 { scaled } else { scaled * t.powf(h - 0.5) })
}

/// Quadrature evaluation of the slope for an arbitrary kernel.
pub fn atm_skew_general(
    sigma0: f64,
    rho: f64,
    kernel: &SkewKernel,
    t: f64,
    mode: SkewMode,
) -> Result<AsymptoticQuote, AsymptoticsError> {
    atm_skew_general_with_nodes(sigma0, rho, kernel, t, mode, SKEW_NODES)
}

pub fn atm_skew_general_with_nodes(
    sigma0: f64,
    rho: f64,
    kernel: &SkewKernel,
    t: f64,
    mode: SkewMode,
    nodes: usize,
) -> Result<AsymptoticQuote, AsymptoticsError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(AsymptoticsError::NonPositiveMaturity(t));
    }
    if !(sigma0 > 0.0) {
        return Err(AsymptoticsError::NonPositiveSigma0(sigma0));
    }
    let h = kernel.exponent();
    if !(h > 0.0 && h < 1.0) {
        return Err(AsymptoticsError::BadExponent(h));
    }
    let level = atm_level(sigma0);
    let base = averaging_skew(sigma0);
    match mode {
        SkewMode::Finite => {
            let k = kernel_term(sigma0, rho, kernel, t, nodes)?;
            if h < 0.5 {
                Ok(AsymptoticQuote::rough(level, k + t.powf(0.5 - h) * base, h))
            } else {
                Ok(AsymptoticQuote::unscaled(level, k + base))
            }
        }
        SkewMode::Limit => {
            if h > 0.5 {
                return Ok(AsymptoticQuote::unscaled(level, base));
            }
            let seq = (0..4)
                .map(|i| kernel_term(sigma0, rho, kernel, t / 4f64.powi(i), nodes))
                .collect::<Result<Vec<_>, _>>()?;
            let limit = richardson(&seq, 4f64.powf(kernel.correction_order()))?;
            if h < 0.5 {
                Ok(AsymptoticQuote::rough(level, limit, h))
            } else {
                Ok(AsymptoticQuote::unscaled(level, limit + base))
            }
        }
    }
}

/// Extrapolates `g_k = g + a_1 q^-k + a_2 q^-2k + ...` to `g`.
fn richardson(seq: &[f64], q: f64) -> Result<f64, AsymptoticsError> {
    let scale = seq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let noise = 1e-13 * scale;
    let diffs: Vec<f64> = seq.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if diffs.windows(2).any(|d| d[1] > d[0] && d[1] > noise) {
        return Err(AsymptoticsError::NotConverging(seq.to_vec()));
    }
    let mut table = seq.to_vec();
    let mut factor = 1.0;
    for level in 1..seq.len() {
        factor *= q;
        for k in (level..seq.len()).rev() {
            table[k] = (factor * table[k] - table[k - 1]) / (factor - 1.0);
        }
    }
    Ok(*table.last().expect("non-empty sequence"))
}

/// First-order expansion of the local-volatility smile in `x = log(K / S0)`.
pub fn pirjol_zhu_smile(lv: &LocalVol, market: &MarketSetup, x: f64) -> f64 {
    let s0 = market.s0;
    let sigma = lv.sigma(s0);
    let slope = 0.1 + 0.6 * lv.sigma_deriv(s0) * s0 / sigma;
    sigma / SQRT3 * (1.0 + slope * x)
}

/// Slope of the linear smile used by [`price_proxy`], in log-strike at the contract maturity.
pub fn proxy_slope(model: &ModelSpec, market: &MarketSetup, source: SkewSource) -> Result<f64, AsymptoticsError> {
    let closed = atm_skew_closed(model, market);
    let t = market.maturity;
    if source == SkewSource::Closed && !closed.scaled {
        return Ok(closed.skew);
    }
    let rho = match model {
        ModelSpec::LocalVol(_) => 1.0,
        _ => market.rho,
    };
    let sigma0 = spot_vol(model, market);
    if sigma0 <= 0.0 {
        return Ok(0.0);
    }
    let q = atm_skew_general(sigma0, rho, &skew_kernel(model, market), t, SkewMode::Finite)?;
    Ok(q.skew_at(t))
}

/// Linear-smile volatility `level + slope (k - log S0)`, floored at [`PROXY_IV_FLOOR`].
pub fn proxy_iv(model: &ModelSpec, market: &MarketSetup, k: f64, source: SkewSource) -> Result<f64, AsymptoticsError> {
    let level = atm_level(spot_vol(model, market));
    let slope = proxy_slope(model, market, source)?;
    Ok((level + slope * (k - market.atm_log_strike())).max(PROXY_IV_FLOOR))
}

/// Black-Scholes price at [`proxy_iv`].
pub fn price_proxy(
    model: &ModelSpec,
    market: &MarketSetup,
    k: f64,
    source: SkewSource,
) -> Result<f64, AsymptoticsError> {
    let iv = proxy_iv(model, market, k, source)?;
    Ok(bs_price(&BsQuote::new(market.atm_log_strike(), k, market.maturity, iv)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn market(rho: f64) -> MarketSetup {
        MarketSetup::new(10.0, 10.0, 1.0 / 252.0, rho).unwrap()
    }

    fn bergomi(hurst: f64) -> SkewKernel {
        SkewKernel::FractionalBergomi {
            sigma0: 0.3,
            vov: 0.5,
            hurst,
        }
    }

    #[test]
    fn level_examples() {
        assert!((atm_level(0.3) - 0.1732051).abs() < 1e-7);
        assert!((atm_level(3f64.sqrt()) - 1.0).abs() < 1e-15);
        assert!((atm_level(0.6) - 0.3464102).abs() < 1e-7);
    }

    #[test]
    fn closed_form_examples() {
        let q = atm_skew_closed(&ModelSpec::ConstantVol { sigma: 0.3 }, &market(-0.3));
        assert!((q.skew - 0.0173205).abs() < 1e-7);
        let q = atm_skew_closed(
            &ModelSpec::Sabr {
                sigma0: 0.5,
                alpha: 0.5,
            },
            &market(-0.3),
        );
        assert!((q.skew + 0.0230940).abs() < 1e-7);
        let q = atm_skew_closed(
            &ModelSpec::FractionalBergomi {
                sigma0: 0.3,
                vov: 0.5,
                hurst: 0.4,
            },
            &market(-0.3),
        );
        assert!(q.scaled);
        assert!((q.scaling_exponent + 0.1).abs() < 1e-15);
        assert!((q.skew + 0.028690).abs() < 5e-7);
        let q = atm_skew_closed(&ModelSpec::LocalVol(LocalVol::cev(0.3, 0.5)), &market(-0.3));
        assert!((q.skew + 0.010954451150103323).abs() < 1e-15);
        assert!((q.level - 0.0948683 / SQRT3).abs() < 1e-7);
    }

    #[test]
    fn bergomi_regimes() {
        let m = market(-0.3);
        let f = |h| ModelSpec::FractionalBergomi {
            sigma0: 0.3,
            vov: 0.5,
            hurst: h,
        };
        let smooth = atm_skew_closed(&f(0.7), &m);
        assert!(!smooth.scaled);
        assert_eq!(smooth.skew, SQRT3 * 0.3 / 30.0);
        let half = atm_skew_closed(&f(0.5), &m);
        assert!((half.skew + 0.0086603).abs() < 1e-7);
    }

    #[test]
    fn rough_constant_approaches_brownian_value() {
        let near = rough_bergomi_constant(-0.3, 0.5, 0.5 - 1e-6);
        assert!((near - SQRT3 * -0.3 * 0.5 / 10.0).abs() < 1e-5);
    }

    #[test]
    fn sabr_kernel_is_exact_at_every_maturity() {
        let (s0, a, rho) = (0.5, 0.5, -0.3);
        let k = SkewKernel::Constant(a * s0);
        let want = SQRT3 * rho * a / 5.0 + SQRT3 * s0 / 30.0;
        for t in [1.0, 1e-2, 1e-4] {
            let q = atm_skew_general(s0, rho, &k, t, SkewMode::Finite).unwrap();
            assert!((q.skew - want).abs() < 1e-12, "T={t}: {}", q.skew);
            let j = skew_double_integral(&k, t, SKEW_NODES).unwrap();
            assert!((j / (a * s0 * t.powi(5) / 15.0) - 1.0).abs() < 1e-12);
        }
        let lim = atm_skew_general(s0, rho, &k, 1e-2, SkewMode::Limit).unwrap();
        assert!((lim.skew - want).abs() < 1e-12);
    }

    #[test]
    fn rough_limit_matches_closed_form() {
        let q = atm_skew_general(0.3, -0.3, &bergomi(0.4), 1.0 / 252.0, SkewMode::Limit).unwrap();
        assert!(q.scaled);
        assert!(
            (q.skew - rough_bergomi_constant(-0.3, 0.5, 0.4)).abs() < 1e-9,
            "{}",
            q.skew
        );
        assert!((q.skew + 0.028690).abs() < 1e-6);
    }

    #[test]
    fn brownian_bergomi_limit() {
        let q = atm_skew_general(0.3, -0.3, &bergomi(0.5), 0.01, SkewMode::Limit).unwrap();
        assert!((q.skew + 0.0086603).abs() < 1e-7, "{}", q.skew);
        let smooth = atm_skew_general(0.3, -0.3, &bergomi(0.7), 0.01, SkewMode::Limit).unwrap();
        assert_eq!(smooth.skew, SQRT3 * 0.3 / 30.0);
    }

    #[test]
    fn doubling_nodes_barely_moves_rough_result() {
        for mode in [SkewMode::Finite, SkewMode::Limit] {
            let a = atm_skew_general_with_nodes(0.3, -0.3, &bergomi(0.4), 0.05, mode, 32).unwrap();
            let b = atm_skew_general_with_nodes(0.3, -0.3, &bergomi(0.4), 0.05, mode, 64).unwrap();
            assert!((a.skew - b.skew).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_rough_skew_descales_to_the_bracket() {
        let t = 0.001;
        let q = atm_skew_general(0.3, -0.3, &bergomi(0.4), t, SkewMode::Finite).unwrap();
        let lim = rough_bergomi_constant(-0.3, 0.5, 0.4);
        // the kernel term dominates and carries the T^(H - 1/2) blow-up
        assert!((q.skew - lim).abs() < 0.01);
        let bracket = q.skew_at(t);
        assert!((bracket - (q.skew * t.powf(-0.1))).abs() < 1e-15);
        // slope of the plotted line per unit sigma0
        assert!((t.powf(0.1) * SQRT3 / 30.0 - 0.0289).abs() < 5e-5);
    }

    #[test]
    fn local_vol_kernel_reproduces_closed_form() {
        let m = market(1.0);
        let lv = ModelSpec::LocalVol(LocalVol::cev(0.3, 0.5));
        let closed = atm_skew_closed(&lv, &m).skew;
        let s = spot_vol(&lv, &m);
        let q = atm_skew_general(s, 1.0, &skew_kernel(&lv, &m), 0.1, SkewMode::Finite).unwrap();
        assert!((q.skew - closed).abs() < 1e-12);
        assert!((proxy_slope(&lv, &m, SkewSource::GeneralAtT).unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn smile_expansion() {
        let m = market(-0.3);
        let cev = LocalVol::cev(0.3, 0.5);
        let level = pirjol_zhu_smile(&cev, &m, 0.0);
        assert_eq!(level, cev.sigma(10.0) / SQRT3);
        let h = 1e-3;
        let slope = (pirjol_zhu_smile(&cev, &m, h) - pirjol_zhu_smile(&cev, &m, -h)) / (2.0 * h);
        let closed = atm_skew_closed(&ModelSpec::LocalVol(cev), &m).skew;
        assert!((slope - closed).abs() < 1e-12);
        let flat = LocalVol::affine(0.3, 0.0, 10.0);
        let s = (pirjol_zhu_smile(&flat, &m, h) - pirjol_zhu_smile(&flat, &m, -h)) / (2.0 * h);
        assert!((s - 0.3 * SQRT3 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn proxy_at_the_money_uses_the_level() {
        let m = market(-0.3);
        let model = ModelSpec::Sabr {
            sigma0: 0.5,
            alpha: 0.5,
        };
        let k = m.atm_log_strike();
        let p = price_proxy(&model, &m, k, SkewSource::Closed).unwrap();
        let want = bs_price(&BsQuote::new(k, k, m.maturity, 0.5 / SQRT3));
        assert_eq!(p, want);
        let general = price_proxy(&model, &m, k, SkewSource::GeneralAtT).unwrap();
        assert_eq!(general, want);
    }

    #[test]
    fn proxy_floors_the_volatility() {
        let m = market(-0.9);
        let model = ModelSpec::Sabr {
            sigma0: 0.01,
            alpha: 1.5,
        };
        // the linear smile is negative far to the right
        let k = m.atm_log_strike() + 1.0;
        let p = price_proxy(&model, &m, k, SkewSource::Closed).unwrap();
        assert_eq!(
            p,
            bs_price(&BsQuote::new(m.atm_log_strike(), k, m.maturity, PROXY_IV_FLOOR))
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = SkewKernel::Constant(0.1);
        assert!(atm_skew_general(0.3, 0.1, &k, 0.0, SkewMode::Finite).is_err());
        assert!(atm_skew_general(0.0, 0.1, &k, 1.0, SkewMode::Finite).is_err());
    }

    #[test]
    fn richardson_flags_divergence() {
        let err = richardson(&[1.0, 1.1, 1.5, 3.0], 4.0).unwrap_err();
        assert!(matches!(err, AsymptoticsError::NotConverging(ref s) if s.len() == 4));
        let exact = richardson(&[2.0 + 1.0, 2.0 + 0.25, 2.0 + 0.0625, 2.0 + 0.015625], 4.0).unwrap();
        assert!((exact - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn uncorrelated_slope_is_the_averaging_term(
            sigma0 in 0.05f64..1.5,
            hurst in 0.5f64..0.95,
            vov in 0.0f64..2.0,
            c in -2.0f64..2.0,
        ) {
            let kernels = [
                SkewKernel::Zero,
                SkewKernel::Constant(c),
                SkewKernel::FractionalBergomi { sigma0, vov, hurst },
            ];
            for k in kernels {
                for mode in [SkewMode::Finite, SkewMode::Limit] {
                    let q = atm_skew_general(sigma0, 0.0, &k, 0.01, mode).unwrap();
                    prop_assert_eq!(q.skew, SQRT3 * sigma0 / 30.0);
                }
            }
        }

        #[test]
        fn proxy_smile_falls_with_strike_for_negative_rho(
            sigma0 in 0.2f64..0.8,
            alpha in 0.3f64..1.5,
            rho in -0.9f64..-0.05,
        ) {
            let m = MarketSetup::new(100.0, 100.0, 0.01, rho).unwrap();
            let slope = proxy_slope(&ModelSpec::Sabr { sigma0, alpha }, &m, SkewSource::Closed).unwrap();
            // the averaging term sqrt(3) sigma0 / 30 can outweigh weak correlation
            prop_assert_eq!(slope < 0.0, SQRT3 * rho * alpha / 5.0 + SQRT3 * sigma0 / 30.0 < 0.0);
        }
    }
}
