//! Implied volatility from Monte Carlo prices, and experiment orchestration.

mod experiment;
mod plan;

use thiserror::Error;

use crate::analytic::{bs_vega, implied_vol, BsQuote, IvError};
use crate::asymptotics::AsymptoticsError;
use crate::mc::{price_asian_strikes, McConfig, McError};
use crate::model::{MarketSetup, ModelError, ModelSpec};
use crate::paths::PathError;

pub use experiment::{
    experiment_table, fbm_covariance_check, level_sweep, num, proxy_error_table, run_experiment, skew_sweep,
    skew_vs_maturity, CovResidual, ExperimentReport, LevelRow, ProxyCell, SkewRow, Table,
};
pub use plan::{
    ErrorSpace, ExperimentKind, ExperimentPlan, FbmSection, MarketSection, McSection, ModelFamily, ModelSection,
    ProxySection, SweepSection,
};

/// Default relative strike bump of the finite-difference skew.
pub const DEFAULT_DK: f64 = 0.001;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot invert Monte Carlo price {price} at log-strike {log_strike}: {source}; try more paths")]
    Inversion {
        price: f64,
        log_strike: f64,
        #[source]
        source: IvError,
    },
    #[error("invalid experiment plan: {0}")]
    Plan(String),
    #[error("cannot read plan {path}: {message}")]
    PlanRead { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

/// One point of the implied-volatility smile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvPoint {
    pub log_strike: f64,
    pub maturity: f64,
    pub iv: f64,
    /// Price standard error mapped through the vega.
    pub iv_stderr: f64,
}

/// Finite-difference slope of the smile at the money.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewEstimate {
    pub slope: f64,
    /// Delta-method error including the cross-strike covariance.
    pub stderr: f64,
    pub lower: IvPoint,
    pub upper: IvPoint,
}

/// How the two bumped strikes are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrikeSampling {
    /// Both strikes priced on the same paths.
    Common,
    /// Each strike gets its own seed.
    Independent,
}

fn invert(price: f64, stderr: f64, market: &MarketSetup, log_strike: f64) -> Result<IvPoint, LabError> {
    let x = market.atm_log_strike();
    let t = market.maturity;
    let iv = implied_vol(price, x, log_strike, t).map_err(|source| LabError::Inversion {
        price,
        log_strike,
        source,
    })?;
    let vega = bs_vega(&BsQuote::new(x, log_strike, t, iv));
    Ok(IvPoint {
        log_strike,
        maturity: t,
        iv,
        iv_stderr: if stderr > 0.0 { stderr / vega } else { 0.0 },
    })
}

/// Implied volatility of the Asian call struck at `S0`.
pub fn estimate_atm_iv(model: &ModelSpec, market: &MarketSetup, cfg: &McConfig) -> Result<IvPoint, LabError> {
    let atm = market.with_strike(market.s0);
    let strip = price_asian_strikes(model, &atm, &[atm.s0], cfg)?;
    let e = strip.estimates[0];
    invert(e.mean, e.stderr, &atm, atm.atm_log_strike())
}

/// Log-strikes `k* -/+ h` with `h = log(1 + dk)`, i.e. strikes `S0 / (1 + dk)` and `S0 (1 + dk)`.
pub fn bumped_log_strikes(k_star: f64, dk: f64) -> (f64, f64, f64) {
    let h = dk.ln_1p();
    (k_star - h, k_star + h, h)
}

/// Central difference of an arbitrary smile around `k_star`.
pub fn fd_skew<F: FnMut(f64) -> f64>(mut smile: F, k_star: f64, dk: f64) -> f64 {
    let (lo, hi, h) = bumped_log_strikes(k_star, dk);
    (smile(hi) - smile(lo)) / (2.0 * h)
}

pub fn estimate_skew_fd(
    model: &ModelSpec,
    market: &MarketSetup,
    cfg: &McConfig,
    dk: f64,
) -> Result<SkewEstimate, LabError> {
    estimate_skew_fd_with(model, market, cfg, dk, StrikeSampling::Common)
}

pub fn estimate_skew_fd_with(
    model: &ModelSpec,
    market: &MarketSetup,
    cfg: &McConfig,
    dk: f64,
    sampling: StrikeSampling,
) -> Result<SkewEstimate, LabError> {
    if !(dk > 0.0 && dk.is_finite()) {
        return Err(LabError::Plan(format!("dk must be > 0, got {dk}")));
    }
    let k_star = market.atm_log_strike();
    let (lo, hi, h) = bumped_log_strikes(k_star, dk);
    let strikes = [lo.exp(), hi.exp()];
    let (lower_est, upper_est, cov) = match sampling {
        StrikeSampling::Common => {
            let strip = price_asian_strikes(model, market, &strikes, cfg)?;
            (strip.estimates[0], strip.estimates[1], strip.cov(0, 1))
        }
        StrikeSampling::Independent => {
            let lower = price_asian_strikes(model, market, &strikes[..1], cfg)?;
            let other = McConfig {
                seed: mix_seed(cfg.seed, 1),
                ..*cfg
            };
            let upper = price_asian_strikes(model, market, &strikes[1..], &other)?;
            (lower.estimates[0], upper.estimates[0], 0.0)
        }
    };
    let lower = invert(lower_est.mean, lower_est.stderr, market, lo)?;
    let upper = invert(upper_est.mean, upper_est.stderr, market, hi)?;
    let x = market.atm_log_strike();
    let v_lo = bs_vega(&BsQuote::new(x, lo, market.maturity, lower.iv));
    let v_hi = bs_vega(&BsQuote::new(x, hi, market.maturity, upper.iv));
    let var = lower.iv_stderr.powi(2) + upper.iv_stderr.powi(2) - 2.0 * cov / (v_lo * v_hi);
    Ok(SkewEstimate {
        slope: (upper.iv - lower.iv) / (2.0 * h),
        stderr: var.max(0.0).sqrt() / (2.0 * h),
        lower,
        upper,
    })
}

/// Derives an independent seed for cell `index` of an experiment.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::Estimator;

    fn market() -> MarketSetup {
        MarketSetup::new(10.0, 10.0, 1.0 / 252.0, -0.3).unwrap()
    }

    fn cfg(n: usize, estimator: Estimator) -> McConfig {
        McConfig {
            n_paths: n,
            estimator,
            seed: 11,
            ..McConfig::default()
        }
    }

    #[test]
    fn linear_smile_slope_is_recovered() {
        for (a, s) in [(0.2, -0.03), (0.17, 0.0173205), (1.0, 2.5)] {
            for k_star in [0.0, 10f64.ln(), -3.0] {
                let got = fd_skew(|k| a + s * k, k_star, DEFAULT_DK);
                assert!((got - s).abs() < 1e-9 * (1.0 + (a / s).abs()), "{got} vs {s}");
            }
        }
    }

    #[test]
    fn bumped_strikes_are_symmetric_in_log() {
        let (lo, hi, h) = bumped_log_strikes(10f64.ln(), 0.001);
        assert!((hi.exp() - 10.01).abs() < 1e-12);
        assert!((lo.exp() - 10.0 / 1.001).abs() < 1e-12);
        assert_eq!(h, 0.001f64.ln_1p());
    }

    #[test]
    fn zero_vol_cannot_be_inverted() {
        let err = estimate_atm_iv(
            &ModelSpec::ConstantVol { sigma: 0.0 },
            &market(),
            &cfg(100, Estimator::Plain),
        )
        .unwrap_err();
        assert!(matches!(err, LabError::Inversion { .. }), "{err}");
        assert!(err.to_string().contains("more paths"));
    }

    #[test]
    fn constant_vol_level_is_close_to_theory() {
        let p = estimate_atm_iv(
            &ModelSpec::ConstantVol { sigma: 0.3 },
            &market(),
            &cfg(20_000, Estimator::CvAntithetic),
        )
        .unwrap();
        let want = 0.3 / 3f64.sqrt();
        assert!((p.iv - want).abs() < (3.0 * p.iv_stderr).max(0.005 * want), "{p:?}");
        assert!(p.iv_stderr > 0.0);
        assert_eq!(p.log_strike, 10f64.ln());
    }

    #[test]
    fn common_numbers_give_a_tighter_skew() {
        let model = ModelSpec::ConstantVol { sigma: 0.3 };
        let c = cfg(20_000, Estimator::Antithetic);
        let common = estimate_skew_fd_with(&model, &market(), &c, DEFAULT_DK, StrikeSampling::Common).unwrap();
        let indep = estimate_skew_fd_with(&model, &market(), &c, DEFAULT_DK, StrikeSampling::Independent).unwrap();
        assert!(common.stderr < indep.stderr / 5.0, "{common:?} {indep:?}");
        assert!(estimate_skew_fd(&model, &market(), &c, 0.0).is_err());
    }

    #[test]
    fn seeds_are_mixed() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
        assert_eq!(mix_seed(5, 7), mix_seed(5, 7));
    }
}
