//! Arithmetic Asian call options under stochastic volatility.
//!
//! The crate covers four pieces that are meant to be cross-checked against
//! each other:
//!
//! * [`paths`] simulates correlated volatility/asset paths (constant vol,
//!   SABR, fractional Bergomi, local vol) on a uniform grid;
//! * [`mc`] prices the arithmetic Asian call by Monte Carlo with antithetic
//!   and geometric control variates;
//! * [`analytic`] holds Black-Scholes pricing, implied-volatility inversion
//!   and closed-form geometric Asian prices;
//! * [`asymptotics`] evaluates the short-maturity at-the-money implied
//!   volatility level and skew, both in closed form and as a quadrature
//!   functional over the model's expected Malliavin-derivative kernel.
//!
//! [`lab`] ties these together into experiments that write CSV files.

pub mod analytic;
pub mod asymptotics;
pub mod lab;
pub mod mc;
pub mod model;
pub mod normal;
pub mod paths;
pub mod quadrature;
pub mod stats;

pub use analytic::{bs_price, bs_vega, geometric_asian_price, implied_vol, BsQuote, GeometricMode};
pub use asymptotics::{
    atm_level, atm_skew_closed, atm_skew_general, pirjol_zhu_smile, price_proxy, proxy_iv, AsymptoticQuote, SkewMode,
    SkewSource,
};
pub use lab::{estimate_atm_iv, estimate_skew_fd, run_experiment, ExperimentPlan, IvPoint, SkewEstimate};
pub use mc::{cv_coefficient, price_asian, price_asian_strikes, CvMode, Estimator, McConfig, McEstimate, StrikeStrip};
pub use model::{skew_kernel, spot_vol, LocalVol, MarketSetup, ModelSpec, SkewKernel};
pub use paths::{
    averages, forward_diagnostics, sample_joint_gaussian, simulate_paths, AveragingRule, ForwardState, GaussianDriver,
    PathBundle, TimeGrid,
};
