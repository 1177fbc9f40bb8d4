//! Monte Carlo pricing of the arithmetic Asian call `E[(A_T - K)_+]`.
//!
//! Samples are generated in fixed-size batches; batch `b` reads substream `b`
//! of the configured seed, batches run on the rayon pool and their moments are
//! merged in batch order. A given `(seed, n_paths)` therefore yields the same
//! bits regardless of thread count.
//!
//! With antithetic sampling one sample is the average of a path and its
//! mirror, so `n_paths` counts pairs. The geometric-average control uses a
//! shadow asset driven by the same `W` at the constant level `spot_vol`; for
//! constant volatility that shadow is the simulated asset itself.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::analytic::{geometric_asian_price, GeometricMode};
use crate::model::{spot_vol, MarketSetup, ModelError, ModelSpec};
use crate::paths::{fill_normals, AveragingRule, GaussianDriver, PathBundle, PathError, PathSimulator, TimeGrid};
use crate::stats::Moments;

/// Samples per batch. Part of the reproducibility contract: changing it
/// changes which substream feeds which sample.
pub const BATCH_SIZE: usize = 4096;

const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid Monte Carlo configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Plain,
    Antithetic,
    ControlVariate,
    CvAntithetic,
}

impl Estimator {
    pub fn antithetic(self) -> bool {
        matches!(self, Estimator::Antithetic | Estimator::CvAntithetic)
    }

    pub fn uses_control(self) -> bool {
        matches!(self, Estimator::ControlVariate | Estimator::CvAntithetic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Plain => "plain",
            Estimator::Antithetic => "antithetic",
            Estimator::ControlVariate => "control_variate",
            Estimator::CvAntithetic => "cv_antithetic",
        }
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "plain" => Ok(Estimator::Plain),
            "antithetic" => Ok(Estimator::Antithetic),
            "control_variate" | "cv" => Ok(Estimator::ControlVariate),
            "cv_antithetic" => Ok(Estimator::CvAntithetic),
            other => Err(format!(
                "unknown estimator `{other}` (expected plain, antithetic, control_variate or cv_antithetic)"
            )),
        }
    }
}

/// Which closed form the control's sample mean is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    /// Continuously monitored geometric average.
    Continuous,
    /// Geometric average over the simulation grid with its weights.
    #[default]
    Discrete,
}

impl FromStr for CvMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(CvMode::Continuous),
            "discrete" => Ok(CvMode::Discrete),
            other => Err(format!("unknown cv mode `{other}` (expected continuous or discrete)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub cv_mode: CvMode,
    pub averaging: AveragingRule,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 200_000,
            steps: 50,
            seed: 1,
            estimator: Estimator::Antithetic,
            cv_mode: CvMode::Discrete,
            averaging: AveragingRule::Trapezoid,
        }
    }
}

impl McConfig {
    pub fn validate(&self, model: &ModelSpec) -> Result<(), McError> {
        if self.n_paths < 2 {
            return Err(McError::Config(format!("n_paths must be >= 2, got {}", self.n_paths)));
        }
        if self.steps < 1 {
            return Err(McError::Config("steps must be >= 1".into()));
        }
        let ok = match (self.estimator, model) {
            (Estimator::ControlVariate, ModelSpec::ConstantVol { .. }) => true,
            (Estimator::ControlVariate, _) => false,
            (Estimator::CvAntithetic, ModelSpec::ConstantVol { .. })
            | (Estimator::CvAntithetic, ModelSpec::FractionalBergomi { .. }) => true,
            (Estimator::CvAntithetic, _) => false,
            _ => true,
        };
        if !ok {
            let rule = match self.estimator {
                Estimator::ControlVariate => "control_variate requires the constant-volatility model",
                _ => "cv_antithetic requires the constant-volatility or fractional Bergomi model",
            };
            return Err(McError::Config(format!("{rule}, got {}", model.name())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    /// Independent samples behind the estimate; an antithetic pair counts once.
    pub n_effective: usize,
    /// `None` when no control was applied, including a degenerate control.
    pub control_coefficient: Option<f64>,
}

impl McEstimate {
    fn new(mean: f64, stderr: f64, n: usize, c: Option<f64>) -> Self {
        Self {
            mean,
            stderr,
            ci95: (mean - Z95 * stderr, mean + Z95 * stderr),
            n_effective: n,
            control_coefficient: c,
        }
    }

    pub fn half_width(&self) -> f64 {
        Z95 * self.stderr
    }
}

/// Estimates for several strikes from the same paths.
#[derive(Debug, Clone, PartialEq)]
pub struct StrikeStrip {
    pub strikes: Vec<f64>,
    pub estimates: Vec<McEstimate>,
    /// Row-major covariance of the mean estimators.
    covariance: Vec<f64>,
}

impl StrikeStrip {
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.strikes.len() + j]
    }
}

/// `Cov(payoffs, controls) / Var(controls)`, or `None` if the controls are constant.
pub fn cv_coefficient(payoffs: &[f64], controls: &[f64]) -> Result<Option<f64>, McError> {
    if payoffs.len() != controls.len() {
        return Err(McError::Config(format!(
            "payoffs and controls differ in length ({} vs {})",
            payoffs.len(),
            controls.len()
        )));
    }
    if payoffs.len() < 2 {
        return Err(McError::Config("need at least two samples".into()));
    }
    let mut m = Moments::new(2);
    for (y, c) in payoffs.iter().zip(controls) {
        m.push(&[*y, *c]);
    }
    Ok(coefficient(m.cov(0, 1), m.var(1)))
}

fn coefficient(cov: f64, var: f64) -> Option<f64> {
    (var > 0.0).then(|| cov / var)
}

pub fn price_asian(model: &ModelSpec, market: &MarketSetup, cfg: &McConfig) -> Result<McEstimate, McError> {
    let strip = price_asian_strikes(model, market, &[market.strike], cfg)?;
    Ok(strip.estimates[0])
}

/// Prices every strike in `strikes` on common paths (`market.strike` is ignored).
pub fn price_asian_strikes(
    model: &ModelSpec,
    market: &MarketSetup,
    strikes: &[f64],
    cfg: &McConfig,
) -> Result<StrikeStrip, McError> {
    cfg.validate(model)?;
    if strikes.is_empty() {
        return Err(McError::Config("no strikes given".into()));
    }
    for &k in strikes {
        market.with_strike(k).validate()?;
    }
    let grid = TimeGrid::with_rule(market.maturity, cfg.steps, cfg.averaging)?;
    let sim = PathSimulator::new(model, market, &grid)?;
    let control = cfg
        .estimator
        .uses_control()
        .then(|| ShadowControl::new(model, market, &grid));

    let n_strikes = strikes.len();
    let dim = if control.is_some() { 2 * n_strikes } else { n_strikes };
    let n_batches = cfg.n_paths.div_ceil(BATCH_SIZE);
    let batches: Vec<Result<Moments, McError>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH_SIZE.min(cfg.n_paths - b * BATCH_SIZE);
            let driver = GaussianDriver::new(cfg.seed, b as u64);
            run_batch(
                &sim,
                control.as_ref(),
                strikes,
                cfg.estimator.antithetic(),
                driver,
                count,
                dim,
            )
        })
        .collect();
    let mut total = Moments::new(dim);
    for batch in batches {
        total.merge(&batch?);
    }

    let n = cfg.n_paths;
    let nf = n as f64;
    let mut estimates = Vec::with_capacity(n_strikes);
    let mut coeffs = vec![0.0; n_strikes];
    for (j, &k) in strikes.iter().enumerate() {
        let Some(ctrl) = &control else {
            estimates.push(McEstimate::new(total.mean(j), (total.var(j) / nf).sqrt(), n, None));
            continue;
        };
        let cj = n_strikes + j;
        let c = coefficient(total.cov(j, cj), total.var(cj));
        let (mean, var) = match c {
            Some(c) => {
                let reference = ctrl.reference(market, k, cfg.cv_mode);
                let var = total.var(j) - 2.0 * c * total.cov(j, cj) + c * c * total.var(cj);
                (total.mean(j) - c * (total.mean(cj) - reference), var.max(0.0))
            }
            None => (total.mean(j), total.var(j)),
        };
        coeffs[j] = c.unwrap_or(0.0);
        estimates.push(McEstimate::new(mean, (var / nf).sqrt(), n, c));
    }

    let mut covariance = vec![0.0; n_strikes * n_strikes];
    for a in 0..n_strikes {
        for b in 0..n_strikes {
            let mut v = total.cov(a, b);
            if control.is_some() {
                let (ca, cb) = (coeffs[a], coeffs[b]);
                let (xa, xb) = (n_strikes + a, n_strikes + b);
                v += -cb * total.cov(a, xb) - ca * total.cov(xa, b) + ca * cb * total.cov(xa, xb);
            }
            covariance[a * n_strikes + b] = v / nf;
        }
    }
    for (j, e) in estimates.iter().enumerate() {
        covariance[j * n_strikes + j] = e.stderr * e.stderr;
    }

    Ok(StrikeStrip {
        strikes: strikes.to_vec(),
        estimates,
        covariance,
    })
}

/// Geometric average of `S0 exp(sigma W_t - sigma^2 t / 2)` on the grid.
struct ShadowControl {
    sigma: f64,
    log_offset: f64,
    grid: TimeGrid,
}

impl ShadowControl {
    fn new(model: &ModelSpec, market: &MarketSetup, grid: &TimeGrid) -> Self {
        let sigma = spot_vol(model, market);
        let mean_t: f64 = grid.weights().iter().enumerate().map(|(i, w)| w * grid.time(i)).sum();
        Self {
            sigma,
            log_offset: market.s0.ln() - 0.5 * sigma * sigma * mean_t,
            grid: grid.clone(),
        }
    }

    fn geometric_average(&self, w: &[f64]) -> f64 {
        let weighted: f64 = self.grid.weights().iter().zip(w).map(|(a, b)| a * b).sum();
        (self.log_offset + self.sigma * weighted).exp()
    }

    fn reference(&self, market: &MarketSetup, strike: f64, mode: CvMode) -> f64 {
        let m = market.with_strike(strike);
        match mode {
            CvMode::Continuous => geometric_asian_price(&m, self.sigma, GeometricMode::Continuous),
            CvMode::Discrete => geometric_asian_price(&m, self.sigma, GeometricMode::Discrete(&self.grid)),
        }
    }
}

fn run_batch(
    sim: &PathSimulator,
    control: Option<&ShadowControl>,
    strikes: &[f64],
    antithetic: bool,
    driver: GaussianDriver,
    count: usize,
    dim: usize,
) -> Result<Moments, McError> {
    let mut rng = driver.rng();
    let mut normals = vec![0.0; sim.n_normals()];
    let mut path = PathBundle::empty(sim.grid());
    let mut sample = vec![0.0; dim];
    let mut moments = Moments::new(dim);
    let n_strikes = strikes.len();
    let weights = sim.grid().weights();

    let evaluate = |path: &PathBundle, scale: f64, sample: &mut [f64]| {
        let arith: f64 = weights.iter().zip(&path.asset).map(|(w, s)| w * s).sum();
        for (j, k) in strikes.iter().enumerate() {
            sample[j] += scale * (arith - k).max(0.0);
        }
        if let Some(ctrl) = control {
            let geo = ctrl.geometric_average(&path.w);
            for (j, k) in strikes.iter().enumerate() {
                sample[n_strikes + j] += scale * (geo - k).max(0.0);
            }
        }
    };

    for _ in 0..count {
        fill_normals(&mut rng, &mut normals);
        sample.iter_mut().for_each(|v| *v = 0.0);
        sim.fill(&normals, false, &mut path)?;
        if antithetic {
            evaluate(&path, 0.5, &mut sample);
            sim.fill(&normals, true, &mut path)?;
            evaluate(&path, 0.5, &mut sample);
        } else {
            evaluate(&path, 1.0, &mut sample);
        }
        moments.push(&sample);
    }
    Ok(moments)
}
