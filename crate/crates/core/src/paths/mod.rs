//! Path generation on a uniform grid.
//!
//! A path draws `W'` (or `(W', Z)` jointly for fractional Bergomi) and an
//! independent `B`, builds the volatility exactly at the nodes, and moves the
//! asset with a log-Euler step
//! `S_{i+1} = S_i exp(sigma_i dW_i - sigma_i^2 dt / 2)`,
//! `dW_i = rho dW'_i + sqrt(1 - rho^2) dB_i`.
//!
//! The antithetic companion of a path negates every Gaussian draw.

mod fbm;
mod forward;

use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{MarketSetup, ModelError, ModelSpec};

pub use fbm::{rl_covariance, rl_cross_covariance, rl_variance, JointGaussianSampler};
pub use forward::{forward_diagnostics, ForwardState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("grid needs at least one step")]
    NoSteps,
    #[error("grid maturity must be > 0, got {0}")]
    BadMaturity(f64),
    #[error("hurst must lie in (0, 1), got {0}")]
    InvalidHurst(f64),
    #[error("dense Cholesky sampling supports at most 1000 steps, got {0}")]
    GridTooLarge(usize),
    #[error(
        "joint (W', Z) covariance is not positive definite after jitter \
         (grid: {steps} steps over T={maturity}, H={hurst})"
    )]
    NotPositiveDefinite { steps: usize, maturity: f64, hurst: f64 },
    #[error("non-finite or non-positive {quantity} at node {node}: {value}")]
    InvalidValue {
        quantity: &'static str,
        node: usize,
        value: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How the discrete path average weights the `m + 1` grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingRule {
    /// Trapezoidal weights `1/(2m), 1/m, ..., 1/m, 1/(2m)`: the trapezoidal
    /// rule for `(1/T) int_0^T S_t dt`.
    #[default]
    Trapezoid,
    /// Equal weights `1/(m + 1)` on every node including both endpoints.
    EqualWeight,
}

impl FromStr for AveragingRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "trapezoid" => Ok(AveragingRule::Trapezoid),
            "equal_weight" => Ok(AveragingRule::EqualWeight),
            other => Err(format!(
                "unknown averaging rule `{other}` (expected trapezoid or equal_weight)"
            )),
        }
    }
}

/// Uniform grid `t_i = i T / m`, `i = 0..=m`, with its averaging weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    maturity: f64,
    steps: usize,
    rule: AveragingRule,
    weights: Vec<f64>,
}

impl TimeGrid {
    pub fn new(maturity: f64, steps: usize) -> Result<Self, PathError> {
        Self::with_rule(maturity, steps, AveragingRule::default())
    }

    pub fn with_rule(maturity: f64, steps: usize, rule: AveragingRule) -> Result<Self, PathError> {
        if steps == 0 {
            return Err(PathError::NoSteps);
        }
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(PathError::BadMaturity(maturity));
        }
        let m = steps as f64;
        let weights = match rule {
            AveragingRule::Trapezoid => (0..=steps)
                .map(|i| if i == 0 || i == steps { 0.5 / m } else { 1.0 / m })
                .collect(),
            AveragingRule::EqualWeight => vec![1.0 / (m + 1.0); steps + 1],
        };
        Ok(Self {
            maturity,
            steps,
            rule,
            weights,
        })
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rule(&self) -> AveragingRule {
        self.rule
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.maturity
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mean and variance of `log G` where `G = prod S_i^{w_i}` and
    /// `S` is a driftless geometric Brownian motion with volatility `sigma`.
    pub fn geometric_log_moments(&self, log_s0: f64, sigma: f64) -> (f64, f64) {
        let var_rate = sigma * sigma;
        let mean_t: f64 = self.weights.iter().enumerate().map(|(i, w)| w * self.time(i)).sum();
        // sum_{i,j} w_i w_j min(t_i, t_j) = sum_l dt_l (sum_{i > l} w_i)^2
        let mut tail = 0.0;
        let mut quad = 0.0;
        for l in (0..self.steps).rev() {
            tail += self.weights[l + 1];
            quad += (self.time(l + 1) - self.time(l)) * tail * tail;
        }
        (log_s0 - 0.5 * var_rate * mean_t, var_rate * quad)
    }
}

/// Identifies an independent Gaussian substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianDriver {
    pub seed: u64,
    pub stream: u64,
}

impl GaussianDriver {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

pub(crate) fn fill_normals<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for z in out.iter_mut() {
        *z = rng.sample(StandardNormal);
    }
}

/// One simulated scenario. All node vectors hold `m + 1` values.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub w_prime: Vec<f64>,
    /// Increments of `B`, `m` values.
    pub b: Vec<f64>,
    /// Empty unless the model is fractional Bergomi.
    pub z: Vec<f64>,
    /// The asset driver `W = rho W' + sqrt(1 - rho^2) B` at the nodes.
    pub w: Vec<f64>,
    pub vol: Vec<f64>,
    pub asset: Vec<f64>,
    pub antithetic: bool,
}

impl PathBundle {
    pub fn empty(grid: &TimeGrid) -> Self {
        let n = grid.steps() + 1;
        Self {
            grid: grid.clone(),
            w_prime: vec![0.0; n],
            b: vec![0.0; n - 1],
            z: Vec::new(),
            w: vec![0.0; n],
            vol: vec![0.0; n],
            asset: vec![0.0; n],
            antithetic: false,
        }
    }
}

enum VolDriver {
    Constant(f64),
    Sabr {
        sigma0: f64,
        alpha: f64,
    },
    Bergomi {
        sigma0: f64,
        vov: f64,
        hurst: f64,
        sampler: JointGaussianSampler,
    },
    Local,
}

/// Reusable simulator for one `(model, market, grid)` triple.
pub struct PathSimulator {
    model: ModelSpec,
    market: MarketSetup,
    grid: TimeGrid,
    driver: VolDriver,
}

impl PathSimulator {
    pub fn new(model: &ModelSpec, market: &MarketSetup, grid: &TimeGrid) -> Result<Self, PathError> {
        market.validate()?;
        model.validate(market)?;
        let driver = match model {
            ModelSpec::ConstantVol { sigma } => VolDriver::Constant(*sigma),
            ModelSpec::Sabr { sigma0, alpha } => VolDriver::Sabr {
                sigma0: *sigma0,
                alpha: *alpha,
            },
            ModelSpec::FractionalBergomi { sigma0, vov, hurst } => VolDriver::Bergomi {
                sigma0: *sigma0,
                vov: *vov,
                hurst: *hurst,
                sampler: JointGaussianSampler::new(grid, *hurst)?,
            },
            ModelSpec::LocalVol(_) => VolDriver::Local,
        };
        Ok(Self {
            model: model.clone(),
            market: *market,
            grid: grid.clone(),
            driver,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn market(&self) -> &MarketSetup {
        &self.market
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Standard normals consumed by one path.
    pub fn n_normals(&self) -> usize {
        let m = self.grid.steps();
        match self.driver {
            VolDriver::Bergomi { .. } => 3 * m,
            _ => 2 * m,
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R, antithetic: bool) -> Result<PathBundle, PathError> {
        let mut normals = vec![0.0; self.n_normals()];
        fill_normals(rng, &mut normals);
        let mut out = PathBundle::empty(&self.grid);
        self.fill(&normals, antithetic, &mut out)?;
        Ok(out)
    }

    /// Builds the path from `n_normals()` standard normals; `antithetic` negates them all.
    pub fn fill(&self, normals: &[f64], antithetic: bool, out: &mut PathBundle) -> Result<(), PathError> {
        let m = self.grid.steps();
        debug_assert_eq!(normals.len(), self.n_normals());
        let sign = if antithetic { -1.0 } else { 1.0 };
        let dt = self.grid.dt();
        let sqrt_dt = dt.sqrt();
        let rho = self.market.rho;
        let rho_bar = (1.0 - rho * rho).max(0.0).sqrt();
        out.antithetic = antithetic;

        let b_normals = match &self.driver {
            VolDriver::Bergomi { sampler, .. } => {
                out.z.resize(m + 1, 0.0);
                sampler.sample_into(&normals[..2 * m], sign, &mut out.w_prime, &mut out.z);
                &normals[2 * m..]
            }
            _ => {
                out.z.clear();
                out.w_prime[0] = 0.0;
                for i in 0..m {
                    out.w_prime[i + 1] = out.w_prime[i] + sign * sqrt_dt * normals[i];
                }
                &normals[m..]
            }
        };
        for (b, n) in out.b.iter_mut().zip(b_normals) {
            *b = sign * sqrt_dt * n;
        }
        out.w[0] = 0.0;
        for i in 0..m {
            let dwp = out.w_prime[i + 1] - out.w_prime[i];
            out.w[i + 1] = out.w[i] + rho * dwp + rho_bar * out.b[i];
        }

        match &self.driver {
            VolDriver::Constant(s) => out.vol.iter_mut().for_each(|v| *v = *s),
            VolDriver::Sabr { sigma0, alpha } => {
                for i in 0..=m {
                    let t = self.grid.time(i);
                    out.vol[i] = sigma0 * (alpha * out.w_prime[i] - 0.5 * alpha * alpha * t).exp();
                }
            }
            VolDriver::Bergomi { sigma0, vov, hurst, .. } => {
                let loading = 0.5 * vov * (2.0 * hurst).sqrt();
                for i in 0..=m {
                    let t = self.grid.time(i);
                    out.vol[i] = sigma0 * (loading * out.z[i] - 0.25 * vov * vov * t.powf(2.0 * hurst)).exp();
                }
            }
            VolDriver::Local => {}
        }

        let local = match &self.model {
            ModelSpec::LocalVol(lv) => Some(lv),
            _ => None,
        };
        out.asset[0] = self.market.s0;
        if let Some(lv) = local {
            out.vol[0] = lv.sigma(self.market.s0);
        }
        for i in 0..m {
            let sigma = out.vol[i];
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(PathError::InvalidValue {
                    quantity: "volatility",
                    node: i,
                    value: sigma,
                });
            }
            let dw = out.w[i + 1] - out.w[i];
            let next = out.asset[i] * (sigma * dw - 0.5 * sigma * sigma * dt).exp();
            if !(next.is_finite() && next > 0.0) {
                return Err(PathError::InvalidValue {
                    quantity: "asset",
                    node: i + 1,
                    value: next,
                });
            }
            out.asset[i + 1] = next;
            if let Some(lv) = local {
                out.vol[i + 1] = lv.sigma(next);
            }
        }
        let last = out.vol[m];
        if !(last.is_finite() && last >= 0.0) {
            return Err(PathError::InvalidValue {
                quantity: "volatility",
                node: m,
                value: last,
            });
        }
        Ok(())
    }
}

/// Simulates the first path of the driver's substream.
pub fn simulate_paths(
    model: &ModelSpec,
    market: &MarketSetup,
    grid: &TimeGrid,
    driver: GaussianDriver,
    antithetic: bool,
) -> Result<PathBundle, PathError> {
    let sim = PathSimulator::new(model, market, grid)?;
    sim.draw(&mut driver.rng(), antithetic)
}

/// One joint draw of `(W', Z)` at the grid nodes, each with a leading zero at `t_0`.
pub fn sample_joint_gaussian(
    grid: &TimeGrid,
    hurst: f64,
    driver: GaussianDriver,
) -> Result<(Vec<f64>, Vec<f64>), PathError> {
    let sampler = JointGaussianSampler::new(grid, hurst)?;
    let mut normals = vec![0.0; sampler.dim()];
    fill_normals(&mut driver.rng(), &mut normals);
    let mut w = vec![0.0; grid.steps() + 1];
    let mut z = vec![0.0; grid.steps() + 1];
    sampler.sample_into(&normals, 1.0, &mut w, &mut z);
    Ok((w, z))
}

/// Weighted arithmetic and geometric means of the asset path.
pub fn averages(bundle: &PathBundle) -> (f64, f64) {
    average_pair(bundle.grid.weights(), &bundle.asset)
}

pub(crate) fn average_pair(weights: &[f64], asset: &[f64]) -> (f64, f64) {
    let mut arith = 0.0;
    let mut log_geo = 0.0;
    for (w, s) in weights.iter().zip(asset) {
        arith += w * s;
        log_geo += w * s.ln();
    }
    (arith, log_geo.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{spot_vol, LocalVol};

    fn market() -> MarketSetup {
        MarketSetup::new(10.0, 10.0, 1.0 / 252.0, -0.3).unwrap()
    }

    #[test]
    fn grid_nodes_and_weights() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.weights(), &[0.125, 0.25, 0.25, 0.25, 0.125]);
        let e = TimeGrid::with_rule(2.0, 4, AveragingRule::EqualWeight).unwrap();
        assert!(e.weights().iter().all(|&w| w == 0.2));
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 3).is_err());
    }

    #[test]
    fn two_node_averages() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let mut b = PathBundle::empty(&g);
        b.asset = vec![1.0, 2f64.exp()];
        let (a, geo) = averages(&b);
        assert!((a - 4.194528049465325).abs() < 1e-12);
        assert!((geo - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn constant_path_averages() {
        for rule in [AveragingRule::Trapezoid, AveragingRule::EqualWeight] {
            let g = TimeGrid::with_rule(1.0, 50, rule).unwrap();
            let mut b = PathBundle::empty(&g);
            b.asset = vec![7.5; 51];
            let (a, geo) = averages(&b);
            assert!((a - 7.5).abs() < 1e-13);
            assert!((geo - 7.5).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_vol_path_is_flat_in_vol() {
        let g = TimeGrid::new(1.0 / 252.0, 50).unwrap();
        let p = simulate_paths(
            &ModelSpec::ConstantVol { sigma: 0.3 },
            &market(),
            &g,
            GaussianDriver::new(1, 0),
            false,
        )
        .unwrap();
        assert!(p.vol.iter().all(|&v| v == 0.3));
        assert_eq!(p.asset[0], 10.0);
        assert!(p.z.is_empty());
    }

    #[test]
    fn bergomi_without_vov_is_flat() {
        let g = TimeGrid::new(0.01, 20).unwrap();
        let p = simulate_paths(
            &ModelSpec::FractionalBergomi {
                sigma0: 0.25,
                vov: 0.0,
                hurst: 0.3,
            },
            &market(),
            &g,
            GaussianDriver::new(9, 2),
            false,
        )
        .unwrap();
        assert!(p.vol.iter().all(|&v| v == 0.25));
        assert_eq!(p.z.len(), 21);
    }

    #[test]
    fn first_node_matches_spot_vol() {
        let g = TimeGrid::new(0.1, 10).unwrap();
        let models = [
            ModelSpec::Sabr {
                sigma0: 0.4,
                alpha: 0.9,
            },
            ModelSpec::FractionalBergomi {
                sigma0: 0.3,
                vov: 1.0,
                hurst: 0.2,
            },
            ModelSpec::LocalVol(LocalVol::cev(0.3, 0.5)),
        ];
        for model in &models {
            let p = simulate_paths(model, &market(), &g, GaussianDriver::new(3, 0), true).unwrap();
            assert_eq!(p.vol[0], spot_vol(model, &market()));
            assert!(p.vol.iter().all(|&v| v > 0.0));
            assert!(p.asset.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn antithetic_constant_vol_log_returns_cancel() {
        let g = TimeGrid::new(0.5, 30).unwrap();
        let model = ModelSpec::ConstantVol { sigma: 0.3 };
        let d = GaussianDriver::new(17, 4);
        let base = simulate_paths(&model, &market(), &g, d, false).unwrap();
        let anti = simulate_paths(&model, &market(), &g, d, true).unwrap();
        for i in 0..=30 {
            assert_eq!(anti.w[i], -base.w[i]);
        }
        let lr = |p: &PathBundle| (p.asset[30] / p.asset[0]).ln();
        let avg = 0.5 * (lr(&base) + lr(&anti));
        assert!((avg + 0.5 * 0.09 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_fixed_stream() {
        let g = TimeGrid::new(0.01, 10).unwrap();
        let model = ModelSpec::FractionalBergomi {
            sigma0: 0.3,
            vov: 0.5,
            hurst: 0.4,
        };
        let a = simulate_paths(&model, &market(), &g, GaussianDriver::new(5, 1), false).unwrap();
        let b = simulate_paths(&model, &market(), &g, GaussianDriver::new(5, 1), false).unwrap();
        let c = simulate_paths(&model, &market(), &g, GaussianDriver::new(5, 2), false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.asset, c.asset);
    }

    #[test]
    fn exploding_local_vol_reports_node() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let lv = LocalVol::new("blowup", |s: f64| if s > 0.0 { 1e200 } else { 1.0 }, |_| 0.0);
        let err = simulate_paths(
            &ModelSpec::LocalVol(lv),
            &market(),
            &g,
            GaussianDriver::new(1, 0),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, PathError::InvalidValue { node: 1, .. }), "{err}");
    }

    #[test]
    fn discrete_geometric_moments_match_direct_double_sum() {
        for rule in [AveragingRule::Trapezoid, AveragingRule::EqualWeight] {
            let g = TimeGrid::with_rule(0.7, 13, rule).unwrap();
            let t = g.times();
            let w = g.weights();
            let mut direct = 0.0;
            for i in 0..t.len() {
                for j in 0..t.len() {
                    direct += w[i] * w[j] * t[i].min(t[j]);
                }
            }
            let (_, var) = g.geometric_log_moments(0.0, 1.0);
            assert!((var - direct).abs() < 1e-15);
        }
    }
}
