//! Market data, volatility models and their expected Malliavin-derivative kernels.
//!
//! Every model here is driven by the same three Brownian motions: `W'` moves
//! the volatility, `B` is independent of it, and the asset sees
//! `W = rho W' + sqrt(1 - rho^2) B`. Rates are zero throughout.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid market setup: {0}")]
    Market(String),
    #[error("invalid model parameters: {0}")]
    Model(String),
}

/// Spot, strike, maturity and spot/vol correlation. The interest rate is fixed at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketSetup {
    pub s0: f64,
    pub strike: f64,
    pub maturity: f64,
    pub rho: f64,
}

impl MarketSetup {
    pub fn new(s0: f64, strike: f64, maturity: f64, rho: f64) -> Result<Self, ModelError> {
        let m = Self {
            s0,
            strike,
            maturity,
            rho,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(ModelError::Market(format!("s0 must be > 0, got {}", self.s0)));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(ModelError::Market(format!("strike must be > 0, got {}", self.strike)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(ModelError::Market(format!(
                "maturity must be > 0, got {}",
                self.maturity
            )));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(ModelError::Market(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }

    /// The same contract struck elsewhere.
    pub fn with_strike(&self, strike: f64) -> Self {
        Self { strike, ..*self }
    }

    pub fn with_maturity(&self, maturity: f64) -> Self {
        Self { maturity, ..*self }
    }

    /// ATM log-strike `k* = log S_0` (the forward equals spot at zero rates).
    pub fn atm_log_strike(&self) -> f64 {
        self.s0.ln()
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A local volatility function `sigma(S)` together with its analytic derivative.
#[derive(Clone)]
pub struct LocalVol {
    label: String,
    sigma: ScalarFn,
    sigma_deriv: ScalarFn,
}

impl LocalVol {
    pub fn new<F, G>(label: impl Into<String>, sigma: F, sigma_deriv: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            sigma: Arc::new(sigma),
            sigma_deriv: Arc::new(sigma_deriv),
        }
    }

    /// CEV-type local volatility `sigma(S) = nu * S^(beta - 1)`.
    pub fn cev(nu: f64, beta: f64) -> Self {
        Self::new(
            format!("cev(nu={nu}, beta={beta})"),
            move |s| nu * s.powf(beta - 1.0),
            move |s| nu * (beta - 1.0) * s.powf(beta - 2.0),
        )
    }

    /// Affine local volatility `sigma(S) = level + slope * (S - pivot)`.
    pub fn affine(level: f64, slope: f64, pivot: f64) -> Self {
        Self::new(
            format!("affine(level={level}, slope={slope}, pivot={pivot})"),
            move |s| level + slope * (s - pivot),
            move |_| slope,
        )
    }

    pub fn sigma(&self, s: f64) -> f64 {
        (self.sigma)(s)
    }

    pub fn sigma_deriv(&self, s: f64) -> f64 {
        (self.sigma_deriv)(s)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for LocalVol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalVol").field("label", &self.label).finish()
    }
}

/// The volatility model.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    ConstantVol {
        sigma: f64,
    },
    /// `sigma_t = sigma0 exp(alpha W'_t - alpha^2 t / 2)`.
    Sabr {
        sigma0: f64,
        alpha: f64,
    },
    /// `sigma_t^2 = sigma0^2 exp(v sqrt(2H) Z_t - v^2 t^(2H) / 2)` with
    /// `Z_t = int_0^t (t - s)^(H - 1/2) dW'_s`.
    FractionalBergomi {
        sigma0: f64,
        vov: f64,
        hurst: f64,
    },
    LocalVol(LocalVol),
}

impl ModelSpec {
    /// Checks parameter ranges. A local volatility function is checked at `s0` only.
    pub fn validate(&self, market: &MarketSetup) -> Result<(), ModelError> {
        let nonneg = |name: &str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(ModelError::Model(format!("{name} must be >= 0, got {x}")))
            }
        };
        match self {
            ModelSpec::ConstantVol { sigma } => nonneg("sigma", *sigma),
            ModelSpec::Sabr { sigma0, alpha } => {
                nonneg("sigma0", *sigma0)?;
                nonneg("alpha", *alpha)
            }
            ModelSpec::FractionalBergomi { sigma0, vov, hurst } => {
                nonneg("sigma0", *sigma0)?;
                nonneg("vov", *vov)?;
                if *hurst > 0.0 && *hurst < 1.0 {
                    Ok(())
                } else {
                    Err(ModelError::Model(format!("hurst must lie in (0, 1), got {hurst}")))
                }
            }
            ModelSpec::LocalVol(lv) => {
                let s = lv.sigma(market.s0);
                if s > 0.0 && s.is_finite() {
                    Ok(())
                } else {
                    Err(ModelError::Model(format!(
                        "local volatility {} must be > 0 at s0={}, got {s}",
                        lv.label(),
                        market.s0
                    )))
                }
            }
        }
    }

    /// Roughness exponent of the volatility driver (1/2 for Markovian models).
    pub fn hurst(&self) -> f64 {
        match self {
            ModelSpec::FractionalBergomi { hurst, .. } => *hurst,
            _ => 0.5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::ConstantVol { .. } => "const",
            ModelSpec::Sabr { .. } => "sabr",
            ModelSpec::FractionalBergomi { .. } => "fbergomi",
            ModelSpec::LocalVol(_) => "localvol",
        }
    }

    /// Same model with its time-zero volatility level replaced. Local vol is returned unchanged.
    pub fn with_sigma0(&self, level: f64) -> Self {
        match self {
            ModelSpec::ConstantVol { .. } => ModelSpec::ConstantVol { sigma: level },
            ModelSpec::Sabr { alpha, .. } => ModelSpec::Sabr {
                sigma0: level,
                alpha: *alpha,
            },
            ModelSpec::FractionalBergomi { vov, hurst, .. } => ModelSpec::FractionalBergomi {
                sigma0: level,
                vov: *vov,
                hurst: *hurst,
            },
            ModelSpec::LocalVol(lv) => ModelSpec::LocalVol(lv.clone()),
        }
    }
}

/// Volatility at time zero.
pub fn spot_vol(model: &ModelSpec, market: &MarketSetup) -> f64 {
    match model {
        ModelSpec::ConstantVol { sigma } => *sigma,
        ModelSpec::Sabr { sigma0, .. } => *sigma0,
        ModelSpec::FractionalBergomi { sigma0, .. } => *sigma0,
        ModelSpec::LocalVol(lv) => lv.sigma(market.s0),
    }
}

/// Leading-order expected Malliavin derivative `(r, u) -> E[D_r^{W'} sigma_u]`.
///
/// Stored as `regular(r, u) * (u - r)^(H - 1/2)` so that quadrature can put the
/// singular factor into its weight function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SkewKernel {
    Zero,
    /// Constant kernel, `H = 1/2`.
    Constant(f64),
    /// `exp(-v^2 u^(2H) / 8) * (sigma0 v sqrt(2H) / 2) * (u - r)^(H - 1/2)`.
    FractionalBergomi {
        sigma0: f64,
        vov: f64,
        hurst: f64,
    },
}

impl SkewKernel {
    pub fn exponent(&self) -> f64 {
        match self {
            SkewKernel::FractionalBergomi { hurst, .. } => *hurst,
            _ => 0.5,
        }
    }

    /// The kernel with the `(u - r)^(H - 1/2)` factor removed.
    pub fn regular(&self, _r: f64, u: f64) -> f64 {
        match *self {
            SkewKernel::Zero => 0.0,
            SkewKernel::Constant(c) => c,
            SkewKernel::FractionalBergomi { sigma0, vov, hurst } => {
                (-0.125 * vov * vov * u.powf(2.0 * hurst)).exp() * 0.5 * sigma0 * vov * (2.0 * hurst).sqrt()
            }
        }
    }

    pub fn eval(&self, r: f64, u: f64) -> f64 {
        let h = self.exponent();
        if h == 0.5 {
            self.regular(r, u)
        } else {
            self.regular(r, u) * (u - r).powf(h - 0.5)
        }
    }

    /// Power of `T` in which the normalised double integral expands around its limit.
    ///
    /// Constant kernels are exact (any order works); the Bergomi damping factor
    /// expands in powers of `u^(2H)`.
    pub fn correction_order(&self) -> f64 {
        match self {
            SkewKernel::FractionalBergomi { hurst, .. } => 2.0 * hurst,
            _ => 1.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            SkewKernel::Zero => true,
            SkewKernel::Constant(c) => c == 0.0,
            SkewKernel::FractionalBergomi { sigma0, vov, .. } => sigma0 == 0.0 || vov == 0.0,
        }
    }
}

/// Kernel of the model. For local vol only the term `sigma'(S0) sigma(S0) S0`
/// survives the short-maturity limit, and it is meant to be used with `rho = 1`.
pub fn skew_kernel(model: &ModelSpec, market: &MarketSetup) -> SkewKernel {
    match model {
        ModelSpec::ConstantVol { .. } => SkewKernel::Zero,
        ModelSpec::Sabr { sigma0, alpha } => SkewKernel::Constant(alpha * sigma0),
        ModelSpec::FractionalBergomi { sigma0, vov, hurst } => SkewKernel::FractionalBergomi {
            sigma0: *sigma0,
            vov: *vov,
            hurst: *hurst,
        },
        ModelSpec::LocalVol(lv) => {
            let s0 = market.s0;
            SkewKernel::Constant(lv.sigma_deriv(s0) * lv.sigma(s0) * s0)
        }
    }
}
