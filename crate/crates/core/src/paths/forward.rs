//! Forward price of the path average and the volatility of its logarithm.

use super::PathBundle;

/// Per-node forward diagnostics of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    /// `M_{t_i} = E[A | F_{t_i}]` for the discrete average `A`.
    pub m_path: Vec<f64>,
    /// `phi_{t_i} = sigma_{t_i} S_{t_i} (T - t_i) / (T M_{t_i})`.
    pub phi_path: Vec<f64>,
    /// `sqrt((1/T) sum_{i<m} phi_{t_i}^2 dt)`.
    pub v0: f64,
    pub a_t: f64,
}

/// With zero rates `E[S_j | F_{t_i}] = S_{t_i}` for `j > i`, so the forward of
/// `A = sum_j w_j S_{t_j}` is the realised part plus the spot times the
/// remaining weight. Under trapezoidal weights this is the trapezoidal
/// version of `(1/T)(int_0^t S_u du + S_t (T - t))`.
pub fn forward_diagnostics(bundle: &PathBundle) -> ForwardState {
    let grid = &bundle.grid;
    let m = grid.steps();
    let weights = grid.weights();
    let s = &bundle.asset;

    let mut remaining = vec![0.0; m + 1];
    for i in (0..m).rev() {
        remaining[i] = remaining[i + 1] + weights[i + 1];
    }

    let mut m_path = Vec::with_capacity(m + 1);
    let mut realised = 0.0;
    for i in 0..=m {
        realised += weights[i] * s[i];
        m_path.push(realised + remaining[i] * s[i]);
    }
    // w_0 + remaining_0 = 1 up to rounding
    m_path[0] = s[0];

    let mf = m as f64;
    let phi_path: Vec<f64> = (0..=m)
        .map(|i| {
            let time_left = (m - i) as f64 / mf;
            bundle.vol[i] * s[i] * time_left / m_path[i]
        })
        .collect();

    let v0 = (phi_path[..m].iter().map(|p| p * p).sum::<f64>() / mf).sqrt();
    ForwardState {
        a_t: m_path[m],
        m_path,
        phi_path,
        v0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LocalVol, MarketSetup, ModelSpec};
    use crate::paths::{averages, simulate_paths, AveragingRule, GaussianDriver, TimeGrid};

    fn bundles() -> Vec<PathBundle> {
        let market = MarketSetup::new(10.0, 10.0, 0.05, -0.5).unwrap();
        let models = [
            ModelSpec::ConstantVol { sigma: 0.6 },
            ModelSpec::Sabr {
                sigma0: 0.5,
                alpha: 1.5,
            },
            ModelSpec::FractionalBergomi {
                sigma0: 0.3,
                vov: 1.2,
                hurst: 0.2,
            },
            ModelSpec::LocalVol(LocalVol::cev(0.3, 0.5)),
        ];
        let mut out = Vec::new();
        for rule in [AveragingRule::Trapezoid, AveragingRule::EqualWeight] {
            let grid = TimeGrid::with_rule(0.05, 25, rule).unwrap();
            for (k, model) in models.iter().enumerate() {
                for stream in 0..5 {
                    let d = GaussianDriver::new(k as u64, stream);
                    out.push(simulate_paths(model, &market, &grid, d, stream % 2 == 1).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn endpoints() {
        for b in bundles() {
            let f = forward_diagnostics(&b);
            assert_eq!(f.m_path[0], b.asset[0]);
            assert_eq!(f.phi_path[0], b.vol[0]);
            let (arith, _) = averages(&b);
            assert_eq!(f.m_path[b.grid.steps()], arith);
            assert_eq!(f.a_t, arith);
        }
    }

    #[test]
    fn forward_vol_never_exceeds_spot_vol() {
        for b in bundles() {
            let f = forward_diagnostics(&b);
            for (i, (phi, sigma)) in f.phi_path.iter().zip(&b.vol).enumerate() {
                assert!(phi <= sigma, "node {i}: phi={phi} sigma={sigma}");
            }
        }
    }
}
