//! Exact joint sampling of `W'` and the Riemann-Liouville process
//! `Z_t = int_0^t (t - s)^(H - 1/2) dW'_s` on a uniform grid.
//!
//! The `2m x 2m` covariance of `(W'_{t_1..t_m}, Z_{t_1..t_m})` is assembled
//! once and Cholesky-factorised; each sample is then one triangular
//! matrix-vector product.

use nalgebra::DMatrix;

use super::{PathError, TimeGrid};
use crate::quadrature::GaussJacobi;

const COV_NODES: usize = 64;

/// `Cov(Z_t, Z_t) = t^(2H) / (2H)`.
pub fn rl_variance(t: f64, hurst: f64) -> f64 {
    t.powf(2.0 * hurst) / (2.0 * hurst)
}

/// `Cov(Z_t, W'_s) = (t^(H+1/2) - (t - min(s,t))^(H+1/2)) / (H + 1/2)`.
pub fn rl_cross_covariance(t: f64, s: f64, hurst: f64) -> f64 {
    let p = hurst + 0.5;
    let m = s.min(t);
    (t.powf(p) - (t - m).powf(p)) / p
}

/// Evaluates `Cov(Z_t, Z_s)` with a rule that already carries the
/// `(min - u)^(H - 1/2)` endpoint singularity in its weight.
struct RlCovariance {
    rule: GaussJacobi,
    hurst: f64,
}

impl RlCovariance {
    fn new(hurst: f64) -> Self {
        let rule = GaussJacobi::new(COV_NODES, hurst - 0.5, 0.0).expect("hurst in (0,1) gives a valid Jacobi exponent");
        Self { rule, hurst }
    }

    fn eval(&self, t: f64, s: f64) -> f64 {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        if lo <= 0.0 {
            return 0.0;
        }
        if lo == hi {
            return rl_variance(lo, self.hurst);
        }
        let a = self.hurst - 0.5;
        self.rule.integrate(0.0, lo, |u| (hi - u).powf(a))
    }
}

/// `Cov(Z_t, Z_s) = int_0^min (t - u)^(H-1/2) (s - u)^(H-1/2) du`.
pub fn rl_covariance(t: f64, s: f64, hurst: f64) -> f64 {
    RlCovariance::new(hurst).eval(t, s)
}

/// Precomputed Cholesky factor for `(W', Z)` on a fixed grid.
#[derive(Debug, Clone)]
pub struct JointGaussianSampler {
    steps: usize,
    hurst: f64,
    covariance: DMatrix<f64>,
    /// Packed lower triangle, row-major.
    lower: Vec<f64>,
}

impl JointGaussianSampler {
    pub fn new(grid: &TimeGrid, hurst: f64) -> Result<Self, PathError> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(PathError::InvalidHurst(hurst));
        }
        let m = grid.steps();
        if m > 1000 {
            return Err(PathError::GridTooLarge(m));
        }
        let times: Vec<f64> = (1..=m).map(|i| grid.time(i)).collect();
        let rl = RlCovariance::new(hurst);
        let n = 2 * m;
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for i in 0..m {
            for j in 0..=i {
                let (ti, tj) = (times[i], times[j]);
                let ww = ti.min(tj);
                let zz = rl.eval(ti, tj);
                cov[(i, j)] = ww;
                cov[(j, i)] = ww;
                cov[(m + i, m + j)] = zz;
                cov[(m + j, m + i)] = zz;
            }
            for j in 0..m {
                // row Z_{t_i}, column W'_{t_j}
                let zw = rl_cross_covariance(times[i], times[j], hurst);
                cov[(m + i, j)] = zw;
                cov[(j, m + i)] = zw;
            }
        }

        let jitter = 1e-12 * cov.trace() / n as f64;
        let mut jittered = cov.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        let chol = jittered.cholesky().ok_or(PathError::NotPositiveDefinite {
            steps: m,
            maturity: grid.maturity(),
            hurst,
        })?;
        let l = chol.l();
        let mut lower = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                lower.push(l[(i, j)]);
            }
        }
        Ok(Self {
            steps: m,
            hurst,
            covariance: cov,
            lower,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Number of standard normals consumed per sample.
    pub fn dim(&self) -> usize {
        2 * self.steps
    }

    /// Analytic covariance (without jitter), ordered `W'_{t_1..t_m}` then `Z_{t_1..t_m}`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Maps `2m` standard normals (each multiplied by `sign`) to node values.
    /// `w_prime` and `z` receive `m + 1` entries with a leading zero at `t_0`.
    pub fn sample_into(&self, normals: &[f64], sign: f64, w_prime: &mut [f64], z: &mut [f64]) {
        let m = self.steps;
        debug_assert_eq!(normals.len(), 2 * m);
        w_prime[0] = 0.0;
        z[0] = 0.0;
        let mut offset = 0;
        for i in 0..2 * m {
            let row = &self.lower[offset..offset + i + 1];
            offset += i + 1;
            let v: f64 = row.iter().zip(normals).map(|(l, e)| l * e).sum::<f64>() * sign;
            if i < m {
                w_prime[i + 1] = v;
            } else {
                z[i - m + 1] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn off_diagonal_covariance_matches_high_precision_quadrature() {
        // mpmath.quad at 30 digits
        let cases = [
            (0.4, 1.0, 0.5, 0.61526535306051117497),
            (0.4, 0.3, 0.2, 0.30907556641177899425),
            (0.4, 0.02, 0.001, 0.0032871391511281207724),
            (0.7, 1.0, 0.5, 0.34356472720056730403),
            (0.7, 0.3, 0.2, 0.087785551732061479463),
            (0.7, 0.02, 0.001, 0.000095284191205052231324),
        ];
        for (h, t, s, expect) in cases {
            let got = rl_covariance(t, s, h);
            assert!((got / expect - 1.0).abs() < 1e-12, "H={h} t={t} s={s}: {got}");
            assert_eq!(got, rl_covariance(s, t, h));
        }
    }

    #[test]
    fn diagonal_is_closed_form_and_continuous() {
        let h = 0.4;
        assert!((rl_variance(0.5, h) - 0.5f64.powf(0.8) / 0.8).abs() < 1e-15);
        assert!((rl_variance(0.5, h) - 0.717937).abs() < 1e-6);
        // approaching the diagonal from off-diagonal points
        let near = rl_covariance(0.5, 0.5 * (1.0 - 1e-4), h);
        assert!((near / rl_variance(0.5, h) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn brownian_case() {
        assert!((rl_variance(1.0, 0.5) - 1.0).abs() < 1e-15);
        assert!((rl_cross_covariance(1.0, 1.0, 0.5) - 1.0).abs() < 1e-15);
        assert!((rl_covariance(1.0, 0.3, 0.5) - 0.3).abs() < 1e-14);
    }

    #[test]
    fn cross_covariance_ignores_future_increments() {
        let h = 0.3;
        let at = rl_cross_covariance(0.4, 0.4, h);
        assert_eq!(rl_cross_covariance(0.4, 0.9, h), at);
    }

    #[test]
    fn factorises_at_half_where_z_equals_w() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let s = JointGaussianSampler::new(&grid, 0.5).unwrap();
        assert_eq!(s.dim(), 40);
    }

    #[test]
    fn rejects_bad_hurst() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        assert!(JointGaussianSampler::new(&grid, 0.0).is_err());
        assert!(JointGaussianSampler::new(&grid, 1.0).is_err());
    }
}
