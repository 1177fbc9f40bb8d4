//! Streaming sample statistics.

/// Running mean and co-moment matrix of a fixed-width sample vector.
///
/// Updates use Welford's recurrence and partial results merge with the
/// pairwise formula of Chan, Golub and LeVeque, so a map-reduce over batches
/// merged in a fixed order is reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    n: u64,
    mean: Vec<f64>,
    /// Row-major `dim x dim` sums of centred cross-products.
    comoment: Vec<f64>,
    scratch: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            scratch: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        self.n += 1;
        let inv_n = 1.0 / self.n as f64;
        for i in 0..d {
            let delta = x[i] - self.mean[i];
            self.scratch[i] = delta;
            self.mean[i] += delta * inv_n;
        }
        for i in 0..d {
            let di = self.scratch[i];
            let row = &mut self.comoment[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += di * (x[j] - self.mean[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        let d = self.dim();
        assert_eq!(d, other.dim());
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            self.n = other.n;
            self.mean.copy_from_slice(&other.mean);
            self.comoment.copy_from_slice(&other.comoment);
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..d {
            self.scratch[i] = other.mean[i] - self.mean[i];
        }
        let factor = na * nb / n;
        for i in 0..d {
            for j in 0..d {
                self.comoment[i * d + j] += other.comoment[i * d + j] + self.scratch[i] * self.scratch[j] * factor;
            }
        }
        for i in 0..d {
            self.mean[i] += self.scratch[i] * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Unbiased sample covariance.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.comoment[i * self.dim() + j] / (self.n - 1) as f64
    }

    pub fn var(&self, i: usize) -> f64 {
        self.cov(i, i)
    }
}

/// Linear-interpolation quantile (numpy's default) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Sorts a copy (NaNs dropped) and returns `(median, q, max)`; `None` if nothing is left.
pub fn summary(values: &[f64], q: f64) -> Option<(f64, f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some((quantile_sorted(&v, 0.5), quantile_sorted(&v, q), *v.last().unwrap()))
}

/// Ordinary least squares `y ~ a + b * x`, returning `(a, b)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}
