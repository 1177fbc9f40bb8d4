//! Gauss-Jacobi quadrature.
//!
//! Nodes and weights for the weight function `(1 - x)^alpha (1 + x)^beta` on
//! `[-1, 1]` come from the Golub-Welsch eigenvalue problem on the Jacobi
//! matrix of the monic three-term recurrence. Gauss-Legendre is the case
//! `alpha = beta = 0`.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("need at least one node")]
    NoNodes,
    #[error("Jacobi exponents must be > -1, got alpha={alpha}, beta={beta}")]
    BadExponents { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussJacobi {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    alpha: f64,
    beta: f64,
}

impl GaussJacobi {
    pub fn new(n: usize, alpha: f64, beta: f64) -> Result<Self, QuadratureError> {
        if n == 0 {
            return Err(QuadratureError::NoNodes);
        }
        if !(alpha > -1.0 && beta > -1.0) {
            return Err(QuadratureError::BadExponents { alpha, beta });
        }
        let ab = alpha + beta;
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let k = i as f64;
            let diag = if i == 0 {
                (beta - alpha) / (ab + 2.0)
            } else {
                (beta * beta - alpha * alpha) / ((2.0 * k + ab) * (2.0 * k + ab + 2.0))
            };
            jacobi[(i, i)] = diag;
            if i + 1 < n {
                let j = k + 1.0;
                let num = 4.0 * j * (j + alpha) * (j + beta) * (j + ab);
                let s = 2.0 * j + ab;
                let den = s * s * (s + 1.0) * (s - 1.0);
                let off = (num / den).sqrt();
                jacobi[(i, i + 1)] = off;
                jacobi[(i + 1, i)] = off;
            }
        }
        let mu0 = 2f64.powf(ab + 1.0) * libm::tgamma(alpha + 1.0) * libm::tgamma(beta + 1.0) / libm::tgamma(ab + 2.0);

        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], mu0 * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(Self {
            nodes,
            weights,
            alpha,
            beta,
        })
    }

    pub fn legendre(n: usize) -> Result<Self, QuadratureError> {
        Self::new(n, 0.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `int_a^b (b - u)^alpha (u - a)^beta f(u) du`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let scale = half.powf(self.alpha + self.beta + 1.0);
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(a + half * (1.0 + x)))
            .sum();
        scale * sum
    }
}
