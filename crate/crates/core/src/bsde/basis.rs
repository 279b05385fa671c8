//! Polynomial regression basis in the Brownian state and the least-squares
//! fits used by the backward induction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Paths per parallel chunk. Partial sums are combined in chunk order so
/// results do not depend on thread scheduling.
pub(crate) const CHUNK: usize = 4096;

/// Tensor-product basis of normalized probabilists' Hermite polynomials
/// `He_j(W_i / sqrt(t)) / sqrt(j!)`, `j <= degree` in each coordinate.
///
/// The scaling makes the basis orthonormal under the law of `W_t`, which
/// keeps the normal equations well conditioned at every time step.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteBasis {
    dim: usize,
    degree: usize,
    /// Per basis function, the degree in each coordinate.
    exponents: Vec<Vec<usize>>,
}

impl HermiteBasis {
    pub fn new(dim: usize, degree: usize) -> Self {
        let mut exponents = vec![vec![]];
        for _ in 0..dim {
            exponents = exponents
                .into_iter()
                .flat_map(|e| {
                    (0..=degree).map(move |j| {
                        let mut next = e.clone();
                        next.push(j);
                        next
                    })
                })
                .collect();
        }
        // constant first; lower total degree before higher
        exponents.sort_by_key(|e| (e.iter().sum::<usize>(), e.iter().rev().copied().collect::<Vec<_>>()));
        Self { dim, degree, exponents }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Number of functions in use at time `t`: only the constant at `t = 0`,
    /// where the state is degenerate.
    pub fn active_len(&self, t: f64) -> usize {
        if t > 0.0 {
            self.len()
        } else {
            1
        }
    }

    /// Writes the active basis values at `(t, state)` into `out`.
    pub fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        if t <= 0.0 {
            out[0] = 1.0;
            return;
        }
        let scale = t.sqrt();
        let mut table = vec![0.0; self.dim * (self.degree + 1)];
        for (i, w) in state.iter().enumerate() {
            let x = w / scale;
            let row = &mut table[i * (self.degree + 1)..(i + 1) * (self.degree + 1)];
            row[0] = 1.0;
            if self.degree >= 1 {
                row[1] = x;
            }
            for j in 1..self.degree {
                row[j + 1] = x * row[j] - j as f64 * row[j - 1];
            }
            let mut factorial = 1.0;
            for (j, v) in row.iter_mut().enumerate().skip(1) {
                factorial *= j as f64;
                *v /= factorial.sqrt();
            }
        }
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = e
                .iter()
                .enumerate()
                .map(|(i, &j)| table[i * (self.degree + 1) + j])
                .product();
        }
    }

    pub fn combine(&self, t: f64, state: &[f64], coefficients: &[f64]) -> f64 {
        let mut phi = vec![0.0; self.len()];
        self.eval(t, state, &mut phi);
        coefficients.iter().zip(&phi).map(|(c, p)| c * p).sum()
    }
}

/// Basis values of every path at one time step, row-major `[path][basis]`.
pub(crate) struct Design {
    pub cols: usize,
    pub rows: Vec<f64>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Design {
    /// `states` is laid out `[path][dim]`.
    pub fn new(basis: &HermiteBasis, t: f64, states: &[f64], step: usize) -> Result<Self> {
        let cols = basis.active_len(t);
        let dim = basis.dim().max(1);
        let paths = states.len() / dim;
        let mut rows = vec![0.0; paths * cols];
        rows.par_chunks_mut(cols * CHUNK)
            .zip(states.par_chunks(dim * CHUNK))
            .for_each(|(out, st)| {
                let mut buf = vec![0.0; basis.len()];
                for (o, s) in out.chunks_mut(cols).zip(st.chunks(dim)) {
                    basis.eval(t, s, &mut buf);
                    o.copy_from_slice(&buf[..cols]);
                }
            });
        let partials: Vec<Vec<f64>> = rows
            .par_chunks(cols * CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; cols * cols];
                for r in chunk.chunks(cols) {
                    for a in 0..cols {
                        for b in a..cols {
                            g[a * cols + b] += r[a] * r[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = DMatrix::<f64>::zeros(cols, cols);
        for g in &partials {
            for a in 0..cols {
                for b in a..cols {
                    gram[(a, b)] += g[a * cols + b];
                }
            }
        }
        for a in 0..cols {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let max_diag = (0..cols).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
        let factor = gram.cholesky().ok_or(Error::RegressionSingular { step })?;
        let min_pivot = factor.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
        if !(max_diag > 0.0 && min_pivot > 1e-12 * max_diag) {
            return Err(Error::RegressionSingular { step });
        }
        Ok(Self { cols, rows, factor })
    }

    pub fn paths(&self) -> usize {
        self.rows.len() / self.cols
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.rows[path * self.cols..(path + 1) * self.cols]
    }

    /// Least-squares coefficients for a target given per path by `target(path)`.
    pub fn fit(&self, target: impl Fn(usize) -> f64 + Sync) -> Vec<f64> {
        let cols = self.cols;
        let partials: Vec<Vec<f64>> = self
            .rows
            .par_chunks(cols * CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut acc = vec![0.0; cols];
                for (i, r) in chunk.chunks(cols).enumerate() {
                    let y = target(c * CHUNK + i);
                    for (a, v) in acc.iter_mut().zip(r) {
                        *a += v * y;
                    }
                }
                acc
            })
            .collect();
        let mut rhs = DVector::<f64>::zeros(cols);
        for p in &partials {
            for (a, v) in rhs.iter_mut().zip(p) {
                *a += v;
            }
        }
        self.factor.solve(&rhs).iter().copied().collect()
    }

    pub fn predict(&self, path: usize, coefficients: &[f64]) -> f64 {
        self.row(path).iter().zip(coefficients).map(|(a, b)| a * b).sum()
    }

    /// Coefficient of determination of a fit; 1 when the target is constant.
    pub fn r_squared(&self, target: impl Fn(usize) -> f64 + Sync, coefficients: &[f64]) -> f64 {
        let n = self.paths();
        let mean = chunked_sum(n, &target) / n as f64;
        let total = chunked_sum(n, |i| (target(i) - mean).powi(2));
        let residual = chunked_sum(n, |i| (target(i) - self.predict(i, coefficients)).powi(2));
        if total <= f64::EPSILON * f64::EPSILON * (1.0 + mean * mean) * n as f64 {
            1.0
        } else {
            1.0 - residual / total
        }
    }
}

/// `sum_{i < n} f(i)`, reduced in fixed chunk order.
pub(crate) fn chunked_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    partials.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes_and_order() {
        let b = HermiteBasis::new(2, 3);
        assert_eq!(b.len(), 16);
        assert_eq!(b.exponents[0], vec![0, 0]);
        assert_eq!(HermiteBasis::new(1, 3).len(), 4);
        assert_eq!(b.active_len(0.0), 1);
    }

    #[test]
    fn hermite_values() {
        let b = HermiteBasis::new(1, 3);
        let mut out = [0.0; 4];
        // t = 4, W = 2 gives x = 1
        b.eval(4.0, &[2.0], &mut out);
        let expected = [1.0, 1.0, 0.0, (1.0 - 3.0) / 6f64.sqrt()];
        for (a, e) in out.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn basis_is_orthonormal_under_gaussian_quadrature() {
        // 3-point Gauss-Hermite (probabilists') nodes integrate degree <= 5
        // exactly, enough for products of degree <= 2 polynomials
        let nodes = [-(3f64.sqrt()), 0.0, 3f64.sqrt()];
        let weights = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
        let b = HermiteBasis::new(1, 2);
        let t = 0.7;
        let mut gram = [[0.0; 3]; 3];
        let mut phi = [0.0; 3];
        for (x, w) in nodes.iter().zip(weights) {
            b.eval(t, &[x * t.sqrt()], &mut phi);
            for i in 0..3 {
                for j in 0..3 {
                    gram[i][j] += w * phi[i] * phi[j];
                }
            }
        }
        for (i, row) in gram.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn regression_recovers_polynomial() {
        let b = HermiteBasis::new(1, 3);
        let t = 0.5;
        let states: Vec<f64> = (0..400).map(|i| -2.0 + 4.0 * i as f64 / 399.0).collect();
        let design = Design::new(&b, t, &states, 0).unwrap();
        let target = |i: usize| 1.0 + 2.0 * states[i] - states[i].powi(3);
        let coef = design.fit(target);
        for (i, w) in states.iter().enumerate() {
            assert!((b.combine(t, &[*w], &coef) - target(i)).abs() < 1e-10);
        }
        assert!((design.r_squared(target, &coef) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_states_are_singular() {
        let b = HermiteBasis::new(1, 3);
        let states = vec![0.3; 100];
        assert!(matches!(
            Design::new(&b, 1.0, &states, 7),
            Err(Error::RegressionSingular { step: 7 })
        ));
    }
}
