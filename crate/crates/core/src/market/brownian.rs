use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use super::MarketModel;
use crate::error::{Error, Result};

/// Strictly increasing time points `0 = t_0 < ... < t_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::BadGrid(format!(
                "need at least two time points, got {}",
                points.len()
            )));
        }
        if points[0] != 0.0 {
            return Err(Error::BadGrid(format!("grid must start at 0, starts at {}", points[0])));
        }
        if let Some(w) = points.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::BadGrid(format!(
                "grid must be strictly increasing, found {} followed by {}",
                w[0], w[1]
            )));
        }
        Ok(Self { points })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::BadGrid("uniform grid needs at least one step".into()));
        }
        let mut points: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
        points[steps] = horizon;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn t(&self, k: usize) -> f64 {
        self.points[k]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

/// Counter-based Gaussian source: the normals for `(seed, path, step)` depend
/// on nothing else, so batches are reproducible under any scheduling.
///
/// Each path is a ChaCha8 stream; each step consumes a fixed number of words
/// (Box-Muller on pairs of 53-bit uniforms), so any cell can be addressed
/// directly with [`PathNormals::seek`].
#[derive(Clone, Debug)]
pub struct GaussianCounter {
    key: [u8; 32],
    dim: usize,
}

impl GaussianCounter {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { key, dim }
    }

    pub fn path(&self, path: u64) -> PathNormals {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(path);
        PathNormals { rng, dim: self.dim }
    }

    /// Standard normals for one `(path, step)` cell.
    pub fn cell(&self, path: u64, step: u64) -> Vec<f64> {
        let mut stream = self.path(path);
        stream.seek(step);
        let mut out = vec![0.0; self.dim];
        stream.fill(&mut out);
        out
    }
}

pub struct PathNormals {
    rng: ChaCha8Rng,
    dim: usize,
}

impl PathNormals {
    fn words_per_step(&self) -> u128 {
        // two u64 draws (four 32-bit words) per Box-Muller pair
        4 * self.dim.div_ceil(2) as u128
    }

    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * self.words_per_step());
    }

    /// Fills `out` (length `dim`) with the next step's standard normals.
    pub fn fill(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        for pair in out.chunks_mut(2) {
            let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
            let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let radius = (-2.0 * u1.ln()).sqrt();
            let angle = std::f64::consts::TAU * u2;
            pair[0] = radius * angle.cos();
            if pair.len() > 1 {
                pair[1] = radius * angle.sin();
            }
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Brownian increments for a batch of paths, laid out `[path][step][dim]`.
#[derive(Clone, Debug)]
pub struct BrownianBatch {
    grid: TimeGrid,
    dim: usize,
    path_count: usize,
    seed: u64,
    increments: Vec<f64>,
}

impl BrownianBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path_count(&self) -> usize {
        self.path_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let stride = self.grid.steps() * self.dim;
        let start = path * stride + step * self.dim;
        &self.increments[start..start + self.dim]
    }

    pub fn path_increments(&self, path: usize) -> &[f64] {
        let stride = self.grid.steps() * self.dim;
        &self.increments[path * stride..(path + 1) * stride]
    }

    /// `W_{t_k}` for every grid point of one path, laid out `[step][dim]`.
    pub fn positions(&self, path: usize) -> Vec<f64> {
        let mut out = vec![0.0; (self.grid.steps() + 1) * self.dim];
        for (k, inc) in self.path_increments(path).chunks(self.dim).enumerate() {
            for j in 0..self.dim {
                out[(k + 1) * self.dim + j] = out[k * self.dim + j] + inc[j];
            }
        }
        out
    }

    /// Positions of all paths laid out `[step][path][dim]`, the order the
    /// backward regression sweeps consume.
    pub fn positions_by_step(&self) -> Vec<f64> {
        let steps = self.grid.steps();
        let d = self.dim;
        let mut out = vec![0.0; (steps + 1) * self.path_count * d];
        for p in 0..self.path_count {
            let inc = self.path_increments(p);
            for k in 0..steps {
                for j in 0..d {
                    out[((k + 1) * self.path_count + p) * d + j] =
                        out[(k * self.path_count + p) * d + j] + inc[k * d + j];
                }
            }
        }
        out
    }

    /// A copy restricted to paths `start..end`.
    pub fn subset(&self, start: usize, end: usize) -> BrownianBatch {
        let stride = self.grid.steps() * self.dim;
        BrownianBatch {
            grid: self.grid.clone(),
            dim: self.dim,
            path_count: end - start,
            seed: self.seed,
            increments: self.increments[start * stride..end * stride].to_vec(),
        }
    }

    fn with_increments(&self, increments: Vec<f64>) -> BrownianBatch {
        BrownianBatch {
            grid: self.grid.clone(),
            dim: self.dim,
            path_count: self.path_count,
            seed: self.seed,
            increments,
        }
    }
}

/// Draws `path_count` Brownian paths of the model's dimension on `grid`.
pub fn sample_brownian(
    model: &MarketModel,
    grid: &TimeGrid,
    path_count: usize,
    seed: u64,
) -> Result<BrownianBatch> {
    let horizon = model.horizon();
    if (grid.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::BadGrid(format!(
            "grid ends at {} but the horizon is {horizon}",
            grid.horizon()
        )));
    }
    let dim = model.brownian_dim();
    let steps = grid.steps();
    let stride = steps * dim;
    let counter = GaussianCounter::new(seed, dim);
    let sqrt_dt: Vec<f64> = (0..steps).map(|k| grid.dt(k).sqrt()).collect();
    let mut increments = vec![0.0; path_count * stride];
    if stride > 0 {
        increments
            .par_chunks_mut(stride)
            .enumerate()
            .for_each(|(path, out)| {
                let mut normals = counter.path(path as u64);
                for (k, cell) in out.chunks_mut(dim).enumerate() {
                    normals.fill(cell);
                    for x in cell.iter_mut() {
                        *x *= sqrt_dt[k];
                    }
                }
            });
    }
    Ok(BrownianBatch {
        grid: grid.clone(),
        dim,
        path_count,
        seed,
        increments,
    })
}

/// Shifts every increment by `theta(t_k) dt_k`, producing increments of
/// `W^Q = W + int theta ds`.
///
/// `theta` is either shared by all paths (`steps * dim` values) or given per
/// path (`paths * steps * dim` values).
pub fn girsanov_drift_adjust(batch: &BrownianBatch, theta: &[f64]) -> Result<BrownianBatch> {
    let steps = batch.grid.steps();
    let dim = batch.dim;
    let stride = steps * dim;
    let per_path = if theta.len() == stride {
        false
    } else if theta.len() == stride * batch.path_count && batch.path_count > 0 {
        true
    } else {
        return Err(Error::ShapeMismatch {
            what: "theta path",
            expected: stride,
            found: theta.len(),
        });
    };
    let mut out = batch.increments.clone();
    for (p, path) in out.chunks_mut(stride.max(1)).enumerate() {
        let th = if per_path { &theta[p * stride..(p + 1) * stride] } else { theta };
        for k in 0..steps {
            let dt = batch.grid.dt(k);
            for j in 0..dim {
                path[k * dim + j] += th[k * dim + j] * dt;
            }
        }
    }
    Ok(batch.with_increments(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(n: usize) -> MarketModel {
        let mut vol = vec![vec![0.0; n]];
        vol[0][0] = 0.2;
        MarketModel::constant(1.0, 0.0, &[0.05], &vol).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.7, 0.3]).is_err());
        let g = TimeGrid::uniform(2.0, 4).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn grid_must_end_at_horizon() {
        let g = TimeGrid::uniform(2.0, 4).unwrap();
        assert!(matches!(sample_brownian(&model(1), &g, 3, 1), Err(Error::BadGrid(_))));
    }

    #[test]
    fn empty_batch_is_valid() {
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        let b = sample_brownian(&model(2), &g, 0, 7).unwrap();
        assert_eq!(b.path_count(), 0);
        assert!(b.increments().is_empty());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let g = TimeGrid::uniform(1.0, 16).unwrap();
        let a = sample_brownian(&model(3), &g, 50, 11).unwrap();
        let b = sample_brownian(&model(3), &g, 50, 11).unwrap();
        let c = sample_brownian(&model(3), &g, 50, 12).unwrap();
        assert!(a.increments().iter().zip(b.increments()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn cells_are_addressable_independently_of_order() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let b = sample_brownian(&model(3), &g, 20, 99).unwrap();
        let counter = GaussianCounter::new(99, 3);
        for (path, step) in [(0, 0), (7, 3), (19, 9), (4, 5)] {
            let z = counter.cell(path as u64, step as u64);
            let scale = g.dt(step).sqrt();
            for (j, inc) in b.increment(path, step).iter().enumerate() {
                assert_eq!(inc.to_bits(), (z[j] * scale).to_bits());
            }
        }
    }

    #[test]
    fn increment_variance_within_five_standard_errors() {
        let steps = 64;
        let paths = 100_000;
        let g = TimeGrid::uniform(1.0, steps).unwrap();
        let b = sample_brownian(&model(1), &g, paths, 2024).unwrap();
        let dt = 1.0 / steps as f64;
        for k in [0, 17, 63] {
            let xs: Vec<f64> = (0..paths).map(|p| b.increment(p, k)[0]).collect();
            let mean = xs.iter().sum::<f64>() / paths as f64;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / paths as f64;
            // sd of the sample mean is sqrt(dt/n); of the second moment sqrt(2) dt / sqrt(n)
            assert!(mean.abs() < 5.0 * (dt / paths as f64).sqrt());
            assert!((var - dt).abs() < 5.0 * 2f64.sqrt() * dt / (paths as f64).sqrt());
        }
    }

    #[test]
    fn cross_covariance_vanishes() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let paths = 50_000;
        let b = sample_brownian(&model(2), &g, paths, 5).unwrap();
        let dt = 0.25;
        let cov = (0..paths)
            .map(|p| {
                let i = b.increment(p, 1);
                i[0] * i[1]
            })
            .sum::<f64>()
            / paths as f64;
        assert!(cov.abs() < 5.0 * dt / (paths as f64).sqrt());
    }

    #[test]
    fn positions_accumulate_increments() {
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        let b = sample_brownian(&model(2), &g, 3, 1).unwrap();
        let pos = b.positions(2);
        let by_step = b.positions_by_step();
        let inc_sum: f64 = (0..5).map(|k| b.increment(2, k)[1]).sum();
        assert!((pos[5 * 2 + 1] - inc_sum).abs() < 1e-15);
        assert_eq!(by_step[(5 * 3 + 2) * 2 + 1], pos[5 * 2 + 1]);
    }

    #[test]
    fn girsanov_shift() {
        let g = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let b = sample_brownian(&model(1), &g, 4, 3).unwrap();
        let same = girsanov_drift_adjust(&b, &[0.0]).unwrap();
        assert_eq!(same.increments(), b.increments());
        let shifted = girsanov_drift_adjust(&b, &[0.3]).unwrap();
        for (s, o) in shifted.increments().iter().zip(b.increments()) {
            assert_eq!(*s, o + 0.3);
        }
        assert!(matches!(
            girsanov_drift_adjust(&b, &[0.1, 0.2]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_integrand_stochastic_exponential_is_one() {
        let g = TimeGrid::uniform(1.0, 32).unwrap();
        let b = sample_brownian(&model(1), &g, 100, 8).unwrap();
        let q = girsanov_drift_adjust(&b, &vec![0.25; 32]).unwrap();
        for p in 0..100 {
            let log_e: f64 = q.path_increments(p).iter().map(|dw| 0.0 * dw - 0.0).sum();
            assert_eq!(log_e.exp(), 1.0);
        }
    }
}
