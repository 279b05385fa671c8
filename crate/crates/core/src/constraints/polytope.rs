//! Nearest point in the convex hull of a finite vertex list.
//!
//! Wolfe's minimum-norm-point active-set method applied to the vertices
//! translated by `-q`. The active set is a set of affinely independent
//! vertices; each major iteration adds the vertex that most decreases the
//! linearized objective, each minor iteration drops vertices whose affine
//! weights turn non-positive.

use nalgebra::{DMatrix, DVector};

const OPTIMALITY_TOL: f64 = 1e-14;
const WEIGHT_TOL: f64 = 1e-13;
const MAX_MAJOR: usize = 10_000;

/// Returns the nearest point of `conv(vertices)` to `q`.
pub(crate) fn nearest_in_hull(vertices: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    let shifted: Vec<Vec<f64>> = vertices
        .iter()
        .map(|v| v.iter().zip(q).map(|(a, b)| a - b).collect())
        .collect();
    let scale = shifted
        .iter()
        .map(|p| dot(p, p))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let first = (0..shifted.len())
        .min_by(|&a, &b| dot(&shifted[a], &shifted[a]).total_cmp(&dot(&shifted[b], &shifted[b])))
        .expect("polytope has at least one vertex");
    let mut active = vec![first];
    let mut weights = vec![1.0];
    let mut x = shifted[first].clone();

    for _ in 0..MAX_MAJOR {
        let (j, xpj) = (0..shifted.len())
            .map(|i| (i, dot(&x, &shifted[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if dot(&x, &x) - xpj <= OPTIMALITY_TOL * scale || active.contains(&j) {
            break;
        }
        active.push(j);
        weights.push(0.0);

        loop {
            let affine = affine_minimizer(&shifted, &active);
            if affine.iter().all(|&v| v > WEIGHT_TOL) {
                weights = affine;
                break;
            }
            // Step from the current weights toward the affine minimizer until
            // the first weight reaches zero.
            let step = weights
                .iter()
                .zip(&affine)
                .filter(|(_, &v)| v <= WEIGHT_TOL)
                .filter(|(&w, &v)| w - v > 0.0)
                .map(|(&w, &v)| w / (w - v))
                .fold(1.0_f64, f64::min);
            for (w, v) in weights.iter_mut().zip(&affine) {
                *w += step * (v - *w);
            }
            let mut i = 0;
            let mut removed = false;
            while i < active.len() {
                if weights[i] <= WEIGHT_TOL {
                    active.remove(i);
                    weights.remove(i);
                    removed = true;
                } else {
                    i += 1;
                }
            }
            if !removed {
                // numerical stall: drop the smallest weight
                let (idx, _) = weights
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                active.remove(idx);
                weights.remove(idx);
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            if active.len() == 1 {
                weights[0] = 1.0;
                break;
            }
        }
        x = combine(&shifted, &active, &weights);
    }

    let mut nearest = combine(vertices, &active, &weights);
    // Weights are convex, so this stays inside the hull up to rounding.
    if active.len() == 1 {
        nearest.clone_from(&vertices[active[0]]);
    }
    nearest
}

fn affine_minimizer(points: &[Vec<f64>], active: &[usize]) -> Vec<f64> {
    let k = active.len();
    // [G 1; 1^T 0] [v; mu] = [0; 1]
    let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            kkt[(a, b)] = dot(&points[i], &points[j]);
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs[k] = 1.0;
    let solution = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            kkt.svd(true, true)
                .solve(&rhs, 1e-14)
                .expect("SVD solve with both factors")
        });
    solution.rows(0, k).iter().copied().collect()
}

fn combine(points: &[Vec<f64>], active: &[usize], weights: &[f64]) -> Vec<f64> {
    let dim = points[0].len();
    let mut out = vec![0.0; dim];
    for (&i, &w) in active.iter().zip(weights) {
        for (o, p) in out.iter_mut().zip(&points[i]) {
            *o += w * p;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn square_projection() {
        let square = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let p = nearest_in_hull(&square, &[2.0, 0.5]);
        assert!(dist(&p, &[1.0, 0.5]) < 1e-12);
        let p = nearest_in_hull(&square, &[-1.0, -1.0]);
        assert!(dist(&p, &[0.0, 0.0]) < 1e-12);
        let p = nearest_in_hull(&square, &[0.3, 0.6]);
        assert!(dist(&p, &[0.3, 0.6]) < 1e-12);
    }

    #[test]
    fn triangle_edge_in_3d() {
        let tri = vec![vec![0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]];
        let p = nearest_in_hull(&tri, &[1.0, 1.0, 3.0]);
        assert!(dist(&p, &[1.0, 1.0, 0.0]) < 1e-12);
        let p = nearest_in_hull(&tri, &[2.0, 2.0, -1.0]);
        assert!(dist(&p, &[1.0, 1.0, 0.0]) < 1e-12);
    }

    #[test]
    fn duplicate_vertices() {
        let seg = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
        assert!(dist(&nearest_in_hull(&seg, &[3.0]), &[1.0]) < 1e-12);
        assert!(dist(&nearest_in_hull(&seg, &[0.4]), &[0.4]) < 1e-12);
    }
}
