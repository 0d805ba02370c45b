//! Gauss–Hermite moments of the logistic function under a Gaussian.
//!
//! `σ` has poles at `±iπ`, so the error of an `n`-node rule grows quickly
//! with the latent standard deviation. Twenty nodes hold 1e-9 up to unit
//! variance; beyond that the node count is scaled with the variance.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::bench::sigmoid;

const RULE_SIZES: [usize; 10] = [20, 32, 48, 64, 96, 128, 192, 256, 384, 512];

/// Nodes `t_i` and weights `w_i` (summing to one) such that
/// `E[h(Z)] ≈ Σ w_i h(√2 t_i)` for `Z ~ N(0, 1)`.
#[derive(Debug)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub–Welsch rule for the weight `exp(-t²)`, symmetrized and normalized.
pub fn gauss_hermite(n: usize) -> HermiteRule {
    assert!(n >= 1);
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let j = n - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    HermiteRule { nodes, weights }
}

fn cached_rule(slot: usize) -> &'static HermiteRule {
    static RULES: [OnceLock<HermiteRule>; RULE_SIZES.len()] =
        [const { OnceLock::new() }; RULE_SIZES.len()];
    RULES[slot].get_or_init(|| gauss_hermite(RULE_SIZES[slot]))
}

fn rule_for_variance(var: f64) -> &'static HermiteRule {
    if var <= 1.0 {
        return cached_rule(0);
    }
    let wanted = 16.0 * var + 16.0;
    let slot = RULE_SIZES
        .iter()
        .position(|&n| n as f64 >= wanted)
        .unwrap_or(RULE_SIZES.len() - 1);
    cached_rule(slot)
}

/// `E[σ(f)]` alone for `f ~ N(mean, var)`; same rule as [`sigmoid_moments`].
pub fn sigmoid_mean(mean: f64, var: f64) -> f64 {
    let var = var.max(0.0);
    if var < 1e-300 {
        return sigmoid(mean);
    }
    let rule = rule_for_variance(var);
    let scale = (2.0 * var).sqrt();
    let mut first = 0.0;
    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
        first += w * sigmoid(mean + scale * t);
    }
    first
}

/// `(E[σ(f)], V[σ(f)])` for `f ~ N(mean, var)`.
pub fn sigmoid_moments(mean: f64, var: f64) -> (f64, f64) {
    let var = var.max(0.0);
    if var < 1e-300 {
        return (sigmoid(mean), 0.0);
    }
    let rule = rule_for_variance(var);
    let scale = (2.0 * var).sqrt();
    let mut first = 0.0;
    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
        first += w * sigmoid(mean + scale * t);
    }
    let mut second = 0.0;
    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
        let d = sigmoid(mean + scale * t) - first;
        second += w * d * d;
    }
    (first, second)
}
