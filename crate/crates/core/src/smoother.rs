//! Reweighted particle smoother.
//!
//! Walks the filter history backwards, redistributing each step's filtering
//! weights according to how well every particle explains the smoothed
//! particles one step ahead:
//!
//! ```text
//! W[t|T](i) = W[t](i) · Σ_j W[t+1|T](j) · p(x[t+1](j) | x[t](i)) / Σ_l W[t](l) · p(x[t+1](j) | x[t](l))
//! ```
//!
//! All sums run in the log domain. The pairwise density table is not stored;
//! it is evaluated twice (once for the per-`j` denominators, once for the
//! per-`i` sums), which keeps memory at O(N) for large ensembles.

use rayon::prelude::*;

use crate::error::Result;
use crate::filter::{normalize_log_weights, FilterHistory, ParticleEnsemble};
use crate::model::{VirtualState, VirtualSystem};

/// Smoothed weights `W[t|k+H]` for every horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedWeights {
    pub weights: Vec<Vec<f64>>,
    pub log_weights: Vec<Vec<f64>>,
}

impl SmoothedWeights {
    /// Weights at the current step `t = k`.
    pub fn first(&self) -> &[f64] {
        &self.weights[0]
    }
}

/// Streaming log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl LogSumExp {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `-0.5 Σ_d w_d (a_d - b_d)²` for one particle pair.
#[inline]
fn neg_half_quad(a: &[f64], b: &[f64], inv_var: &[f64]) -> f64 {
    let mut q = 0.0;
    for d in 0..inv_var.len() {
        let e = a[d] - b[d];
        q += e * e * inv_var[d];
    }
    -0.5 * q
}

fn smooth_step(
    sys: &VirtualSystem,
    current: &ParticleEnsemble,
    next: &ParticleEnsemble,
    next_smoothed_log: &[f64],
) -> Result<Vec<f64>> {
    let nx = sys.state_dim();
    let inv_var = sys.transition_state_precision();
    // Contiguous copies: the pairwise loops below touch every (parent, child) pair.
    let mut means = Vec::with_capacity(current.len() * nx);
    for p in &current.particles {
        means.extend(sys.plant_step(p)?.iter());
    }
    let children: Vec<f64> = next
        .particles
        .iter()
        .flat_map(|p| p.x.iter().copied())
        .collect();
    // a_j = ln W[t+1|T](j) - ln Σ_l W[t](l) p(j | l). The input block and the
    // normalizer of p(j | ·) do not depend on the parent and cancel in the
    // ratio, so only the state-block quadratic form is evaluated per pair.
    let child_terms: Vec<f64> = (0..next.len())
        .into_par_iter()
        .map(|j| {
            let smoothed = next_smoothed_log[j];
            if smoothed == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let child = &children[j * nx..(j + 1) * nx];
            let mut denom = LogSumExp::new();
            for (l, &lw) in current.log_weights.iter().enumerate() {
                if lw != f64::NEG_INFINITY {
                    denom.add(lw + neg_half_quad(child, &means[l * nx..(l + 1) * nx], inv_var));
                }
            }
            let d = denom.value();
            if d == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                smoothed - d
            }
        })
        .collect();

    let log_unnormalized: Vec<f64> = (0..current.len())
        .into_par_iter()
        .map(|i| {
            let lw = current.log_weights[i];
            if lw == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let mean = &means[i * nx..(i + 1) * nx];
            let mut acc = LogSumExp::new();
            for (j, &a) in child_terms.iter().enumerate() {
                if a != f64::NEG_INFINITY {
                    acc.add(a + neg_half_quad(&children[j * nx..(j + 1) * nx], mean, inv_var));
                }
            }
            lw + acc.value()
        })
        .collect();
    Ok(log_unnormalized)
}

/// Backward pass over a complete filter history.
pub fn backward_reweight(history: &FilterHistory, sys: &VirtualSystem) -> Result<SmoothedWeights> {
    let steps = &history.steps;
    let len = steps.len();
    let mut weights = vec![Vec::new(); len];
    let mut log_weights = vec![Vec::new(); len];
    if len == 0 {
        return Ok(SmoothedWeights {
            weights,
            log_weights,
        });
    }
    let last = &steps[len - 1].ensemble;
    weights[len - 1] = last.weights.clone();
    log_weights[len - 1] = last.log_weights.clone();

    for t in (0..len - 1).rev() {
        let raw = smooth_step(
            sys,
            &steps[t].ensemble,
            &steps[t + 1].ensemble,
            &log_weights[t + 1],
        )?;
        let (lw, w, _) = normalize_log_weights(&raw);
        log_weights[t] = lw;
        weights[t] = w;
    }
    Ok(SmoothedWeights {
        weights,
        log_weights,
    })
}

/// Smoothed estimate of the current augmented state; its input part is the control to apply.
pub fn extract_estimate(ensemble_k: &ParticleEnsemble, smoothed_k: &[f64]) -> VirtualState {
    ensemble_k.weighted_mean(smoothed_k)
}

/// Shannon entropy of a normalized weight vector, in nats.
pub fn weight_entropy(weights: &[f64]) -> f64 {
    -weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>()
}
