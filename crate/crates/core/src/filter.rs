//! Bootstrap particle filter over the virtual system.
//!
//! Particles are weighted by the reference likelihood and, when a constraint
//! model is supplied, by a virtual measurement `z = 0` of the softplus barrier
//! applied to the constraint margins. Every horizon step is resampled
//! systematically; the pre-resampling ensembles are kept for the smoother.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{diag_gaussian_log_density, VirtualState, VirtualSystem};

/// Softplus barrier parameters: `φ(s) = ln(1 + exp(β s)) / α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl BarrierConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(
                "barrier.alpha",
                format!("must be finite and > 0, got {alpha}"),
            ));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config(
                "barrier.beta",
                format!("must be finite and > 0, got {beta}"),
            ));
        }
        Ok(Self { alpha, beta })
    }
}

/// Stacked inequality constraints `g(x, u) <= 0`.
pub trait ConstraintSet: Send + Sync {
    fn count(&self) -> usize;
    /// Returns `count()` margins; positive means violated.
    fn eval(&self, xbar: &VirtualState) -> Vec<f64>;
}

/// Constraint set plus barrier; enables constraint-aware weighting.
#[derive(Clone)]
pub struct ConstraintAware {
    pub set: Arc<dyn ConstraintSet>,
    pub barrier: BarrierConfig,
}

impl ConstraintAware {
    pub fn new(set: Arc<dyn ConstraintSet>, barrier: BarrierConfig) -> Self {
        Self { set, barrier }
    }

    /// Checks that `q_eta` of `sys` matches this constraint set.
    pub fn validate(&self, sys: &VirtualSystem) -> Result<()> {
        let q_eta = &sys.noise().q_eta;
        if q_eta.len() != self.set.count() {
            return Err(Error::config(
                "q_eta",
                format!("expected {} entries, got {}", self.set.count(), q_eta.len()),
            ));
        }
        if let Some(bad) = q_eta.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::config(
                "q_eta",
                format!("variances must be > 0, got {bad}"),
            ));
        }
        Ok(())
    }
}

impl std::fmt::Debug for ConstraintAware {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintAware")
            .field("count", &self.set.count())
            .field("barrier", &self.barrier)
            .finish()
    }
}

/// Overflow-safe softplus barrier.
pub fn softplus_barrier(s: f64, cfg: BarrierConfig) -> f64 {
    let t = cfg.beta * s;
    if t > 0.0 {
        (t + (-t).exp().ln_1p()) / cfg.alpha
    } else {
        t.exp().ln_1p() / cfg.alpha
    }
}

/// `ln p(z = 0 | x̄)` for the barrier virtual measurement.
pub fn log_density_constraints(
    xbar: &VirtualState,
    cs: &dyn ConstraintSet,
    cfg: BarrierConfig,
    q_eta: &[f64],
) -> f64 {
    let g = cs.eval(xbar);
    debug_assert_eq!(g.len(), q_eta.len());
    diag_gaussian_log_density(
        g.iter()
            .zip(q_eta)
            .map(|(&gj, &var)| (softplus_barrier(gj, cfg), var)),
    )
}

/// Weighted particle set at one horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<VirtualState>,
    /// Natural log of `weights`.
    pub log_weights: Vec<f64>,
    /// Normalized weights, summing to one.
    pub weights: Vec<f64>,
    /// Set when every likelihood underflowed and weights fell back to uniform.
    pub degenerate: bool,
}

impl ParticleEnsemble {
    pub fn uniform(particles: Vec<VirtualState>) -> Self {
        let n = particles.len();
        Self {
            particles,
            log_weights: vec![-(n as f64).ln(); n],
            weights: vec![1.0 / n as f64; n],
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Weighted mean of the particles under `weights`.
    pub fn weighted_mean(&self, weights: &[f64]) -> VirtualState {
        let first = &self.particles[0];
        let mut x = DVector::zeros(first.x.len());
        let mut u = DVector::zeros(first.u.len());
        for (p, &w) in self.particles.iter().zip(weights) {
            x.axpy(w, &p.x, 1.0);
            u.axpy(w, &p.u, 1.0);
        }
        VirtualState { x, u }
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Normalizes log-likelihoods into weights. Returns `(log_weights, weights, degenerate)`.
pub(crate) fn normalize_log_weights(log_lik: &[f64]) -> (Vec<f64>, Vec<f64>, bool) {
    let n = log_lik.len();
    let max = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (vec![-(n as f64).ln(); n], vec![1.0 / n as f64; n], true);
    }
    let sum: f64 = log_lik.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let log_weights: Vec<f64> = log_lik.iter().map(|l| l - lse).collect();
    let mut weights: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (log_weights, weights, false)
}

/// Weights `particles` against reference `r`, optionally with the constraint factor.
pub fn weigh(
    particles: Vec<VirtualState>,
    r: &[f64],
    sys: &VirtualSystem,
    constraints: Option<&ConstraintAware>,
) -> Result<ParticleEnsemble> {
    if particles.is_empty() {
        return Err(Error::config(
            "ensemble",
            "at least one particle is required",
        ));
    }
    let q_eta = &sys.noise().q_eta;
    let mut log_lik = Vec::with_capacity(particles.len());
    for (index, p) in particles.iter().enumerate() {
        let mut l = sys.log_density_reference(r, p)?;
        if let Some(c) = constraints {
            l += log_density_constraints(p, c.set.as_ref(), c.barrier, q_eta);
        }
        if l.is_nan() {
            return Err(Error::NanLikelihood { index });
        }
        log_lik.push(l);
    }
    let (log_weights, weights, degenerate) = normalize_log_weights(&log_lik);
    Ok(ParticleEnsemble {
        particles,
        log_weights,
        weights,
        degenerate,
    })
}

/// Systematic resampling: one offset `u0 ~ U[0, 1/N)`, strata `u0 + j/N`.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let offset = rng.random::<f64>() / n as f64;
    let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1);
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cumulative = weights[0];
    for j in 0..n {
        // Stratum j starts at j/N; comparing against its base avoids rounding `offset + j/N` up.
        let base = j as f64 / n as f64;
        while i < last_positive && cumulative - base <= offset {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

/// One horizon step of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    /// Weighted ensemble before resampling.
    pub ensemble: ParticleEnsemble,
    /// Resampled ancestor indices into `ensemble.particles`, seeding the next step.
    pub ancestors: Vec<usize>,
}

/// Forward-pass output: one entry per horizon step `k..=k+H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterHistory {
    pub steps: Vec<FilterStep>,
}

impl FilterHistory {
    pub fn horizon(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn degenerate_count(&self) -> usize {
        self.steps.iter().filter(|s| s.ensemble.degenerate).count()
    }
}

/// Runs the forward filter from the known state `x_k` over `refs` (`H + 1` entries).
///
/// At the first step every particle carries `x_k` with an input drawn from its
/// prior; later steps propagate the resampled set. All steps are weighted,
/// recorded and resampled.
pub fn forward_pass<R: Rng + ?Sized>(
    sys: &VirtualSystem,
    x_k: &[f64],
    refs: &[DVector<f64>],
    constraints: Option<&ConstraintAware>,
    n: usize,
    rng: &mut R,
) -> Result<FilterHistory> {
    if n == 0 {
        return Err(Error::config(
            "particles",
            "at least one particle is required",
        ));
    }
    if refs.is_empty() {
        return Err(Error::config(
            "reference window",
            "needs at least one entry",
        ));
    }
    if x_k.len() != sys.state_dim() {
        return Err(Error::config(
            "initial state",
            format!("expected {} entries, got {}", sys.state_dim(), x_k.len()),
        ));
    }
    if let Some(c) = constraints {
        c.validate(sys)?;
    }

    let x0 = DVector::from_column_slice(x_k);
    let mut steps: Vec<FilterStep> = Vec::with_capacity(refs.len());
    for (offset, r) in refs.iter().enumerate() {
        let particles = match steps.last() {
            None => (0..n)
                .map(|_| VirtualState::new(x0.clone(), sys.sample_input(rng)))
                .collect(),
            Some(prev) => prev
                .ancestors
                .iter()
                .map(|&a| sys.propagate(&prev.ensemble.particles[a], rng))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_offset(offset))?,
        };
        let ensemble =
            weigh(particles, r.as_slice(), sys, constraints).map_err(|e| e.at_offset(offset))?;
        let ancestors = systematic_resample(&ensemble.weights, rng);
        steps.push(FilterStep {
            ensemble,
            ancestors,
        });
    }
    Ok(FilterHistory { steps })
}
