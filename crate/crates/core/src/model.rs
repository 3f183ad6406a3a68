//! Plant models and the augmented "virtual system" used for estimation.
//!
//! The control problem is recast as an estimation problem over the augmented
//! state `[x; u]`: the plant state evolves through the deterministic model,
//! the input is redrawn every step from its prior, and the reference is a
//! noisy measurement of the tracked state components.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default regularization added to zero-variance diagonal entries.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Deterministic discrete-time plant `x' = f(x, u)`.
pub trait PlantModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// One transition. Must return `state_dim()` entries and be deterministic.
    fn step(&self, x: &[f64], u: &[f64]) -> DVector<f64>;
}

/// A plant defined by a closure, mostly useful for tests and small examples.
pub struct FnPlant<F> {
    state_dim: usize,
    input_dim: usize,
    f: F,
}

impl<F> FnPlant<F>
where
    F: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync,
{
    pub fn new(state_dim: usize, input_dim: usize, f: F) -> Self {
        Self {
            state_dim,
            input_dim,
            f,
        }
    }
}

impl<F> PlantModel for FnPlant<F>
where
    F: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn step(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        (self.f)(x, u)
    }
}

/// Augmented state `[x; u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualState {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

impl VirtualState {
    pub fn new(x: DVector<f64>, u: DVector<f64>) -> Self {
        Self { x, u }
    }

    pub fn from_slices(x: &[f64], u: &[f64]) -> Self {
        Self {
            x: DVector::from_column_slice(x),
            u: DVector::from_column_slice(u),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.u.len()
    }

    /// Stacked `[x; u]` as one vector.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.x.iter().chain(self.u.iter()).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.u.iter()).all(|v| v.is_finite())
    }
}

/// Diagonal noise covariances of the virtual system.
///
/// `q_wbar` covers the augmented state (state block first, then input block),
/// `q_v` covers the plant state as seen by the reference, and `q_eta` the
/// constraint measurements. A zero in `q_v` marks a component the reference
/// does not observe.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub q_wbar: Vec<f64>,
    pub q_v: Vec<f64>,
    pub q_eta: Vec<f64>,
    pub epsilon: f64,
}

impl NoiseSpec {
    /// Covariances from NMPC weights: input block `R⁻¹`, observed block `Q⁻¹`.
    ///
    /// A zero weight in `q_weights` leaves the component unobserved. The state
    /// block of `q_wbar` is zero.
    pub fn from_weights(
        q_weights: &[f64],
        r_weights: &[f64],
        q_eta: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if let Some(bad) = q_weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::config(
                "Q",
                format!("weights must be finite and >= 0, got {bad}"),
            ));
        }
        if let Some(bad) = r_weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::config(
                "R",
                format!("weights must be finite and > 0, got {bad}"),
            ));
        }
        let q_wbar = std::iter::repeat_n(0.0, q_weights.len())
            .chain(r_weights.iter().map(|r| 1.0 / r))
            .collect();
        let q_v = q_weights
            .iter()
            .map(|&q| if q > 0.0 { 1.0 / q } else { 0.0 })
            .collect();
        Ok(Self {
            q_wbar,
            q_v,
            q_eta,
            epsilon,
        })
    }

    pub fn regularize(&self, var: f64) -> f64 {
        if var < self.epsilon {
            var + self.epsilon
        } else {
            var
        }
    }
}

/// The augmented system `x̄' = f̄(x̄) + w̄`, `r = M x̄ + v`.
#[derive(Clone)]
pub struct VirtualSystem {
    plant: Arc<dyn PlantModel>,
    noise: NoiseSpec,
    observed: Vec<usize>,
    // Raw standard deviations used for sampling; see `propagate`.
    state_std: Vec<f64>,
    input_std: Vec<f64>,
    // Regularized variances of the transition density.
    transition_var: Vec<f64>,
    transition_inv_var: Vec<f64>,
    // Normalizing constant of the state block of the transition density.
    transition_state_log_norm: f64,
}

impl fmt::Debug for VirtualSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VirtualSystem")
            .field("state_dim", &self.state_dim())
            .field("input_dim", &self.input_dim())
            .field("noise", &self.noise)
            .field("observed", &self.observed)
            .finish()
    }
}

/// Builds the virtual system for `plant` with the given noise model.
pub fn augment(plant: Arc<dyn PlantModel>, noise: NoiseSpec) -> Result<VirtualSystem> {
    let nx = plant.state_dim();
    let nu = plant.input_dim();
    if nx == 0 || nu == 0 {
        return Err(Error::config(
            "plant",
            "state and input dimensions must be positive",
        ));
    }
    if !(noise.epsilon > 0.0 && noise.epsilon.is_finite()) {
        return Err(Error::config(
            "epsilon",
            format!("must be finite and > 0, got {}", noise.epsilon),
        ));
    }
    if noise.q_wbar.len() != nx + nu {
        return Err(Error::config(
            "q_wbar",
            format!("expected {} entries, got {}", nx + nu, noise.q_wbar.len()),
        ));
    }
    if noise.q_v.len() != nx {
        return Err(Error::config(
            "q_v",
            format!("expected {} entries, got {}", nx, noise.q_v.len()),
        ));
    }
    for (block, values) in [
        ("q_wbar", &noise.q_wbar),
        ("q_v", &noise.q_v),
        ("q_eta", &noise.q_eta),
    ] {
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::config(
                block,
                format!("variances must be finite and >= 0, got {bad}"),
            ));
        }
    }

    let observed = (0..nx).filter(|&i| noise.q_v[i] > 0.0).collect();
    let state_std = noise.q_wbar[..nx].iter().map(|v| v.sqrt()).collect();
    let input_std = noise.q_wbar[nx..]
        .iter()
        .map(|&v| noise.regularize(v).sqrt())
        .collect();
    let transition_var: Vec<f64> = noise.q_wbar.iter().map(|&v| noise.regularize(v)).collect();
    let transition_inv_var = transition_var.iter().map(|v| 1.0 / v).collect();
    let transition_state_log_norm = -0.5
        * transition_var[..nx]
            .iter()
            .map(|v| (2.0 * PI * v).ln())
            .sum::<f64>();

    Ok(VirtualSystem {
        plant,
        noise,
        observed,
        state_std,
        input_std,
        transition_var,
        transition_inv_var,
        transition_state_log_norm,
    })
}

/// Log density of a diagonal Gaussian given residuals and variances.
pub(crate) fn diag_gaussian_log_density<I>(terms: I) -> f64
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let ln_2pi = (2.0 * PI).ln();
    terms
        .into_iter()
        .map(|(residual, var)| -0.5 * (residual * residual / var + ln_2pi + var.ln()))
        .sum()
}

impl VirtualSystem {
    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn plant(&self) -> &Arc<dyn PlantModel> {
        &self.plant
    }

    /// Plant-state indices seen by the reference (the rows of `M`).
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    fn check_dims(&self, xbar: &VirtualState) -> Result<()> {
        if xbar.x.len() != self.state_dim() || xbar.u.len() != self.input_dim() {
            return Err(Error::config(
                "virtual state",
                format!(
                    "expected ({}, {}) components, got ({}, {})",
                    self.state_dim(),
                    self.input_dim(),
                    xbar.x.len(),
                    xbar.u.len()
                ),
            ));
        }
        Ok(())
    }

    /// Deterministic part of the state transition, `f(x, u)`, checked for finiteness.
    pub fn plant_step(&self, xbar: &VirtualState) -> Result<DVector<f64>> {
        self.check_dims(xbar)?;
        let next = self.plant.step(xbar.x.as_slice(), xbar.u.as_slice());
        if next.len() != self.state_dim() || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                state: xbar.x.iter().copied().collect(),
                input: xbar.u.iter().copied().collect(),
            });
        }
        Ok(next)
    }

    /// Draws a fresh input from its prior, `N(0, q_wbar[input block])`.
    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.input_dim(),
            self.input_std
                .iter()
                .map(|s| s * rng.sample::<f64, _>(StandardNormal)),
        )
    }

    /// Samples `x̄' ~ p(x̄' | x̄)`.
    ///
    /// The state part is `f(x, u)` plus noise with the raw state-block
    /// variances, so a zero block propagates exactly. The input part is a
    /// fresh draw with the regularized input-block variances. One normal
    /// variate is consumed per component regardless of the variances.
    pub fn propagate<R: Rng + ?Sized>(
        &self,
        xbar: &VirtualState,
        rng: &mut R,
    ) -> Result<VirtualState> {
        let mut x = self.plant_step(xbar)?;
        for (xi, s) in x.iter_mut().zip(&self.state_std) {
            *xi += s * rng.sample::<f64, _>(StandardNormal);
        }
        let u = self.sample_input(rng);
        Ok(VirtualState { x, u })
    }

    /// `ln p(next | prev)` with epsilon-regularized covariance.
    pub fn log_density_transition(&self, next: &VirtualState, prev: &VirtualState) -> Result<f64> {
        self.check_dims(next)?;
        let mean = self.plant_step(prev)?;
        Ok(
            self.log_density_transition_state(next, &mean)
                + self.log_density_transition_input(next),
        )
    }

    /// State-block term of the transition density given the mean `f(x, u)`.
    pub(crate) fn log_density_transition_state(
        &self,
        next: &VirtualState,
        mean: &DVector<f64>,
    ) -> f64 {
        let quad: f64 = next
            .x
            .iter()
            .zip(mean.iter())
            .zip(&self.transition_inv_var)
            .map(|((n, m), w)| (n - m) * (n - m) * w)
            .sum();
        self.transition_state_log_norm - 0.5 * quad
    }

    /// Inverse transition variances of the state block.
    pub(crate) fn transition_state_precision(&self) -> &[f64] {
        &self.transition_inv_var[..self.state_dim()]
    }

    /// Input-block term of the transition density; independent of the previous state.
    pub(crate) fn log_density_transition_input(&self, next: &VirtualState) -> f64 {
        diag_gaussian_log_density(
            next.u
                .iter()
                .zip(&self.transition_var[self.state_dim()..])
                .map(|(&u, &var)| (u, var)),
        )
    }

    /// `ln p(r | x̄)` over the observed components.
    pub fn log_density_reference(&self, r: &[f64], xbar: &VirtualState) -> Result<f64> {
        if r.len() != self.observed.len() {
            return Err(Error::config(
                "reference",
                format!(
                    "expected {} observed components, got {}",
                    self.observed.len(),
                    r.len()
                ),
            ));
        }
        self.check_dims(xbar)?;
        Ok(diag_gaussian_log_density(
            self.observed
                .iter()
                .zip(r)
                .map(|(&i, &ri)| (ri - xbar.x[i], self.noise.q_v[i])),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_plant() -> Arc<dyn PlantModel> {
        Arc::new(FnPlant::new(1, 1, |x: &[f64], _u: &[f64]| {
            DVector::from_column_slice(x)
        }))
    }

    fn scalar_sys(q_wbar: [f64; 2], q_v: f64) -> VirtualSystem {
        augment(
            identity_plant(),
            NoiseSpec {
                q_wbar: q_wbar.to_vec(),
                q_v: vec![q_v],
                q_eta: vec![],
                epsilon: DEFAULT_EPSILON,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_reproduces_state_exactly() {
        let sys = scalar_sys([0.0, 0.0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prev = VirtualState::from_slices(&[1.25], &[7.0]);
        let next = sys.propagate(&prev, &mut rng).unwrap();
        assert_eq!(next.x[0], 1.25);
        // Input is redrawn from N(0, eps), not carried over.
        assert!(next.u[0].abs() < 1e-2);
    }

    #[test]
    fn mismatched_blocks_are_named() {
        let err = augment(
            identity_plant(),
            NoiseSpec {
                q_wbar: vec![0.0, 1.0],
                q_v: vec![1.0, 1.0],
                q_eta: vec![],
                epsilon: DEFAULT_EPSILON,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { block: "q_v", .. }), "{err}");

        let err = augment(
            identity_plant(),
            NoiseSpec {
                q_wbar: vec![1.0],
                q_v: vec![1.0],
                q_eta: vec![],
                epsilon: DEFAULT_EPSILON,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::Config {
                block: "q_wbar",
                ..
            }
        ));
    }

    #[test]
    fn non_finite_step_is_reported() {
        let plant: Arc<dyn PlantModel> = Arc::new(FnPlant::new(1, 1, |x: &[f64], u: &[f64]| {
            DVector::from_element(1, x[0] / u[0])
        }));
        let sys = augment(
            plant,
            NoiseSpec {
                q_wbar: vec![0.0, 1.0],
                q_v: vec![1.0],
                q_eta: vec![],
                epsilon: DEFAULT_EPSILON,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sys
            .propagate(&VirtualState::from_slices(&[0.0], &[0.0]), &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn transition_density_at_mean() {
        // Unit variances everywhere (entries >= epsilon are left alone).
        let sys = scalar_sys([1.0, 1.0], 1.0);
        let prev = VirtualState::from_slices(&[0.5], &[3.0]);
        let at_mean = VirtualState::from_slices(&[0.5], &[0.0]);
        let lp = sys.log_density_transition(&at_mean, &prev).unwrap();
        assert_relative_eq!(lp, -(2.0 * PI).ln(), epsilon = 1e-14);

        let off = VirtualState::from_slices(&[1.5], &[0.0]);
        let lp = sys.log_density_transition(&off, &prev).unwrap();
        assert_relative_eq!(lp, -0.5 - (2.0 * PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn scalar_standard_normal_value() {
        let v = diag_gaussian_log_density([(1.0, 1.0)]);
        assert_relative_eq!(v, -0.5 - 0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
        assert_relative_eq!(v, -1.4189385332046727, epsilon = 1e-12);
    }

    #[test]
    fn transition_density_normalizes_on_grid() {
        let sys = scalar_sys([0.3, 2.0], 1.0);
        let prev = VirtualState::from_slices(&[0.7], &[0.0]);
        let u_fixed = 0.0;
        let input_term = diag_gaussian_log_density([(u_fixed, 2.0)]).exp();
        // Integrate over the state component; the input factor is divided out.
        let h = 1e-3;
        let mass: f64 = (-10_000..=10_000)
            .map(|i| {
                let next = VirtualState::from_slices(&[0.7 + i as f64 * h], &[u_fixed]);
                sys.log_density_transition(&next, &prev).unwrap().exp() * h
            })
            .sum::<f64>()
            / input_term;
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    #[test]
    fn reference_density_ignores_unobserved() {
        let plant: Arc<dyn PlantModel> = Arc::new(FnPlant::new(3, 1, |x: &[f64], _u: &[f64]| {
            DVector::from_column_slice(x)
        }));
        let sys = augment(
            plant,
            NoiseSpec {
                q_wbar: vec![0.0; 4],
                q_v: vec![0.01, 0.0, 0.04],
                q_eta: vec![],
                epsilon: DEFAULT_EPSILON,
            },
        )
        .unwrap();
        assert_eq!(sys.observed(), &[0, 2]);
        let xbar = VirtualState::from_slices(&[1.0, 99.0, -2.0], &[0.0]);
        let peak = sys.log_density_reference(&[1.0, -2.0], &xbar).unwrap();
        let expected = -0.5 * (2.0 * PI * 0.01).ln() - 0.5 * (2.0 * PI * 0.04).ln();
        assert_relative_eq!(peak, expected, epsilon = 1e-12);
        let shifted = sys.log_density_reference(&[1.1, -2.0], &xbar).unwrap();
        assert_relative_eq!(peak - shifted, 0.5, epsilon = 1e-12);
        assert!(sys.log_density_reference(&[1.0], &xbar).is_err());
    }

    #[test]
    fn weights_form_inverts_to_covariances() {
        let noise =
            NoiseSpec::from_weights(&[100.0, 100.0, 0.0, 0.0], &[1.25, 2.5], vec![0.01; 5], 1e-6)
                .unwrap();
        assert_eq!(noise.q_wbar, vec![0.0, 0.0, 0.0, 0.0, 0.8, 0.4]);
        assert_eq!(noise.q_v, vec![0.01, 0.01, 0.0, 0.0]);
        assert!(NoiseSpec::from_weights(&[1.0], &[0.0], vec![], 1e-6).is_err());
    }
}
