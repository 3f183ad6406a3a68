//! Receding-horizon loop: filter forward, smooth backward, apply the first input.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::filter::{forward_pass, ConstraintAware, ConstraintSet};
use crate::model::{PlantModel, VirtualState, VirtualSystem};
use crate::smoother::{backward_reweight, extract_estimate, weight_entropy};

/// Which weighting rule the filter uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Reference likelihood only.
    Pnmpc,
    /// Reference likelihood times the barrier constraint likelihood.
    CapNmpc,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pnmpc => "pnmpc",
            Algorithm::CapNmpc => "capnmpc",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Pnmpc => "P-NMPC",
            Algorithm::CapNmpc => "CAP-NMPC",
        }
    }
}

#[derive(Clone, Debug)]
pub struct NmpcProblem {
    pub sys: VirtualSystem,
    /// Present for CAP-NMPC, absent for P-NMPC.
    pub constraints: Option<ConstraintAware>,
    pub horizon: usize,
    pub particles: usize,
}

impl NmpcProblem {
    pub fn new(
        sys: VirtualSystem,
        constraints: Option<ConstraintAware>,
        horizon: usize,
        particles: usize,
    ) -> Result<Self> {
        if particles == 0 {
            return Err(Error::config("particles", "must be >= 1"));
        }
        if let Some(c) = &constraints {
            c.validate(&sys)?;
        }
        Ok(Self {
            sys,
            constraints,
            horizon,
            particles,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        if self.constraints.is_some() {
            Algorithm::CapNmpc
        } else {
            Algorithm::Pnmpc
        }
    }
}

/// Per-step output of [`nmpc_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub control: DVector<f64>,
    pub estimate: VirtualState,
    /// Horizon steps whose weights fell back to uniform.
    pub degenerate_steps: usize,
    /// Entropy of the smoothed weights at the current step.
    pub smoothed_entropy: f64,
}

/// One control cycle: returns the smoothed estimate of the current input.
pub fn nmpc_step<R: Rng + ?Sized>(
    problem: &NmpcProblem,
    x_k: &[f64],
    ref_window: &[DVector<f64>],
    rng: &mut R,
) -> Result<StepOutcome> {
    if ref_window.len() != problem.horizon + 1 {
        return Err(Error::config(
            "reference window",
            format!(
                "expected {} entries, got {}",
                problem.horizon + 1,
                ref_window.len()
            ),
        ));
    }
    if x_k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            state: x_k.to_vec(),
            input: Vec::new(),
        });
    }
    let history = forward_pass(
        &problem.sys,
        x_k,
        ref_window,
        problem.constraints.as_ref(),
        problem.particles,
        rng,
    )?;
    let smoothed = backward_reweight(&history, &problem.sys)?;
    let estimate = extract_estimate(&history.steps[0].ensemble, smoothed.first());
    Ok(StepOutcome {
        control: estimate.u.clone(),
        estimate,
        degenerate_steps: history.degenerate_count(),
        smoothed_entropy: weight_entropy(smoothed.first()),
    })
}

/// Supplies the reference window for each control step.
pub trait ReferenceSource {
    /// `horizon + 1` reference vectors for step `k` at plant state `x`, or
    /// `None` once the reference is exhausted and the run should stop.
    fn window(&mut self, k: usize, x: &[f64], horizon: usize) -> Option<Vec<DVector<f64>>>;
}

/// Reference indexed by control step, clamped to its last entry.
#[derive(Debug, Clone)]
pub struct TimeIndexedReference {
    pub points: Vec<DVector<f64>>,
}

impl ReferenceSource for TimeIndexedReference {
    fn window(&mut self, k: usize, _x: &[f64], horizon: usize) -> Option<Vec<DVector<f64>>> {
        let last = self.points.len().checked_sub(1)?;
        Some(
            (k..=k + horizon)
                .map(|t| self.points[t.min(last)].clone())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Plant state at the start of the step.
    pub state: DVector<f64>,
    pub control: DVector<f64>,
    /// First entry of the reference window.
    pub reference: DVector<f64>,
    /// `g(x_k, u_k*)`; empty when no constraint monitor was given.
    pub margins: Vec<f64>,
    pub degenerate: bool,
    pub smoothed_entropy: f64,
}

/// Closed-loop trace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationRecord {
    pub steps: Vec<StepRecord>,
    pub final_state: Option<DVector<f64>>,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
}

impl SimulationRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn degenerate_count(&self) -> usize {
        self.steps.iter().filter(|s| s.degenerate).count()
    }
}

/// A closed-loop run that stopped early, with everything recorded before the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("closed-loop run aborted after {} steps: {error}", partial.steps.len())]
pub struct Aborted {
    pub partial: SimulationRecord,
    pub error: Error,
}

/// Runs up to `max_steps` control cycles on the noiseless `plant_truth`.
///
/// `monitor`, when given, is evaluated at `(x_k, u_k*)` for the record; it does
/// not influence the controller.
pub fn run_closed_loop<R: Rng + ?Sized>(
    problem: &NmpcProblem,
    plant_truth: &dyn PlantModel,
    x_0: &[f64],
    reference: &mut dyn ReferenceSource,
    max_steps: usize,
    monitor: Option<&dyn ConstraintSet>,
    rng: &mut R,
) -> std::result::Result<SimulationRecord, Aborted> {
    let mut record = SimulationRecord::default();
    let mut x = DVector::from_column_slice(x_0);
    for k in 0..max_steps {
        let Some(window) = reference.window(k, x.as_slice(), problem.horizon) else {
            break;
        };
        let outcome = match nmpc_step(problem, x.as_slice(), &window, rng) {
            Ok(o) => o,
            Err(e) => {
                record.final_state = Some(x);
                return Err(Aborted {
                    partial: record,
                    error: e.at_step(k),
                });
            }
        };
        let margins = monitor
            .map(|m| m.eval(&VirtualState::new(x.clone(), outcome.control.clone())))
            .unwrap_or_default();
        let next = plant_truth.step(x.as_slice(), outcome.control.as_slice());
        let finite = next.iter().all(|v| v.is_finite());
        record.steps.push(StepRecord {
            k,
            state: x.clone(),
            control: outcome.control.clone(),
            reference: window[0].clone(),
            margins,
            degenerate: outcome.degenerate_steps > 0,
            smoothed_entropy: outcome.smoothed_entropy,
        });
        if !finite {
            let error = Error::NonFinite {
                state: x.iter().copied().collect(),
                input: outcome.control.iter().copied().collect(),
            };
            record.final_state = Some(x);
            return Err(Aborted {
                partial: record,
                error: error.at_step(k),
            });
        }
        x = next;
    }
    record.final_state = Some(x);
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::BarrierConfig;
    use crate::model::{augment, FnPlant, NoiseSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    struct FarInside;
    impl ConstraintSet for FarInside {
        fn count(&self) -> usize {
            2
        }
        fn eval(&self, _xbar: &VirtualState) -> Vec<f64> {
            vec![-100.0, -250.0]
        }
    }

    fn integrator(q_eta: Vec<f64>) -> VirtualSystem {
        let plant: Arc<dyn PlantModel> = Arc::new(FnPlant::new(1, 1, |x: &[f64], u: &[f64]| {
            DVector::from_element(1, x[0] + 0.5 * u[0])
        }));
        augment(
            plant,
            NoiseSpec {
                q_wbar: vec![0.0, 1.0],
                q_v: vec![0.1],
                q_eta,
                epsilon: 1e-6,
            },
        )
        .unwrap()
    }

    #[test]
    fn degenerate_ensemble_returns_sampled_input() {
        let problem = NmpcProblem::new(integrator(vec![]), None, 0, 1).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = a.clone();
        let out = nmpc_step(&problem, &[0.0], &[DVector::from_element(1, 42.0)], &mut a).unwrap();
        let drawn = problem.sys.sample_input(&mut b);
        assert_eq!(out.control, drawn);
        assert_eq!(out.smoothed_entropy, 0.0);
    }

    #[test]
    fn window_length_is_checked() {
        let problem = NmpcProblem::new(integrator(vec![]), None, 2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(nmpc_step(&problem, &[0.0], &[DVector::zeros(1)], &mut rng).is_err());
    }

    #[test]
    fn inactive_constraints_match_unconstrained_weights() {
        let sys = integrator(vec![0.01, 0.01]);
        let plain = NmpcProblem::new(sys.clone(), None, 3, 64).unwrap();
        let aware = NmpcProblem::new(
            sys,
            Some(ConstraintAware::new(
                Arc::new(FarInside),
                BarrierConfig::new(5.0, 3.0).unwrap(),
            )),
            3,
            64,
        )
        .unwrap();
        let refs: Vec<_> = (0..4)
            .map(|t| DVector::from_element(1, t as f64 * 0.3))
            .collect();
        let a = nmpc_step(&plain, &[0.0], &refs, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = nmpc_step(&aware, &[0.0], &refs, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn closed_loop_stays_near_constant_reference() {
        let problem = NmpcProblem::new(integrator(vec![]), None, 3, 200).unwrap();
        let plant = FnPlant::new(1, 1, |x: &[f64], u: &[f64]| {
            DVector::from_element(1, x[0] + 0.5 * u[0])
        });
        let mut reference = TimeIndexedReference {
            points: vec![DVector::from_element(1, 0.0)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let record =
            run_closed_loop(&problem, &plant, &[0.0], &mut reference, 40, None, &mut rng).unwrap();
        assert_eq!(record.len(), 40);
        for s in &record.steps {
            assert!(
                s.state[0].abs() < 1.0,
                "step {} drifted to {}",
                s.k,
                s.state[0]
            );
            assert!(s.margins.is_empty());
        }
    }

    #[test]
    fn failure_keeps_partial_record() {
        let problem = NmpcProblem::new(integrator(vec![]), None, 1, 8).unwrap();
        // The true plant blows up on the third step.
        let plant = FnPlant::new(1, 1, |x: &[f64], _u: &[f64]| {
            DVector::from_element(1, if x[0] >= 2.0 { f64::NAN } else { x[0] + 1.0 })
        });
        let mut reference = TimeIndexedReference {
            points: vec![DVector::from_element(1, 0.0)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = run_closed_loop(&problem, &plant, &[0.0], &mut reference, 10, None, &mut rng)
            .unwrap_err();
        assert_eq!(err.partial.len(), 3);
        assert!(matches!(err.error, Error::Step { step: 2, .. }));
    }
}
