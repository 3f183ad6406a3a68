//! Closed-form references for a scalar linear-Gaussian plant.
//!
//! The virtual system on `x' = a x + b u + w`, with a fresh input draw each step
//! and `r = x + v`, is a two-dimensional linear-Gaussian model. Its exact
//! filtering and smoothing moments come from a Kalman filter and an RTS pass
//! written here from scratch, independent of the library.

#![allow(dead_code)]

use std::sync::Arc;

use capnmpc::{augment, FnPlant, NoiseSpec, PlantModel, VirtualSystem};
use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};

#[derive(Debug, Clone, Copy)]
pub struct LinearGaussian {
    pub a: f64,
    pub b: f64,
    /// Process noise variance on the state.
    pub qx: f64,
    /// Input prior variance.
    pub qu: f64,
    /// Reference noise variance.
    pub rv: f64,
    pub x0: f64,
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

#[derive(Debug, Clone)]
pub struct Oracle {
    pub filtered: Vec<Moments>,
    pub smoothed: Vec<Moments>,
}

impl LinearGaussian {
    pub fn system(&self) -> VirtualSystem {
        let (a, b) = (self.a, self.b);
        let plant: Arc<dyn PlantModel> =
            Arc::new(FnPlant::new(1, 1, move |x: &[f64], u: &[f64]| {
                DVector::from_element(1, a * x[0] + b * u[0])
            }));
        augment(
            plant,
            NoiseSpec {
                q_wbar: vec![self.qx, self.qu],
                q_v: vec![self.rv],
                q_eta: vec![],
                epsilon: 1e-6,
            },
        )
        .unwrap()
    }

    fn transition(&self) -> Matrix2<f64> {
        Matrix2::new(self.a, self.b, 0.0, 0.0)
    }

    pub fn kalman(&self, refs: &[f64]) -> Oracle {
        let a = self.transition();
        let w = Matrix2::new(self.qx, 0.0, 0.0, self.qu);
        let h = RowVector2::new(1.0, 0.0);
        let mut filtered: Vec<Moments> = Vec::with_capacity(refs.len());
        let mut predicted: Vec<Moments> = Vec::with_capacity(refs.len());
        for (t, &r) in refs.iter().enumerate() {
            let prior = match filtered.last() {
                None => Moments {
                    mean: Vector2::new(self.x0, 0.0),
                    cov: Matrix2::new(0.0, 0.0, 0.0, self.qu),
                },
                Some(prev) => Moments {
                    mean: a * prev.mean,
                    cov: a * prev.cov * a.transpose() + w,
                },
            };
            let s = (h * prior.cov * h.transpose())[0] + self.rv;
            let gain = prior.cov * h.transpose() / s;
            let innovation = r - (h * prior.mean)[0];
            let mean = prior.mean + gain * innovation;
            let cov = (Matrix2::identity() - gain * h) * prior.cov;
            predicted.push(prior);
            filtered.push(Moments { mean, cov });
            debug_assert_eq!(filtered.len(), t + 1);
        }

        let mut smoothed = filtered.clone();
        for t in (0..refs.len().saturating_sub(1)).rev() {
            let f = &filtered[t];
            let pred = &predicted[t + 1];
            let g = f.cov
                * a.transpose()
                * pred
                    .cov
                    .try_inverse()
                    .expect("predicted covariance is singular");
            let next = smoothed[t + 1].clone();
            smoothed[t] = Moments {
                mean: f.mean + g * (next.mean - pred.mean),
                cov: f.cov + g * (next.cov - pred.cov) * g.transpose(),
            };
        }
        Oracle { filtered, smoothed }
    }

    /// Minimizer of `Σ_t (r_t - x_t)²/rv + u_t²/qu` over `u_0..u_H` with `qx = 0`,
    /// and the posterior variance of `u_0` around it.
    pub fn least_squares_first_input(&self, refs: &[f64]) -> (f64, f64) {
        let n = refs.len();
        // x_t = a^t x0 + Σ_{s<t} a^{t-1-s} b u_s
        let mut j = DMatrix::zeros(n, n);
        let mut free = DVector::zeros(n);
        for t in 0..n {
            free[t] = self.a.powi(t as i32) * self.x0;
            for s in 0..t {
                j[(t, s)] = self.a.powi((t - 1 - s) as i32) * self.b;
            }
        }
        let resid = DVector::from_column_slice(refs) - free;
        let normal = j.transpose() * &j / self.rv + DMatrix::identity(n, n) / self.qu;
        let inv = normal.try_inverse().expect("normal equations are singular");
        let u = &inv * j.transpose() * resid / self.rv;
        (u[0], inv[(0, 0)])
    }
}

/// A fixed, gently varying reference sequence.
pub fn reference(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| 1.5 * (0.4 * t as f64).sin() + 0.1 * t as f64)
        .collect()
}

/// Kish effective sample size of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}
