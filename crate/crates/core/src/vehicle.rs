//! Path-following benchmark: kinematic bicycle, sinusoidal track, input and
//! corridor constraints, and the tracking metrics.

use std::f64::consts::{FRAC_PI_2, PI};

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{
    run_closed_loop, Aborted, Algorithm, NmpcProblem, ReferenceSource, SimulationRecord,
};
use crate::error::{Error, Result};
use crate::filter::{BarrierConfig, ConstraintAware, ConstraintSet};
use crate::model::{augment, NoiseSpec, PlantModel, VirtualState, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleParams {
    /// Rear axle to center of mass, m.
    pub l_r: f64,
    /// Front axle to center of mass, m.
    pub l_f: f64,
    /// Integration step, s.
    pub dt: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            l_r: 0.5,
            l_f: 0.5,
            dt: 0.1,
        }
    }
}

impl BicycleParams {
    pub fn new(l_r: f64, l_f: f64, dt: f64) -> Result<Self> {
        for (name, v) in [
            ("vehicle.l_r", l_r),
            ("vehicle.l_f", l_f),
            ("vehicle.dt", dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(Self { l_r, l_f, dt })
    }

    /// Side-slip angle `atan(l_r / (l_r + l_f) · tan δ)`.
    pub fn side_slip(&self, delta_f: f64) -> f64 {
        (self.l_r / (self.l_r + self.l_f) * delta_f.tan()).atan()
    }
}

/// Position, speed and heading of the bicycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleState {
    pub x_p: f64,
    pub y_p: f64,
    pub nu: f64,
    pub psi: f64,
}

impl BicycleState {
    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            x_p: s[0],
            y_p: s[1],
            nu: s[2],
            psi: s[3],
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_column_slice(&[self.x_p, self.y_p, self.nu, self.psi])
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Forward-Euler bicycle update from the pre-step state.
pub fn bicycle_step(
    s: &BicycleState,
    accel: f64,
    delta_f: f64,
    p: &BicycleParams,
) -> Result<BicycleState> {
    if !(delta_f.abs() < FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "steering angle {delta_f} rad outside (-π/2, π/2)"
        )));
    }
    Ok(step_unchecked(s, accel, delta_f, p))
}

fn step_unchecked(s: &BicycleState, accel: f64, delta_f: f64, p: &BicycleParams) -> BicycleState {
    let beta = p.side_slip(delta_f);
    BicycleState {
        x_p: s.x_p + p.dt * s.nu * (s.psi + beta).cos(),
        y_p: s.y_p + p.dt * s.nu * (s.psi + beta).sin(),
        nu: s.nu + p.dt * accel,
        psi: s.psi + p.dt * s.nu / p.l_r * beta.sin(),
    }
}

/// Bicycle as a [`PlantModel`] with state `[x_p, y_p, ν, ψ]` and input `[a, δ_f]`.
///
/// Sampled steering can land outside `(-π/2, π/2)`; the plant saturates it
/// just inside that interval instead of failing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bicycle {
    pub params: BicycleParams,
}

impl Bicycle {
    /// Largest steering magnitude passed to the model, rad.
    pub const STEER_SATURATION: f64 = FRAC_PI_2 - 1e-3;
}

impl PlantModel for Bicycle {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn step(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let delta = u[1].clamp(-Self::STEER_SATURATION, Self::STEER_SATURATION);
        step_unchecked(&BicycleState::from_slice(x), u[0], delta, &self.params).to_vector()
    }
}

/// Parameters of the sinusoidal reference track `y = A sin(f x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSpec {
    pub x_start: f64,
    pub x_end: f64,
    pub step: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub halfwidth: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self {
            x_start: 0.0,
            x_end: 33.0,
            step: 0.6,
            amplitude: 2.0,
            frequency: 0.2,
            halfwidth: 0.3,
        }
    }
}

/// Polyline reference with a corridor of fixed half-width around it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub points: Vec<[f64; 2]>,
    pub corridor_halfwidth: f64,
}

impl ReferenceTrajectory {
    pub fn new(points: Vec<[f64; 2]>, corridor_halfwidth: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("track", "needs at least one point"));
        }
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config(
                "track",
                "consecutive points must be distinct",
            ));
        }
        if !(corridor_halfwidth > 0.0) {
            return Err(Error::config("track.halfwidth", "must be > 0"));
        }
        Ok(Self {
            points,
            corridor_halfwidth,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Euclidean distance from `p` to the centerline polyline.
    pub fn distance_to_centerline(&self, p: [f64; 2]) -> f64 {
        if self.points.len() == 1 {
            return dist(p, self.points[0]);
        }
        self.points
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the vertex nearest to `p` among indices `>= from`.
    pub fn nearest_index_from(&self, p: [f64; 2], from: usize) -> usize {
        let from = from.min(self.points.len() - 1);
        let mut best = from;
        let mut best_d = f64::INFINITY;
        for (i, &q) in self.points.iter().enumerate().skip(from) {
            let d = dist(p, q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Points `start..=start + horizon`, clamped to the final point.
    pub fn window_at(&self, start: usize, horizon: usize) -> Vec<DVector<f64>> {
        let last = self.points.len() - 1;
        (start..=start + horizon)
            .map(|i| DVector::from_column_slice(&self.points[i.min(last)]))
            .collect()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

/// Samples `y = A sin(f x)` from `x_start` to `x_end` (inclusive) every `step`.
pub fn sinusoidal_track(spec: &TrackSpec) -> Result<ReferenceTrajectory> {
    if !(spec.step > 0.0) {
        return Err(Error::config("track.step", "must be > 0"));
    }
    if !(spec.x_end > spec.x_start) {
        return Err(Error::config("track.x_end", "must exceed x_start"));
    }
    // Tolerance keeps 33 / 0.6 from dropping the endpoint to rounding.
    let count = ((spec.x_end - spec.x_start) / spec.step + 1e-9).floor() as usize + 1;
    let points = (0..count)
        .map(|i| {
            let x = spec.x_start + i as f64 * spec.step;
            [x, spec.amplitude * (spec.frequency * x).sin()]
        })
        .collect();
    ReferenceTrajectory::new(points, spec.halfwidth)
}

/// Reference window that follows the vehicle's progress along the track.
///
/// Each step finds the track vertex nearest the vehicle (never moving
/// backwards) and takes the next `H + 1` vertices from there. The run ends
/// once the nearest vertex is the final one.
#[derive(Debug, Clone)]
pub struct TrackFollower {
    pub track: ReferenceTrajectory,
    progress: usize,
}

impl TrackFollower {
    pub fn new(track: ReferenceTrajectory) -> Self {
        Self { track, progress: 0 }
    }

    pub fn progress(&self) -> usize {
        self.progress
    }
}

impl ReferenceSource for TrackFollower {
    fn window(&mut self, _k: usize, x: &[f64], horizon: usize) -> Option<Vec<DVector<f64>>> {
        self.progress = self.track.nearest_index_from([x[0], x[1]], self.progress);
        if self.progress + 1 >= self.track.len() {
            return None;
        }
        Some(self.track.window_at(self.progress, horizon))
    }
}

/// Input bounds (four margins) plus the corridor margin, all as `g <= 0`.
#[derive(Debug, Clone)]
pub struct VehicleConstraints {
    pub track: ReferenceTrajectory,
    /// Lower bounds `(a, δ_f)` in m/s² and rad.
    pub u_lo: [f64; 2],
    /// Upper bounds `(a, δ_f)` in m/s² and rad.
    pub u_hi: [f64; 2],
}

pub fn vehicle_constraints(
    track: ReferenceTrajectory,
    u_lo: [f64; 2],
    u_hi: [f64; 2],
) -> Result<VehicleConstraints> {
    if !(u_lo[0] < u_hi[0] && u_lo[1] < u_hi[1]) {
        return Err(Error::config(
            "constraints",
            "lower input bounds must be below upper bounds",
        ));
    }
    Ok(VehicleConstraints { track, u_lo, u_hi })
}

impl ConstraintSet for VehicleConstraints {
    fn count(&self) -> usize {
        5
    }

    fn eval(&self, xbar: &VirtualState) -> Vec<f64> {
        let (a, delta) = (xbar.u[0], xbar.u[1]);
        vec![
            a - self.u_hi[0],
            self.u_lo[0] - a,
            delta - self.u_hi[1],
            self.u_lo[1] - delta,
            self.track.distance_to_centerline([xbar.x[0], xbar.x[1]])
                - self.track.corridor_halfwidth,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub cost: f64,
}

/// Tracking RMSE and realized quadratic cost of a closed-loop record.
///
/// `observed` maps reference components to state indices; `q` weighs the
/// tracking error per reference component and `r` the applied input.
pub fn metrics(record: &SimulationRecord, observed: &[usize], q: &[f64], r: &[f64]) -> Metrics {
    if record.is_empty() {
        return Metrics {
            rmse: 0.0,
            cost: 0.0,
        };
    }
    let mut sq = 0.0;
    let mut cost = 0.0;
    for s in &record.steps {
        for (c, &i) in observed.iter().enumerate() {
            let e = s.reference[c] - s.state[i];
            sq += e * e;
            cost += q[c] * e * e;
        }
        cost += s.control.iter().zip(r).map(|(u, w)| w * u * u).sum::<f64>();
    }
    Metrics {
        rmse: (sq / record.len() as f64).sqrt(),
        cost,
    }
}

/// Constraint-violation frequencies of a vehicle run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationStats {
    /// Fraction of steps whose applied input exceeds a bound by more than the tolerance.
    pub input_rate: f64,
    /// Fraction of steps outside the track corridor.
    pub corridor_rate: f64,
    /// Fraction of steps with any positive margin.
    pub any_rate: f64,
}

impl ViolationStats {
    pub fn from_record(record: &SimulationRecord, input_tolerance: f64) -> Self {
        let n = record.len().max(1) as f64;
        let count = |pred: &dyn Fn(&[f64]) -> bool| {
            record.steps.iter().filter(|s| pred(&s.margins)).count() as f64 / n
        };
        Self {
            input_rate: count(&|g| g.iter().take(4).any(|&m| m > input_tolerance)),
            corridor_rate: count(&|g| g.get(4).is_some_and(|&m| m > 0.0)),
            any_rate: count(&|g| g.iter().any(|&m| m > 0.0)),
        }
    }
}

/// Full path-following scenario. `Default` is the published setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub params: BicycleParams,
    pub track: TrackSpec,
    pub x0: [f64; 4],
    /// Lower input bounds `(a, δ_f)`, m/s² and rad.
    pub u_lo: [f64; 2],
    /// Upper input bounds `(a, δ_f)`, m/s² and rad.
    pub u_hi: [f64; 2],
    pub barrier: BarrierConfig,
    pub noise: NoiseSpec,
    /// Tracking weights per state component, used for the cost metric.
    pub q_weights: Vec<f64>,
    /// Input weights, used for the cost metric.
    pub r_weights: Vec<f64>,
    pub horizon: usize,
    pub particles: usize,
    pub step_cap: usize,
}

impl Default for Benchmark {
    fn default() -> Self {
        Self {
            params: BicycleParams::default(),
            track: TrackSpec::default(),
            x0: [-0.5, -0.5, 3.0, PI / 4.0],
            u_lo: [-3.0, -35f64.to_radians()],
            u_hi: [3.0, 35f64.to_radians()],
            barrier: BarrierConfig {
                alpha: 5.0,
                beta: 3.0,
            },
            noise: NoiseSpec {
                q_wbar: vec![0.0, 0.0, 0.0, 0.0, 0.8, 0.4],
                q_v: vec![0.01, 0.01, 0.0, 0.0],
                q_eta: vec![0.01; 5],
                epsilon: DEFAULT_EPSILON,
            },
            q_weights: vec![100.0, 100.0, 0.0, 0.0],
            r_weights: vec![1.25, 2.5],
            horizon: 4,
            particles: 100,
            step_cap: 1000,
        }
    }
}

/// Everything needed to drive one closed-loop run.
pub struct BenchmarkSetup {
    pub problem: NmpcProblem,
    pub plant: Bicycle,
    pub constraints: Arc<VehicleConstraints>,
    pub reference: TrackFollower,
}

impl Benchmark {
    pub fn setup(&self, algorithm: Algorithm) -> Result<BenchmarkSetup> {
        let params = BicycleParams::new(self.params.l_r, self.params.l_f, self.params.dt)?;
        let plant = Bicycle { params };
        let track = sinusoidal_track(&self.track)?;
        let constraints = Arc::new(vehicle_constraints(track.clone(), self.u_lo, self.u_hi)?);
        let barrier = BarrierConfig::new(self.barrier.alpha, self.barrier.beta)?;
        let sys = augment(Arc::new(plant), self.noise.clone())?;
        let aware = match algorithm {
            Algorithm::Pnmpc => None,
            Algorithm::CapNmpc => Some(ConstraintAware::new(constraints.clone(), barrier)),
        };
        let problem = NmpcProblem::new(sys, aware, self.horizon, self.particles)?;
        Ok(BenchmarkSetup {
            problem,
            plant,
            constraints,
            reference: TrackFollower::new(track),
        })
    }

    /// One seeded closed-loop run. Both algorithms consume the same random
    /// stream layout, so equal seeds give them equal particle draws.
    pub fn run(
        &self,
        algorithm: Algorithm,
        seed: u64,
    ) -> std::result::Result<SimulationRecord, Aborted> {
        let mut setup = self.setup(algorithm).map_err(|error| Aborted {
            partial: SimulationRecord::default(),
            error,
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut record = run_closed_loop(
            &setup.problem,
            &setup.plant,
            &self.x0,
            &mut setup.reference,
            self.step_cap,
            Some(setup.constraints.as_ref()),
            &mut rng,
        )?;
        record.seed = Some(seed);
        Ok(record)
    }

    /// RMSE and cost of a record produced by this benchmark.
    pub fn metrics(&self, record: &SimulationRecord) -> Metrics {
        let observed: Vec<usize> = (0..self.noise.q_v.len())
            .filter(|&i| self.noise.q_v[i] > 0.0)
            .collect();
        let q: Vec<f64> = observed.iter().map(|&i| self.q_weights[i]).collect();
        metrics(record, &observed, &q, &self.r_weights)
    }
}
