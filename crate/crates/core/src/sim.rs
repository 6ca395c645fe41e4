//! Sampled-data closed-loop simulation with zero-order hold on the filtered
//! control and the disturbance. Fixed-step RK4 integration.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{assemble_state_space, line_coupling, setpoint_offset, LinearModel, NetworkSpec};
use crate::safety::{control_bounds, filter_with_fallback, nominal_control, FilterStatus, SafetyEnvelope};
use crate::units::rad_to_hz;

/// States whose magnitude exceeds this are treated as a blowup.
const BLOWUP_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceModel {
    Zero,
    Constant { value: f64 },
    /// Zero before `time`, `value` afterwards.
    Step { time: f64, value: f64 },
    Sinusoid { amplitude: f64, frequency_hz: f64, phase_rad: f64 },
    /// Independent uniform draws on `[-d_s, d_s]` per node and sample.
    UniformRandom { seed: u64 },
    /// `+d_s` where `ω̂_i ≥ 0`, `-d_s` otherwise: always pushes away from zero.
    Adversarial,
}

impl DisturbanceModel {
    pub fn validate(&self, d_s: f64) -> Result<()> {
        let within = |v: f64| v.is_finite() && v.abs() <= d_s;
        let ok = match *self {
            DisturbanceModel::Constant { value } | DisturbanceModel::Step { value, .. } => within(value),
            DisturbanceModel::Sinusoid {
                amplitude,
                frequency_hz,
                phase_rad,
            } => within(amplitude) && frequency_hz.is_finite() && phase_rad.is_finite(),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                entity: "disturbance".into(),
                reason: format!("{self:?} exceeds the bound d_s = {d_s}"),
            })
        }
    }
}

/// Stateful sampler for a [`DisturbanceModel`].
#[derive(Debug, Clone)]
pub struct DisturbanceSource {
    model: DisturbanceModel,
    d_s: f64,
    rng: ChaCha8Rng,
}

impl DisturbanceSource {
    pub fn new(model: DisturbanceModel, d_s: f64) -> Result<Self> {
        model.validate(d_s)?;
        let seed = match model {
            DisturbanceModel::UniformRandom { seed } => seed,
            _ => 0,
        };
        Ok(Self {
            model,
            d_s,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

/// Disturbance at sample time `t` for the sampled state `x = [θ̂; ω̂]`.
pub fn sample_disturbance(src: &mut DisturbanceSource, t: f64, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len() / 2;
    match src.model {
        DisturbanceModel::Zero => DVector::zeros(n),
        DisturbanceModel::Constant { value } => DVector::from_element(n, value),
        DisturbanceModel::Step { time, value } => {
            DVector::from_element(n, if t >= time { value } else { 0.0 })
        }
        DisturbanceModel::Sinusoid {
            amplitude,
            frequency_hz,
            phase_rad,
        } => DVector::from_element(
            n,
            amplitude * (std::f64::consts::TAU * frequency_hz * t + phase_rad).sin(),
        ),
        DisturbanceModel::UniformRandom { .. } => {
            let d_s = src.d_s;
            DVector::from_fn(n, |_, _| {
                if d_s > 0.0 {
                    src.rng.gen_range(-d_s..=d_s)
                } else {
                    0.0
                }
            })
        }
        DisturbanceModel::Adversarial => {
            DVector::from_fn(n, |i, _| if x[n + i] >= 0.0 { src.d_s } else { -src.d_s })
        }
    }
}

fn rk4<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (0.5 * h)));
    let k3 = f(&(x + &k2 * (0.5 * h)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One RK4 step of `ẋ = A x + B2 u + B1 d` with `u`, `d` held.
pub fn step_linear(
    model: &LinearModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let forcing = &model.b2 * u + &model.b1 * d;
    rk4(|s| &model.a * s + &forcing, x, h)
}

/// Swing dynamics with sine coupling, in deviation coordinates around the
/// nominal angles `θ0`.
#[derive(Debug, Clone)]
pub struct NonlinearPlant {
    pub n: usize,
    m: DVector<f64>,
    d: DVector<f64>,
    v: DVector<f64>,
    g_shunt: DVector<f64>,
    theta0: DVector<f64>,
    /// `(i, j, b_ij v_i v_j)`
    edges: Vec<(usize, usize, f64)>,
    offset: DVector<f64>,
}

impl NonlinearPlant {
    pub fn new(spec: &NetworkSpec) -> Self {
        let n = spec.n();
        let model = assemble_state_space(spec);
        let edges = spec
            .lines
            .iter()
            .map(|l| {
                let w = line_coupling(l) * spec.buses[l.from].voltage_pu * spec.buses[l.to].voltage_pu;
                (l.from, l.to, w)
            })
            .collect();
        Self {
            n,
            m: model.m,
            d: model.d,
            v: model.v,
            g_shunt: DVector::from_iterator(n, spec.buses.iter().map(|b| b.g_shunt_pu)),
            theta0: DVector::from_iterator(n, spec.buses.iter().map(|b| b.theta0_rad)),
            edges,
            offset: DVector::from_fn(n, |i, _| setpoint_offset(spec, i)),
        }
    }

    /// Power set-point realizing the control `u`: `P_set = u - c`.
    pub fn setpoint(&self, u: &DVector<f64>) -> DVector<f64> {
        u - &self.offset
    }

    pub fn rhs(&self, x: &DVector<f64>, p_set: &DVector<f64>, dist: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut power = DVector::from_fn(n, |i, _| {
            let v2 = self.v[i] * self.v[i];
            p_set[i] - self.g_shunt[i] * v2 + v2 * dist[i] - self.d[i] * x[n + i]
        });
        for &(i, j, w) in &self.edges {
            let flow = w * (x[i] - x[j] + self.theta0[i] - self.theta0[j]).sin();
            power[i] -= flow;
            power[j] += flow;
        }
        let mut dx = DVector::zeros(2 * n);
        for i in 0..n {
            dx[i] = x[n + i];
            dx[n + i] = power[i] / self.m[i];
        }
        dx
    }
}

/// One RK4 step of the nonlinear plant with `P_set` and `d` held.
pub fn step_nonlinear(
    plant: &NonlinearPlant,
    x: &DVector<f64>,
    p_set: &DVector<f64>,
    d: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    rk4(|s| plant.rhs(s, p_set, d), x, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    Linear,
    Nonlinear,
}

impl std::str::FromStr for PlantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(PlantKind::Linear),
            "nonlinear" => Ok(PlantKind::Nonlinear),
            other => Err(Error::Config(format!("unknown plant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub plant: PlantKind,
    pub envelope: SafetyEnvelope,
    /// When false the nominal `-Kx` is applied unfiltered.
    pub filter: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 10.0,
            substeps: 1,
            plant: PlantKind::Linear,
            envelope: SafetyEnvelope::from_hz(0.5, 0.5, 5.0, 5.0, 0.5)
                .expect("default envelope is valid"),
            filter: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter {
                entity: "simulation".into(),
                reason: format!("need 0 < dt <= horizon, got dt={} horizon={}", self.dt, self.horizon),
            });
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter {
                entity: "simulation".into(),
                reason: "substeps must be >= 1".into(),
            });
        }
        self.envelope.validated().map(|_| ())
    }

    pub fn samples(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Plant description for [`run_closed_loop`]. The controller and the filter
/// always use the linear model; the nonlinear plant needs the network.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub model: LinearModel,
    pub nonlinear: Option<NonlinearPlant>,
}

impl ClosedLoopSystem {
    pub fn from_spec(spec: &NetworkSpec) -> Self {
        Self {
            model: assemble_state_space(spec),
            nonlinear: Some(NonlinearPlant::new(spec)),
        }
    }
}

impl From<LinearModel> for ClosedLoopSystem {
    fn from(model: LinearModel) -> Self {
        Self { model, nonlinear: None }
    }
}

/// Sampled trajectory. Row `k` holds values at `t_k = k Δt`; `u` and `d` are
/// the values held over `[t_k, t_{k+1})`. Frequencies in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub n: usize,
    pub dt: f64,
    pub t: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub status: Vec<Vec<FilterStatus>>,
    /// Time of a numerical blowup, if the run was cut short.
    pub blowup: Option<f64>,
}

impl SimTrace {
    fn new(n: usize, dt: f64, capacity: usize) -> Self {
        Self {
            n,
            dt,
            t: Vec::with_capacity(capacity),
            theta: Vec::with_capacity(capacity),
            omega: Vec::with_capacity(capacity),
            u: Vec::with_capacity(capacity),
            d: Vec::with_capacity(capacity),
            status: Vec::with_capacity(capacity),
            blowup: None,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_state(&self) -> Option<DVector<f64>> {
        let k = self.len().checked_sub(1)?;
        Some(DVector::from_iterator(
            2 * self.n,
            self.theta[k].iter().chain(&self.omega[k]).copied(),
        ))
    }

    /// `Err(NumericalBlowup)` if the run was cut short.
    pub fn completed(&self) -> Result<&Self> {
        match self.blowup {
            Some(t) => Err(Error::NumericalBlowup { t }),
            None => Ok(self),
        }
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.n;
        let mut h = vec!["t".to_string()];
        h.extend((0..n).map(|i| format!("theta_hat_{i}")));
        h.extend((0..n).map(|i| format!("omega_hat_{i}")));
        h.extend((0..n).map(|i| format!("u_{i}")));
        h.extend((0..n).map(|i| format!("d_{i}")));
        h.extend((0..n).map(|i| format!("filter_{i}")));
        h
    }

    /// One row per sample: angles in rad, frequencies in Hz, powers in p.u.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Config(format!("writing trace: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header()).map_err(io)?;
        for k in 0..self.len() {
            let mut row = vec![self.t[k].to_string()];
            row.extend(self.theta[k].iter().map(f64::to_string));
            row.extend(self.omega[k].iter().map(|&w| rad_to_hz(w).to_string()));
            row.extend(self.u[k].iter().map(f64::to_string));
            row.extend(self.d[k].iter().map(f64::to_string));
            row.extend(self.status[k].iter().map(|s| s.as_str().to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing trace: {e}")))
    }
}

/// Simulates the filtered closed loop from `x0`. A blowup ends the run early
/// and is reported through [`SimTrace::blowup`].
pub fn run_closed_loop(
    sys: &ClosedLoopSystem,
    k: &DMatrix<f64>,
    cfg: &SimConfig,
    disturbance: &DisturbanceModel,
    x0: &DVector<f64>,
) -> Result<SimTrace> {
    cfg.validate()?;
    let model = &sys.model;
    let n = model.n;
    if k.shape() != (n, 2 * n) || x0.len() != 2 * n {
        return Err(Error::Dimension(format!(
            "gain {:?} and state {} for n = {n}",
            k.shape(),
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            entity: "initial state".into(),
            reason: "must be finite".into(),
        });
    }
    let nonlinear = match cfg.plant {
        PlantKind::Linear => None,
        PlantKind::Nonlinear => Some(sys.nonlinear.as_ref().ok_or_else(|| {
            Error::Config("nonlinear plant requested without a network description".into())
        })?),
    };
    let env = &cfg.envelope;
    let mut source = DisturbanceSource::new(disturbance.clone(), env.d_s)?;

    let steps = cfg.samples();
    let h = cfg.dt / cfg.substeps as f64;
    let mut trace = SimTrace::new(n, cfg.dt, steps + 1);
    let mut x = x0.clone();
    for step in 0..=steps {
        let t = step as f64 * cfg.dt;
        let u0 = nominal_control(k, &x);
        let mut u = DVector::zeros(n);
        let mut status = Vec::with_capacity(n);
        for i in 0..n {
            if cfg.filter {
                let bounds = control_bounds(model, &x, i, env);
                let (ui, s) = filter_with_fallback(u0[i], &bounds);
                u[i] = ui;
                status.push(s);
            } else {
                u[i] = u0[i];
                status.push(FilterStatus::Inactive);
            }
        }
        let d = sample_disturbance(&mut source, t, &x);

        trace.t.push(t);
        trace.theta.push(x.rows(0, n).iter().copied().collect());
        trace.omega.push(x.rows(n, n).iter().copied().collect());
        trace.u.push(u.iter().copied().collect());
        trace.d.push(d.iter().copied().collect());
        trace.status.push(status);
        if step == steps {
            break;
        }

        match nonlinear {
            None => {
                for _ in 0..cfg.substeps {
                    x = step_linear(model, &x, &u, &d, h);
                }
            }
            Some(plant) => {
                let p_set = plant.setpoint(&u);
                for _ in 0..cfg.substeps {
                    x = step_nonlinear(plant, &x, &p_set, &d, h);
                }
            }
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT) {
            trace.blowup = Some(t + cfg.dt);
            break;
        }
    }
    Ok(trace)
}

/// Uniform initial state: `θ̂_i ∈ theta_range`, `ω̂_i ∈ omega_range` (rad/s).
pub fn sample_initial_state(
    n: usize,
    theta_range: (f64, f64),
    omega_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let mut x = DVector::zeros(2 * n);
    for i in 0..n {
        x[i] = rng.gen_range(theta_range.0..=theta_range.1);
    }
    for i in 0..n {
        x[n + i] = rng.gen_range(omega_range.0..=omega_range.1);
    }
    x
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Summary of a trace against a safety band. Frequencies in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    pub max_abs_omega: f64,
    /// Largest distance outside `[-ω_l, ω_h]`, zero when never outside.
    pub max_exceedance: f64,
    /// Samples at which some node is outside the band.
    pub violation_samples: usize,
    pub violation_duration: f64,
    /// First time after which `‖x‖∞ ≤ settle_tol` holds for every sample.
    pub settling_time: Option<f64>,
    /// Node-samples where the filter changed the nominal control.
    pub filter_activations: usize,
    pub infeasible_fallbacks: usize,
    pub final_theta_inf: f64,
    pub final_omega_inf: f64,
}

pub fn safety_metrics(trace: &SimTrace, env: &SafetyEnvelope, settle_tol: f64) -> SafetyMetrics {
    let mut max_abs_omega: f64 = 0.0;
    let mut max_exceedance: f64 = 0.0;
    let mut violation_samples = 0;
    let mut filter_activations = 0;
    let mut infeasible_fallbacks = 0;
    let mut settling_time = None;

    for k in 0..trace.len() {
        let mut outside = false;
        for &w in &trace.omega[k] {
            max_abs_omega = max_abs_omega.max(w.abs());
            let excess = (w - env.omega_h).max(-env.omega_l - w);
            if excess > 0.0 {
                outside = true;
                max_exceedance = max_exceedance.max(excess);
            }
        }
        if outside {
            violation_samples += 1;
        }
        for s in &trace.status[k] {
            match s {
                FilterStatus::Inactive => {}
                FilterStatus::InfeasibleFallback => infeasible_fallbacks += 1,
                _ => filter_activations += 1,
            }
        }
        let norm = trace.theta[k]
            .iter()
            .chain(&trace.omega[k])
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if norm <= settle_tol {
            settling_time.get_or_insert(trace.t[k]);
        } else {
            settling_time = None;
        }
    }
    let inf = |v: Option<&Vec<f64>>| v.map_or(0.0, |r| r.iter().fold(0.0f64, |a, x| a.max(x.abs())));
    SafetyMetrics {
        max_abs_omega,
        max_exceedance,
        violation_samples,
        violation_duration: violation_samples as f64 * trace.dt,
        settling_time,
        filter_activations,
        infeasible_fallbacks,
        final_theta_inf: inf(trace.theta.last()),
        final_omega_inf: inf(trace.omega.last()),
    }
}
