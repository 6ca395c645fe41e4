//! Sparsity-promoting H2 state feedback.
//!
//! Minimizes `J(K) + γ Σ W_ij |K_ij|` where `J(K) = tr(B1ᵀ P(K) B1)` and
//! `P(K)` is the closed-loop observability Gramian. The problem is split as
//! `K - G = 0` and solved with scaled ADMM: a smooth K-step (gradient
//! descent with Armijo backtracking over stabilizing gains), a closed-form
//! soft-threshold G-step, and a dual update. The weights are refreshed
//! between ADMM runs (`W = 1 / (|K| + ε)`), and the final sparsity pattern
//! is polished by unpenalized descent restricted to that pattern.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    check_stability, solve_are, solve_lyapunov_unchecked, DesignWeights, LyapunovOptions,
    StabilityReport,
};
use crate::netmodel::LinearModel;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityOptions {
    pub gamma: f64,
    /// Reweighting constant `ε` in `W = 1/(|K| + ε)`.
    pub epsilon: f64,
    /// ADMM penalty `ρ`.
    pub rho: f64,
    pub max_admm_iters: usize,
    pub max_reweight_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    /// Entries of the ADMM iterate below `zero_tol_rel · max|G|` are structural zeros.
    pub zero_tol_rel: f64,
    /// Entries of the polished gain below this magnitude are dropped.
    pub zero_tol_abs: f64,
    pub kstep_max_iters: usize,
    pub kstep_tol: f64,
    pub polish: PolishOptions,
}

impl Default for SparsityOptions {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            epsilon: 0.1,
            rho: 100.0,
            max_admm_iters: 1000,
            max_reweight_iters: 5,
            primal_tol: 1e-4,
            dual_tol: 1e-4,
            zero_tol_rel: 1e-6,
            zero_tol_abs: 1e-6,
            kstep_max_iters: 100,
            kstep_tol: 1e-6,
            polish: PolishOptions::default(),
        }
    }
}

impl SparsityOptions {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter {
            entity: "sparsity options".into(),
            reason: what.into(),
        });
        if !(self.gamma >= 0.0) {
            return bad("gamma must be >= 0");
        }
        if !(self.epsilon > 0.0 && self.rho > 0.0) {
            return bad("epsilon and rho must be > 0");
        }
        if !(self.primal_tol > 0.0 && self.dual_tol > 0.0 && self.kstep_tol > 0.0) {
            return bad("tolerances must be > 0");
        }
        if !(self.zero_tol_abs > 0.0 && self.zero_tol_rel > 0.0) {
            return bad("zero tolerances must be > 0");
        }
        if !(self.zero_tol_abs < self.epsilon) {
            return bad("zero_tol must be < epsilon");
        }
        if self.max_admm_iters == 0 || self.max_reweight_iters == 0 {
            return bad("iteration limits must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolishOptions {
    pub max_iters: usize,
    /// Stop once `‖∇J‖_F` restricted to the pattern falls below this.
    pub grad_tol: f64,
}

impl Default for PolishOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iterations {
    pub admm: usize,
    pub reweight: usize,
    pub polish: usize,
    /// Whether the last ADMM pass met both residual tolerances.
    pub admm_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainResult {
    pub k: DMatrix<f64>,
    pub pattern: DMatrix<bool>,
    pub gamma: f64,
    pub cost: f64,
    pub card: usize,
    pub stability: StabilityReport,
    pub iterations: Iterations,
}

/// Closed-loop H2 cost and its gradient for a fixed plant and weights.
pub struct H2Objective<'a> {
    model: &'a LinearModel,
    w: &'a DesignWeights,
    b1b1t: DMatrix<f64>,
    lyap: LyapunovOptions,
}

impl<'a> H2Objective<'a> {
    pub fn new(model: &'a LinearModel, w: &'a DesignWeights) -> Self {
        Self {
            model,
            w,
            b1b1t: &model.b1 * model.b1.transpose(),
            lyap: LyapunovOptions { residual_tol: 1e-9 },
        }
    }

    fn closed_loop(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.model;
        if k.shape() != (m.inputs(), m.states()) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, expected {:?}",
                k.shape(),
                (m.inputs(), m.states())
            )));
        }
        let a_cl = &m.a - &m.b2 * k;
        let stability = check_stability(&a_cl);
        if !stability.is_hurwitz {
            return Err(Error::UnstableGain {
                abscissa: stability.spectral_abscissa,
            });
        }
        Ok(a_cl)
    }

    fn gramian(&self, a_cl: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let s = &self.w.q + k.transpose() * &self.w.r * k;
        solve_lyapunov_unchecked(a_cl, &s, &self.lyap)
    }

    pub fn cost(&self, k: &DMatrix<f64>) -> Result<f64> {
        let a_cl = self.closed_loop(k)?;
        let p = self.gramian(&a_cl, k)?;
        Ok((self.model.b1.transpose() * p * &self.model.b1).trace())
    }

    /// `J(K)` and `∇J = 2 (R K - B2ᵀ P) Lc` with `A_cl Lc + Lc A_clᵀ = -B1 B1ᵀ`.
    pub fn cost_and_gradient(&self, k: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let a_cl = self.closed_loop(k)?;
        let p = self.gramian(&a_cl, k)?;
        let cost = (self.model.b1.transpose() * &p * &self.model.b1).trace();
        let lc = solve_lyapunov_unchecked(&a_cl.transpose(), &self.b1b1t, &self.lyap)?;
        let grad = (&self.w.r * k - self.model.b2.transpose() * &p) * lc * 2.0;
        Ok((cost, grad))
    }
}

pub fn h2_cost(model: &LinearModel, w: &DesignWeights, k: &DMatrix<f64>) -> Result<f64> {
    H2Objective::new(model, w).cost(k)
}

pub fn h2_gradient(model: &LinearModel, w: &DesignWeights, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    H2Objective::new(model, w).cost_and_gradient(k).map(|(_, g)| g)
}

pub fn reweight(k: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    k.map(|v| 1.0 / (v.abs() + epsilon))
}

/// Elementwise `sign(v) · max(|v| - a, 0)`.
pub fn soft_threshold(v: &DMatrix<f64>, thresholds: &DMatrix<f64>) -> DMatrix<f64> {
    v.zip_map(thresholds, |x, a| {
        let mag = x.abs() - a;
        if mag > 0.0 {
            mag.copysign(x)
        } else {
            0.0
        }
    })
}

/// Mutable ADMM iterates, carried between consecutive γ values of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub k: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// Scaled dual variable `Λ / ρ`.
    pub dual: DMatrix<f64>,
}

impl AdmmState {
    pub fn from_gain(k: DMatrix<f64>) -> Self {
        let dual = DMatrix::zeros(k.nrows(), k.ncols());
        Self {
            g: k.clone(),
            k,
            dual,
        }
    }
}

/// Minimizes `J(K) + ρ/2 ‖K - target‖²` from a stabilizing start.
fn k_step(
    objective: &H2Objective,
    start: &DMatrix<f64>,
    target: &DMatrix<f64>,
    opts: &SparsityOptions,
) -> std::result::Result<(DMatrix<f64>, usize), DMatrix<f64>> {
    let rho = opts.rho;
    let phi = |k: &DMatrix<f64>, j: f64| j + 0.5 * rho * (k - target).norm_squared();
    let mut k = start.clone();
    let Ok((j0, mut grad_j)) = objective.cost_and_gradient(&k) else {
        return Err(k);
    };
    let mut value = phi(&k, j0);
    let mut step = 1.0 / rho;
    let mut iters = 0;
    for _ in 0..opts.kstep_max_iters {
        let grad = &grad_j + (&k - target) * rho;
        let gnorm2 = grad.norm_squared();
        if gnorm2.sqrt() <= opts.kstep_tol {
            break;
        }
        iters += 1;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &k - &grad * step;
            if let Ok((jt, gt)) = objective.cost_and_gradient(&trial) {
                let vt = phi(&trial, jt);
                if vt <= value - 1e-4 * step * gnorm2 {
                    accepted = Some((trial, gt, vt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, gt, vt)) = accepted else {
            return Err(k);
        };
        let stalled = value - vt <= 1e-15 * value.abs();
        k = trial;
        grad_j = gt;
        value = vt;
        step = (step * 2.0).min(4.0 / rho);
        if stalled {
            break;
        }
    }
    Ok((k, iters))
}

struct AdmmOutcome {
    state: AdmmState,
    admm_iters: usize,
    passes: usize,
    converged: bool,
}

fn run_admm(
    objective: &H2Objective,
    opts: &SparsityOptions,
    mut state: AdmmState,
) -> Result<AdmmOutcome> {
    opts.validate()?;
    let mut weights = DMatrix::from_element(state.k.nrows(), state.k.ncols(), 1.0);
    let mut admm_iters = 0;
    let mut last = (f64::INFINITY, f64::INFINITY);
    let mut all_converged = true;
    for pass in 0..opts.max_reweight_iters {
        let thresholds = &weights * (opts.gamma / opts.rho);
        let mut converged = false;
        for it in 0..opts.max_admm_iters {
            admm_iters += 1;
            let target = &state.g - &state.dual;
            let (k, _) = k_step(objective, &state.k, &target, opts).map_err(|last_stable| {
                Error::AdmmStabilityLoss {
                    pass,
                    iteration: it,
                    last_stable: last_stable.as_slice().to_vec(),
                }
            })?;
            state.k = k;
            let g_prev = std::mem::replace(
                &mut state.g,
                soft_threshold(&(&state.k + &state.dual), &thresholds),
            );
            state.dual += &state.k - &state.g;
            let primal = (&state.k - &state.g).norm();
            let dual = opts.rho * (&state.g - &g_prev).norm();
            last = (primal, dual);
            if primal <= opts.primal_tol && dual <= opts.dual_tol {
                converged = true;
                break;
            }
        }
        if !converged && pass + 1 == opts.max_reweight_iters {
            all_converged = false;
            // A slow dual residual still leaves a usable pattern; an
            // infeasible split (K far from G) does not.
            if last.0 > opts.primal_tol {
                return Err(Error::AdmmMaxIters {
                    primal: last.0,
                    dual: last.1,
                });
            }
        }
        weights = reweight(&state.k, opts.epsilon);
    }
    Ok(AdmmOutcome {
        state,
        admm_iters,
        passes: opts.max_reweight_iters,
        converged: all_converged,
    })
}

/// Structural nonzeros of an ADMM iterate.
pub fn pattern_of(g: &DMatrix<f64>, zero_tol_rel: f64) -> DMatrix<bool> {
    let tol = zero_tol_rel * g.amax();
    g.map(|v| v.abs() > tol && v != 0.0)
}

/// Sparse gain from a fresh start at `k_init` (typically the centralized gain).
pub fn admm_sparse_gain(
    model: &LinearModel,
    w: &DesignWeights,
    opts: &SparsityOptions,
    k_init: &DMatrix<f64>,
) -> Result<GainResult> {
    admm_sparse_gain_from(model, w, opts, AdmmState::from_gain(k_init.clone())).map(|(g, _)| g)
}

/// As [`admm_sparse_gain`], resuming from a previous ADMM state.
pub fn admm_sparse_gain_from(
    model: &LinearModel,
    w: &DesignWeights,
    opts: &SparsityOptions,
    start: AdmmState,
) -> Result<(GainResult, AdmmState)> {
    let objective = H2Objective::new(model, w);
    let outcome = run_admm(&objective, opts, start)?;
    let pattern = pattern_of(&outcome.state.g, opts.zero_tol_rel);
    let seed = outcome.state.k.zip_map(&pattern, |v, keep| if keep { v } else { 0.0 });
    let mut result = polish_from(model, w, &pattern, &seed, opts)?;
    result.gamma = opts.gamma;
    result.iterations.admm = outcome.admm_iters;
    result.iterations.reweight = outcome.passes;
    result.iterations.admm_converged = outcome.converged;
    Ok((result, outcome.state))
}

/// Minimizes `J` over gains supported on `pattern`, starting from `start`
/// restricted to the pattern (BFGS on the free entries, backtracking on
/// stability loss).
pub fn polish(
    model: &LinearModel,
    w: &DesignWeights,
    pattern: &DMatrix<bool>,
    start: &DMatrix<f64>,
) -> Result<GainResult> {
    polish_from(model, w, pattern, start, &SparsityOptions::default())
}

fn polish_from(
    model: &LinearModel,
    w: &DesignWeights,
    pattern: &DMatrix<bool>,
    start: &DMatrix<f64>,
    opts: &SparsityOptions,
) -> Result<GainResult> {
    let objective = H2Objective::new(model, w);
    if pattern.shape() != start.shape() {
        return Err(Error::Dimension("pattern and gain shapes differ".into()));
    }
    let free: Vec<usize> = (0..pattern.len()).filter(|&i| pattern[i]).collect();
    let to_gain = |x: &[f64]| {
        let mut k = DMatrix::zeros(start.nrows(), start.ncols());
        for (&idx, &v) in free.iter().zip(x) {
            k[idx] = v;
        }
        k
    };
    let eval = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (j, g) = objective.cost_and_gradient(&to_gain(x)).ok()?;
        Some((j, free.iter().map(|&i| g[i]).collect()))
    };

    let mut x: Vec<f64> = free.iter().map(|&i| start[i]).collect();
    let Some((mut j, mut g)) = eval(&x) else {
        return Err(Error::PolishStabilityLoss);
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nfree = free.len();
    let mut h_inv = DMatrix::<f64>::identity(nfree, nfree);
    let mut scaled = false;
    let mut iters = 0;
    while iters < opts.polish.max_iters {
        let gnorm = norm(&g);
        if gnorm <= opts.polish.grad_tol || nfree == 0 {
            break;
        }
        iters += 1;
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut dir = -(&h_inv * &gv);
        let mut slope = dir.dot(&gv);
        if slope >= 0.0 {
            h_inv = DMatrix::identity(nfree, nfree);
            scaled = false;
            dir = -gv.clone();
            slope = -gnorm * gnorm;
        }
        if !scaled {
            // Unit first step would be far too long on the raw gradient.
            let scale = 1e-2 / gnorm.max(1e-300);
            dir *= scale.min(1.0);
            slope *= scale.min(1.0);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            if let Some((jt, gt)) = eval(&trial) {
                // Near the optimum J changes by less than its rounding error;
                // a smaller gradient is then the only usable signal.
                let noise = 8.0 * f64::EPSILON * j.abs();
                let flat = jt <= j + noise && norm(&gt) < gnorm;
                if jt <= j + 1e-4 * t * slope || flat {
                    accepted = Some((trial, jt, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, jn, gn)) = accepted else {
            break;
        };
        let s = nalgebra::DVector::from_iterator(nfree, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = nalgebra::DVector::from_iterator(nfree, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if !scaled {
                h_inv = DMatrix::identity(nfree, nfree) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        j = jn;
        g = gn;
    }

    let k = to_gain(&x).map(|v| if v.abs() > opts.zero_tol_abs { v } else { 0.0 });
    let pattern = k.map(|v| v != 0.0);
    let cost = objective.cost(&k).map_err(|_| Error::PolishStabilityLoss)?;
    let stability = check_stability(&(&model.a - &model.b2 * &k));
    let card = pattern.iter().filter(|&&b| b).count();
    Ok(GainResult {
        k,
        pattern,
        gamma: opts.gamma,
        cost,
        card,
        stability,
        iterations: Iterations {
            polish: iters,
            ..Iterations::default()
        },
    })
}

/// One point of a γ sweep; failed points keep their error.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub gamma: f64,
    pub outcome: Result<GainResult>,
}

/// `count` logarithmically spaced values in `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

/// Warm-started sweep over ascending `gammas`, seeded with the centralized gain.
pub fn gamma_sweep(
    model: &LinearModel,
    w: &DesignWeights,
    gammas: &[f64],
    opts: &SparsityOptions,
) -> Result<Vec<SweepPoint>> {
    if gammas.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidParameter {
            entity: "gamma list".into(),
            reason: "must be ascending".into(),
        });
    }
    let centralized = solve_are(model, w)?;
    let mut state = AdmmState::from_gain(centralized.k);
    let mut points = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let point_opts = opts.clone().with_gamma(gamma);
        let outcome = match admm_sparse_gain_from(model, w, &point_opts, state.clone()) {
            Ok((result, next)) => {
                state = next;
                Ok(result)
            }
            Err(e) => Err(e),
        };
        points.push(SweepPoint { gamma, outcome });
    }
    Ok(points)
}

/// Serialized form of a [`GainResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDocument {
    pub gamma: f64,
    pub cost: f64,
    pub card: usize,
    pub spectral_abscissa: f64,
    /// Row-major, `n` rows of `2n` entries.
    pub k: Vec<Vec<f64>>,
    pub pattern: Vec<Vec<u8>>,
}

impl GainResult {
    pub fn to_document(&self) -> GainDocument {
        GainDocument {
            gamma: self.gamma,
            cost: self.cost,
            card: self.card,
            spectral_abscissa: self.stability.spectral_abscissa,
            k: (0..self.k.nrows())
                .map(|i| self.k.row(i).iter().copied().collect())
                .collect(),
            pattern: (0..self.pattern.nrows())
                .map(|i| self.pattern.row(i).iter().map(|&b| b as u8).collect())
                .collect(),
        }
    }
}

impl GainDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gain document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("gain document: {e}")))
    }

    pub fn gain(&self) -> Result<DMatrix<f64>> {
        let rows = self.k.len();
        let cols = self.k.first().map_or(0, Vec::len);
        if rows == 0 || self.k.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("gain rows are ragged or empty".into()));
        }
        Ok(DMatrix::from_fn(rows, cols, |i, j| self.k[i][j]))
    }

    pub fn pattern_matrix(&self) -> Result<DMatrix<bool>> {
        let rows = self.pattern.len();
        let cols = self.pattern.first().map_or(0, Vec::len);
        if rows == 0 || self.pattern.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("pattern rows are ragged or empty".into()));
        }
        Ok(DMatrix::from_fn(rows, cols, |i, j| self.pattern[i][j] != 0))
    }
}
