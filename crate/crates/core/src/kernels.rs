//! Dense control kernels: Lyapunov solves, Hurwitz checks and the
//! continuous-time algebraic Riccati equation.

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::netmodel::LinearModel;

/// State and control weights of the H2 performance output `z = [Q^½ x; -R^½ K x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl DesignWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return Err(Error::Weights("Q and R must be square".into()));
        }
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        let q_min = SymmetricEigen::new(q.clone()).eigenvalues.min();
        if q_min < -1e-12 * q.amax().max(1.0) {
            return Err(Error::Weights(format!("Q not PSD (min eigenvalue {q_min:.3e})")));
        }
        let r_min = SymmetricEigen::new(r.clone()).eigenvalues.min();
        if !(r_min > 0.0) {
            return Err(Error::Weights(format!("R not PD (min eigenvalue {r_min:.3e})")));
        }
        Ok(Self { q, r })
    }

    /// `Q = I_{2n}`, `R = I_n`.
    pub fn identity(n: usize) -> Self {
        Self {
            q: DMatrix::identity(2 * n, 2 * n),
            r: DMatrix::identity(n, n),
        }
    }

    /// Shape check plus stabilizability of `(A, B2)` and detectability of `(A, Q^½)`.
    pub fn validate_for(&self, model: &LinearModel) -> Result<()> {
        let ns = model.states();
        if self.q.nrows() != ns || self.r.nrows() != model.inputs() {
            return Err(Error::Dimension(format!(
                "weights {}x{} / {}x{} do not match model with {} states and {} inputs",
                self.q.nrows(),
                self.q.ncols(),
                self.r.nrows(),
                self.r.ncols(),
                ns,
                model.inputs()
            )));
        }
        if !is_stabilizable(&model.a, &model.b2) {
            return Err(Error::Weights("(A, B2) is not stabilizable".into()));
        }
        if !is_stabilizable(&model.a.transpose(), &self.q) {
            return Err(Error::Weights("(A, Q^1/2) is not detectable".into()));
        }
        Ok(())
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::Weights(format!("{name} not symmetric (|M - Mᵀ| = {asym:.3e})")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub spectral_abscissa: f64,
    pub is_hurwitz: bool,
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    a.complex_eigenvalues().iter().copied().collect()
}

/// Eigenvalue real parts within this floor of zero are reported as exactly zero.
fn roundoff_floor(a: &DMatrix<f64>) -> f64 {
    1e3 * f64::EPSILON * a.norm().max(1.0)
}

pub fn check_stability(a_cl: &DMatrix<f64>) -> StabilityReport {
    let mut abscissa = eigenvalues(a_cl)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if abscissa.abs() <= roundoff_floor(a_cl) {
        abscissa = 0.0;
    }
    StabilityReport {
        spectral_abscissa: abscissa,
        is_hurwitz: abscissa < 0.0,
    }
}

/// Popov–Belevitch–Hautus test on the closed right half-plane eigenvalues.
fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let floor = roundoff_floor(a);
    for lambda in eigenvalues(a) {
        if lambda.re < -floor {
            continue;
        }
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                pencil[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            pencil[(i, i)] -= lambda;
            for j in 0..b.ncols() {
                pencil[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        let sv = pencil.singular_values();
        let tol = 1e-10 * sv.max().max(1.0);
        if sv.iter().filter(|&&s| s > tol).count() < n {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovOptions {
    /// Bound on `‖AᵀP + PA + S‖_F / ‖S‖_F`.
    pub residual_tol: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self { residual_tol: 1e-10 }
    }
}

/// Solves `A_clᵀ P + P A_cl = -S` for symmetric `S`.
pub fn solve_lyapunov(a_cl: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_lyapunov_with(a_cl, s, &LyapunovOptions::default())
}

pub fn solve_lyapunov_with(
    a_cl: &DMatrix<f64>,
    s: &DMatrix<f64>,
    opts: &LyapunovOptions,
) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    if !a_cl.is_square() || s.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "lyapunov: A is {:?}, S is {:?}",
            a_cl.shape(),
            s.shape()
        )));
    }
    let stability = check_stability(a_cl);
    if !stability.is_hurwitz {
        return Err(Error::UnstableClosedLoop {
            abscissa: stability.spectral_abscissa,
        });
    }
    solve_lyapunov_unchecked(a_cl, s, opts)
}

/// Upper-triangle (column of `i ≤ j`) index into the packed unknown vector.
#[inline]
fn packed(i: usize, j: usize, n: usize) -> usize {
    let (p, q) = if i <= j { (i, j) } else { (j, i) };
    p * n - p * (p + 1) / 2 + q
}

/// Symmetric-vectorized direct solve; skips the Hurwitz precheck.
pub(crate) fn solve_lyapunov_unchecked(
    a_cl: &DMatrix<f64>,
    s: &DMatrix<f64>,
    opts: &LyapunovOptions,
) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    let dim = n * (n + 1) / 2;
    let mut op = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
    for i in 0..n {
        for j in i..n {
            let row = packed(i, j, n);
            // (Aᵀ P)_ij = Σ_k A_ki P_kj ;  (P A)_ij = Σ_k P_ik A_kj
            for k in 0..n {
                op[(row, packed(k, j, n))] += a_cl[(k, i)];
                op[(row, packed(i, k, n))] += a_cl[(k, j)];
            }
            rhs[row] = -0.5 * (s[(i, j)] + s[(j, i)]);
        }
    }
    let lu = op.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(Error::LyapunovConditioning {
        residual: f64::INFINITY,
        condition: f64::INFINITY,
    })?;

    let unpack = |x: &nalgebra::DVector<f64>| {
        DMatrix::from_fn(n, n, |i, j| x[packed(i, j, n)])
    };
    let s_norm = s.norm().max(f64::MIN_POSITIVE);
    let mut p = unpack(&x);
    let mut residual = lyapunov_residual(a_cl, &p, s) / s_norm;
    if residual > opts.residual_tol {
        // One step of iterative refinement on the packed system.
        let r = &rhs - &op * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
            p = unpack(&x);
            residual = lyapunov_residual(a_cl, &p, s) / s_norm;
        }
    }
    if !residual.is_finite() || residual > opts.residual_tol {
        let sv = op.singular_values();
        return Err(Error::LyapunovConditioning {
            residual,
            condition: sv.max() / sv.min(),
        });
    }
    Ok(p)
}

/// `‖AᵀP + PA + S‖_F`.
pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    (a.transpose() * p + p * a + s).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreOptions {
    /// Bound on the relative Riccati residual.
    pub residual_tol: f64,
    pub max_iters: usize,
    pub lyapunov: LyapunovOptions,
}

impl Default for AreOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            max_iters: 50,
            lyapunov: LyapunovOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Relative residual of `AᵀP + PA - P B R⁻¹ Bᵀ P + Q = 0`.
pub fn are_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &DesignWeights,
    p: &DMatrix<f64>,
) -> f64 {
    let r_inv = w.r.clone().try_inverse().expect("R is positive definite");
    let atp = a.transpose() * p;
    let pgp = p * b * r_inv * b.transpose() * p;
    let res = &atp + atp.transpose() - &pgp + &w.q;
    res.norm() / (2.0 * atp.norm() + pgp.norm() + w.q.norm()).max(f64::MIN_POSITIVE)
}

/// Stabilizing gain by Bass's method: with `β` above the mirrored spectrum,
/// `(A + βI) Z + Z (A + βI)ᵀ = 2 B Bᵀ` yields `Z ≻ 0` and `A - B BᵀZ⁻¹` Hurwitz.
pub fn bass_stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eig = eigenvalues(a);
    let min_re = eig.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let max_abs = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let beta = (-min_re).max(0.0) + 0.1 * max_abs.max(1.0);
    let shifted = -(a + DMatrix::<f64>::identity(n, n) * beta);
    // (-Ā)ᵀ X + X (-Ā) = -2BBᵀ solved for X = Z with the transpose convention.
    let z = solve_lyapunov_with(
        &shifted.transpose(),
        &(b * b.transpose() * 2.0),
        &LyapunovOptions { residual_tol: 1e-8 },
    )?;
    let z_inv = z.try_inverse().ok_or_else(|| {
        Error::Weights("(A, B2) not controllable; cannot seed the Riccati iteration".into())
    })?;
    Ok(b.transpose() * z_inv)
}

/// Newton–Kleinman iteration for the H2-optimal (LQR) gain.
pub fn solve_are(model: &LinearModel, w: &DesignWeights) -> Result<AreSolution> {
    solve_are_with(model, w, &AreOptions::default())
}

pub fn solve_are_with(
    model: &LinearModel,
    w: &DesignWeights,
    opts: &AreOptions,
) -> Result<AreSolution> {
    w.validate_for(model)?;
    let a = &model.a;
    let b = &model.b2;
    let r_inv = w.r.clone().try_inverse().expect("R is positive definite");

    let mut k = if check_stability(a).is_hurwitz {
        DMatrix::zeros(model.inputs(), model.states())
    } else {
        bass_stabilizing_gain(a, b)?
    };
    let mut history = Vec::new();
    for it in 1..=opts.max_iters {
        let a_cl = a - b * &k;
        let s = &w.q + k.transpose() * &w.r * &k;
        let p = match solve_lyapunov_with(&a_cl, &s, &opts.lyapunov) {
            Ok(p) => p,
            Err(_) => return Err(Error::AreDivergence { history }),
        };
        let p = (&p + p.transpose()) * 0.5;
        let k_next = &r_inv * b.transpose() * &p;
        let residual = are_residual(a, b, w, &p);
        history.push(residual);
        let step = (&k_next - &k).norm() / k_next.norm().max(1.0);
        k = k_next;
        if residual <= opts.residual_tol && step <= 1e-12 {
            let a_cl = a - b * &k;
            if !check_stability(&a_cl).is_hurwitz {
                return Err(Error::AreDivergence { history });
            }
            // Gramian of the final gain so P and K are consistent.
            let s = &w.q + k.transpose() * &w.r * &k;
            let p = solve_lyapunov_with(&a_cl, &s, &opts.lyapunov)
                .map_err(|_| Error::AreDivergence {
                    history: history.clone(),
                })?;
            let p = (&p + p.transpose()) * 0.5;
            let residual = are_residual(a, b, w, &p);
            return Ok(AreSolution {
                k: &r_inv * b.transpose() * &p,
                p,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::AreDivergence { history })
}
