use thiserror::Error;

/// Errors raised across model assembly, design, filtering and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("invalid parameter on {entity}: {reason}")]
    InvalidParameter { entity: String, reason: String },

    #[error("disconnected network: bus {bus} is unreachable from bus 0")]
    Disconnected { bus: usize },

    #[error("duplicate line ({from}, {to})")]
    DuplicateLine { from: usize, to: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unstable closed loop (spectral abscissa {abscissa:.3e})")]
    UnstableClosedLoop { abscissa: f64 },

    #[error("lyapunov conditioning: relative residual {residual:.3e}, condition estimate {condition:.3e}")]
    LyapunovConditioning { residual: f64, condition: f64 },

    #[error("are divergence after {} iterations (last residual {:.3e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    AreDivergence { history: Vec<f64> },

    #[error("design weights: {0}")]
    Weights(String),

    #[error("unstable gain (spectral abscissa {abscissa:.3e})")]
    UnstableGain { abscissa: f64 },

    #[error("admm stability loss at outer pass {pass}, iteration {iteration}")]
    AdmmStabilityLoss {
        pass: usize,
        iteration: usize,
        last_stable: Vec<f64>,
    },

    #[error("admm max iters: primal residual {primal:.3e}, dual residual {dual:.3e}")]
    AdmmMaxIters { primal: f64, dual: f64 },

    #[error("polish stability loss")]
    PolishStabilityLoss,

    #[error("cbf conflict at node {node}: gap hi - lo = {gap:.3e}")]
    CbfConflict { node: usize, gap: f64 },

    #[error("numerical blowup at t = {t}")]
    NumericalBlowup { t: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
