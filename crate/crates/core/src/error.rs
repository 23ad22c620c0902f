use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("non-convex Hamiltonian table: axis {axis}, p-index {p_index} (second difference {second_difference:e})")]
    NonConvexTable {
        axis: usize,
        p_index: usize,
        second_difference: f64,
    },

    #[error("invalid Hamiltonian: {0}")]
    Hamiltonian(String),

    #[error("invalid coupling matrix: {0}")]
    Coupling(String),

    #[error("spectral premise violated: {0}")]
    Spectral(String),

    #[error("invalid problem: {0}")]
    Problem(String),

    #[error("CFL condition violated: dt * (sum theta/dx + max c_kk) = {value:.6} > 0.5")]
    Cfl { value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("time {0} is not on the value-field lattice")]
    OffLattice(f64),

    #[error("curve is untrusted: {0}")]
    UntrustedCurve(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
