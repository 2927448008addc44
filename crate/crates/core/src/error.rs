use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("offered loads sum to {total}, expected 1")]
    OfferedLoad { total: f64 },
    #[error("class {class}: {name} = {value} must be strictly positive")]
    NonPositiveRate {
        class: usize,
        name: &'static str,
        value: f64,
    },
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("control is not in the simplex (sum {sum})")]
    NotInSimplex { sum: f64 },
    #[error("cost exponent m = {m} must be >= 1")]
    CostExponent { m: f64 },
    #[error("cost weights must be nonnegative and finite")]
    CostWeights,
    #[error("a queueing system needs at least one server")]
    NoServers,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("varpi: components must be nonnegative, got {value}")]
    NegativeComponent { value: f64 },
    #[error("varpi: sum {sum} is not an integer")]
    NonIntegerSum { sum: f64 },
    #[error("invalid simulation window: horizon {horizon}, burn-in {burn_in}")]
    Window { horizon: f64, burn_in: f64 },
    #[error("need at least one replica and one batch")]
    NoReplicas,
    #[error("state counter overflow at class {class}")]
    Overflow { class: usize },
    #[error("truncated state space has {states} states, limit is {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },
    #[error("stationary iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("invalid policy: {0}")]
    Policy(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("grid has {points} points, limit is {limit}")]
    GridTooLarge { points: usize, limit: usize },
    #[error("invalid truncation: {0}")]
    Truncation(String),
    #[error("invalid solver parameter: {0}")]
    Parameter(String),
    #[error("negative transition rate {rate} at grid point {index}")]
    NonMonotone { index: usize, rate: f64 },
    #[error("no convergence after {iterations} iterations; last spans {recent_spans:?}")]
    NotConverged {
        iterations: usize,
        recent_spans: Vec<f64>,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid path configuration: {0}")]
    Config(String),
    #[error("replica {replica} diverged: |X| = {norm} exceeds {limit} at t = {time}")]
    Diverged {
        replica: usize,
        time: f64,
        norm: f64,
        limit: f64,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("R is not a nonsingular M-matrix: {0}")]
    NotMMatrix(String),
    #[error("Lyapunov system is singular")]
    Singular,
    #[error("Lyapunov solution is not positive definite")]
    Indefinite,
    #[error("drift does not decay outside the cone (sup = {sup})")]
    NoDecay { sup: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
