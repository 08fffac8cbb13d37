use thiserror::Error;

use crate::exprs::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid system: {0}")]
    InvalidSpec(String),
    #[error("speed of family {family} is {value} <= 0 at x = {x}")]
    NonPositiveSpeed { family: usize, x: f64, value: f64 },
    #[error("grid has {nodes} nodes, at least {required} required")]
    GridTooCoarse { nodes: usize, required: usize },
    #[error("boundary Jacobian is not in class B (trailing minor {order} is singular)")]
    NotClassB { order: usize },
    #[error("Newton solve at level {level} stalled after {iterations} iterations (residual {residual:e})")]
    NewtonFailed {
        level: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("argument norm {norm} exceeds trust radius {radius}")]
    OutsideTrustRadius { norm: f64, radius: f64 },
    #[error("cubic problem invalid: {0}")]
    Cubic(String),
    #[error("no power-of-two scale up to 2^60 extinguishes eta before {deadline}")]
    MuSearchFailed { deadline: f64 },
    #[error("T = {horizon} does not exceed T_opt = {t_opt}")]
    HorizonTooShort { horizon: f64, t_opt: f64 },
    #[error("auxiliary channel {channel} extinguishes at {extinction}, after delta/2 = {deadline}")]
    AuxTooSlow {
        channel: usize,
        extinction: f64,
        deadline: f64,
    },
    #[error("family {family} launched at t = {start} did not leave the domain before t = {limit}")]
    HorizonExhausted { family: usize, start: f64, limit: f64 },
    #[error("time step {dt} violates CFL limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },
    #[error("state left the small-data box at t = {time} (sup |w| = {sup})")]
    SmallnessExceeded { time: f64, sup: f64 },
    #[error("trajectory stride {stride} too coarse, need 1")]
    StrideTooCoarse { stride: usize },
    #[error("invalid run configuration: {0}")]
    Config(String),
}
