use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("network contains a cycle through nodes {0:?}")]
    CycleDetected(Vec<u32>),
    #[error("network is not connected")]
    Disconnected,
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("split row at node {node} for commodity {commodity} sums to {sum} (t = {t})")]
    SplitRowInvalid {
        node: u32,
        commodity: usize,
        t: f64,
        sum: f64,
    },
    #[error("routing inconsistent with reachability: {0}")]
    RoutingInconsistent(String),
    #[error("characteristic fixed point did not converge after {iterations} iterations on [{t_start}, {t_end}]")]
    FixedPointDiverged {
        iterations: usize,
        t_start: f64,
        t_end: f64,
    },
    #[error("CFL condition violated at t = {t}: speed {speed} needs dt <= {dt_max}")]
    CflViolated { t: f64, speed: f64, dt_max: f64 },
    #[error("velocity law is not strictly positive: λ({t}, {w}) = {value}")]
    NonPositiveVelocity { t: f64, w: f64, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parcel entering at t = {entry} does not exit before the horizon {horizon}")]
    HorizonExceeded { entry: f64, horizon: f64 },
    #[error("no path from node {origin} to node {destination}")]
    NoPath { origin: u32, destination: u32 },
    #[error("more than {cap} simple paths between {origin} and {destination}")]
    TooManyPaths {
        origin: u32,
        destination: u32,
        cap: usize,
    },
    #[error("velocity field outside the admissible set: {0}")]
    LambdaOutOfSet(String),
    #[error("delay {delay} for vehicle {vehicle} outside window [{low}, {high}]")]
    InfeasibleDelay {
        vehicle: usize,
        delay: usize,
        low: usize,
        high: usize,
    },
    #[error("instance has {joint_states} joint states, exhaustive search is capped at {cap}")]
    InstanceTooLarge { joint_states: u128, cap: u128 },
    #[error("prime generation failed after {0} attempts")]
    PrimeGenerationFailed(usize),
    #[error("plaintext is outside Z_n")]
    PlaintextOutOfRange,
    #[error("ciphertext was produced under a different public key")]
    KeyMismatch,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("on link ({tail}, {head}): {source}")]
    OnLink {
        tail: u32,
        head: u32,
        #[source]
        source: Box<Error>,
    },
    #[error("scenario field `{field}` (line {line}, column {column}): {message}")]
    Schema {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn on_link(self, tail: u32, head: u32) -> Self {
        Error::OnLink {
            tail,
            head,
            source: Box::new(self),
        }
    }
}
