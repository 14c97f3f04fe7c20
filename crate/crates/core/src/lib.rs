//! Non-local traffic flow on road networks with routing policies, social
//! optimum and platoon-flow control, a potential-game platoon scheduler and
//! an encrypted ring aggregation protocol for its occupancy counts.

pub mod error;
pub mod network;
pub mod network_sim;
pub mod nonlocal;
pub mod output;
pub mod platoon;
pub mod private_agg;
pub mod routing;
pub mod scenario;
pub mod scheduler;
pub mod social;

pub use error::{Error, Result};
pub use network::{
    Commodity, LinkId, NodeId, Piece, PiecewiseConstant, RoadNetwork, SourceSchedule,
    SplitSchedule, UserClass,
};
pub use nonlocal::{Grid, LinkModel, LinkState, NonlocalWindow, Scheme, SolverOptions, VelocityLaw};
pub use network_sim::{simulate, simulate_with, NetworkScenario, NetworkState, SplitProvider};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
