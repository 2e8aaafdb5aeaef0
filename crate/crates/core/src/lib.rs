//! Joint downlink beamforming and D2D power control for a D2D-assisted
//! integrated sensing and communication (ISAC) cell.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: configuration, unit conversion, geometry, seeded RNG streams
//! - [`channel`]: Rayleigh/path-loss channel draws and radar array quantities
//! - [`sensing`]: MVDR combining, SCNR, the linearized sensing coefficient, beampatterns
//! - [`rates`]: covariance-level SINRs and the sum-rate objective
//! - [`solver`]: a barrier interior-point method for log-concave programs over
//!   Hermitian PSD blocks
//! - [`subproblem`]: the convex surrogate built around an expansion point
//! - [`optimizer`]: the outer successive-approximation loop and all schemes
//! - [`harness`]: experiment orchestration and CSV output

pub mod channel;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod rates;
pub mod scenario;
pub mod sensing;
pub mod solver;
pub mod subproblem;

pub use channel::{build_radar_environment, sample_channels, steering_vector, ChannelSet, RadarEnvironment};

pub use optimizer::{run_scheme, BeamformingSolution, SchemeId};
pub use rates::{sum_rate, PowerAllocation, RateReport};
pub use scenario::{default_config, from_decibels, sample_geometry, DecibelKind, Geometry, RngStream, SystemConfig};
pub use sensing::{mvdr_weights, scnr, TransmitCovariance};

/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
