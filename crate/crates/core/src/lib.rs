//! Photon-number statistics of heralded single-photon sources from
//! time-tagged detection events.
//!
//! The pipeline runs [`tagstream`] → [`coincidence`] → [`estimators`] →
//! [`ngwitness`]; [`simsource`] provides seeded source simulators with
//! closed-form expectations to validate it end to end.

pub mod coincidence;
pub mod estimators;
pub mod ngwitness;
pub mod simsource;
pub mod tagstream;

pub use coincidence::{count_triggered, CoincidenceCounts, WindowSpec};
pub use estimators::{estimate_stats, PhotonStats, SplittingRatio};
pub use ngwitness::{witness, Side, WitnessResult};
pub use tagstream::{ChannelRoles, TagStream, TimeTag};
