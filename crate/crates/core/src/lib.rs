//! Joint SCMA communication and IRS-assisted compressed-sensing imaging.
//!
//! The crate simulates a multi-user uplink in which an access point decodes
//! SCMA frames with a message-passing detector while reconstructing a sparse
//! voxel map of the room from the same received signals. Decoding and
//! sensing feed each other packet by packet (see [`joint::run`]).
//!
//! Module layout follows the signal chain: [`scene`] → [`channel`] →
//! [`scma`] / [`transceiver`] → [`mpa`] → [`sensing`] / [`gamp`] →
//! [`joint`], with [`metrics`] and [`harness`] on top.

pub mod channel;
pub mod error;
pub mod gamp;
pub mod harness;
pub mod joint;
pub mod linalg;
pub mod metrics;
pub mod mpa;
pub mod scenario;
pub mod scene;
pub mod scma;
pub mod sensing;
pub mod transceiver;

pub use channel::{
    composite_channel, known_channel, los_links, measurement_matrix, stack_measurements,
    GainTargets, Geometry, IrsPattern, LinkGains, LinkSet, OreGrid,
};
pub use error::{Error, Result};
pub use gamp::{g_in, g_out, gamp_solve, lift_complex, GampConfig, GampState, PriorParams};
pub use joint::{run, JointConfig, RunTrace};
pub use linalg::{CMat, RMat, C64};
pub use metrics::{cs_bound, mse, operating_point, ser_union_bound, BoundParams};
pub use mpa::{ml_decode, mpa_decode, ser};
pub use scene::{random_scene, Point3, RoomSpec, ScattererField};
pub use scma::{encode, factor_graph, validate_codebook, Codebook, FactorGraph};
pub use sensing::{estimate_channel, scatter_component, sense, SenseWindow};
pub use transceiver::{noise_sigma, transmit, Frame, ReceivedFrame};
