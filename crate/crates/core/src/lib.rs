//! Polarized-skylight / GNSS / strapdown-INS integrated navigation.
//!
//! The crate recovers the bi-directional sun vector from division-of-focal-plane
//! polarimetric imagery, mechanizes a strapdown INS in the ENU frame, and fuses
//! GNSS position/velocity and the sun vector in a 15-state error-state Kalman
//! filter. A synthetic Rayleigh sky and a scenario simulator provide end-to-end
//! ground truth.

pub mod config;
pub mod eigen3;
pub mod frames;
pub mod fusion;
pub mod io;
pub mod polarimetry;
pub mod rng;
pub mod sim;
pub mod sins;
pub mod sky;
pub mod sun;

pub use frames::{Dcm, EarthModel, EulerAngles, GeodeticPosition, MisalignmentAngles, Vec3};
pub use polarimetry::{BidirSolarVector, CameraIntrinsics, MosaicFrame, MosaicPattern};
pub use sun::{SolarVectorEnu, UtcInstant};
