//! Reconfigurable CMOS image-sensor skipping system: a transformer mask
//! generator that scores image regions, a readout simulator that skips rows or
//! regions with power-gated column ADCs, and the front-end energy model that
//! prices each frame.

pub mod energy;
pub mod error;
pub mod io;
pub mod masking;
pub mod mgn;
pub mod numeric;
pub mod pgm;
pub mod scenes;
pub mod sensor;

pub use error::{Error, Result};
