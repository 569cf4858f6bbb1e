//! Pipeline planning for CNN inference on clusters of edge devices.
//!
//! A model graph is cut into a chain of pieces ([`partition`]), the chain is
//! split into stages with devices and height strips ([`planner`]), plans can
//! be certified against exhaustive search ([`oracle`]) and replayed frame by
//! frame ([`simulator`]).

pub mod cost;
pub mod error;
pub mod graph;
pub mod io;
pub mod oracle;
pub mod partition;
pub mod planner;
pub mod simulator;
pub mod vertex_set;

pub use error::{Error, Result};
