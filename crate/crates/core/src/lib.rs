//! Discrete-event simulator of a TSCH low-power mesh running a lightweight
//! SDN control plane, with optional Layer-2 track slices that carry control
//! traffic to the controller.

pub mod controller;
pub mod experiment;
pub mod kernel;
pub mod mac;
pub mod metrics;
pub mod network;
pub mod packet;
pub mod phy;
pub mod rpl;
pub mod scenario;
pub mod sdn;
pub mod track;

pub use kernel::{Asn, Kernel, RngStream, RngStreams, SimClock, StreamId};
pub use phy::{NodeId, Topology};
pub use scenario::{Mode, Scenario};
