//! Per-node SDN layer: flowtable, wire codec and the node state machine.

pub mod codec;
pub mod flowtable;
pub mod node;

pub use codec::{CodecError, SdnMessage};
pub use flowtable::{Action, FlowEntry, FlowTable, Match};
pub use node::{Disposition, JoinState, SdnConfig, SdnNode};
