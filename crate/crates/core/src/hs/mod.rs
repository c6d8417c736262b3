//! The hierarchical-split block.

mod block;
mod channels;
mod plan;

pub use block::{HsBottleneck, HsStage, Shortcut};
pub use channels::{concat_channels, split_channels};
pub use plan::{channel_plan, ChannelPlan, HsBlockConfig, HsVariant};
