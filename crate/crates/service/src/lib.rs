//! Repository node for spectrum footprint campaigns.

pub mod accounts;
pub mod api;
pub mod config;
pub mod daemon;
pub mod node;
pub mod store;

pub use config::Config;
pub use node::Node;
