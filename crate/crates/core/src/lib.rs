//! Federated IoT publish/subscribe middleware: broker nodes, an HTTP
//! gateway, an authentication store, background utility services and a
//! load generator.

pub mod auth;
pub mod broker;
pub mod clock;
pub mod deploy;
pub mod gateway;
pub mod loadgen;
pub mod router;
pub mod topic;
pub mod utility;
