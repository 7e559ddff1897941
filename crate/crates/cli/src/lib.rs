//! Network-facing parts of the `metacdn` binary.

pub mod http;
pub mod service;
pub mod udp;
