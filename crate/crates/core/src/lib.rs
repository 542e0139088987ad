//! Dual-connectivity V2X simulator: 4G macrocell base stations plus 5G
//! roadside units, socially aware traffic steering, localized QoS
//! reclassification and bi-layer NOMA resource-block allocation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod grid;
pub mod ids;
pub mod radio;
pub mod scenario;
pub mod sim;
pub mod traffic;
