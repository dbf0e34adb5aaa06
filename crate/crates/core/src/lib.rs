//! Hybrid simulation of freeze-drying primary drying under switching
//! control policies, with a direct-method baseline for comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod collocation;
pub mod config;
pub mod controller;
pub mod error;
pub mod export;
pub mod integrator;
pub mod jacobian;
pub mod model;
pub mod newton;
pub mod policies;
pub mod radau;
pub mod roots;
pub mod trajectory;

pub use error::{Error, Result};
