//! Discrete machinery for local Tb experiments on atomic measures.
//!
//! The crate is organised bottom-up: [`measure`] holds atomic measures and
//! lattice-valued functions, [`grid`] builds shifted dyadic systems and the
//! good/bad classification, [`accretive`] carries test-function systems and
//! their stopping layers, [`martingale`] implements the adapted conditional
//! expectations, [`randnorm`] evaluates Rademacher norms and related
//! quantities, and [`cz`] handles kernels, matrix decay and the pairing
//! ledger. [`fixtures`] wires them into reproducible instances.

pub mod accretive;
pub mod cz;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod martingale;
pub mod measure;
pub mod randnorm;
pub mod seed;

pub use error::{Result, TbError};
