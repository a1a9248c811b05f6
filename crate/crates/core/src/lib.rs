//! Differentiable structured-mesh finite-volume solver with trainable
//! additive corrections.
//!
//! A baseline discrete residual `R(w)` is augmented by a correction
//! `f(w, alpha_theta(w))`. Parameters `theta` are calibrated either against a
//! measured full state (explicit layer) or through a Newton solve and its
//! discrete adjoint (implicit layer).

pub mod ad;
pub mod corrections;
pub mod error;
pub mod layout;
pub mod linalg;
pub mod mesh;
pub mod harness;
pub mod plants;
pub mod optimize;
pub mod solver;
pub mod util;

pub use error::{Error, Result};
