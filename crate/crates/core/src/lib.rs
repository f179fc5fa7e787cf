//! Stability certification for nonlinear networked control systems with
//! several time-varying delay channels.
//!
//! The crate is organised bottom-up:
//!
//! * [`matrix`] dense matrix carriers, element-wise absolute values and a
//!   Jacobi eigen-solver used for every definiteness decision;
//! * [`lmi`] block-structured decision variables, affine matrix constraints
//!   and SDPA sparse export;
//! * [`sdp`] a log-barrier interior-point method deciding LMI feasibility
//!   with a quantified margin and maximising linear objectives;
//! * [`analyzer`] the delay-dependent stability LMIs, the control-cycle
//!   bisection and Lyapunov synthesis for the non-networked loop;
//! * [`field`] delayed vector fields, the per-channel telescoping
//!   decomposition, sampling estimation and audit of the bound matrices;
//! * [`robot`] the two-link manipulator under feedback linearisation with
//!   four delayed channels;
//! * [`sim`] network delay trace generation and fixed-step integration of
//!   the delayed closed loop.

pub mod analyzer;
pub mod error;
pub mod field;
pub mod fixtures;
pub mod lmi;
pub mod matrix;
pub mod robot;
pub mod sdp;
pub mod sim;

pub use error::{Error, Result};
pub use matrix::{Mat, Sign, SymMat};
