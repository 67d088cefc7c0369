//! Topology-aware piecewise-linear AC power flow.
//!
//! The crate trains a small ReLU network that predicts the nonlinear
//! branch-flow terms `V_i^2`, `V_i V_j cos θ_ij` and `V_i V_j sin θ_ij`,
//! pushes them through fixed linear layers to obtain every line flow and
//! nodal injection, and compiles the result together with binary line
//! statuses into a mixed-integer linear program. An embedded simplex and
//! branch-and-bound kernel solves the resulting transmission switching
//! problems.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature only
//! enables wall-clock budgets in the MILP solver and runtime CPU feature
//! detection for the dense kernels.
//!
//! Module map:
//!
//! * [`network`]: grid data model and the fixed flow/injection matrices.
//! * [`acflow`]: exact flows, common terms, Jacobians and Newton-Raphson.
//! * [`sampler`]: seeded operating-point datasets.
//! * [`pwlnet`]: the generative PWL model, the direct baseline and training.
//! * [`milp`]: bounded primal simplex and best-first branch-and-bound.
//! * [`encode`]: big-M ReLU and line-status product encodings.
//! * [`ots`]: PWL and DC transmission switching, AC feasibility checks.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod acflow;
pub mod encode;
pub mod linalg;
pub mod milp;
pub mod network;
pub mod ots;
pub mod pwlnet;
pub mod rng;
pub mod sampler;

pub use acflow::{CommonTermJacobian, CommonTerms, OperatingPoint, PowerVariables};
pub use network::{Branch, Bus, BusKind, FixedMatrices, Generator, Network, NetworkError};

