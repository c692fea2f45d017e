//! Geodesic ray transform of symmetric tensor fields on simple Riemannian
//! manifolds: geodesic flow, potential extraction in semi-geodesic charts,
//! solenoidal decomposition and a support-theorem verification harness.

pub mod chart;
pub mod config;
pub mod decomposition;
pub mod error;
pub mod expr;
pub mod extraction;
pub mod ode;
pub mod quadrature;
pub mod registry;
pub mod roots;
pub mod simplicity;
pub mod support;
pub mod transform;

pub mod domain;
pub mod field;
pub mod geodesic;
pub mod jacobi;
pub mod metric;

pub use error::{Error, Result};
