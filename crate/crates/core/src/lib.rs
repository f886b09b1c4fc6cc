//! Homogenization of order-one nonlocal Hamilton-Jacobi-Bellman equations on the
//! periodic torus: kernels, monotone discretizations, cell problems, the
//! effective Hamiltonian and the convergence experiment.

pub mod bellman;
pub mod cell;
pub mod cli;
pub mod config;
pub mod effective;
pub mod error;
pub mod grid;
pub mod homog;
pub mod kernels;
pub mod nonlocal;
pub mod quadrature;
pub mod trig;

pub use error::{Error, Result};
pub use grid::{GridFunction, TorusGrid, Vec2};
