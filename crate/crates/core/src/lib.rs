//! Mimetic spectral element discretization of the steady incompressible
//! Navier-Stokes equations on 2D tensor-product meshes.
//!
//! The discretization keeps mass and momentum balances exact at the discrete
//! level: velocity unknowns are edge fluxes, pressure unknowns are cell
//! integrals, and the divergence is an integer incidence matrix, so
//! continuity holds to machine precision independent of resolution. Momentum
//! is balanced on a staggered dual tiling of the domain, one control volume
//! per velocity unknown, with convective and diffusive face fluxes closed by
//! Galerkin projections onto the tensor-product polynomial spaces.
//!
//! Modules build bottom-up: [`poly`] (1D nodes, weights, nodal and edge
//! bases), [`mesh`] (grid complex and incidence matrices), [`ops`] (mass
//! matrices, projections, convection, diffusion, boundary functionals),
//! [`solver`] (Picard iteration on the coupled saddle system), [`verify`]
//! (analytic benchmarks, error norms, convergence and cavity studies), and
//! [`cli`] (command line driver and file output).

pub mod cli;
pub mod la;
pub mod mesh;
pub mod ops;
pub mod poly;
pub mod solver;
pub mod verify;

use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("node computation failed: {0}")]
    NodeSolve(String),
    #[error("boundary data incompatible: {0}")]
    InconsistentBc(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("nonlinear iteration failed: {0}")]
    NonlinearSolve(String),
    #[error("continuity violated: {0}")]
    ContinuityViolated(String),
    #[error("reference data invalid: {0}")]
    ReferenceData(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
