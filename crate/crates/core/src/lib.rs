//! Numerical study kit for 1-D linear viscoelasticity with relaxation
//! functions that are only continuous (derivative jumps allowed).
//!
//! * [`kernels`]: relaxation functions, admissibility audit, integrated kernel K
//! * [`mollify`]: smooth approximants G_eps and their convergence to G
//! * [`exprparse`]: expression language for data and kernels
//! * [`discretization`]: Dirichlet grid, discrete Laplacian, eigenpairs
//! * [`solver`]: integral-form and differential-form time marching
//! * [`energy`]: energy functional, dissipation checks, mode projections
//! * [`config`] and [`scenarios`]: the `viscokern` command line studies

pub mod config;
pub mod discretization;
pub mod energy;
pub mod exprparse;
pub mod kernels;
pub mod mollify;
pub mod quadrature;
pub mod report;
pub mod scenarios;
pub mod solver;
