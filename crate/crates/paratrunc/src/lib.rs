//! Parabolic Lipschitz truncation toolkit: Orlicz-function calculus, discrete
//! space-time fields, parabolic maximal operators, Whitney covers, the
//! truncation itself, Poincare-type diagnostics and a nonlinear heat solver
//! for caloric approximation experiments.

pub mod caloric;
pub mod grid;
pub mod maximal;
pub mod orlicz;
pub mod poincare;
pub mod truncation;
pub mod whitney;
