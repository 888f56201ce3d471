//! Crowd transport under broadcasting agents.
//!
//! A population density is carried by the continuity equation
//! `∂t ρ + div(ρ v(t, x, P(t))) = 0`, where `P = (P_1, …, P_k)` are the
//! positions of a handful of controlled agents. Each agent steers its own
//! velocity in order to pull (or push) the crowd towards a target point,
//! scoring the terminal cost `∫ ρ(T, x) ψ_i(x) dx`.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: cell-centred fields, quadrature, gradients, support tracking, CSV/PGM.
//! - [`velocity`]: the radial interaction kernels and all their derivatives.
//! - [`pde`]: Lax–Friedrichs finite volumes with dimensional splitting.
//! - [`characteristics`]: exact transport along characteristics and the
//!   variational equation for the derivative of the flow in the agent speed.
//! - [`strategy`]: greedy gradient controls, scripted controls and a brute-force oracle.
//! - [`game`]: the coupled run over `[0, T]`.
//! - [`scenarios`]: TOML configuration, built-in presets, output writers.
//! - [`verify`]: executable checks of the analytic estimates.

pub mod characteristics;
pub mod error;
pub mod game;
pub mod grid;
pub mod pde;
pub mod scenarios;
pub mod strategy;
pub mod velocity;
pub mod verify;

pub use error::{Error, Result};
pub use game::{run_game, terminal_cost, GameTrace};
pub use grid::{Grid2D, ScalarField, VectorField2};
pub use scenarios::{load_scenario, preset, Scenario};
pub use velocity::{KernelForm, Polarity, RadialKernel, VelocityModel};

/// Points and displacements in the plane.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2×2 Jacobian blocks.
pub type Mat2 = nalgebra::Matrix2<f64>;
