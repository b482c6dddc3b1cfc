//! Cooperative Bayesian optimization on a discretized 2-D domain.
//!
//! An AI agent and a second agent (a synthetic user or a live human) take
//! turns choosing one coordinate each of the next query point. The AI keeps a
//! Gaussian-process belief over the objective, infers the user's conservatism
//! and explorativeness online with a Laplace approximation, and plans its
//! coordinate by Monte-Carlo rollouts against sampled user models.
//!
//! Module map:
//!
//! - [`grid`]: domain, objective functions, noisy queries, prior allocation
//! - [`gp`]: Gaussian-process regression on the grid
//! - [`user_model`]: conservative belief updates and noisy UCB decisions
//! - [`inference`]: Laplace posterior over the user parameters
//! - [`planner`]: rewards, rollouts and Bayes-adaptive planning
//! - [`agents`]: the AI policies and the synthetic user
//! - [`game`]: one episode of the cooperative game and its metrics
//! - [`experiment`]: batch suites, tables and plots
//! - [`session`]: HTTP service for games with a live human

pub mod agents;
pub mod error;
pub mod experiment;
pub mod game;
pub mod gp;
pub mod grid;
pub mod inference;
pub mod optim;
pub mod planner;
pub mod plot;
pub mod rng;
pub mod session;
pub mod stats;
pub mod user_model;

pub use error::{Error, Result};
