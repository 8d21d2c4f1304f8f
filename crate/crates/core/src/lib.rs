//! Neural-network regression with Tukey g-and-h predictive distributions.
//!
//! A network predicts, per input row, the four parameters `(mu, sigma, g, h)` of a
//! g-and-h law `Y = mu + sigma * tau_{g,h}(Z)`, `Z ~ N(0, 1)`, and is trained on the
//! exact negative log-likelihood. The transform has no closed-form inverse, so the
//! likelihood inverts it by bisection and differentiates through the root with the
//! implicit-function identities.
//!
//! Modules:
//!
//! - [`transform`]: the transform, its derivatives, the bisection inverse, density,
//!   quantiles and sampling.
//! - [`loss`]: link functions, the per-sample likelihood with its exact gradient,
//!   and the Gaussian baseline.
//! - [`nn`]: a small dense network (ReLU, batch norm, late-feature injection),
//!   Adam with a step schedule, a training loop and a binary model format.
//! - [`synth`]: simulation designs (well-specified g-and-h, student-t, spatial).
//! - [`eval`]: residuals, PIT/KS diagnostics, prediction intervals, densities.
//! - [`io`]: CSV ingestion, splits, standardization and experiment configs.
//! - [`model`]: a trained network bundled with everything needed to predict.

pub mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod normal;
pub mod roots;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
pub use loss::{LinkConfig, Likelihood, LossKind, LossValueAndGrad};
pub use matrix::Matrix;
pub use model::TrainedModel;
pub use transform::{InverseSolverConfig, ShapeParams, TghParams};
