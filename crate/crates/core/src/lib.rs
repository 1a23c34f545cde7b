//! Two-component meta-analysis of proportions: a logit-normal random-effects
//! bulk plus a generalized Pareto tail above a threshold.

pub mod error;
pub mod gpd;
pub mod io;
pub mod optim;
pub mod rem;
pub mod simulate;
pub mod transforms;
pub mod types;
pub mod xtrem;

pub use error::{Result, XtremError};
pub use types::*;
