//! Spectral theory and dynamics of solitons of the one-dimensional NLS
//! i u_t + u_xx + |u|^{p-1} u = 0 near the cubic exponent.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod fgr;
pub mod internal_mode;
pub mod jost;
pub mod linearization;
pub mod numerics;
pub mod profile;

pub use dynamics::{ModulationState, SimConfig, Trajectory};
pub use error::{NlsError, Result};
pub use fgr::{ConditionRow, GammaReport, MomentFamily, MomentMethod, RadiationMode};
pub use internal_mode::{InternalMode, Method, Normalization};
pub use jost::{JostIndex, JostNormalization};
pub use linearization::OperatorKind;
pub use numerics::{inner, make_grid, Field2, Grid, GridKind, C64};
pub use profile::Params;
