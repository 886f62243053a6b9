//! Trimmed L-statistics: exact Winsorization decomposition, Cramér-type tail
//! bounds and a deterministic Monte Carlo engine.

pub mod bounds;
pub mod error;
pub mod lstat;
pub mod mc;
pub mod numeric;
pub mod quantile;
pub mod stream;
pub mod weights;
pub mod winsor;

pub use error::{Error, Result};
pub use lstat::{asymptotic_sigma2, centering_mu, normalize, trimmed_lstat, NormalizedStatistic};
pub use mc::{SimulationConfig, StatisticKind, TailTable, XGrid};
pub use quantile::{Model, QuantileModel, SampleFrame};
pub use weights::{TrimRule, TrimSpec, WeightFn, WeightScheme};
pub use winsor::{decomposition_report, CaseOrdering, Decomposer, DecompositionReport, SampleDesign, WinsorizedModel};
