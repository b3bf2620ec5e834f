//! Phase-noise-resilient SCMA codebooks: LP-PAM mother constellations,
//! operator-based codebook construction, the phase-noise pairwise metric and
//! its minimum over the superimposed constellation, a design optimizer and a
//! link-level simulator.

pub mod codebook;
pub mod error;
pub mod graph;
pub mod lppam;
pub mod mcbuild;
pub mod optimize;
pub mod pnmetrics;
pub mod schema;
pub mod sim;

pub use codebook::{
    build_codebooks, normalize_power, superimpose, CodebookSet, OperatorSet,
    SuperimposedConstellation,
};
pub use error::{Error, Result};
pub use graph::{FactorGraph, SlotMap};
pub use lppam::{LpPamSpec, PamMultiset};
pub use mcbuild::{binary_switching, MotherConstellation, PermutationSearchConfig};
pub use optimize::{optimize, DesignSpace, OptimizationResult, OptimizerConfig, Strategy};
pub use pnmetrics::{mpnm, Enumeration, MetricReport, PnChannelParams};
pub use sim::{run_ber, Detector, Metric, SimResult, StoppingRule};
