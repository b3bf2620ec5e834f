//! Phase-noise-aware decision metric, pairwise statistics of the metric
//! difference, pairwise error probabilities, the union bound and the minimum
//! phase-noise metric (MPNM) of a codebook set.
//!
//! All statistics use the small-angle channel `r_k ≈ (|w_k| + n'_re + j(|w_k|θ_k
//! + n'_im)) e^{j arg w_k}` with `θ_k ~ N(0, σ_p²)` and `n_k ~ CN(0, N0)`.

mod enumerate;
mod pair;
mod tables;

use serde::{Deserialize, Serialize};

use crate::codebook::CodebookSet;
use crate::error::{Error, Result};

pub use enumerate::{
    mpnm, mpnm_only, mpnm_screen, pep_union_bound, Enumeration, EnumerationSummary, LabelPair, MetricReport,
    DEFAULT_EXACT_PAIR_BUDGET,
};
pub use pair::{
    pair_stats, pairwise_pep, pn_decision_metric, resource_terms, Coefficients, PairStats,
    ResourceTerms,
};
pub use tables::PairTables;

/// How `Eb/N0` maps to the complex-noise power `N0`: `E_b` is the average
/// superimposed codeword energy divided by `J · log2 M`.
pub const EBN0_CONVENTION: &str = "Eb = E[|w|^2] / (J log2 M); N0 = Eb * 10^(-EbN0/10)";

/// Channel operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnChannelParams {
    /// Phase-noise variance `σ_p²` in rad².
    pub sigma_p2: f64,
    /// Complex noise power `N0` (each real dimension carries `N0/2`).
    pub n0: f64,
    /// The `Eb/N0` in dB that `n0` was derived from, when known.
    pub eb_n0_db: Option<f64>,
}

impl PnChannelParams {
    pub fn new(sigma_p2: f64, n0: f64) -> Result<Self> {
        if !(sigma_p2 >= 0.0) || !sigma_p2.is_finite() {
            return Err(Error::InputDomain(format!(
                "phase-noise variance {sigma_p2} must be finite and >= 0"
            )));
        }
        if !(n0 > 0.0) || !n0.is_finite() {
            return Err(Error::InputDomain(format!("N0 {n0} must be finite and > 0")));
        }
        Ok(Self {
            sigma_p2,
            n0,
            eb_n0_db: None,
        })
    }

    /// `N0 = E_b 10^{-EbN0/10}` with `E_b = codeword_energy / bits_per_codeword`.
    pub fn from_ebn0(
        sigma_p2: f64,
        eb_n0_db: f64,
        codeword_energy: f64,
        bits_per_codeword: f64,
    ) -> Result<Self> {
        if !(codeword_energy > 0.0) || !(bits_per_codeword > 0.0) {
            return Err(Error::Degenerate(format!(
                "cannot derive N0 from energy {codeword_energy} over {bits_per_codeword} bits"
            )));
        }
        let eb = codeword_energy / bits_per_codeword;
        let mut p = Self::new(sigma_p2, eb * 10f64.powf(-eb_n0_db / 10.0))?;
        p.eb_n0_db = Some(eb_n0_db);
        Ok(p)
    }

    /// Operating point for a codebook set under [`EBN0_CONVENTION`].
    pub fn for_codebooks(cbs: &CodebookSet, sigma_p2: f64, eb_n0_db: f64) -> Result<Self> {
        let bits = cbs.users() as f64 * f64::from(cbs.bits_per_user());
        Self::from_ebn0(sigma_p2, eb_n0_db, cbs.average_superimposed_energy(), bits)
    }

    /// Per-real-dimension noise variance `N0/2`.
    pub fn half_n0(&self) -> f64 {
        self.n0 / 2.0
    }
}

/// Gaussian tail probability `Q(t) = ½ erfc(t/√2)`.
pub fn q_function(t: f64) -> f64 {
    0.5 * libm::erfc(t / std::f64::consts::SQRT_2)
}
