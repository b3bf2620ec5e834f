use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{q_function, PnChannelParams};
use crate::error::{Error, Result};

/// Relative distance below which two resource symbols count as the same
/// point. Sums of the same symbols taken in a different order differ by a few
/// ulps; treating them as distinct would feed pure rounding noise into the
/// variance.
pub(crate) const COINCIDENT_REL: f64 = 1e-9;

pub(crate) fn coincident(a: Complex64, b: Complex64) -> bool {
    let scale = a.norm_sqr().max(b.norm_sqr());
    (a - b).norm_sqr() <= COINCIDENT_REL * COINCIDENT_REL * scale
}

/// `arg` with the convention `arg{0} = 0`.
fn arg0(z: Complex64) -> f64 {
    if z == Complex64::new(0.0, 0.0) {
        0.0
    } else {
        z.arg()
    }
}

/// Negative log-likelihood (up to constants) of `r` given `w` under the
/// small-angle phase-noise channel:
///
/// `L_w = Σ_k (Re{r_k e^{-j arg w_k}} − |w_k|)² / (N0/2)
///        + Im{r_k e^{-j arg w_k}}² / (σ_p²|w_k|² + N0/2)
///        + ln(σ_p²|w_k|² + N0/2)`.
pub fn pn_decision_metric(r: &[Complex64], w: &[Complex64], p: &PnChannelParams) -> Result<f64> {
    if r.len() != w.len() {
        return Err(Error::InputDomain(format!(
            "received vector has {} entries, codeword has {}",
            r.len(),
            w.len()
        )));
    }
    let s = p.half_n0();
    Ok(r.iter()
        .zip(w)
        .map(|(&rk, &wk)| {
            let mag = wk.norm();
            let z = rk * Complex64::from_polar(1.0, -arg0(wk));
            let quad = p.sigma_p2 * mag * mag + s;
            (z.re - mag).powi(2) / s + z.im * z.im / quad + quad.ln()
        })
        .sum())
}

/// The coefficient family `a_k … i_k` entering the variance of `η_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub i: f64,
}

/// Per-resource contribution to the statistics of `η = L_w − L_ŵ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceTerms {
    /// `Δ_w = arg w_k − arg ŵ_k`
    pub delta: f64,
    /// `E{V1}`
    pub ev1: f64,
    /// `E{V2}`
    pub ev2: f64,
    pub coefficients: Coefficients,
    pub mean: f64,
    pub variance: f64,
    /// `w_k` and `ŵ_k` are the same point; mean and variance are exactly 0.
    pub coincident: bool,
}

/// Mean and variance of `η_k` given `w_k` sent and `ŵ_k` considered.
pub fn resource_terms(w: Complex64, w_hat: Complex64, p: &PnChannelParams) -> ResourceTerms {
    let s = p.half_n0();
    let sp = p.sigma_p2;
    let (aw, ah) = (w.norm(), w_hat.norm());
    let (aw2, ah2) = (aw * aw, ah * ah);
    let delta = arg0(w) - arg0(w_hat);
    let (sn, cs) = delta.sin_cos();
    let (sn2, cs2) = (sn * sn, cs * cs);
    let hat_quad = sp * ah2 + s;
    let own_quad = sp * aw2 + s;

    let ev1 = ((aw * cs - ah).powi(2) + aw2 * sn2 * sp + s) / s;
    let ev2 = (aw2 * (sn2 + sp * cs2) + s) / hat_quad;
    let k = Coefficients {
        a: (aw2 * sn2 * sp + s) / s,
        b: (aw * cs - ah).powi(2) / s,
        c: (aw2 * cs2 * sp + s) / hat_quad,
        d: aw2 * sn2 / hat_quad,
        e: aw2 * sn2 * sp / hat_quad,
        f: aw2 * cs2 * sp / s,
        g: (ah2 - aw2 * cs2) / s,
        h: own_quad / s,
        i: hat_quad / s,
    };
    if coincident(w, w_hat) {
        return ResourceTerms {
            delta,
            ev1,
            ev2,
            coefficients: k,
            mean: 0.0,
            variance: 0.0,
            coincident: true,
        };
    }
    let mean = 2.0 + (own_quad / hat_quad).ln() - ev1 - ev2;
    let variance = 4.0 + 2.0 * k.a * k.a + 4.0 * k.a * k.b + 2.0 * k.c * k.c
        + 4.0 * k.c * k.d
        + 4.0 * k.e * k.f
        + 4.0 * k.e * k.g
        - 4.0 * k.b * k.e
        - 4.0 * sn2 * (k.h + 1.0 / k.i)
        - 4.0 * cs2 * (1.0 + k.h / k.i);
    ResourceTerms {
        delta,
        ev1,
        ev2,
        coefficients: k,
        mean,
        variance,
        coincident: false,
    }
}

/// Statistics of `η = L_w − L_ŵ` given `w` sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub mean: f64,
    pub variance: f64,
    /// `−mean / √variance`, the argument of the pairwise error probability.
    pub q_arg: f64,
    pub resources: Vec<ResourceTerms>,
}

/// Mean, variance and Q-argument of the metric difference for `w → ŵ`.
pub fn pair_stats(w: &[Complex64], w_hat: &[Complex64], p: &PnChannelParams) -> Result<PairStats> {
    if w.len() != w_hat.len() {
        return Err(Error::InputDomain(format!(
            "codewords of length {} and {}",
            w.len(),
            w_hat.len()
        )));
    }
    let resources: Vec<ResourceTerms> = w
        .iter()
        .zip(w_hat)
        .map(|(&a, &b)| resource_terms(a, b, p))
        .collect();
    if resources.iter().all(|t| t.coincident) {
        return Err(Error::InputDomain(
            "pair statistics need two distinct codewords".into(),
        ));
    }
    let mean: f64 = resources.iter().map(|t| t.mean).sum();
    let variance: f64 = resources.iter().map(|t| t.variance).sum();
    if !(variance > 0.0) {
        return Err(Error::Numerical(format!(
            "variance of the metric difference is {variance} for distinct codewords"
        )));
    }
    Ok(PairStats {
        mean,
        variance,
        q_arg: -mean / variance.sqrt(),
        resources,
    })
}

/// `Pr{w → ŵ} ≈ Q(−E{η} / √Var{η})`.
pub fn pairwise_pep(w: &[Complex64], w_hat: &[Complex64], p: &PnChannelParams) -> Result<f64> {
    Ok(q_function(pair_stats(w, w_hat, p)?.q_arg))
}
