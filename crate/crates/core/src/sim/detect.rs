//! Exact maximum-likelihood detection over the superimposed constellation and
//! log-domain message passing on the factor graph.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codebook::{CodebookSet, SuperimposedConstellation};
use crate::error::{Error, Result};
use crate::pnmetrics::PnChannelParams;

/// Largest `|Φ|` the ML detector will enumerate by default.
pub const DEFAULT_ML_BUDGET: u128 = 1 << 20;

/// Per-resource likelihood used by the detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `‖r − w‖²`, the Gaussian likelihood that ignores phase noise.
    #[serde(alias = "standard")]
    Euclidean,
    /// Bivariate Gaussian along and across `w_k` with the phase-noise
    /// variance added to the tangential component.
    PnAware,
}

/// Detector selection for the link simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Detector {
    Ml {
        metric: Metric,
    },
    Mpa {
        variant: Metric,
        #[serde(default = "default_iterations")]
        iterations: usize,
        #[serde(default)]
        damping: f64,
    },
}

fn default_iterations() -> usize {
    8
}

impl Detector {
    pub fn mpa(variant: Metric) -> Self {
        Detector::Mpa {
            variant,
            iterations: default_iterations(),
            damping: 0.0,
        }
    }

    /// Short identifier used in result tables.
    pub fn id(&self) -> String {
        match self {
            Detector::Ml { metric } => format!("ml-{}", metric_name(*metric)),
            Detector::Mpa {
                variant,
                iterations,
                ..
            } => format!("mpa{iterations}-{}", metric_name(*variant)),
        }
    }
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Euclidean => "euclidean",
        Metric::PnAware => "pn-aware",
    }
}

/// Log-likelihood of `r_k` given the resource symbol `a`, up to a constant
/// that does not depend on `a`.
#[inline]
pub(crate) fn log_likelihood(r: Complex64, a: Complex64, p: &PnChannelParams, metric: Metric) -> f64 {
    let s = p.half_n0();
    match metric {
        Metric::Euclidean => -(r - a).norm_sqr() / (2.0 * s),
        Metric::PnAware => {
            let mag = a.norm();
            let z = if mag > 0.0 { r * (a.conj() / mag) } else { r };
            let quad = p.sigma_p2 * mag * mag + s;
            -0.5 * ((z.re - mag).powi(2) / s + z.im * z.im / quad + quad.ln())
        }
    }
}

/// Exhaustive detector over `Φ`, with per-resource alphabet indices cached.
#[derive(Debug, Clone)]
pub struct MlDetector {
    phi: SuperimposedConstellation,
    index: Vec<u32>,
    resources: usize,
}

impl MlDetector {
    pub fn new(cbs: &CodebookSet) -> Result<Self> {
        Self::with_budget(cbs, DEFAULT_ML_BUDGET)
    }

    /// Refuses when `M^J` exceeds `budget`; message passing is the
    /// alternative for such sets.
    pub fn with_budget(cbs: &CodebookSet, budget: u128) -> Result<Self> {
        let phi = SuperimposedConstellation::new(cbs);
        let size = phi.len().unwrap_or(u128::MAX);
        if size > budget {
            return Err(Error::BudgetRefusal {
                what: "superimposed codewords for ML detection (use the MPA detector instead)",
                required: size,
                budget,
            });
        }
        let index = phi.local_index_table()?;
        Ok(Self {
            resources: cbs.resources(),
            phi,
            index,
        })
    }

    pub fn constellation(&self) -> &SuperimposedConstellation {
        &self.phi
    }

    /// Labels of the codeword maximizing the chosen likelihood; ties go to
    /// the lowest codeword index.
    pub fn detect(&self, r: &[Complex64], p: &PnChannelParams, metric: Metric) -> Result<Vec<usize>> {
        let mut scratch = Vec::new();
        let g = self.detect_index(r, p, metric, &mut scratch)?;
        Ok(self.phi.labels_of(g as u128))
    }

    pub(crate) fn detect_index(
        &self,
        r: &[Complex64],
        p: &PnChannelParams,
        metric: Metric,
        scratch: &mut Vec<Vec<f64>>,
    ) -> Result<usize> {
        if r.len() != self.resources {
            return Err(Error::InputDomain(format!(
                "received vector has {} entries for {} resources",
                r.len(),
                self.resources
            )));
        }
        scratch.resize(self.resources, Vec::new());
        for (k, ll) in scratch.iter_mut().enumerate() {
            ll.clear();
            ll.extend(
                self.phi
                    .alphabet(k)
                    .iter()
                    .map(|&a| log_likelihood(r[k], a, p, metric)),
            );
        }
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (g, idx) in self.index.chunks_exact(self.resources).enumerate() {
            let v: f64 = idx
                .iter()
                .zip(scratch.iter())
                .map(|(&i, ll)| ll[i as usize])
                .sum();
            if v > best.0 {
                best = (v, g);
            }
        }
        if !best.0.is_finite() {
            return Err(Error::Numerical(format!(
                "no codeword has a finite likelihood for r = {r:?}"
            )));
        }
        Ok(best.1)
    }
}

/// Convenience wrapper building an [`MlDetector`] for a single decision.
pub fn detect_ml(
    r: &[Complex64],
    cbs: &CodebookSet,
    p: &PnChannelParams,
    metric: Metric,
) -> Result<Vec<usize>> {
    MlDetector::new(cbs)?.detect(r, p, metric)
}

/// Hard decisions and per-user posterior probabilities from message passing.
#[derive(Debug, Clone, PartialEq)]
pub struct MpaOutput {
    pub labels: Vec<usize>,
    /// `posteriors[j][l]`, summing to one over `l`.
    pub posteriors: Vec<Vec<f64>>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn normalize_log(v: &mut [f64]) {
    let z = log_sum_exp(v);
    v.iter_mut().for_each(|x| *x -= z);
}

/// Sum-product message passing, reusable across frames of one codebook set.
#[derive(Debug, Clone)]
pub struct MpaDetector {
    phi: SuperimposedConstellation,
    m: usize,
    users: usize,
    /// `slot[k][i]`: position of resource `k` in the list of user
    /// `resource_users(k)[i]`.
    slot: Vec<Vec<usize>>,
}

impl MpaDetector {
    pub fn new(cbs: &CodebookSet) -> Self {
        let g = cbs.graph();
        let slot = (0..g.resources())
            .map(|k| {
                g.resource_users(k)
                    .iter()
                    .map(|&j| g.user_resources(j).iter().position(|&x| x == k).unwrap())
                    .collect()
            })
            .collect();
        Self {
            phi: SuperimposedConstellation::new(cbs),
            m: cbs.size(),
            users: cbs.users(),
            slot,
        }
    }

    pub fn detect(
        &self,
        r: &[Complex64],
        p: &PnChannelParams,
        variant: Metric,
        iterations: usize,
        damping: f64,
    ) -> Result<MpaOutput> {
        let g = self.phi.graph();
        let (m, kk) = (self.m, g.resources());
        if iterations == 0 {
            return Err(Error::InputDomain("MPA needs at least one iteration".into()));
        }
        if !(0.0..1.0).contains(&damping) {
            return Err(Error::InputDomain(format!("damping {damping} outside [0, 1)")));
        }
        if r.len() != kk {
            return Err(Error::InputDomain(format!(
                "received vector has {} entries for {kk} resources",
                r.len()
            )));
        }
        let f: Vec<Vec<f64>> = (0..kk)
            .map(|k| {
                self.phi
                    .alphabet(k)
                    .iter()
                    .map(|&a| log_likelihood(r[k], a, p, variant))
                    .collect()
            })
            .collect();
        let n = g.user_degree();
        // v[j][n][l]: user j to its n-th resource; u[j][n][l]: back.
        let uniform = -(m as f64).ln();
        let mut v = vec![vec![vec![uniform; m]; n]; self.users];
        let mut u = vec![vec![vec![0.0; m]; n]; self.users];
        let mut t = Vec::new();
        let mut group_max = vec![0.0; m];
        let mut group_sum = vec![0.0; m];
        for _ in 0..iterations {
            for k in 0..kk {
                let users = g.resource_users(k);
                let d = users.len();
                // t[a] = f_k(a) + Σ_i v_i(l_i); the message to user i is the
                // marginal of t over its own label minus its own incoming term.
                t.clear();
                t.extend(f[k].iter().enumerate().map(|(a, &fa)| {
                    let mut rem = a;
                    let mut s = fa;
                    for ii in (0..d).rev() {
                        s += v[users[ii]][self.slot[k][ii]][rem % m];
                        rem /= m;
                    }
                    s
                }));
                let mut stride = 1;
                for i in (0..d).rev() {
                    let j = users[i];
                    group_max.iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
                    group_sum.iter_mut().for_each(|x| *x = 0.0);
                    for (a, &ta) in t.iter().enumerate() {
                        let l = (a / stride) % m;
                        if ta > group_max[l] {
                            group_max[l] = ta;
                        }
                    }
                    for (a, &ta) in t.iter().enumerate() {
                        let l = (a / stride) % m;
                        group_sum[l] += (ta - group_max[l]).exp();
                    }
                    let own = &v[j][self.slot[k][i]];
                    let mut fresh: Vec<f64> = (0..m)
                        .map(|l| group_max[l] + group_sum[l].ln() - own[l])
                        .collect();
                    normalize_log(&mut fresh);
                    let msg = &mut u[j][self.slot[k][i]];
                    for (o, nv) in msg.iter_mut().zip(fresh) {
                        *o = if damping > 0.0 { damping * *o + (1.0 - damping) * nv } else { nv };
                    }
                    stride *= m;
                }
            }
            for j in 0..self.users {
                for a in 0..n {
                    let mut out = vec![0.0; m];
                    for (b, ub) in u[j].iter().enumerate() {
                        if b != a {
                            out.iter_mut().zip(ub).for_each(|(o, x)| *o += x);
                        }
                    }
                    normalize_log(&mut out);
                    v[j][a] = out;
                }
            }
            let bad = |x: &[Vec<Vec<f64>>]| x.iter().flatten().flatten().any(|y| !y.is_finite());
            if bad(&u) || bad(&v) {
                return Err(Error::Numerical(format!(
                    "non-finite MPA message: r = {r:?}, likelihoods = {f:?}, user->resource = {v:?}, resource->user = {u:?}"
                )));
            }
        }
        let mut labels = Vec::with_capacity(self.users);
        let mut posteriors = Vec::with_capacity(self.users);
        for uj in &u {
            let mut post = vec![0.0; m];
            for ub in uj {
                post.iter_mut().zip(ub).for_each(|(o, x)| *o += x);
            }
            normalize_log(&mut post);
            let probs: Vec<f64> = post.iter().map(|x| x.exp()).collect();
            let best = (0..m).fold(0, |b, l| if post[l] > post[b] { l } else { b });
            labels.push(best);
            posteriors.push(probs);
        }
        Ok(MpaOutput { labels, posteriors })
    }
}

/// Convenience wrapper running message passing for a single frame.
pub fn detect_mpa(
    r: &[Complex64],
    cbs: &CodebookSet,
    p: &PnChannelParams,
    iterations: usize,
    variant: Metric,
) -> Result<MpaOutput> {
    MpaDetector::new(cbs).detect(r, p, variant, iterations, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FactorGraph;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_set(seed: u64, m: usize) -> CodebookSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = FactorGraph::preset_4x6();
        let cbs = (0..6)
            .map(|j| {
                (0..4)
                    .map(|k| {
                        (0..m)
                            .map(|_| {
                                if g.is_edge(k, j) {
                                    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                                } else {
                                    c(0.0, 0.0)
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        CodebookSet::new(g, cbs).unwrap()
    }

    fn single_user(points: &[(f64, f64)], second: &[(f64, f64)]) -> CodebookSet {
        let g = FactorGraph::from_incidence(&[vec![1], vec![1]]).unwrap();
        let row = |v: &[(f64, f64)]| v.iter().map(|&(a, b)| c(a, b)).collect::<Vec<_>>();
        CodebookSet::new(g, vec![vec![row(points), row(second)]]).unwrap()
    }

    #[test]
    fn exact_codeword_is_detected() {
        let cbs = random_set(3, 4);
        let det = MlDetector::new(&cbs).unwrap();
        let p = PnChannelParams::new(0.01, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
            let w = crate::codebook::superimpose(&cbs, &labels).unwrap();
            for metric in [Metric::Euclidean, Metric::PnAware] {
                assert_eq!(det.detect(&w, &p, metric).unwrap(), labels);
            }
        }
    }

    #[test]
    fn metrics_agree_without_phase_noise() {
        let cbs = random_set(5, 4);
        let det = MlDetector::new(&cbs).unwrap();
        let p = PnChannelParams::new(0.0, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let r: Vec<Complex64> = (0..4)
                .map(|_| c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            assert_eq!(
                det.detect(&r, &p, Metric::Euclidean).unwrap(),
                det.detect(&r, &p, Metric::PnAware).unwrap()
            );
        }
    }

    #[test]
    fn pn_aware_likelihood_matches_decision_metric() {
        let p = PnChannelParams::new(0.02, 0.1).unwrap();
        let r = [c(0.3, -1.1), c(2.0, 0.4)];
        let w = [c(0.5, -0.9), c(1.5, 1.0)];
        let ll: f64 = r
            .iter()
            .zip(&w)
            .map(|(&a, &b)| log_likelihood(a, b, &p, Metric::PnAware))
            .sum();
        let metric = crate::pnmetrics::pn_decision_metric(&r, &w, &p).unwrap();
        assert!((ll + metric / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ml_refuses_over_budget() {
        let cbs = random_set(1, 4);
        let err = MlDetector::with_budget(&cbs, 1000).unwrap_err();
        assert!(matches!(err, Error::BudgetRefusal { required: 4096, .. }));
        assert!(err.to_string().contains("MPA"));
    }

    #[test]
    fn mpa_posteriors_are_normalized() {
        let cbs = random_set(7, 4);
        let mpa = MpaDetector::new(&cbs);
        let p = PnChannelParams::new(0.03, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for variant in [Metric::Euclidean, Metric::PnAware] {
            for _ in 0..100 {
                let r: Vec<Complex64> = (0..4)
                    .map(|_| c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                    .collect();
                let out = mpa.detect(&r, &p, variant, 8, 0.0).unwrap();
                for post in &out.posteriors {
                    assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mpa_rejects_bad_arguments() {
        let cbs = random_set(7, 4);
        let p = PnChannelParams::new(0.0, 0.2).unwrap();
        let r = vec![c(0.0, 0.0); 4];
        assert!(detect_mpa(&r, &cbs, &p, 0, Metric::Euclidean).is_err());
        assert!(MpaDetector::new(&cbs).detect(&r, &p, Metric::Euclidean, 8, 1.0).is_err());
        assert!(detect_mpa(&r[..3], &cbs, &p, 8, Metric::Euclidean).is_err());
    }

    #[test]
    fn mpa_matches_ml_on_noiseless_frames() {
        let cbs = random_set(11, 4);
        let ml = MlDetector::new(&cbs).unwrap();
        let mpa = MpaDetector::new(&cbs);
        let p = PnChannelParams::new(0.0, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
            let w = crate::codebook::superimpose(&cbs, &labels).unwrap();
            let a = ml.detect(&w, &p, Metric::Euclidean).unwrap();
            let b = mpa.detect(&w, &p, Metric::Euclidean, 8, 0.0).unwrap().labels;
            assert_eq!(a, b);
        }
    }

    proptest! {
        #[test]
        fn single_user_mpa_is_exact_posterior(
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 8),
            r in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2),
            sigma in 0.0f64..0.05,
            n0 in 0.05f64..2.0,
            pn in any::<bool>(),
        ) {
            let cbs = single_user(&pts[..4], &pts[4..]);
            let p = PnChannelParams::new(sigma, n0).unwrap();
            let r: Vec<Complex64> = r.iter().map(|&(a, b)| c(a, b)).collect();
            let metric = if pn { Metric::PnAware } else { Metric::Euclidean };
            let out = detect_mpa(&r, &cbs, &p, 3, metric).unwrap();
            let ll: Vec<f64> = (0..4)
                .map(|l| (0..2).map(|k| log_likelihood(r[k], cbs.entry(0, k, l), &p, metric)).sum())
                .collect();
            let z = ll.iter().map(|x| x.exp()).sum::<f64>();
            for l in 0..4 {
                prop_assert!((out.posteriors[0][l] - ll[l].exp() / z).abs() < 1e-9);
            }
            let ml = detect_ml(&r, &cbs, &p, metric).unwrap();
            let best = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((ll[ml[0]] - best).abs() < 1e-12);
            prop_assert!((ll[out.labels[0]] - best).abs() < 1e-12);
        }
    }
}
