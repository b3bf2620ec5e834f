//! N-dimensional mother constellations built from an LP-PAM seed by
//! per-dimension permutations, and the binary switching search that picks
//! those permutations.

use std::cmp::Ordering;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lppam::PamMultiset;

/// `N × M` real constellation whose row `n` is `π_n(C_M)`, scaled so that the
/// average codeword (column) energy is one.
#[derive(Debug, Clone, PartialEq)]
pub struct MotherConstellation {
    rows: Vec<Vec<f64>>,
    permutations: Vec<Vec<usize>>,
}

impl MotherConstellation {
    /// Applies `permutations[n]` to the seed for every dimension `n`;
    /// `rows[n][m] = seed[permutations[n][m]] / sqrt(N · E_seed)`.
    pub fn from_permutations(seed: &PamMultiset, permutations: Vec<Vec<usize>>) -> Result<Self> {
        let m = seed.len();
        if permutations.is_empty() {
            return Err(Error::InputDomain("mother constellation needs N >= 1".into()));
        }
        for (n, p) in permutations.iter().enumerate() {
            if !is_permutation(p, m) {
                return Err(Error::InputDomain(format!(
                    "dimension {n} is not a permutation of 0..{m}"
                )));
            }
        }
        let energy = seed.average_energy();
        if !(energy > 0.0) {
            return Err(Error::Degenerate("seed has zero energy".into()));
        }
        let scale = (permutations.len() as f64 * energy).sqrt().recip();
        let rows = permutations
            .iter()
            .map(|p| p.iter().map(|&i| seed.values()[i] * scale).collect())
            .collect();
        Ok(Self { rows, permutations })
    }

    /// Builds from explicit rows (for imported or hand-written constellations);
    /// the permutation record is left empty.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.first().map(Vec::len).unwrap_or(0);
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::Structural("rows must be non-empty and equally long".into()));
        }
        Ok(Self {
            rows,
            permutations: Vec::new(),
        })
    }

    /// `N`
    pub fn dims(&self) -> usize {
        self.rows.len()
    }

    /// `M`
    pub fn size(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.permutations
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[m]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.size()).map(|m| self.column(m)).collect()
    }

    pub fn average_codeword_energy(&self) -> f64 {
        self.rows.iter().flatten().map(|v| v * v).sum::<f64>() / self.size() as f64
    }

    pub fn med(&self) -> f64 {
        sorted_sq_distances(&self.rows)[0].sqrt()
    }
}

fn is_permutation(p: &[usize], m: usize) -> bool {
    if p.len() != m {
        return false;
    }
    let mut seen = vec![false; m];
    p.iter()
        .all(|&i| i < m && !std::mem::replace(&mut seen[i], true))
}

/// Minimum Euclidean distance over all unordered pairs of points.
pub fn med(points: &[Vec<Complex64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InputDomain(format!(
            "minimum distance needs at least two points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Structural("points have different dimensions".into()));
    }
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
            best = best.min(d);
        }
    }
    Ok(best.sqrt())
}

/// Search settings for [`binary_switching`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationSearchConfig {
    pub restarts: usize,
    pub max_sweeps: usize,
    pub rng_seed: u64,
}

impl Default for PermutationSearchConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_sweeps: 10_000,
            rng_seed: 0x5eed,
        }
    }
}

/// Squared pairwise column distances of an `N × M` matrix, ascending.
fn sorted_sq_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let m = rows[0].len();
    let mut d = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            d.push(rows.iter().map(|r| (r[a] - r[b]).powi(2)).sum());
        }
    }
    d.sort_by(f64::total_cmp);
    d
}

/// Leximin order on sorted distance profiles: larger minimum wins, ties go to
/// the larger second-smallest distance, and so on down the list.
fn compare_profiles(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let tol = 1e-12 * x.abs().max(y.abs()).max(1.0);
        if (x - y).abs() > tol {
            return x.total_cmp(y);
        }
    }
    Ordering::Equal
}

struct Candidate {
    perms: Vec<Vec<usize>>,
    profile: Vec<f64>,
}

fn rows_for(seed: &[f64], perms: &[Vec<usize>]) -> Vec<Vec<f64>> {
    perms
        .iter()
        .map(|p| p.iter().map(|&i| seed[i]).collect())
        .collect()
}

/// Steepest-ascent transposition search from one starting point.
///
/// Each sweep evaluates every swap of two positions within one non-first
/// dimension and accepts the best one if it strictly improves the distance
/// profile; equal-profile swaps are ordered by the resulting permutation.
fn climb(seed: &[f64], mut perms: Vec<Vec<usize>>, max_sweeps: usize) -> Candidate {
    let m = seed.len();
    let mut profile = sorted_sq_distances(&rows_for(seed, &perms));
    for _ in 0..max_sweeps {
        let mut best: Option<Candidate> = None;
        for dim in 1..perms.len() {
            for i in 0..m {
                for j in i + 1..m {
                    if seed[perms[dim][i]] == seed[perms[dim][j]] {
                        continue;
                    }
                    let mut trial = perms.clone();
                    trial[dim].swap(i, j);
                    let p = sorted_sq_distances(&rows_for(seed, &trial));
                    let better = match &best {
                        None => true,
                        Some(b) => match compare_profiles(&p, &b.profile) {
                            Ordering::Greater => true,
                            Ordering::Equal => trial < b.perms,
                            Ordering::Less => false,
                        },
                    };
                    if better {
                        best = Some(Candidate {
                            perms: trial,
                            profile: p,
                        });
                    }
                }
            }
        }
        match best {
            Some(b) if compare_profiles(&b.profile, &profile) == Ordering::Greater => {
                perms = b.perms;
                profile = b.profile;
            }
            _ => break,
        }
    }
    Candidate { perms, profile }
}

/// Finds `N` permutations of the seed maximizing the MED of the resulting
/// mother constellation. Restart 0 starts from the identity permutations;
/// the others start from seeded random permutations of dimensions `2..N`.
pub fn binary_switching(
    seed: &PamMultiset,
    dims: usize,
    cfg: &PermutationSearchConfig,
) -> Result<MotherConstellation> {
    if dims == 0 {
        return Err(Error::InputDomain("N must be at least 1".into()));
    }
    if cfg.restarts == 0 {
        return Err(Error::InputDomain("at least one restart is required".into()));
    }
    let m = seed.len();
    if m < 2 {
        return Err(Error::InputDomain("seed needs at least two points".into()));
    }
    let identity: Vec<usize> = (0..m).collect();
    let values = seed.values();
    let results: Vec<Candidate> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(r as u64);
            let start = (0..dims)
                .map(|n| {
                    let mut p = identity.clone();
                    if n > 0 && r > 0 {
                        p.shuffle(&mut rng);
                    }
                    p
                })
                .collect();
            climb(values, start, cfg.max_sweeps)
        })
        .collect();
    let mut best = None::<Candidate>;
    for c in results {
        let replace = match &best {
            None => true,
            Some(b) => compare_profiles(&c.profile, &b.profile) == Ordering::Greater,
        };
        if replace {
            best = Some(c);
        }
    }
    MotherConstellation::from_permutations(seed, best.expect("restarts >= 1").perms)
}

/// Whether all `M` codewords (columns) are distinct, with the offending
/// column pairs when they are not.
pub fn codeword_distinctness_check(mc: &MotherConstellation) -> (bool, Vec<(usize, usize)>) {
    let cols = mc.columns();
    let mut clashes = Vec::new();
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            if cols[a] == cols[b] {
                clashes.push((a, b));
            }
        }
    }
    (clashes.is_empty(), clashes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lppam::LpPamSpec;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn med_examples() {
        let pts = vec![vec![c(0.0, 0.0)], vec![c(3.0, 4.0)]];
        assert_eq!(med(&pts).unwrap(), 5.0);
        let pts = vec![vec![c(1.0, 0.0)], vec![c(2.0, 0.0)], vec![c(1.0, 0.0)]];
        assert_eq!(med(&pts).unwrap(), 0.0);
        assert!(med(&pts[..1]).is_err());
    }

    #[test]
    fn single_dimension_is_identity() {
        let seed = LpPamSpec::new(4, 2, vec![]).unwrap().build().unwrap();
        let mc = binary_switching(&seed, 1, &PermutationSearchConfig::default()).unwrap();
        assert_eq!(mc.permutations(), &[vec![0, 1, 2, 3]]);
        assert_eq!(mc.rows()[0], seed.values());
    }

    #[test]
    fn identity_permutations_duplicate_overlapped_columns() {
        let seed = LpPamSpec::new(4, 2, vec![]).unwrap().build().unwrap();
        let mc = MotherConstellation::from_permutations(&seed, vec![(0..4).collect(); 2]).unwrap();
        let (ok, clashes) = codeword_distinctness_check(&mc);
        assert!(!ok);
        assert_eq!(clashes, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn found_constellation_separates_overlaps() {
        // First dimension {-a,-a,a,a}: the search must pair the overlapped
        // points with distinct second-dimension values.
        let seed = LpPamSpec::new(4, 2, vec![]).unwrap().build().unwrap();
        let mc = binary_switching(&seed, 2, &PermutationSearchConfig::default()).unwrap();
        assert!(codeword_distinctness_check(&mc).0);
        assert!((mc.average_codeword_energy() - 1.0).abs() < 1e-12);
        let r = &mc.rows()[1];
        assert_ne!(r[0], r[1]);
        assert_ne!(r[2], r[3]);
    }

    #[test]
    fn search_is_seed_deterministic() {
        let seed = LpPamSpec::new(8, 4, vec![2.2]).unwrap().build().unwrap();
        let cfg = PermutationSearchConfig {
            restarts: 4,
            max_sweeps: 100,
            rng_seed: 11,
        };
        let a = binary_switching(&seed, 2, &cfg).unwrap();
        let b = binary_switching(&seed, 2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn climb_never_decreases_med() {
        let seed = LpPamSpec::new(8, 4, vec![1.7]).unwrap().build().unwrap();
        let ident: Vec<Vec<usize>> = vec![(0..8).collect(); 2];
        let start = MotherConstellation::from_permutations(&seed, ident).unwrap();
        let mc = binary_switching(&seed, 2, &PermutationSearchConfig::default()).unwrap();
        assert!(mc.med() >= start.med());
    }
}
