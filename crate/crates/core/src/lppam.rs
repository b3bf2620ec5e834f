//! One-dimensional low-projection PAM (LP-PAM) seeds.
//!
//! A seed `C_M` holds `M` real points of which only `T` are distinct: the
//! `M − T` surplus copies are stacked on the lowest-energy points so that the
//! projection of the mother constellation onto each dimension is small, while
//! the multiset stays symmetric around zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of an LP-PAM seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpPamSpec {
    /// Codebook size `M`.
    pub m: usize,
    /// Number of distinct points `T`.
    pub t: usize,
    /// Scattering ratios `α_m = r_{m+1} / r_1`, each `≥ 1`.
    pub alpha: Vec<f64>,
}

impl LpPamSpec {
    pub fn new(m: usize, t: usize, alpha: Vec<f64>) -> Result<Self> {
        if t < 2 || t > m {
            return Err(Error::InputDomain(format!(
                "distinct-point count T={t} must satisfy 2 <= T <= M={m}"
            )));
        }
        let spec = Self { m, t, alpha };
        if spec.alpha.len() != alpha_len(t) {
            return Err(Error::InputDomain(format!(
                "T={t} needs {} scattering ratios, got {}",
                alpha_len(t),
                spec.alpha.len()
            )));
        }
        Ok(spec)
    }

    /// Number of scattering ratios the seed takes for `t` distinct points.
    pub fn alpha_len(t: usize) -> usize {
        alpha_len(t)
    }

    /// Builds the unit-energy multiset `C_M`.
    pub fn build(&self) -> Result<PamMultiset> {
        let ct = build_ct(self.t, &self.alpha)?;
        normalize_unit_energy(&overlap_to_cm(&ct, self.m)?)
    }
}

fn alpha_len(t: usize) -> usize {
    let pairs = t / 2;
    pairs.saturating_sub(1)
}

/// The `T` distinct points with `r_1 = 1`, sorted ascending.
///
/// Even `T` yields `±r_1, …, ±r_{T/2}` with `r_{m+1} = α_m r_1`; odd `T` yields
/// the even construction on `T − 1` points plus the origin.
pub fn build_ct(t: usize, alpha: &[f64]) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::InputDomain(format!("T={t} must be at least 2")));
    }
    if alpha.len() != alpha_len(t) {
        return Err(Error::InputDomain(format!(
            "T={t} needs {} scattering ratios, got {}",
            alpha_len(t),
            alpha.len()
        )));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a >= 1.0) || !a.is_finite()) {
        return Err(Error::InputDomain(format!(
            "scattering ratio {a} must be finite and >= 1"
        )));
    }
    let radii = std::iter::once(1.0).chain(alpha.iter().copied());
    let mut points: Vec<f64> = radii.flat_map(|r| [-r, r]).collect();
    if t % 2 == 1 {
        points.push(0.0);
    }
    points.sort_by(f64::total_cmp);
    Ok(points)
}

/// Sorted multiset `C_M` with its multiplicity table.
#[derive(Debug, Clone, PartialEq)]
pub struct PamMultiset {
    values: Vec<f64>,
}

impl PamMultiset {
    /// Wraps an arbitrary multiset (sorted on construction).
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InputDomain("empty multiset".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InputDomain("multiset holds a non-finite value".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(value, count)` pairs in ascending order of value.
    pub fn multiplicities(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &v in &self.values {
            match out.last_mut() {
                Some((last, n)) if *last == v => *n += 1,
                _ => out.push((v, 1)),
            }
        }
        out
    }

    pub fn multiplicity(&self, value: f64) -> usize {
        self.values.iter().filter(|&&v| v == value).count()
    }

    pub fn distinct_count(&self) -> usize {
        self.multiplicities().len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn average_energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }
}

/// Stacks the `M − T` surplus copies onto the points of `ct`.
///
/// The odd part of the surplus (if any) goes to the origin; the even part is
/// added in equal amounts to `±r` of the smallest radius.
pub fn overlap_to_cm(ct: &[f64], m: usize) -> Result<PamMultiset> {
    let t = ct.len();
    if m < t {
        return Err(Error::InputDomain(format!(
            "M={m} is smaller than the number of distinct points T={t}"
        )));
    }
    let mut surplus = m - t;
    let mut extra = vec![0usize; t];
    let zero = ct.iter().position(|&v| v == 0.0);
    if surplus % 2 == 1 {
        let z = zero.ok_or_else(|| {
            Error::InfeasibleSymmetry(format!(
                "odd surplus M-T={} but the seed has no zero point",
                m - t
            ))
        })?;
        extra[z] += 1;
        surplus -= 1;
    }
    if surplus > 0 {
        let r = ct
            .iter()
            .filter(|v| **v != 0.0)
            .map(|v| v.abs())
            .min_by(f64::total_cmp)
            .ok_or_else(|| {
                Error::InfeasibleSymmetry("no nonzero pair to absorb the surplus".into())
            })?;
        let lo = ct.iter().position(|&v| v == -r);
        let hi = ct.iter().position(|&v| v == r);
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return Err(Error::InfeasibleSymmetry(format!(
                "seed is not symmetric around ±{r}"
            )));
        };
        extra[lo] += surplus / 2;
        extra[hi] += surplus / 2;
    }
    let values = ct
        .iter()
        .zip(&extra)
        .flat_map(|(&v, &e)| std::iter::repeat_n(v, 1 + e))
        .collect();
    PamMultiset::from_values(values)
}

/// Rescales so that `(1/M) Σ v² = 1`.
pub fn normalize_unit_energy(pm: &PamMultiset) -> Result<PamMultiset> {
    let e = pm.average_energy();
    if !(e > 0.0) {
        return Err(Error::Degenerate("multiset has zero energy".into()));
    }
    let scale = e.sqrt().recip();
    PamMultiset::from_values(pm.values.iter().map(|v| v * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(pm: &PamMultiset) -> Vec<(f64, usize)> {
        pm.multiplicities()
    }

    #[test]
    fn ct_examples() {
        assert_eq!(build_ct(2, &[]).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(build_ct(3, &[]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(build_ct(4, &[2.0]).unwrap(), vec![-2.0, -1.0, 1.0, 2.0]);
        assert!(build_ct(4, &[]).is_err());
        assert!(build_ct(4, &[0.5]).is_err());
    }

    #[test]
    fn overlap_examples() {
        let cm = overlap_to_cm(&build_ct(2, &[]).unwrap(), 4).unwrap();
        assert_eq!(counts(&cm), vec![(-1.0, 2), (1.0, 2)]);

        let cm = overlap_to_cm(&build_ct(4, &[2.0]).unwrap(), 8).unwrap();
        assert_eq!(counts(&cm), vec![(-2.0, 1), (-1.0, 3), (1.0, 3), (2.0, 1)]);

        let cm = overlap_to_cm(&build_ct(5, &[2.0]).unwrap(), 8).unwrap();
        assert_eq!(
            counts(&cm),
            vec![(-2.0, 1), (-1.0, 2), (0.0, 2), (1.0, 2), (2.0, 1)]
        );
    }

    #[test]
    fn odd_surplus_without_zero_rejected() {
        let err = overlap_to_cm(&[-1.0, 1.0], 5).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSymmetry(_)));
    }

    #[test]
    fn normalization_examples() {
        let pm = PamMultiset::from_values(vec![-1.0, -1.0, 1.0, 1.0]).unwrap();
        assert_eq!(normalize_unit_energy(&pm).unwrap(), pm);
        let pm2 = PamMultiset::from_values(vec![-2.0, -2.0, 2.0, 2.0]).unwrap();
        assert_eq!(normalize_unit_energy(&pm2).unwrap(), pm);

        let cm = overlap_to_cm(&build_ct(4, &[2.0]).unwrap(), 8).unwrap();
        let n = normalize_unit_energy(&cm).unwrap();
        let direct: f64 = (2.0 * 4.0 + 6.0 * 1.0) / 8.0;
        let scale = 1.0 / direct.sqrt();
        for (a, b) in n.values().iter().zip(cm.values()) {
            assert!((a - b * scale).abs() < 1e-15);
        }
        assert!(normalize_unit_energy(&PamMultiset::from_values(vec![0.0; 4]).unwrap()).is_err());
    }

    /// All symmetric multiplicity assignments over `ct` with total `m`, where
    /// the origin takes at most one surplus copy.
    fn symmetric_assignments(ct: &[f64], m: usize) -> Vec<Vec<usize>> {
        let radii: Vec<f64> = ct.iter().filter(|v| **v > 0.0).copied().collect();
        let has_zero = ct.contains(&0.0);
        let mut out = Vec::new();
        let surplus = m - ct.len();
        for zero_extra in 0..=usize::from(has_zero) {
            if zero_extra > surplus || (surplus - zero_extra) % 2 == 1 {
                continue;
            }
            let pair_units = (surplus - zero_extra) / 2;
            let mut comp = vec![0usize; radii.len()];
            compositions(pair_units, 0, &mut comp, &mut |c| {
                let mut mult = Vec::new();
                for &v in ct {
                    if v == 0.0 {
                        mult.push(1 + zero_extra);
                    } else {
                        let i = radii.iter().position(|r| *r == v.abs()).unwrap();
                        mult.push(1 + c[i]);
                    }
                }
                out.push(mult);
            });
        }
        out
    }

    fn compositions(left: usize, i: usize, c: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if i + 1 == c.len() {
            c[i] = left;
            f(c);
            return;
        }
        for x in 0..=left {
            c[i] = x;
            compositions(left - x, i + 1, c, f);
        }
    }

    #[test]
    fn rule_based_overlap_minimizes_energy_exhaustively() {
        for &(m, t) in &[(4, 2), (4, 3), (4, 4), (8, 2), (8, 3), (8, 4), (8, 5), (8, 6), (8, 7)] {
            for alpha_base in [1.3, 2.0, 3.1] {
                let alpha: Vec<f64> = (0..alpha_len(t)).map(|i| alpha_base + i as f64).collect();
                let ct = build_ct(t, &alpha).unwrap();
                let rule = overlap_to_cm(&ct, m).unwrap();
                let best = symmetric_assignments(&ct, m)
                    .into_iter()
                    .map(|mult| {
                        ct.iter().zip(&mult).map(|(v, n)| v * v * *n as f64).sum::<f64>() / m as f64
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    rule.average_energy() <= best + 1e-12,
                    "M={m} T={t}: rule {} vs exhaustive {best}",
                    rule.average_energy()
                );
            }
        }
    }

    proptest! {
        #[test]
        fn multiset_invariants(log_m in 1u32..5, t_frac in 0.0f64..1.0, a in proptest::collection::vec(1.0f64..5.0, 8)) {
            let m = 1usize << log_m;
            let t = 2 + ((m - 2) as f64 * t_frac).round() as usize;
            let mut alpha: Vec<f64> = a[..alpha_len(t)].to_vec();
            // keep radii distinct so the seed really has T distinct points
            for (i, x) in alpha.iter_mut().enumerate() { *x += 1e-3 + i as f64 * 5.0; }
            let pm = LpPamSpec::new(m, t, alpha).unwrap().build().unwrap();
            prop_assert_eq!(pm.len(), m);
            prop_assert_eq!(pm.distinct_count(), t);
            prop_assert!(pm.mean().abs() < 1e-12);
            prop_assert!((pm.average_energy() - 1.0).abs() < 1e-12);
            for &(v, n) in &pm.multiplicities() {
                prop_assert_eq!(pm.multiplicity(-v), n);
            }
        }

        #[test]
        fn energy_increases_with_alpha(a in 1.0f64..4.0, d in 0.01f64..2.0) {
            let lo = overlap_to_cm(&build_ct(4, &[a]).unwrap(), 8).unwrap();
            let hi = overlap_to_cm(&build_ct(4, &[a + d]).unwrap(), 8).unwrap();
            prop_assert!(hi.average_energy() > lo.average_energy());
        }
    }
}
