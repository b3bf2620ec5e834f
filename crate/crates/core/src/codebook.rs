//! Sparse codebooks, the operators that derive them from a mother
//! constellation, and the superimposed constellation seen at the receiver.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{FactorGraph, SlotMap};
use crate::mcbuild::MotherConstellation;

/// Operator slots `ψ_i = E_i e^{jθ_i}`, `i = 1..d_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSet {
    theta: Vec<f64>,
    energy: Vec<f64>,
}

impl OperatorSet {
    pub fn new(theta: Vec<f64>, energy: Vec<f64>) -> Result<Self> {
        if theta.len() != energy.len() || theta.is_empty() {
            return Err(Error::Structural(format!(
                "{} rotation angles vs {} energy factors",
                theta.len(),
                energy.len()
            )));
        }
        if let Some(t) = theta.iter().find(|t| !(0.0..=PI).contains(*t)) {
            return Err(Error::InputDomain(format!("rotation {t} outside [0, π]")));
        }
        if let Some(e) = energy.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::InputDomain(format!("energy factor {e} must be positive")));
        }
        Ok(Self { theta, energy })
    }

    /// `d` slots with `ψ_i = 1`.
    pub fn unit(d: usize) -> Self {
        Self {
            theta: vec![0.0; d],
            energy: vec![1.0; d],
        }
    }

    pub fn slots(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn psi(&self, slot: usize) -> Complex64 {
        Complex64::from_polar(self.energy[slot], self.theta[slot])
    }

    /// `Σ E_i`, the quantity the power budget constrains.
    pub fn energy_sum(&self) -> f64 {
        self.energy.iter().sum()
    }
}

/// `J` sparse `K × M` codebooks over a factor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    graph: FactorGraph,
    m: usize,
    /// `codebooks[j][k][m]`
    codebooks: Vec<Vec<Vec<Complex64>>>,
}

impl CodebookSet {
    /// Validates shapes: `J` codebooks of `K` rows and `M` columns each, `M` a
    /// power of two, and no energy outside the graph's support.
    pub fn new(graph: FactorGraph, codebooks: Vec<Vec<Vec<Complex64>>>) -> Result<Self> {
        let (k, j) = (graph.resources(), graph.users());
        if codebooks.len() != j {
            return Err(Error::Structural(format!(
                "{} codebooks for {j} users",
                codebooks.len()
            )));
        }
        let m = codebooks[0].first().map(Vec::len).unwrap_or(0);
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::InputDomain(format!(
                "codebook size M={m} must be a power of two >= 2"
            )));
        }
        for (u, cb) in codebooks.iter().enumerate() {
            if cb.len() != k || cb.iter().any(|row| row.len() != m) {
                return Err(Error::Structural(format!("codebook {u} is not {k}×{m}")));
            }
            for (r, row) in cb.iter().enumerate() {
                if row.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::InputDomain(format!(
                        "codebook {u} row {r} holds a non-finite entry"
                    )));
                }
                if !graph.is_edge(r, u) && row.iter().any(|z| *z != Complex64::new(0.0, 0.0)) {
                    return Err(Error::Structural(format!(
                        "codebook {u} has energy on resource {r}, which the factor graph does not assign to it"
                    )));
                }
            }
        }
        Ok(Self {
            graph,
            m,
            codebooks,
        })
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    /// `M`
    pub fn size(&self) -> usize {
        self.m
    }

    pub fn bits_per_user(&self) -> u32 {
        self.m.trailing_zeros()
    }

    pub fn users(&self) -> usize {
        self.graph.users()
    }

    pub fn resources(&self) -> usize {
        self.graph.resources()
    }

    pub fn codebook(&self, user: usize) -> &[Vec<Complex64>] {
        &self.codebooks[user]
    }

    pub fn entry(&self, user: usize, resource: usize, label: usize) -> Complex64 {
        self.codebooks[user][resource][label]
    }

    pub fn codebooks(&self) -> &[Vec<Vec<Complex64>>] {
        &self.codebooks
    }

    /// Whether every on-support row carries a nonzero entry (the off-support
    /// rows are zero by construction).
    pub fn support_consistent(&self) -> bool {
        (0..self.users()).all(|j| {
            self.graph
                .user_resources(j)
                .iter()
                .all(|&k| self.codebooks[j][k].iter().any(|z| z.norm_sqr() > 0.0))
        })
    }

    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.users() {
            return Err(Error::InputDomain(format!(
                "{} labels for {} users",
                labels.len(),
                self.users()
            )));
        }
        if let Some((j, l)) = labels.iter().enumerate().find(|(_, &l)| l >= self.m) {
            return Err(Error::InputDomain(format!(
                "label {l} of user {j} outside [0, {})",
                self.m
            )));
        }
        Ok(())
    }

    /// Average energy of a superimposed codeword when every user picks its
    /// codewords uniformly and independently.
    pub fn average_superimposed_energy(&self) -> f64 {
        let m = self.m as f64;
        (0..self.resources())
            .map(|k| {
                let mut power = 0.0;
                let mut mean_sum = Complex64::new(0.0, 0.0);
                for &j in self.graph.resource_users(k) {
                    let row = &self.codebooks[j][k];
                    let mean = row.iter().sum::<Complex64>() / m;
                    power += row.iter().map(|z| z.norm_sqr()).sum::<f64>() / m - mean.norm_sqr();
                    mean_sum += mean;
                }
                power + mean_sum.norm_sqr()
            })
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let codebooks = self
            .codebooks
            .iter()
            .map(|cb| {
                cb.iter()
                    .map(|row| row.iter().map(|z| z * factor).collect())
                    .collect()
            })
            .collect();
        Self {
            graph: self.graph.clone(),
            m: self.m,
            codebooks,
        }
    }

    /// Multiplies every entry by `e^{jφ}`.
    pub fn rotated(&self, phi: f64) -> Self {
        let rot = Complex64::from_polar(1.0, phi);
        let codebooks = self
            .codebooks
            .iter()
            .map(|cb| {
                cb.iter()
                    .map(|row| row.iter().map(|z| z * rot).collect())
                    .collect()
            })
            .collect();
        Self {
            graph: self.graph.clone(),
            m: self.m,
            codebooks,
        }
    }
}

/// `w = Σ_j x_j` for the given per-user codeword labels.
pub fn superimpose(cbs: &CodebookSet, labels: &[usize]) -> Result<Vec<Complex64>> {
    cbs.check_labels(labels)?;
    Ok((0..cbs.resources())
        .map(|k| {
            cbs.graph()
                .resource_users(k)
                .iter()
                .map(|&j| cbs.entry(j, k, labels[j]))
                .sum()
        })
        .collect())
}

/// `X_j = V_j Ψ_j C_MC`: dimension `n` of the mother constellation, scaled by
/// the slot operator assigned to `(j, n)`, lands on the `n`-th resource of
/// user `j`.
pub fn build_codebooks(
    mc: &MotherConstellation,
    ops: &OperatorSet,
    graph: &FactorGraph,
    slots: &SlotMap,
) -> Result<CodebookSet> {
    if mc.dims() != graph.user_degree() {
        return Err(Error::Structural(format!(
            "mother constellation has {} dimensions, users occupy {} resources",
            mc.dims(),
            graph.user_degree()
        )));
    }
    if ops.slots() != graph.resource_degree() {
        return Err(Error::Structural(format!(
            "{} operator slots for resource degree {}",
            ops.slots(),
            graph.resource_degree()
        )));
    }
    let m = mc.size();
    let zero = Complex64::new(0.0, 0.0);
    let codebooks = (0..graph.users())
        .map(|j| {
            let mut cb = vec![vec![zero; m]; graph.resources()];
            for (n, &k) in graph.user_resources(j).iter().enumerate() {
                let psi = ops.psi(slots.slot(j, n));
                cb[k] = mc.rows()[n].iter().map(|&v| psi * v).collect();
            }
            cb
        })
        .collect();
    CodebookSet::new(graph.clone(), codebooks)
}

/// Rescales so that the average superimposed codeword energy equals `budget`;
/// returns the new set and the amplitude factor applied.
pub fn normalize_power(cbs: &CodebookSet, budget: f64) -> Result<(CodebookSet, f64)> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InputDomain(format!("power budget {budget} must be positive")));
    }
    let e = cbs.average_superimposed_energy();
    if !(e > 0.0) {
        return Err(Error::Degenerate("codebook set has zero energy".into()));
    }
    let factor = (budget / e).sqrt();
    Ok((cbs.scaled(factor), factor))
}

/// Lazily enumerable superimposed constellation `Φ`.
///
/// Codeword `g ∈ [0, M^J)` carries labels in mixed radix `M` with user 0 most
/// significant. Each resource `k` has an alphabet of the `M^{d_f}` sums of its
/// colliding users' symbols, indexed the same way over those users.
#[derive(Debug, Clone)]
pub struct SuperimposedConstellation {
    graph: FactorGraph,
    m: usize,
    alphabets: Vec<Vec<Complex64>>,
}

impl SuperimposedConstellation {
    pub fn new(cbs: &CodebookSet) -> Self {
        let m = cbs.size();
        let graph = cbs.graph().clone();
        let alphabets = (0..graph.resources())
            .map(|k| {
                let users = graph.resource_users(k);
                let n = m.pow(users.len() as u32);
                (0..n)
                    .map(|idx| {
                        // sum in ascending user order, as `superimpose` does
                        let mut digits = vec![0; users.len()];
                        let mut rem = idx;
                        for d in digits.iter_mut().rev() {
                            *d = rem % m;
                            rem /= m;
                        }
                        users
                            .iter()
                            .zip(&digits)
                            .map(|(&j, &l)| cbs.entry(j, k, l))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Self {
            graph,
            m,
            alphabets,
        }
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn size(&self) -> usize {
        self.m
    }

    /// `|Φ| = M^J`, or `None` if it overflows `u128`.
    pub fn len(&self) -> Option<u128> {
        (self.m as u128).checked_pow(self.graph.users() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn alphabet(&self, resource: usize) -> &[Complex64] {
        &self.alphabets[resource]
    }

    pub fn alphabets(&self) -> &[Vec<Complex64>] {
        &self.alphabets
    }

    pub fn local_index(&self, resource: usize, labels: &[usize]) -> usize {
        self.graph
            .resource_users(resource)
            .iter()
            .fold(0, |acc, &j| acc * self.m + labels[j])
    }

    pub fn codeword(&self, labels: &[usize]) -> Vec<Complex64> {
        (0..self.graph.resources())
            .map(|k| self.alphabets[k][self.local_index(k, labels)])
            .collect()
    }

    pub fn labels_of(&self, mut index: u128) -> Vec<usize> {
        let mut labels = vec![0; self.graph.users()];
        for l in labels.iter_mut().rev() {
            *l = (index % self.m as u128) as usize;
            index /= self.m as u128;
        }
        labels
    }

    pub fn index_of(&self, labels: &[usize]) -> u128 {
        labels
            .iter()
            .fold(0u128, |acc, &l| acc * self.m as u128 + l as u128)
    }

    /// Iterates `(labels, w)` over all of `Φ` without materializing it.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, Vec<Complex64>)> + '_ {
        let total = self.len().expect("enumerable constellation");
        (0..total).map(move |g| {
            let labels = self.labels_of(g);
            let w = self.codeword(&labels);
            (labels, w)
        })
    }

    /// Flat `g * K + k` table of per-resource alphabet indices for every
    /// codeword; only sensible when `M^J` is small enough to enumerate.
    pub fn local_index_table(&self) -> Result<Vec<u32>> {
        let total = self.len().unwrap_or(u128::MAX);
        let k = self.graph.resources() as u128;
        if total.saturating_mul(k) > (1u128 << 31) {
            return Err(Error::BudgetRefusal {
                what: "codeword index entries",
                required: total.saturating_mul(k),
                budget: 1u128 << 31,
            });
        }
        let total = total as usize;
        let k = self.graph.resources();
        let mut table = vec![0u32; total * k];
        let mut labels = vec![0usize; self.graph.users()];
        for g in 0..total {
            for r in 0..k {
                table[g * k + r] = self.local_index(r, &labels) as u32;
            }
            // increment mixed-radix label counter, last user least significant
            for l in labels.iter_mut().rev() {
                *l += 1;
                if *l < self.m {
                    break;
                }
                *l = 0;
            }
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lppam::LpPamSpec;
    use crate::mcbuild::{binary_switching, PermutationSearchConfig};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn preset_set(theta: [f64; 3], energy: [f64; 3]) -> CodebookSet {
        let seed = LpPamSpec::new(4, 2, vec![]).unwrap().build().unwrap();
        let mc = binary_switching(&seed, 2, &PermutationSearchConfig::default()).unwrap();
        let ops = OperatorSet::new(theta.to_vec(), energy.to_vec()).unwrap();
        build_codebooks(&mc, &ops, &FactorGraph::preset_4x6(), &SlotMap::preset_4x6()).unwrap()
    }

    #[test]
    fn superimpose_all_zero_set() {
        let g = FactorGraph::preset_4x6();
        let cbs = CodebookSet::new(g, vec![vec![vec![c(0.0, 0.0); 4]; 4]; 6]).unwrap();
        assert_eq!(superimpose(&cbs, &[0; 6]).unwrap(), vec![c(0.0, 0.0); 4]);
        assert!(!cbs.support_consistent());
    }

    #[test]
    fn superimpose_disjoint_supports() {
        let g = FactorGraph::from_incidence(&[vec![1, 0], vec![0, 1]]).unwrap();
        let one = vec![c(1.0, 0.0), c(-1.0, 0.0)];
        let zero = vec![c(0.0, 0.0); 2];
        let cbs = CodebookSet::new(g, vec![vec![one.clone(), zero.clone()], vec![zero, one]]).unwrap();
        assert_eq!(superimpose(&cbs, &[0, 0]).unwrap(), vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(superimpose(&cbs, &[0, 2]), Err(Error::InputDomain(_))));
    }

    #[test]
    fn superimpose_matches_per_resource_sum() {
        let cbs = preset_set([0.3, 1.2, 2.5], [1.5, 2.0, 2.5]);
        let labels = [0usize; 6];
        let w = superimpose(&cbs, &labels).unwrap();
        // resource-by-resource oracle straight from the incidence matrix
        let f = cbs.graph().incidence();
        for k in 0..4 {
            let mut sum = c(0.0, 0.0);
            for j in 0..6 {
                if f[k][j] == 1 {
                    sum += cbs.codebook(j)[k][0];
                }
            }
            assert!((sum - w[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn identity_operators_copy_mother_rows() {
        let seed = LpPamSpec::new(4, 2, vec![]).unwrap().build().unwrap();
        let mc = binary_switching(&seed, 2, &PermutationSearchConfig::default()).unwrap();
        let g = FactorGraph::preset_4x6();
        let cbs = build_codebooks(&mc, &OperatorSet::unit(3), &g, &SlotMap::preset_4x6()).unwrap();
        for j in 0..6 {
            for (n, &k) in g.user_resources(j).iter().enumerate() {
                let row: Vec<f64> = cbs.codebook(j)[k].iter().map(|z| z.re).collect();
                assert_eq!(row, mc.rows()[n]);
            }
        }
        assert!(cbs.support_consistent());
    }

    #[test]
    fn quarter_turn_rotates_single_user() {
        let g = FactorGraph::from_incidence(&[vec![1]]).unwrap();
        let mc = MotherConstellation::from_rows(vec![vec![-1.0, -0.5, 0.5, 1.0]]).unwrap();
        let slots = SlotMap::new(&g, vec![vec![0]]).unwrap();
        let ops = OperatorSet::new(vec![PI / 2.0], vec![1.0]).unwrap();
        let cbs = build_codebooks(&mc, &ops, &g, &slots).unwrap();
        for (z, v) in cbs.codebook(0)[0].iter().zip(mc.rows()[0].iter()) {
            assert!((z.norm() - v.abs()).abs() < 1e-15);
            assert!((z - c(0.0, *v)).norm() < 1e-15);
        }
    }

    #[test]
    fn preset_resource_one_uses_three_distinct_slots() {
        let cbs = preset_set([0.0, 1.0, 2.0], [1.0, 2.0, 3.0]);
        // users 1,3,5 on resource 1 carry ψ1, ψ2, ψ3 (real seed, so phases mod π)
        let phases: Vec<f64> = [0, 2, 4]
            .iter()
            .map(|&j| cbs.codebook(j)[0][0].arg().rem_euclid(PI))
            .collect();
        assert!(phases[0].abs() < 1e-12);
        assert!((phases[1] - 1.0).abs() < 1e-12);
        assert!((phases[2] - 2.0).abs() < 1e-12);
        let mags: Vec<f64> = [0, 2, 4].iter().map(|&j| cbs.codebook(j)[0][0].norm()).collect();
        assert!((mags[1] / mags[0] - 2.0).abs() < 1e-12);
        assert!((mags[2] / mags[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let seed = LpPamSpec::new(4, 2, vec![]).unwrap().build().unwrap();
        let mc = binary_switching(&seed, 3, &PermutationSearchConfig::default()).unwrap();
        let err = build_codebooks(
            &mc,
            &OperatorSet::unit(3),
            &FactorGraph::preset_4x6(),
            &SlotMap::preset_4x6(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn normalize_power_examples() {
        let cbs = preset_set([0.3, 1.2, 2.5], [1.5, 2.0, 2.5]);
        let (unit, _) = normalize_power(&cbs, 6.0).unwrap();
        let (_, f) = normalize_power(&unit, 6.0).unwrap();
        assert!((f - 1.0).abs() < 1e-15);
        let (_, f) = normalize_power(&unit.scaled(2.0), 6.0).unwrap();
        assert!((f - 0.5).abs() < 1e-15);
        // direct summation over all M^J codewords
        let phi = SuperimposedConstellation::new(&unit);
        let total: f64 = phi.iter().map(|(_, w)| w.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum();
        let avg = total / phi.len().unwrap() as f64;
        assert!((avg - 6.0).abs() < 1e-12, "{avg}");

        let g = FactorGraph::preset_4x6();
        let zero = CodebookSet::new(g, vec![vec![vec![c(0.0, 0.0); 4]; 4]; 6]).unwrap();
        assert!(matches!(normalize_power(&zero, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn alphabet_closure_and_size() {
        let cbs = preset_set([0.3, 1.2, 2.5], [1.5, 2.0, 2.5]);
        let phi = SuperimposedConstellation::new(&cbs);
        assert_eq!(phi.len(), Some(4096));
        for k in 0..4 {
            assert_eq!(phi.alphabet(k).len(), 64);
        }
        for (labels, w) in phi.iter().step_by(37) {
            assert_eq!(w, superimpose(&cbs, &labels).unwrap());
            for (k, wk) in w.iter().enumerate() {
                assert!(phi.alphabet(k).contains(wk));
            }
        }
        let table = phi.local_index_table().unwrap();
        let labels = phi.labels_of(1234);
        assert_eq!(phi.index_of(&labels), 1234);
        for k in 0..4 {
            assert_eq!(table[1234 * 4 + k] as usize, phi.local_index(k, &labels));
        }
    }

    proptest! {
        #[test]
        fn superposition_is_additive_per_user(
            theta in proptest::array::uniform3(0.0f64..PI),
            labels in proptest::collection::vec(0usize..4, 6),
            user in 0usize..6, alt in 0usize..4,
        ) {
            let cbs = preset_set(theta, [1.0, 2.0, 3.0]);
            let w = superimpose(&cbs, &labels).unwrap();
            let mut l2 = labels.clone();
            l2[user] = alt;
            let w2 = superimpose(&cbs, &l2).unwrap();
            for k in 0..4 {
                let delta = cbs.entry(user, k, alt) - cbs.entry(user, k, labels[user]);
                prop_assert!((w2[k] - w[k] - delta).norm() < 1e-12);
            }
        }

        #[test]
        fn support_matches_incidence(theta in proptest::array::uniform3(0.0f64..PI)) {
            let cbs = preset_set(theta, [1.0, 1.5, 3.5]);
            let f = cbs.graph().incidence();
            for j in 0..6 {
                for k in 0..4 {
                    let nonzero = cbs.codebook(j)[k].iter().any(|z| z.norm() > 0.0);
                    prop_assert_eq!(nonzero, f[k][j] == 1);
                }
            }
        }
    }
}
