//! Design search over operator rotations `θ`, energy factors `E` and LP-PAM
//! scattering ratios `α`, maximizing the MPNM of the resulting codebooks.
//!
//! The objective is a deterministic function of the design vector: the
//! permutation search inside it always uses the same seed, and its result is
//! cached per `α`. Infeasible points are projected, never rejected.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{build_codebooks, CodebookSet, OperatorSet};
use crate::error::{Error, Result};
use crate::graph::{FactorGraph, SlotMap};
use crate::lppam::LpPamSpec;
use crate::mcbuild::{
    binary_switching, codeword_distinctness_check, MotherConstellation, PermutationSearchConfig,
};
use crate::pnmetrics::{
    mpnm, mpnm_only, mpnm_screen, Enumeration, MetricReport, PnChannelParams,
};

/// Design variables: `d_f` rotations, `d_f` energy factors and the
/// scattering ratios of the LP-PAM seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub theta: Vec<f64>,
    pub energy: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl DesignSpace {
    pub fn dims(&self) -> usize {
        self.theta.len() + self.energy.len() + self.alpha.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.theta
            .iter()
            .chain(&self.energy)
            .chain(&self.alpha)
            .copied()
            .collect()
    }

    /// Splits a flat vector laid out as `[θ; E; α]`.
    pub fn from_vec(x: &[f64], slots: usize) -> Self {
        Self {
            theta: x[..slots].to_vec(),
            energy: x[slots..2 * slots].to_vec(),
            alpha: x[2 * slots..].to_vec(),
        }
    }

    pub fn operators(&self) -> Result<OperatorSet> {
        OperatorSet::new(self.theta.clone(), self.energy.clone())
    }
}

/// Constraint set of the design problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    /// Required `Σ E_i`.
    pub energy_budget: f64,
    /// Smallest admissible `E_i` (keeps every slot strictly positive).
    pub energy_floor: f64,
    /// Upper box bound on every `α_m` (the lower bound is 1).
    pub alpha_max: f64,
}

impl Constraints {
    /// Budget `M·J/K` with a floor of 0.1% of the budget per slot.
    pub fn for_problem(graph: &FactorGraph, m: usize, alpha_max: f64) -> Self {
        let budget = (m * graph.users()) as f64 / graph.resources() as f64;
        Self {
            energy_budget: budget,
            energy_floor: 1e-3 * budget,
            alpha_max,
        }
    }

    fn check(&self, slots: usize) -> Result<()> {
        if !(self.energy_budget > 0.0 && self.energy_budget.is_finite()) {
            return Err(Error::InputDomain(format!(
                "energy budget {} must be positive",
                self.energy_budget
            )));
        }
        if !(self.energy_floor >= 0.0) || self.energy_floor * slots as f64 >= self.energy_budget {
            return Err(Error::InputDomain(format!(
                "energy floor {} leaves no room in budget {} over {slots} slots",
                self.energy_floor, self.energy_budget
            )));
        }
        if !(self.alpha_max >= 1.0) || !self.alpha_max.is_finite() {
            return Err(Error::InputDomain(format!(
                "alpha upper bound {} must be finite and >= 1",
                self.alpha_max
            )));
        }
        Ok(())
    }

    /// Nearest feasible design: `θ` clamped to `[0, π]`, `E` projected in the
    /// Euclidean sense onto `{Σ E_i = budget, E_i ≥ floor}`, `α` clamped to
    /// `[1, alpha_max]`. Non-finite coordinates are replaced by the box
    /// midpoint (or the equal split for `E`) first.
    pub fn project(&self, x: &DesignSpace) -> DesignSpace {
        let theta = x
            .theta
            .iter()
            .map(|&t| if t.is_finite() { t.clamp(0.0, PI) } else { PI / 2.0 })
            .collect();
        let d = x.energy.len();
        let equal = self.energy_budget / d as f64;
        let e: Vec<f64> = x
            .energy
            .iter()
            .map(|&e| if e.is_finite() { e } else { equal })
            .collect();
        let energy = project_simplex(&e, self.energy_budget, self.energy_floor);
        let alpha = x
            .alpha
            .iter()
            .map(|&a| {
                if a.is_finite() {
                    a.clamp(1.0, self.alpha_max)
                } else {
                    (1.0 + self.alpha_max) / 2.0
                }
            })
            .collect();
        DesignSpace {
            theta,
            energy,
            alpha,
        }
    }

    pub fn is_feasible(&self, x: &DesignSpace) -> bool {
        let sum: f64 = x.energy.iter().sum();
        x.theta.iter().all(|t| (0.0..=PI).contains(t))
            && x.energy.iter().all(|&e| e >= self.energy_floor)
            && (sum - self.energy_budget).abs() <= 1e-12 * self.energy_budget
            && x.alpha.iter().all(|a| (1.0..=self.alpha_max).contains(a))
    }
}

/// Euclidean projection onto `{Σ v_i = total, v_i ≥ floor}` by the sorting
/// method, followed by a correction that puts the rounding residue of the
/// sum on the largest coordinate.
fn project_simplex(y: &[f64], total: f64, floor: f64) -> Vec<f64> {
    let n = y.len();
    let sum: f64 = y.iter().sum();
    if y.iter().all(|&v| v >= floor) && (sum - total).abs() <= 1e-12 * total {
        return y.to_vec();
    }
    let free = total - floor * n as f64;
    let shifted: Vec<f64> = y.iter().map(|v| v - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - free) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    let mut out: Vec<f64> = shifted.iter().map(|v| (v - tau).max(0.0) + floor).collect();
    let residue = total - out.iter().sum::<f64>();
    let top = (0..n)
        .max_by(|&a, &b| out[a].total_cmp(&out[b]))
        .expect("at least one slot");
    out[top] += residue;
    out
}

/// Searcher and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    /// DE/rand/1/bin followed by Nelder-Mead polish of the best members.
    DifferentialEvolution {
        population: usize,
        /// Differential weight.
        f: f64,
        /// Crossover probability.
        cr: f64,
        /// Share of the evaluation budget reserved for the polish.
        polish_share: f64,
    },
    /// Nelder-Mead from the initial point and from random points.
    MultistartLocal { restarts: usize },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::DifferentialEvolution {
            population: 40,
            f: 0.6,
            cr: 0.9,
            polish_share: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub strategy: Strategy,
    pub max_evaluations: usize,
    pub rng_seed: u64,
    /// Phase-noise variance of the objective's operating point.
    pub sigma_p2: f64,
    /// `Eb/N0` (dB) of the objective's operating point.
    pub eb_n0_db: f64,
    pub alpha_max: f64,
    /// Enumeration used inside the objective.
    pub objective: Enumeration,
    /// Enumeration of the final report; `None` picks exact enumeration when
    /// it fits the default budget and `pruned(2, 10⁵)` otherwise.
    pub report: Option<Enumeration>,
    /// Permutation search run (with its fixed seed) inside the objective.
    pub permutations: PermutationSearchConfig,
    /// Extra restarts for the one-off permutation polish of the final design;
    /// 0 disables it.
    pub polish_restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::default(),
            max_evaluations: 10_000,
            rng_seed: 1,
            sigma_p2: 0.03,
            eb_n0_db: 14.0,
            alpha_max: 4.0,
            objective: Enumeration::Exact {
                max_pairs: 1 << 40,
            },
            report: None,
            permutations: PermutationSearchConfig::default(),
            polish_restarts: 40,
        }
    }
}

/// Everything the objective needs besides the design vector.
pub struct Problem {
    graph: FactorGraph,
    slots: SlotMap,
    m: usize,
    t: usize,
    constraints: Constraints,
    sigma_p2: f64,
    eb_n0_db: f64,
    mode: Enumeration,
    permutations: PermutationSearchConfig,
    mothers: Mutex<HashMap<Vec<u64>, Option<Arc<MotherConstellation>>>>,
}

impl Problem {
    pub fn new(
        graph: FactorGraph,
        slots: SlotMap,
        lp: &LpPamSpec,
        cfg: &OptimizerConfig,
    ) -> Result<Self> {
        if !lp.m.is_power_of_two() || lp.m < 2 {
            return Err(Error::InputDomain(format!("M={} must be a power of two", lp.m)));
        }
        let constraints = Constraints::for_problem(&graph, lp.m, cfg.alpha_max);
        constraints.check(graph.resource_degree())?;
        PnChannelParams::new(cfg.sigma_p2, 1.0)?;
        if !cfg.eb_n0_db.is_finite() {
            return Err(Error::InputDomain(format!("Eb/N0 {} dB", cfg.eb_n0_db)));
        }
        Ok(Self {
            graph,
            slots,
            m: lp.m,
            t: lp.t,
            constraints,
            sigma_p2: cfg.sigma_p2,
            eb_n0_db: cfg.eb_n0_db,
            mode: cfg.objective,
            permutations: cfg.permutations.clone(),
            mothers: Mutex::new(HashMap::new()),
        })
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn slot_count(&self) -> usize {
        self.graph.resource_degree()
    }

    pub fn alpha_len(&self) -> usize {
        LpPamSpec::alpha_len(self.t)
    }

    /// `θ = 0`, equal energy split and the given scattering ratios, projected.
    pub fn initial_point(&self, alpha: &[f64]) -> DesignSpace {
        let d = self.slot_count();
        self.constraints.project(&DesignSpace {
            theta: vec![0.0; d],
            energy: vec![self.constraints.energy_budget / d as f64; d],
            alpha: alpha.to_vec(),
        })
    }

    /// The feasible corner with every `α_m = 1`.
    pub fn corner(&self) -> DesignSpace {
        self.initial_point(&vec![1.0; self.alpha_len()])
    }

    /// Mother constellation for `α`, or `None` when its columns are not
    /// distinct.
    pub fn mother(&self, alpha: &[f64]) -> Result<Option<Arc<MotherConstellation>>> {
        let key: Vec<u64> = alpha.iter().map(|a| a.to_bits()).collect();
        if let Some(hit) = self.mothers.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let seed = LpPamSpec::new(self.m, self.t, alpha.to_vec())?.build()?;
        let mc = binary_switching(&seed, self.graph.user_degree(), &self.permutations)?;
        let value = codeword_distinctness_check(&mc).0.then(|| Arc::new(mc));
        self.mothers
            .lock()
            .expect("cache lock")
            .insert(key, value.clone());
        Ok(value)
    }

    pub fn codebooks(&self, x: &DesignSpace, mc: &MotherConstellation) -> Result<CodebookSet> {
        build_codebooks(mc, &x.operators()?, &self.graph, &self.slots)
    }

    pub fn operating_point(&self, cbs: &CodebookSet) -> Result<PnChannelParams> {
        PnChannelParams::for_codebooks(cbs, self.sigma_p2, self.eb_n0_db)
    }

    /// Objective at the projection of `x`.
    pub fn evaluate(&self, x: &DesignSpace) -> Result<f64> {
        self.screen(x, f64::NEG_INFINITY)
    }

    /// Objective at the projection of `x` when it is at least `cutoff`;
    /// otherwise some value below `cutoff` that bounds it from above.
    pub fn screen(&self, x: &DesignSpace, cutoff: f64) -> Result<f64> {
        let x = self.constraints.project(x);
        let Some(mc) = self.mother(&x.alpha)? else {
            return Ok(f64::NEG_INFINITY);
        };
        let cbs = self.codebooks(&x, &mc)?;
        let p = self.operating_point(&cbs)?;
        Ok(mpnm_screen(&cbs, &p, self.mode, cutoff)?.mpnm)
    }
}

/// MPNM of the codebooks realized by `x` (projected first) on graph `graph`
/// with slot placement `slots`; `−∞` when the mother constellation has
/// repeated columns.
pub fn evaluate_design(
    x: &DesignSpace,
    graph: &FactorGraph,
    slots: &SlotMap,
    lp: &LpPamSpec,
    cfg: &OptimizerConfig,
) -> Result<f64> {
    Problem::new(graph.clone(), slots.clone(), lp, cfg)?.evaluate(x)
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub design: DesignSpace,
    pub mother: MotherConstellation,
    pub codebooks: CodebookSet,
    pub report: MetricReport,
    /// Objective value of `design` (with the polished permutations).
    pub objective: f64,
    /// Best objective after each evaluation.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    /// Whether the search stopped because the evaluation budget ran out.
    pub budget_exhausted: bool,
}

/// Budgeted, traced evaluation with deterministic batch semantics.
struct Search<'a> {
    problem: &'a Problem,
    budget: usize,
    trace: Vec<f64>,
    best: Option<(f64, DesignSpace)>,
}

impl Search<'_> {
    fn remaining(&self) -> usize {
        self.budget - self.trace.len()
    }

    /// Evaluates up to the remaining budget of `points` in parallel and
    /// records them in order; returns the values of those evaluated. Values
    /// below the point's cutoff (when given) are upper bounds only; callers
    /// only use them to learn that the point lost a comparison.
    fn batch(&mut self, points: &[DesignSpace], cutoffs: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = points.len().min(self.remaining());
        let values: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let cutoff = cutoffs.map_or(f64::NEG_INFINITY, |c| c[i]);
                self.problem.screen(&points[i], cutoff)
            })
            .collect::<Result<_>>()?;
        for (x, &v) in points[..n].iter().zip(&values) {
            let improves = match &self.best {
                None => true,
                Some((b, _)) => v > *b,
            };
            if improves {
                self.best = Some((v, self.problem.constraints.project(x)));
            }
            self.trace.push(self.best.as_ref().expect("just set").0);
        }
        Ok(values)
    }

    fn one(&mut self, x: &DesignSpace, cutoff: f64) -> Result<Option<f64>> {
        Ok(self
            .batch(std::slice::from_ref(x), Some(&[cutoff]))?
            .first()
            .copied())
    }
}

fn random_point(problem: &Problem, rng: &mut ChaCha8Rng) -> DesignSpace {
    let c = problem.constraints;
    let d = problem.slot_count();
    let theta = (0..d).map(|_| rng.random_range(0.0..=PI)).collect();
    let energy: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: f64 = energy.iter().sum();
    let energy = energy.iter().map(|e| e / s * c.energy_budget).collect();
    let alpha = (0..problem.alpha_len())
        .map(|_| rng.random_range(1.0..=c.alpha_max))
        .collect();
    c.project(&DesignSpace {
        theta,
        energy,
        alpha,
    })
}

/// Nelder-Mead on the projected objective, maximizing, from `start` with
/// initial step `scale` per coordinate; stops at `budget` evaluations or when
/// the simplex values agree to `1e-10`.
fn nelder_mead(
    search: &mut Search,
    start: &DesignSpace,
    start_value: f64,
    scale: &[f64],
    budget: usize,
) -> Result<()> {
    let slots = search.problem.slot_count();
    let limit = search.trace.len() + budget.min(search.remaining());
    let n = start.dims();
    let to_point = |v: &[f64]| DesignSpace::from_vec(v, slots);
    let x0 = start.to_vec();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.clone(), start_value)];
    let vertices: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut v = x0.clone();
            v[i] += scale[i];
            search.problem.constraints.project(&to_point(&v)).to_vec()
        })
        .collect();
    let budget_left = limit.saturating_sub(search.trace.len());
    let points: Vec<DesignSpace> = vertices.iter().map(|v| to_point(v)).collect();
    let values = search.batch(&points[..n.min(budget_left)], None)?;
    if values.len() < n {
        return Ok(());
    }
    simplex.extend(vertices.into_iter().zip(values));
    // every comparison below is against the worst vertex or better, so a
    // value known only to lie under the worst one is as good as exact
    let eval = |search: &mut Search, v: &[f64], cutoff: f64| -> Result<Option<(Vec<f64>, f64)>> {
        if search.trace.len() >= limit {
            return Ok(None);
        }
        let p = search.problem.constraints.project(&to_point(v)).to_vec();
        Ok(search.one(&to_point(&p), cutoff)?.map(|f| (p, f)))
    };
    loop {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if best.is_finite() && worst.is_finite() && best - worst <= 1e-10 {
            return Ok(());
        }
        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|(v, _)| v[i]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let Some(r) = eval(search, &along(-1.0), worst)? else {
            return Ok(());
        };
        if r.1 > simplex[0].1 {
            let Some(e) = eval(search, &along(-2.0), r.1)? else {
                return Ok(());
            };
            simplex[n] = if e.1 > r.1 { e } else { r };
        } else if r.1 > simplex[n - 1].1 {
            simplex[n] = r;
        } else {
            let t = if r.1 > simplex[n].1 { -0.5 } else { 0.5 };
            let Some(c) = eval(search, &along(t), worst)? else {
                return Ok(());
            };
            if c.1 > simplex[n].1.max(r.1) || (t > 0.0 && c.1 > simplex[n].1) {
                simplex[n] = c;
            } else {
                // shrink towards the best vertex
                let best = simplex[0].0.clone();
                for i in 1..=n {
                    let v: Vec<f64> = best
                        .iter()
                        .zip(&simplex[i].0)
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    let Some(s) = eval(search, &v, f64::NEG_INFINITY)? else {
                        return Ok(());
                    };
                    simplex[i] = s;
                }
            }
        }
    }
}

fn step_scale(problem: &Problem, fraction: f64) -> Vec<f64> {
    let c = problem.constraints;
    let d = problem.slot_count();
    let mut s = vec![fraction * PI; d];
    s.extend(vec![fraction * c.energy_budget / d as f64; d]);
    s.extend(vec![fraction * (c.alpha_max - 1.0).max(0.5); problem.alpha_len()]);
    s
}

fn differential_evolution(
    search: &mut Search,
    rng: &mut ChaCha8Rng,
    start: &[DesignSpace],
    population: usize,
    f: f64,
    cr: f64,
    budget: usize,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let problem = search.problem;
    let slots = problem.slot_count();
    let np = population.max(4);
    let mut members: Vec<DesignSpace> = start.iter().take(np).cloned().collect();
    while members.len() < np {
        members.push(random_point(problem, rng));
    }
    let limit = search.trace.len() + budget.min(search.remaining());
    let take = np.min(limit - search.trace.len());
    let fitness = search.batch(&members[..take], None)?;
    let mut pop: Vec<(Vec<f64>, f64)> = members
        .iter()
        .zip(fitness)
        .map(|(m, v)| (m.to_vec(), v))
        .collect();
    if pop.len() < np {
        return Ok(pop);
    }
    let dims = pop[0].0.len();
    while search.trace.len() < limit {
        let trials: Vec<DesignSpace> = (0..np)
            .map(|i| {
                let pick = |rng: &mut ChaCha8Rng, avoid: &[usize]| loop {
                    let r = rng.random_range(0..np);
                    if !avoid.contains(&r) {
                        break r;
                    }
                };
                let a = pick(rng, &[i]);
                let b = pick(rng, &[i, a]);
                let c = pick(rng, &[i, a, b]);
                let forced = rng.random_range(0..dims);
                let v: Vec<f64> = (0..dims)
                    .map(|d| {
                        if d == forced || rng.random::<f64>() < cr {
                            pop[a].0[d] + f * (pop[b].0[d] - pop[c].0[d])
                        } else {
                            pop[i].0[d]
                        }
                    })
                    .collect();
                problem.constraints.project(&DesignSpace::from_vec(&v, slots))
            })
            .collect();
        let n = np.min(limit - search.trace.len());
        // a trial only matters if it is at least as good as its parent
        let parents: Vec<f64> = pop.iter().map(|p| p.1).collect();
        let values = search.batch(&trials[..n], Some(&parents[..n]))?;
        for (i, v) in values.into_iter().enumerate() {
            if v >= pop[i].1 {
                pop[i] = (trials[i].to_vec(), v);
            }
        }
    }
    Ok(pop)
}

/// Maximizes the MPNM over the design space. The first evaluation is always
/// the initial point (`θ = 0`, equal energies, the seed's `α`), the second
/// the all-ones-`α` corner when it differs, so the result is never worse
/// than either.
pub fn optimize(
    cfg: &OptimizerConfig,
    graph: &FactorGraph,
    slots: &SlotMap,
    lp: &LpPamSpec,
) -> Result<OptimizationResult> {
    if cfg.max_evaluations == 0 {
        return Err(Error::InputDomain("evaluation budget must be at least 1".into()));
    }
    let problem = Problem::new(graph.clone(), slots.clone(), lp, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut search = Search {
        problem: &problem,
        budget: cfg.max_evaluations,
        trace: Vec::with_capacity(cfg.max_evaluations),
        best: None,
    };
    let mut starts = vec![problem.initial_point(&lp.alpha)];
    let corner = problem.corner();
    if corner != starts[0] {
        starts.push(corner);
    }
    match &cfg.strategy {
        Strategy::DifferentialEvolution {
            population,
            f,
            cr,
            polish_share,
        } => {
            if !(0.0..=1.0).contains(polish_share) || !(*f > 0.0) || !(0.0..=1.0).contains(cr) {
                return Err(Error::InputDomain(format!(
                    "invalid differential-evolution settings f={f}, cr={cr}, polish={polish_share}"
                )));
            }
            let polish = (cfg.max_evaluations as f64 * polish_share).floor() as usize;
            let de_budget = cfg.max_evaluations - polish;
            let mut pop =
                differential_evolution(&mut search, &mut rng, &starts, *population, *f, *cr, de_budget)?;
            pop.sort_by(|a, b| b.1.total_cmp(&a.1));
            pop.dedup_by(|a, b| a.0 == b.0);
            let polished: Vec<_> = pop.into_iter().filter(|p| p.1.is_finite()).take(3).collect();
            let scale = step_scale(&problem, 0.05);
            for (x, v) in &polished {
                let share = search.remaining() / polished.len().max(1);
                nelder_mead(&mut search, &DesignSpace::from_vec(x, problem.slot_count()), *v, &scale, share.max(1))?;
            }
            if let Some((v, x)) = search.best.clone() {
                if v.is_finite() {
                    let left = search.remaining();
                    nelder_mead(&mut search, &x, v, &step_scale(&problem, 0.01), left)?;
                }
            }
        }
        Strategy::MultistartLocal { restarts } => {
            let restarts = (*restarts).max(1);
            let scale = step_scale(&problem, 0.1);
            for r in 0..restarts {
                if search.remaining() == 0 {
                    break;
                }
                let start = starts
                    .get(r)
                    .cloned()
                    .unwrap_or_else(|| random_point(&problem, &mut rng));
                let Some(v) = search.one(&start, f64::NEG_INFINITY)? else {
                    break;
                };
                let share = search.remaining() / (restarts - r);
                nelder_mead(&mut search, &start, v, &scale, share)?;
            }
        }
    }
    let evaluations = search.trace.len();
    let budget_exhausted = evaluations >= cfg.max_evaluations;
    let (mut objective, design) = search.best.clone().expect("at least one evaluation");
    let Some(mut mother) = problem.mother(&design.alpha)? else {
        return Err(Error::Degenerate(
            "no evaluated design has a mother constellation with distinct columns".into(),
        ));
    };
    let mut codebooks = problem.codebooks(&design, &mother)?;
    if cfg.polish_restarts > 0 {
        let seed = LpPamSpec::new(lp.m, lp.t, design.alpha.clone())?.build()?;
        let wider = PermutationSearchConfig {
            restarts: cfg.polish_restarts,
            rng_seed: cfg.permutations.rng_seed ^ cfg.rng_seed.rotate_left(17),
            ..cfg.permutations.clone()
        };
        let mc = binary_switching(&seed, graph.user_degree(), &wider)?;
        if codeword_distinctness_check(&mc).0 {
            let cbs = problem.codebooks(&design, &mc)?;
            let v = mpnm_only(&cbs, &problem.operating_point(&cbs)?, problem.mode)?.mpnm;
            if v > objective {
                objective = v;
                mother = Arc::new(mc);
                codebooks = cbs;
            }
        }
    }
    let p = problem.operating_point(&codebooks)?;
    let report = mpnm(&codebooks, &p, report_mode(cfg, &codebooks))?;
    Ok(OptimizationResult {
        design,
        mother: (*mother).clone(),
        codebooks,
        report,
        objective,
        trace: search.trace,
        evaluations,
        budget_exhausted,
    })
}

fn report_mode(cfg: &OptimizerConfig, cbs: &CodebookSet) -> Enumeration {
    cfg.report.unwrap_or_else(|| Enumeration::auto(cbs))
}
