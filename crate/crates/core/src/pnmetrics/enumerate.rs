use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tables::PairTables;
use super::{q_function, PnChannelParams, EBN0_CONVENTION};
use crate::codebook::{CodebookSet, SuperimposedConstellation};
use crate::error::{Error, Result};

/// Ordered pairs an exact enumeration may visit before it is refused.
pub const DEFAULT_EXACT_PAIR_BUDGET: u128 = 1 << 28;

const CHUNK: usize = 64;

/// How the pairs of the superimposed constellation are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Enumeration {
    /// Every ordered pair `w ≠ ŵ`.
    Exact { max_pairs: u128 },
    /// Every ordered pair whose label tuples differ in at most `max_users`
    /// users, plus `samples` random pairs differing in more.
    Pruned {
        max_users: usize,
        samples: usize,
        seed: u64,
    },
}

impl Enumeration {
    pub fn exact() -> Self {
        Enumeration::Exact {
            max_pairs: DEFAULT_EXACT_PAIR_BUDGET,
        }
    }

    /// Exact enumeration when all ordered pairs of `Φ` fit the default
    /// budget, otherwise `pruned(2, 10⁵)`.
    pub fn auto(cbs: &CodebookSet) -> Self {
        let words = (cbs.size() as u128).checked_pow(cbs.users() as u32);
        match words {
            Some(w) if w * (w - 1) <= DEFAULT_EXACT_PAIR_BUDGET => Self::exact(),
            _ => Self::pruned(2, 100_000),
        }
    }

    pub fn pruned(max_users: usize, samples: usize) -> Self {
        Enumeration::Pruned {
            max_users,
            samples,
            seed: 0,
        }
    }
}

/// Labels of the sent and the wrongly decided codeword.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPair {
    pub sent: Vec<usize>,
    pub considered: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationSummary {
    pub mode: Enumeration,
    /// Ordered pairs whose statistics were computed.
    pub pairs_evaluated: u128,
    /// Ordered pairs those computations stand for (pruned mode evaluates
    /// each error event once for all labels of uninvolved users).
    pub pairs_covered: u128,
    /// Ordered pairs in the whole constellation.
    pub pairs_total: u128,
    /// Covered pairs of distinct labels that map to the same codeword.
    pub coincident_pairs: u128,
    /// Part of `pep_bound` estimated from random samples rather than summed.
    pub pep_bound_sampled: f64,
}

/// Minimum phase-noise metric with its argmin, the minimum Euclidean distance
/// and the union bound, all from one enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpnm: f64,
    pub argmin: LabelPair,
    pub med: f64,
    pub pep_bound: f64,
    pub enumeration: EnumerationSummary,
    pub operating_point: PnChannelParams,
    pub ebn0_convention: String,
}

#[derive(Debug, Clone)]
struct Acc {
    min_q: f64,
    arg: Option<(Vec<usize>, Vec<usize>)>,
    min_d2: f64,
    bound: f64,
    evaluated: u128,
    coincident: u128,
    fault: Option<String>,
}

impl Acc {
    fn new() -> Self {
        Self {
            min_q: f64::INFINITY,
            arg: None,
            min_d2: f64::INFINITY,
            bound: 0.0,
            evaluated: 0,
            coincident: 0,
            fault: None,
        }
    }

    fn merge(mut self, other: Acc) -> Acc {
        if other.min_q < self.min_q {
            self.min_q = other.min_q;
            self.arg = other.arg;
        }
        self.min_d2 = self.min_d2.min(other.min_d2);
        self.bound += other.bound;
        self.evaluated += other.evaluated;
        self.coincident += other.coincident;
        if self.fault.is_none() {
            self.fault = other.fault;
        }
        self
    }
}

/// `q_arg` of a pair from summed per-resource terms; coincident codewords
/// (all terms zero) are maximally confusable and score 0.
#[inline]
fn q_of(mean: f64, var: f64) -> std::result::Result<(f64, bool), String> {
    if var == 0.0 && mean == 0.0 {
        Ok((0.0, true))
    } else if var > 0.0 {
        Ok((-mean / var.sqrt(), false))
    } else {
        Err(format!("pair variance {var} (mean {mean})"))
    }
}

struct Context<'a> {
    phi: &'a SuperimposedConstellation,
    tables: &'a PairTables,
    with_bound: bool,
}

impl Context<'_> {
    /// Visits one ordered pair; `weight` is the bound weight `covered / M^J`.
    #[inline]
    fn visit(
        &self,
        acc: &mut Acc,
        sent: &[usize],
        considered: &[usize],
        resources: &[usize],
        weight: f64,
        covered: u128,
    ) {
        let (mut mean, mut var, mut d2) = (0.0, 0.0, 0.0);
        for &k in resources {
            let e = self.tables.entry(
                k,
                self.phi.local_index(k, sent),
                self.phi.local_index(k, considered),
            );
            mean += e.mean;
            var += e.var;
            d2 += e.d2;
        }
        acc.evaluated += 1;
        match q_of(mean, var) {
            Ok((q, coincident)) => {
                if coincident {
                    acc.coincident += covered;
                }
                if q < acc.min_q {
                    acc.min_q = q;
                    acc.arg = Some((sent.to_vec(), considered.to_vec()));
                }
                acc.min_d2 = acc.min_d2.min(d2);
                if self.with_bound {
                    acc.bound += weight * q_function(q);
                }
            }
            Err(msg) => {
                if acc.fault.is_none() {
                    acc.fault = Some(format!("{msg} for labels {sent:?} -> {considered:?}"));
                }
            }
        }
    }
}

fn binom(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for mask in 1u64..(1u64 << n) {
        if (mask.count_ones() as usize) <= max {
            out.push((0..n).filter(|i| mask >> i & 1 == 1).collect());
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Loop order over users and the resources whose symbols become fully
/// determined at each depth.
struct Plan {
    order: Vec<usize>,
    completes: Vec<Vec<usize>>,
    /// `(resource, stride)` of each user's label inside the resource's local index
    strides: Vec<Vec<(usize, usize)>>,
    /// `(resource, (M²)^r)` for each user, `r` being the user's rank in the
    /// order in which the resource's users are assigned
    ranks: Vec<Vec<(usize, usize)>>,
    /// Per depth, `(resource, assigned users)` of the resources still open
    open: Vec<Vec<(usize, usize)>>,
    /// Per resource, the position in its user list of each assignment rank
    positions: Vec<Vec<usize>>,
}

impl Plan {
    /// Greedy order that completes resources as early as possible, so that
    /// most table lookups happen outside the innermost loops.
    fn new(phi: &SuperimposedConstellation) -> Self {
        let graph = phi.graph();
        let (j_count, k_count, m) = (graph.users(), graph.resources(), phi.size());
        let mut chosen = vec![false; j_count];
        let mut order = Vec::with_capacity(j_count);
        let missing = |k: usize, chosen: &[bool], extra: usize| {
            graph
                .resource_users(k)
                .iter()
                .filter(|&&u| !chosen[u] && u != extra)
                .count()
        };
        for _ in 0..j_count {
            let best = (0..j_count)
                .filter(|&j| !chosen[j])
                .max_by_key(|&j| {
                    let res = graph.user_resources(j);
                    let done = res.iter().filter(|&&k| missing(k, &chosen, j) == 0).count();
                    let shared = res
                        .iter()
                        .filter(|&&k| missing(k, &chosen, usize::MAX) < graph.resource_degree())
                        .count();
                    (done, shared, std::cmp::Reverse(j))
                })
                .expect("unchosen user");
            chosen[best] = true;
            order.push(best);
        }
        let mut completes = vec![Vec::new(); j_count];
        for k in 0..k_count {
            let depth = graph
                .resource_users(k)
                .iter()
                .map(|u| order.iter().position(|x| x == u).unwrap())
                .max()
                .unwrap_or(0);
            completes[depth].push(k);
        }
        let strides: Vec<Vec<(usize, usize)>> = (0..j_count)
            .map(|j| {
                graph
                    .user_resources(j)
                    .iter()
                    .map(|&k| {
                        let users = graph.resource_users(k);
                        let pos = users.iter().position(|&u| u == j).unwrap();
                        (k, m.pow((users.len() - 1 - pos) as u32))
                    })
                    .collect()
            })
            .collect();
        let position_in_order =
            |u: usize| order.iter().position(|&x| x == u).expect("every user is ordered");
        let positions: Vec<Vec<usize>> = (0..k_count)
            .map(|k| {
                let users = graph.resource_users(k);
                let mut by_rank: Vec<usize> = (0..users.len()).collect();
                by_rank.sort_by_key(|&p| position_in_order(users[p]));
                by_rank
            })
            .collect();
        let m2 = m * m;
        let ranks = (0..j_count)
            .map(|j| {
                graph
                    .user_resources(j)
                    .iter()
                    .map(|&k| {
                        let users = graph.resource_users(k);
                        let r = positions[k]
                            .iter()
                            .position(|&p| users[p] == j)
                            .expect("user is on the resource");
                        (k, m2.pow(r as u32))
                    })
                    .collect()
            })
            .collect();
        let open = (0..j_count)
            .map(|depth| {
                (0..k_count)
                    .filter_map(|k| {
                        let assigned = graph
                            .resource_users(k)
                            .iter()
                            .filter(|&&u| position_in_order(u) <= depth)
                            .count();
                        (assigned < graph.resource_users(k).len()).then_some((k, assigned))
                    })
                    .collect()
            })
            .collect();
        Self {
            order,
            completes,
            strides,
            ranks,
            open,
            positions,
        }
    }
}

/// Per resource and number of assigned users `L`, the smallest slack the
/// resource can contribute given the label pairs of its first `L` users (in
/// assignment order), indexed by `Σ_r (l_r M + l̂_r) (M²)^r`.
struct Floors {
    tables: Vec<Vec<Vec<f64>>>,
}

impl Floors {
    fn new(slack: &[Vec<f64>], tables: &PairTables, plan: &Plan, m: usize) -> Self {
        let m2 = m * m;
        let tables = (0..tables.resources())
            .map(|k| {
                let n = tables.size(k);
                let degree = plan.positions[k].len();
                let digit = |a: usize, p: usize| (a / m.pow((degree - 1 - p) as u32)) % m;
                (0..degree)
                    .map(|level| {
                        let part = |a: usize, scale: usize| -> usize {
                            (0..level)
                                .map(|r| digit(a, plan.positions[k][r]) * scale * m2.pow(r as u32))
                                .sum()
                        };
                        let sent: Vec<usize> = (0..n).map(|a| part(a, m)).collect();
                        let cons: Vec<usize> = (0..n).map(|b| part(b, 1)).collect();
                        let mut floor = vec![f64::INFINITY; m2.pow(level as u32)];
                        for (a, row) in slack[k].chunks(n).enumerate() {
                            for (b, &v) in row.iter().enumerate() {
                                let c = &mut floor[sent[a] + cons[b]];
                                if v < *c {
                                    *c = v;
                                }
                            }
                        }
                        floor
                    })
                    .collect()
            })
            .collect();
        Self { tables }
    }
}

struct Walk<'a> {
    ctx: &'a Context<'a>,
    plan: &'a Plan,
    m: usize,
    max_diff: usize,
    weight: f64,
    /// Per resource `n − U√v` for every symbol pair, when pruning is enabled.
    slack: Option<&'a [Vec<f64>]>,
    floors: Option<&'a Floors>,
    sent_idx: Vec<usize>,
    /// Per resource, the floor-table index of the users assigned so far
    assigned: Vec<usize>,
    cons_idx: Vec<usize>,
    sent: Vec<usize>,
    cons: Vec<usize>,
    acc: Acc,
    threshold: f64,
    /// `min(min_q, threshold)²` when positive, else 0 (no skipping)
    best2: f64,
    /// Stop as soon as a pair below this value is found.
    cutoff: f64,
}

impl Walk<'_> {
    fn descend(&mut self, depth: usize, mean: f64, var: f64, slack: f64, ndiff: usize) {
        let user = self.plan.order[depth];
        let last = depth + 1 == self.plan.order.len();
        let m = self.m;
        let saturated = ndiff >= self.max_diff;
        for l in 0..m {
            let alternatives = if saturated { l..l + 1 } else { 0..m };
            for lh in alternatives {
                let diff = ndiff + usize::from(l != lh);
                if (last && diff == 0) || self.acc.min_q < self.cutoff {
                    continue;
                }
                for &(k, st) in &self.plan.strides[user] {
                    self.sent_idx[k] += l * st;
                    self.cons_idx[k] += lh * st;
                }
                for &(k, w) in &self.plan.ranks[user] {
                    self.assigned[k] += (l * m + lh) * w;
                }
                self.sent[user] = l;
                self.cons[user] = lh;
                let (mut me, mut va, mut sl) = (mean, var, slack);
                for &k in &self.plan.completes[depth] {
                    let n = self.ctx.tables.size(k);
                    let at = self.sent_idx[k] * n + self.cons_idx[k];
                    let e = &self.ctx.tables.table(k)[at];
                    me += e.mean;
                    va += e.var;
                    if let Some(t) = self.slack {
                        sl += t[k][at];
                    }
                }
                // every completion of this prefix has q >= threshold
                let hopeless = self.hopeless(depth, sl);
                if !hopeless {
                    if last {
                        self.leaf(me, va);
                    } else {
                        self.descend(depth + 1, me, va, sl, diff);
                    }
                }
                for &(k, st) in &self.plan.strides[user] {
                    self.sent_idx[k] -= l * st;
                    self.cons_idx[k] -= lh * st;
                }
                for &(k, w) in &self.plan.ranks[user] {
                    self.assigned[k] -= (l * m + lh) * w;
                }
            }
        }
    }

    /// Whether every completion of the current prefix, whose closed
    /// resources carry slack `sl`, has `q` at or above the threshold.
    #[inline]
    fn hopeless(&self, depth: usize, sl: f64) -> bool {
        let Some(floors) = self.floors else {
            return false;
        };
        let rest: f64 = self.plan.open[depth]
            .iter()
            .map(|&(k, level)| floors.tables[k][level][self.assigned[k]])
            .sum();
        sl + rest >= 0.0
    }

    #[inline]
    fn leaf(&mut self, mean: f64, var: f64) {
        self.acc.evaluated += 1;
        let num = -mean;
        // q < threshold is only possible when num < threshold · √var
        if !(self.ctx.with_bound
            || num <= 0.0
            || !(self.best2 > 0.0)
            || num * num < self.best2 * var * (1.0 + 1e-12))
        {
            return;
        }
        let acc = &mut self.acc;
        match q_of(mean, var) {
            Ok((q, coincident)) => {
                if coincident {
                    acc.coincident += 1;
                }
                if q < acc.min_q {
                    acc.min_q = q;
                    acc.arg = Some((self.sent.clone(), self.cons.clone()));
                    let t = q.min(self.threshold);
                    self.best2 = if t > 0.0 { t * t } else { 0.0 };
                }
                if self.ctx.with_bound {
                    acc.bound += self.weight * q_function(q);
                }
            }
            Err(msg) => {
                if acc.fault.is_none() {
                    acc.fault = Some(format!(
                        "{msg} for labels {:?} -> {:?}",
                        self.sent, self.cons
                    ));
                }
            }
        }
    }
}

/// Smallest squared distance between distinct codewords whose labels differ
/// in at most `max_diff` users, by depth-first search that abandons prefixes
/// already at least as far apart as the best pair found.
fn min_distance(ctx: &Context, plan: &Plan, max_diff: usize) -> f64 {
    struct Search<'a> {
        tables: &'a PairTables,
        plan: &'a Plan,
        m: usize,
        max_diff: usize,
        idx: Vec<(usize, usize)>,
        best: f64,
    }
    impl Search<'_> {
        fn go(&mut self, depth: usize, d2: f64, ndiff: usize) {
            let user = self.plan.order[depth];
            let last = depth + 1 == self.plan.order.len();
            let saturated = ndiff >= self.max_diff;
            for l in 0..self.m {
                let alternatives = if saturated { l..l + 1 } else { 0..self.m };
                for lh in alternatives {
                    let diff = ndiff + usize::from(l != lh);
                    if last && diff == 0 {
                        continue;
                    }
                    for &(k, st) in &self.plan.strides[user] {
                        self.idx[k].0 += l * st;
                        self.idx[k].1 += lh * st;
                    }
                    let mut dd = d2;
                    for &k in &self.plan.completes[depth] {
                        dd += self.tables.entry(k, self.idx[k].0, self.idx[k].1).d2;
                    }
                    if dd < self.best {
                        if last {
                            self.best = dd;
                        } else {
                            self.go(depth + 1, dd, diff);
                        }
                    }
                    for &(k, st) in &self.plan.strides[user] {
                        self.idx[k].0 -= l * st;
                        self.idx[k].1 -= lh * st;
                    }
                }
            }
        }
    }
    let mut search = Search {
        tables: ctx.tables,
        plan,
        m: ctx.phi.size(),
        max_diff,
        idx: vec![(0, 0); ctx.phi.graph().resources()],
        best: f64::INFINITY,
    };
    search.go(0, 0.0, 0);
    search.best
}

/// Depth-first pass over all ordered pairs differing in at most `max_diff`
/// users. A finite `threshold` (an upper bound on the minimum) lets
/// whole subtrees be skipped without changing the minimum, except that pairs
/// exactly at the threshold may be skipped too.
fn walk(ctx: &Context, plan: &Plan, max_diff: usize, threshold: f64) -> Acc {
    walk_until(ctx, plan, max_diff, threshold, f64::NEG_INFINITY)
}

/// [`walk`] that abandons each branch once it has found a pair with `q`
/// below `cutoff`.
fn walk_until(ctx: &Context, plan: &Plan, max_diff: usize, threshold: f64, cutoff: f64) -> Acc {
    let phi = ctx.phi;
    let (m, j_count, k_count) = (phi.size(), phi.graph().users(), phi.graph().resources());
    let weight = 1.0 / phi.len().map_or(f64::INFINITY, |t| t as f64);
    let tables = ctx.tables;

    // q < U with U > 0 needs N < U√V <= U Σ√v_k, i.e. Σ_k (n_k − U√v_k) < 0;
    // with U <= 0 it needs N < U√V <= 0, i.e. Σ_k n_k < 0
    let prune = !ctx.with_bound && threshold.is_finite();
    let spread = threshold.max(0.0);
    let slack: Vec<Vec<f64>> = if prune {
        (0..k_count)
            .map(|k| {
                tables
                    .table(k)
                    .iter()
                    .map(|e| -e.mean - spread * e.var.sqrt())
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let floors = prune.then(|| Floors::new(&slack, tables, plan, m));
    let slack_ref = if prune { Some(slack.as_slice()) } else { None };
    let best2 = if threshold > 0.0 && threshold.is_finite() {
        threshold * threshold
    } else {
        0.0
    };

    let first = plan.order[0];
    // the first user's label pair splits the work into independent branches
    let branches: Vec<Acc> = (0..m * m)
        .into_par_iter()
        .map(|b| {
            let mut walk = Walk {
                ctx,
                plan,
                m,
                max_diff,
                weight,
                slack: slack_ref,
                floors: floors.as_ref(),
                sent_idx: vec![0; k_count],
                assigned: vec![0; k_count],
                cons_idx: vec![0; k_count],
                sent: vec![0; j_count],
                cons: vec![0; j_count],
                acc: Acc::new(),
                threshold,
                best2,
                cutoff,
            };
            let (l, lh) = (b / m, b % m);
            let diff = usize::from(l != lh);
            if diff > max_diff || (j_count == 1 && diff == 0) {
                return walk.acc;
            }
            for &(k, st) in &plan.strides[first] {
                walk.sent_idx[k] += l * st;
                walk.cons_idx[k] += lh * st;
            }
            for &(k, w) in &plan.ranks[first] {
                walk.assigned[k] += (l * m + lh) * w;
            }
            walk.sent[first] = l;
            walk.cons[first] = lh;
            let (mut mean, mut var, mut sl) = (0.0, 0.0, 0.0);
            for &k in &plan.completes[0] {
                let n = tables.size(k);
                let at = walk.sent_idx[k] * n + walk.cons_idx[k];
                let e = &tables.table(k)[at];
                mean += e.mean;
                var += e.var;
                if let Some(t) = slack_ref {
                    sl += t[k][at];
                }
            }
            if j_count == 1 {
                walk.leaf(mean, var);
            } else if !walk.hopeless(0, sl) {
                walk.descend(1, mean, var, sl, diff);
            }
            walk.acc
        })
        .collect();
    branches.into_iter().fold(Acc::new(), Acc::merge)
}

fn pair_q(ctx: &Context, sent: &[usize], cons: &[usize]) -> f64 {
    let phi = ctx.phi;
    let (mut mean, mut var) = (0.0, 0.0);
    for k in 0..phi.graph().resources() {
        let e = ctx
            .tables
            .entry(k, phi.local_index(k, sent), phi.local_index(k, cons));
        mean += e.mean;
        var += e.var;
    }
    q_of(mean, var).map_or(f64::INFINITY, |(q, _)| q)
}

/// A cheap first upper bound on the minimum: random single- and two-user
/// error events, the best few then improved by coordinate descent over the
/// labels.
fn anchor(ctx: &Context) -> Acc {
    const DRAWS: usize = 4096;
    const KEEP: usize = 8;
    let phi = ctx.phi;
    let (m, j_count) = (phi.size(), phi.graph().users());
    let mut rng = ChaCha8Rng::seed_from_u64(0x616e63686f72);
    let mut pool: Vec<(f64, Vec<usize>, Vec<usize>)> = Vec::with_capacity(DRAWS);
    for draw in 0..DRAWS {
        let sent: Vec<usize> = (0..j_count).map(|_| rng.random_range(0..m)).collect();
        let mut cons = sent.clone();
        for _ in 0..(1 + draw % 2).min(j_count) {
            let j = rng.random_range(0..j_count);
            cons[j] = (sent[j] + rng.random_range(1..m)) % m;
        }
        if cons == sent {
            continue;
        }
        pool.push((pair_q(ctx, &sent, &cons), sent, cons));
    }
    pool.sort_by(|a, b| a.0.total_cmp(&b.0));
    pool.truncate(KEEP);
    let mut acc = Acc::new();
    for (mut q, mut sent, mut cons) in pool {
        loop {
            let start = q;
            for j in 0..j_count {
                for l in 0..m {
                    for lh in 0..m {
                        let (ol, olh) = (sent[j], cons[j]);
                        sent[j] = l;
                        cons[j] = lh;
                        let t = if sent == cons { f64::INFINITY } else { pair_q(ctx, &sent, &cons) };
                        if t < q {
                            q = t;
                        } else {
                            sent[j] = ol;
                            cons[j] = olh;
                        }
                    }
                }
            }
            if !(q < start) {
                break;
            }
        }
        if q < acc.min_q {
            acc.min_q = q;
            acc.arg = Some((sent, cons));
        }
    }
    acc
}

/// Minimum over pairs differing in at most `max_diff` users, tightening the
/// skip threshold stage by stage (one user, two users, then all).
/// Exact minimum over pairs differing in at most `max_diff` users, or, once
/// some pair below `cutoff` turns up, the smallest value found so far.
fn staged(ctx: &Context, plan: &Plan, max_diff: usize, cutoff: f64) -> Acc {
    let mut stages = vec![1.min(max_diff)];
    if max_diff >= 2 {
        stages.push(2);
    }
    if max_diff > 2 {
        stages.push(max_diff);
    }
    let mut best = anchor(ctx);
    best.evaluated = 0;
    for d in stages {
        if best.min_q < cutoff {
            break;
        }
        let mut acc = walk_until(ctx, plan, d, best.min_q, cutoff);
        acc.evaluated += best.evaluated;
        // pairs exactly at the threshold may have been skipped
        if best.min_q < acc.min_q {
            acc.min_q = best.min_q;
            acc.arg = best.arg;
        }
        if acc.fault.is_none() {
            acc.fault = best.fault;
        }
        best = acc;
    }
    best
}

fn ordered_pairs(total: u128) -> u128 {
    total.saturating_mul(total.saturating_sub(1))
}

fn pruned(ctx: &Context, max_users: usize) -> (Acc, u128) {
    let phi = ctx.phi;
    let graph = phi.graph();
    let (j_count, m) = (graph.users(), phi.size());
    let mut total = Acc::new();
    let mut covered = 0u128;
    for d_set in subsets(j_count, max_users.min(j_count)) {
        let mut resources: Vec<usize> = d_set
            .iter()
            .flat_map(|&j| graph.user_resources(j).iter().copied())
            .collect();
        resources.sort_unstable();
        resources.dedup();
        let mut involved: Vec<usize> = resources
            .iter()
            .flat_map(|&k| graph.resource_users(k).iter().copied())
            .collect();
        involved.sort_unstable();
        involved.dedup();
        let free = j_count - involved.len();
        let reps = (m as u128).pow(free as u32);
        let weight = 1.0 / (m as f64).powi(involved.len() as i32);
        let assignments = m.pow(involved.len() as u32);
        let alternatives = (m - 1).pow(d_set.len() as u32);
        covered += reps * assignments as u128 * alternatives as u128;
        let chunks: Vec<Acc> = (0..assignments.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = Acc::new();
                let mut sent = vec![0usize; j_count];
                let mut considered = vec![0usize; j_count];
                for x in c * CHUNK..((c + 1) * CHUNK).min(assignments) {
                    let mut rem = x;
                    for &j in involved.iter().rev() {
                        sent[j] = rem % m;
                        rem /= m;
                    }
                    for alt in 0..alternatives {
                        considered.copy_from_slice(&sent);
                        let mut rem = alt;
                        for &j in d_set.iter().rev() {
                            considered[j] = (sent[j] + 1 + rem % (m - 1)) % m;
                            rem /= m - 1;
                        }
                        ctx.visit(&mut acc, &sent, &considered, &resources, weight, reps);
                    }
                }
                acc
            })
            .collect();
        total = chunks.into_iter().fold(total, Acc::merge);
    }
    (total, covered)
}

/// Random ordered pairs differing in more than `max_users` users; returns the
/// accumulator and the estimated bound contribution of all such pairs.
fn sampled(ctx: &Context, max_users: usize, samples: usize, seed: u64) -> (Acc, f64) {
    let phi = ctx.phi;
    let (j_count, m) = (phi.graph().users(), phi.size());
    let mut acc = Acc::new();
    if samples == 0 || max_users >= j_count {
        return (acc, 0.0);
    }
    let all: Vec<usize> = (0..phi.graph().resources()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sent = vec![0usize; j_count];
    let mut considered = vec![0usize; j_count];
    let mut q_sum = 0.0;
    let mut drawn = 0usize;
    while drawn < samples {
        for (s, c) in sent.iter_mut().zip(considered.iter_mut()) {
            *s = rng.random_range(0..m);
            *c = rng.random_range(0..m);
        }
        if sent.iter().zip(&considered).filter(|(a, b)| a != b).count() <= max_users {
            continue;
        }
        drawn += 1;
        let before = acc.bound;
        ctx.visit(&mut acc, &sent, &considered, &all, 1.0, 1);
        q_sum += acc.bound - before;
    }
    // pairs (per sent codeword) differing in more than max_users users
    let rest: f64 = ((max_users + 1)..=j_count)
        .map(|d| binom(j_count, d) as f64 * ((m - 1) as f64).powi(d as i32))
        .sum();
    let estimate = if ctx.with_bound {
        rest * q_sum / samples as f64
    } else {
        0.0
    };
    acc.bound = 0.0;
    (acc, estimate)
}

fn run(
    cbs: &CodebookSet,
    p: &PnChannelParams,
    mode: Enumeration,
    with_bound: bool,
    with_med: bool,
    cutoff: f64,
) -> Result<MetricReport> {
    let phi = SuperimposedConstellation::new(cbs);
    let j_count = phi.graph().users();
    let pairs_total = ordered_pairs(phi.len().unwrap_or(u128::MAX));
    if let Enumeration::Exact { max_pairs } = mode {
        if pairs_total > max_pairs {
            return Err(Error::BudgetRefusal {
                what: "ordered codeword pairs",
                required: pairs_total,
                budget: max_pairs,
            });
        }
    }
    let tables = PairTables::new(&phi, p)?;
    let ctx = Context {
        phi: &phi,
        tables: &tables,
        with_bound,
    };
    let plan = Plan::new(&phi);
    let (mut acc, covered, sampled_bound) = match mode {
        Enumeration::Exact { .. } => {
            let acc = if with_bound {
                walk(&ctx, &plan, j_count, f64::INFINITY)
            } else {
                staged(&ctx, &plan, j_count, cutoff)
            };
            (acc, pairs_total, 0.0)
        }
        Enumeration::Pruned {
            max_users,
            samples,
            seed,
        } => {
            if max_users == 0 {
                return Err(Error::InputDomain(
                    "pruned enumeration needs max_users >= 1".into(),
                ));
            }
            let q = max_users.min(j_count);
            let (acc, covered) = if with_bound {
                pruned(&ctx, q)
            } else {
                let covered = pruned_count(&phi, q);
                (staged(&ctx, &plan, q, cutoff), covered)
            };
            let (extra, estimate) = sampled(&ctx, q, samples, seed);
            (acc.merge(extra), covered, estimate)
        }
    };
    if let Some(fault) = acc.fault.take() {
        return Err(Error::Numerical(fault));
    }
    let max_diff = match mode {
        Enumeration::Exact { .. } => j_count,
        Enumeration::Pruned { max_users, .. } => max_users.min(j_count),
    };
    let med = if with_med {
        acc.min_d2.min(min_distance(&ctx, &plan, max_diff)).sqrt()
    } else {
        f64::NAN
    };
    let (sent, considered) = acc
        .arg
        .ok_or_else(|| Error::Degenerate("constellation has a single codeword".into()))?;
    Ok(MetricReport {
        mpnm: acc.min_q,
        argmin: LabelPair { sent, considered },
        med,
        pep_bound: if with_bound {
            acc.bound + sampled_bound
        } else {
            f64::NAN
        },
        enumeration: EnumerationSummary {
            mode,
            pairs_evaluated: acc.evaluated,
            pairs_covered: covered,
            pairs_total,
            coincident_pairs: acc.coincident,
            pep_bound_sampled: sampled_bound,
        },
        operating_point: *p,
        ebn0_convention: EBN0_CONVENTION.to_string(),
    })
}

/// Ordered pairs whose label tuples differ in `1..=q` users.
fn pruned_count(phi: &SuperimposedConstellation, q: usize) -> u128 {
    let (j_count, m) = (phi.graph().users(), phi.size() as u128);
    let per_word: u128 = (1..=q)
        .map(|d| binom(j_count, d) * (m - 1).pow(d as u32))
        .sum();
    phi.len().unwrap_or(u128::MAX).saturating_mul(per_word)
}

/// Minimum over ordered pairs `w ≠ ŵ` of `q_arg(w, ŵ)`, with the union bound
/// evaluated by the same enumeration.
pub fn mpnm(cbs: &CodebookSet, p: &PnChannelParams, mode: Enumeration) -> Result<MetricReport> {
    run(cbs, p, mode, true, true, f64::NEG_INFINITY)
}

/// [`mpnm`] without the union bound and the minimum distance (both NaN);
/// this is the cheap path used as a search objective.
pub fn mpnm_only(cbs: &CodebookSet, p: &PnChannelParams, mode: Enumeration) -> Result<MetricReport> {
    run(cbs, p, mode, false, false, f64::NEG_INFINITY)
}

/// Like [`mpnm_only`], but free to stop early once the MPNM is known to be
/// below `cutoff`: the returned `mpnm` is exact when it is at least `cutoff`
/// and otherwise only the `q` of some pair below `cutoff`, an upper bound.
pub fn mpnm_screen(
    cbs: &CodebookSet,
    p: &PnChannelParams,
    mode: Enumeration,
    cutoff: f64,
) -> Result<MetricReport> {
    run(cbs, p, mode, false, false, cutoff)
}

/// `(1/M^J) Σ_w Σ_{ŵ≠w} Q(q_arg(w, ŵ))`.
pub fn pep_union_bound(cbs: &CodebookSet, p: &PnChannelParams, mode: Enumeration) -> Result<f64> {
    Ok(mpnm(cbs, p, mode)?.pep_bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::superimpose;
    use crate::graph::FactorGraph;
    use crate::pnmetrics::pair_stats;
    use num_complex::Complex64;

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

    #[test]
    fn single_user_antipodal() {
        let g = FactorGraph::from_incidence(&[vec![1]]).unwrap();
        let cbs = CodebookSet::new(g, vec![vec![vec![c(1.0, 0.0), c(-1.0, 0.0)]]]).unwrap();
        let p = PnChannelParams::for_codebooks(&cbs, 0.0, 0.0).unwrap();
        assert!((p.n0 - 1.0).abs() < 1e-15);
        let r = mpnm(&cbs, &p, Enumeration::exact()).unwrap();
        assert!((r.mpnm - 2.0 / (2.0 * p.n0).sqrt()).abs() < 1e-12);
        assert!((r.med - 2.0).abs() < 1e-15);
        // two orderings, each weighted 1/2
        assert!((r.pep_bound - q_function(r.mpnm)).abs() < 1e-15);
        assert_eq!(r.enumeration.pairs_total, 2);
    }

    #[test]
    fn exact_refuses_over_budget() {
        let cbs = random_set(1, 4);
        let p = PnChannelParams::new(0.01, 0.1).unwrap();
        let err = mpnm(&cbs, &p, Enumeration::Exact { max_pairs: 1000 }).unwrap_err();
        assert_eq!(
            err,
            Error::BudgetRefusal {
                what: "ordered codeword pairs",
                required: 4096 * 4095,
                budget: 1000
            }
        );
    }

    #[test]
    fn argmin_reproduces_reported_value() {
        let cbs = random_set(2, 4);
        let p = PnChannelParams::for_codebooks(&cbs, 0.03, 10.0).unwrap();
        let r = mpnm(&cbs, &p, Enumeration::exact()).unwrap();
        let w = superimpose(&cbs, &r.argmin.sent).unwrap();
        let wh = superimpose(&cbs, &r.argmin.considered).unwrap();
        let st = pair_stats(&w, &wh, &p).unwrap();
        assert!((st.q_arg - r.mpnm).abs() < 1e-9 * (1.0 + r.mpnm));
        assert_eq!(r.enumeration.pairs_evaluated, 4096 * 4095);
    }

    #[test]
    fn pruned_covers_everything_when_all_users_may_differ() {
        let g = FactorGraph::from_incidence(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 1]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cbs: Vec<Vec<Vec<Complex64>>> = (0..3)
            .map(|j| {
                (0..3)
                    .map(|k| {
                        (0..4)
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
        let cbs = CodebookSet::new(g, cbs).unwrap();
        let p = PnChannelParams::new(0.02, 0.2).unwrap();
        let e = mpnm(&cbs, &p, Enumeration::exact()).unwrap();
        let q = mpnm(&cbs, &p, Enumeration::pruned(3, 0)).unwrap();
        assert_eq!(e.mpnm, q.mpnm);
        assert_eq!(q.enumeration.pairs_covered, 64 * 63);
        assert!((e.pep_bound - q.pep_bound).abs() < 1e-12 * e.pep_bound);
        assert_eq!(e.med, q.med);
    }

    #[test]
    fn pruned_is_an_upper_bound_and_bound_is_close() {
        let cbs = random_set(5, 4);
        let p = PnChannelParams::for_codebooks(&cbs, 0.01, 10.0).unwrap();
        let e = mpnm(&cbs, &p, Enumeration::exact()).unwrap();
        let q1 = mpnm(&cbs, &p, Enumeration::pruned(1, 2000)).unwrap();
        assert!(q1.mpnm >= e.mpnm);
        let q = mpnm(&cbs, &p, Enumeration::pruned(2, 20_000)).unwrap();
        assert!(q.mpnm >= e.mpnm);
        let rel = (q.pep_bound - e.pep_bound).abs() / e.pep_bound;
        assert!(rel < 0.05, "{} vs {}", q.pep_bound, e.pep_bound);
    }

    #[test]
    fn awgn_bound_matches_euclidean_oracle() {
        let cbs = random_set(6, 2);
        let p = PnChannelParams::new(0.0, 0.3).unwrap();
        let r = mpnm(&cbs, &p, Enumeration::exact()).unwrap();
        // independent classical bound from codeword distances
        let words: Vec<Vec<Complex64>> = (0..64usize)
            .map(|g| {
                let labels: Vec<usize> = (0..6).map(|j| (g >> (5 - j)) & 1).collect();
                superimpose(&cbs, &labels).unwrap()
            })
            .collect();
        let mut sum = 0.0;
        let mut dmin = f64::INFINITY;
        for a in &words {
            for b in &words {
                if a == b {
                    continue;
                }
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
                dmin = dmin.min(d);
                sum += q_function(d / (2.0 * p.n0).sqrt());
            }
        }
        assert!((r.pep_bound - sum / 64.0).abs() < 1e-10 * r.pep_bound);
        assert!((r.mpnm - dmin / (2.0 * p.n0).sqrt()).abs() < 1e-9);
        assert!((r.med - dmin).abs() < 1e-12);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let cbs = random_set(7, 4);
        let p = PnChannelParams::new(0.03, 0.1).unwrap();
        let a = mpnm(&cbs, &p, Enumeration::pruned(2, 500)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| mpnm(&cbs, &p, Enumeration::pruned(2, 500)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn coincident_codewords_score_zero() {
        // two users on one resource with identical codebooks: swapping labels
        // gives the same superimposed symbol
        let g = FactorGraph::from_incidence(&[vec![1, 1]]).unwrap();
        let cb = vec![vec![c(1.0, 0.0), c(-1.0, 0.0)]];
        let cbs = CodebookSet::new(g, vec![cb.clone(), cb]).unwrap();
        let p = PnChannelParams::new(0.01, 0.1).unwrap();
        let r = mpnm(&cbs, &p, Enumeration::exact()).unwrap();
        assert_eq!(r.mpnm, 0.0);
        assert_eq!(r.med, 0.0);
        assert_eq!(r.enumeration.coincident_pairs, 2);
    }

    #[test]
    fn staged_search_matches_unpruned_walk() {
        for seed in 10..16 {
            let cbs = random_set(seed, 4);
            let phi = SuperimposedConstellation::new(&cbs);
            let plan = Plan::new(&phi);
            for &(sp, db) in &[(0.0, 8.0), (0.01, 10.0), (0.05, 14.0)] {
                let p = PnChannelParams::for_codebooks(&cbs, sp, db).unwrap();
                let tables = PairTables::new(&phi, &p).unwrap();
                let ctx = Context {
                    phi: &phi,
                    tables: &tables,
                    with_bound: false,
                };
                let full = walk(&ctx, &plan, 6, f64::INFINITY);
                assert_eq!(full.evaluated, 4096 * 4095);
                let fast = mpnm_only(&cbs, &p, Enumeration::exact()).unwrap();
                assert_eq!(full.min_q, fast.mpnm, "seed {seed} sp {sp}");
                assert!(fast.pep_bound.is_nan() && fast.med.is_nan());
            }
        }
    }

    #[test]
    fn exact_matches_brute_force_over_pair_stats() {
        let cbs = random_set(20, 2);
        let p = PnChannelParams::for_codebooks(&cbs, 0.02, 12.0).unwrap();
        let words: Vec<Vec<Complex64>> = (0..64usize)
            .map(|g| {
                let labels: Vec<usize> = (0..6).map(|j| (g >> (5 - j)) & 1).collect();
                superimpose(&cbs, &labels).unwrap()
            })
            .collect();
        let mut best = f64::INFINITY;
        for (a, w) in words.iter().enumerate() {
            for (b, wh) in words.iter().enumerate() {
                if a != b {
                    best = best.min(pair_stats(w, wh, &p).unwrap().q_arg);
                }
            }
        }
        let r = mpnm_only(&cbs, &p, Enumeration::exact()).unwrap();
        assert!((r.mpnm - best).abs() < 1e-9 * best, "{} vs {best}", r.mpnm);
    }
}
