//! Factor graphs describing how `J` users share `K` resources, and the
//! assignment of operator slots `ψ_i` to the edges of that graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular bipartite graph between `K` resource nodes and `J` user nodes.
///
/// Every user occupies exactly `N` resources and every resource carries
/// exactly `d_f` users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGraph {
    resources: usize,
    users: usize,
    /// `user_resources[j]` lists the resources of user `j` in ascending order.
    user_resources: Vec<Vec<usize>>,
    /// `resource_users[k]` lists the users on resource `k` in ascending order.
    resource_users: Vec<Vec<usize>>,
}

impl FactorGraph {
    /// Builds a graph from its `K × J` 0/1 incidence matrix (row = resource).
    pub fn from_incidence(rows: &[Vec<u8>]) -> Result<Self> {
        let resources = rows.len();
        if resources == 0 {
            return Err(Error::Structural("factor graph has no resources".into()));
        }
        let users = rows[0].len();
        if users == 0 {
            return Err(Error::Structural("factor graph has no users".into()));
        }
        let mut user_resources = vec![Vec::new(); users];
        let mut resource_users = vec![Vec::new(); resources];
        for (k, row) in rows.iter().enumerate() {
            if row.len() != users {
                return Err(Error::Structural(format!(
                    "incidence row {k} has {} entries, expected {users}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => {
                        user_resources[j].push(k);
                        resource_users[k].push(j);
                    }
                    other => {
                        return Err(Error::InputDomain(format!(
                            "incidence entry ({k},{j}) is {other}, expected 0 or 1"
                        )))
                    }
                }
            }
        }
        let n = user_resources[0].len();
        if let Some(j) = user_resources.iter().position(|r| r.len() != n || r.is_empty()) {
            return Err(Error::Structural(format!(
                "user {j} occupies {} resources; every user must occupy the same nonzero count ({n})",
                user_resources[j].len()
            )));
        }
        let df = resource_users[0].len();
        if let Some(k) = resource_users.iter().position(|u| u.len() != df || u.is_empty()) {
            return Err(Error::Structural(format!(
                "resource {k} carries {} users; every resource must carry the same nonzero count ({df})",
                resource_users[k].len()
            )));
        }
        Ok(Self {
            resources,
            users,
            user_resources,
            resource_users,
        })
    }

    /// The `K = 4`, `J = 6` graph with `N = 2`, `d_f = 3` (150% overload).
    pub fn preset_4x6() -> Self {
        Self::from_incidence(&PRESET_4X6.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .expect("preset is regular")
    }

    /// `K`
    pub fn resources(&self) -> usize {
        self.resources
    }

    /// `J`
    pub fn users(&self) -> usize {
        self.users
    }

    /// `N`, the number of nonzero entries per codeword.
    pub fn user_degree(&self) -> usize {
        self.user_resources[0].len()
    }

    /// `d_f`, the number of users colliding on each resource.
    pub fn resource_degree(&self) -> usize {
        self.resource_users[0].len()
    }

    /// Overloading factor `λ = J / K`.
    pub fn overload(&self) -> f64 {
        self.users as f64 / self.resources as f64
    }

    pub fn user_resources(&self, user: usize) -> &[usize] {
        &self.user_resources[user]
    }

    pub fn resource_users(&self, resource: usize) -> &[usize] {
        &self.resource_users[resource]
    }

    pub fn is_edge(&self, resource: usize, user: usize) -> bool {
        self.resource_users[resource].contains(&user)
    }

    /// Row-major `K × J` 0/1 incidence matrix.
    pub fn incidence(&self) -> Vec<Vec<u8>> {
        (0..self.resources)
            .map(|k| {
                (0..self.users)
                    .map(|j| u8::from(self.is_edge(k, j)))
                    .collect()
            })
            .collect()
    }
}

const PRESET_4X6: [[u8; 6]; 4] = [
    [1, 0, 1, 0, 1, 0],
    [0, 1, 1, 0, 0, 1],
    [1, 0, 0, 1, 0, 1],
    [0, 1, 0, 1, 1, 0],
];

/// Assignment of operator slots to graph edges: entry `[j][n]` is the slot
/// index `i` (0-based, `< d_f`) of `ψ_i` that scales dimension `n` of the
/// mother constellation for user `j`. Dimension `n` of user `j` lands on
/// `user_resources(j)[n]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMap {
    slots: Vec<Vec<usize>>,
}

impl SlotMap {
    /// Validates a slot table against a graph: every user lists one slot per
    /// dimension, slots lie in `[0, d_f)`, and users colliding on a resource
    /// use distinct slots there.
    pub fn new(graph: &FactorGraph, slots: Vec<Vec<usize>>) -> Result<Self> {
        let df = graph.resource_degree();
        if slots.len() != graph.users() {
            return Err(Error::Structural(format!(
                "slot map lists {} users, graph has {}",
                slots.len(),
                graph.users()
            )));
        }
        for (j, row) in slots.iter().enumerate() {
            if row.len() != graph.user_degree() {
                return Err(Error::Structural(format!(
                    "slot map user {j} has {} dimensions, graph user degree is {}",
                    row.len(),
                    graph.user_degree()
                )));
            }
            if let Some(&s) = row.iter().find(|&&s| s >= df) {
                return Err(Error::InputDomain(format!(
                    "slot {s} of user {j} is outside [0, {df})"
                )));
            }
        }
        let map = Self { slots };
        for k in 0..graph.resources() {
            let mut seen = vec![false; df];
            for &j in graph.resource_users(k) {
                let s = map.slot_on_resource(graph, j, k);
                if std::mem::replace(&mut seen[s], true) {
                    return Err(Error::Structural(format!(
                        "slot {s} is used twice on resource {k}"
                    )));
                }
            }
        }
        Ok(map)
    }

    /// The placement printed alongside the 4×6 preset: resource 1 carries
    /// users {1,3,5} with slots (ψ1, ψ2, ψ3), and so on.
    pub fn preset_4x6() -> Self {
        // V1 = [ψ1 . ; . . ; . ψ3 ; . .], V2 = [. . ; ψ1 . ; . . ; . ψ3], ...
        let slots = vec![
            vec![0, 2],
            vec![0, 2],
            vec![1, 1],
            vec![1, 1],
            vec![2, 0],
            vec![2, 0],
        ];
        Self::new(&FactorGraph::preset_4x6(), slots).expect("preset slot map is valid")
    }

    /// Proper edge colouring of a regular bipartite graph with `d_f` colours
    /// (König's theorem guarantees one exists since `N ≤ d_f`). Used when a
    /// user-supplied graph comes without a slot placement.
    pub fn edge_coloring(graph: &FactorGraph) -> Result<Self> {
        let df = graph.resource_degree();
        if graph.user_degree() > df {
            return Err(Error::Structural(format!(
                "user degree {} exceeds resource degree {df}; cannot colour with d_f slots",
                graph.user_degree()
            )));
        }
        let (nu, nr) = (graph.users(), graph.resources());
        // at_user[j][c] = resource joined to user j by colour c
        let mut at_user = vec![vec![None::<usize>; df]; nu];
        let mut at_res = vec![vec![None::<usize>; df]; nr];
        for j in 0..nu {
            for &k in graph.user_resources(j) {
                let a = (0..df).find(|&c| at_user[j][c].is_none()).expect("free colour");
                let b = (0..df).find(|&c| at_res[k][c].is_none()).expect("free colour");
                if at_res[k][a].is_some() {
                    // Swap colours a/b along the alternating path starting at k.
                    let mut path = Vec::new();
                    let mut node = Node::Res(k);
                    let mut colour = a;
                    loop {
                        let next = match node {
                            Node::Res(r) => at_res[r][colour].map(Node::User),
                            Node::User(u) => at_user[u][colour].map(Node::Res),
                        };
                        let Some(next) = next else { break };
                        path.push((node, next, colour));
                        node = next;
                        colour = if colour == a { b } else { a };
                    }
                    for &(from, to, c) in &path {
                        let (u, r) = match (from, to) {
                            (Node::User(u), Node::Res(r)) | (Node::Res(r), Node::User(u)) => {
                                (u, r)
                            }
                            _ => unreachable!("bipartite path"),
                        };
                        if at_user[u][c] == Some(r) {
                            at_user[u][c] = None;
                        }
                        if at_res[r][c] == Some(u) {
                            at_res[r][c] = None;
                        }
                    }
                    for &(from, to, c) in &path {
                        let (u, r) = match (from, to) {
                            (Node::User(u), Node::Res(r)) | (Node::Res(r), Node::User(u)) => {
                                (u, r)
                            }
                            _ => unreachable!("bipartite path"),
                        };
                        let flipped = if c == a { b } else { a };
                        at_user[u][flipped] = Some(r);
                        at_res[r][flipped] = Some(u);
                    }
                }
                at_user[j][a] = Some(k);
                at_res[k][a] = Some(j);
            }
        }
        let slots = (0..nu)
            .map(|j| {
                graph
                    .user_resources(j)
                    .iter()
                    .map(|&k| {
                        (0..df)
                            .find(|&c| at_user[j][c] == Some(k))
                            .expect("every edge coloured")
                    })
                    .collect()
            })
            .collect();
        Self::new(graph, slots)
    }

    pub fn slot(&self, user: usize, dim: usize) -> usize {
        self.slots[user][dim]
    }

    pub fn slot_on_resource(&self, graph: &FactorGraph, user: usize, resource: usize) -> usize {
        let dim = graph
            .user_resources(user)
            .iter()
            .position(|&k| k == resource)
            .expect("user occupies resource");
        self.slots[user][dim]
    }

    pub fn as_rows(&self) -> &[Vec<usize>] {
        &self.slots
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    User(usize),
    Res(usize),
}
