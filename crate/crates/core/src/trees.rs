//! Gallavotti–Nicolò trees: enumeration, power counting, reduced scale sums
//! and the structural identities of the tree expansion.
//!
//! Trees are stored with every trivial vertex explicit, so a vertex always
//! sits one scale above its parent. Vertex 0 is the root at scale `h`,
//! vertex 1 is `v0` at `h + 1`. Endpoints carry `|I_v| = 4` (interaction) or
//! `|I_v| = 2` (`ν` counterterm) fields and sit at scales `≤ 1`; all other
//! vertices sit at scales `≤ 0`.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::multiscale::Regime;

pub const MAX_ENDPOINTS: usize = 6;
pub const MIN_ROOT_SCALE: i32 = -8;
/// Largest number of labeled trees or assignments materialized at once.
pub const ENUMERATION_CAP: u128 = 2_000_000;
/// Deepest root scale accepted by the dynamic-programming sums.
pub const MIN_SUM_SCALE: i32 = -64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Interaction,
    NuCounterterm,
}

impl EndpointKind {
    pub fn field_count(&self) -> i64 {
        match self {
            EndpointKind::Interaction => 4,
            EndpointKind::NuCounterterm => 2,
        }
    }
}

/// Which endpoint kinds a sum ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointSet {
    InteractionOnly,
    /// Both kinds, at least one interaction endpoint per tree.
    WithCounterterms,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreeVertex {
    pub scale: i32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub endpoint: Option<EndpointKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GNTree {
    pub h: i32,
    pub vertices: Vec<TreeVertex>,
}

impl GNTree {
    pub fn is_endpoint(&self, v: usize) -> bool {
        self.vertices[v].endpoint.is_some()
    }

    pub fn endpoints(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(|&v| self.is_endpoint(v))
    }

    /// Non-endpoint vertices other than the root.
    pub fn inner_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.vertices.len()).filter(|&v| !self.is_endpoint(v))
    }

    pub fn order(&self) -> usize {
        self.endpoints().count()
    }

    /// `s_v`, the number of vertices immediately following `v`.
    pub fn branching(&self, v: usize) -> usize {
        self.vertices[v].children.len()
    }

    /// `n(v)`: endpoints following `v` (1 for an endpoint).
    pub fn endpoints_below(&self, v: usize) -> i64 {
        match self.vertices[v].endpoint {
            Some(_) => 1,
            None => self.vertices[v].children.iter().map(|&c| self.endpoints_below(c)).sum(),
        }
    }

    /// `|I_v|`: fields of the endpoints following `v`.
    pub fn fields_below(&self, v: usize) -> i64 {
        match self.vertices[v].endpoint {
            Some(k) => k.field_count(),
            None => self.vertices[v].children.iter().map(|&c| self.fields_below(c)).sum(),
        }
    }

    pub fn has_interaction_endpoint(&self) -> bool {
        self.vertices.iter().any(|v| v.endpoint == Some(EndpointKind::Interaction))
    }

    /// Checks the defining properties of a labeled tree.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InconsistentAssignment(m));
        if self.vertices.len() < 3 {
            return bad("a tree needs a root, v0 and an endpoint".into());
        }
        let root = &self.vertices[0];
        if root.parent.is_some() || root.children != [1] || root.scale != self.h || root.endpoint.is_some() {
            return bad("root must be a non-endpoint at scale h with the single child v0".into());
        }
        if self.is_endpoint(1) {
            return bad("v0 cannot be an endpoint".into());
        }
        for (i, v) in self.vertices.iter().enumerate().skip(1) {
            let Some(p) = v.parent else { return bad(format!("vertex {i} has no parent")) };
            if !self.vertices[p].children.contains(&i) {
                return bad(format!("vertex {i} missing from its parent's children"));
            }
            if v.scale != self.vertices[p].scale + 1 {
                return bad(format!("vertex {i}: scale {} does not follow parent scale {}", v.scale, self.vertices[p].scale));
            }
            match v.endpoint {
                Some(_) if !v.children.is_empty() => return bad(format!("endpoint {i} has children")),
                Some(_) if v.scale > 1 => return bad(format!("endpoint {i} above scale 1")),
                None if v.children.is_empty() => return bad(format!("vertex {i} is a leaf but not an endpoint")),
                None if v.scale > 0 => return bad(format!("vertex {i} above scale 0")),
                _ => {}
            }
        }
        Ok(())
    }

    /// Canonical string of the unlabeled tree: trivial vertices contracted,
    /// endpoints written `e`, branching points as parenthesized child lists.
    pub fn shape(&self) -> String {
        fn walk(t: &GNTree, mut v: usize, out: &mut String) {
            while t.vertices[v].endpoint.is_none() && t.vertices[v].children.len() == 1 {
                v = t.vertices[v].children[0];
            }
            if t.vertices[v].endpoint.is_some() {
                out.push('e');
                return;
            }
            out.push('(');
            for &c in &t.vertices[v].children {
                walk(t, c, out);
            }
            out.push(')');
        }
        let mut s = String::new();
        walk(self, 1, &mut s);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Configuration(e.to_string()))
    }
}

/// Nested form used while building trees.
#[derive(Debug, Clone)]
enum Node {
    End(EndpointKind),
    Inner(Vec<Node>),
}

fn flatten(node: &Node, scale: i32, parent: usize, out: &mut Vec<TreeVertex>) -> usize {
    let id = out.len();
    out.push(TreeVertex { scale, parent: Some(parent), children: Vec::new(), endpoint: None });
    match node {
        Node::End(k) => out[id].endpoint = Some(*k),
        Node::Inner(children) => {
            for c in children {
                let cid = flatten(c, scale + 1, id, out);
                out[id].children.push(cid);
            }
        }
    }
    id
}

fn compositions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for mut rest in compositions(n - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn check_size(n: usize, h: i32) -> Result<()> {
    if n == 0 || n > MAX_ENDPOINTS {
        return Err(Error::SizeLimit(format!("n = {n} outside 1..={MAX_ENDPOINTS}")));
    }
    if h < MIN_ROOT_SCALE || h > -1 {
        return Err(Error::SizeLimit(format!("root scale {h} outside [{MIN_ROOT_SCALE}, -1]")));
    }
    Ok(())
}

/// Number of labeled trees with `n` interaction endpoints and root scale `h`.
pub fn count_labeled_trees(n: usize, h: i32) -> Result<u128> {
    check_size(n, h)?;
    // inner[k][m]: subtrees hanging from a non-endpoint vertex at scale k
    let mut memo: HashMap<(i32, usize), u128> = HashMap::new();
    fn inner(k: i32, m: usize, memo: &mut HashMap<(i32, usize), u128>) -> u128 {
        if let Some(&v) = memo.get(&(k, m)) {
            return v;
        }
        let mut total = 0u128;
        for comp in compositions(m) {
            let mut prod = 1u128;
            for &mi in &comp {
                let mut c = if mi == 1 && k < 1 { 1 } else { 0 };
                if k < 0 {
                    c += inner(k + 1, mi, memo);
                }
                prod *= c;
            }
            total += prod;
        }
        memo.insert((k, m), total);
        total
    }
    Ok(inner(h + 1, n, &mut memo))
}

/// All labeled trees with `n` interaction endpoints and root scale `h`, in a
/// fixed canonical order.
pub fn enumerate_trees(n: usize, h: i32) -> Result<Vec<GNTree>> {
    let count = count_labeled_trees(n, h)?;
    if count > ENUMERATION_CAP {
        return Err(Error::SizeLimit(format!("{count} labeled trees exceed the cap {ENUMERATION_CAP}")));
    }
    fn build(k: i32, m: usize, memo: &mut HashMap<(i32, usize), Vec<Node>>) -> Vec<Node> {
        if let Some(v) = memo.get(&(k, m)) {
            return v.clone();
        }
        let mut out = Vec::new();
        for comp in compositions(m) {
            let options: Vec<Vec<Node>> = comp
                .iter()
                .map(|&mi| {
                    let mut o = Vec::new();
                    if mi == 1 && k < 1 {
                        o.push(Node::End(EndpointKind::Interaction));
                    }
                    if k < 0 {
                        o.extend(build(k + 1, mi, memo));
                    }
                    o
                })
                .collect();
            let mut acc: Vec<Vec<Node>> = vec![Vec::new()];
            for opts in &options {
                let mut next = Vec::with_capacity(acc.len() * opts.len());
                for prefix in &acc {
                    for o in opts {
                        let mut p = prefix.clone();
                        p.push(o.clone());
                        next.push(p);
                    }
                }
                acc = next;
            }
            out.extend(acc.into_iter().map(Node::Inner));
        }
        memo.insert((k, m), out.clone());
        out
    }
    let mut memo = HashMap::new();
    let nodes = build(h + 1, n, &mut memo);
    Ok(nodes
        .iter()
        .map(|node| {
            let mut vertices = vec![TreeVertex { scale: h, parent: None, children: vec![1], endpoint: None }];
            flatten(node, h + 1, 0, &mut vertices);
            GNTree { h, vertices }
        })
        .collect())
}

/// The `2^n` endpoint-kind labelings of a tree, in canonical order.
pub fn with_endpoint_kinds(tree: &GNTree, set: EndpointSet) -> Vec<GNTree> {
    let eps: Vec<usize> = tree.endpoints().collect();
    let kinds: &[EndpointKind] = match set {
        EndpointSet::InteractionOnly => &[EndpointKind::Interaction],
        EndpointSet::WithCounterterms => &[EndpointKind::Interaction, EndpointKind::NuCounterterm],
    };
    let mut out = Vec::new();
    let total = kinds.len().pow(eps.len() as u32);
    for code in 0..total {
        let mut t = tree.clone();
        let mut c = code;
        for &e in &eps {
            t.vertices[e].endpoint = Some(kinds[c % kinds.len()]);
            c /= kinds.len();
        }
        if t.has_interaction_endpoint() {
            out.push(t);
        }
    }
    out
}

/// Distinct unlabeled shapes with `n` endpoints.
pub fn unlabeled_shapes(n: usize) -> Result<Vec<String>> {
    // the deepest root scale gives every shape enough room
    let h = -(n as i32) - 1;
    let mut shapes: Vec<String> = enumerate_trees(n, h.max(MIN_ROOT_SCALE))?.iter().map(GNTree::shape).collect();
    shapes.sort();
    shapes.dedup();
    Ok(shapes)
}

/// External-field counts `|P_v|` for every vertex (index 0 unused, endpoints
/// equal to `|I_v|`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldAssignment {
    pub sizes: Vec<i64>,
}

impl FieldAssignment {
    pub fn external(&self) -> i64 {
        self.sizes[1]
    }
}

fn children_sum(tree: &GNTree, a: &FieldAssignment, v: usize) -> i64 {
    tree.vertices[v].children.iter().map(|&c| a.sizes[c]).sum()
}

/// Checks containment, parity and connectivity of an assignment.
pub fn validate_assignment(tree: &GNTree, a: &FieldAssignment) -> Result<()> {
    let bad = |m: String| Err(Error::InconsistentAssignment(m));
    if a.sizes.len() != tree.vertices.len() {
        return bad(format!("{} sizes for {} vertices", a.sizes.len(), tree.vertices.len()));
    }
    for v in tree.endpoints() {
        let i = tree.fields_below(v);
        if a.sizes[v] != i {
            return bad(format!("endpoint {v}: |P_v| = {} but |I_v| = {i}", a.sizes[v]));
        }
    }
    for v in tree.inner_vertices() {
        let p = a.sizes[v];
        let contracted = children_sum(tree, a, v) - p;
        let s = tree.branching(v) as i64;
        if p < 2 || p % 2 != 0 {
            return bad(format!("vertex {v}: |P_v| = {p} must be even and at least 2"));
        }
        if contracted < 2 * (s - 1) || contracted % 2 != 0 {
            return bad(format!("vertex {v}: {contracted} contracted fields cannot connect {s} clusters"));
        }
        if p > tree.fields_below(v) {
            return bad(format!("vertex {v}: |P_v| = {p} exceeds |I_v|"));
        }
    }
    Ok(())
}

/// All admissible assignments with `|P_{v0}| = l`.
pub fn enumerate_assignments(tree: &GNTree, l: i64) -> Result<Vec<FieldAssignment>> {
    tree.validate()?;
    // options[v]: list of partial assignments of the subtree at v
    fn walk(t: &GNTree, v: usize, budget: &mut u128) -> Result<Vec<(i64, Vec<(usize, i64)>)>> {
        if let Some(k) = t.vertices[v].endpoint {
            return Ok(vec![(k.field_count(), vec![(v, k.field_count())])]);
        }
        let mut combos: Vec<(i64, Vec<(usize, i64)>)> = vec![(0, Vec::new())];
        for &c in &t.vertices[v].children {
            let sub = walk(t, c, budget)?;
            let mut next = Vec::new();
            for (sum, parts) in &combos {
                for (pc, cparts) in &sub {
                    let mut p = parts.clone();
                    p.extend_from_slice(cparts);
                    next.push((sum + pc, p));
                }
            }
            combos = next;
        }
        let s = t.branching(v) as i64;
        let mut out = Vec::new();
        for (sum, parts) in combos {
            let mut p = 2;
            while p <= sum - 2 * (s - 1) {
                let mut q = parts.clone();
                q.push((v, p));
                out.push((p, q));
                p += 2;
            }
        }
        *budget = budget.saturating_add(out.len() as u128);
        if *budget > ENUMERATION_CAP {
            return Err(Error::SizeLimit(format!("more than {ENUMERATION_CAP} partial assignments")));
        }
        Ok(out)
    }
    let mut budget = 0u128;
    let all = walk(tree, 1, &mut budget)?;
    Ok(all
        .into_iter()
        .filter(|(p, _)| *p == l)
        .map(|(_, parts)| {
            let mut sizes = vec![0; tree.vertices.len()];
            for (v, p) in parts {
                sizes[v] = p;
            }
            sizes[0] = l;
            FieldAssignment { sizes }
        })
        .collect())
}

fn q(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

/// Power counting of one regime. `h_star` enters the regime-2 endpoint factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PowerCounting {
    pub regime: Regime,
    pub h_star: i32,
}

impl PowerCounting {
    pub fn lattice() -> Self {
        PowerCounting { regime: Regime::Lattice, h_star: 0 }
    }

    pub fn relativistic(h_star: i32) -> Self {
        PowerCounting { regime: Regime::Relativistic, h_star }
    }

    pub fn dimension(&self, l: i64) -> Result<Rational64> {
        scaling_dimension(self.regime, l)
    }

    /// Gain of the renormalization on vertices with `|P_v| = 2`.
    pub fn z(&self, l: i64) -> Rational64 {
        match (self.regime, l) {
            (Regime::Lattice, 2) => q(3, 2),
            (Regime::Relativistic, 2) => q(2, 1),
            _ => Rational64::zero(),
        }
    }

    /// Decay rate `z(P) - D(P)` of a non-endpoint vertex.
    pub fn vertex_rate(&self, p: i64) -> Result<Rational64> {
        Ok(self.z(p) - self.dimension(p)?)
    }
}

/// Scaling dimension `D(l)`: `7/2 - 5l/4` (regime 1) or `4 - 3l/2` (regime 2).
pub fn scaling_dimension(regime: Regime, l: i64) -> Result<Rational64> {
    if l < 2 || l % 2 != 0 {
        return Err(Error::InvalidParams(format!("field count l = {l} must be even and ≥ 2")));
    }
    Ok(match regime {
        Regime::Lattice => q(7, 2) - q(5 * l, 4),
        Regime::Relativistic => q(4, 1) - q(3 * l, 2),
    })
}

fn rational_str(r: &Rational64) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Exponents (base 2, except `velocity`) of the dimensional bound of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeBound {
    /// `h D(l)`.
    pub dimensional: Rational64,
    /// `-Σ_v (h_v - h_v') (z(P_v) - D(P_v))` over non-endpoint vertices.
    pub vertices: Rational64,
    /// Endpoint factors.
    pub endpoints: Rational64,
    pub total: Rational64,
    /// Net power of `v3,0` (regime 2; zero in regime 1).
    pub velocity: Rational64,
}

impl Serialize for TreeBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("TreeBound", 5)?;
        st.serialize_field("dimensional", &rational_str(&self.dimensional))?;
        st.serialize_field("vertices", &rational_str(&self.vertices))?;
        st.serialize_field("endpoints", &rational_str(&self.endpoints))?;
        st.serialize_field("total", &rational_str(&self.total))?;
        st.serialize_field("velocity", &rational_str(&self.velocity))?;
        st.end()
    }
}

/// Exact log₂ of the dimensional product of a tree with a field assignment.
pub fn tree_bound(tree: &GNTree, a: &FieldAssignment, pc: &PowerCounting) -> Result<TreeBound> {
    tree.validate()?;
    validate_assignment(tree, a)?;
    let l = a.external();
    let h = tree.h as i64;
    let dimensional = pc.dimension(l)? * h;
    let mut vertices = Rational64::zero();
    let mut velocity = Rational64::zero();
    for v in tree.inner_vertices() {
        // explicit trivial vertices: h_v - h_v' = 1
        vertices -= pc.vertex_rate(a.sizes[v])?;
        let s = tree.branching(v) as i64;
        velocity -= q(children_sum(tree, a, v) - a.sizes[v], 2) - (s - 1);
    }
    let mut endpoints = Rational64::zero();
    for e in tree.endpoints() {
        let i = tree.fields_below(e);
        let hp = tree.vertices[tree.vertices[e].parent.expect("endpoint parent")].scale as i64;
        endpoints += match (pc.regime, i) {
            // ν endpoints: the counterterm's 2^{h_v'} cancels the dimensional factor
            (_, 2) => Rational64::zero(),
            (Regime::Lattice, _) => (q(5 * i, 4) - q(7, 2)) * hp,
            (Regime::Relativistic, _) => (q(3 * i, 2) - 4) * (hp - pc.h_star as i64),
        };
        velocity += q(i, 2) - 1;
    }
    if pc.regime == Regime::Lattice {
        velocity = Rational64::zero();
    }
    Ok(TreeBound { dimensional, vertices, endpoints, total: dimensional + vertices + endpoints, velocity })
}

/// Both sides of each structural identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentityReport {
    pub checks: Vec<(String, i64, i64)>,
}

impl IdentityReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|(_, a, b)| a == b)
    }
}

/// Verifies the contraction-count, branching and telescoping identities on a
/// tree by exact integer arithmetic; fails on the first violated one.
pub fn structural_identities_check(tree: &GNTree, a: &FieldAssignment) -> Result<IdentityReport> {
    tree.validate()?;
    validate_assignment(tree, a)?;
    let h = tree.h as i64;
    let n = tree.order() as i64;
    let scale = |v: usize| tree.vertices[v].scale as i64;
    let parent_scale = |v: usize| scale(tree.vertices[v].parent.expect("parent"));
    let inner: Vec<usize> = tree.inner_vertices().collect();
    let contracted = |v: usize| children_sum(tree, a, v) - a.sizes[v];
    let s1 = |v: usize| tree.branching(v) as i64 - 1;
    let i_v0 = tree.fields_below(1);
    let mut checks = Vec::new();
    checks.push(("contracted fields".to_string(), inner.iter().map(|&v| contracted(v)).sum(), i_v0 - a.sizes[1]));
    checks.push(("branching".to_string(), inner.iter().map(|&v| s1(v)).sum(), n - 1));
    checks.push((
        "scaled contracted fields".to_string(),
        inner.iter().map(|&v| (scale(v) - h) * contracted(v)).sum(),
        inner.iter().map(|&v| (scale(v) - parent_scale(v)) * (tree.fields_below(v) - a.sizes[v])).sum(),
    ));
    checks.push((
        "scaled branching".to_string(),
        inner.iter().map(|&v| (scale(v) - h) * s1(v)).sum(),
        inner.iter().map(|&v| (scale(v) - parent_scale(v)) * (tree.endpoints_below(v) - 1)).sum(),
    ));
    checks.push((
        "endpoint telescoping".to_string(),
        h * n + inner.iter().map(|&v| (scale(v) - parent_scale(v)) * tree.endpoints_below(v)).sum::<i64>(),
        tree.endpoints().map(parent_scale).sum(),
    ));
    checks.push((
        "field telescoping".to_string(),
        h * i_v0 + inner.iter().map(|&v| (scale(v) - parent_scale(v)) * tree.fields_below(v)).sum::<i64>(),
        tree.endpoints().map(|e| parent_scale(e) * tree.fields_below(e)).sum(),
    ));
    if let Some((name, lhs, rhs)) = checks.iter().find(|(_, x, y)| x != y) {
        return Err(Error::IdentityViolated(format!("{name}: {lhs} != {rhs}")));
    }
    Ok(IdentityReport { checks })
}

fn pow2(r: Rational64) -> f64 {
    2f64.powf(r.to_f64().expect("finite rational"))
}

fn weight_table(pc: &PowerCounting, max_fields: i64) -> Result<Vec<f64>> {
    let mut w = vec![0.0; max_fields as usize + 1];
    let mut p = 2;
    while p <= max_fields {
        w[p as usize] = pow2(-pc.vertex_rate(p)?);
        p += 2;
    }
    Ok(w)
}

/// Reduced weight `Π_v 2^{-(z(P_v) - D(P_v))}` over non-endpoint vertices of
/// one tree and assignment. Endpoint factors are at most 1 and are dropped.
pub fn reduced_weight(tree: &GNTree, a: &FieldAssignment, pc: &PowerCounting) -> Result<f64> {
    validate_assignment(tree, a)?;
    let mut log = Rational64::zero();
    for v in tree.inner_vertices() {
        log -= pc.vertex_rate(a.sizes[v])?;
    }
    Ok(pow2(log))
}

/// `Σ_trees Σ_P` of the reduced weight for `n` endpoints, root scale `h` and
/// `|P_{v0}| = l`, by dynamic programming over scales.
pub fn scale_sum(n: usize, l: i64, h: i32, pc: &PowerCounting, set: EndpointSet) -> Result<f64> {
    check_size(n, h.max(MIN_ROOT_SCALE))?;
    if h < MIN_SUM_SCALE {
        return Err(Error::SizeLimit(format!("root scale {h} below {MIN_SUM_SCALE}")));
    }
    scaling_dimension(pc.regime, l)?;
    let max_fields = 4 * n as i64;
    let w = weight_table(pc, max_fields)?;
    let nf = max_fields as usize + 1;
    // table index: [n_endpoints][fields][has_interaction]
    type Table = Vec<Vec<[f64; 2]>>;
    let empty = || -> Table { vec![vec![[0.0; 2]; nf]; n + 1] };
    let endpoint_table = || -> Table {
        let mut t = empty();
        t[1][4][1] = 1.0;
        if set == EndpointSet::WithCounterterms {
            t[1][2][0] = 1.0;
        }
        t
    };
    // vertex[k]: subtrees at a non-endpoint vertex of scale k, by (m, |P_v|, flag)
    let mut above: Option<Table> = None;
    let mut k = 0;
    loop {
        // children at scale k + 1
        let mut child = if k < 1 { endpoint_table() } else { empty() };
        if let Some(t) = &above {
            for m in 0..=n {
                for p in 0..nf {
                    for f in 0..2 {
                        child[m][p][f] += t[m][p][f];
                    }
                }
            }
        }
        // ordered sequences of s children: seq[s][m][sum][flag]
        let mut current = empty();
        let mut seq = child.clone();
        for s in 1..=n {
            for m in 1..=n {
                for sum in 0..nf {
                    for f in 0..2 {
                        let val = seq[m][sum][f];
                        if val == 0.0 {
                            continue;
                        }
                        let mut p = 2usize;
                        while p as i64 <= sum as i64 - 2 * (s as i64 - 1) {
                            current[m][p][f] += val * w[p];
                            p += 2;
                        }
                    }
                }
            }
            if s == n {
                break;
            }
            let mut next = empty();
            for m1 in 1..=n {
                for s1 in 0..nf {
                    for f1 in 0..2 {
                        let a = seq[m1][s1][f1];
                        if a == 0.0 {
                            continue;
                        }
                        for m2 in 1..=(n - m1) {
                            for s2 in 0..(nf - s1) {
                                for f2 in 0..2 {
                                    let b = child[m2][s2][f2];
                                    if b != 0.0 {
                                        next[m1 + m2][s1 + s2][f1 | f2] += a * b;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            seq = next;
        }
        if k == h + 1 {
            return Ok(if (l as usize) < nf { current[n][l as usize][1] } else { 0.0 });
        }
        above = Some(current);
        k -= 1;
    }
}

/// The same sum by explicit enumeration of trees, kinds and assignments.
pub fn scale_sum_explicit(n: usize, l: i64, h: i32, pc: &PowerCounting, set: EndpointSet) -> Result<f64> {
    let mut total = 0.0;
    for t in enumerate_trees(n, h)? {
        for tk in with_endpoint_kinds(&t, set) {
            for a in enumerate_assignments(&tk, l)? {
                total += reduced_weight(&tk, &a, pc)?;
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSumRow {
    pub n: usize,
    /// Sum with root scale at the deep floor.
    pub sum: f64,
    /// Sum with root scale at the shallow floor.
    pub sum_shallow: f64,
    pub floor_change: f64,
    /// Growth constant of `K C^n`: `sum_n / sum_{n-1}` (`sum_1` for `n = 1`).
    pub fitted_c: f64,
    /// `sum^(1/n)`, the constant with `K = 1`.
    pub root_c: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSumReport {
    pub regime: Regime,
    pub l: i64,
    pub endpoints: EndpointSet,
    pub floors: (i32, i32),
    /// Multiplies every sum: `v3,0^(l/2 - 1)` in regime 2, 1 in regime 1.
    pub velocity_factor: f64,
    pub rows: Vec<ScaleSumRow>,
    /// `max C / min C` of the growth ratios over `n ≥ 2`.
    pub c_spread: f64,
    pub max_floor_change: f64,
}

/// Scale sums for `n = 1..=n_max` at floors `shallow` and `deep`.
pub fn scale_sum_audit(
    n_max: usize,
    l: i64,
    pc: &PowerCounting,
    set: EndpointSet,
    floors: (i32, i32),
    v30: f64,
) -> Result<ScaleSumReport> {
    let (shallow, deep) = floors;
    if deep > shallow {
        return Err(Error::InvalidParams(format!("deep floor {deep} above shallow floor {shallow}")));
    }
    let velocity_factor = match pc.regime {
        Regime::Lattice => 1.0,
        Regime::Relativistic => {
            if !(v30 > 0.0) {
                return Err(Error::InvalidParams(format!("v3,0 = {v30} must be positive")));
            }
            v30.powf(l as f64 / 2.0 - 1.0)
        }
    };
    let mut rows: Vec<ScaleSumRow> = Vec::new();
    for n in 1..=n_max {
        let sum = velocity_factor * scale_sum(n, l, deep, pc, set)?;
        let sum_shallow = velocity_factor * scale_sum(n, l, shallow, pc, set)?;
        let floor_change = if sum > 0.0 { (sum - sum_shallow).abs() / sum } else { 0.0 };
        let fitted_c = match rows.last() {
            Some(prev) if prev.sum > 0.0 => sum / prev.sum,
            _ => sum,
        };
        rows.push(ScaleSumRow { n, sum, sum_shallow, floor_change, fitted_c, root_c: sum.powf(1.0 / n as f64) });
    }
    let cs: Vec<f64> = rows.iter().filter(|r| r.n >= 2 && r.sum > 0.0).map(|r| r.fitted_c).collect();
    let c_spread = if cs.is_empty() {
        1.0
    } else {
        cs.iter().cloned().fold(f64::MIN, f64::max) / cs.iter().cloned().fold(f64::MAX, f64::min)
    };
    let max_floor_change = rows.iter().map(|r| r.floor_change).fold(0.0, f64::max);
    Ok(ScaleSumReport { regime: pc.regime, l, endpoints: set, floors, velocity_factor, rows, c_spread, max_floor_change })
}

/// `max` over shapes with `n` interaction endpoints of
/// `Σ_{p} Π_v 2^{-p_v/8}`, where `p_v` ranges over integers `0 ≤ p_v ≤ Σ_i p_{v_i}`
/// on branching points and `p = 4` on endpoints.
pub fn combinatorial_inequality(n: usize) -> Result<f64> {
    fn walk(shape: &[u8], pos: &mut usize) -> Vec<f64> {
        // returns weights indexed by p of the subtree at this node
        if shape[*pos] == b'e' {
            *pos += 1;
            let mut v = vec![0.0; 5];
            v[4] = 1.0;
            return v;
        }
        *pos += 1; // '('
        let mut acc = vec![1.0];
        while shape[*pos] != b')' {
            let sub = walk(shape, pos);
            let mut next = vec![0.0; acc.len() + sub.len() - 1];
            for (i, a) in acc.iter().enumerate() {
                for (j, b) in sub.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            acc = next;
        }
        *pos += 1; // ')'
        // p_v ≤ Σ p_{v_i}
        let mut out = vec![0.0; acc.len()];
        for (sum, weight) in acc.iter().enumerate() {
            for (p, slot) in out.iter_mut().enumerate().take(sum + 1) {
                *slot += weight * 2f64.powf(-(p as f64) / 8.0);
            }
        }
        out
    }
    let mut best = 0.0f64;
    for shape in unlabeled_shapes(n)? {
        let mut pos = 0;
        let total: f64 = if shape == "e" { 1.0 } else { walk(shape.as_bytes(), &mut pos).iter().sum() };
        best = best.max(total);
    }
    Ok(best)
}

/// Tab-separated summary of a report, for logs.
pub fn format_report(r: &ScaleSumReport) -> String {
    let mut s = String::new();
    for row in &r.rows {
        let _ = writeln!(s, "n={}\tsum={:.6e}\tfloor_change={:.3e}\tC={:.4}", row.n, row.sum, row.floor_change, row.fitted_c);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        assert_eq!(scaling_dimension(Regime::Lattice, 2).unwrap(), q(1, 1));
        assert_eq!(scaling_dimension(Regime::Lattice, 4).unwrap(), q(-3, 2));
        assert_eq!(scaling_dimension(Regime::Lattice, 6).unwrap(), q(-4, 1));
        assert_eq!(scaling_dimension(Regime::Relativistic, 2).unwrap(), q(1, 1));
        assert_eq!(scaling_dimension(Regime::Relativistic, 4).unwrap(), q(-2, 1));
        assert!(scaling_dimension(Regime::Lattice, 3).is_err());
    }

    #[test]
    fn single_chain_count_and_bound() {
        let trees = enumerate_trees(1, -5).unwrap();
        assert_eq!(trees.len(), 5);
        assert_eq!(count_labeled_trees(1, -5).unwrap(), 5);
        let t = &trees[0];
        let a = FieldAssignment { sizes: t.vertices.iter().map(|_| 4).collect() };
        let b = tree_bound(t, &a, &PowerCounting::lattice()).unwrap();
        assert_eq!(b.dimensional, q(-3, 2) * -5);
        // chain and endpoint factors cancel the dimensional one exactly
        assert_eq!(b.total, Rational64::zero());
    }

    #[test]
    fn counts_match_enumeration() {
        for n in 1..=4 {
            for h in [-1, -2, -3] {
                assert_eq!(enumerate_trees(n, h).unwrap().len() as u128, count_labeled_trees(n, h).unwrap());
            }
        }
        assert_eq!(unlabeled_shapes(3).unwrap().len(), 3);
        assert_eq!(unlabeled_shapes(4).unwrap().len(), 11);
    }

    #[test]
    fn hand_built_tree() {
        // v0 branches into an endpoint and a vertex carrying two endpoints
        let v = |scale, parent, children: Vec<usize>, endpoint| TreeVertex { scale, parent, children, endpoint };
        let e = Some(EndpointKind::Interaction);
        let t = GNTree {
            h: -2,
            vertices: vec![
                v(-2, None, vec![1], None),
                v(-1, Some(0), vec![2, 3], None),
                v(0, Some(1), vec![], e),
                v(0, Some(1), vec![4, 5], None),
                v(1, Some(3), vec![], e),
                v(1, Some(3), vec![], e),
            ],
        };
        t.validate().unwrap();
        let a = FieldAssignment { sizes: vec![2, 2, 4, 4, 4, 4] };
        let rep = structural_identities_check(&t, &a).unwrap();
        assert!(rep.all_hold());
        assert_eq!(rep.checks[1].1, 2);
        let b = tree_bound(&t, &a, &PowerCounting::relativistic(0)).unwrap();
        assert_eq!(b.velocity, q(0, 1));
    }

    #[test]
    fn dp_matches_explicit_sum() {
        for pc in [PowerCounting::lattice(), PowerCounting::relativistic(0)] {
            for (n, l, h) in [(1, 2, -3), (2, 4, -3), (3, 2, -2), (2, 2, -4)] {
                for set in [EndpointSet::InteractionOnly, EndpointSet::WithCounterterms] {
                    let dp = scale_sum(n, l, h, &pc, set).unwrap();
                    let ex = scale_sum_explicit(n, l, h, &pc, set).unwrap();
                    assert!((dp - ex).abs() <= 1e-12 * ex.max(1.0), "n={n} l={l} h={h}: {dp} vs {ex}");
                }
            }
        }
    }

    #[test]
    fn size_limits() {
        assert!(matches!(enumerate_trees(7, -2), Err(Error::SizeLimit(_))));
        assert!(matches!(enumerate_trees(2, -9), Err(Error::SizeLimit(_))));
    }
}
