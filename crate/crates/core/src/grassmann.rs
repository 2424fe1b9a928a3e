//! Finite Grassmann algebra with Gaussian expectations, truncated
//! expectations, anchored trees, the Brydges–Battle–Federbush interpolation
//! formula and Gram–Hadamard audits.
//!
//! Sites `0..n` carry a pair `ψ⁻_x`, `ψ⁺_x`; generator `x` is `ψ⁻_x` and
//! generator `n + x` is `ψ⁺_x`. The covariance is `E[ψ⁻_x ψ⁺_y] = g(x, y)`.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::num::NonZeroUsize;
use std::ops::{Add, Div, Mul, Neg, Sub};

use gauss_quad::legendre::GaussLegendre;
use num_rational::Rational64;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_SITES: usize = 8;
pub const ORACLE_MAX_CLUSTERS: usize = 4;
pub const ORACLE_MAX_FIELDS: usize = 12;
pub const BBF_MAX_CLUSTERS: usize = 3;
pub const BBF_MAX_FIELDS: usize = 10;
/// Gauss–Legendre order of the interpolation integrals.
pub const BBF_QUADRATURE_ORDER: usize = 8;

/// Coefficient field of the algebra: exact rationals or doubles.
pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn magnitude(&self) -> f64;
    fn from_usize(n: usize) -> Self;
}

impl Scalar for f64 {
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn from_usize(n: usize) -> Self {
        n as f64
    }
}

impl Scalar for Rational64 {
    fn magnitude(&self) -> f64 {
        self.to_f64().unwrap_or(f64::INFINITY).abs()
    }
    fn from_usize(n: usize) -> Self {
        Rational64::from_integer(n as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Field {
    pub site: usize,
    pub eps: Sign,
}

impl Field {
    pub fn minus(site: usize) -> Self {
        Field { site, eps: Sign::Minus }
    }

    pub fn plus(site: usize) -> Self {
        Field { site, eps: Sign::Plus }
    }

    fn generator(&self, n: usize) -> usize {
        match self.eps {
            Sign::Minus => self.site,
            Sign::Plus => n + self.site,
        }
    }
}

/// Ordered monomial of fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub fields: Vec<Field>,
}

impl Cluster {
    pub fn new(fields: Vec<Field>) -> Self {
        Cluster { fields }
    }

    pub fn count(&self, eps: Sign) -> usize {
        self.fields.iter().filter(|f| f.eps == eps).count()
    }

    pub fn is_balanced(&self) -> bool {
        self.count(Sign::Minus) == self.count(Sign::Plus)
    }
}

fn concat(clusters: &[Cluster]) -> Cluster {
    Cluster::new(clusters.iter().flat_map(|c| c.fields.iter().copied()).collect())
}

/// `g(x, y)` between `ψ⁻_x` and `ψ⁺_y`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix<S> {
    pub n: usize,
    pub entries: Vec<S>,
}

impl<S: Scalar> CovarianceMatrix<S> {
    pub fn new(n: usize, entries: Vec<S>) -> Result<Self> {
        if n == 0 || n > MAX_SITES {
            return Err(Error::SizeLimit(format!("{n} sites outside 1..={MAX_SITES}")));
        }
        if entries.len() != n * n {
            return Err(Error::InvalidParams(format!("{} entries for {n} sites", entries.len())));
        }
        if entries.iter().any(|e| !e.magnitude().is_finite()) {
            return Err(Error::InvalidParams("covariance entries must be finite".into()));
        }
        Ok(CovarianceMatrix { n, entries })
    }

    pub fn get(&self, x: usize, y: usize) -> S {
        self.entries[x * self.n + y].clone()
    }
}

/// Element of the Grassmann algebra on `2n` generators, keyed by the bitmask
/// of the canonically ordered monomial.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannAlgebra<S> {
    pub n: usize,
    pub terms: BTreeMap<u32, S>,
}

/// Sign of moving generator `g` to the right end of the ordered monomial `m`.
fn append_sign(m: u32, g: usize) -> bool {
    ((m >> (g + 1)).count_ones() % 2) == 1
}

impl<S: Scalar> GrassmannAlgebra<S> {
    pub fn zero(n: usize) -> Self {
        GrassmannAlgebra { n, terms: BTreeMap::new() }
    }

    pub fn one(n: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(0, S::one());
        GrassmannAlgebra { n, terms }
    }

    /// The ordered product of the fields of a cluster.
    pub fn monomial(n: usize, c: &Cluster) -> Result<Self> {
        if n == 0 || n > MAX_SITES {
            return Err(Error::SizeLimit(format!("{n} sites outside 1..={MAX_SITES}")));
        }
        let mut mask = 0u32;
        let mut negative = false;
        for f in &c.fields {
            if f.site >= n {
                return Err(Error::InvalidParams(format!("site {} outside 0..{n}", f.site)));
            }
            let g = f.generator(n);
            if mask & (1 << g) != 0 {
                return Ok(Self::zero(n));
            }
            negative ^= append_sign(mask, g);
            mask |= 1 << g;
        }
        let mut terms = BTreeMap::new();
        terms.insert(mask, if negative { -S::one() } else { S::one() });
        Ok(GrassmannAlgebra { n, terms })
    }

    fn add_term(&mut self, mask: u32, c: S) {
        let slot = self.terms.entry(mask).or_insert_with(S::zero);
        *slot = slot.clone() + c;
        if slot.is_zero() {
            self.terms.remove(&mask);
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.n);
        for (&a, ca) in &self.terms {
            for (&b, cb) in &other.terms {
                if a & b != 0 {
                    continue;
                }
                let mut negative = false;
                let mut m = a;
                for g in 0..2 * self.n {
                    if b & (1 << g) != 0 {
                        negative ^= append_sign(m, g);
                        m |= 1 << g;
                    }
                }
                let c = ca.clone() * cb.clone();
                out.add_term(m, if negative { -c } else { c });
            }
        }
        out
    }

    /// Left derivative with respect to generator `g`.
    pub fn derivative(&self, g: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (&m, c) in &self.terms {
            if m & (1 << g) == 0 {
                continue;
            }
            let below = (m & ((1u32 << g) - 1)).count_ones();
            let c = c.clone();
            out.add_term(m & !(1 << g), if below % 2 == 1 { -c } else { c });
        }
        out
    }

    /// `Σ_{x,y} g(x,y) ∂_{ψ⁺_y} ∂_{ψ⁻_x}`.
    pub fn laplacian(&self, cov: &CovarianceMatrix<S>) -> Self {
        let n = self.n;
        let mut out = Self::zero(n);
        for x in 0..n {
            let dx = self.derivative(x);
            if dx.terms.is_empty() {
                continue;
            }
            for y in 0..n {
                let g = cov.get(x, y);
                if g.is_zero() {
                    continue;
                }
                for (m, c) in dx.derivative(n + y).terms {
                    out.add_term(m, c * g.clone());
                }
            }
        }
        out
    }

    /// Gaussian expectation: constant term of `exp(Δ_g) F`.
    pub fn gaussian_expectation(&self, cov: &CovarianceMatrix<S>) -> S {
        let mut acc = self.terms.get(&0).cloned().unwrap_or_else(S::zero);
        let mut term = self.clone();
        for k in 1..=self.n {
            term = term.laplacian(cov);
            if term.terms.is_empty() {
                break;
            }
            let scaled: S = term.terms.get(&0).cloned().unwrap_or_else(S::zero) / S::from_usize(k);
            // divide the running term so that it carries Δ^k / k!
            term = GrassmannAlgebra {
                n: term.n,
                terms: term.terms.into_iter().map(|(m, c)| (m, c / S::from_usize(k))).collect(),
            };
            acc = acc + scaled;
        }
        acc
    }
}

/// Determinant by Gaussian elimination with largest-magnitude pivots.
pub fn determinant<S: Scalar>(mut a: Vec<S>, k: usize) -> S {
    if k == 0 {
        return S::one();
    }
    let mut det = S::one();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i * k + col].magnitude().total_cmp(&a[j * k + col].magnitude()))
            .expect("nonempty");
        if a[pivot * k + col].is_zero() {
            return S::zero();
        }
        if pivot != col {
            for j in 0..k {
                a.swap(pivot * k + j, col * k + j);
            }
            det = -det;
        }
        let p = a[col * k + col].clone();
        det = det * p.clone();
        for i in col + 1..k {
            let f = a[i * k + col].clone() / p.clone();
            if f.is_zero() {
                continue;
            }
            for j in col..k {
                let v = a[i * k + j].clone() - f.clone() * a[col * k + j].clone();
                a[i * k + j] = v;
            }
        }
    }
    det
}

fn permutation_parity(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    let mut odd = false;
    for start in 0..order.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = order[i];
            len += 1;
        }
        if len % 2 == 0 {
            odd = !odd;
        }
    }
    odd
}

/// Positions of the fields of `c` reordered as `ψ⁻_{a1} ψ⁺_{b1} ψ⁻_{a2} ψ⁺_{b2} ⋯`
/// (each kind in its original order) and the parity of that reordering.
fn interleave(c: &Cluster) -> (Vec<usize>, Vec<usize>, bool) {
    let minus: Vec<usize> = (0..c.fields.len()).filter(|&i| c.fields[i].eps == Sign::Minus).collect();
    let plus: Vec<usize> = (0..c.fields.len()).filter(|&i| c.fields[i].eps == Sign::Plus).collect();
    let order: Vec<usize> = minus.iter().zip(&plus).flat_map(|(&a, &b)| [a, b]).collect();
    let odd = permutation_parity(&order);
    (minus, plus, odd)
}

/// Gaussian expectation of an ordered monomial as a signed determinant.
pub fn wick_expectation<S: Scalar>(c: &Cluster, cov: &CovarianceMatrix<S>) -> S {
    if !c.is_balanced() {
        return S::zero();
    }
    let (minus, plus, odd) = interleave(c);
    let k = minus.len();
    let mut m = Vec::with_capacity(k * k);
    for &a in &minus {
        for &b in &plus {
            m.push(cov.get(c.fields[a].site, c.fields[b].site));
        }
    }
    let d = determinant(m, k);
    if odd {
        -d
    } else {
        d
    }
}

/// The same expectation through the algebra: `exp(Δ_g)` on the monomial.
pub fn wick_expectation_algebra<S: Scalar>(c: &Cluster, cov: &CovarianceMatrix<S>) -> Result<S> {
    if !c.is_balanced() {
        return Ok(S::zero());
    }
    Ok(GrassmannAlgebra::monomial(cov.n, c)?.gaussian_expectation(cov))
}

/// Set partitions of `0..s`, blocks in increasing order of their first element.
pub fn set_partitions(s: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
    for i in 0..s {
        let mut next = Vec::new();
        for p in out {
            for b in 0..p.len() {
                let mut q = p.clone();
                q[b].push(i);
                next.push(q);
            }
            let mut q = p;
            q.push(vec![i]);
            next.push(q);
        }
        out = next;
    }
    out
}

fn check_oracle_size(clusters: &[Cluster]) -> Result<()> {
    let total: usize = clusters.iter().map(|c| c.fields.len()).sum();
    if clusters.is_empty() || clusters.len() > ORACLE_MAX_CLUSTERS || total > ORACLE_MAX_FIELDS {
        return Err(Error::SizeLimit(format!(
            "{} clusters with {total} fields exceed {ORACLE_MAX_CLUSTERS} clusters / {ORACLE_MAX_FIELDS} fields",
            clusters.len()
        )));
    }
    Ok(())
}

/// Parity of regrouping the concatenated clusters block by block.
fn regroup_parity(clusters: &[Cluster], blocks: &[Vec<usize>]) -> bool {
    let mut offsets = Vec::with_capacity(clusters.len());
    let mut acc = 0;
    for c in clusters {
        offsets.push(acc);
        acc += c.fields.len();
    }
    let order: Vec<usize> = blocks
        .iter()
        .flat_map(|b| b.iter().flat_map(|&i| offsets[i]..offsets[i] + clusters[i].fields.len()))
        .collect();
    permutation_parity(&order)
}

/// Joint cumulant of the cluster monomials by Möbius inversion over set
/// partitions, with block expectations from the algebra.
pub fn truncated_expectation_oracle<S: Scalar>(clusters: &[Cluster], cov: &CovarianceMatrix<S>) -> Result<S> {
    check_oracle_size(clusters)?;
    let s = clusters.len();
    let mut total = S::zero();
    for blocks in set_partitions(s) {
        let k = blocks.len();
        let mut prod = S::one();
        for b in &blocks {
            let joined = concat(&b.iter().map(|&i| clusters[i].clone()).collect::<Vec<_>>());
            if joined.fields.len() % 2 == 1 {
                prod = S::zero();
                break;
            }
            prod = prod * wick_expectation_algebra(&joined, cov)?;
            if prod.is_zero() {
                break;
            }
        }
        if prod.is_zero() {
            continue;
        }
        // (-1)^(k-1) (k-1)!
        let mut coef = S::one();
        for j in 1..k {
            coef = coef * S::from_usize(j);
        }
        if (k - 1) % 2 == 1 {
            coef = -coef;
        }
        if regroup_parity(clusters, &blocks) {
            coef = -coef;
        }
        total = total + coef * prod;
    }
    Ok(total)
}

/// One line of an anchored tree: `ψ⁻` at position `minus` of cluster `from`
/// contracted with `ψ⁺` at position `plus` of cluster `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Line {
    pub from: usize,
    pub minus: usize,
    pub to: usize,
    pub plus: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnchoredTree {
    pub lines: Vec<Line>,
}

impl AnchoredTree {
    /// Cluster-level edges `(min, max)` in line order.
    pub fn cluster_edges(&self) -> Vec<(usize, usize)> {
        self.lines.iter().map(|l| (l.from.min(l.to), l.from.max(l.to))).collect()
    }

    /// True if contracting every cluster to a point leaves a spanning tree.
    pub fn is_spanning_tree(&self, s: usize) -> bool {
        if self.lines.len() + 1 != s {
            return false;
        }
        let mut parent: Vec<usize> = (0..s).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        for (a, b) in self.cluster_edges() {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return false;
            }
            parent[ra] = rb;
        }
        true
    }
}

/// All anchored trees between the clusters, in canonical order.
pub fn enumerate_anchored_trees(clusters: &[Cluster]) -> Result<Vec<AnchoredTree>> {
    let s = clusters.len();
    if s == 0 || s > ORACLE_MAX_CLUSTERS {
        return Err(Error::SizeLimit(format!("{s} clusters outside 1..={ORACLE_MAX_CLUSTERS}")));
    }
    let mut candidates = Vec::new();
    for (i, ci) in clusters.iter().enumerate() {
        for (j, cj) in clusters.iter().enumerate() {
            if i == j {
                continue;
            }
            for (a, fa) in ci.fields.iter().enumerate() {
                for (b, fb) in cj.fields.iter().enumerate() {
                    if fa.eps == Sign::Minus && fb.eps == Sign::Plus {
                        candidates.push(Line { from: i, minus: a, to: j, plus: b });
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut chosen: Vec<Line> = Vec::new();
    fn rec(
        start: usize,
        need: usize,
        cands: &[Line],
        chosen: &mut Vec<Line>,
        s: usize,
        out: &mut Vec<AnchoredTree>,
    ) {
        if chosen.len() == need {
            let t = AnchoredTree { lines: chosen.clone() };
            if t.is_spanning_tree(s) {
                out.push(t);
            }
            return;
        }
        for k in start..cands.len() {
            let l = cands[k];
            let clash = chosen.iter().any(|c| {
                (c.from == l.from && c.minus == l.minus) || (c.to == l.to && c.plus == l.plus)
            });
            if clash {
                continue;
            }
            chosen.push(l);
            rec(k + 1, need, cands, chosen, s, out);
            chosen.pop();
        }
    }
    rec(0, s - 1, &candidates, &mut chosen, s, &mut out);
    Ok(out)
}

/// Frozen overall sign of the interpolation formula, fixed by matching the
/// oracle on a reference case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignCalibration {
    sign: Option<i8>,
}

impl SignCalibration {
    pub fn uncalibrated() -> Self {
        SignCalibration { sign: None }
    }

    /// Two clusters `ψ⁻_0 ψ⁺_1` and `ψ⁻_1 ψ⁺_0` with a generic covariance.
    pub fn reference_case() -> (Vec<Cluster>, CovarianceMatrix<f64>) {
        let clusters = vec![
            Cluster::new(vec![Field::minus(0), Field::plus(1)]),
            Cluster::new(vec![Field::minus(1), Field::plus(0)]),
        ];
        let cov = CovarianceMatrix::new(2, vec![0.7, -0.3, 0.45, 1.1]).expect("reference covariance");
        (clusters, cov)
    }

    pub fn calibrate() -> Result<Self> {
        let (clusters, cov) = Self::reference_case();
        let raw = bbf_unsigned(&clusters, &cov)?;
        let oracle = truncated_expectation_oracle(&clusters, &cov)?;
        if raw.abs() < 1e-12 || ((raw.abs() - oracle.abs()) / oracle.abs()).abs() > 1e-10 {
            return Err(Error::Quadrature(format!("reference case mismatch: {raw} vs {oracle}")));
        }
        Ok(SignCalibration { sign: Some(if raw.signum() == oracle.signum() { 1 } else { -1 }) })
    }

    pub fn sign(&self) -> Option<i8> {
        self.sign
    }
}

fn cluster_offsets(clusters: &[Cluster]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(clusters.len());
    let mut acc = 0;
    for c in clusters {
        offsets.push(acc);
        acc += c.fields.len();
    }
    offsets
}

/// Sum over anchored trees of `Π_l g_l ∫ dP_T(t) det G^T(t)`, each term signed
/// by the permutation taking the concatenated fields to
/// `(lines…, remaining fields interleaved)`.
fn bbf_unsigned(clusters: &[Cluster], cov: &CovarianceMatrix<f64>) -> Result<f64> {
    let s = clusters.len();
    let total_fields: usize = clusters.iter().map(|c| c.fields.len()).sum();
    if s == 0 || s > BBF_MAX_CLUSTERS || total_fields > BBF_MAX_FIELDS {
        return Err(Error::SizeLimit(format!(
            "{s} clusters with {total_fields} fields exceed {BBF_MAX_CLUSTERS} clusters / {BBF_MAX_FIELDS} fields"
        )));
    }
    let all = concat(clusters);
    if !all.is_balanced() {
        return Ok(0.0);
    }
    let offsets = cluster_offsets(clusters);
    let owner: Vec<usize> = clusters.iter().enumerate().flat_map(|(i, c)| std::iter::repeat_n(i, c.fields.len())).collect();
    let rule = GaussLegendre::new(NonZeroUsize::new(BBF_QUADRATURE_ORDER).expect("nonzero"));
    let mut total = 0.0;
    for tree in enumerate_anchored_trees(clusters)? {
        let mut used = vec![false; total_fields];
        let mut order = Vec::with_capacity(total_fields);
        let mut line_product = 1.0;
        for l in &tree.lines {
            let a = offsets[l.from] + l.minus;
            let b = offsets[l.to] + l.plus;
            used[a] = true;
            used[b] = true;
            order.push(a);
            order.push(b);
            line_product *= cov.get(all.fields[a].site, all.fields[b].site);
        }
        if line_product == 0.0 {
            continue;
        }
        let minus: Vec<usize> = (0..total_fields).filter(|&i| !used[i] && all.fields[i].eps == Sign::Minus).collect();
        let plus: Vec<usize> = (0..total_fields).filter(|&i| !used[i] && all.fields[i].eps == Sign::Plus).collect();
        order.extend(minus.iter().zip(&plus).flat_map(|(&a, &b)| [a, b]));
        let sign = if permutation_parity(&order) { -1.0 } else { 1.0 };
        let k = minus.len();
        let det_at = |t: &dyn Fn(usize, usize) -> f64| -> f64 {
            let mut m = Vec::with_capacity(k * k);
            for &a in &minus {
                for &b in &plus {
                    m.push(t(owner[a], owner[b]) * cov.get(all.fields[a].site, all.fields[b].site));
                }
            }
            determinant(m, k)
        };
        let integral = match s {
            1 => det_at(&|_, _| 1.0),
            2 => rule.integrate(0.0, 1.0, |w| det_at(&|i, j| if i == j { 1.0 } else { w })),
            _ => {
                // path tree a - m - c: t_am = w1, t_mc = w2, t_ac = min(w1, w2)
                let edges = tree.cluster_edges();
                let (e1, e2) = (edges[0], edges[1]);
                let t_of = |w1: f64, w2: f64| {
                    move |i: usize, j: usize| -> f64 {
                        if i == j {
                            return 1.0;
                        }
                        let e = (i.min(j), i.max(j));
                        if e == e1 {
                            w1
                        } else if e == e2 {
                            w2
                        } else {
                            w1.min(w2)
                        }
                    }
                };
                // the integrand is polynomial on each triangle w1 < w2 and w2 < w1
                let lower = rule.integrate(0.0, 1.0, |w2| {
                    w2 * rule.integrate(0.0, 1.0, |u| {
                        let w1 = u * w2;
                        det_at(&t_of(w1, w2))
                    })
                });
                let upper = rule.integrate(0.0, 1.0, |w1| {
                    w1 * rule.integrate(0.0, 1.0, |u| {
                        let w2 = u * w1;
                        det_at(&t_of(w1, w2))
                    })
                });
                lower + upper
            }
        };
        total += sign * line_product * integral;
    }
    Ok(total)
}

/// Truncated expectation by the interpolation formula (`s ≤ 3`).
pub fn bbf_evaluate(clusters: &[Cluster], cov: &CovarianceMatrix<f64>, calibration: &SignCalibration) -> Result<f64> {
    let sign = calibration.sign.ok_or(Error::SignCalibrationMissing)?;
    Ok(sign as f64 * bbf_unsigned(clusters, cov)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GramReport {
    pub det: f64,
    pub bound: f64,
    /// `bound - |det|`.
    pub margin: f64,
    pub holds: bool,
}

/// Checks `|det ⟨f_i, g_j⟩| ≤ Π_i ‖f_i‖ ‖g_i‖`.
pub fn gram_hadamard_audit(f: &[Vec<f64>], g: &[Vec<f64>]) -> Result<GramReport> {
    let k = f.len();
    if g.len() != k {
        return Err(Error::InvalidParams(format!("{k} left factors but {} right factors", g.len())));
    }
    let dim = f.first().map_or(0, Vec::len);
    if f.iter().chain(g).any(|v| v.len() != dim) {
        return Err(Error::InvalidParams("factor vectors must share one dimension".into()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut m = Vec::with_capacity(k * k);
    for fi in f {
        for gj in g {
            m.push(dot(fi, gj));
        }
    }
    let det = determinant(m, k);
    let bound: f64 = f.iter().zip(g).map(|(a, b)| dot(a, a).sqrt() * dot(b, b).sqrt()).product();
    // allow rounding in the equality case
    let holds = det.abs() <= bound * (1.0 + 1e-12) + 1e-300;
    Ok(GramReport { det, bound, margin: bound - det.abs(), holds })
}

/// Random balanced clusters over `sites` sites with a dense random covariance.
/// Each cluster holds at least one field; the total field count is at most
/// `max_fields`.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    s: usize,
    sites: usize,
    max_fields: usize,
) -> Result<(Vec<Cluster>, CovarianceMatrix<f64>)> {
    if s == 0 || max_fields < 2 * s || sites == 0 || sites > MAX_SITES {
        return Err(Error::InvalidParams(format!("cannot build {s} clusters within {max_fields} fields on {sites} sites")));
    }
    let pairs = rng.gen_range(s..=max_fields / 2);
    let mut fields: Vec<Field> = Vec::with_capacity(2 * pairs);
    // distinct sites per kind keep the monomial nonzero
    let mut minus_sites: Vec<usize> = (0..sites).collect();
    let mut plus_sites: Vec<usize> = (0..sites).collect();
    let pairs = pairs.min(sites);
    for _ in 0..pairs {
        let a = minus_sites.swap_remove(rng.gen_range(0..minus_sites.len()));
        let b = plus_sites.swap_remove(rng.gen_range(0..plus_sites.len()));
        fields.push(Field::minus(a));
        fields.push(Field::plus(b));
    }
    // shuffle and cut into s nonempty clusters
    for i in (1..fields.len()).rev() {
        let j = rng.gen_range(0..=i);
        fields.swap(i, j);
    }
    let mut cuts: Vec<usize> = Vec::new();
    while cuts.len() < s - 1 {
        let c = rng.gen_range(1..fields.len());
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let mut clusters = Vec::with_capacity(s);
    let mut start = 0;
    for &c in cuts.iter().chain(std::iter::once(&fields.len())) {
        clusters.push(Cluster::new(fields[start..c].to_vec()));
        start = c;
    }
    let entries = (0..sites * sites).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok((clusters, CovarianceMatrix::new(sites, entries)?))
}
