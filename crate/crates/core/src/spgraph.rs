//! Series-parallel network structure: edges, composition sequences, instance
//! generation, JSON persistence, and conversion to a concrete multigraph.
//!
//! A network over edges `1..=m` is described by a sequence of `m - 1` binary
//! composition steps. Step `i` (1-based) produces node id `m + i` by joining
//! two previously built nodes in series or in parallel. Every node id except
//! the final root `2m - 1` is consumed as an operand exactly once, so the
//! sequence encodes a full binary tree with the edges as leaves.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use crate::Error;

/// 1-based identifier of an edge (a leaf of the composition tree).
pub type EdgeId = usize;

/// 1-based identifier of any composition node: edges are `1..=m`,
/// step results are `m+1..=2m-1`.
pub type NodeId = usize;

/// An edge together with the probability that it operates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDef {
    pub id: EdgeId,
    pub p: f64,
}

/// How two sub-networks are joined by a composition step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompKind {
    Series,
    Parallel,
}

impl CompKind {
    pub fn tag(self) -> &'static str {
        match self {
            CompKind::Series => "S",
            CompKind::Parallel => "P",
        }
    }
}

/// One composition step: `result = left <kind> right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Composition {
    pub result: NodeId,
    pub kind: CompKind,
    pub left: NodeId,
    pub right: NodeId,
}

/// A broken sequence invariant, pointing at the offending step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// 0-based index into the step list; `None` for sequence-level problems.
    pub step: Option<usize>,
    pub rule: String,
}

impl Violation {
    fn at(step: usize, rule: impl Into<String>) -> Self {
        Violation {
            step: Some(step),
            rule: rule.into(),
        }
    }

    fn global(rule: impl Into<String>) -> Self {
        Violation {
            step: None,
            rule: rule.into(),
        }
    }

    pub(crate) fn join(list: &[Violation]) -> String {
        list.iter()
            .map(Violation::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(i) => write!(f, "step {}: {}", i, self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

/// The full reduction recipe for a network with `m` edges.
///
/// Construction validates every structural invariant, so a value of this
/// type is always a well-formed composition tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionSequence {
    m: usize,
    steps: Vec<Composition>,
}

impl CompositionSequence {
    /// Builds a sequence after checking all invariants.
    pub fn new(m: usize, steps: Vec<Composition>) -> Result<Self, Error> {
        let violations = Self::check(m, &steps);
        if violations.is_empty() {
            Ok(CompositionSequence { m, steps })
        } else {
            Err(Error::InvalidSequence(violations))
        }
    }

    /// Checks the invariants of raw parts and returns every violation found.
    ///
    /// Rules: there are `m - 1` steps with `m >= 2`; the i-th step (0-based)
    /// has result id `m + i + 1`; operands differ, refer to ids defined
    /// before the step, and every id in `1..=2m-2` is used as an operand
    /// exactly once; the root `2m - 1` is never an operand.
    pub fn check(m: usize, steps: &[Composition]) -> Vec<Violation> {
        let mut out = Vec::new();
        if m < 2 {
            out.push(Violation::global(format!("m must be at least 2, got {m}")));
            return out;
        }
        if steps.len() != m - 1 {
            out.push(Violation::global(format!(
                "expected {} steps for m = {}, got {}",
                m - 1,
                m,
                steps.len()
            )));
        }
        let top = m + steps.len();
        let mut used = vec![0usize; top + 1];
        for (i, s) in steps.iter().enumerate() {
            let expect = m + i + 1;
            if s.result != expect {
                out.push(Violation::at(
                    i,
                    format!("result id must be {expect}, got {}", s.result),
                ));
            }
            if s.left == s.right {
                out.push(Violation::at(i, format!("operands are both {}", s.left)));
            }
            for op in [s.left, s.right] {
                if op == 0 || op >= expect {
                    out.push(Violation::at(
                        i,
                        format!("operand {op} is not defined before this step"),
                    ));
                } else {
                    used[op] += 1;
                }
            }
        }
        // usage counts are only meaningful once the step count is right;
        // a root used as an operand is already a forward reference above
        if steps.len() == m - 1 {
            for (id, &count) in used.iter().enumerate().skip(1) {
                if id < top && count != 1 {
                    out.push(Violation::global(format!(
                        "id {id} used as operand {count} times, expected once"
                    )));
                }
            }
        }
        out
    }

    /// Re-runs the invariant checks (always clean for constructed values).
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let v = Self::check(self.m, &self.steps);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// Number of edges.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Total number of nodes (`2m - 1`).
    pub fn node_count(&self) -> usize {
        2 * self.m - 1
    }

    /// Id of the final composition result.
    pub fn root(&self) -> NodeId {
        2 * self.m - 1
    }

    pub fn steps(&self) -> &[Composition] {
        &self.steps
    }

    /// The step that produced `id`, or `None` for edges.
    pub fn step_of(&self, id: NodeId) -> Option<&Composition> {
        id.checked_sub(self.m + 1).map(|i| &self.steps[i])
    }

    /// Set of edge ids reachable below `id` in the composition tree.
    pub fn support(&self, id: NodeId) -> BTreeSet<EdgeId> {
        assert!(
            (1..=self.root()).contains(&id),
            "node id {id} out of range 1..={}",
            self.root()
        );
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            match self.step_of(n) {
                None => {
                    out.insert(n);
                }
                Some(s) => {
                    stack.push(s.left);
                    stack.push(s.right);
                }
            }
        }
        out
    }

    /// Supports of all nodes as sorted edge lists, indexed by `id - 1`.
    pub fn supports(&self) -> Vec<Vec<EdgeId>> {
        let mut out: Vec<Vec<EdgeId>> = Vec::with_capacity(self.node_count());
        for e in 1..=self.m {
            out.push(vec![e]);
        }
        for s in &self.steps {
            let mut merged: Vec<EdgeId> = Vec::new();
            let (a, b) = (&out[s.left - 1], &out[s.right - 1]);
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                if a[i] < b[j] {
                    merged.push(a[i]);
                    i += 1;
                } else {
                    merged.push(b[j]);
                    j += 1;
                }
            }
            merged.extend_from_slice(&a[i..]);
            merged.extend_from_slice(&b[j..]);
            out.push(merged);
        }
        out
    }

    /// Builds the concrete multigraph the sequence describes.
    ///
    /// Every edge starts as a fresh two-vertex component with a head and a
    /// tail. A series step glues the left tail to the right head and keeps
    /// (left head, right tail) as the new terminals; a parallel step glues
    /// head to head and tail to tail. Which endpoint of an edge acts as its
    /// head is an arbitrary but fixed choice; all-terminal connectivity does
    /// not depend on it.
    pub fn materialize(&self) -> ConcreteGraph {
        let m = self.m;
        let mut uf = UnionFind::new(2 * m);
        // head/tail vertex per node id, indexed by id - 1
        let mut head = vec![0usize; self.node_count()];
        let mut tail = vec![0usize; self.node_count()];
        for e in 0..m {
            head[e] = 2 * e;
            tail[e] = 2 * e + 1;
        }
        for s in &self.steps {
            let (lh, lt) = (head[s.left - 1], tail[s.left - 1]);
            let (rh, rt) = (head[s.right - 1], tail[s.right - 1]);
            match s.kind {
                CompKind::Series => {
                    uf.union(lt, rh);
                    head[s.result - 1] = lh;
                    tail[s.result - 1] = rt;
                }
                CompKind::Parallel => {
                    uf.union(lh, rh);
                    uf.union(lt, rt);
                    head[s.result - 1] = lh;
                    tail[s.result - 1] = lt;
                }
            }
        }
        // renumber the union-find classes contiguously
        let mut label = vec![usize::MAX; 2 * m];
        let mut n = 0;
        let mut edges = Vec::with_capacity(m);
        for e in 0..m {
            let mut vs = [0usize; 2];
            for (slot, v) in [2 * e, 2 * e + 1].into_iter().enumerate() {
                let root = uf.find(v);
                if label[root] == usize::MAX {
                    label[root] = n;
                    n += 1;
                }
                vs[slot] = label[root];
            }
            edges.push((e + 1, vs[0], vs[1]));
        }
        ConcreteGraph { n, edges }
    }
}

/// A materialized multigraph: `n` vertices labeled `0..n` and one entry per
/// edge as `(edge id, endpoint, endpoint)`. Parallel compositions produce
/// genuine multi-edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcreteGraph {
    pub n: usize,
    pub edges: Vec<(EdgeId, usize, usize)>,
}

/// Extra linear restriction `sum(c_e * x_e) <= rhs` on the selection
/// variables of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraRow {
    pub coeffs: Vec<(EdgeId, f64)>,
    pub rhs: f64,
}

/// An optimization instance: network, edge probabilities, cardinality budget
/// factor `alpha`, and optional extra restrictions. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    edges: Vec<EdgeDef>,
    seq: CompositionSequence,
    alpha: f64,
    extra_rows: Vec<ExtraRow>,
}

impl Instance {
    /// Builds an instance after validating edges, sequence consistency,
    /// `alpha`, and the extra rows.
    pub fn new(
        edges: Vec<EdgeDef>,
        seq: CompositionSequence,
        alpha: f64,
        extra_rows: Vec<ExtraRow>,
    ) -> Result<Self, Error> {
        let m = seq.m();
        if edges.len() != m {
            return Err(Error::InvalidArgument(format!(
                "sequence says m = {m} but {} edges were given",
                edges.len()
            )));
        }
        let mut sorted = edges;
        sorted.sort_by_key(|e| e.id);
        for (i, e) in sorted.iter().enumerate() {
            if e.id != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "edge ids must be exactly 1..={m}, found id {} out of place",
                    e.id
                )));
            }
            if !(0.0..=1.0).contains(&e.p) {
                return Err(Error::InvalidArgument(format!(
                    "edge {} probability {} outside [0, 1]",
                    e.id, e.p
                )));
            }
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        for (r, row) in extra_rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "extra row {r} has non-finite rhs"
                )));
            }
            for &(e, c) in &row.coeffs {
                if e == 0 || e > m {
                    return Err(Error::InvalidArgument(format!(
                        "extra row {r} references unknown edge {e}"
                    )));
                }
                if !c.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "extra row {r} has non-finite coefficient on edge {e}"
                    )));
                }
            }
        }
        Ok(Instance {
            edges: sorted,
            seq,
            alpha,
            extra_rows,
        })
    }

    pub fn m(&self) -> usize {
        self.seq.m()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn edges(&self) -> &[EdgeDef] {
        &self.edges
    }

    /// Probability of edge `id`.
    pub fn edge_p(&self, id: EdgeId) -> f64 {
        self.edges[id - 1].p
    }

    pub fn seq(&self) -> &CompositionSequence {
        &self.seq
    }

    pub fn extra_rows(&self) -> &[ExtraRow] {
        &self.extra_rows
    }

    /// Cardinality budget `floor(alpha * m)`. The tiny epsilon absorbs
    /// binary rounding when `alpha * m` is mathematically integral.
    pub fn budget(&self) -> usize {
        (self.alpha * self.m() as f64 + 1e-9).floor() as usize
    }

    /// Same instance with a different budget factor.
    pub fn with_alpha(&self, alpha: f64) -> Result<Instance, Error> {
        Instance::new(
            self.edges.clone(),
            self.seq.clone(),
            alpha,
            self.extra_rows.clone(),
        )
    }

    /// Same instance with extra selection restrictions appended.
    pub fn with_extra_rows(&self, extra_rows: Vec<ExtraRow>) -> Result<Instance, Error> {
        Instance::new(self.edges.clone(), self.seq.clone(), self.alpha, extra_rows)
    }

    /// Serializes to the instance JSON format.
    ///
    /// Floats are written in scientific notation with 17 significant digits,
    /// which round-trips every f64 exactly and keeps files byte-stable.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        s.push_str(&format!("  \"m\": {},\n", self.m()));
        s.push_str("  \"edges\": [\n");
        for (i, e) in self.edges.iter().enumerate() {
            let sep = if i + 1 < self.edges.len() { "," } else { "" };
            s.push_str(&format!(
                "    {{\"id\": {}, \"p\": {}}}{}\n",
                e.id,
                fmt_f64(e.p),
                sep
            ));
        }
        s.push_str("  ],\n");
        s.push_str("  \"steps\": [\n");
        for (i, st) in self.seq.steps().iter().enumerate() {
            let sep = if i + 1 < self.seq.steps().len() { "," } else { "" };
            s.push_str(&format!(
                "    {{\"id\": {}, \"op\": \"{}\", \"left\": {}, \"right\": {}}}{}\n",
                st.result,
                st.kind.tag(),
                st.left,
                st.right,
                sep
            ));
        }
        s.push_str("  ],\n");
        s.push_str(&format!("  \"alpha\": {},\n", fmt_f64(self.alpha)));
        s.push_str("  \"extra_rows\": [");
        for (i, row) in self.extra_rows.iter().enumerate() {
            let sep = if i + 1 < self.extra_rows.len() { "," } else { "" };
            let coeffs = row
                .coeffs
                .iter()
                .map(|(e, c)| format!("{{\"e\": {}, \"c\": {}}}", e, fmt_f64(*c)))
                .collect::<Vec<_>>()
                .join(", ");
            s.push_str(&format!(
                "\n    {{\"coeffs\": [{}], \"rhs\": {}}}{}",
                coeffs,
                fmt_f64(row.rhs),
                sep
            ));
        }
        if !self.extra_rows.is_empty() {
            s.push_str("\n  ");
        }
        s.push_str("]\n}\n");
        s
    }

    /// Parses the instance JSON format, validating every invariant.
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let raw: RawInstance =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut seen = vec![false; raw.edges.len() + 1];
        let mut edges = Vec::with_capacity(raw.edges.len());
        for e in &raw.edges {
            if e.id == 0 || e.id > raw.edges.len() || seen[e.id] {
                return Err(Error::Parse(format!(
                    "edge id {} duplicated or out of range 1..={}",
                    e.id,
                    raw.edges.len()
                )));
            }
            seen[e.id] = true;
            edges.push(EdgeDef { id: e.id, p: e.p });
        }
        if raw.m != raw.edges.len() {
            return Err(Error::Parse(format!(
                "m = {} does not match {} edges",
                raw.m,
                raw.edges.len()
            )));
        }
        let mut steps = Vec::with_capacity(raw.steps.len());
        for s in &raw.steps {
            let kind = match s.op.as_str() {
                "S" => CompKind::Series,
                "P" => CompKind::Parallel,
                other => {
                    return Err(Error::Parse(format!(
                        "step {} has unknown op {:?}, expected \"S\" or \"P\"",
                        s.id, other
                    )))
                }
            };
            steps.push(Composition {
                result: s.id,
                kind,
                left: s.left,
                right: s.right,
            });
        }
        let seq = CompositionSequence::new(raw.m, steps)
            .map_err(|e| Error::Parse(e.to_string()))?;
        let extra_rows = raw
            .extra_rows
            .into_iter()
            .map(|r| ExtraRow {
                coeffs: r.coeffs.into_iter().map(|c| (c.e, c.c)).collect(),
                rhs: r.rhs,
            })
            .collect();
        Instance::new(edges, seq, raw.alpha, extra_rows).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Writes the JSON form to a file.
    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Reads and validates an instance file.
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, Error> {
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Parse(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

#[derive(serde::Deserialize)]
struct RawInstance {
    m: usize,
    edges: Vec<RawEdge>,
    steps: Vec<RawStep>,
    alpha: f64,
    #[serde(default)]
    extra_rows: Vec<RawRow>,
}

#[derive(serde::Deserialize)]
struct RawEdge {
    id: usize,
    p: f64,
}

#[derive(serde::Deserialize)]
struct RawStep {
    id: usize,
    op: String,
    left: usize,
    right: usize,
}

#[derive(serde::Deserialize)]
struct RawRow {
    coeffs: Vec<RawCoef>,
    rhs: f64,
}

#[derive(serde::Deserialize)]
struct RawCoef {
    e: usize,
    c: f64,
}

/// Generates a random instance with `m` edges, deterministic in `(m, seed)`.
///
/// Edge probabilities are uniform on [0.9, 1.0]. Starting from `m`
/// single-edge components, two distinct live components are drawn uniformly
/// and joined, in parallel when the next uniform draw is below 1/2 and in
/// series otherwise, until one component remains. The budget factor of the
/// returned instance is 1 (no restriction); see [`Instance::with_alpha`].
pub fn generate(m: usize, seed: u64) -> Result<Instance, Error> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "generate needs m >= 2, got {m}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let edges: Vec<EdgeDef> = (1..=m)
        .map(|id| EdgeDef {
            id,
            p: 0.9 + 0.1 * rng.unit(),
        })
        .collect();
    let mut live: Vec<NodeId> = (1..=m).collect();
    let mut steps = Vec::with_capacity(m - 1);
    let mut next_id = m + 1;
    while live.len() > 1 {
        let a = rng.below(live.len());
        let b_raw = rng.below(live.len() - 1);
        let b = if b_raw >= a { b_raw + 1 } else { b_raw };
        let kind = if rng.unit() < 0.5 {
            CompKind::Parallel
        } else {
            CompKind::Series
        };
        steps.push(Composition {
            result: next_id,
            kind,
            left: live[a],
            right: live[b],
        });
        // remove the larger index first so the smaller stays valid
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        live.swap_remove(hi);
        live.swap_remove(lo);
        live.push(next_id);
        next_id += 1;
    }
    let seq = CompositionSequence::new(m, steps)?;
    Instance::new(edges, seq, 1.0, Vec::new())
}

/// Parses a selection mask written as a bitstring, e.g. `101`, ordered by
/// edge id.
pub fn parse_mask(s: &str, m: usize) -> Result<Vec<bool>, Error> {
    if s.len() != m {
        return Err(Error::InvalidArgument(format!(
            "mask must have exactly {m} characters, got {}",
            s.len()
        )));
    }
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::InvalidArgument(format!(
                "mask may only contain 0 and 1, found {other:?}"
            ))),
        })
        .collect()
}

/// Renders a selection mask as a bitstring ordered by edge id.
pub fn mask_to_string(mask: &[bool]) -> String {
    mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// splitmix64: fixed, platform-independent generator so that instances are
/// reproducible byte-for-byte from `(m, seed)`.
pub(crate) struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub(crate) fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub(crate) fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform f64 in [0, 1) with 53 random bits.
    pub(crate) fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`. The modulo bias is below 2^-53 for the small
    /// `n` used here and keeps the draw sequence trivially reproducible.
    pub(crate) fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

/// Union-find with path halving and union by size.
pub(crate) struct UnionFind {
    // negative size at roots, parent index otherwise
    parent: Vec<isize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: vec![-1; n],
        }
    }

    pub(crate) fn reset(&mut self) {
        self.parent.fill(-1);
    }

    pub(crate) fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] >= 0 {
            let p = self.parent[v] as usize;
            if self.parent[p] >= 0 {
                self.parent[v] = self.parent[p];
            }
            v = p;
        }
        v
    }

    /// Returns false when the two were already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.parent[ra] > self.parent[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[ra] += self.parent[rb];
        self.parent[rb] = ra as isize;
        true
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// edges 1, 2 in series, the result in parallel with edge 3
    pub(crate) fn triangle(p: f64) -> Instance {
        let edges = (1..=3).map(|id| EdgeDef { id, p }).collect();
        let steps = vec![
            Composition {
                result: 4,
                kind: CompKind::Series,
                left: 1,
                right: 2,
            },
            Composition {
                result: 5,
                kind: CompKind::Parallel,
                left: 4,
                right: 3,
            },
        ];
        let seq = CompositionSequence::new(3, steps).unwrap();
        Instance::new(edges, seq, 1.0, Vec::new()).unwrap()
    }

    fn pair(kind: CompKind, p: f64) -> Instance {
        let edges = (1..=2).map(|id| EdgeDef { id, p }).collect();
        let steps = vec![Composition {
            result: 3,
            kind,
            left: 1,
            right: 2,
        }];
        let seq = CompositionSequence::new(2, steps).unwrap();
        Instance::new(edges, seq, 1.0, Vec::new()).unwrap()
    }

    #[test]
    fn valid_sequence_passes() {
        assert!(triangle(0.9).seq().validate().is_ok());
    }

    #[test]
    fn operand_reuse_is_rejected() {
        let steps = vec![
            Composition {
                result: 4,
                kind: CompKind::Series,
                left: 1,
                right: 1,
            },
            Composition {
                result: 5,
                kind: CompKind::Parallel,
                left: 4,
                right: 3,
            },
        ];
        let err = CompositionSequence::new(3, steps).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("operands are both 1"), "{msg}");
        assert!(msg.contains("id 2 used as operand 0 times"), "{msg}");
    }

    #[test]
    fn wrong_result_id_is_rejected() {
        let steps = vec![Composition {
            result: 7,
            kind: CompKind::Series,
            left: 1,
            right: 2,
        }];
        let err = CompositionSequence::new(2, steps).unwrap_err();
        assert!(err.to_string().contains("result id must be 3"), "{err}");
    }

    #[test]
    fn forward_reference_is_rejected() {
        let steps = vec![
            Composition {
                result: 4,
                kind: CompKind::Series,
                left: 1,
                right: 5,
            },
            Composition {
                result: 5,
                kind: CompKind::Parallel,
                left: 4,
                right: 2,
            },
        ];
        let err = CompositionSequence::new(3, steps).unwrap_err();
        assert!(
            err.to_string().contains("operand 5 is not defined"),
            "{err}"
        );
    }

    #[test]
    fn step_count_mismatch_is_rejected() {
        let steps = vec![Composition {
            result: 4,
            kind: CompKind::Series,
            left: 1,
            right: 2,
        }];
        let err = CompositionSequence::new(3, steps).unwrap_err();
        assert!(err.to_string().contains("expected 2 steps"), "{err}");
    }

    #[test]
    fn support_of_triangle() {
        let inst = triangle(0.9);
        let root: Vec<_> = inst.seq().support(5).into_iter().collect();
        assert_eq!(root, vec![1, 2, 3]);
        let series: Vec<_> = inst.seq().support(4).into_iter().collect();
        assert_eq!(series, vec![1, 2]);
        assert_eq!(inst.seq().support(2).len(), 1);
        let all = inst.seq().supports();
        assert_eq!(all[4 - 1], vec![1, 2]);
        assert_eq!(all[5 - 1], vec![1, 2, 3]);
    }

    #[test]
    fn materialize_triangle_has_three_vertices() {
        let g = triangle(0.9).seq().materialize();
        assert_eq!(g.n, 3);
        assert_eq!(g.edges.len(), 3);
        // every pair of vertices is joined by exactly one edge
        let mut pairs: Vec<(usize, usize)> = g
            .edges
            .iter()
            .map(|&(_, u, v)| (u.min(v), u.max(v)))
            .collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 3);
    }

    #[test]
    fn materialize_parallel_pair_is_a_multigraph() {
        let g = pair(CompKind::Parallel, 0.9).seq().materialize();
        assert_eq!(g.n, 2);
        assert_eq!(g.edges.len(), 2);
        let (_, u1, v1) = g.edges[0];
        let (_, u2, v2) = g.edges[1];
        assert_eq!((u1.min(v1), u1.max(v1)), (u2.min(v2), u2.max(v2)));
    }

    #[test]
    fn materialize_series_pair_is_a_path() {
        let g = pair(CompKind::Series, 0.9).seq().materialize();
        assert_eq!(g.n, 3);
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn generate_is_deterministic_and_valid() {
        for seed in 0..20 {
            let a = generate(9, seed).unwrap();
            let b = generate(9, seed).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            assert!(a.seq().validate().is_ok());
            for e in a.edges() {
                assert!((0.9..1.0).contains(&e.p), "p = {} out of range", e.p);
            }
        }
        let a = generate(9, 1).unwrap();
        let c = generate(9, 2).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn generate_rejects_tiny_m() {
        assert!(matches!(generate(1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut inst = generate(7, 42).unwrap();
        inst = inst.with_alpha(0.8).unwrap();
        inst = inst
            .with_extra_rows(vec![ExtraRow {
                coeffs: vec![(1, 1.0), (3, 2.5)],
                rhs: 2.0,
            }])
            .unwrap();
        let text = inst.to_json();
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(inst, back);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn duplicate_edge_id_is_a_parse_error() {
        let text = r#"{"m": 2,
            "edges": [{"id": 1, "p": 0.9}, {"id": 1, "p": 0.95}],
            "steps": [{"id": 3, "op": "S", "left": 1, "right": 2}],
            "alpha": 1.0, "extra_rows": []}"#;
        let err = Instance::from_json(text).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
        assert!(err.to_string().contains("edge id 1"), "{err}");
    }

    #[test]
    fn unknown_op_is_a_parse_error() {
        let text = r#"{"m": 2,
            "edges": [{"id": 1, "p": 0.9}, {"id": 2, "p": 0.95}],
            "steps": [{"id": 3, "op": "X", "left": 1, "right": 2}],
            "alpha": 1.0, "extra_rows": []}"#;
        let err = Instance::from_json(text).unwrap_err();
        assert!(err.to_string().contains("unknown op"), "{err}");
    }

    #[test]
    fn alpha_outside_unit_interval_is_rejected() {
        let inst = generate(4, 0).unwrap();
        assert!(inst.with_alpha(0.0).is_err());
        assert!(inst.with_alpha(1.2).is_err());
    }

    #[test]
    fn budget_uses_floor() {
        let inst = generate(5, 0).unwrap();
        assert_eq!(inst.with_alpha(0.6).unwrap().budget(), 3);
        assert_eq!(inst.with_alpha(0.5).unwrap().budget(), 2);
        assert_eq!(inst.budget(), 5);
        let ten = generate(10, 0).unwrap();
        // 0.7 * 10 must not round down to 6
        assert_eq!(ten.with_alpha(0.7).unwrap().budget(), 7);
    }

    #[test]
    fn mask_parsing() {
        assert_eq!(parse_mask("101", 3).unwrap(), vec![true, false, true]);
        assert!(parse_mask("10", 3).is_err());
        assert!(parse_mask("1a1", 3).is_err());
        assert_eq!(mask_to_string(&[true, false, true]), "101");
    }
}
