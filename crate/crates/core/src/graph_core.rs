//! Psi-decorated stable trees and tautological classes built from them.
//!
//! A [`DecoratedTree`] is a tree of vertices carrying a genus, whose
//! half-edges are either glued in pairs (edges) or are labelled legs, and
//! every half-edge carries a psi exponent.  A tree with psi exponents `p`
//! stands for the class `xi_{T*}(prod psi_h^{p(h)})` on the moduli space of
//! stable curves of total genus `g` with `N` markings.  No automorphism
//! factors are ever divided out.
//!
//! A [`TautClass`] is a finite linear combination of such trees with exact
//! rational coefficients, keyed by the canonical code of the (unrooted)
//! tree.  Terms that vanish for dimension reasons (psi degree at a vertex
//! above `3g(v)-3+n(v)`) and zero coefficients are never stored.

use std::collections::{BTreeMap, VecDeque};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{fmt_rational, parse_rational, Rational};

/// What a half-edge is attached to at its far end.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// A leg (marking) with the given label.
    Leg(u32),
    /// One half of an edge; the payload is the index of the partner half-edge.
    Edge(usize),
}

/// A half-edge: the vertex it belongs to, what it is, and its psi exponent.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HalfEdge {
    pub vertex: usize,
    pub slot: Slot,
    pub psi: u32,
}

/// A (possibly rooted) tree with genus-decorated vertices, labelled legs and
/// psi exponents on half-edges.
///
/// The same container is used for "shapes" during enumeration; there the
/// `psi` field holds whatever per-half-edge decoration the enumerator needs
/// and stability is not required.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct DecoratedTree {
    pub genera: Vec<u32>,
    pub half_edges: Vec<HalfEdge>,
    pub root: Option<usize>,
}

/// Canonical code of a decorated tree.  Two trees are isomorphic (by an
/// isomorphism respecting genera, leg labels, psi exponents and the root, if
/// any) exactly when their codes are equal.
pub type CanonicalCode = Vec<u32>;

impl DecoratedTree {
    /// A tree with the given vertex genera and no half-edges yet.
    pub fn new(genera: Vec<u32>) -> Self {
        DecoratedTree { genera, half_edges: Vec::new(), root: None }
    }

    /// A single vertex of genus `g` carrying legs `(label, psi)`.
    pub fn single_vertex(g: u32, legs: &[(u32, u32)]) -> Self {
        let mut t = DecoratedTree::new(vec![g]);
        for &(label, psi) in legs {
            t.add_leg(0, label, psi);
        }
        t
    }

    pub fn add_vertex(&mut self, g: u32) -> usize {
        self.genera.push(g);
        self.genera.len() - 1
    }

    /// Attaches leg `label` with psi exponent `psi` at `v`; returns its index.
    pub fn add_leg(&mut self, v: usize, label: u32, psi: u32) -> usize {
        self.half_edges.push(HalfEdge { vertex: v, slot: Slot::Leg(label), psi });
        self.half_edges.len() - 1
    }

    /// Joins `u` and `v` by an edge with psi exponents `pu` (at `u`) and `pv`
    /// (at `v`); returns the two half-edge indices.
    pub fn add_edge(&mut self, u: usize, v: usize, pu: u32, pv: u32) -> (usize, usize) {
        let a = self.half_edges.len();
        self.half_edges.push(HalfEdge { vertex: u, slot: Slot::Edge(a + 1), psi: pu });
        self.half_edges.push(HalfEdge { vertex: v, slot: Slot::Edge(a), psi: pv });
        (a, a + 1)
    }

    pub fn num_vertices(&self) -> usize {
        self.genera.len()
    }

    pub fn num_edges(&self) -> usize {
        self.half_edges.iter().filter(|h| matches!(h.slot, Slot::Edge(_))).count() / 2
    }

    pub fn num_legs(&self) -> usize {
        self.half_edges.iter().filter(|h| matches!(h.slot, Slot::Leg(_))).count()
    }

    pub fn total_genus(&self) -> u32 {
        self.genera.iter().sum()
    }

    /// Total psi exponent over all half-edges.
    pub fn psi_sum(&self) -> u32 {
        self.half_edges.iter().map(|h| h.psi).sum()
    }

    /// Cohomological degree of the class: number of edges plus psi degree.
    pub fn degree(&self) -> u32 {
        self.num_edges() as u32 + self.psi_sum()
    }

    /// Index of the half-edge of leg `label`.
    pub fn leg_half_edge(&self, label: u32) -> Option<usize> {
        self.half_edges.iter().position(|h| h.slot == Slot::Leg(label))
    }

    /// Sorted list of leg labels.
    pub fn leg_labels(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self
            .half_edges
            .iter()
            .filter_map(|h| match h.slot {
                Slot::Leg(l) => Some(l),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v
    }

    /// Half-edge indices incident to each vertex.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.genera.len()];
        for (i, h) in self.half_edges.iter().enumerate() {
            adj[h.vertex].push(i);
        }
        adj
    }

    /// Number of half-edges at each vertex.
    pub fn valences(&self) -> Vec<usize> {
        let mut val = vec![0; self.genera.len()];
        for h in &self.half_edges {
            val[h.vertex] += 1;
        }
        val
    }

    /// `3g(v) - 3 + n(v)` for every vertex.
    pub fn vertex_dims(&self) -> Vec<i64> {
        self.valences()
            .iter()
            .zip(&self.genera)
            .map(|(&n, &g)| 3 * g as i64 - 3 + n as i64)
            .collect()
    }

    /// True when some vertex carries more psi degree than its dimension, in
    /// which case the class vanishes.
    pub fn exceeds_vertex_dims(&self) -> bool {
        let mut psi = vec![0i64; self.genera.len()];
        for h in &self.half_edges {
            psi[h.vertex] += h.psi as i64;
        }
        psi.iter().zip(self.vertex_dims()).any(|(&p, d)| p > d)
    }

    /// Lists every violated structural invariant (empty when valid):
    /// connectedness, acyclicity, stability of every vertex, consistent edge
    /// pairing, and leg labels forming `1..=N` without repetition.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let nv = self.genera.len();
        if nv == 0 {
            out.push("tree has no vertices".to_string());
            return out;
        }
        for (i, h) in self.half_edges.iter().enumerate() {
            if h.vertex >= nv {
                out.push(format!("half-edge {i} points to missing vertex {}", h.vertex));
            }
            if let Slot::Edge(j) = h.slot {
                let ok = j < self.half_edges.len()
                    && j != i
                    && self.half_edges[j].slot == Slot::Edge(i);
                if !ok {
                    out.push(format!("half-edge {i} has an inconsistent partner {j}"));
                }
            }
        }
        if !out.is_empty() {
            return out;
        }
        if let Some(r) = self.root {
            if r >= nv {
                out.push(format!("root {r} is not a vertex"));
            }
        }
        let labels = self.leg_labels();
        for (k, &l) in labels.iter().enumerate() {
            if l != k as u32 + 1 {
                out.push(format!("leg labels are not 1..={}: found {:?}", labels.len(), labels));
                break;
            }
        }
        if self.num_edges() + 1 != nv {
            out.push(format!("graph has {} edges for {} vertices (not a tree)", self.num_edges(), nv));
        }
        let adj = self.adjacency();
        let mut seen = vec![false; nv];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &h in &adj[v] {
                if let Slot::Edge(j) = self.half_edges[h].slot {
                    let w = self.half_edges[j].vertex;
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            out.push("graph is disconnected".to_string());
        }
        for (v, (&g, n)) in self.genera.iter().zip(self.valences()).enumerate() {
            if 2 * g as i64 - 2 + n as i64 <= 0 {
                out.push(format!("vertex {v} unstable (g={g}, n={n})"));
            }
        }
        out
    }

    /// Vertex used as the base point of the canonical code: the root when
    /// present, otherwise the vertex carrying the smallest leg label.
    fn anchor(&self, root: Option<usize>) -> Option<usize> {
        if root.is_some() {
            return root;
        }
        self.half_edges
            .iter()
            .filter_map(|h| match h.slot {
                Slot::Leg(l) => Some((l, h.vertex)),
                _ => None,
            })
            .min()
            .map(|(_, v)| v)
    }

    fn encode_from(&self, adj: &[Vec<usize>], v: usize, up: Option<usize>, out: &mut Vec<u32>) {
        out.push(self.genera[v]);
        let mut legs: Vec<(u32, u32)> = Vec::new();
        let mut kids: Vec<Vec<u32>> = Vec::new();
        for &h in &adj[v] {
            if Some(h) == up {
                continue;
            }
            let he = &self.half_edges[h];
            match he.slot {
                Slot::Leg(l) => legs.push((l, he.psi)),
                Slot::Edge(j) => {
                    let mut blob = vec![he.psi, self.half_edges[j].psi];
                    self.encode_from(adj, self.half_edges[j].vertex, Some(j), &mut blob);
                    kids.push(blob);
                }
            }
        }
        legs.sort_unstable();
        kids.sort_unstable();
        out.push(legs.len() as u32);
        for (l, p) in legs {
            out.push(l);
            out.push(p);
        }
        out.push(kids.len() as u32);
        for k in kids {
            out.extend(k);
        }
    }

    /// Canonical code of the tree; the root (if any) is part of the code.
    pub fn canonical_code(&self) -> CanonicalCode {
        self.code_with_root(self.root)
    }

    /// Canonical code of the tree with its root forgotten (the code of
    /// [`DecoratedTree::unrooted`], without copying the tree).
    pub fn unrooted_code(&self) -> CanonicalCode {
        self.code_with_root(None)
    }

    fn code_with_root(&self, root: Option<usize>) -> CanonicalCode {
        let adj = self.adjacency();
        let rooted = root.is_some() as u32;
        match self.anchor(root) {
            Some(a) => {
                let mut code = vec![rooted];
                self.encode_from(&adj, a, None, &mut code);
                code
            }
            None => (0..self.genera.len())
                .map(|a| {
                    let mut code = vec![rooted];
                    self.encode_from(&adj, a, None, &mut code);
                    code
                })
                .min()
                .unwrap_or_default(),
        }
    }

    /// Rebuilds the tree described by a canonical code.
    pub fn from_code(code: &[u32]) -> Result<Self> {
        fn take(code: &[u32], pos: &mut usize) -> Result<u32> {
            let v = *code
                .get(*pos)
                .ok_or_else(|| Error::Parse("truncated canonical code".into()))?;
            *pos += 1;
            Ok(v)
        }
        fn build(t: &mut DecoratedTree, code: &[u32], pos: &mut usize) -> Result<usize> {
            let v = t.add_vertex(take(code, pos)?);
            let nl = take(code, pos)?;
            for _ in 0..nl {
                let l = take(code, pos)?;
                let p = take(code, pos)?;
                t.add_leg(v, l, p);
            }
            let nk = take(code, pos)?;
            for _ in 0..nk {
                let pu = take(code, pos)?;
                let pv = take(code, pos)?;
                let c = build(t, code, pos)?;
                t.add_edge(v, c, pu, pv);
            }
            Ok(v)
        }
        let mut pos = 0;
        let rooted = take(code, &mut pos)? == 1;
        let mut t = DecoratedTree::default();
        let r = build(&mut t, code, &mut pos)?;
        if pos != code.len() {
            return Err(Error::Parse("trailing data in canonical code".into()));
        }
        if rooted {
            t.root = Some(r);
        }
        Ok(t)
    }

    /// Canonical representative of the isomorphism class together with its
    /// code.  Isomorphic trees have identical canonical representatives.
    pub fn canonical_form(&self) -> (DecoratedTree, CanonicalCode) {
        let code = self.canonical_code();
        let t = DecoratedTree::from_code(&code).expect("canonical code is well formed");
        (t, code)
    }

    /// The same tree with the root forgotten.
    pub fn unrooted(&self) -> Self {
        DecoratedTree { root: None, ..self.clone() }
    }

    /// Replaces every leg label `l` by `f(l)`.
    pub fn map_labels(&self, f: impl Fn(u32) -> u32) -> Self {
        let mut t = self.clone();
        for h in &mut t.half_edges {
            if let Slot::Leg(l) = h.slot {
                h.slot = Slot::Leg(f(l));
            }
        }
        t
    }

    /// Orientation data with respect to the root (or `root` if given).
    pub fn rooted_view(&self, root: usize) -> Rooted {
        Rooted::new(self, root)
    }
}

/// Orientation of a tree away from a chosen root.
///
/// Levels follow the canonical convention: the root has level 1 and every
/// child sits one level below its mother.
#[derive(Clone, Debug)]
pub struct Rooted {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// Half-edge at `v` pointing towards the mother of `v`.
    pub up_half: Vec<Option<usize>>,
    /// Half-edge at the mother of `v` pointing towards `v`.
    pub down_half: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub level: Vec<u32>,
    /// Vertices in breadth-first order from the root.
    pub order: Vec<usize>,
    pub adjacency: Vec<Vec<usize>>,
}

impl Rooted {
    pub fn new(t: &DecoratedTree, root: usize) -> Self {
        let nv = t.num_vertices();
        let adjacency = t.adjacency();
        let mut parent = vec![None; nv];
        let mut up_half = vec![None; nv];
        let mut down_half = vec![None; nv];
        let mut children = vec![Vec::new(); nv];
        let mut level = vec![0u32; nv];
        let mut order = vec![root];
        level[root] = 1;
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            i += 1;
            for &h in &adjacency[v] {
                if Some(h) == up_half[v] {
                    continue;
                }
                if let Slot::Edge(j) = t.half_edges[h].slot {
                    let w = t.half_edges[j].vertex;
                    parent[w] = Some(v);
                    up_half[w] = Some(j);
                    down_half[w] = Some(h);
                    level[w] = level[v] + 1;
                    children[v].push(w);
                    order.push(w);
                }
            }
        }
        Rooted { root, parent, up_half, down_half, children, level, order, adjacency }
    }

    /// Largest canonical level.
    pub fn depth(&self) -> u32 {
        self.level.iter().copied().max().unwrap_or(0)
    }

    /// Half-edges of `H~`: edge half-edges pointing away from the root and
    /// legs with label at most `n_regular`, in index order.
    pub fn h_tilde(&self, t: &DecoratedTree, n_regular: u32) -> Vec<usize> {
        (0..t.half_edges.len())
            .filter(|&h| self.is_h_tilde(t, h, n_regular))
            .collect()
    }

    pub fn is_h_tilde(&self, t: &DecoratedTree, h: usize, n_regular: u32) -> bool {
        match t.half_edges[h].slot {
            Slot::Leg(l) => l <= n_regular,
            Slot::Edge(j) => self.up_half[t.half_edges[j].vertex] == Some(j),
        }
    }

    /// Vertex a half-edge of `H~` points to (`None` for legs).
    pub fn target(&self, t: &DecoratedTree, h: usize) -> Option<usize> {
        match t.half_edges[h].slot {
            Slot::Leg(_) => None,
            Slot::Edge(j) => Some(t.half_edges[j].vertex),
        }
    }

    /// Bitmask (bit `i-1` for leg `i`) of the regular legs in the subtree
    /// hanging below each vertex (the vertex itself included).
    pub fn subtree_leg_masks(&self, t: &DecoratedTree, n_regular: u32) -> Vec<u64> {
        let mut mask = vec![0u64; t.num_vertices()];
        for h in &t.half_edges {
            if let Slot::Leg(l) = h.slot {
                if l <= n_regular {
                    mask[h.vertex] |= 1 << (l - 1);
                }
            }
        }
        for &v in self.order.iter().rev() {
            if let Some(p) = self.parent[v] {
                mask[p] |= mask[v];
            }
        }
        mask
    }

    /// `I_h`: regular legs at or below the half-edge `h` of `H~`.
    pub fn leg_mask_of(&self, t: &DecoratedTree, h: usize, subtree: &[u64], n_regular: u32) -> u64 {
        match t.half_edges[h].slot {
            Slot::Leg(l) if l <= n_regular => 1 << (l - 1),
            Slot::Leg(_) => 0,
            Slot::Edge(j) => subtree[t.half_edges[j].vertex],
        }
    }

    /// Level of the vertex a half-edge is attached to.
    pub fn half_edge_level(&self, t: &DecoratedTree, h: usize) -> u32 {
        self.level[t.half_edges[h].vertex]
    }
}

/// One term of a class: a canonical (unrooted) tree and its coefficient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Term {
    pub tree: DecoratedTree,
    pub coeff: Rational,
}

/// A linear combination of psi-decorated stable trees on `M_{g,n}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TautClass {
    pub g: u32,
    pub n: u32,
    terms: BTreeMap<CanonicalCode, Term>,
}

impl TautClass {
    /// The zero class on `M_{g,n}`.
    pub fn zero(g: u32, n: u32) -> Self {
        TautClass { g, n, terms: BTreeMap::new() }
    }

    /// The class `coeff * [tree]`.
    pub fn from_tree(g: u32, n: u32, tree: &DecoratedTree, coeff: Rational) -> Self {
        let mut c = TautClass::zero(g, n);
        c.add_term(tree, coeff);
        c
    }

    /// Adds `coeff * [tree]`.  The root of `tree` is ignored, terms vanishing
    /// for dimension reasons are dropped and cancelling terms are removed.
    ///
    /// Panics if the tree does not live on this ambient space: that is a
    /// programming error, not a data error.
    pub fn add_term(&mut self, tree: &DecoratedTree, coeff: Rational) {
        assert_eq!(tree.total_genus(), self.g, "tree genus does not match ambient space");
        assert_eq!(tree.num_legs() as u32, self.n, "tree leg count does not match ambient space");
        if coeff.is_zero() || tree.exceeds_vertex_dims() {
            return;
        }
        let code = tree.unrooted_code();
        self.add_canonical(code, |code| DecoratedTree::from_code(code).expect("canonical code is well formed"), coeff);
    }

    /// Adds `coeff` to the term with the given code; `tree` produces the
    /// canonical tree when the term is new.
    fn add_canonical(&mut self, code: CanonicalCode, tree: impl FnOnce(&CanonicalCode) -> DecoratedTree, coeff: Rational) {
        match self.terms.get_mut(&code) {
            Some(t) => {
                t.coeff += coeff;
                if t.coeff.is_zero() {
                    self.terms.remove(&code);
                }
            }
            None => {
                let tree = tree(&code);
                self.terms.insert(code, Term { tree, coeff });
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in canonical-code order.
    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.values()
    }

    /// Coefficient of the (unrooted) tree, zero if absent.
    pub fn coeff_of(&self, tree: &DecoratedTree) -> Rational {
        let code = tree.unrooted_code();
        self.terms.get(&code).map(|t| t.coeff.clone()).unwrap_or_else(Rational::zero)
    }

    /// Degree if all terms share one degree (`None` for the zero class or an
    /// inhomogeneous class).
    pub fn degree(&self) -> Option<u32> {
        let mut it = self.terms.values().map(|t| t.tree.degree());
        let first = it.next()?;
        it.all(|d| d == first).then_some(first)
    }

    /// Dimension `3g - 3 + n` of the ambient space.
    pub fn ambient_dim(&self) -> i64 {
        3 * self.g as i64 - 3 + self.n as i64
    }

    pub fn add_assign(&mut self, other: &TautClass) {
        assert_eq!((self.g, self.n), (other.g, other.n), "ambient spaces differ");
        for (code, t) in &other.terms {
            self.add_canonical(code.clone(), |_| t.tree.clone(), t.coeff.clone());
        }
    }

    pub fn add_scaled(&mut self, other: &TautClass, s: &Rational) {
        assert_eq!((self.g, self.n), (other.g, other.n), "ambient spaces differ");
        if s.is_zero() {
            return;
        }
        for (code, t) in &other.terms {
            self.add_canonical(code.clone(), |_| t.tree.clone(), &t.coeff * s);
        }
    }

    /// JSON document `{"ambient":..,"terms":[..]}` (see [`ClassJson`]).
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("class serialises")
    }

    pub fn to_json_value(&self) -> ClassJson {
        ClassJson {
            ambient: AmbientJson { g: self.g, n: self.n },
            terms: self
                .terms
                .values()
                .map(|t| TermJson { coeff: fmt_rational(&t.coeff), tree: TreeJson::from_tree(&t.tree) })
                .collect(),
        }
    }

    /// Parses the JSON format produced by [`TautClass::to_json`]; every tree
    /// is validated and must live on the declared ambient space.
    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ClassJson = serde_json::from_str(s)?;
        TautClass::from_json_value(&doc)
    }

    pub fn from_json_value(doc: &ClassJson) -> Result<Self> {
        let (g, n) = (doc.ambient.g, doc.ambient.n);
        let mut c = TautClass::zero(g, n);
        for term in &doc.terms {
            let tree = term.tree.to_tree(n)?;
            let violations = tree.validate();
            if !violations.is_empty() {
                return Err(Error::InvalidTree(violations.join("; ")));
            }
            if tree.total_genus() != g || tree.num_legs() as u32 != n {
                return Err(Error::InvalidTree(format!("tree does not live on M_{{{g},{n}}}")));
            }
            c.add_term(&tree, parse_rational(&term.coeff)?);
        }
        Ok(c)
    }
}

/// `a + b`.
pub fn class_add(a: &TautClass, b: &TautClass) -> TautClass {
    let mut c = a.clone();
    c.add_assign(b);
    c
}

/// `s * a`.
pub fn class_scale(a: &TautClass, s: &Rational) -> TautClass {
    let mut c = TautClass::zero(a.g, a.n);
    c.add_scaled(a, s);
    c
}

/// `a - b`.
pub fn class_sub(a: &TautClass, b: &TautClass) -> TautClass {
    let mut c = a.clone();
    c.add_scaled(b, &-Rational::one());
    c
}

/// Multiplies by `psi_leg^power`.
pub fn psi_multiply(a: &TautClass, leg: u32, power: u32) -> TautClass {
    let mut c = TautClass::zero(a.g, a.n);
    for t in a.terms() {
        let mut tree = t.tree.clone();
        let h = tree.leg_half_edge(leg).expect("leg present on every term");
        tree.half_edges[h].psi += power;
        c.add_term(&tree, t.coeff.clone());
    }
    c
}

/// Renames legs: old label `i` becomes `perm[i-1]`.
pub fn relabel(a: &TautClass, perm: &[u32]) -> TautClass {
    let mut c = TautClass::zero(a.g, a.n);
    for t in a.terms() {
        c.add_term(&t.tree.map_labels(|l| perm[l as usize - 1]), t.coeff.clone());
    }
    c
}

/// Gluing product `c1 <> c2` for `c1` on `M_{g1,2}` and `c2` on
/// `M_{g2,m+1}`: leg 2 of `c1` is glued to leg 1 of `c2`, keeping the psi
/// exponents of the two glued legs on the new node.  The result lives on
/// `M_{g1+g2,m+1}` with leg 1 coming from `c1` and legs `2..=m+1` from `c2`.
pub fn diamond(c1: &TautClass, c2: &TautClass) -> TautClass {
    assert_eq!(c1.n, 2, "left factor must live on M_{{g,2}}");
    let mut out = TautClass::zero(c1.g + c2.g, c2.n);
    for t1 in c1.terms() {
        for t2 in c2.terms() {
            let mut t = t1.tree.clone();
            let off_v = t.num_vertices();
            let off_h = t.half_edges.len();
            t.genera.extend(&t2.tree.genera);
            for h in &t2.tree.half_edges {
                let slot = match h.slot {
                    Slot::Leg(l) => Slot::Leg(l),
                    Slot::Edge(j) => Slot::Edge(j + off_h),
                };
                t.half_edges.push(HalfEdge { vertex: h.vertex + off_v, slot, psi: h.psi });
            }
            let a = t1.tree.leg_half_edge(2).expect("leg 2 on left factor");
            let b = t2.tree.leg_half_edge(1).expect("leg 1 on right factor") + off_h;
            t.half_edges[a].slot = Slot::Edge(b);
            t.half_edges[b].slot = Slot::Edge(a);
            out.add_term(&t, &t1.coeff * &t2.coeff);
        }
    }
    out
}

/// Pullback along the map forgetting a new leg, inserted with label
/// `new_leg_position` (existing labels at or above it shift up by one).
///
/// For every term: the new leg is placed on each vertex in turn, and for
/// each half-edge `f` with psi exponent `p(f) >= 1` the term with a new
/// genus-0 vertex carrying the new leg inserted on `f` is subtracted, with
/// `p(f)` lowered by one and the fresh half-edges carrying no psi.
pub fn forgetful_pullback(a: &TautClass, new_leg_position: u32) -> TautClass {
    assert!(new_leg_position >= 1 && new_leg_position <= a.n + 1, "new leg position out of range");
    let mut out = TautClass::zero(a.g, a.n + 1);
    for t in a.terms() {
        for (tree, c) in pullback_tree(&t.tree, &t.coeff, new_leg_position) {
            out.add_term(&tree, c);
        }
    }
    out
}

/// The pullback formula for a single term, as an unreduced list of terms.
///
/// This also applies to formal terms that vanish for dimension reasons: the
/// pullback of such a term need not vanish formally (only in cohomology), so
/// identities between formal tree sums must pull back unreduced terms.
pub fn pullback_tree(tree: &DecoratedTree, coeff: &Rational, new_leg_position: u32) -> Vec<(DecoratedTree, Rational)> {
    let pos = new_leg_position;
    let mut out = Vec::new();
    let base = tree.map_labels(|l| if l >= pos { l + 1 } else { l });
    for v in 0..base.num_vertices() {
        let mut tv = base.clone();
        tv.add_leg(v, pos, 0);
        out.push((tv, coeff.clone()));
    }
    let neg = -coeff.clone();
    for f in 0..base.half_edges.len() {
        if base.half_edges[f].psi == 0 {
            continue;
        }
        let mut tf = base.clone();
        let w = tf.add_vertex(0);
        tf.half_edges[f].psi -= 1;
        tf.add_leg(w, pos, 0);
        match tf.half_edges[f].slot.clone() {
            Slot::Leg(l) => {
                tf.add_leg(w, l, 0);
                let idx = tf.half_edges.len();
                tf.half_edges.push(HalfEdge { vertex: w, slot: Slot::Edge(f), psi: 0 });
                tf.half_edges[f].slot = Slot::Edge(idx);
            }
            Slot::Edge(j) => {
                let idx = tf.half_edges.len();
                tf.half_edges.push(HalfEdge { vertex: w, slot: Slot::Edge(f), psi: 0 });
                tf.half_edges.push(HalfEdge { vertex: w, slot: Slot::Edge(j), psi: 0 });
                tf.half_edges[f].slot = Slot::Edge(idx);
                tf.half_edges[j].slot = Slot::Edge(idx + 1);
            }
        }
        out.push((tf, neg.clone()));
    }
    out
}

/// Push-forward of a psi-free class along the map forgetting `leg` (labels
/// above it shift down by one).  A term survives only when the vertex
/// carrying `leg` becomes unstable (genus 0 and three half-edges); that
/// vertex is then contracted, merging its two other half-edges.
pub fn forgetful_pushforward_nopsi(a: &TautClass, leg: u32) -> Result<TautClass> {
    if 2 * a.g as i64 - 2 + a.n as i64 - 1 <= 0 {
        return Err(Error::InvalidSpec(format!(
            "cannot forget a leg from M_{{{},{}}}: target unstable",
            a.g, a.n
        )));
    }
    let mut out = TautClass::zero(a.g, a.n - 1);
    for t in a.terms() {
        if t.tree.psi_sum() != 0 {
            return Err(Error::PsiPresent(format!("term with psi degree {}", t.tree.psi_sum())));
        }
        let tree = &t.tree;
        let h = tree.leg_half_edge(leg).expect("leg present on every term");
        let v = tree.half_edges[h].vertex;
        let adj = tree.adjacency();
        if tree.genera[v] != 0 || adj[v].len() != 3 {
            continue;
        }
        let others: Vec<usize> = adj[v].iter().copied().filter(|&x| x != h).collect();
        let (x, y) = (others[0], others[1]);
        let mut nt = tree.clone();
        match (tree.half_edges[x].slot.clone(), tree.half_edges[y].slot.clone()) {
            (Slot::Edge(px), Slot::Edge(py)) => {
                nt.half_edges[px].slot = Slot::Edge(py);
                nt.half_edges[py].slot = Slot::Edge(px);
            }
            (Slot::Edge(px), Slot::Leg(l)) | (Slot::Leg(l), Slot::Edge(px)) => {
                nt.half_edges[px].slot = Slot::Leg(l);
            }
            (Slot::Leg(_), Slot::Leg(_)) => unreachable!("stable target has more than one vertex here"),
        }
        let nt = remove_parts(&nt, &[v], &[h, x, y]);
        out.add_term(&nt.map_labels(|l| if l > leg { l - 1 } else { l }), t.coeff.clone());
    }
    Ok(out)
}

/// Deletes the listed vertices and half-edges, renumbering the rest.  The
/// caller is responsible for having re-linked any surviving half-edge whose
/// partner is deleted.
pub fn remove_parts(t: &DecoratedTree, dead_v: &[usize], dead_h: &[usize]) -> DecoratedTree {
    let mut hmap = vec![usize::MAX; t.half_edges.len()];
    let mut k = 0;
    for (i, m) in hmap.iter_mut().enumerate() {
        if !dead_h.contains(&i) {
            *m = k;
            k += 1;
        }
    }
    let mut vmap = vec![usize::MAX; t.num_vertices()];
    let mut k = 0;
    for (i, m) in vmap.iter_mut().enumerate() {
        if !dead_v.contains(&i) {
            *m = k;
            k += 1;
        }
    }
    let genera = (0..t.num_vertices()).filter(|v| !dead_v.contains(v)).map(|v| t.genera[v]).collect();
    let half_edges = t
        .half_edges
        .iter()
        .enumerate()
        .filter(|(i, _)| !dead_h.contains(i))
        .map(|(_, h)| HalfEdge {
            vertex: vmap[h.vertex],
            slot: match h.slot {
                Slot::Leg(l) => Slot::Leg(l),
                Slot::Edge(j) => Slot::Edge(hmap[j]),
            },
            psi: h.psi,
        })
        .collect();
    DecoratedTree { genera, half_edges, root: t.root.map(|r| vmap[r]) }
}

/// JSON form of a class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassJson {
    pub ambient: AmbientJson,
    pub terms: Vec<TermJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientJson {
    pub g: u32,
    pub n: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermJson {
    pub coeff: String,
    pub tree: TreeJson,
}

/// JSON form of a tree.  Half-edge ids live in one namespace: a leg's id is
/// its label `1..=N`, internal half-edges use ids above `N` and are listed
/// with their vertex in `half_edges`; `psi` is keyed by these ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeJson {
    pub vertices: Vec<VertexJson>,
    pub half_edges: Vec<HalfEdgeJson>,
    pub edges: Vec<[u32; 2]>,
    pub legs: Vec<LegJson>,
    pub psi: Vec<PsiJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexJson {
    pub id: u32,
    pub g: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfEdgeJson {
    pub id: u32,
    pub vertex: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegJson {
    pub label: u32,
    pub vertex: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiJson {
    pub half_edge_or_leg: u32,
    pub exp: u32,
}

impl TreeJson {
    pub fn from_tree(t: &DecoratedTree) -> Self {
        let n = t.num_legs() as u32;
        let mut ids = vec![0u32; t.half_edges.len()];
        let mut next = n + 1;
        for (i, h) in t.half_edges.iter().enumerate() {
            ids[i] = match h.slot {
                Slot::Leg(l) => l,
                Slot::Edge(_) => {
                    next += 1;
                    next - 1
                }
            };
        }
        let vertices = t.genera.iter().enumerate().map(|(i, &g)| VertexJson { id: i as u32, g }).collect();
        let mut half_edges = Vec::new();
        let mut edges = Vec::new();
        let mut legs = Vec::new();
        let mut psi = Vec::new();
        for (i, h) in t.half_edges.iter().enumerate() {
            match h.slot {
                Slot::Leg(l) => legs.push(LegJson { label: l, vertex: h.vertex as u32 }),
                Slot::Edge(j) => {
                    half_edges.push(HalfEdgeJson { id: ids[i], vertex: h.vertex as u32 });
                    if i < j {
                        edges.push([ids[i], ids[j]]);
                    }
                }
            }
            if h.psi > 0 {
                psi.push(PsiJson { half_edge_or_leg: ids[i], exp: h.psi });
            }
        }
        legs.sort_by_key(|l| l.label);
        psi.sort_by_key(|p| p.half_edge_or_leg);
        TreeJson { vertices, half_edges, edges, legs, psi }
    }

    /// Rebuilds a tree; `n` is the number of legs of the ambient space.
    pub fn to_tree(&self, n: u32) -> Result<DecoratedTree> {
        let bad = |m: String| Error::InvalidTree(m);
        let mut vid = BTreeMap::new();
        let mut genera = Vec::new();
        for v in &self.vertices {
            if vid.insert(v.id, genera.len()).is_some() {
                return Err(bad(format!("duplicate vertex id {}", v.id)));
            }
            genera.push(v.g);
        }
        let vertex = |id: u32| vid.get(&id).copied().ok_or_else(|| bad(format!("unknown vertex {id}")));
        let mut t = DecoratedTree::new(genera);
        let mut hid: BTreeMap<u32, usize> = BTreeMap::new();
        for l in &self.legs {
            if l.label == 0 || l.label > n {
                return Err(bad(format!("leg label {} outside 1..={n}", l.label)));
            }
            if hid.insert(l.label, t.add_leg(vertex(l.vertex)?, l.label, 0)).is_some() {
                return Err(bad(format!("duplicate leg {}", l.label)));
            }
        }
        let mut half_vertex = BTreeMap::new();
        for h in &self.half_edges {
            if h.id <= n || half_vertex.insert(h.id, vertex(h.vertex)?).is_some() {
                return Err(bad(format!("bad or duplicate half-edge id {}", h.id)));
            }
        }
        for &[a, b] in &self.edges {
            let va = *half_vertex.get(&a).ok_or_else(|| bad(format!("unknown half-edge {a}")))?;
            let vb = *half_vertex.get(&b).ok_or_else(|| bad(format!("unknown half-edge {b}")))?;
            let (ia, ib) = t.add_edge(va, vb, 0, 0);
            if hid.insert(a, ia).is_some() || hid.insert(b, ib).is_some() {
                return Err(bad(format!("half-edge used twice in edge [{a},{b}]")));
            }
        }
        if hid.len() != self.legs.len() + self.half_edges.len() {
            return Err(bad("half-edge listed without an edge".into()));
        }
        for p in &self.psi {
            let h = *hid
                .get(&p.half_edge_or_leg)
                .ok_or_else(|| bad(format!("psi on unknown half-edge {}", p.half_edge_or_leg)))?;
            t.half_edges[h].psi += p.exp;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, rat};
    use proptest::prelude::*;

    /// Vertex 0 (genus 1, leg 1) joined to vertex 1 (genus 0, legs 2, 3).
    fn two_vertex() -> DecoratedTree {
        let mut t = DecoratedTree::new(vec![1, 0]);
        t.add_leg(0, 1, 0);
        t.add_leg(1, 2, 0);
        t.add_leg(1, 3, 0);
        t.add_edge(0, 1, 0, 0);
        t
    }

    #[test]
    fn validate_reports_instability() {
        let t = DecoratedTree::single_vertex(0, &[(1, 0), (2, 0)]);
        let v = t.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("vertex 0 unstable"));
        assert!(two_vertex().validate().is_empty());
    }

    #[test]
    fn validate_reports_cycles_and_labels() {
        let mut t = DecoratedTree::new(vec![1, 1]);
        t.add_edge(0, 1, 0, 0);
        t.add_edge(0, 1, 0, 0);
        t.add_leg(0, 2, 0);
        let v = t.validate();
        assert!(v.iter().any(|s| s.contains("not a tree")));
        assert!(v.iter().any(|s| s.contains("leg labels")));
    }

    #[test]
    fn degree_counts_edges_and_psi() {
        let mut t = two_vertex();
        t.half_edges[0].psi = 2;
        assert_eq!(t.degree(), 3);
    }

    #[test]
    fn codes_identify_isomorphic_trees() {
        // Same tree, different vertex numbering and half-edge order.
        let mut t = DecoratedTree::new(vec![0, 1]);
        t.add_edge(1, 0, 0, 0);
        t.add_leg(0, 3, 0);
        t.add_leg(1, 1, 0);
        t.add_leg(0, 2, 0);
        assert_eq!(t.canonical_code(), two_vertex().canonical_code());
        // Moving psi to the other side of the edge gives a different tree.
        let mut a = two_vertex();
        let mut b = two_vertex();
        a.half_edges[3].psi = 1;
        b.half_edges[4].psi = 1;
        assert_ne!(a.canonical_code(), b.canonical_code());
        // A root is part of the code.
        let mut r = two_vertex();
        r.root = Some(1);
        assert_ne!(r.canonical_code(), two_vertex().canonical_code());
    }

    #[test]
    fn diamond_glues_legs() {
        let c1 = TautClass::from_tree(1, 2, &DecoratedTree::single_vertex(1, &[(1, 0), (2, 1)]), rat(2));
        let c2 = TautClass::from_tree(0, 3, &DecoratedTree::single_vertex(0, &[(1, 0), (2, 0), (3, 0)]), rat(3));
        let d = diamond(&c1, &c2);
        assert_eq!((d.g, d.n), (1, 3));
        let mut expect = two_vertex();
        expect.half_edges[3].psi = 1;
        assert_eq!(d.coeff_of(&expect), rat(6));
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn pullback_of_psi_power() {
        // pi^* psi_1 on M_{1,1} -> M_{1,2}: psi_1 - D, D the genus-0 bubble
        // carrying legs 1 and 2.
        let a = TautClass::from_tree(1, 1, &DecoratedTree::single_vertex(1, &[(1, 1)]), rat(1));
        let b = forgetful_pullback(&a, 2);
        assert_eq!(b.len(), 2);
        assert_eq!(b.coeff_of(&DecoratedTree::single_vertex(1, &[(1, 1), (2, 0)])), rat(1));
        let mut d = DecoratedTree::new(vec![1, 0]);
        d.add_leg(1, 1, 0);
        d.add_leg(1, 2, 0);
        d.add_edge(0, 1, 0, 0);
        assert_eq!(b.coeff_of(&d), rat(-1));
    }

    #[test]
    fn pullback_inserts_label_and_shifts() {
        let a = TautClass::from_tree(0, 3, &DecoratedTree::single_vertex(0, &[(1, 0), (2, 0), (3, 0)]), rat(1));
        let b = forgetful_pullback(&a, 2);
        assert_eq!(b.n, 4);
        assert_eq!(b.coeff_of(&DecoratedTree::single_vertex(0, &[(1, 0), (2, 0), (3, 0), (4, 0)])), rat(1));
    }

    #[test]
    fn pushforward_contracts_trivalent_vertex() {
        // Boundary divisor {1,2 | 3,4,5} on M_{0,5}, forgetting leg 2:
        // the bubble is contracted and leg 1 slides over.
        let mut t = DecoratedTree::new(vec![0, 0]);
        t.add_leg(0, 1, 0);
        t.add_leg(0, 2, 0);
        for l in 3..=5 {
            t.add_leg(1, l, 0);
        }
        t.add_edge(0, 1, 0, 0);
        let a = TautClass::from_tree(0, 5, &t, rat(1));
        let b = forgetful_pushforward_nopsi(&a, 2).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.coeff_of(&DecoratedTree::single_vertex(0, &[(1, 0), (2, 0), (3, 0), (4, 0)])), rat(1));
        // Forgetting leg 3 keeps the big vertex stable: zero.
        assert!(forgetful_pushforward_nopsi(&a, 3).unwrap().is_zero());
        // Psi factors are rejected.
        let p = psi_multiply(&a, 3, 1);
        assert!(!p.is_zero());
        assert!(matches!(forgetful_pushforward_nopsi(&p, 2), Err(Error::PsiPresent(_))));
    }

    #[test]
    fn dimension_filter_drops_terms() {
        let c = TautClass::from_tree(0, 3, &DecoratedTree::single_vertex(0, &[(1, 1), (2, 0), (3, 0)]), rat(1));
        assert!(c.is_zero());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut t = two_vertex();
        t.half_edges[3].psi = 1;
        t.half_edges[1].psi = 1;
        let mut c = TautClass::from_tree(1, 3, &t, frac(-3, 7));
        c.add_term(&DecoratedTree::single_vertex(1, &[(1, 2), (2, 0), (3, 0)]), rat(5));
        let s = c.to_json();
        let back = TautClass::from_json(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), s);
    }

    #[test]
    fn json_rejects_unstable_trees() {
        let s = r#"{"ambient":{"g":0,"n":2},"terms":[{"coeff":"1/1","tree":{"vertices":[{"id":0,"g":0}],"half_edges":[],"edges":[],"legs":[{"label":1,"vertex":0},{"label":2,"vertex":0}],"psi":[]}}]}"#;
        assert!(matches!(TautClass::from_json(s), Err(Error::InvalidTree(_))));
    }

    /// Random stable tree on `M_{g,n}` built by attaching vertices one by one.
    pub(crate) fn arb_tree() -> impl Strategy<Value = DecoratedTree> {
        (1usize..5, prop::collection::vec((0u32..2, 0usize..100, 0u32..3), 4), prop::collection::vec((0usize..100, 0u32..3), 6))
            .prop_map(|(nv, vs, legs)| {
                let mut t = DecoratedTree::new(vec![]);
                for (i, &(g, p, psi)) in vs.iter().take(nv).enumerate() {
                    t.add_vertex(g);
                    if i > 0 {
                        t.add_edge(p % i, i, psi, 0);
                    }
                }
                let mut label = 0;
                for &(v, psi) in &legs {
                    label += 1;
                    t.add_leg(v % nv, label, psi);
                }
                // Stabilise: add legs to unstable vertices.
                let val = t.valences();
                for v in 0..nv {
                    let mut need = 3 - (2 * t.genera[v] as i64 + val[v] as i64).min(3);
                    while need > 0 {
                        label += 1;
                        t.add_leg(v, label, 0);
                        need -= 1;
                    }
                }
                t
            })
    }

    proptest! {
        #[test]
        fn canonical_code_is_invariant_under_renumbering(t in arb_tree(), seed in 0u64..1000) {
            prop_assert!(t.validate().is_empty());
            // Permute vertices by a seed-derived rotation and reverse half-edges.
            let nv = t.num_vertices();
            let shift = (seed as usize) % nv;
            let vmap = |v: usize| (v + shift) % nv;
            let nh = t.half_edges.len();
            let hmap = |h: usize| nh - 1 - h;
            let mut genera = vec![0; nv];
            for v in 0..nv { genera[vmap(v)] = t.genera[v]; }
            let mut hs = vec![HalfEdge { vertex: 0, slot: Slot::Leg(0), psi: 0 }; nh];
            for (i, h) in t.half_edges.iter().enumerate() {
                hs[hmap(i)] = HalfEdge {
                    vertex: vmap(h.vertex),
                    slot: match h.slot { Slot::Leg(l) => Slot::Leg(l), Slot::Edge(j) => Slot::Edge(hmap(j)) },
                    psi: h.psi,
                };
            }
            let u = DecoratedTree { genera, half_edges: hs, root: None };
            prop_assert_eq!(u.canonical_code(), t.canonical_code());
            let (c, code) = t.canonical_form();
            prop_assert_eq!(c.canonical_code(), code);
        }

        #[test]
        fn class_json_round_trip(t in arb_tree(), num in -50i64..50, den in 1i64..30) {
            let n = t.num_legs() as u32;
            let c = TautClass::from_tree(t.total_genus(), n, &t, frac(num, den));
            let s = c.to_json();
            let back = TautClass::from_json(&s).unwrap();
            prop_assert_eq!(back.to_json(), s);
            prop_assert_eq!(back, c);
        }

        #[test]
        fn class_addition_laws(t1 in arb_tree(), a in -5i64..5, b in -5i64..5) {
            let n = t1.num_legs() as u32;
            let g = t1.total_genus();
            let x = TautClass::from_tree(g, n, &t1, rat(a));
            let y = TautClass::from_tree(g, n, &DecoratedTree::single_vertex(g, &(1..=n).map(|l| (l, 0)).collect::<Vec<_>>()), rat(b));
            prop_assert_eq!(class_add(&x, &y), class_add(&y, &x));
            prop_assert!(class_sub(&x, &x).is_zero());
            let s = class_scale(&class_add(&x, &y), &frac(2, 3));
            prop_assert_eq!(s, class_add(&class_scale(&x, &frac(2, 3)), &class_scale(&y, &frac(2, 3))));
        }
    }
}
