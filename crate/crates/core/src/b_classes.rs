//! The classes `B^m_{g,d}` and their relatives.
//!
//! Three independent constructions are provided:
//!
//! * [`b_class_definition`]: the defining sum over balanced, complete and
//!   admissible rooted trees with extra legs, each pushed forward by
//!   forgetting the extra legs (string equation at every vertex, then
//!   contraction of the potentially unstable vertices);
//! * [`b_class_fast`]: the closed formula summing over stable rooted trees
//!   with coefficients `C_lvl * C_str`;
//! * [`tilde_b_class`]: the coefficient of `x^d` in the generating class
//!   `P_{g,n,m}`, together with [`tilde_b_class_pushforward`] which computes
//!   the same class from its definition by push-forwards.
//!
//! Also here: the chain classes `Gamma^{g,m}_{d|k}`, `gamma^g_{d|k}`, their
//! combination appearing in the one-point case, and the Liu–Pandharipande
//! relations as formal classes.
//!
//! Conventions: regular legs are `1..=n`, frozen legs `n+1..=n+m` and sit at
//! the root; `H~` is the set of edge half-edges pointing away from the root
//! together with the regular legs; for `h` in `H~`, `I_h` is the set of
//! regular legs at or below `h`.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph_core::{pullback_tree, remove_parts, DecoratedTree, Rooted, Slot, TautClass};
use crate::rational::{factorial, falling, sign, Rational};
use crate::tree_enum::{enum_admissible, enum_chains, enum_levels, enum_p, enum_srt, potentially_unstable, SrtOptions};

/// Parameters `(g, n, m, d)` of a class `B^m_{g,d}` on `M_{g,n+m}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BSpec {
    pub g: u32,
    pub n: u32,
    pub m: u32,
    pub d: Vec<u32>,
}

impl BSpec {
    /// Checks `n >= 1`, `|d| = n` and that `M_{g,n+m}` is stable.
    pub fn new(g: u32, n: u32, m: u32, d: Vec<u32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("n must be at least 1".into()));
        }
        if d.len() != n as usize {
            return Err(Error::InvalidSpec(format!("expected {n} exponents, got {}", d.len())));
        }
        if n > 63 {
            return Err(Error::InvalidSpec("at most 63 regular legs are supported".into()));
        }
        if 2 * g as i64 - 2 + (n + m) as i64 <= 0 {
            return Err(Error::InvalidSpec(format!("M_{{{g},{}}} is not stable", n + m)));
        }
        Ok(BSpec { g, n, m, d })
    }

    pub fn sum_d(&self) -> u32 {
        self.d.iter().sum()
    }

    /// Number of markings of the ambient space.
    pub fn num_legs(&self) -> u32 {
        self.n + self.m
    }

    /// Dimension of the ambient space.
    pub fn ambient_dim(&self) -> i64 {
        3 * self.g as i64 - 3 + self.num_legs() as i64
    }
}

/// Pushes `prod psi_i^{exps_i}` forward along the map forgetting `forget`
/// further points (which carry no psi):
/// `sum_p forget! / prod (exps_i - p_i)! * prod psi_i^{p_i}` over
/// `0 <= p_i <= exps_i` with `sum (exps_i - p_i) = forget`.
///
/// `forget = 0` is the identity.  This is the formula for a stable target;
/// for a target vertex of genus 0 with two special points see
/// [`unstable_string_contracts`].
pub fn string_pushforward(exps: &[u32], forget: u32) -> Vec<(Vec<u32>, BigInt)> {
    let total: u32 = exps.iter().sum();
    if forget > total {
        return Vec::new();
    }
    let f = factorial(forget as u64);
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(exps.len());
    fn rec(exps: &[u32], i: usize, left: u32, f: &BigInt, cur: &mut Vec<u32>, out: &mut Vec<(Vec<u32>, BigInt)>) {
        if i == exps.len() {
            if left == 0 {
                let mut den = BigInt::one();
                for (q, p) in exps.iter().zip(cur.iter()) {
                    den *= factorial((q - p) as u64);
                }
                out.push((cur.clone(), f / den));
            }
            return;
        }
        let rest: u32 = exps[i + 1..].iter().sum();
        // Amount taken from this exponent: at most exps[i], at least what the
        // remaining exponents cannot absorb.
        let lo = left.saturating_sub(rest);
        for take in lo..=left.min(exps[i]) {
            cur.push(exps[i] - take);
            rec(exps, i + 1, left - take, f, cur, out);
            cur.pop();
        }
    }
    rec(exps, 0, forget, &f, &mut cur, &mut out);
    out
}

/// The formal convention for a genus-0 vertex which, after forgetting
/// `forget` points, keeps only two special points one of which carries
/// `psi^q1`: the push-forward is the formal class `psi^{-1}` (and the vertex
/// is contracted) exactly when `q1 + 1 = forget`, and zero otherwise.
pub fn unstable_string_contracts(q1: u32, forget: u32) -> bool {
    q1 + 1 == forget
}

/// Rooted view together with the data shared by the tree-sum formulas.
struct TreeData {
    r: Rooted,
    /// `H~`, in index order.
    hs: Vec<usize>,
    /// Position of each half-edge in `hs`.
    pos: Vec<Option<usize>>,
    /// `I_h` for each element of `hs`.
    masks: Vec<u64>,
}

impl TreeData {
    fn new(t: &DecoratedTree, n: u32) -> Self {
        let r = t.rooted_view(t.root.expect("rooted tree"));
        let hs = r.h_tilde(t, n);
        let mut pos = vec![None; t.half_edges.len()];
        for (i, &h) in hs.iter().enumerate() {
            pos[h] = Some(i);
        }
        let sub = r.subtree_leg_masks(t, n);
        let masks = hs.iter().map(|&h| r.leg_mask_of(t, h, &sub, n)).collect();
        TreeData { r, hs, pos, masks }
    }

    /// `H~` half-edges attached to `v`, as indices into `hs`.
    fn at_vertex(&self, v: usize) -> Vec<usize> {
        self.r.adjacency[v].iter().filter_map(|&h| self.pos[h]).collect::<Vec<_>>().tap_sort()
    }
}

trait TapSort {
    fn tap_sort(self) -> Self;
}

impl TapSort for Vec<usize> {
    fn tap_sort(mut self) -> Self {
        self.sort_unstable();
        self
    }
}

/// Applies independent string push-forwards at several vertices.  `jobs`
/// lists `(H~ indices at the vertex, number of points forgotten there)`;
/// `exps` holds the current exponents on `H~`.  Returns every resulting
/// exponent vector with its integer coefficient.
fn pushforward_at_vertices(exps: &[u32], jobs: &[(Vec<usize>, u32)]) -> Vec<(Vec<u32>, BigInt)> {
    let mut acc = vec![(exps.to_vec(), BigInt::one())];
    for (idx, forget) in jobs {
        if *forget == 0 {
            continue;
        }
        let local: Vec<u32> = idx.iter().map(|&i| exps[i]).collect();
        let images = string_pushforward(&local, *forget);
        if images.is_empty() {
            return Vec::new();
        }
        let mut next = Vec::with_capacity(acc.len() * images.len());
        for (e, c) in &acc {
            for (img, ci) in &images {
                let mut e2 = e.clone();
                for (k, &i) in idx.iter().enumerate() {
                    e2[i] = img[k];
                }
                next.push((e2, c * ci));
            }
        }
        acc = next;
    }
    acc
}

/// Copy of `t` with `exps` written on `H~` and zero on every other half-edge.
fn with_exponents(t: &DecoratedTree, td: &TreeData, exps: &[u32]) -> DecoratedTree {
    let mut out = t.clone();
    for h in &mut out.half_edges {
        h.psi = 0;
    }
    for (i, &h) in td.hs.iter().enumerate() {
        out.half_edges[h].psi = exps[i];
    }
    out
}

/// Contracts the listed vertices, each of which has exactly two half-edges:
/// one towards its mother and one in `H~`.  The half-edge at the mother side
/// keeps its psi exponent and is joined to whatever the `H~` half-edge was
/// joined to.  Vertices must be given from the root downwards.
fn contract_two_valent(t: &DecoratedTree, r: &Rooted, vs: &[usize], n: u32) -> DecoratedTree {
    let mut out = t.clone();
    let mut dead_h = Vec::new();
    for &v in vs {
        let theta = r.up_half[v].expect("non-root vertex");
        let down = *r.adjacency[v]
            .iter()
            .find(|&&h| r.is_h_tilde(t, h, n))
            .expect("two-valent vertex has a downward half-edge");
        let mother_side = match out.half_edges[theta].slot {
            Slot::Edge(j) => j,
            Slot::Leg(_) => unreachable!("up half-edge is an edge"),
        };
        match out.half_edges[down].slot.clone() {
            Slot::Leg(l) => out.half_edges[mother_side].slot = Slot::Leg(l),
            Slot::Edge(c) => {
                out.half_edges[mother_side].slot = Slot::Edge(c);
                out.half_edges[c].slot = Slot::Edge(mother_side);
            }
        }
        dead_h.push(theta);
        dead_h.push(down);
    }
    remove_parts(&out, vs, &dead_h)
}

/// `B^m_{g,d}` from its definition: the sum over balanced, complete,
/// admissible rooted trees with extra legs of `(-1)^{deg(T)-1} e_*[T, d]`.
///
/// The extra legs are encoded by the exponent `q(h)` on every downward edge
/// half-edge `h` (`q(h)+1` extra legs at the vertex below `h`).  The
/// push-forward `e_*` forgets them: the string equation at every non-root
/// vertex that is not potentially unstable, and contraction of the
/// potentially unstable ones (which requires equal decorations on both
/// sides of such a vertex).
pub fn b_class_definition(spec: &BSpec) -> TautClass {
    let (g, n, m) = (spec.g, spec.n, spec.m);
    let sd = spec.sum_d();
    // Every non-root vertex which is not potentially unstable forgets at
    // least one point and so uses up at least one unit of psi degree.
    let trees = enum_admissible(g, n, m, &spec.d, Some(sd as usize), true);
    trees
        .par_iter()
        .map(|t| definition_term(spec, t))
        .reduce(|| TautClass::zero(g, n + m), |mut a, b| {
            a.add_assign(&b);
            a
        })
}

fn definition_term(spec: &BSpec, t: &DecoratedTree) -> TautClass {
    let (g, n, m) = (spec.g, spec.n, spec.m);
    let mut out = TautClass::zero(g, n + m);
    let td = TreeData::new(t, n);
    let r = &td.r;
    let exps: Vec<u32> = td.hs.iter().map(|&h| t.half_edges[h].psi).collect();
    let mut jobs = Vec::new();
    let mut pu = Vec::new();
    for &v in &r.order {
        if v == r.root {
            continue;
        }
        let theta_q = t.half_edges[r.down_half[v].unwrap()].psi;
        if potentially_unstable(t, r, v, n) {
            let idx = td.at_vertex(v);
            if !unstable_string_contracts(exps[idx[0]], theta_q + 1) {
                return out;
            }
            pu.push(v);
        } else {
            jobs.push((td.at_vertex(v), theta_q + 1));
        }
    }
    let s = sign(r.depth() as i64 - 1);
    for (e, c) in pushforward_at_vertices(&exps, &jobs) {
        let tree = with_exponents(t, &td, &e);
        let tree = if pu.is_empty() { tree } else { contract_two_valent(&tree, r, &pu, n) };
        out.add_term(&tree, &s * Rational::from_integer(c));
    }
    out
}

/// `C_lvl(T, p)`: the signed count `sum (-1)^{deg(l)-1}` of `p`-admissible
/// level functions.  `p` is indexed like [`Rooted::h_tilde`].
pub fn c_lvl(t: &DecoratedTree, n: u32, m: u32, p: &[u32]) -> i64 {
    let td = TreeData::new(t, n);
    let levels = enum_levels(t, &td.r);
    c_lvl_with(t, &td, &levels, m, p)
}

fn c_lvl_with(t: &DecoratedTree, td: &TreeData, levels: &[Vec<u32>], m: u32, p: &[u32]) -> i64 {
    let mut total = 0i64;
    for l in levels {
        if level_admissible(t, td, l, m, p) {
            let deg = *l.iter().max().unwrap();
            total += if deg % 2 == 1 { 1 } else { -1 };
        }
    }
    total
}

/// The `p`-admissibility inequalities for `1 <= i < deg(l)`: the degree of
/// the class of the tree cut at level `i`,
/// `sum_{h in H~, l(h) <= i} p(h) + #{edges with both ends at levels <= i}`,
/// is at most `2 sum_{l(v) <= i} g(v) - 2 + m`.
///
/// An edge is counted when its lower vertex lies at level `<= i`.  Counting
/// it as soon as its upper end lies at level `< i` agrees with this for level
/// functions that step by one along every edge, but not in general, and then
/// disagrees with the push-forward definition.
fn level_admissible(t: &DecoratedTree, td: &TreeData, l: &[u32], m: u32, p: &[u32]) -> bool {
    let deg = *l.iter().max().unwrap();
    for i in 1..deg {
        let mut lhs = 0i64;
        for (k, &h) in td.hs.iter().enumerate() {
            if l[t.half_edges[h].vertex] <= i {
                lhs += p[k] as i64;
            }
            if let Some(c) = td.r.target(t, h) {
                if l[c] <= i {
                    lhs += 1;
                }
            }
        }
        let genus: i64 = (0..t.num_vertices()).filter(|&v| l[v] <= i).map(|v| t.genera[v] as i64).sum();
        if lhs > 2 * genus - 2 + m as i64 {
            return false;
        }
    }
    true
}

/// `C_str(T, p, d)`: zero unless `|E| + sum p = sum d`; otherwise
/// `prod_h (sum_{i in I_h} (d_i+1) - sum_{h' below h} (p(h')+1))_{(p(h)+1)}`
/// divided by `prod (d_i+1)!`, with `(a)_(b)` the falling factorial.
pub fn c_str(t: &DecoratedTree, n: u32, p: &[u32], d: &[u32]) -> Rational {
    let td = TreeData::new(t, n);
    c_str_with(t, &td, p, d)
}

fn c_str_with(t: &DecoratedTree, td: &TreeData, p: &[u32], d: &[u32]) -> Rational {
    let sd: u32 = d.iter().sum();
    if t.num_edges() as u32 + p.iter().sum::<u32>() != sd {
        return Rational::zero();
    }
    let r = &td.r;
    // below[v]: sum of p+1 over the H~ half-edges attached in the subtree of v.
    let mut below = vec![0i64; t.num_vertices()];
    for (k, &h) in td.hs.iter().enumerate() {
        below[t.half_edges[h].vertex] += p[k] as i64 + 1;
    }
    for &v in r.order.iter().rev() {
        if let Some(par) = r.parent[v] {
            below[par] += below[v];
        }
    }
    let mut num = BigInt::one();
    for (k, &h) in td.hs.iter().enumerate() {
        let avail: i64 = (0..64).filter(|i| td.masks[k] >> i & 1 == 1).map(|i| d[i] as i64 + 1).sum();
        let strict = match r.target(t, h) {
            Some(c) => below[c],
            None => 0,
        };
        num *= falling(avail - strict, p[k] as u64 + 1);
        if num.is_zero() {
            return Rational::zero();
        }
    }
    let mut den = BigInt::one();
    for &di in d {
        den *= factorial(di as u64 + 1);
    }
    Rational::new(num, den)
}

/// `B^m_{g,d}` from the closed formula: the sum over stable rooted trees and
/// exponents `p` on `H~` with `|E| + sum p = sum d` of
/// `C_lvl(T,p) C_str(T,p,d) [T,p]`.
pub fn b_class_fast(spec: &BSpec) -> TautClass {
    let (g, n, m) = (spec.g, spec.n, spec.m);
    let sd = spec.sum_d();
    // C_str vanishes unless every edge h has sum_{I_h} d >= 1 + #edges below
    // h, and C_lvl vanishes on trees with edges unless 2 g(root) - 2 + m >= 0
    // (the admissibility inequality at level 1).
    let opts = SrtOptions { max_edges: Some(sd as usize), leafy: true, leg_budget: Some(&spec.d), root_level_m: Some(m) };
    let trees = enum_srt(g, n, m, opts);
    trees
        .par_iter()
        .map(|t| {
            let mut out = TautClass::zero(g, n + m);
            let td = TreeData::new(t, n);
            let levels = enum_levels(t, &td.r);
            for p in enum_p(t, &td.hs, sd - t.num_edges() as u32) {
                let cs = c_str_with(t, &td, &p, &spec.d);
                if cs.is_zero() {
                    continue;
                }
                let cl = c_lvl_with(t, &td, &levels, m, &p);
                if cl == 0 {
                    continue;
                }
                out.add_term(&with_exponents(t, &td, &p), cs * Rational::from_integer(cl.into()));
            }
            out
        })
        .reduce(|| TautClass::zero(g, n + m), |mut a, b| {
            a.add_assign(&b);
            a
        })
}

/// Coefficient of `prod x_i^{target_i}` in `prod_k (sum_{i in masks_k} x_i)^{powers_k}`.
pub fn monomial_coefficient(masks: &[u64], powers: &[u32], target: &[u32]) -> BigInt {
    let mut poly: HashMap<Vec<u32>, BigInt> = HashMap::new();
    poly.insert(vec![0; target.len()], BigInt::one());
    for (&mask, &pw) in masks.iter().zip(powers) {
        for _ in 0..pw {
            let mut next: HashMap<Vec<u32>, BigInt> = HashMap::new();
            for (mono, c) in &poly {
                for (i, &cap) in target.iter().enumerate() {
                    if mask >> i & 1 == 1 && mono[i] < cap {
                        let mut m2 = mono.clone();
                        m2[i] += 1;
                        *next.entry(m2).or_insert_with(BigInt::zero) += c;
                    }
                }
            }
            poly = next;
            if poly.is_empty() {
                return BigInt::zero();
            }
        }
    }
    poly.get(target).cloned().unwrap_or_else(BigInt::zero)
}

/// [`monomial_coefficient`] for a laminar family of masks (any two are
/// nested or disjoint), such as the sets `I_h` of a rooted tree.
pub fn laminar_coefficient(masks: &[u64], powers: &[u32], target: &[u32]) -> BigInt {
    let fact = factorials(target.iter().map(|&t| t as u64).sum());
    Laminar::new(masks, target, &fact).coefficient(powers)
}

/// The nesting forest of a laminar family of masks with a fixed target,
/// prepared once so that the coefficient can be evaluated for many powers.
///
/// Equal masks are merged by adding their powers.  A set `S` of power `a_S`
/// receives `u_S = sum_{i in S} t_i - sum_{S' subset of S} a_{S'}` from the
/// sets strictly containing it, and the coefficient is the product over all
/// sets of the multinomial distributing `u_S + a_S` among the maximal
/// proper subsets of `S` (each taking its own `u`) and the variables of `S`
/// outside them (each taking its target).  The whole index set acts as a
/// top set (node 0) of power 0 receiving nothing.
struct Laminar<'a> {
    /// Node of each input mask (`None` for the empty mask).
    node_of: Vec<Option<usize>>,
    /// Popcount of each input mask, for ordering inner sets first.
    sizes: Vec<u32>,
    /// Target weight `sum_{i in S} t_i` of each node.
    weight: Vec<u64>,
    /// Nodes contained in each node, itself included (bitset).
    inside: Vec<u64>,
    /// Maximal proper subsets of each node (bitset).
    children: Vec<u64>,
    /// `prod t_i!` over the variables of each node outside its children.
    free_den: Vec<BigInt>,
    /// Factorials up to at least the total target.
    fact: &'a [BigInt],
}

/// Indices of the set bits, in increasing order.
fn bits(mut set: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        (set != 0).then(|| {
            let i = set.trailing_zeros() as usize;
            set &= set - 1;
            i
        })
    })
}

/// `0!, 1!, ..., k!`.
fn factorials(k: u64) -> Vec<BigInt> {
    let mut fact = vec![BigInt::one()];
    for i in 1..=k {
        let next = &fact[i as usize - 1] * i;
        fact.push(next);
    }
    fact
}

impl<'a> Laminar<'a> {
    /// `fact` must hold the factorials up to `sum target`.
    fn new(masks: &[u64], target: &[u32], fact: &'a [BigInt]) -> Self {
        let all = if target.len() >= 64 { u64::MAX } else { (1u64 << target.len()) - 1 };
        let mut nodes = vec![all];
        let node_of: Vec<Option<usize>> = masks
            .iter()
            .map(|&mask| {
                (mask != 0).then(|| match nodes.iter().position(|&m| m == mask) {
                    Some(k) => k,
                    None => {
                        nodes.push(mask);
                        nodes.len() - 1
                    }
                })
            })
            .collect();
        assert!(nodes.len() <= 64, "too many distinct sets");
        debug_assert!(
            nodes.iter().all(|&a| nodes.iter().all(|&b| a & b == 0 || a & b == a || a & b == b)),
            "masks are not laminar"
        );
        let weight = nodes.iter().map(|&m| bits(m).map(|i| target[i] as u64).sum()).collect();
        let within = |inner: u64, outer: u64| inner & !outer == 0;
        let inside: Vec<u64> = nodes
            .iter()
            .map(|&s| (0..nodes.len()).filter(|&k| within(nodes[k], s)).fold(0, |acc, k| acc | 1 << k))
            .collect();
        let mut children = Vec::with_capacity(nodes.len());
        let mut free_den = Vec::with_capacity(nodes.len());
        for (k, &s) in nodes.iter().enumerate() {
            let proper = inside[k] & !(1 << k);
            // A proper subset is maximal when no other proper subset contains it.
            let kids = bits(proper).filter(|&c| bits(proper).all(|r| r == c || inside[r] >> c & 1 == 0)).fold(0u64, |acc, c| acc | 1 << c);
            let covered = bits(kids).fold(0u64, |acc, c| acc | nodes[c]);
            let mut den = BigInt::one();
            for i in bits(s & !covered) {
                den *= &fact[target[i] as usize];
            }
            children.push(kids);
            free_den.push(den);
        }
        let sizes = masks.iter().map(|m| m.count_ones()).collect();
        Laminar { node_of, sizes, weight, inside, children, free_den, fact }
    }

    fn coefficient(&self, powers: &[u32]) -> BigInt {
        let mut a = vec![0u64; self.weight.len()];
        for (node, &pw) in self.node_of.iter().zip(powers) {
            match node {
                Some(k) => a[*k] += pw as u64,
                None if pw > 0 => return BigInt::zero(),
                None => {}
            }
        }
        let mut received = Vec::with_capacity(a.len());
        for (k, &inside) in self.inside.iter().enumerate() {
            let below: u64 = bits(inside).map(|j| a[j]).sum();
            if self.weight[k] < below {
                return BigInt::zero();
            }
            received.push((self.weight[k] - below) as usize);
        }
        if received[0] != 0 {
            return BigInt::zero();
        }
        let mut out = BigInt::one();
        for (k, &kids) in self.children.iter().enumerate() {
            let mut den = self.free_den[k].clone();
            for j in bits(kids) {
                den *= &self.fact[received[j]];
            }
            out *= &self.fact[received[k] + a[k] as usize] / den;
        }
        out
    }

    /// The `p` (one entry per input mask, the power being `p + 1`) of total
    /// `total` that pass the necessary condition `received >= 0` at every
    /// set.  With `room = Some((group, cap))`, the entries of each group
    /// `group[k]` also sum to at most `cap[group]`.
    fn candidates(&self, total: u32, room: Option<(&[usize], &[i64])>) -> Vec<Vec<u32>> {
        if self.node_of.iter().any(Option::is_none) {
            return Vec::new();
        }
        let mut order: Vec<usize> = (0..self.node_of.len()).collect();
        order.sort_by_key(|&k| self.sizes[k]);
        struct State<'a> {
            lam: &'a Laminar<'a>,
            order: Vec<usize>,
            room: Option<(&'a [usize], &'a [i64])>,
            used_room: Vec<i64>,
            used: Vec<u64>,
            cur: Vec<u32>,
            out: Vec<Vec<u32>>,
        }
        fn rec(st: &mut State, pos: usize, left: u32) {
            if pos == st.order.len() {
                if left == 0 {
                    st.out.push(st.cur.clone());
                }
                return;
            }
            let k = st.order[pos];
            let node = st.lam.node_of[k].expect("nonempty mask");
            let inner: u64 = bits(st.lam.inside[node]).map(|j| st.used[j]).sum();
            let Some(mut hi) = st.lam.weight[node].checked_sub(inner + 1) else {
                return;
            };
            hi = hi.min(left as u64);
            if let Some((group, cap)) = st.room {
                hi = hi.min((cap[group[k]] - st.used_room[group[k]]).max(0) as u64);
            }
            for x in 0..=hi as u32 {
                st.cur[k] = x;
                st.used[node] += x as u64 + 1;
                if let Some((group, _)) = st.room {
                    st.used_room[group[k]] += x as i64;
                }
                rec(st, pos + 1, left - x);
                if let Some((group, _)) = st.room {
                    st.used_room[group[k]] -= x as i64;
                }
                st.used[node] -= x as u64 + 1;
            }
        }
        let groups = room.map_or(0, |(_, cap)| cap.len());
        let mut st = State {
            lam: self,
            order,
            room,
            used_room: vec![0; groups],
            used: vec![0; self.weight.len()],
            cur: vec![0; self.node_of.len()],
            out: Vec::new(),
        };
        rec(&mut st, 0, total);
        st.out
    }
}

/// `B~^m_{g,d}` as the coefficient of `x^d` in `P_{g,n,m}`: the sum over
/// stable rooted trees and `p` on `H~` of `(-1)^{|E|}` times the
/// coefficient of `prod x_i^{d_i+1}` in `prod_h x_{I_h}^{p(h)+1}`.
pub fn tilde_b_class(spec: &BSpec) -> TautClass {
    let (g, n, m) = (spec.g, spec.n, spec.m);
    let terms = tilde_b_terms_impl(spec, true);
    let mut out = TautClass::zero(g, n + m);
    for (t, c) in terms {
        out.add_term(&t, c);
    }
    out
}

/// The terms of [`tilde_b_class`] before any dimension-vanishing term is
/// discarded (trees are rooted; coefficients are not collected).
pub fn tilde_b_terms(spec: &BSpec) -> Vec<(DecoratedTree, Rational)> {
    tilde_b_terms_impl(spec, false)
}

/// Formal pullback of `B~^m_{g,d}` along the map forgetting a new regular
/// leg `n+1` (frozen labels shift up by one), computed from the unreduced
/// terms.
pub fn tilde_b_pullback(spec: &BSpec) -> TautClass {
    let (g, n, m) = (spec.g, spec.n, spec.m);
    let mut out = TautClass::zero(g, n + m + 1);
    for (t, c) in tilde_b_terms(spec) {
        for (t2, c2) in pullback_tree(&t, &c, n + 1) {
            out.add_term(&t2, c2);
        }
    }
    out
}

fn tilde_b_terms_impl(spec: &BSpec, dim_filter: bool) -> Vec<(DecoratedTree, Rational)> {
    let (g, n, m) = (spec.g, spec.n, spec.m);
    let sd = spec.sum_d();
    let target: Vec<u32> = spec.d.iter().map(|x| x + 1).collect();
    let fact = factorials(target.iter().map(|&t| t as u64).sum());
    // The coefficient of x^(d+1) vanishes unless every edge h has
    // sum_{I_h} d >= 1 + #edges below h (compare degrees in the x_i, i in I_h).
    let opts = SrtOptions { max_edges: Some(sd as usize), leafy: true, leg_budget: Some(&spec.d), root_level_m: None };
    let trees = enum_srt(g, n, m, opts);
    trees
        .par_iter()
        .flat_map_iter(|t| {
            let mut out = Vec::new();
            let td = TreeData::new(t, n);
            let s = sign(t.num_edges() as i64);
            let left = sd - t.num_edges() as u32;
            let lam = Laminar::new(&td.masks, &target, &fact);
            let vertex: Vec<usize> = td.hs.iter().map(|&h| t.half_edges[h].vertex).collect();
            let dims = t.vertex_dims();
            let ps = lam.candidates(left, dim_filter.then_some((&vertex[..], &dims[..])));
            for p in ps {
                let powers: Vec<u32> = p.iter().map(|x| x + 1).collect();
                let c = lam.coefficient(&powers);
                if !c.is_zero() {
                    out.push((with_exponents(t, &td, &p), &s * Rational::from_integer(c)));
                }
            }
            out
        })
        .collect()
}

/// `B~^m_{g,d}` from its definition: the sum over all stable rooted trees
/// `T` and all `q >= 0` on the downward edge half-edges (with `q = d` on the
/// regular legs) of `(-1)^{|E|} e_* xi_{T_q*}(prod psi^q)`, where `T_q` has
/// `q(h)+1` extra legs at the vertex below `h` and `e_*` forgets them by the
/// string equation at each non-root vertex.
pub fn tilde_b_class_pushforward(spec: &BSpec) -> TautClass {
    let (g, n, m) = (spec.g, spec.n, spec.m);
    let sd = spec.sum_d();
    // Every vertex of T is stable, so forgetting q(h)+1 points at the vertex
    // below h needs q(h) + 1 <= (sum of the exponents below it).  By
    // induction sum_{I_h} d >= q(h) + 1 + #(edges below h), which bounds
    // both the trees and the range of q.
    let opts = SrtOptions { max_edges: Some(sd as usize), leafy: false, leg_budget: Some(&spec.d), root_level_m: None };
    let trees = enum_srt(g, n, m, opts);
    let terms: Vec<(DecoratedTree, Rational)> = trees
        .par_iter()
        .flat_map_iter(|t| {
            let mut out = Vec::new();
            let td = TreeData::new(t, n);
            let r = &td.r;
            let s = sign(t.num_edges() as i64);
            // Downward edge half-edges and the bound on their q.
            let mut below = vec![0u32; t.num_vertices()];
            for &v in r.order.iter().rev() {
                if let Some(p) = r.parent[v] {
                    below[p] += below[v] + 1;
                }
            }
            let mut free = Vec::new();
            let mut exps = vec![0u32; td.hs.len()];
            for (k, &h) in td.hs.iter().enumerate() {
                match t.half_edges[h].slot {
                    Slot::Leg(l) => exps[k] = spec.d[l as usize - 1],
                    Slot::Edge(j) => {
                        let avail: u32 = (0..64).filter(|i| td.masks[k] >> i & 1 == 1).map(|i| spec.d[i]).sum();
                        let w = t.half_edges[j].vertex;
                        if avail < 1 + below[w] {
                            return out;
                        }
                        free.push((w, FreeEdge { k, below_w: td.at_vertex(w), bound: avail - 1 - below[w] }));
                    }
                }
            }
            // Choose q bottom-up (reverse breadth-first order of the lower
            // vertex), so the exponents below a vertex are known when the q
            // above it is chosen.
            let rank: Vec<usize> = {
                let mut rank = vec![0; t.num_vertices()];
                for (i, &v) in r.order.iter().enumerate() {
                    rank[v] = i;
                }
                rank
            };
            free.sort_by_key(|&(w, _)| std::cmp::Reverse(rank[w]));
            let free: Vec<FreeEdge> = free.into_iter().map(|(_, f)| f).collect();
            let jobs: Vec<(Vec<usize>, usize)> = r
                .order
                .iter()
                .filter(|&&v| v != r.root)
                .map(|&v| (td.at_vertex(v), td.pos[r.down_half[v].unwrap()].unwrap()))
                .collect();
            // Different q can give the same exponents; collect before
            // canonicalising.
            let mut images: HashMap<Vec<u32>, BigInt> = HashMap::new();
            choose_q(&free, 0, &mut exps, &jobs, &mut images);
            for (e, c) in images {
                out.push((with_exponents(t, &td, &e), &s * Rational::from_integer(c)));
            }
            out
        })
        .collect();
    let mut out = TautClass::zero(g, n + m);
    for (t, c) in terms {
        out.add_term(&t, c);
    }
    out
}

/// A downward edge half-edge of the push-forward route: its index in `H~`,
/// the `H~` half-edges at the vertex below it and the bound on its `q`.
struct FreeEdge {
    k: usize,
    below_w: Vec<usize>,
    bound: u32,
}

/// Runs over the `q` of `free[i..]` (in bottom-up order) and adds the
/// push-forwards at all non-root vertices to `images`.  `jobs` lists, per
/// non-root vertex, its `H~` half-edges and the `H~` index of the edge above
/// it (which fixes the number of forgotten points).
fn choose_q(free: &[FreeEdge], i: usize, exps: &mut Vec<u32>, jobs: &[(Vec<usize>, usize)], images: &mut HashMap<Vec<u32>, BigInt>) {
    let Some(f) = free.get(i) else {
        let forget: Vec<(Vec<usize>, u32)> = jobs.iter().map(|(hv, theta)| (hv.clone(), exps[*theta] + 1)).collect();
        for (e, c) in pushforward_at_vertices(exps, &forget) {
            *images.entry(e).or_insert_with(BigInt::zero) += c;
        }
        return;
    };
    // Forgetting q + 1 points needs that much psi degree below.
    let room: u32 = f.below_w.iter().map(|&j| exps[j]).sum();
    if room == 0 {
        return;
    }
    for q in 0..=f.bound.min(room - 1) {
        exps[f.k] = q;
        choose_q(free, i + 1, exps, jobs, images);
    }
}

/// Chain tree in the orientation of `Gamma`: vertex `i` (0-based) has genus
/// `genera[i]`; vertex 0 carries leg 1, the last vertex carries `tail_legs`;
/// `exps[i]` sits on the half-edge of vertex `i` pointing towards leg 1 (leg
/// 1 itself for vertex 0).  This is the single place fixing that
/// orientation.
fn chain_towards_leg1(genera: &[u32], exps: &[u32], tail_legs: &[u32]) -> DecoratedTree {
    let k = genera.len();
    let mut t = DecoratedTree::new(genera.to_vec());
    t.add_leg(0, 1, exps[0]);
    for i in 1..k {
        t.add_edge(i - 1, i, 0, exps[i]);
    }
    for &l in tail_legs {
        t.add_leg(k - 1, l, 0);
    }
    t
}

/// Chain tree in the orientation of `gamma`: vertex 0 carries leg 1 (no
/// psi), the last vertex carries leg 2, and `exps[i]` sits on the half-edge
/// of vertex `i` pointing towards leg 2 (leg 2 itself for the last vertex).
fn chain_towards_leg2(genera: &[u32], exps: &[u32]) -> DecoratedTree {
    let k = genera.len();
    let mut t = DecoratedTree::new(genera.to_vec());
    t.add_leg(0, 1, 0);
    for i in 1..k {
        t.add_edge(i - 1, i, exps[i - 1], 0);
    }
    t.add_leg(k - 1, 2, exps[k - 1]);
    t
}

fn stable(g: u32, n: u32) -> bool {
    2 * g as i64 - 2 + n as i64 > 0
}

/// `Gamma^{g,m}_{d|k}` on `M_{g,m+1}`: the sum of all chains with `k`
/// vertices, leg 1 at one end and legs `2..=m+1` at the other, indexed by
/// [`enum_chains`].
pub fn gamma_class(g: u32, m: u32, d: u32, k: usize) -> TautClass {
    let mut out = TautClass::zero(g, m + 1);
    if !stable(g, m + 1) {
        return out;
    }
    let tail: Vec<u32> = (2..=m + 1).collect();
    for prof in enum_chains(g, d, m, k) {
        out.add_term(&chain_towards_leg1(&prof.genera, &prof.exps, &tail), Rational::one());
    }
    out
}

/// `gamma~^{g,m}_{d|k}`: `Gamma^{g,m}_{d|k}` when `d <= 2g+m-2`, else zero.
pub fn gamma_tilde(g: u32, m: u32, d: u32, k: usize) -> TautClass {
    if d as i64 <= 2 * g as i64 + m as i64 - 2 {
        gamma_class(g, m, d, k)
    } else {
        TautClass::zero(g, m + 1)
    }
}

/// `gamma^g_{d|k}` on `M_{g,2}` (zero for `d >= 2g`): chains with `k`
/// vertices of positive genus from leg 1 to leg 2, exponents `d_i` on the
/// half-edges pointing towards leg 2, `sum d_i + k - 1 = d` and the prefix
/// conditions `d_1+..+d_i + i - 1 <= 2(g_1+..+g_i) - 1` for `i < k`.
pub fn gamma_chain(g: u32, d: u32, k: usize) -> TautClass {
    let mut out = TautClass::zero(g, 2);
    if d >= 2 * g {
        return out;
    }
    // These are the profiles of enum_chains with m = 1 read from the other
    // end of the chain.
    for prof in enum_chains(g, d, 1, k) {
        let genera: Vec<u32> = prof.genera.iter().rev().copied().collect();
        let exps: Vec<u32> = prof.exps.iter().rev().copied().collect();
        out.add_term(&chain_towards_leg2(&genera, &exps), Rational::one());
    }
    out
}

/// Two-vertex chain on `M_{g1+g2, 1+tail}`: leg 1 at the first vertex,
/// `psi^{d1}` and `psi^{d2}` on the two sides of the edge, the tail legs at
/// the second vertex.
fn two_vertex_chain(g1: u32, g2: u32, d1: u32, d2: u32, tail: &[u32]) -> DecoratedTree {
    let mut t = DecoratedTree::new(vec![g1, g2]);
    t.add_leg(0, 1, 0);
    t.add_edge(0, 1, d1, d2);
    for &l in tail {
        t.add_leg(1, l, 0);
    }
    t
}

/// Left minus right side of a Liu–Pandharipande relation, as a formal class.
///
/// * variant 1 (on `M_{g,2}`, `g >= 1`):
///   `psi_1^{2g+r} + (-1)^{2g+r+1} psi_2^{2g+r}
///    - sum_{g1+g2=g, g1,g2>=1, d1+d2=2g+r-1} (-1)^{d1} [g1 -psi^{d1}- psi^{d2}- g2]`;
/// * variant 2 (on `M_{g,m+1}`):
///   `psi_1^{2g+m-1+r} - sum_{g1+g2=g, g1>=1, g2>=0, d1+d2=2g+m-2+r} (-1)^{d1} [...]`,
///   which is a relation for `m >= 2`.
pub fn lp_relation_class(variant: u8, g: u32, r: u32, m: u32) -> Result<TautClass> {
    match variant {
        1 => {
            if g == 0 {
                return Err(Error::InvalidSpec("the first relation needs g >= 1".into()));
            }
            let deg = 2 * g + r;
            let mut out = TautClass::zero(g, 2);
            out.add_term(&DecoratedTree::single_vertex(g, &[(1, deg), (2, 0)]), Rational::one());
            out.add_term(&DecoratedTree::single_vertex(g, &[(1, 0), (2, deg)]), sign(deg as i64 + 1));
            for g1 in 1..g {
                for d1 in 0..deg {
                    let d2 = deg - 1 - d1;
                    out.add_term(&two_vertex_chain(g1, g - g1, d1, d2, &[2]), -sign(d1 as i64));
                }
            }
            Ok(out)
        }
        2 => {
            if !stable(g, m + 1) {
                return Err(Error::InvalidSpec(format!("M_{{{g},{}}} is not stable", m + 1)));
            }
            let deg = 2 * g + m - 1 + r;
            let tail: Vec<u32> = (2..=m + 1).collect();
            let mut legs = vec![(1, deg)];
            legs.extend(tail.iter().map(|&l| (l, 0)));
            let mut out = TautClass::zero(g, m + 1);
            out.add_term(&DecoratedTree::single_vertex(g, &legs), Rational::one());
            if deg >= 1 {
                for g1 in 1..=g {
                    for d1 in 0..deg {
                        let d2 = deg - 1 - d1;
                        let (g2, n2) = (g - g1, m + 1);
                        if !stable(g2, n2) {
                            continue;
                        }
                        out.add_term(&two_vertex_chain(g1, g2, d1, d2, &tail), -sign(d1 as i64));
                    }
                }
            }
            Ok(out)
        }
        _ => Err(Error::InvalidSpec(format!("unknown relation variant {variant}"))),
    }
}

/// The one-point formula `psi_1^{d-2g-m+1} * sum_k (-1)^{k+1} Gamma^{g,m}_{2g+m-1|k}`
/// (for `d >= 2g+m-1`), which should equal `B^m_{g,(d)}`.
pub fn m1_formula(g: u32, m: u32, d: u32) -> Result<TautClass> {
    let base = 2 * g as i64 + m as i64 - 1;
    if (d as i64) < base || base < 0 {
        return Err(Error::InvalidSpec(format!("need d >= 2g+m-1 = {base}")));
    }
    let mut sum = TautClass::zero(g, m + 1);
    for k in 1..=(g as usize + 1) {
        sum.add_scaled(&gamma_class(g, m, base as u32, k), &sign(k as i64 + 1));
    }
    Ok(crate::graph_core::psi_multiply(&sum, 1, d - base as u32))
}

/// Right-hand side of the one-point base identity: the part of the
/// second Liu–Pandharipande relation at `r = 0` split according to whether
/// `d1 <= 2g1-1` or `d2 <= 2g2+m-2`:
/// `sum (-1)^{d1} gamma^{g1}_{d1|1} <> [g2; psi_1^{d2}]
///  + sum (-1)^{d1} [g1; psi_2^{d1}] <> gamma~^{g2,m}_{d2|1}`.
pub fn one_point_base_split(g: u32, m: u32) -> TautClass {
    let mut out = TautClass::zero(g, m + 1);
    let total = 2 * g as i64 + m as i64 - 2;
    if total < 0 {
        return out;
    }
    let tail: Vec<(u32, u32)> = (2..=m + 1).map(|l| (l, 0)).collect();
    for g1 in 1..=g {
        let g2 = g - g1;
        if !stable(g2, m + 1) {
            continue;
        }
        for d1 in 0..=total as u32 {
            let d2 = total as u32 - d1;
            let s = sign(d1 as i64);
            let mut right_legs = vec![(1, d2)];
            right_legs.extend(tail.iter().copied());
            let right = TautClass::from_tree(g2, m + 1, &DecoratedTree::single_vertex(g2, &right_legs), Rational::one());
            let left = TautClass::from_tree(g1, 2, &DecoratedTree::single_vertex(g1, &[(1, 0), (2, d1)]), Rational::one());
            out.add_scaled(&crate::graph_core::diamond(&gamma_chain(g1, d1, 1), &right), &s);
            out.add_scaled(&crate::graph_core::diamond(&left, &gamma_tilde(g2, m, d2, 1)), &s);
        }
    }
    out
}
