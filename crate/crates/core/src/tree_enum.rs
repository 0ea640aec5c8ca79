//! Enumeration of rooted stable trees and of the decorations living on them.
//!
//! Conventions shared by every enumerator:
//! * regular legs are labelled `1..=n`, frozen legs `n+1..=n+m` and frozen
//!   legs always sit at the root;
//! * returned trees are rooted [`DecoratedTree`]s, one per isomorphism class
//!   of rooted trees;
//! * levels are canonical (root at level 1, children one level lower).

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use crate::graph_core::{DecoratedTree, Rooted, Slot};

/// A vertex of a tree under construction together with everything below it.
#[derive(Clone, Debug)]
struct Node {
    genus: u32,
    legs: Vec<u32>,
    children: Vec<Rc<Node>>,
    /// Edges strictly inside this subtree.
    edges: usize,
}

impl Node {
    fn attach(&self, t: &mut DecoratedTree, mother: Option<usize>) -> usize {
        let v = t.add_vertex(self.genus);
        if let Some(u) = mother {
            t.add_edge(u, v, 0, 0);
        }
        for &l in &self.legs {
            t.add_leg(v, l, 0);
        }
        for c in &self.children {
            c.attach(t, Some(v));
        }
        v
    }
}

/// Iterates over all sub-masks of `mask` (including `0` and `mask`).
fn submasks(mask: u64) -> impl Iterator<Item = u64> {
    let mut next = Some(mask);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 { None } else { Some((cur - 1) & mask) };
        Some(cur)
    })
}

/// All set partitions of the bits of `mask` into nonempty blocks, each
/// listed once (blocks ordered by their lowest bit).
pub fn set_partitions(mask: u64) -> Vec<Vec<u64>> {
    set_partitions_at_most(mask, usize::MAX)
}

/// The set partitions of [`set_partitions`] with at most `k` blocks.
pub fn set_partitions_at_most(mask: u64, k: usize) -> Vec<Vec<u64>> {
    if mask == 0 {
        return vec![vec![]];
    }
    if k == 0 {
        return Vec::new();
    }
    let low = mask & mask.wrapping_neg();
    let rest = mask & !low;
    let mut out = Vec::new();
    for sub in submasks(rest) {
        let block = low | sub;
        for mut p in set_partitions_at_most(rest & !sub, k - 1) {
            p.insert(0, block);
            out.push(p);
        }
    }
    out
}

/// `sum_{i in mask} w_i` (leg `i` is bit `i-1`).
fn mask_weight(mask: u64, w: &[u32]) -> usize {
    let mut acc = 0;
    let mut m = mask;
    while m != 0 {
        acc += w[m.trailing_zeros() as usize] as usize;
        m &= m - 1;
    }
    acc
}

fn mask_legs(mask: u64) -> Vec<u32> {
    (0..64).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect()
}

/// Options for [`enum_srt`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SrtOptions<'a> {
    /// Only trees with at most this many edges.
    pub max_edges: Option<usize>,
    /// Only trees in which every non-root leaf carries a regular leg.
    pub leafy: bool,
    /// Per-leg budget `b`: a subtree hanging from an edge and carrying the
    /// regular legs `I` has at most `sum_{i in I} b_i - 1` edges strictly
    /// inside it (so it needs `sum_{i in I} b_i >= 1`).
    pub leg_budget: Option<&'a [u32]>,
    /// With `Some(m)`, a root with children must satisfy
    /// `2 g(root) - 2 + m >= 0`.
    pub root_level_m: Option<u32>,
}

struct SrtGen {
    leafy: bool,
    root_level_m: Option<u32>,
    budget: Option<Vec<u32>>,
    memo: HashMap<(u64, u32, usize), Rc<Vec<Rc<Node>>>>,
}

impl SrtGen {
    /// Stable subtrees hanging from a mother edge, carrying exactly the
    /// regular legs in `mask`, of total genus `genus`, with at most `cap`
    /// internal edges.
    fn hanging(&mut self, mask: u64, genus: u32, cap: usize) -> Rc<Vec<Rc<Node>>> {
        let cap = match self.weight(mask) {
            Some(0) => return Rc::new(Vec::new()),
            Some(w) => cap.min(w - 1),
            None => cap,
        };
        if let Some(v) = self.memo.get(&(mask, genus, cap)) {
            return v.clone();
        }
        let v = Rc::new(self.vertex_options(mask, genus, cap, 1, false));
        self.memo.insert((mask, genus, cap), v.clone());
        v
    }

    /// Total budget of the legs in `mask`, if a budget is set.
    fn weight(&self, mask: u64) -> Option<usize> {
        self.budget.as_ref().map(|b| mask_weight(mask, b))
    }

    /// All ways to build a vertex with `extra` half-edges besides its own
    /// legs and children (1 for the mother edge, `m` for frozen legs at the
    /// root) carrying legs `mask` in its subtree.
    fn vertex_options(&mut self, mask: u64, genus: u32, cap: usize, extra: usize, is_root: bool) -> Vec<Rc<Node>> {
        let mut out = Vec::new();
        for gv in 0..=genus {
            for own in submasks(mask) {
                let rest = mask & !own;
                let root_blocked = is_root && self.root_level_m.is_some_and(|m| 2 * gv + m < 2);
                if root_blocked && rest != 0 {
                    continue;
                }
                // Every block hangs from its own edge (and needs budget).
                let max_blocks = cap.min(self.weight(rest).unwrap_or(usize::MAX));
                for blocks in set_partitions_at_most(rest, max_blocks) {
                    let mut acc = Vec::new();
                    self.assign_blocks(&blocks, 0, genus - gv, cap, 0, &mut Vec::new(), &mut acc);
                    for (children, edges) in acc {
                        let valence = extra + own.count_ones() as usize + children.len();
                        if 2 * gv as i64 - 2 + valence as i64 <= 0 {
                            continue;
                        }
                        if self.leafy && !is_root && children.is_empty() && own == 0 {
                            continue;
                        }
                        if root_blocked && !children.is_empty() {
                            continue;
                        }
                        out.push(Rc::new(Node { genus: gv, legs: mask_legs(own), children, edges }));
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn assign_blocks(
        &mut self,
        blocks: &[u64],
        i: usize,
        genus_left: u32,
        cap: usize,
        used: usize,
        cur: &mut Vec<Rc<Node>>,
        out: &mut Vec<(Vec<Rc<Node>>, usize)>,
    ) {
        if i == blocks.len() {
            if genus_left == 0 {
                out.push((cur.clone(), used));
            } else if !self.leafy {
                let mut pool = Vec::new();
                for h in 1..=genus_left {
                    if used < cap {
                        for s in self.hanging(0, h, cap - used - 1).iter() {
                            pool.push((h, s.clone()));
                        }
                    }
                }
                self.choose_legless(&pool, 0, genus_left, cap, used, cur, out);
            }
            return;
        }
        if used >= cap {
            return;
        }
        for h in 0..=genus_left {
            let subs = self.hanging(blocks[i], h, cap - used - 1);
            for s in subs.iter() {
                cur.push(s.clone());
                self.assign_blocks(blocks, i + 1, genus_left - h, cap, used + 1 + s.edges, cur, out);
                cur.pop();
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn choose_legless(
        &self,
        pool: &[(u32, Rc<Node>)],
        from: usize,
        genus_left: u32,
        cap: usize,
        used: usize,
        cur: &mut Vec<Rc<Node>>,
        out: &mut Vec<(Vec<Rc<Node>>, usize)>,
    ) {
        if genus_left == 0 {
            out.push((cur.clone(), used));
            return;
        }
        for k in from..pool.len() {
            let (h, s) = &pool[k];
            if *h <= genus_left && used + 1 + s.edges <= cap {
                cur.push(s.clone());
                self.choose_legless(pool, k, genus_left - h, cap, used + 1 + s.edges, cur, out);
                cur.pop();
            }
        }
    }
}

/// Upper bound on the number of edges of a stable tree on `M_{g,N}`.
fn max_stable_edges(g: u32, legs: u32) -> usize {
    (2 * g as i64 + legs as i64 - 3).max(0) as usize
}

/// All rooted stable trees of genus `g` with regular legs `1..=n` and `m`
/// frozen legs at the root, one per rooted isomorphism class.
pub fn enum_srt(g: u32, n: u32, m: u32, opts: SrtOptions) -> Vec<DecoratedTree> {
    if 2 * g as i64 - 2 + (n + m) as i64 <= 0 {
        return Vec::new();
    }
    let cap = opts.max_edges.unwrap_or(usize::MAX).min(max_stable_edges(g, n + m));
    let mut gen = SrtGen {
        leafy: opts.leafy,
        root_level_m: opts.root_level_m,
        budget: opts.leg_budget.map(<[u32]>::to_vec),
        memo: HashMap::new(),
    };
    let full = if n == 0 { 0 } else { (1u64 << n) - 1 };
    let roots = gen.vertex_options(full, g, cap, m as usize, true);
    roots
        .iter()
        .map(|r| {
            let mut t = DecoratedTree::default();
            let v = r.attach(&mut t, None);
            for l in n + 1..=n + m {
                t.add_leg(v, l, 0);
            }
            t.root = Some(v);
            t
        })
        .collect()
}

/// `SRT^k_{g,n,1}`: rooted stable trees with `k` vertices, regular legs
/// `1..=n` and the single frozen leg `n+1` at the root.
pub fn enum_dr_trees(g: u32, n: u32, k: usize) -> Vec<DecoratedTree> {
    if k == 0 {
        return Vec::new();
    }
    enum_srt(g, n, 1, SrtOptions { max_edges: Some(k - 1), leafy: false, leg_budget: None, root_level_m: None })
        .into_iter()
        .filter(|t| t.num_vertices() == k)
        .collect()
}

/// A vertex of a rooted tree is potentially unstable when it is not the
/// root, has genus 0 and exactly one half-edge pointing away from the root
/// (a child edge or a regular leg).
pub fn potentially_unstable(t: &DecoratedTree, r: &Rooted, v: usize, n: u32) -> bool {
    if v == r.root || t.genera[v] != 0 {
        return false;
    }
    let down = r.adjacency[v].iter().filter(|&&h| r.is_h_tilde(t, h, n)).count();
    let frozen = r.adjacency[v]
        .iter()
        .filter(|&&h| matches!(t.half_edges[h].slot, Slot::Leg(l) if l > n))
        .count();
    down == 1 && frozen == 0 && r.adjacency[v].len() == 2
}

/// The four completeness conditions, checked literally and independently:
/// (a) every vertex has a descendant at the deepest level, (b) every regular
/// leg is at the deepest level, (c) every vertex at the deepest level carries
/// a regular leg, (d) every level has a vertex that is not potentially
/// unstable.
pub fn is_complete(t: &DecoratedTree, n: u32) -> bool {
    let root = t.root.expect("rooted tree");
    let r = t.rooted_view(root);
    let deg = r.depth();
    let nv = t.num_vertices();
    // (a)
    let mut reaches = vec![false; nv];
    for &v in r.order.iter().rev() {
        if r.level[v] == deg {
            reaches[v] = true;
        }
        if reaches[v] {
            if let Some(p) = r.parent[v] {
                reaches[p] = true;
            }
        }
    }
    let a = reaches.iter().all(|&x| x);
    // (b) and (c)
    let mut has_leg = vec![false; nv];
    let mut b = true;
    for h in &t.half_edges {
        if let Slot::Leg(l) = h.slot {
            if l <= n {
                has_leg[h.vertex] = true;
                b &= r.level[h.vertex] == deg;
            }
        }
    }
    let c = (0..nv).filter(|&v| r.level[v] == deg).all(|v| has_leg[v]);
    // (d)
    let d = (1..=deg).all(|k| (0..nv).any(|v| r.level[v] == k && !potentially_unstable(t, &r, v, n)));
    a && b && c && d
}

#[derive(Clone, Debug)]
struct LNode {
    genus: u32,
    legs: Vec<u32>,
    children: Vec<Rc<LNode>>,
    /// Non-root vertices in the subtree that are not potentially unstable.
    stable_count: usize,
    /// Bit `j` is set when such a vertex sits `j` levels below the top.
    stable_levels: u64,
}

impl LNode {
    fn attach(&self, t: &mut DecoratedTree, mother: Option<usize>) -> usize {
        let v = t.add_vertex(self.genus);
        if let Some(u) = mother {
            t.add_edge(u, v, 0, 0);
        }
        for &l in &self.legs {
            t.add_leg(v, l, 0);
        }
        for c in &self.children {
            c.attach(t, Some(v));
        }
        v
    }
}

struct LevelGen {
    memo: HashMap<(u32, u64, u32, usize), Rc<Vec<Rc<LNode>>>>,
    /// Optional per-leg budget: a subtree carrying the legs `mask` has at
    /// most `sum_{i in mask} budget_i` vertices that are not potentially
    /// unstable.
    budget: Option<Vec<u32>>,
}

impl LevelGen {
    /// Partitions of `mask` into the blocks below one vertex.  With a budget,
    /// a block of zero budget can only hang a chain of potentially unstable
    /// vertices ending in a single leg, so such blocks are singletons.
    fn blocks(&self, mask: u64) -> Vec<Vec<u64>> {
        let Some(b) = &self.budget else {
            return set_partitions(mask);
        };
        let (mut heavy, mut light) = (0u64, Vec::new());
        for l in mask_legs(mask) {
            if b[l as usize - 1] > 0 {
                heavy |= 1 << (l - 1);
            } else {
                light.push(1u64 << (l - 1));
            }
        }
        let mut out = Vec::new();
        for base in set_partitions(heavy) {
            // Each light leg joins one of the heavy blocks or stays alone.
            let heavy_blocks = base.len();
            let mut acc = vec![base];
            for &bit in &light {
                let mut next = Vec::new();
                for p in &acc {
                    for j in 0..heavy_blocks {
                        let mut q = p.clone();
                        q[j] |= bit;
                        next.push(q);
                    }
                    let mut q = p.clone();
                    q.push(bit);
                    next.push(q);
                }
                acc = next;
            }
            out.extend(acc);
        }
        for p in &mut out {
            p.sort_unstable_by_key(|&x| x & x.wrapping_neg());
        }
        out
    }

    /// Non-root subtrees whose leaves all lie exactly `r` levels below the
    /// top vertex, carrying the regular legs `mask` (only at the leaves) and
    /// total genus `genus`, with at most `cap` vertices that are not
    /// potentially unstable.
    fn hanging(&mut self, r: u32, mask: u64, genus: u32, cap: usize) -> Rc<Vec<Rc<LNode>>> {
        let cap = match &self.budget {
            Some(b) => cap.min(mask_weight(mask, b)),
            None => cap,
        };
        let key = (r, mask, genus, cap);
        if let Some(v) = self.memo.get(&key) {
            return v.clone();
        }
        let mut out = Vec::new();
        if r == 0 {
            let pu = genus == 0 && mask.count_ones() == 1;
            let cnt = usize::from(!pu);
            if cnt <= cap {
                let stable_levels = u64::from(!pu);
                out.push(Rc::new(LNode { genus, legs: mask_legs(mask), children: vec![], stable_count: cnt, stable_levels }));
            }
        } else {
            for gv in 0..=genus {
                for blocks in self.blocks(mask) {
                    let pu = gv == 0 && blocks.len() == 1;
                    let own = usize::from(!pu);
                    if own > cap {
                        continue;
                    }
                    let mut acc = Vec::new();
                    self.assign(r - 1, &blocks, 0, genus - gv, cap - own, &mut Vec::new(), 0, &mut acc);
                    for (children, cnt) in acc {
                        let below = children.iter().fold(0, |a, c| a | c.stable_levels);
                        let stable_levels = u64::from(!pu) | below << 1;
                        out.push(Rc::new(LNode { genus: gv, legs: vec![], children, stable_count: cnt + own, stable_levels }));
                    }
                }
            }
        }
        let out = Rc::new(out);
        self.memo.insert(key, out.clone());
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn assign(
        &mut self,
        r: u32,
        blocks: &[u64],
        i: usize,
        genus_left: u32,
        cap: usize,
        cur: &mut Vec<Rc<LNode>>,
        used: usize,
        out: &mut Vec<(Vec<Rc<LNode>>, usize)>,
    ) {
        if i == blocks.len() {
            if genus_left == 0 {
                out.push((cur.clone(), used));
            }
            return;
        }
        for h in 0..=genus_left {
            let subs = self.hanging(r, blocks[i], h, cap - used);
            for s in subs.iter() {
                cur.push(s.clone());
                self.assign(r, blocks, i + 1, genus_left - h, cap, cur, used + s.stable_count, out);
                cur.pop();
            }
        }
    }
}

/// Complete shapes: rooted trees satisfying the four completeness
/// conditions, with frozen legs at the root, where non-root vertices only
/// need to be stable once at least one extra leg is added (so potentially
/// unstable vertices are allowed).  `max_stable` bounds the number of
/// non-root vertices that are not potentially unstable.
pub fn enum_complete_shapes(g: u32, n: u32, m: u32, max_stable: Option<usize>) -> Vec<DecoratedTree> {
    complete_shapes(g, n, m, max_stable, None)
}

/// [`enum_complete_shapes`], optionally skipping shapes that carry no
/// nonzero term of the definition for the exponents `d` given in `prune`:
/// * a subtree hanging below the root and carrying the regular legs `I`
///   has at most `sum_{i in I} d_i` vertices that are not potentially
///   unstable;
/// * a tree of depth at least 2 needs `2 g(root) - 2 + m >= 0`, the
///   admissibility bound at the root level.
fn complete_shapes(g: u32, n: u32, m: u32, max_stable: Option<usize>, prune: Option<&[u32]>) -> Vec<DecoratedTree> {
    if n == 0 || 2 * g as i64 - 2 + (n + m) as i64 <= 0 {
        return Vec::new();
    }
    let cap = max_stable.unwrap_or(usize::MAX).min((g + n) as usize);
    let full = (1u64 << n) - 1;
    let mut out = Vec::new();
    // Depth 1: the single vertex.
    let mut t = DecoratedTree::single_vertex(g, &(1..=n + m).map(|l| (l, 0)).collect::<Vec<_>>());
    t.root = Some(0);
    out.push(t);
    let mut gen = LevelGen { memo: HashMap::new(), budget: prune.map(<[u32]>::to_vec) };
    // Every level below the root needs its own stable vertex.
    for depth in 2..=(cap as u32 + 1) {
        let partitions = gen.blocks(full);
        for gr in 0..=g {
            if prune.is_some() && 2 * gr + m < 2 {
                continue;
            }
            for blocks in &partitions {
                if 2 * gr as i64 - 2 + blocks.len() as i64 + m as i64 <= 0 {
                    continue;
                }
                let mut acc = Vec::new();
                gen.assign(depth - 2, blocks, 0, g - gr, cap, &mut Vec::new(), 0, &mut acc);
                for (children, _) in acc {
                    // Completeness (d): every level below the root needs a
                    // vertex that is not potentially unstable.
                    let levels = children.iter().fold(0u64, |a, c| a | c.stable_levels);
                    let wanted = (1u64 << (depth - 1)) - 1;
                    if levels & wanted != wanted {
                        continue;
                    }
                    let root = LNode { genus: gr, legs: vec![], children, stable_count: 0, stable_levels: 0 };
                    let mut t = DecoratedTree::default();
                    let v = root.attach(&mut t, None);
                    for l in n + 1..=n + m {
                        t.add_leg(v, l, 0);
                    }
                    t.root = Some(v);
                    if is_complete(&t, n) {
                        out.push(t);
                    }
                }
            }
        }
    }
    out
}

/// All vectors of length `len` with nonnegative entries summing to at most
/// `bound` (nothing if `bound < 0`).
fn bounded_vectors(len: usize, bound: i64) -> Vec<Vec<u32>> {
    if bound < 0 {
        return Vec::new();
    }
    fn rec(len: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for x in 0..=left {
            cur.push(x);
            rec(len, left - x, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(len, bound as u32, &mut Vec::new(), &mut out);
    out
}

/// Admissible balanced complete trees: complete shapes together with a
/// decoration `q >= 0` on the half-edges pointing away from the root along
/// edges, such that at every level `k` below the deepest one the decorations
/// leaving level `k` sum to at most `2 g_k - 2 + m` (`g_k` = genus at levels
/// `<= k`).  The decoration is stored in the `psi` field: `q` on those
/// half-edges and `d_i` on regular leg `i`.
///
/// With `prune_pu`, trees whose potentially unstable vertices do not carry
/// the same decoration on their two sides are skipped, and so are shapes in
/// which a subtree below the root carrying the legs `I` has more than
/// `sum_{i in I} d_i` vertices that are not potentially unstable.  Both
/// contribute nothing to push-forwards: each such vertex forgets at least
/// one point, which costs one unit of the psi degree available in its
/// subtree.  `max_stable` is passed to [`enum_complete_shapes`].
pub fn enum_admissible(g: u32, n: u32, m: u32, d: &[u32], max_stable: Option<usize>, prune_pu: bool) -> Vec<DecoratedTree> {
    assert_eq!(d.len(), n as usize);
    let mut out = Vec::new();
    for shape in complete_shapes(g, n, m, max_stable, prune_pu.then_some(d)) {
        let root = shape.root.unwrap();
        let r = shape.rooted_view(root);
        let deg = r.depth();
        let mut base = shape.clone();
        for h in &mut base.half_edges {
            if let Slot::Leg(l) = h.slot {
                if l <= n {
                    h.psi = d[l as usize - 1];
                }
            }
        }
        // Per level: the downward edge half-edges and the bound.
        let mut per_level: Vec<(Vec<usize>, i64)> = Vec::new();
        let mut genus_upto = 0i64;
        for k in 1..deg {
            genus_upto += (0..shape.num_vertices())
                .filter(|&v| r.level[v] == k)
                .map(|v| shape.genera[v] as i64)
                .sum::<i64>();
            let hs: Vec<usize> = (0..shape.num_vertices())
                .filter(|&v| r.level[v] == k + 1)
                .map(|v| r.down_half[v].unwrap())
                .collect();
            per_level.push((hs, 2 * genus_upto - 2 + m as i64));
        }
        let options: Vec<Vec<Vec<u32>>> = per_level.iter().map(|(hs, b)| bounded_vectors(hs.len(), *b)).collect();
        if options.iter().any(|o| o.is_empty()) {
            continue;
        }
        let mut idx = vec![0usize; options.len()];
        'odometer: loop {
            let mut t = base.clone();
            for (lvl, (hs, _)) in per_level.iter().enumerate() {
                for (j, &h) in hs.iter().enumerate() {
                    t.half_edges[h].psi = options[lvl][idx[lvl]][j];
                }
            }
            if !prune_pu || pu_consistent(&t, &r, n) {
                out.push(t);
            }
            let mut k = 0;
            loop {
                if k == idx.len() {
                    break 'odometer;
                }
                idx[k] += 1;
                if idx[k] < options[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
    out
}

/// True when every potentially unstable vertex carries equal decorations on
/// its mother half-edge and its single downward half-edge.
pub fn pu_consistent(t: &DecoratedTree, r: &Rooted, n: u32) -> bool {
    (0..t.num_vertices()).all(|v| {
        if !potentially_unstable(t, r, v, n) {
            return true;
        }
        let theta = r.down_half[v].unwrap();
        let h = *r.adjacency[v].iter().find(|&&h| r.is_h_tilde(t, h, n)).unwrap();
        t.half_edges[h].psi == t.half_edges[theta].psi
    })
}

/// All level functions on a rooted tree: the root has level 1, every child
/// has a strictly larger level than its mother, and the image is exactly
/// `1..=deg` for some `deg`.  Returned as per-vertex levels.
pub fn enum_levels(t: &DecoratedTree, r: &Rooted) -> Vec<Vec<u32>> {
    let nv = t.num_vertices() as u32;
    let mut out = Vec::new();
    let mut lv = vec![0u32; t.num_vertices()];
    lv[r.root] = 1;
    fn rec(r: &Rooted, i: usize, nv: u32, lv: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == r.order.len() {
            let deg = *lv.iter().max().unwrap();
            let mut hit = vec![false; deg as usize + 1];
            for &l in lv.iter() {
                hit[l as usize] = true;
            }
            if hit[1..].iter().all(|&x| x) {
                out.push(lv.clone());
            }
            return;
        }
        let v = r.order[i];
        let p = r.parent[v].unwrap();
        for l in lv[p] + 1..=nv {
            lv[v] = l;
            rec(r, i + 1, nv, lv, out);
        }
        lv[v] = 0;
    }
    rec(r, 1, nv, &mut lv, &mut out);
    out
}

/// All psi assignments on the `H~` half-edges `hs` (in that order) with
/// total `total`, respecting the dimension bound `sum <= 3g(v)-3+n(v)` at
/// every vertex.
pub fn enum_p(t: &DecoratedTree, hs: &[usize], total: u32) -> Vec<Vec<u32>> {
    let dims = t.vertex_dims();
    let mut used = vec![0i64; t.num_vertices()];
    let mut out = Vec::new();
    fn rec(
        t: &DecoratedTree,
        hs: &[usize],
        i: usize,
        left: u32,
        dims: &[i64],
        used: &mut Vec<i64>,
        cur: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
    ) {
        if i == hs.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let v = t.half_edges[hs[i]].vertex;
        let room = (dims[v] - used[v]).max(0) as u32;
        for x in 0..=left.min(room) {
            used[v] += x as i64;
            cur.push(x);
            rec(t, hs, i + 1, left - x, dims, used, cur, out);
            cur.pop();
            used[v] -= x as i64;
        }
    }
    rec(t, hs, 0, total, &dims, &mut used, &mut Vec::new(), &mut out);
    out
}

/// Genus and psi profile of a chain.  Index 1 is the vertex carrying leg 1,
/// index `k` the vertex carrying the legs `2..=m+1`; `exps[i]` is the psi
/// exponent on the half-edge of vertex `i` pointing towards leg 1 (on leg 1
/// itself for the first vertex).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChainProfile {
    pub genera: Vec<u32>,
    pub exps: Vec<u32>,
}

/// Chain profiles with `k` vertices for total genus `g`, degree `d` and `m`
/// further legs: `sum exps + k - 1 = d`, `sum genera = g`, all but the last
/// vertex of positive genus (the last too when `m <= 1`), and for
/// `i = 2..=k`: `exps[i..] sum + k - i <= 2 genera[i..] sum + m - 2`.
pub fn enum_chains(g: u32, d: u32, m: u32, k: usize) -> Vec<ChainProfile> {
    if k == 0 || (d as i64) < k as i64 - 1 {
        return Vec::new();
    }
    let total_exp = d - (k as u32 - 1);
    let mut out = Vec::new();
    let mut genera = vec![0u32; k];
    let mut exps = vec![0u32; k];
    // Fill from the last vertex backwards so the suffix conditions can prune.
    #[allow(clippy::too_many_arguments)]
    fn rec(
        i: usize,
        k: usize,
        m: u32,
        g_left: u32,
        e_left: u32,
        g_suffix: i64,
        e_suffix: i64,
        genera: &mut Vec<u32>,
        exps: &mut Vec<u32>,
        out: &mut Vec<ChainProfile>,
    ) {
        // `i` is the 0-based index being filled, descending.
        let min_g = if i + 1 < k || m <= 1 { 1 } else { 0 };
        if i == 0 {
            if g_left < min_g {
                return;
            }
            genera[0] = g_left;
            exps[0] = e_left;
            out.push(ChainProfile { genera: genera.clone(), exps: exps.clone() });
            return;
        }
        for gi in min_g..=g_left {
            for ei in 0..=e_left {
                let gs = g_suffix + gi as i64;
                let es = e_suffix + ei as i64;
                // Condition for the 1-based index i+1: suffix of length k-i.
                let len = (k - i) as i64;
                if es + len - 1 > 2 * gs + m as i64 - 2 {
                    continue;
                }
                genera[i] = gi;
                exps[i] = ei;
                rec(i - 1, k, m, g_left - gi, e_left - ei, gs, es, genera, exps, out);
            }
        }
    }
    rec(k - 1, k, m, g, total_exp, 0, 0, &mut genera, &mut exps, &mut out);
    out.sort();
    out
}

/// Set of canonical codes, handy for comparing enumerations.
pub fn code_set(trees: &[DecoratedTree]) -> BTreeSet<Vec<u32>> {
    trees.iter().map(|t| t.canonical_code()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force: grow every rooted tree with at most `max_v` vertices and
    /// genera summing to `g`, distribute the legs in every way, keep the
    /// stable ones and deduplicate by rooted canonical code.
    fn brute_srt(g: u32, n: u32, m: u32, max_v: usize, leafy: bool, allow_pu: bool) -> BTreeSet<Vec<u32>> {
        let mut out = BTreeSet::new();
        // Parent arrays: parent[i] < i.
        fn parents(nv: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() + 1 == nv {
                out.push(cur.clone());
                return;
            }
            for p in 0..=cur.len() {
                cur.push(p);
                parents(nv, cur, out);
                cur.pop();
            }
        }
        for nv in 1..=max_v {
            let mut ps = Vec::new();
            parents(nv, &mut Vec::new(), &mut ps);
            for p in ps {
                let gens = bounded_vectors(nv, g as i64).into_iter().filter(|v| v.iter().sum::<u32>() == g);
                for gv in gens {
                    let total = (nv as u64).pow(n);
                    for code in 0..total {
                        let mut t = DecoratedTree::new(gv.clone());
                        for (i, &pp) in p.iter().enumerate() {
                            t.add_edge(pp, i + 1, 0, 0);
                        }
                        let mut c = code;
                        for l in 1..=n {
                            t.add_leg((c % nv as u64) as usize, l, 0);
                            c /= nv as u64;
                        }
                        for l in n + 1..=n + m {
                            t.add_leg(0, l, 0);
                        }
                        t.root = Some(0);
                        let r = t.rooted_view(0);
                        let val = t.valences();
                        let ok = (0..nv).all(|v| {
                            let st = 2 * t.genera[v] as i64 - 2 + val[v] as i64 > 0;
                            st || (allow_pu && v != 0 && t.genera[v] == 0 && val[v] == 2 && potentially_unstable(&t, &r, v, n))
                        });
                        let leaf_ok = !leafy
                            || (0..nv).all(|v| v == 0 || !r.children[v].is_empty() || t.half_edges.iter().any(|h| h.vertex == v && matches!(h.slot, Slot::Leg(l) if l <= n)));
                        if ok && leaf_ok {
                            out.insert(t.canonical_code());
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn set_partition_counts_are_bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203];
        for (k, &b) in bell.iter().enumerate() {
            assert_eq!(set_partitions((1u64 << k) - 1).len(), b);
        }
    }

    #[test]
    fn bounded_set_partitions_sum_stirling_numbers() {
        // Stirling numbers of the second kind S(6, j), j = 0..=6.
        let stirling = [0, 1, 31, 90, 65, 15, 1];
        for k in 0..=6 {
            let expected: usize = stirling[..=k].iter().sum();
            assert_eq!(set_partitions_at_most(0b111111, k).len(), expected);
        }
        assert_eq!(set_partitions_at_most(0, 0), vec![Vec::<u64>::new()]);
    }

    #[test]
    fn srt_matches_brute_force() {
        for &(g, n, m) in &[(0, 3, 1), (0, 4, 0), (1, 2, 1), (1, 1, 0), (2, 1, 0), (1, 2, 2), (0, 3, 2), (2, 0, 1)] {
            let max_v = (2 * g + n + m - 2) as usize;
            for leafy in [false, true] {
                let fast = enum_srt(g, n, m, SrtOptions { max_edges: None, leafy, leg_budget: None, root_level_m: None });
                let codes = code_set(&fast);
                assert_eq!(codes.len(), fast.len(), "duplicates for {g},{n},{m}");
                assert_eq!(codes, brute_srt(g, n, m, max_v, leafy, false), "g={g} n={n} m={m} leafy={leafy}");
                for t in &fast {
                    assert!(t.validate().is_empty());
                }
            }
        }
    }

    #[test]
    fn edge_cap_filters_exactly() {
        let all = enum_srt(1, 3, 1, SrtOptions::default());
        for cap in 0..4 {
            let capped = enum_srt(1, 3, 1, SrtOptions { max_edges: Some(cap), leafy: false, leg_budget: None, root_level_m: None });
            let expect: BTreeSet<_> = all.iter().filter(|t| t.num_edges() <= cap).map(|t| t.canonical_code()).collect();
            assert_eq!(code_set(&capped), expect);
        }
    }

    #[test]
    fn single_vertex_only_when_no_room() {
        // M_{0,3}: only the trivalent vertex.
        assert_eq!(enum_srt(0, 2, 1, SrtOptions::default()).len(), 1);
        // M_{0,4} rooted at the frozen leg: the vertex plus three splittings.
        assert_eq!(enum_srt(0, 3, 1, SrtOptions::default()).len(), 4);
    }

    #[test]
    fn complete_shapes_match_brute_force() {
        for &(g, n, m) in &[(0, 1, 2), (0, 2, 2), (1, 1, 1), (1, 2, 1), (0, 3, 2), (2, 1, 0), (1, 1, 2)] {
            let max_v = 6;
            let shapes = enum_complete_shapes(g, n, m, None);
            let codes = code_set(&shapes);
            assert_eq!(codes.len(), shapes.len());
            let brute: BTreeSet<_> = brute_srt(g, n, m, max_v, true, true)
                .into_iter()
                .filter(|c| is_complete(&DecoratedTree::from_code(c).unwrap(), n))
                .collect();
            // The brute force is limited in vertex count; every brute-force
            // tree must be found and every found tree small enough must be
            // in the brute force.
            let small: BTreeSet<_> = shapes.iter().filter(|t| t.num_vertices() <= max_v).map(|t| t.canonical_code()).collect();
            assert_eq!(small, brute, "g={g} n={n} m={m}");
        }
    }

    #[test]
    fn admissible_single_vertex_example() {
        // (g, n, m, d) = (0, 1, 2, (3)): deeper shapes fail condition (d) or
        // admissibility, leaving the single vertex.
        let a = enum_admissible(0, 1, 2, &[3], None, false);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].num_vertices(), 1);
        assert_eq!(a[0].half_edges[a[0].leg_half_edge(1).unwrap()].psi, 3);
    }

    #[test]
    fn admissibility_bounds_decorations() {
        for t in enum_admissible(1, 2, 1, &[1, 2], None, false) {
            let r = t.rooted_view(t.root.unwrap());
            let deg = r.depth();
            let mut gk = 0i64;
            for k in 1..deg {
                gk += (0..t.num_vertices()).filter(|&v| r.level[v] == k).map(|v| t.genera[v] as i64).sum::<i64>();
                let s: i64 = (0..t.num_vertices())
                    .filter(|&v| r.level[v] == k + 1)
                    .map(|v| t.half_edges[r.down_half[v].unwrap()].psi as i64)
                    .sum();
                assert!(s <= 2 * gk - 2 + 1);
            }
            assert!(is_complete(&t, 2));
        }
    }

    #[test]
    fn level_functions_match_brute_force() {
        for t in enum_srt(0, 4, 1, SrtOptions::default()).iter().chain(enum_srt(1, 2, 1, SrtOptions::default()).iter()) {
            let r = t.rooted_view(t.root.unwrap());
            let got: BTreeSet<Vec<u32>> = enum_levels(t, &r).into_iter().collect();
            let nv = t.num_vertices();
            let mut brute = BTreeSet::new();
            for code in 0..(nv as u64).pow(nv as u32) {
                let lv: Vec<u32> = (0..nv).map(|i| ((code / (nv as u64).pow(i as u32)) % nv as u64) as u32 + 1).collect();
                let deg = *lv.iter().max().unwrap();
                let surj = (1..=deg).all(|k| lv.contains(&k));
                let mono = (0..nv).all(|v| r.parent[v].map_or(lv[v] == 1, |p| lv[v] > lv[p]));
                if surj && mono {
                    brute.insert(lv);
                }
            }
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn chain_examples() {
        let c = enum_chains(2, 5, 2, 2);
        let expect = vec![
            ChainProfile { genera: vec![1, 1], exps: vec![2, 2] },
            ChainProfile { genera: vec![1, 1], exps: vec![3, 1] },
            ChainProfile { genera: vec![1, 1], exps: vec![4, 0] },
            ChainProfile { genera: vec![2, 0], exps: vec![4, 0] },
        ];
        assert_eq!(c, expect);
        for k in 4..7 {
            assert!(enum_chains(2, 5, 2, k).is_empty());
        }
    }

    #[test]
    fn chains_match_brute_force() {
        for g in 0..4u32 {
            for m in 0..4u32 {
                for d in 0..(2 * g + m + 2) {
                    for k in 1..5usize {
                        let got = enum_chains(g, d, m, k);
                        let mut brute = Vec::new();
                        for gs in bounded_vectors(k, g as i64) {
                            if gs.iter().sum::<u32>() != g {
                                continue;
                            }
                            if (d as i64) < k as i64 - 1 {
                                continue;
                            }
                            for es in bounded_vectors(k, d as i64 - (k as i64 - 1)) {
                                if es.iter().sum::<u32>() + k as u32 - 1 != d {
                                    continue;
                                }
                                let pos_ok = (0..k).all(|i| gs[i] >= if i + 1 < k || m <= 1 { 1 } else { 0 });
                                let ineq_ok = (1..k).all(|i| {
                                    let es_: i64 = es[i..].iter().map(|&x| x as i64).sum();
                                    let gs_: i64 = gs[i..].iter().map(|&x| x as i64).sum();
                                    es_ + (k - 1 - i) as i64 <= 2 * gs_ + m as i64 - 2
                                });
                                if pos_ok && ineq_ok {
                                    brute.push(ChainProfile { genera: gs.clone(), exps: es });
                                }
                            }
                        }
                        brute.sort();
                        assert_eq!(got, brute, "g={g} d={d} m={m} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn psi_assignments_respect_dimensions() {
        for t in enum_srt(1, 2, 1, SrtOptions::default()) {
            let r = t.rooted_view(t.root.unwrap());
            let hs = r.h_tilde(&t, 2);
            for total in 0..4 {
                let ps = enum_p(&t, &hs, total);
                for p in &ps {
                    let mut tt = t.clone();
                    for (&h, &x) in hs.iter().zip(p) {
                        tt.half_edges[h].psi = x;
                    }
                    assert!(!tt.exceeds_vertex_dims());
                    assert_eq!(p.iter().sum::<u32>(), total);
                }
                // Brute force count.
                let brute = bounded_vectors(hs.len(), total as i64)
                    .into_iter()
                    .filter(|p| p.iter().sum::<u32>() == total)
                    .filter(|p| {
                        let mut tt = t.clone();
                        for (&h, &x) in hs.iter().zip(p) {
                            tt.half_edges[h].psi = x;
                        }
                        !tt.exceeds_vertex_dims()
                    })
                    .count();
                assert_eq!(ps.len(), brute);
            }
        }
    }

    #[test]
    fn dr_trees_have_k_vertices() {
        let ts = enum_dr_trees(0, 3, 2);
        // Splittings {i,j | k, frozen}, plus {1,2,3 | frozen} is unstable at the root.
        assert_eq!(ts.len(), 3);
        assert!(ts.iter().all(|t| t.num_vertices() == 2));
    }
}
