//! The double-ramification side: edge flows, the tree weight `C(T)` and the
//! classes `A^1_{0,d}` and `A^0_{0,d}`.
//!
//! Flows and `C(T)` are computed for every genus.  The classes are only
//! built in genus 0, where every double ramification cycle is the
//! fundamental class and `lambda_0 = 1`, so that
//! `A-check^k_0 = sum_{T in SRT^k_{0,n,1}} C(T) (prod_{h in H^e_+} a(h)) [T]`.
//!
//! Polynomials in `a_1..a_n` are stored as maps from exponent vectors to
//! classes; the last variable `a_{n+1}` is always eliminated as
//! `-(a_1 + ... + a_n)`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::graph_core::{forgetful_pushforward_nopsi, DecoratedTree, Slot, TautClass};
use crate::rational::Rational;
use crate::tree_enum::enum_dr_trees;

/// An integer linear combination of `a_1..a_n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LinearForm {
    pub coeffs: Vec<i64>,
}

impl LinearForm {
    pub fn zero(n: u32) -> Self {
        LinearForm { coeffs: vec![0; n as usize] }
    }

    /// The variable `a_i` for `1 <= i <= n`, and `-(a_1+..+a_n)` for
    /// `i = n+1`.
    pub fn var(i: u32, n: u32) -> Self {
        let mut f = LinearForm::zero(n);
        if i == n + 1 {
            f.coeffs.iter_mut().for_each(|c| *c = -1);
        } else {
            f.coeffs[i as usize - 1] = 1;
        }
        f
    }

    pub fn add(&self, other: &LinearForm) -> LinearForm {
        LinearForm { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect() }
    }

    pub fn neg(&self) -> LinearForm {
        LinearForm { coeffs: self.coeffs.iter().map(|a| -a).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }
}

/// A rooted tree of `SRT^k_{g,n,1}` with the flow `a(h)` on every
/// half-edge (indexed like `tree.half_edges`).
#[derive(Clone, Debug)]
pub struct FlowTree {
    pub tree: DecoratedTree,
    pub flows: Vec<LinearForm>,
}

/// The unique flows with `a(sigma_i) = a_i`, `a(h) + a(iota(h)) = 0` and
/// zero sum at every vertex, found by propagating from the leaves to the
/// root.  Legs `1..=n` are regular; leg `n+1` carries `-(a_1+..+a_n)`.
pub fn compute_flows(tree: &DecoratedTree, n: u32) -> FlowTree {
    let root = tree.root.expect("rooted tree");
    let r = tree.rooted_view(root);
    let mut flows = vec![LinearForm::zero(n); tree.half_edges.len()];
    for (i, h) in tree.half_edges.iter().enumerate() {
        if let Slot::Leg(l) = h.slot {
            flows[i] = LinearForm::var(l, n);
        }
    }
    for &v in r.order.iter().rev() {
        let Some(up) = r.up_half[v] else { continue };
        let mut total = LinearForm::zero(n);
        for &h in &r.adjacency[v] {
            if h != up {
                total = total.add(&flows[h]);
            }
        }
        flows[up] = total.neg();
        flows[r.down_half[v].unwrap()] = total;
    }
    FlowTree { tree: tree.clone(), flows }
}

/// `C(T) = prod_v r(v) / sum_{w in Desc[v]} r(w)` with `r(v) = 2g(v)-2+n(v)`.
pub fn c_coefficient(tree: &DecoratedTree) -> Rational {
    let root = tree.root.expect("rooted tree");
    let r = tree.rooted_view(root);
    let val = tree.valences();
    let rv: Vec<i64> = (0..tree.num_vertices()).map(|v| 2 * tree.genera[v] as i64 - 2 + val[v] as i64).collect();
    let mut desc = rv.clone();
    for &v in r.order.iter().rev() {
        if let Some(p) = r.parent[v] {
            desc[p] += desc[v];
        }
    }
    let mut c = Rational::one();
    for v in 0..tree.num_vertices() {
        c *= Rational::new(rv[v].into(), desc[v].into());
    }
    c
}

/// A polynomial in `a_1..a_n` with class coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyClass {
    pub g: u32,
    pub legs: u32,
    pub terms: BTreeMap<Vec<u32>, TautClass>,
}

impl PolyClass {
    pub fn zero(g: u32, legs: u32) -> Self {
        PolyClass { g, legs, terms: BTreeMap::new() }
    }

    /// Adds `coeff * monomial * [tree]`.
    pub fn add_term(&mut self, mono: Vec<u32>, tree: &DecoratedTree, coeff: Rational) {
        let (g, legs) = (self.g, self.legs);
        let c = self.terms.entry(mono.clone()).or_insert_with(|| TautClass::zero(g, legs));
        c.add_term(tree, coeff);
        if c.is_zero() {
            self.terms.remove(&mono);
        }
    }

    /// Adds `s * monomial * class`.
    pub fn add_class(&mut self, mono: Vec<u32>, class: &TautClass, s: &Rational) {
        let (g, legs) = (self.g, self.legs);
        let c = self.terms.entry(mono.clone()).or_insert_with(|| TautClass::zero(g, legs));
        c.add_scaled(class, s);
        if c.is_zero() {
            self.terms.remove(&mono);
        }
    }

    /// Coefficient of `prod a_i^{e_i}`.
    pub fn coefficient(&self, e: &[u32]) -> TautClass {
        self.terms.get(e).cloned().unwrap_or_else(|| TautClass::zero(self.g, self.legs))
    }

    /// Total degrees of the monomials that occur.
    pub fn monomial_degrees(&self) -> Vec<u32> {
        self.terms.keys().map(|e| e.iter().sum()).collect()
    }

    /// Applies a linear map to every coefficient.
    pub fn map_classes(&self, legs: u32, f: impl Fn(&TautClass) -> Result<TautClass>) -> Result<PolyClass> {
        let mut out = PolyClass::zero(self.g, legs);
        for (e, c) in &self.terms {
            out.add_class(e.clone(), &f(c)?, &Rational::one());
        }
        Ok(out)
    }

    /// Exact division by `a_1 + ... + a_n`, eliminating the lexicographically
    /// largest monomial (largest power of `a_1` first) at each step.  A
    /// nonzero remainder is an error.
    pub fn divide_by_sum(&self) -> Result<PolyClass> {
        let mut rest = self.clone();
        let mut q = PolyClass::zero(self.g, self.legs);
        while let Some((lead, c)) = rest.terms.iter().next_back().map(|(e, c)| (e.clone(), c.clone())) {
            if lead.is_empty() || lead[0] == 0 {
                return Err(Error::NotDivisible(format!(
                    "remainder with leading monomial {lead:?} after division by the sum of the variables"
                )));
            }
            let mut qm = lead.clone();
            qm[0] -= 1;
            q.add_class(qm.clone(), &c, &Rational::one());
            for i in 0..lead.len() {
                let mut e = qm.clone();
                e[i] += 1;
                rest.add_class(e, &c, &-Rational::one());
            }
        }
        Ok(q)
    }
}

/// Expands `prod_k (sum_{i in masks_k} a_i)` over `n` variables.
fn expand_product(masks: &[u64], n: u32) -> BTreeMap<Vec<u32>, BigInt> {
    let mut poly = BTreeMap::new();
    poly.insert(vec![0u32; n as usize], BigInt::one());
    for &mask in masks {
        let mut next = BTreeMap::new();
        for (mono, c) in &poly {
            for i in 0..n as usize {
                if mask >> i & 1 == 1 {
                    let mut m2 = mono.clone();
                    m2[i] += 1;
                    *next.entry(m2).or_insert_with(BigInt::zero) += c;
                }
            }
        }
        poly = next;
    }
    poly
}

/// `A-check^k_0(a_1, .., a_n, -sum a_i)` on `M_{0,n+1}`: the sum over
/// `T in SRT^k_{0,n,1}` of `C(T) prod_{h in H^e_+} a(h) [T]`.
pub fn a_check_genus0(n: u32, k: usize) -> PolyClass {
    let mut out = PolyClass::zero(0, n + 1);
    for t in enum_dr_trees(0, n, k) {
        let flows = compute_flows(&t, n);
        let r = t.rooted_view(t.root.unwrap());
        let c = c_coefficient(&t);
        let mut masks = Vec::new();
        for v in 0..t.num_vertices() {
            if let Some(h) = r.down_half[v] {
                let f = &flows.flows[h];
                // Flows on downward half-edges are sums of distinct variables.
                let mut mask = 0u64;
                for (i, &x) in f.coeffs.iter().enumerate() {
                    assert!(x == 0 || x == 1, "downward flow is a subset sum");
                    if x == 1 {
                        mask |= 1 << i;
                    }
                }
                masks.push(mask);
            }
        }
        let mut plain = t.clone();
        plain.root = None;
        for (mono, coeff) in expand_product(&masks, n) {
            out.add_term(mono, &plain, &c * Rational::from_integer(coeff));
        }
    }
    out
}

/// `A^1_{0,d}`: the coefficient of `a^d` in `A-check^{sum d + 1}_0`, a class
/// on `M_{0,n+1}`.
pub fn a1_class_genus0(d: &[u32]) -> Result<TautClass> {
    let n = d.len() as u32;
    if n == 0 || n + 1 < 3 {
        return Err(Error::InvalidSpec("A^1 in genus 0 needs n >= 2".into()));
    }
    let k = d.iter().sum::<u32>() as usize + 1;
    Ok(a_check_genus0(n, k).coefficient(d))
}

/// `A^0_{0,d}`: the coefficient of `a^d` in
/// `(1 / sum a_i) pi_* A-check^{sum d + 2}_0`, where `pi` forgets leg `n+1`;
/// a class on `M_{0,n}`.
pub fn a0_class_genus0(d: &[u32]) -> Result<TautClass> {
    let n = d.len() as u32;
    if n < 3 {
        return Err(Error::InvalidSpec("A^0 in genus 0 needs n >= 3".into()));
    }
    Ok(a0_polynomial_genus0(n, d.iter().sum::<u32>() as usize + 2)?.coefficient(d))
}

/// `A^k_0(a_1..a_n) = (1 / sum a_i) pi_* A-check^k_0`.
pub fn a0_polynomial_genus0(n: u32, k: usize) -> Result<PolyClass> {
    let pushed = a_check_genus0(n, k).map_classes(n, |c| forgetful_pushforward_nopsi(c, n + 1))?;
    pushed.divide_by_sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, rat};

    /// `C(T)` recomputed from explicit descendant sets.
    fn c_by_descendant_sets(t: &DecoratedTree) -> Rational {
        let r = t.rooted_view(t.root.unwrap());
        let val = t.valences();
        let rv = |v: usize| 2 * t.genera[v] as i64 - 2 + val[v] as i64;
        let mut c = Rational::one();
        for v in 0..t.num_vertices() {
            let mut total = 0;
            for w in 0..t.num_vertices() {
                let mut x = Some(w);
                while let Some(y) = x {
                    if y == v {
                        total += rv(w);
                        break;
                    }
                    x = r.parent[y];
                }
            }
            c *= Rational::new(rv(v).into(), total.into());
        }
        c
    }

    #[test]
    fn flows_are_balanced() {
        for g in 0..=1 {
            for n in 1..=4 {
                for k in 1..=4 {
                    for t in enum_dr_trees(g, n, k) {
                        let f = compute_flows(&t, n);
                        for v in 0..t.num_vertices() {
                            let mut s = LinearForm::zero(n);
                            for (i, h) in t.half_edges.iter().enumerate() {
                                if h.vertex == v {
                                    s = s.add(&f.flows[i]);
                                }
                            }
                            assert!(s.is_zero());
                        }
                        for (i, h) in t.half_edges.iter().enumerate() {
                            match h.slot {
                                Slot::Edge(j) => assert!(f.flows[i].add(&f.flows[j]).is_zero()),
                                Slot::Leg(l) => assert_eq!(f.flows[i], LinearForm::var(l, n)),
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn flows_on_a_chain() {
        // Root (frozen leg 2) - child (leg 1).
        let mut t = DecoratedTree::new(vec![1, 1]);
        t.add_leg(0, 2, 0);
        let (a, b) = t.add_edge(0, 1, 0, 0);
        t.add_leg(1, 1, 0);
        t.root = Some(0);
        let f = compute_flows(&t, 1);
        assert_eq!(f.flows[a], LinearForm::var(1, 1));
        assert_eq!(f.flows[b], LinearForm::var(1, 1).neg());
        let single = compute_flows(&{
            let mut s = DecoratedTree::single_vertex(0, &[(1, 0), (2, 0), (3, 0)]);
            s.root = Some(0);
            s
        }, 2);
        assert_eq!(single.flows[2], LinearForm { coeffs: vec![-1, -1] });
    }

    #[test]
    fn c_coefficient_examples() {
        let mut t = DecoratedTree::single_vertex(2, &[(1, 0), (2, 0)]);
        t.root = Some(0);
        assert_eq!(c_coefficient(&t), rat(1));
        // Chain root (g1) - child (g2): g1 / (g1 + g2).
        for (g1, g2) in [(1, 1), (1, 2), (3, 1)] {
            let mut t = DecoratedTree::new(vec![g1, g2]);
            t.add_leg(0, 2, 0);
            t.add_edge(0, 1, 0, 0);
            t.add_leg(1, 1, 0);
            t.root = Some(0);
            assert_eq!(c_coefficient(&t), frac(g1 as i64, (g1 + g2) as i64));
        }
        // Longer chains: prod g_i / (g_i + .. + g_l).
        let gs = [2u32, 1, 3, 1];
        let mut t = DecoratedTree::new(gs.to_vec());
        t.add_leg(0, 2, 0);
        for i in 1..gs.len() {
            t.add_edge(i - 1, i, 0, 0);
        }
        t.add_leg(gs.len() - 1, 1, 0);
        t.root = Some(0);
        let mut want = rat(1);
        for i in 0..gs.len() {
            let tail: u32 = gs[i..].iter().sum();
            want *= frac(gs[i] as i64, tail as i64);
        }
        assert_eq!(c_coefficient(&t), want);
    }

    #[test]
    fn c_coefficient_matches_descendant_sets() {
        for g in 0..=2 {
            for n in 1..=3 {
                for k in 1..=4 {
                    for t in enum_dr_trees(g, n, k) {
                        let c = c_coefficient(&t);
                        assert_eq!(c, c_by_descendant_sets(&t));
                        assert!(c > rat(0) && c <= rat(1));
                    }
                }
            }
        }
    }

    #[test]
    fn a_check_is_homogeneous() {
        for n in 2..=5 {
            for k in 1..=4 {
                let p = a_check_genus0(n, k);
                assert!(p.monomial_degrees().iter().all(|&d| d as usize == k - 1));
            }
        }
    }

    #[test]
    fn a1_trivial_exponents_give_fundamental_class() {
        let c = a1_class_genus0(&[0, 0]).unwrap();
        let want = TautClass::from_tree(0, 3, &DecoratedTree::single_vertex(0, &[(1, 0), (2, 0), (3, 0)]), rat(1));
        assert_eq!(c, want);
    }

    #[test]
    fn division_is_exact() {
        for n in 3..=6 {
            for k in 2..=(n as usize - 1) {
                a0_polynomial_genus0(n, k).unwrap();
            }
        }
    }

    #[test]
    fn division_reports_remainder() {
        let mut p = PolyClass::zero(0, 3);
        let t = DecoratedTree::single_vertex(0, &[(1, 0), (2, 0), (3, 0)]);
        p.add_term(vec![0, 1], &t, rat(1));
        assert!(matches!(p.divide_by_sum(), Err(Error::NotDivisible(_))));
        // (a1 + a2) * a1 / (a1 + a2) = a1.
        let mut p = PolyClass::zero(0, 3);
        p.add_term(vec![2, 0], &t, rat(1));
        p.add_term(vec![1, 1], &t, rat(1));
        let q = p.divide_by_sum().unwrap();
        assert_eq!(q.terms.len(), 1);
        assert_eq!(q.coefficient(&[1, 0]).len(), 1);
    }

    #[test]
    fn a0_of_zero_exponents() {
        // k = 2 on M_{0,4}: the three boundary divisors with leg 4 on the
        // root; after forgetting leg 4 and dividing, the point class.
        let c = a0_class_genus0(&[0, 0, 0]).unwrap();
        let want = TautClass::from_tree(0, 3, &DecoratedTree::single_vertex(0, &[(1, 0), (2, 0), (3, 0)]), rat(1));
        assert_eq!(c, want);
    }

    fn pairings_agree(a: &TautClass, b: &TautClass) -> bool {
        let ix = crate::intersect::Intersector::new();
        let dim = a.ambient_dim();
        let deg = a.degree().or(b.degree()).unwrap_or(0) as i64;
        if deg > dim {
            return true;
        }
        crate::intersect::compositions((dim - deg) as u32, a.n as usize)
            .iter()
            .all(|e| ix.pair(a, e) == ix.pair(b, e))
    }

    #[test]
    fn genus0_conjectures_small() {
        use crate::b_classes::{b_class_fast, BSpec};
        for n in 2..=3u32 {
            for total in 0..=2u32 {
                for d in crate::intersect::compositions(total, n as usize) {
                    let b1 = b_class_fast(&BSpec::new(0, n, 1, d.clone()).unwrap());
                    assert!(pairings_agree(&b1, &a1_class_genus0(&d).unwrap()), "A1 {d:?}");
                    if n >= 3 {
                        let b0 = b_class_fast(&BSpec::new(0, n, 0, d.clone()).unwrap());
                        assert!(pairings_agree(&b0, &a0_class_genus0(&d).unwrap()), "A0 {d:?}");
                    }
                }
            }
        }
    }
}
