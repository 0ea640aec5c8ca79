//! Shared helpers for the integration tests: an independent oracle for
//! psi intersection numbers.
//!
//! The library computes `<tau_{d_1} ... tau_{d_n}>_g` with the
//! Dijkgraaf–Verlinde–Verlinde recursion.  The oracle here uses a different
//! route: the string equation removes `tau_0`, and correlators without
//! `tau_0` are obtained from Witten's KdV equation
//!
//! `(2k+1) <<tau_k tau_0^2>> = <<tau_{k-1} tau_0>> <<tau_0^3>>
//!     + 2 <<tau_{k-1} tau_0^2>> <<tau_0^2>> + 1/4 <<tau_{k-1} tau_0^4>>`
//!
//! applied at `k = a + 2` to `<tau_0^2 tau_{a+2} Z>`, where `tau_a` is the
//! largest insertion of the target `<tau_a Z>`.  Two string steps tie
//! `<tau_0^2 tau_{a+2} Z>` back to the target.  The only input is
//! `<tau_0^3>_0 = 1`.

#![allow(dead_code)]

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

pub type Q = BigRational;

fn q(k: i64) -> Q {
    Q::from_integer(BigInt::from(k))
}

/// Memoising KdV/string oracle for `<tau_{d_1} ... tau_{d_n}>_g`.
#[derive(Default)]
pub struct KdvOracle {
    memo: HashMap<(u32, Vec<u32>), Q>,
}

impl KdvOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn correlator(&mut self, g: u32, d: &[u32]) -> Q {
        let n = d.len() as i64;
        let total: i64 = d.iter().map(|&x| x as i64).sum();
        if 2 * g as i64 - 2 + n <= 0 || total != 3 * g as i64 - 3 + n {
            return Q::zero();
        }
        let mut key = d.to_vec();
        key.sort_unstable_by(|a, b| b.cmp(a));
        if let Some(v) = self.memo.get(&(g, key.clone())) {
            return v.clone();
        }
        let v = self.compute(g, &key);
        self.memo.insert((g, key), v.clone());
        v
    }

    fn compute(&mut self, g: u32, d: &[u32]) -> Q {
        if g == 0 && d == [0, 0, 0] {
            return Q::one();
        }
        if *d.last().unwrap() == 0 {
            return self.string(g, &d[..d.len() - 1]);
        }
        // No tau_0: g >= 1 (genus-0 correlators always contain one).
        let a = d[0];
        let z = &d[1..];
        let s1 = sum_lowered(z, |zz| self.correlator(g, &with(&[a + 1], &zz)));
        let s2 = sum_lowered(z, |zz| self.correlator(g, &with(&[0, a + 2], &zz)));
        let mut rest = Q::zero();
        let subsets = 1u64 << z.len();
        for mask in 0..subsets {
            let (za, zb) = split(z, mask);
            for g1 in 0..=g {
                let g2 = g - g1;
                // The (A = Z, g2 = 0) product is <tau_{a+1} tau_0 Z>_g, which
                // is the target plus s1; it is moved to the left-hand side.
                if !(zb.is_empty() && g2 == 0) {
                    let x = self.correlator(g1, &with(&[a + 1, 0], &za));
                    if !x.is_zero() {
                        rest += x * self.correlator(g2, &with(&[0, 0, 0], &zb));
                    }
                }
                let x = self.correlator(g1, &with(&[a + 1, 0, 0], &za));
                if !x.is_zero() {
                    rest += q(2) * x * self.correlator(g2, &with(&[0, 0], &zb));
                }
            }
        }
        rest += self.correlator(g - 1, &with(&[a + 1, 0, 0, 0, 0], z)) / q(4);
        // (2a+5)(T + s1 + s2) = T + s1 + rest
        let c = q(2 * a as i64 + 4);
        rest / c.clone() - s1 - s2 * q(2 * a as i64 + 5) / c
    }

    /// `<tau_0 rest>_g` by the string equation.
    fn string(&mut self, g: u32, rest: &[u32]) -> Q {
        sum_lowered(rest, |v| self.correlator(g, &v))
    }
}

fn with(head: &[u32], tail: &[u32]) -> Vec<u32> {
    head.iter().chain(tail).copied().collect()
}

fn split(z: &[u32], mask: u64) -> (Vec<u32>, Vec<u32>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, &x) in z.iter().enumerate() {
        if mask >> i & 1 == 1 { a.push(x) } else { b.push(x) }
    }
    (a, b)
}

/// `sum_j f(v with v_j lowered by one)` over the positive entries of `v`.
fn sum_lowered(v: &[u32], mut f: impl FnMut(Vec<u32>) -> Q) -> Q {
    let mut acc = Q::zero();
    for j in 0..v.len() {
        if v[j] > 0 {
            let mut w = v.to_vec();
            w[j] -= 1;
            acc += f(w);
        }
    }
    acc
}

/// Every exponent vector of length `n` (all orders) summing to `total`.
pub fn all_compositions(total: u32, n: usize) -> Vec<Vec<u32>> {
    tautree::intersect::compositions(total, n)
}
