//! The intersection engine against the independent KdV/string oracle.

mod common;

use common::{all_compositions, KdvOracle, Q};
use num_bigint::BigInt;
use tautree::intersect::{genus0_closed_form, Intersector};

fn fr(a: i64, b: i64) -> Q {
    Q::new(BigInt::from(a), BigInt::from(b))
}

#[test]
fn oracle_reproduces_classical_values() {
    let mut o = KdvOracle::new();
    assert_eq!(o.correlator(0, &[0, 0, 0]), fr(1, 1));
    assert_eq!(o.correlator(0, &[1, 0, 0, 0]), fr(1, 1));
    assert_eq!(o.correlator(1, &[1]), fr(1, 24));
    assert_eq!(o.correlator(2, &[4]), fr(1, 1152));
    assert_eq!(o.correlator(2, &[2, 3]), fr(29, 5760));
    assert_eq!(o.correlator(3, &[7]), fr(1, 82944));
}

#[test]
fn engine_matches_oracle_up_to_genus_three() {
    let ix = Intersector::new();
    let mut o = KdvOracle::new();
    let mut checked = 0;
    for g in 0..=3u32 {
        for n in 1..=6usize {
            let dim = 3 * g as i64 - 3 + n as i64;
            if 2 * g as i64 - 2 + n as i64 <= 0 || dim < 0 {
                continue;
            }
            for d in all_compositions(dim as u32, n) {
                assert_eq!(ix.correlator(g, &d), o.correlator(g, &d), "g={g} d={d:?}");
                checked += 1;
            }
        }
    }
    assert!(checked > 1000, "only {checked} correlators checked");
}

#[test]
fn genus_zero_closed_form_matches_oracle() {
    let mut o = KdvOracle::new();
    for n in 3..=8usize {
        for d in all_compositions(n as u32 - 3, n) {
            assert_eq!(genus0_closed_form(&d), o.correlator(0, &d), "d={d:?}");
        }
    }
}

#[test]
fn off_dimension_correlators_vanish() {
    let ix = Intersector::new();
    assert_eq!(ix.correlator(1, &[2]), fr(0, 1));
    assert_eq!(ix.correlator(0, &[0, 0]), fr(0, 1));
    assert_eq!(ix.correlator(2, &[1, 1]), fr(0, 1));
}
