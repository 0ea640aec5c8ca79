//! Exact rational helpers on top of [`num_rational::BigRational`].
//!
//! Every number in the crate is an always-reduced big rational; the textual
//! form is `num/den` (the denominator is always written, also for integers).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};

/// Exact rational number used throughout the crate.
pub type Rational = BigRational;

/// The integer `k` as a rational.
pub fn rat(k: i64) -> Rational {
    Rational::from_integer(BigInt::from(k))
}

/// The fraction `num/den` (reduced).
pub fn frac(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// `k!` as a big integer.
pub fn factorial(k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 2..=k {
        acc *= i;
    }
    acc
}

/// Falling factorial `(a)_k = a (a-1) ... (a-k+1)`, with `(a)_0 = 1`.
pub fn falling(a: i64, k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k as i64 {
        acc *= a - i;
    }
    acc
}

/// Double factorial `(2k-1)!!` for `k >= 0`, i.e. `1 * 3 * ... * (2k-1)`,
/// with the convention `(-1)!! = 1`.
pub fn odd_double_factorial(k: u64) -> BigInt {
    let mut acc = BigInt::one();
    let mut j = 1u64;
    while j < 2 * k {
        acc *= j;
        j += 2;
    }
    acc
}

/// `(-1)^k` as a rational.
pub fn sign(k: i64) -> Rational {
    if k.rem_euclid(2) == 0 {
        Rational::one()
    } else {
        -Rational::one()
    }
}

/// Formats a rational as `num/den`.
pub fn fmt_rational(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses `num/den` or a bare integer `num`; the result is reduced.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational: {s:?}"));
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n: BigInt = n.parse().map_err(|_| bad())?;
    let d: BigInt = d.parse().map_err(|_| bad())?;
    if d.is_zero() {
        return Err(bad());
    }
    Ok(Rational::new(n, d))
}
