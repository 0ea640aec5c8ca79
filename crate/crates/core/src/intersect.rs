//! Psi-class intersection numbers and pairings of classes with psi monomials.
//!
//! `<tau_{d_1} ... tau_{d_n}>_g = int_{M_{g,n}} psi_1^{d_1} ... psi_n^{d_n}`
//! is computed exactly.  Genus 0 uses the multinomial closed form, insertions
//! `tau_0` and `tau_1` are removed with the string and dilaton equations, and
//! everything else goes through the Dijkgraaf–Verlinde–Verlinde recursion,
//! normalised by `<tau_0^3>_0 = 1` and `<tau_1>_1 = 1/24`.
//!
//! Values are memoised in a concurrent in-memory table that can be backed by
//! a plain-text file (one `g;d_1,...,d_n;num/den` line per correlator, `d`
//! sorted decreasingly, lines sorted textually on flush).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_traits::{One, Zero};
use parking_lot::RwLock;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph_core::{Slot, TautClass};
use crate::rational::{factorial, fmt_rational, frac, odd_double_factorial, parse_rational, rat, Rational};

/// Environment variable naming the default correlator cache file.
pub const CACHE_ENV: &str = "TAUTREE_CACHE";

/// Key of a correlator: genus and exponents sorted decreasingly.
pub type CorrelatorKey = (u32, Vec<u32>);

fn normalise(g: u32, d: &[u32]) -> CorrelatorKey {
    let mut v = d.to_vec();
    v.sort_unstable_by(|a, b| b.cmp(a));
    (g, v)
}

/// True when the correlator can be nonzero: the space is stable and the
/// degree matches its dimension.
pub fn dimension_matches(g: u32, d: &[u32]) -> bool {
    let n = d.len() as i64;
    2 * g as i64 - 2 + n > 0 && d.iter().map(|&x| x as i64).sum::<i64>() == 3 * g as i64 - 3 + n
}

/// Genus-0 closed form `(n-3)! / prod d_i!` (zero off dimension).
pub fn genus0_closed_form(d: &[u32]) -> Rational {
    if !dimension_matches(0, d) {
        return Rational::zero();
    }
    let mut den = num_bigint::BigInt::one();
    for &x in d {
        den *= factorial(x as u64);
    }
    Rational::new(factorial(d.len() as u64 - 3), den)
}

/// One step of the DVV recursion for `<tau_{k+1} tau_rest>_g`, with the
/// smaller correlators supplied by `f`.
fn dvv_step(g: u32, k: u32, rest: &[u32], f: &mut dyn FnMut(u32, &[u32]) -> Rational) -> Rational {
    let mut acc = Rational::zero();
    // Merging with another insertion.
    for j in 0..rest.len() {
        let dj = rest[j];
        let mut v = rest.to_vec();
        v[j] = dj + k;
        let c = Rational::new(odd_double_factorial((k + dj + 1) as u64), odd_double_factorial(dj as u64));
        acc += c * f(g, &v);
    }
    if k >= 1 {
        let half = frac(1, 2);
        for r in 0..k {
            let s = k - 1 - r;
            let c = Rational::from_integer(odd_double_factorial(r as u64 + 1) * odd_double_factorial(s as u64 + 1)) * &half;
            // Non-separating node.
            if g >= 1 {
                let mut v = vec![r, s];
                v.extend_from_slice(rest);
                acc += &c * f(g - 1, &v);
            }
            // Separating node.
            let n = rest.len();
            for mask in 0u64..(1 << n) {
                let (mut i1, mut i2) = (vec![r], vec![s]);
                for (j, &x) in rest.iter().enumerate() {
                    if mask >> j & 1 == 1 {
                        i1.push(x);
                    } else {
                        i2.push(x);
                    }
                }
                for g1 in 0..=g {
                    let a = f(g1, &i1);
                    if a.is_zero() {
                        continue;
                    }
                    acc += &c * a * f(g - g1, &i2);
                }
            }
        }
    }
    acc / Rational::from_integer(odd_double_factorial(k as u64 + 2))
}

/// Pure DVV evaluation without shortcuts (no closed form, no string or
/// dilaton reductions), memoised locally.  Used to cross-check the closed
/// form and the shortcuts.
pub fn correlator_dvv(g: u32, d: &[u32]) -> Rational {
    fn go(g: u32, d: &[u32], memo: &mut HashMap<CorrelatorKey, Rational>) -> Rational {
        if !dimension_matches(g, d) {
            return Rational::zero();
        }
        let key = normalise(g, d);
        if let Some(v) = memo.get(&key) {
            return v.clone();
        }
        let v = if key.1.iter().all(|&x| x == 0) {
            // Only <tau_0^3>_0 survives the dimension constraint.
            rat(1)
        } else if g == 1 && key.1 == [1] {
            frac(1, 24)
        } else {
            let k = key.1[0] - 1;
            let rest = key.1[1..].to_vec();
            dvv_step(g, k, &rest, &mut |gg, dd| go(gg, dd, memo))
        };
        memo.insert(key, v.clone());
        v
    }
    go(g, d, &mut HashMap::new())
}

/// Correlator engine with a shared memo table and optional file backing.
pub struct Intersector {
    table: RwLock<HashMap<CorrelatorKey, Rational>>,
    path: Option<PathBuf>,
    dirty: RwLock<bool>,
}

impl Default for Intersector {
    fn default() -> Self {
        Intersector::new()
    }
}

impl Intersector {
    /// Purely in-memory engine.
    pub fn new() -> Self {
        Intersector { table: RwLock::new(HashMap::new()), path: None, dirty: RwLock::new(false) }
    }

    /// Engine backed by `path`; existing entries are loaded.
    pub fn with_cache_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let table = if path.exists() { read_cache_file(&path)? } else { HashMap::new() };
        Ok(Intersector { table: RwLock::new(table), path: Some(path), dirty: RwLock::new(false) })
    }

    /// Engine backed by the explicit path if given, else by the file named in
    /// [`CACHE_ENV`], else in-memory.
    pub fn from_path_or_env(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Intersector::with_cache_file(p),
            None => match std::env::var_os(CACHE_ENV) {
                Some(p) if !p.is_empty() => Intersector::with_cache_file(PathBuf::from(p)),
                _ => Ok(Intersector::new()),
            },
        }
    }

    pub fn cache_path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// `<tau_{d_1} ... tau_{d_n}>_g`.
    pub fn correlator(&self, g: u32, d: &[u32]) -> Rational {
        if !dimension_matches(g, d) {
            return Rational::zero();
        }
        let key = normalise(g, d);
        if let Some(v) = self.table.read().get(&key) {
            return v.clone();
        }
        let v = self.compute(&key);
        self.table.write().insert(key, v.clone());
        *self.dirty.write() = true;
        v
    }

    fn compute(&self, key: &CorrelatorKey) -> Rational {
        let (g, d) = (key.0, &key.1);
        let n = d.len();
        if g == 0 {
            return genus0_closed_form(d);
        }
        if g == 1 && d.as_slice() == [1] {
            return frac(1, 24);
        }
        // String equation: d is sorted decreasingly, so a zero sits last.
        if d[n - 1] == 0 {
            let rest = &d[..n - 1];
            let mut acc = Rational::zero();
            for j in 0..rest.len() {
                if rest[j] > 0 {
                    let mut v = rest.to_vec();
                    v[j] -= 1;
                    acc += self.correlator(g, &v);
                }
            }
            return acc;
        }
        // Dilaton equation.
        if let Some(pos) = d.iter().position(|&x| x == 1) {
            let mut rest = d.clone();
            rest.remove(pos);
            let factor = 2 * g as i64 - 2 + rest.len() as i64;
            return rat(factor) * self.correlator(g, &rest);
        }
        let k = d[0] - 1;
        dvv_step(g, k, &d[1..], &mut |gg, dd| self.correlator(gg, dd))
    }

    /// Pairing of a class with `prod psi_i^{a_i}`: every term contributes its
    /// coefficient times the product over vertices of the correlators of the
    /// psi exponents at that vertex (legs receive the extra `a_i`).
    pub fn pair(&self, c: &TautClass, a: &[u32]) -> Rational {
        assert_eq!(a.len(), c.n as usize, "monomial has the wrong number of legs");
        let mut acc = Rational::zero();
        for t in c.terms() {
            let tree = &t.tree;
            let mut exps: Vec<Vec<u32>> = vec![Vec::new(); tree.num_vertices()];
            for h in &tree.half_edges {
                let extra = match h.slot {
                    Slot::Leg(l) => a[l as usize - 1],
                    Slot::Edge(_) => 0,
                };
                exps[h.vertex].push(h.psi + extra);
            }
            let mut prod = t.coeff.clone();
            for (v, e) in exps.iter().enumerate() {
                prod *= self.correlator(tree.genera[v], e);
                if prod.is_zero() {
                    break;
                }
            }
            acc += prod;
        }
        acc
    }

    /// Pairs the class with every psi monomial of complementary degree (for
    /// each degree present in the class) and returns the nonzero pairings.
    /// An empty result is a necessary condition for the class to vanish.
    pub fn vanishing_sweep(&self, c: &TautClass) -> Vec<(Vec<u32>, Rational)> {
        let dim = c.ambient_dim();
        let mut degrees: Vec<u32> = c.terms().map(|t| t.tree.degree()).collect();
        degrees.sort_unstable();
        degrees.dedup();
        let mut monomials = Vec::new();
        for deg in degrees {
            let codim = dim - deg as i64;
            if codim >= 0 {
                monomials.extend(compositions(codim as u32, c.n as usize));
            }
        }
        let mut out: Vec<(Vec<u32>, Rational)> = monomials
            .into_par_iter()
            .filter_map(|a| {
                let v = self.pair(c, &a);
                (!v.is_zero()).then_some((a, v))
            })
            .collect();
        out.sort();
        out
    }

    /// All entries, sorted by key.
    pub fn entries(&self) -> BTreeMap<CorrelatorKey, Rational> {
        self.table.read().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn len(&self) -> usize {
        self.table.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.read().is_empty()
    }

    /// Inserts externally computed entries; a differing existing value is a
    /// conflict and nothing is inserted.
    pub fn merge_entries(&self, other: &BTreeMap<CorrelatorKey, Rational>) -> Result<usize> {
        let mut table = self.table.write();
        for (k, v) in other {
            if let Some(old) = table.get(k) {
                if old != v {
                    return Err(Error::CacheConflict(format!(
                        "{} has {} here and {} in the other cache",
                        format_key(k),
                        fmt_rational(old),
                        fmt_rational(v)
                    )));
                }
            }
        }
        let mut added = 0;
        for (k, v) in other {
            if table.insert(k.clone(), v.clone()).is_none() {
                added += 1;
            }
        }
        if added > 0 {
            *self.dirty.write() = true;
        }
        Ok(added)
    }

    /// Writes the table to the backing file (sorted, via a temporary file and
    /// a rename).  Entries already on disk are kept: the file is append-only
    /// in content.
    pub fn flush(&self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        if !*self.dirty.read() && path.exists() {
            return Ok(());
        }
        if path.exists() {
            // Pick up entries written by other processes since loading.
            let on_disk = read_cache_file(path)?;
            self.merge_entries(&on_disk.into_iter().collect())?;
        }
        write_cache_file(path, &self.entries())?;
        *self.dirty.write() = false;
        Ok(())
    }
}

/// All vectors of `len` nonnegative integers summing to `total`.
pub fn compositions(total: u32, len: usize) -> Vec<Vec<u32>> {
    fn rec(left: u32, len: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() + 1 == len {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for x in (0..=left).rev() {
            cur.push(x);
            rec(left - x, len, cur, out);
            cur.pop();
        }
    }
    if len == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    rec(total, len, &mut Vec::new(), &mut out);
    out
}

fn format_key(k: &CorrelatorKey) -> String {
    let d: Vec<String> = k.1.iter().map(|x| x.to_string()).collect();
    format!("{};{}", k.0, d.join(","))
}

/// Parses one cache line `g;d_1,...,d_n;num/den`.
pub fn parse_cache_line(line: &str) -> Result<(CorrelatorKey, Rational)> {
    let bad = || Error::Parse(format!("bad cache line {line:?}"));
    let mut parts = line.trim().split(';');
    let g: u32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let ds = parts.next().ok_or_else(bad)?;
    let d: Vec<u32> = if ds.is_empty() {
        Vec::new()
    } else {
        ds.split(',').map(|x| x.parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    let v = parse_rational(parts.next().ok_or_else(bad)?)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((normalise(g, &d), v))
}

/// Reads a cache file; repeated keys must agree.
pub fn read_cache_file(path: &Path) -> Result<HashMap<CorrelatorKey, Rational>> {
    let text = fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = parse_cache_line(line)?;
        if let Some(old) = out.insert(k.clone(), v.clone()) {
            if old != v {
                return Err(Error::CacheConflict(format!("{} appears with two values in {}", format_key(&k), path.display())));
            }
        }
    }
    Ok(out)
}

/// Renders entries in the cache file format, one line each, sorted
/// textually.
pub fn render_cache(entries: &BTreeMap<CorrelatorKey, Rational>) -> String {
    let mut lines: Vec<String> = entries.iter().map(|(k, v)| format!("{};{}", format_key(k), fmt_rational(v))).collect();
    lines.sort();
    let mut out = String::new();
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

/// Writes entries as text lines in sorted order, atomically replacing `path`.
pub fn write_cache_file(path: &Path, entries: &BTreeMap<CorrelatorKey, Rational>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(render_cache(entries).as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_core::DecoratedTree;

    #[test]
    fn base_values() {
        let e = Intersector::new();
        assert_eq!(e.correlator(0, &[0, 0, 0]), rat(1));
        assert_eq!(e.correlator(1, &[1]), frac(1, 24));
        assert_eq!(e.correlator(2, &[4]), frac(1, 1152));
        assert_eq!(e.correlator(1, &[0]), rat(0));
        assert_eq!(e.correlator(0, &[1, 0, 0]), rat(0));
        // Well-known values.
        assert_eq!(e.correlator(2, &[3, 2]), frac(29, 5760));
        assert_eq!(e.correlator(2, &[2, 2, 2]), frac(7, 240));
        assert_eq!(e.correlator(3, &[7]), frac(1, 82944));
        assert_eq!(e.correlator(1, &[1, 1]), frac(1, 24));
        assert_eq!(e.correlator(0, &[1, 1, 0, 0, 0]), rat(2));
    }

    #[test]
    fn shortcuts_agree_with_plain_dvv() {
        let e = Intersector::new();
        for g in 0..=3u32 {
            for n in 1..=5usize {
                let dim = 3 * g as i64 - 3 + n as i64;
                if dim < 0 || 2 * g as i64 - 2 + n as i64 <= 0 {
                    continue;
                }
                for d in compositions(dim as u32, n) {
                    assert_eq!(e.correlator(g, &d), correlator_dvv(g, &d), "g={g} d={d:?}");
                }
            }
        }
    }

    #[test]
    fn pairing_factorises_over_vertices() {
        // Divisor [g=1 leg 1 | g=1 leg 2] on M_{2,2} paired with psi_1^2 psi_2^2:
        // <tau_2 tau_0>_1 <tau_0 tau_2>_1 = (1/24)^2.
        let mut t = DecoratedTree::new(vec![1, 1]);
        t.add_leg(0, 1, 0);
        t.add_leg(1, 2, 0);
        t.add_edge(0, 1, 0, 0);
        let c = TautClass::from_tree(2, 2, &t, rat(3));
        let e = Intersector::new();
        assert_eq!(e.pair(&c, &[2, 2]), rat(3) * frac(1, 576));
        assert_eq!(e.pair(&c, &[3, 1]), rat(0));
        let sweep = e.vanishing_sweep(&c);
        assert_eq!(sweep, vec![(vec![2, 2], frac(1, 192))]);
    }

    #[test]
    fn cache_file_round_trip_and_merge() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        let e = Intersector::with_cache_file(&p).unwrap();
        e.correlator(2, &[2, 2, 2]);
        e.flush().unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut sorted: Vec<&str> = text.lines().collect();
        sorted.sort();
        assert_eq!(sorted, text.lines().collect::<Vec<_>>());
        let e2 = Intersector::with_cache_file(&p).unwrap();
        assert_eq!(e2.entries(), e.entries());
        // Merge is idempotent, conflicts abort.
        assert_eq!(e2.merge_entries(&e.entries()).unwrap(), 0);
        let mut bad = BTreeMap::new();
        bad.insert((2, vec![2, 2, 2]), rat(1));
        assert!(matches!(e2.merge_entries(&bad), Err(Error::CacheConflict(_))));
        assert!(parse_cache_line("1;1;1/24").is_ok());
        assert!(parse_cache_line("1;x;1/24").is_err());
    }

    #[test]
    fn concurrent_readers_agree() {
        let e = Intersector::new();
        let keys: Vec<Vec<u32>> = compositions(7, 3);
        let vals: Vec<Rational> = keys.par_iter().map(|d| e.correlator(2, d)).collect();
        for (d, v) in keys.iter().zip(vals) {
            assert_eq!(v, correlator_dvv(2, d));
        }
    }
}
