//! SCMA codebooks, the bit→codeword encoder and the decoder factor graph.
//!
//! User `u` owns an `R × M` matrix whose columns are its codewords. Every
//! codeword is nonzero on the same `d_v` OREs (the user's support); the
//! binary mapping matrix `V_u` places those `d_v` constellation dimensions
//! onto the `R` OREs.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64, ZERO};

const BUNDLED_6X4: &str = include_str!("../data/scma_6x4.txt");

/// How strictly ORE loads are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularity {
    /// Every ORE carries exactly `d_f = d_v·N_u / R` users.
    Strict,
    /// ORE loads differ by at most one (used for user-count sweeps where
    /// `d_v·N_u / R` is fractional).
    Balanced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    books: Vec<CMat>,
    supports: Vec<Vec<usize>>,
    d_v: usize,
}

impl Codebook {
    /// Builds a codebook and checks its structure and ORE loading.
    pub fn new(books: Vec<CMat>, d_v: usize, regularity: Regularity) -> Result<Self> {
        let cb = Codebook::unchecked(books, d_v)?;
        validate_with(&cb, regularity)?;
        Ok(cb)
    }

    /// Shape checks only; supports are read from the first codeword of each
    /// user. Call [`validate_codebook`] before decoding with it.
    pub fn unchecked(books: Vec<CMat>, d_v: usize) -> Result<Self> {
        let first = books
            .first()
            .ok_or_else(|| Error::Codebook("no users".into()))?;
        let (r, m) = first.shape();
        if r == 0 || m == 0 {
            return Err(Error::Codebook("empty codebook matrix".into()));
        }
        if let Some(u) = books.iter().position(|b| b.shape() != (r, m)) {
            return Err(Error::Codebook(format!(
                "user {u} has shape {:?}, expected ({r}, {m})",
                books[u].shape()
            )));
        }
        let supports = books
            .iter()
            .map(|b| (0..r).filter(|&i| b[(i, 0)] != ZERO).collect())
            .collect();
        Ok(Codebook {
            books,
            supports,
            d_v,
        })
    }

    /// The bundled six-user, four-ORE book (M = 4, d_v = 2) at unit average
    /// codeword energy.
    pub fn bundled() -> Self {
        let mut cb = parse_codebook(BUNDLED_6X4).expect("bundled codebook parses");
        cb.normalize_energy();
        cb
    }

    pub fn user_count(&self) -> usize {
        self.books.len()
    }

    /// R, the number of OREs.
    pub fn ore_count(&self) -> usize {
        self.books[0].rows()
    }

    /// M, the number of codewords per user.
    pub fn codeword_count(&self) -> usize {
        self.books[0].cols()
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.codeword_count().trailing_zeros()
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    /// Largest number of users on any ORE (`d_f` for regular books).
    pub fn d_f(&self) -> usize {
        self.ore_loads().into_iter().max().unwrap_or(0)
    }

    pub fn ore_loads(&self) -> Vec<usize> {
        let mut loads = vec![0; self.ore_count()];
        for s in &self.supports {
            for &r in s {
                loads[r] += 1;
            }
        }
        loads
    }

    /// `N_u / R`.
    pub fn overloading(&self) -> f64 {
        self.user_count() as f64 / self.ore_count() as f64
    }

    pub fn matrix(&self, user: usize) -> &CMat {
        &self.books[user]
    }

    /// OREs occupied by `user`, ascending.
    pub fn support(&self, user: usize) -> &[usize] {
        &self.supports[user]
    }

    /// Entry `C_u(m, r)`.
    #[inline]
    pub fn entry(&self, user: usize, m: usize, ore: usize) -> C64 {
        self.books[user][(ore, m)]
    }

    /// Binary mapping matrix `V_u` (`R × d_v`).
    pub fn mapping_matrix(&self, user: usize) -> Vec<Vec<u8>> {
        let s = &self.supports[user];
        (0..self.ore_count())
            .map(|r| s.iter().map(|&c| u8::from(c == r)).collect())
            .collect()
    }

    /// Mean codeword energy over all users and symbols.
    pub fn average_energy(&self) -> f64 {
        let total: f64 = self
            .books
            .iter()
            .map(|b| b.as_slice().iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum();
        total / (self.user_count() * self.codeword_count()) as f64
    }

    /// Rescales every codeword so the average energy is one.
    pub fn normalize_energy(&mut self) {
        let e = self.average_energy();
        if e > 0.0 {
            let s = 1.0 / e.sqrt();
            for b in &mut self.books {
                b.scale(s);
            }
        }
    }

    /// A deterministic `N_u`-user book on `R` OREs for parameter sweeps.
    ///
    /// Supports are picked greedily from all `C(R, d_v)` ORE subsets to keep
    /// loads balanced. Each dimension carries an M-PSK point whose label order
    /// differs per dimension, rotated by a per-ORE offset so that colliding
    /// users are separated in phase.
    pub fn generate(users: usize, ores: usize, d_v: usize, m: usize) -> Result<Self> {
        if d_v == 0 || d_v > ores {
            return Err(Error::Codebook(format!("d_v = {d_v} with R = {ores}")));
        }
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::Codebook(format!("M = {m} is not a power of two ≥ 2")));
        }
        let subsets = combinations(ores, d_v);
        if users == 0 || users > subsets.len() {
            return Err(Error::Codebook(format!(
                "{users} users need distinct supports; only {} exist",
                subsets.len()
            )));
        }
        let mut loads = vec![0usize; ores];
        let mut used = vec![false; subsets.len()];
        let mut supports = Vec::with_capacity(users);
        for _ in 0..users {
            let (best, _) = subsets
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .map(|(i, s)| {
                    let peak = s.iter().map(|&r| loads[r] + 1).max().unwrap();
                    let sum: usize = s.iter().map(|&r| loads[r]).sum();
                    (i, (peak, sum))
                })
                .min_by_key(|(i, key)| (*key, *i))
                .unwrap();
            used[best] = true;
            for &r in &subsets[best] {
                loads[r] += 1;
            }
            supports.push(subsets[best].clone());
        }
        let spread = loads.iter().max().unwrap() - loads.iter().min().unwrap();
        if spread > 1 {
            if let Some(pick) = balanced_pick(&subsets, users, ores) {
                supports = pick.iter().map(|&i| subsets[i].clone()).collect();
                loads = vec![0; ores];
                for s in &supports {
                    for &r in s {
                        loads[r] += 1;
                    }
                }
            }
        }

        // Position of each user among the users sharing an ORE.
        let mut slot = vec![0usize; ores];
        let amp = 1.0 / (d_v as f64).sqrt();
        let step = 2.0 * PI / m as f64;
        let books = supports
            .iter()
            .map(|s| {
                let mut b = CMat::zeros(ores, m);
                for (k, &r) in s.iter().enumerate() {
                    let rot = step * slot[r] as f64 / loads[r] as f64;
                    slot[r] += 1;
                    for sym in 0..m {
                        // Dimension k relabels symbols by a cyclic shift.
                        let label = (sym + k) % m;
                        let phase = 0.5 * step + step * gray(label) as f64 + rot;
                        b[(r, sym)] = C64::from_polar(amp, phase);
                    }
                }
                b
            })
            .collect();
        Codebook::new(books, d_v, Regularity::Balanced)
    }
}

/// Depth-first search for `users` distinct subsets whose ORE loads differ
/// by at most one. Gives up after a fixed node budget.
fn balanced_pick(subsets: &[Vec<usize>], users: usize, ores: usize) -> Option<Vec<usize>> {
    fn rec(
        subsets: &[Vec<usize>],
        start: usize,
        users: usize,
        cap: usize,
        loads: &mut [usize],
        pick: &mut Vec<usize>,
        budget: &mut usize,
    ) -> bool {
        if pick.len() == users {
            let (lo, hi) = (loads.iter().min().unwrap(), loads.iter().max().unwrap());
            return hi - lo <= 1;
        }
        if subsets.len() - start < users - pick.len() || *budget == 0 {
            return false;
        }
        *budget -= 1;
        for i in start..subsets.len() {
            if subsets[i].iter().any(|&r| loads[r] >= cap) {
                continue;
            }
            subsets[i].iter().for_each(|&r| loads[r] += 1);
            pick.push(i);
            if rec(subsets, i + 1, users, cap, loads, pick, budget) {
                return true;
            }
            pick.pop();
            subsets[i].iter().for_each(|&r| loads[r] -= 1);
        }
        false
    }
    let d_v = subsets.first()?.len();
    let cap = (users * d_v).div_ceil(ores);
    let mut loads = vec![0; ores];
    let mut pick = Vec::with_capacity(users);
    let mut budget = 1_000_000;
    rec(subsets, 0, users, cap, &mut loads, &mut pick, &mut budget).then_some(pick)
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Checks every codebook invariant with regular ORE loading.
pub fn validate_codebook(cb: &Codebook) -> Result<()> {
    validate_with(cb, Regularity::Strict)
}

pub fn validate_with(cb: &Codebook, regularity: Regularity) -> Result<()> {
    let (r, m) = (cb.ore_count(), cb.codeword_count());
    let d_v = cb.d_v;
    if !m.is_power_of_two() {
        return Err(Error::Codebook(format!("M = {m} is not a power of two")));
    }
    if d_v == 0 || d_v > r {
        return Err(Error::Codebook(format!("d_v = {d_v} with R = {r}")));
    }
    for (u, b) in cb.books.iter().enumerate() {
        let support = &cb.supports[u];
        for col in 0..m {
            let nz: Vec<usize> = (0..r).filter(|&i| b[(i, col)] != ZERO).collect();
            if nz.len() != d_v {
                return Err(Error::Codebook(format!(
                    "user {u}, codeword {col}: {} nonzero entries, expected d_v = {d_v}",
                    nz.len()
                )));
            }
            if &nz != support {
                return Err(Error::Codebook(format!(
                    "user {u}, codeword {col}: support {nz:?} differs from {support:?}"
                )));
            }
            if b.row(0).len() != m || !(0..r).all(|i| b[(i, col)].is_finite()) {
                return Err(Error::Codebook(format!("user {u}, codeword {col}: non-finite entry")));
            }
        }
    }
    let loads = cb.ore_loads();
    let n_u = cb.user_count();
    match regularity {
        Regularity::Strict => {
            if (d_v * n_u) % r != 0 {
                return Err(Error::Codebook(format!(
                    "d_v·N_u = {} is not divisible by R = {r}",
                    d_v * n_u
                )));
            }
            let d_f = d_v * n_u / r;
            if let Some(ore) = loads.iter().position(|&l| l != d_f) {
                return Err(Error::Codebook(format!(
                    "ORE {ore} carries {} users, expected d_f = {d_f}",
                    loads[ore]
                )));
            }
        }
        Regularity::Balanced => {
            let lo = *loads.iter().min().unwrap();
            let hi = *loads.iter().max().unwrap();
            if hi - lo > 1 || lo == 0 {
                return Err(Error::Codebook(format!("unbalanced ORE loads {loads:?}")));
            }
        }
    }
    Ok(())
}

/// Codeword `m` of `user` as an R-vector.
pub fn encode(cb: &Codebook, user: usize, m: usize) -> Result<Vec<C64>> {
    if user >= cb.user_count() {
        return Err(Error::Index(format!("user {user} of {}", cb.user_count())));
    }
    if m >= cb.codeword_count() {
        return Err(Error::Index(format!(
            "codeword {m} of {}",
            cb.codeword_count()
        )));
    }
    Ok((0..cb.ore_count()).map(|r| cb.entry(user, m, r)).collect())
}

/// Big-endian bits → symbol index.
pub fn bits_to_index(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
}

/// Symbol index → `width` big-endian bits.
pub fn index_to_bits(index: usize, width: u32) -> Vec<bool> {
    (0..width).rev().map(|k| (index >> k) & 1 == 1).collect()
}

/// Encodes `log2(M)` big-endian bits for `user`.
pub fn encode_bits(cb: &Codebook, user: usize, bits: &[bool]) -> Result<Vec<C64>> {
    if bits.len() != cb.bits_per_symbol() as usize {
        return Err(Error::Index(format!(
            "{} bits for a {}-bit symbol",
            bits.len(),
            cb.bits_per_symbol()
        )));
    }
    encode(cb, user, bits_to_index(bits))
}

/// Bipartite FN (ORE) / VN (user) adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGraph {
    /// Λ_r: users on ORE r, ascending.
    pub ore_users: Vec<Vec<usize>>,
    /// Ω_u: OREs of user u, ascending.
    pub user_ores: Vec<Vec<usize>>,
}

impl FactorGraph {
    /// Position of `user` inside `ore_users[ore]`.
    pub fn slot(&self, ore: usize, user: usize) -> Option<usize> {
        self.ore_users[ore].iter().position(|&u| u == user)
    }
}

pub fn factor_graph(cb: &Codebook) -> FactorGraph {
    let mut ore_users = vec![Vec::new(); cb.ore_count()];
    for (u, s) in cb.supports.iter().enumerate() {
        for &r in s {
            ore_users[r].push(u);
        }
    }
    FactorGraph {
        ore_users,
        user_ores: cb.supports.clone(),
    }
}

fn format_complex(out: &mut String, v: C64) {
    let (re, im) = (v.re, v.im);
    let re = if re == 0.0 { 0.0 } else { re };
    let im = if im == 0.0 { 0.0 } else { im };
    if im.is_sign_negative() {
        let _ = write!(out, "{re}-{}j", -im);
    } else {
        let _ = write!(out, "{re}+{im}j");
    }
}

fn parse_complex(tok: &str) -> Option<C64> {
    let body = tok.strip_suffix('j').or_else(|| tok.strip_suffix('i'));
    let Some(body) = body else {
        return tok.parse::<f64>().ok().map(|re| C64::new(re, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E'))?;
    let re = body[..split].parse::<f64>().ok()?;
    let im = body[split..].parse::<f64>().ok()?;
    Some(C64::new(re, im))
}

/// Parses the codebook text format: header `scma Nu R M dv`, then for each
/// user `M` lines of `R` entries written `re+imj`. Only shapes are checked.
pub fn parse_codebook(text: &str) -> Result<Codebook> {
    const WHAT: &str = "codebook file";
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::parse(WHAT, 1, "missing header"))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    let nums: Option<Vec<usize>> = tok.iter().skip(1).map(|t| t.parse().ok()).collect();
    let (nu, r, m, dv) = match (tok.first(), nums.as_deref()) {
        (Some(&"scma"), Some(&[nu, r, m, dv])) if nu > 0 && r > 0 && m > 0 => (nu, r, m, dv),
        _ => return Err(Error::parse(WHAT, hl, "header must be `scma Nu R M dv`")),
    };
    let mut books = Vec::with_capacity(nu);
    for u in 0..nu {
        let mut b = CMat::zeros(r, m);
        for sym in 0..m {
            let (ln, line) = lines.next().ok_or_else(|| {
                Error::parse(WHAT, hl, format!("user {u}: expected {m} codeword lines"))
            })?;
            let entries: Vec<&str> = line.split_whitespace().collect();
            if entries.len() != r {
                return Err(Error::parse(
                    WHAT,
                    ln,
                    format!("{} entries, expected R = {r}", entries.len()),
                ));
            }
            for (ore, e) in entries.iter().enumerate() {
                b[(ore, sym)] = parse_complex(e)
                    .ok_or_else(|| Error::parse(WHAT, ln, format!("bad complex `{e}`")))?;
            }
        }
        books.push(b);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::parse(WHAT, ln, "trailing data after last user"));
    }
    Codebook::unchecked(books, dv)
}

pub fn format_codebook(cb: &Codebook) -> String {
    let mut out = format!(
        "scma {} {} {} {}\n",
        cb.user_count(),
        cb.ore_count(),
        cb.codeword_count(),
        cb.d_v
    );
    for b in &cb.books {
        for sym in 0..b.cols() {
            for ore in 0..b.rows() {
                if ore > 0 {
                    out.push(' ');
                }
                format_complex(&mut out, b[(ore, sym)]);
            }
            out.push('\n');
        }
    }
    out
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_codebook(&text)
}

pub fn save_codebook(path: impl AsRef<Path>, cb: &Codebook) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_codebook(cb)).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_book_is_valid() {
        let cb = Codebook::bundled();
        validate_codebook(&cb).unwrap();
        assert_eq!((cb.user_count(), cb.ore_count(), cb.codeword_count()), (6, 4, 4));
        assert_eq!(cb.d_f(), 3);
        assert_eq!(cb.d_f() * cb.ore_count(), cb.d_v() * cb.user_count());
        assert!((cb.overloading() - 1.5).abs() < 1e-12);
        assert!((cb.average_energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_nonzeros_rejected() {
        let mut b = Codebook::bundled().books;
        b[0][(0, 2)] = C64::new(0.3, 0.0);
        let err = Codebook::new(b, 2, Regularity::Strict).unwrap_err();
        assert!(err.to_string().contains("user 0, codeword 2"), "{err}");
    }

    #[test]
    fn duplicate_support_breaks_regularity() {
        // Enumerate all 6 supports of 4 choose 2; copying any one user's
        // matrix over another's leaves some ORE with a load other than 3.
        let base = Codebook::bundled();
        for src in 0..6 {
            for dst in 0..6 {
                if src == dst {
                    continue;
                }
                let mut b = base.books.clone();
                b[dst] = b[src].clone();
                let cb = Codebook::unchecked(b, 2).unwrap();
                assert!(cb.ore_loads().iter().any(|&l| l != 3));
                assert!(validate_codebook(&cb).is_err());
            }
        }
    }

    #[test]
    fn encode_matches_support_and_is_injective() {
        let cb = Codebook::bundled();
        let g = factor_graph(&cb);
        for u in 0..6 {
            let words: Vec<Vec<C64>> = (0..4).map(|m| encode(&cb, u, m).unwrap()).collect();
            for w in &words {
                let nz: Vec<usize> = (0..4).filter(|&r| w[r] != ZERO).collect();
                assert_eq!(nz, g.user_ores[u]);
            }
            for a in 0..4 {
                for b in a + 1..4 {
                    let d: f64 = words[a].iter().zip(&words[b]).map(|(x, y)| (x - y).norm_sqr()).sum();
                    assert!(d > 1e-3, "user {u} codewords {a},{b} too close");
                }
            }
        }
        assert!(encode(&cb, 6, 0).is_err());
        assert!(encode(&cb, 0, 4).is_err());
    }

    #[test]
    fn bit_mapping_is_big_endian() {
        assert_eq!(bits_to_index(&[true, false]), 2);
        assert_eq!(bits_to_index(&[false, true]), 1);
        assert_eq!(index_to_bits(2, 2), vec![true, false]);
        let cb = Codebook::bundled();
        assert_eq!(encode_bits(&cb, 3, &[true, true]).unwrap(), encode(&cb, 3, 3).unwrap());
        assert!(encode_bits(&cb, 3, &[true]).is_err());
    }

    #[test]
    fn factor_graph_of_bundled_book() {
        let g = factor_graph(&Codebook::bundled());
        assert!(g.ore_users.iter().all(|l| l.len() == 3));
        assert!(g.user_ores.iter().all(|o| o.len() == 2));
    }

    #[test]
    fn single_user_on_every_ore() {
        let b = CMat::from_fn(3, 2, |r, m| C64::new(1.0 + r as f64, m as f64));
        let cb = Codebook::new(vec![b], 3, Regularity::Strict).unwrap();
        let g = factor_graph(&cb);
        assert_eq!(g.ore_users, vec![vec![0], vec![0], vec![0]]);
        assert_eq!(g.user_ores, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn mapping_matrix_has_zero_rows() {
        let cb = Codebook::bundled();
        let v = cb.mapping_matrix(0);
        assert_eq!(v.len(), 4);
        let zero_rows = v.iter().filter(|row| row.iter().all(|&b| b == 0)).count();
        assert_eq!(zero_rows, 4 - 2);
    }

    #[test]
    fn text_roundtrip_and_complex_parsing() {
        assert_eq!(parse_complex("0.5-0.25j"), Some(C64::new(0.5, -0.25)));
        assert_eq!(parse_complex("-1e-3+2E-2j"), Some(C64::new(-1e-3, 2e-2)));
        assert_eq!(parse_complex("0+0j"), Some(ZERO));
        assert_eq!(parse_complex("abc"), None);
        let cb = Codebook::bundled();
        let back = parse_codebook(&format_codebook(&cb)).unwrap();
        assert_eq!(back, cb);
        assert!(parse_codebook("scma 1 2 2\n").is_err());
        assert!(parse_codebook("scma 1 2 2 1\n1+0j 0+0j\n").is_err());
    }

    #[test]
    fn generated_books_are_balanced() {
        for users in 4..=20 {
            let cb = Codebook::generate(users, 7, 2, 4).unwrap();
            validate_with(&cb, Regularity::Balanced).unwrap();
            assert_eq!(cb.user_count(), users);
            assert!((cb.average_energy() - 1.0).abs() < 1e-12);
            let supports: std::collections::HashSet<_> =
                (0..users).map(|u| cb.support(u).to_vec()).collect();
            assert_eq!(supports.len(), users);
        }
        assert!(Codebook::generate(22, 7, 2, 4).is_err());
        assert!(Codebook::generate(4, 7, 2, 3).is_err());
        let small = Codebook::generate(3, 3, 2, 2).unwrap();
        validate_codebook(&small).unwrap();
        assert_eq!(small.d_f(), 2);
        let cb = Codebook::generate(14, 7, 2, 4).unwrap();
        validate_codebook(&cb).unwrap();
        assert_eq!(cb.d_f(), 4);
    }
}
