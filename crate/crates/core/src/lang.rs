//! Feature spaces, languages as explicit tables, the compositionality
//! predicate, feature permutations, and enumeration of language families.
//!
//! Feature vectors and messages encode to a single integer via mixed radix
//! with index 0 most significant; every dense table is indexed by this code.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Largest total cardinality we allow for a dense feature space.
pub const MAX_SPACE_CARDINALITY: usize = 1_000_000;

/// Largest `|F|` for which `|F|!` language enumeration is permitted
/// (9! = 362,880 languages).
pub const MAX_ENUMERABLE_CARDINALITY: usize = 9;

/// The factored meaning space `F = F_1 x ... x F_K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpace {
    sizes: Vec<usize>,
}

impl FeatureSpace {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Domain("feature space needs K >= 1 features".into()));
        }
        if sizes.iter().any(|&m| m == 0) {
            return Err(Error::Domain("feature value sets must be nonempty".into()));
        }
        let mut card: usize = 1;
        for &m in &sizes {
            card = card
                .checked_mul(m)
                .filter(|&c| c <= MAX_SPACE_CARDINALITY)
                .ok_or_else(|| {
                    Error::InstanceTooLarge(format!(
                        "|F| exceeds {MAX_SPACE_CARDINALITY} for sizes {sizes:?}"
                    ))
                })?;
        }
        Ok(Self { sizes })
    }

    /// `K` identical features of `m` values each.
    pub fn uniform(k: usize, m: usize) -> Result<Self> {
        Self::new(vec![m; k])
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn cardinality(&self) -> usize {
        self.sizes.iter().product()
    }

    /// All features share one value-set size; returns it if so.
    pub fn uniform_size(&self) -> Option<usize> {
        let m = self.sizes[0];
        self.sizes.iter().all(|&s| s == m).then_some(m)
    }

    /// Mixed-radix code of a feature vector, feature 0 most significant.
    pub fn encode(&self, fv: &FeatureVector) -> Result<usize> {
        if fv.values.len() != self.k() {
            return Err(Error::LengthMismatch {
                left: fv.values.len(),
                right: self.k(),
            });
        }
        let mut code = 0;
        for (&v, &m) in fv.values.iter().zip(&self.sizes) {
            if v >= m {
                return Err(Error::Domain(format!(
                    "feature value {v} out of range [0,{m})"
                )));
            }
            code = code * m + v;
        }
        Ok(code)
    }

    pub fn decode(&self, mut code: usize) -> FeatureVector {
        debug_assert!(code < self.cardinality());
        let mut values = vec![0; self.k()];
        for i in (0..self.k()).rev() {
            values[i] = code % self.sizes[i];
            code /= self.sizes[i];
        }
        FeatureVector { values }
    }

    /// Iterate every meaning in code order.
    pub fn vectors(&self) -> impl Iterator<Item = FeatureVector> + '_ {
        (0..self.cardinality()).map(|c| self.decode(c))
    }
}

/// One meaning: a value per feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    pub values: Vec<usize>,
}

impl FeatureVector {
    pub fn new(values: Vec<usize>) -> Self {
        Self { values }
    }
}

/// A finite alphabet of `d` symbols, canonically `0..d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet {
    pub size: usize,
}

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Domain("alphabet must be nonempty".into()));
        }
        Ok(Self { size })
    }
}

/// A fixed-length string of symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub symbols: Vec<usize>,
}

impl Message {
    pub fn new(symbols: Vec<usize>) -> Self {
        Self { symbols }
    }
}

/// Number of positions where two same-length sequences differ.
pub fn hamming(u: &[usize], v: &[usize]) -> Result<usize> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(u.iter().zip(v).filter(|(a, b)| a != b).count())
}

/// A total mapping from feature vectors to fixed-length messages, stored as a
/// dense table of message codes indexed by feature code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Language {
    space: FeatureSpace,
    alphabet: Alphabet,
    length: usize,
    table: Vec<usize>,
}

impl Language {
    pub fn new(
        space: FeatureSpace,
        alphabet: Alphabet,
        length: usize,
        table: Vec<usize>,
    ) -> Result<Self> {
        if table.len() != space.cardinality() {
            return Err(Error::Domain(format!(
                "table has {} rows, |F| = {}",
                table.len(),
                space.cardinality()
            )));
        }
        let n_messages = alphabet.size.checked_pow(length as u32).ok_or_else(|| {
            Error::InstanceTooLarge(format!("d^L overflows for d={} L={length}", alphabet.size))
        })?;
        if let Some(&bad) = table.iter().find(|&&c| c >= n_messages) {
            return Err(Error::Domain(format!(
                "message code {bad} out of range [0,{n_messages})"
            )));
        }
        Ok(Self {
            space,
            alphabet,
            length,
            table,
        })
    }

    /// Build a language by evaluating `f` on every meaning.
    pub fn from_fn(
        space: FeatureSpace,
        alphabet: Alphabet,
        length: usize,
        f: impl Fn(&FeatureVector) -> Message,
    ) -> Result<Self> {
        let mut table = Vec::with_capacity(space.cardinality());
        for fv in space.vectors() {
            let msg = f(&fv);
            table.push(encode_message(&msg, alphabet.size, length)?);
        }
        Self::new(space, alphabet, length, table)
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn message_code(&self, feature_code: usize) -> usize {
        self.table[feature_code]
    }

    pub fn message_codes(&self) -> &[usize] {
        &self.table
    }

    pub fn message_of(&self, fv: &FeatureVector) -> Result<Message> {
        let code = self.space.encode(fv)?;
        Ok(decode_message(
            self.table[code],
            self.alphabet.size,
            self.length,
        ))
    }

    /// Distinct meanings map to distinct messages and the message space is
    /// exactly covered.
    pub fn is_bijective(&self) -> bool {
        let n_messages = self.alphabet.size.pow(self.length as u32);
        if n_messages != self.space.cardinality() {
            return false;
        }
        let mut seen = vec![false; n_messages];
        for &c in &self.table {
            if seen[c] {
                return false;
            }
            seen[c] = true;
        }
        true
    }

    /// Inverse table (feature code per message code); `None` if not bijective.
    pub fn inverse_table(&self) -> Option<Vec<usize>> {
        if !self.is_bijective() {
            return None;
        }
        let mut inv = vec![0; self.table.len()];
        for (fcode, &mcode) in self.table.iter().enumerate() {
            inv[mcode] = fcode;
        }
        Some(inv)
    }

    /// Text table, one row per meaning: `f1,...,fK -> s1,...,sL`.
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        for (fcode, &mcode) in self.table.iter().enumerate() {
            let fv = self.space.decode(fcode);
            let msg = decode_message(mcode, self.alphabet.size, self.length);
            let fs: Vec<String> = fv.values.iter().map(|v| v.to_string()).collect();
            let ss: Vec<String> = msg.symbols.iter().map(|s| s.to_string()).collect();
            writeln!(out, "{} -> {}", fs.join(","), ss.join(",")).unwrap();
        }
        out
    }

    /// Parse the `to_table_string` format. The space and alphabet sizes are
    /// inferred from the largest values present; the table must be total.
    pub fn parse_table(text: &str) -> Result<Self> {
        let rows = parse_table_rows(text)?;
        if rows.is_empty() {
            return Err(Error::Parse("empty language table".into()));
        }
        let k = rows[0].0.values.len();
        let length = rows[0].1.symbols.len();
        let mut sizes = vec![1usize; k];
        let mut d = 2usize;
        for (fv, msg) in &rows {
            if fv.values.len() != k || msg.symbols.len() != length {
                return Err(Error::Parse("ragged rows in language table".into()));
            }
            for (i, &v) in fv.values.iter().enumerate() {
                sizes[i] = sizes[i].max(v + 1);
            }
            for &s in &msg.symbols {
                d = d.max(s + 1);
            }
        }
        let space = FeatureSpace::new(sizes)?;
        let alphabet = Alphabet::new(d)?;
        if rows.len() != space.cardinality() {
            return Err(Error::Parse(format!(
                "table has {} rows but inferred |F| = {}",
                rows.len(),
                space.cardinality()
            )));
        }
        let mut table = vec![usize::MAX; space.cardinality()];
        for (fv, msg) in &rows {
            let fcode = space.encode(fv)?;
            if table[fcode] != usize::MAX {
                return Err(Error::Parse(format!("duplicate row for {:?}", fv.values)));
            }
            table[fcode] = encode_message(msg, d, length)?;
        }
        Language::new(space, alphabet, length, table)
    }
}

/// Parse rows in the `f1,...,fK -> s1,...,sL` format.
pub fn parse_table_rows(text: &str) -> Result<Vec<(FeatureVector, Message)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (lhs, rhs) = line
            .split_once("->")
            .ok_or_else(|| Error::Parse(format!("line {}: missing '->'", lineno + 1)))?;
        let parse_ints = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect()
        };
        rows.push((
            FeatureVector::new(parse_ints(lhs)?),
            Message::new(parse_ints(rhs)?),
        ));
    }
    Ok(rows)
}

pub fn encode_message(msg: &Message, d: usize, length: usize) -> Result<usize> {
    if msg.symbols.len() != length {
        return Err(Error::LengthMismatch {
            left: msg.symbols.len(),
            right: length,
        });
    }
    let mut code = 0;
    for &s in &msg.symbols {
        if s >= d {
            return Err(Error::Domain(format!("symbol {s} out of range [0,{d})")));
        }
        code = code * d + s;
    }
    Ok(code)
}

pub fn decode_message(mut code: usize, d: usize, length: usize) -> Message {
    let mut symbols = vec![0; length];
    for i in (0..length).rev() {
        symbols[i] = code % d;
        code /= d;
    }
    Message::new(symbols)
}

/// Hamming distance between two message codes, via per-position decode.
pub fn hamming_codes(a: usize, b: usize, d: usize, length: usize) -> usize {
    let (mut a, mut b) = (a, b);
    let mut dist = 0;
    for _ in 0..length {
        if a % d != b % d {
            dist += 1;
        }
        a /= d;
        b /= d;
    }
    dist
}

/// A bijection on the integer codes `0..|F|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturePermutation {
    perm: Vec<usize>,
}

impl FeaturePermutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(Error::Domain("not a bijection on 0..|F|".into()));
            }
            seen[p] = true;
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    pub fn random<R: rand::Rng>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn apply(&self, code: usize) -> usize {
        self.perm[code]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }
}

/// Distance-preservation test: `l` is compositional iff it is bijective with
/// `L = K`, `|A| = m_i` for every feature, and Hamming distance between any
/// two meanings equals the distance between their messages.
///
/// For K = 1 this degenerates to bijectivity: every bijection is compositional.
pub fn is_compositional(l: &Language) -> bool {
    let k = l.space().k();
    if l.length() != k {
        return false;
    }
    if l.space().sizes().iter().any(|&m| m != l.alphabet().size) {
        return false;
    }
    if !l.is_bijective() {
        return false;
    }
    let n = l.space().cardinality();
    let d = l.alphabet().size;
    for f0 in 0..n {
        let fv0 = l.space().decode(f0);
        for f1 in (f0 + 1)..n {
            let fv1 = l.space().decode(f1);
            let df = hamming(&fv0.values, &fv1.values).expect("same space");
            let dm = hamming_codes(l.message_code(f0), l.message_code(f1), d, k);
            if df != dm {
                return false;
            }
        }
    }
    true
}

/// Composition `l . p`: the returned language maps `f` to `l(p(f))`.
pub fn apply_feature_permutation(l: &Language, p: &FeaturePermutation) -> Result<Language> {
    if p.len() != l.space().cardinality() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: l.space().cardinality(),
        });
    }
    let table = (0..p.len()).map(|c| l.message_code(p.apply(c))).collect();
    Language::new(l.space().clone(), l.alphabet(), l.length(), table)
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Lexicographically `rank`-th permutation of `0..n` (factorial number system).
pub fn permutation_at_rank(n: usize, mut rank: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let f = factorial(i);
        let idx = rank / f;
        rank %= f;
        out.push(pool.remove(idx));
    }
    out
}

fn check_enumerable(space: &FeatureSpace, a: Alphabet) -> Result<usize> {
    let n = space.cardinality();
    if a.size.pow(space.k() as u32) != n {
        return Err(Error::Precondition(format!(
            "|A|^K = {} must equal |F| = {n}",
            a.size.pow(space.k() as u32)
        )));
    }
    if n > MAX_ENUMERABLE_CARDINALITY {
        return Err(Error::InstanceTooLarge(format!(
            "|F| = {n} exceeds enumeration guard {MAX_ENUMERABLE_CARDINALITY}"
        )));
    }
    Ok(n)
}

/// All bijections `F -> A^K` in lexicographic order over permutations of
/// message codes. Guarded at `|F| <= 9`.
pub fn enumerate_bijective_languages(
    space: &FeatureSpace,
    a: Alphabet,
) -> Result<impl Iterator<Item = Language> + '_> {
    let n = check_enumerable(space, a)?;
    let k = space.k();
    let space = space.clone();
    Ok((0..factorial(n)).map(move |rank| {
        Language::new(space.clone(), a, k, permutation_at_rank(n, rank)).expect("valid table")
    }))
}

/// Language at a given permutation rank in the `enumerate_bijective_languages`
/// order. Used to range-partition oracle sweeps across workers.
pub fn bijective_language_at_rank(
    space: &FeatureSpace,
    a: Alphabet,
    rank: usize,
) -> Result<Language> {
    let n = check_enumerable(space, a)?;
    if rank >= factorial(n) {
        return Err(Error::Domain(format!("rank {rank} >= {n}!")));
    }
    Language::new(space.clone(), a, space.k(), permutation_at_rank(n, rank))
}

/// The distance-preserving bijections: one language per position permutation
/// of `1..K` and per-position symbol bijection, `K! * (m!)^K` in total.
pub fn enumerate_compositional_languages(
    space: &FeatureSpace,
    a: Alphabet,
) -> Result<impl Iterator<Item = Language> + '_> {
    let m = space
        .uniform_size()
        .ok_or_else(|| Error::Precondition("all features must have equal value counts".into()))?;
    if a.size != m {
        return Err(Error::Precondition(format!(
            "|A| = {} must equal feature size {m}",
            a.size
        )));
    }
    let k = space.k();
    let space_owned = space.clone();
    let total = factorial(k) * factorial(m).pow(k as u32);
    Ok((0..total).map(move |idx| {
        let sigma_rank = idx / factorial(m).pow(k as u32);
        let mut tau_idx = idx % factorial(m).pow(k as u32);
        let sigma = permutation_at_rank(k, sigma_rank);
        let mut taus = Vec::with_capacity(k);
        for _ in 0..k {
            let f = factorial(m);
            // last position varies fastest
            taus.push(tau_idx % f);
            tau_idx /= f;
        }
        taus.reverse();
        let taus: Vec<Vec<usize>> = taus
            .into_iter()
            .map(|r| permutation_at_rank(m, r))
            .collect();
        Language::from_fn(space_owned.clone(), a, k, |fv| {
            let symbols = (0..k).map(|j| taus[j][fv.values[sigma[j]]]).collect();
            Message::new(symbols)
        })
        .expect("valid compositional table")
    }))
}

/// Executable witness of the pushforward theorem: the uniform distribution on
/// `F` pushed through any permutation is computed explicitly and tested for
/// exact uniformity.
pub fn pushforward_uniform_is_uniform(space: &FeatureSpace, p: &FeaturePermutation) -> bool {
    let n = space.cardinality();
    if p.len() != n {
        return false;
    }
    let mass = 1.0 / n as f64;
    let mut pushed = vec![0.0f64; n];
    for c in 0..n {
        pushed[p.apply(c)] += mass;
    }
    pushed.iter().all(|&q| q == mass)
}
