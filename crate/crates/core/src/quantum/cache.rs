//! Heisenberg-picture observable cache for inference.
//!
//! Once training is over every map is frozen, so each observable can be
//! evolved once, `P′ = U† P U` (ansatz) or `P′ = Wᵀ P W` (real congruence),
//! and an expectation becomes a single quadratic form `⟨x|P′|x⟩`.
//!
//! # File layout
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"QISAOBS\0"
//! 8       4     header length H, u32 little-endian
//! 12      H     UTF-8 JSON header (see `CacheHeader`)
//! 12+H    …     for each header entry, for each of its observables, the
//!               evolved dim × dim matrix row-major as (re, im) f64 LE pairs
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::pauli::PauliString;
use crate::error::{Error, Result};
use crate::tensor::kernels::dot;
use crate::tensor::{ComplexMatrix, Tensor};

pub const CACHE_MAGIC: &[u8; 8] = b"QISAOBS\0";
pub const CACHE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Query,
    Key,
    Value,
}

/// Location of one evolved observable set: transformer layer, head, which
/// circuit of the head, and token slot (non-zero only for per-token circuits).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub layer: usize,
    pub head: usize,
    pub role: Role,
    pub slot: usize,
}

impl CacheKey {
    pub fn value(layer: usize, head: usize) -> Self {
        Self {
            layer,
            head,
            role: Role::Value,
            slot: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheKind {
    Ansatz,
    Congruence,
}

/// Frozen map an observable is evolved through.
pub enum EvolutionMap<'a> {
    Unitary(&'a ComplexMatrix),
    Congruence(&'a Tensor),
}

impl EvolutionMap<'_> {
    fn kind(&self) -> CacheKind {
        match self {
            EvolutionMap::Unitary(_) => CacheKind::Ansatz,
            EvolutionMap::Congruence(_) => CacheKind::Congruence,
        }
    }
}

/// `U† P U` or `Wᵀ P W`.
pub fn evolve_observable(map: &EvolutionMap<'_>, obs: &PauliString) -> Result<ComplexMatrix> {
    let p = obs.matrix();
    let (left, right) = match map {
        EvolutionMap::Unitary(u) => (u.adjoint(), (*u).clone()),
        EvolutionMap::Congruence(w) => {
            let (r, c) = crate::tensor::dims2(w)?;
            if r != c {
                return Err(Error::Config(format!(
                    "congruence map must be square, got {:?}",
                    w.shape()
                )));
            }
            let wc = ComplexMatrix::from_real(r, w.data())?;
            (wc.adjoint(), wc)
        }
    };
    if left.dim() != p.dim() {
        return Err(Error::Config(format!(
            "map of dim {} cannot evolve {}-qubit observable {obs}",
            left.dim(),
            obs.n_qubits()
        )));
    }
    left.matmul(&p)?.matmul(&right)
}

#[derive(Clone, Debug)]
pub struct CacheEntry {
    pub kind: CacheKind,
    pub observables: Vec<PauliString>,
    evolved: Vec<ComplexMatrix>,
    real: Vec<Vec<f64>>,
    /// Upper triangles of `Re(P′ₖ) + Re(P′ₖ)ᵀ` (diagonal not doubled), one
    /// after another, so a quadratic form is a single dot product.
    packed: Vec<f64>,
}

impl CacheEntry {
    fn new(kind: CacheKind, observables: Vec<PauliString>, evolved: Vec<ComplexMatrix>) -> Self {
        let real: Vec<Vec<f64>> = evolved.iter().map(ComplexMatrix::real_part).collect();
        let d = evolved.first().map_or(0, ComplexMatrix::dim);
        let mut packed = Vec::with_capacity(real.len() * d * (d + 1) / 2);
        for s in &real {
            for a in 0..d {
                packed.push(s[a * d + a]);
                packed.extend((a + 1..d).map(|b| s[a * d + b] + s[b * d + a]));
            }
        }
        Self {
            kind,
            observables,
            evolved,
            real,
            packed,
        }
    }

    pub fn evolved(&self) -> &[ComplexMatrix] {
        &self.evolved
    }

    /// `Re(P′ₖ)`, row-major; `⟨x|P′|x⟩ = xᵀ Re(P′) x` for real `x`.
    pub fn real_parts(&self) -> &[Vec<f64>] {
        &self.real
    }
}

/// Immutable set of evolved observables for one trained model.
#[derive(Clone, Debug)]
pub struct ObservableCache {
    n: usize,
    p: usize,
    variant: String,
    parameter_hash: String,
    entries: BTreeMap<CacheKey, CacheEntry>,
}

pub struct CacheBuilder {
    cache: ObservableCache,
}

impl CacheBuilder {
    pub fn new(n: usize, p: usize, variant: impl Into<String>, parameter_hash: impl Into<String>) -> Self {
        Self {
            cache: ObservableCache {
                n,
                p,
                variant: variant.into(),
                parameter_hash: parameter_hash.into(),
                entries: BTreeMap::new(),
            },
        }
    }

    pub fn add(&mut self, key: CacheKey, map: EvolutionMap<'_>, observables: &[PauliString]) -> Result<&mut Self> {
        if self.cache.entries.contains_key(&key) {
            return Err(Error::Config(format!("duplicate cache entry {key:?}")));
        }
        let dim = 1usize << self.cache.n;
        let mut evolved = Vec::with_capacity(observables.len());
        for obs in observables {
            if obs.n_qubits() != self.cache.n {
                return Err(Error::Config(format!(
                    "observable {obs} does not act on {} qubits",
                    self.cache.n
                )));
            }
            let m = evolve_observable(&map, obs)?;
            debug_assert_eq!(m.dim(), dim);
            evolved.push(m);
        }
        self.cache
            .entries
            .insert(key, CacheEntry::new(map.kind(), observables.to_vec(), evolved));
        Ok(self)
    }

    pub fn build(self) -> ObservableCache {
        self.cache
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheHeader {
    format_version: u32,
    n: usize,
    p: usize,
    variant: String,
    parameter_hash: String,
    dim: usize,
    entries: Vec<HeaderEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    #[serde(flatten)]
    key: CacheKey,
    kind: CacheKind,
    observables: Vec<PauliString>,
}

impl ObservableCache {
    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn ansatz_layers(&self) -> usize {
        self.p
    }

    pub fn variant(&self) -> &str {
        &self.variant
    }

    pub fn parameter_hash(&self) -> &str {
        &self.parameter_hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &CacheKey> {
        self.entries.keys()
    }

    pub fn entry(&self, key: &CacheKey) -> Result<&CacheEntry> {
        self.entries
            .get(key)
            .ok_or_else(|| Error::CacheMiss(format!("no entry for {key:?}")))
    }

    /// Fails with a cache miss when the cache was built from other parameters.
    pub fn check_fresh(&self, parameter_hash: &str) -> Result<()> {
        if self.parameter_hash != parameter_hash {
            return Err(Error::CacheMiss(format!(
                "stale cache: built for parameters {}, model has {}",
                short(&self.parameter_hash),
                short(parameter_hash)
            )));
        }
        Ok(())
    }

    /// `f[r, k] = x̂ᵣᵀ Re(P′ₖ) x̂ᵣ` for already-normalised rows `x[N, 2ⁿ]`.
    ///
    /// With one key every row reads the same entry; with several, row `r`
    /// reads `keys[r mod seq_len]` (per-position circuits).
    pub fn features(&self, x: &Tensor, keys: &[CacheKey], seq_len: usize) -> Result<Tensor> {
        let d = 1usize << self.n;
        let (rows, width) = x.rows_cols();
        if width != d {
            return Err(Error::Shape(format!("rows of width {width} for cache of dim {d}")));
        }
        let entries = keys
            .iter()
            .map(|k| self.entry(k).map(|e| (e.real.len(), e.packed.as_slice())))
            .collect::<Result<Vec<_>>>()?;
        let count = entries.first().map_or(0, |e| e.0);
        if count == 0 || entries.iter().any(|e| e.0 != count) {
            return Err(Error::CacheMiss("inconsistent observable counts across keys".into()));
        }
        if entries.len() > 1 && (seq_len == 0 || seq_len > entries.len() || rows % seq_len != 0) {
            return Err(Error::Shape(format!(
                "{rows} rows in sequences of {seq_len} for {} cached positions",
                entries.len()
            )));
        }
        let tri = d * (d + 1) / 2;
        let mut out = Vec::with_capacity(rows * count);
        let mut outer = Vec::with_capacity(tri);
        for r in 0..rows {
            let xr = x.row(r);
            outer.clear();
            for a in 0..d {
                outer.extend(xr[a..].iter().map(|&xb| xr[a] * xb));
            }
            let packed = entries[if entries.len() == 1 { 0 } else { r % seq_len }].1;
            out.extend(packed.chunks_exact(tri).map(|s| dot(s, &outer)));
        }
        Tensor::new(vec![rows, count], out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = 1usize << self.n;
        let header = CacheHeader {
            format_version: CACHE_VERSION,
            n: self.n,
            p: self.p,
            variant: self.variant.clone(),
            parameter_hash: self.parameter_hash.clone(),
            dim,
            entries: self
                .entries
                .iter()
                .map(|(k, e)| HeaderEntry {
                    key: *k,
                    kind: e.kind,
                    observables: e.observables.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let n_mats: usize = self.entries.values().map(|e| e.evolved.len()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + n_mats * dim * dim * 16);
        out.extend_from_slice(CACHE_MAGIC);
        let len = u32::try_from(json.len()).map_err(|_| Error::format("cache", "header too large"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.entries.values() {
            for m in &e.evolved {
                for z in m.entries() {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Decodes and validates a serialised cache. Never panics on bad input.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::format("observable cache", d);
        if bytes.len() < 12 || &bytes[..8] != CACHE_MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if hlen > body.len() {
            return Err(bad("header length exceeds file"));
        }
        let header: CacheHeader = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
        if header.format_version != CACHE_VERSION {
            return Err(Error::Version(format!(
                "cache format {} but this build reads {CACHE_VERSION}",
                header.format_version
            )));
        }
        if header.n == 0 || header.n > 12 || header.dim != 1usize << header.n {
            return Err(bad("inconsistent qubit count and dimension"));
        }
        let dim = header.dim;
        let mat_bytes = dim * dim * 16;
        let mut payload = &body[hlen..];
        let mut entries = BTreeMap::new();
        for he in header.entries {
            if he.observables.iter().any(|o| o.n_qubits() != header.n) {
                return Err(bad("observable width does not match qubit count"));
            }
            let need = he
                .observables
                .len()
                .checked_mul(mat_bytes)
                .ok_or_else(|| bad("entry too large"))?;
            if payload.len() < need {
                return Err(bad("truncated matrix payload"));
            }
            let mut evolved = Vec::with_capacity(he.observables.len());
            for chunk in payload[..need].chunks_exact(mat_bytes) {
                let vals: Vec<Complex64> = chunk
                    .chunks_exact(16)
                    .map(|c| {
                        Complex64::new(
                            f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                            f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                        )
                    })
                    .collect();
                if vals.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(bad("non-finite matrix entry"));
                }
                let m = ComplexMatrix::from_entries(dim, vals)?;
                let scale = m.entries().iter().map(|z| z.norm()).fold(1.0, f64::max);
                if m.hermiticity_error() > 1e-9 * scale {
                    return Err(bad("evolved observable is not Hermitian"));
                }
                evolved.push(m);
            }
            payload = &payload[need..];
            if entries
                .insert(he.key, CacheEntry::new(he.kind, he.observables, evolved))
                .is_some()
            {
                return Err(bad("duplicate entry"));
            }
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after matrices"));
        }
        Ok(Self {
            n: header.n,
            p: header.p,
            variant: header.variant,
            parameter_hash: header.parameter_hash,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// `⟨x̂|P′ₖ|x̂⟩` for the L2-normalised `x` (zero vectors map to `e₁`), after
/// checking that the cache matches `parameter_hash`.
pub fn cached_expectation(
    x: &[f64],
    cache: &ObservableCache,
    key: &CacheKey,
    k: usize,
    parameter_hash: &str,
) -> Result<f64> {
    cache.check_fresh(parameter_hash)?;
    let entry = cache.entry(key)?;
    let s = entry
        .real
        .get(k)
        .ok_or_else(|| Error::CacheMiss(format!("observable {k} not in entry {key:?}")))?;
    let d = 1usize << cache.n;
    if x.len() != d {
        return Err(Error::Shape(format!("vector of length {} for dim {d}", x.len())));
    }
    let norm = dot(x, x).sqrt();
    let xn: Vec<f64> = if norm < crate::tensor::NORM_EPS {
        (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
    } else {
        x.iter().map(|v| v / norm).collect()
    };
    let sx: Vec<f64> = (0..d).map(|a| dot(&s[a * d..(a + 1) * d], &xn)).collect();
    Ok(dot(&xn, &sx))
}
