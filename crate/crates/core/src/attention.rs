//! Causal self-attention behind one interface.
//!
//! Six mechanisms share the input/output contract `[B, L, m] → [B, L, m]`:
//!
//! | variant    | query / key                    | value                          | output map |
//! |------------|--------------------------------|--------------------------------|------------|
//! | `csa`      | `x W_Q`, `x W_K`               | `x W_V`                        | `W_O`      |
//! | `qisa`     | classical                      | `⟨x̂| W̃ᵀ P W̃ |x̂⟩`              | `W_O`      |
//! | `qisa_a`   | classical                      | `⟨x̂| U† P U |x̂⟩`               | `W_O`      |
//! | `qsann`    | `⟨Z₀⟩` per-position circuits   | per-position circuits          | none       |
//! | `qsann_v1` | `⟨Z₀⟩`, one shared circuit     | shared circuit                 | none       |
//! | `qsann_v2` | `m` observables, shared        | shared circuit                 | none       |
//!
//! `x̂` is the L2-normalised token. The QSANN family scores with a Gaussian
//! kernel `exp(−‖qᵢ − kⱼ‖²)` renormalised over the causal prefix; `qsann_v2`
//! defaults to scaled dot-product scores instead.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{
    ansatz_expectations, congruence_values, hea_unitary, select_observables, AnsatzParams, CacheBuilder, CacheKey,
    EvolutionMap, Hea, ObservableCache, ObservableMode, Pauli, PauliString, Role,
};
use crate::tensor::{dims3, softmax_into, Graph, Tensor, Var};

/// Standard deviation of classical weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Csa,
    Qisa,
    QisaA,
    Qsann,
    QsannV1,
    QsannV2,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Csa,
        Variant::Qisa,
        Variant::QisaA,
        Variant::Qsann,
        Variant::QsannV1,
        Variant::QsannV2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Csa => "csa",
            Variant::Qisa => "qisa",
            Variant::QisaA => "qisa_a",
            Variant::Qsann => "qsann",
            Variant::QsannV1 => "qsann_v1",
            Variant::QsannV2 => "qsann_v2",
        }
    }

    /// Everything except CSA works on `2ⁿ`-dimensional amplitudes.
    pub fn is_quantum(self) -> bool {
        self != Variant::Csa
    }

    pub fn uses_ansatz(self) -> bool {
        !matches!(self, Variant::Csa | Variant::Qisa)
    }

    pub fn is_qsann(self) -> bool {
        matches!(self, Variant::Qsann | Variant::QsannV1 | Variant::QsannV2)
    }

    pub fn has_output_map(self) -> bool {
        !self.is_qsann()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL.into_iter().find(|v| v.name() == norm).ok_or_else(|| {
            Error::Config(format!(
                "unknown attention variant {s:?}; expected one of csa, qisa, qisa_a, qsann, qsann_v1, qsann_v2"
            ))
        })
    }
}

/// Score function of `qsann_v2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QkKernel {
    /// `softmax(q·k / √m)`.
    #[default]
    Dot,
    /// `exp(−‖q − k‖²)` renormalised over the prefix.
    Gaussian,
}

/// Validated hyperparameters of one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    pub variant: Variant,
    pub m: usize,
    pub heads: usize,
    pub context: usize,
    pub ansatz_layers: usize,
    pub v2_kernel: QkKernel,
    pub qisa_a_mode: ObservableMode,
    value_obs: Vec<PauliString>,
    qk_obs: Vec<PauliString>,
}

impl AttentionSpec {
    pub fn new(variant: Variant, m: usize, heads: usize, context: usize, ansatz_layers: usize) -> Result<Self> {
        Self::with_options(
            variant,
            m,
            heads,
            context,
            ansatz_layers,
            QkKernel::Dot,
            ObservableMode::Unitary,
        )
    }

    pub fn with_options(
        variant: Variant,
        m: usize,
        heads: usize,
        context: usize,
        ansatz_layers: usize,
        v2_kernel: QkKernel,
        qisa_a_mode: ObservableMode,
    ) -> Result<Self> {
        if m == 0 || heads == 0 || context == 0 {
            return Err(Error::Config(format!(
                "embedding size, heads and context must be positive (m={m}, heads={heads}, context={context})"
            )));
        }
        if !m.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "embedding size {m} is not divisible by {heads} heads"
            )));
        }
        let mut spec = Self {
            variant,
            m,
            heads,
            context,
            ansatz_layers,
            v2_kernel,
            qisa_a_mode,
            value_obs: Vec::new(),
            qk_obs: Vec::new(),
        };
        if !variant.is_quantum() {
            return Ok(spec);
        }
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::Config(format!(
                "variant {variant} needs a power-of-two embedding size of at least 2, got {m}"
            )));
        }
        if variant.uses_ansatz() {
            Hea::new(spec.n_qubits(), ansatz_layers)?;
        }
        if variant == Variant::Qsann && heads > 1 {
            log::warn!("qsann is only compared with a single head; running with {heads}");
        }
        let n = spec.n_qubits();
        let h = spec.head_size();
        spec.value_obs = match variant {
            Variant::Qisa => select_observables(n, h, ObservableMode::RealCongruence)?,
            Variant::QisaA => select_observables(n, h, qisa_a_mode)?,
            _ => select_observables(n, h, ObservableMode::Unitary)?,
        };
        spec.qk_obs = match variant {
            Variant::Qsann | Variant::QsannV1 => vec![PauliString::single(n, 0, Pauli::Z)?],
            Variant::QsannV2 => select_observables(n, m, ObservableMode::Unitary)?,
            _ => Vec::new(),
        };
        Ok(spec)
    }

    pub fn head_size(&self) -> usize {
        self.m / self.heads
    }

    /// `⌈log₂ m⌉`.
    pub fn n_qubits(&self) -> usize {
        self.m.next_power_of_two().trailing_zeros() as usize
    }

    /// Observables read by each head's value path (empty for CSA).
    pub fn value_observables(&self) -> &[PauliString] {
        &self.value_obs
    }

    /// Observables read by each head's query and key paths (QSANN family).
    pub fn qk_observables(&self) -> &[PauliString] {
        &self.qk_obs
    }

    pub fn ansatz(&self) -> Result<Hea> {
        Hea::new(self.n_qubits(), self.ansatz_layers)
    }

    /// Number of circuits per role and head.
    fn circuits_per_role(&self) -> usize {
        if self.variant == Variant::Qsann {
            self.context
        } else {
            1
        }
    }
}

/// Trainable-scalar accounting of one attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub per_head: usize,
    pub output: usize,
    pub total: usize,
}

/// Closed-form parameter count: per head, plus `m²` for the output map where
/// the variant has one.
pub fn count_params(spec: &AttentionSpec) -> ParamCount {
    let (m, h, l, p) = (spec.m, spec.head_size(), spec.context, spec.ansatz_layers);
    let n = spec.n_qubits();
    let per_head = match spec.variant {
        Variant::Csa => 3 * m * h,
        Variant::Qisa => 2 * m * h + m * m,
        Variant::QisaA => 2 * m * h + 3 * n * p,
        Variant::Qsann => 3 * 3 * n * p * l,
        Variant::QsannV1 | Variant::QsannV2 => 3 * 3 * n * p,
    };
    let output = if spec.variant.has_output_map() { m * m } else { 0 };
    ParamCount {
        per_head,
        output,
        total: per_head * spec.heads + output,
    }
}

/// Parameters of one head, grouped by the path they feed. Classical paths
/// hold one matrix; ansatz paths hold one angle tensor per circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    pub query: Vec<T>,
    pub key: Vec<T>,
    pub value: Vec<T>,
}

/// Parameters of one attention layer, generic over storage so the same
/// structure carries tensors, graph handles or shapes.
///
/// Canonical order: for each head `query…, key…, value…`, then `output`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub heads: Vec<HeadParams<T>>,
    pub output: Option<T>,
}

pub type AttentionWeights = AttentionParams<Tensor>;

impl<T> AttentionParams<T> {
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.heads
            .iter()
            .flat_map(|h| h.query.iter().chain(&h.key).chain(&h.value))
            .chain(self.output.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.heads
            .iter_mut()
            .flat_map(|h| h.query.iter_mut().chain(h.key.iter_mut()).chain(h.value.iter_mut()))
            .chain(self.output.iter_mut())
    }

    /// Relative names in canonical order, e.g. `head0.value.3`.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (j, h) in self.heads.iter().enumerate() {
            for (role, list) in [("query", &h.query), ("key", &h.key), ("value", &h.value)] {
                out.extend((0..list.len()).map(|s| format!("head{j}.{role}.{s}")));
            }
        }
        if self.output.is_some() {
            out.push("output".into());
        }
        out
    }

    /// Maps every entry in canonical order.
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&T) -> Result<U, E>) -> Result<AttentionParams<U>, E> {
        let mut heads = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            heads.push(HeadParams {
                query: h.query.iter().map(&mut f).collect::<Result<_, E>>()?,
                key: h.key.iter().map(&mut f).collect::<Result<_, E>>()?,
                value: h.value.iter().map(&mut f).collect::<Result<_, E>>()?,
            });
        }
        let output = self.output.as_ref().map(&mut f).transpose()?;
        Ok(AttentionParams { heads, output })
    }
}

/// Tensor shapes of every parameter. Angle tensors are `[p, n, 3]`.
pub fn param_shapes(spec: &AttentionSpec) -> AttentionParams<Vec<usize>> {
    let (m, h) = (spec.m, spec.head_size());
    let angles = vec![spec.ansatz_layers, spec.n_qubits(), 3];
    let circuits = vec![angles.clone(); spec.circuits_per_role()];
    let head = match spec.variant {
        Variant::Csa => HeadParams {
            query: vec![vec![m, h]],
            key: vec![vec![m, h]],
            value: vec![vec![m, h]],
        },
        Variant::Qisa => HeadParams {
            query: vec![vec![m, h]],
            key: vec![vec![m, h]],
            value: vec![vec![m, m]],
        },
        Variant::QisaA => HeadParams {
            query: vec![vec![m, h]],
            key: vec![vec![m, h]],
            value: vec![angles],
        },
        _ => HeadParams {
            query: circuits.clone(),
            key: circuits.clone(),
            value: circuits,
        },
    };
    AttentionParams {
        heads: vec![head; spec.heads],
        output: spec.variant.has_output_map().then(|| vec![m, m]),
    }
}

/// Draws fresh weights: matrices from `N(0, 0.02²)`, angles from `U(−π, π)`.
pub fn init_weights(spec: &AttentionSpec, rng: &mut impl Rng) -> Result<AttentionWeights> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let uniform = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI).expect("valid range");
    param_shapes(spec).try_map(|shape| {
        let numel = shape.iter().product();
        let data: Vec<f64> = if shape.len() == 3 {
            (0..numel).map(|_| uniform.sample(rng)).collect()
        } else {
            (0..numel).map(|_| normal.sample(rng)).collect()
        };
        Tensor::new(shape.clone(), data)
    })
}

/// Additive causal mask: `0` on and below the diagonal, `−∞` above.
pub fn causal_mask(l: usize) -> Result<Tensor> {
    if l == 0 {
        return Err(Error::Shape("causal mask of length 0".into()));
    }
    Ok(Tensor::from_fn(&[l, l], |i| {
        if i % l > i / l {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }))
}

/// Causal Gaussian-kernel attention for scalar queries and keys:
/// `A[i, j] ∝ exp(−(qᵢ − kⱼ)²)` over `j ≤ i`, zero above the diagonal.
pub fn gaussian_attention(q: &[f64], k: &[f64]) -> Result<Tensor> {
    if q.len() != k.len() || q.is_empty() {
        return Err(Error::Shape(format!("{} queries against {} keys", q.len(), k.len())));
    }
    let l = q.len();
    let mut out = vec![0.0; l * l];
    let mut scores = vec![0.0; l];
    for i in 0..l {
        for (j, s) in scores.iter_mut().enumerate() {
            *s = if j > i {
                f64::NEG_INFINITY
            } else {
                -(q[i] - k[j]).powi(2)
            };
        }
        softmax_into(&scores, &mut out[i * l..(i + 1) * l])?;
    }
    Tensor::new(vec![l, l], out)
}

/// Frozen observables used in place of the live circuits at inference.
#[derive(Clone, Copy)]
pub struct CacheView<'a> {
    pub cache: &'a ObservableCache,
    pub layer: usize,
}

/// Output of one attention layer plus every head's attention matrix.
pub struct Traced {
    pub output: Var,
    pub attention: Vec<Var>,
}

/// Causal self-attention over `x[B, L, m]`, `L ≤ context`.
pub fn attention_forward(
    g: &mut Graph,
    spec: &AttentionSpec,
    w: &AttentionParams<Var>,
    x: Var,
    cache: Option<CacheView<'_>>,
) -> Result<Var> {
    attention_forward_traced(g, spec, w, x, cache).map(|t| t.output)
}

pub fn attention_forward_traced(
    g: &mut Graph,
    spec: &AttentionSpec,
    w: &AttentionParams<Var>,
    x: Var,
    cache: Option<CacheView<'_>>,
) -> Result<Traced> {
    let (b, l, m) = dims3(g.value(x))?;
    if m != spec.m {
        return Err(Error::Shape(format!(
            "tokens of width {m} for attention of width {}",
            spec.m
        )));
    }
    if l > spec.context {
        return Err(Error::ContextOverflow {
            len: l,
            max: spec.context,
        });
    }
    if w.heads.len() != spec.heads {
        return Err(Error::Shape(format!(
            "{} head parameter sets for {} heads",
            w.heads.len(),
            spec.heads
        )));
    }
    if cache.is_some() && !spec.variant.is_quantum() {
        return Err(Error::NotApplicable(
            "classical attention has no observable cache".into(),
        ));
    }
    let mask = causal_mask(l)?;
    let h = spec.head_size();
    let xn = spec.variant.is_quantum().then(|| g.normalize_rows(x));
    let layer = Layer {
        spec,
        xn: xn.unwrap_or(x),
        cache,
        b,
        l,
    };

    let mut outs = Vec::with_capacity(spec.heads);
    let mut attention = Vec::with_capacity(spec.heads);
    for (j, hw) in w.heads.iter().enumerate() {
        let (scores, v) = match spec.variant {
            Variant::Csa | Variant::Qisa | Variant::QisaA => {
                let q = g.matmul(x, hw.query[0])?;
                let k = g.matmul(x, hw.key[0])?;
                let v = if spec.variant == Variant::Csa {
                    g.matmul(x, hw.value[0])?
                } else {
                    layer.features(g, j, Role::Value, &hw.value, &spec.value_obs)?
                };
                let s = g.bmm_nt(q, k)?;
                (g.scale(s, 1.0 / (h as f64).sqrt()), v)
            }
            Variant::Qsann | Variant::QsannV1 | Variant::QsannV2 => {
                let q = layer.features(g, j, Role::Query, &hw.query, &spec.qk_obs)?;
                let k = layer.features(g, j, Role::Key, &hw.key, &spec.qk_obs)?;
                let v = layer.features(g, j, Role::Value, &hw.value, &spec.value_obs)?;
                let s = if spec.variant == Variant::QsannV2 && spec.v2_kernel == QkKernel::Dot {
                    let s = g.bmm_nt(q, k)?;
                    g.scale(s, 1.0 / (spec.m as f64).sqrt())
                } else {
                    g.neg_sq_dist(q, k)?
                };
                (s, v)
            }
        };
        let s = g.add_mask(scores, &mask)?;
        let a = g.softmax_rows(s)?;
        attention.push(a);
        outs.push(g.bmm(a, v)?);
    }
    let y = if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    let output = match w.output {
        Some(wo) => g.matmul(y, wo)?,
        None => y,
    };
    Ok(Traced { output, attention })
}

struct Layer<'a> {
    spec: &'a AttentionSpec,
    xn: Var,
    cache: Option<CacheView<'a>>,
    b: usize,
    l: usize,
}

impl Layer<'_> {
    /// Observable features `[B, L, |obs|]` of the normalised tokens.
    fn features(&self, g: &mut Graph, head: usize, role: Role, params: &[Var], obs: &[PauliString]) -> Result<Var> {
        let out = if let Some(c) = self.cache {
            let keys: Vec<CacheKey> = (0..params.len())
                .map(|slot| CacheKey {
                    layer: c.layer,
                    head,
                    role,
                    slot,
                })
                .collect();
            let f = c.cache.features(g.value(self.xn), &keys, self.l)?;
            g.constant(f)
        } else if self.spec.variant == Variant::Qisa {
            congruence_values(g, self.xn, params[0], obs)?
        } else {
            ansatz_expectations(g, self.xn, params, self.spec.ansatz()?, obs, self.l)?
        };
        g.reshape(out, &[self.b, self.l, obs.len()])
    }
}

/// Evolves every observable of one layer into `builder`.
pub fn add_to_cache(
    spec: &AttentionSpec,
    weights: &AttentionWeights,
    layer: usize,
    builder: &mut CacheBuilder,
) -> Result<()> {
    match spec.variant {
        Variant::Csa => Err(Error::NotApplicable(
            "classical attention has no observable cache".into(),
        )),
        Variant::Qisa => {
            for (j, hw) in weights.heads.iter().enumerate() {
                builder.add(
                    CacheKey::value(layer, j),
                    EvolutionMap::Congruence(&hw.value[0]),
                    &spec.value_obs,
                )?;
            }
            Ok(())
        }
        _ => {
            let shape = spec.ansatz()?;
            for (j, hw) in weights.heads.iter().enumerate() {
                let mut paths = vec![(Role::Value, &hw.value, &spec.value_obs)];
                if spec.variant.is_qsann() {
                    paths.push((Role::Query, &hw.query, &spec.qk_obs));
                    paths.push((Role::Key, &hw.key, &spec.qk_obs));
                }
                for (role, thetas, obs) in paths {
                    for (slot, t) in thetas.iter().enumerate() {
                        let u = hea_unitary(&AnsatzParams::new(shape, t.data().to_vec())?);
                        let key = CacheKey {
                            layer,
                            head: j,
                            role,
                            slot,
                        };
                        builder.add(key, EvolutionMap::Unitary(&u), obs)?;
                    }
                }
            }
            Ok(())
        }
    }
}
