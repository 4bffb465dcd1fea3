use rand::Rng;

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn};
use super::{dims3, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward value is computed outside the graph and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp {
    fn name(&self) -> &str;

    /// Returns one gradient per input, in input order. `needs[i]` is false
    /// when input `i` does not require a gradient, in which case `None` may be
    /// returned for it.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<f64>>>>;
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow {
        a: Var,
        bias: Var,
    },
    Reshape(Var),
    ConcatCols(Vec<Var>),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    AddMask(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    NormalizeRows {
        a: Var,
        norms: Vec<f64>,
    },
    NegSqDist {
        q: Var,
        k: Var,
    },
    Sum(Var),
    Dropout {
        a: Var,
        mask: Vec<f64>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    tag: Option<usize>,
    grad: Option<Vec<f64>>,
}

/// Norm below which a row is treated as degenerate by [`Graph::normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// Layer-norm variance stabiliser.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Single-use reverse-mode tape.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for the backward sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            tag: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Its gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Records a trainable leaf carrying an external tag (a parameter index).
    pub fn tagged_leaf(&mut self, t: &Tensor, tag: usize) -> Var {
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].tag = Some(tag);
        v
    }

    /// Iterates `(tag, var)` for every tagged leaf.
    pub fn tagged_leaves(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.tag.map(|t| (t, Var(i))))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    // ---------------------------------------------------------------- ops

    /// `a[.., s] · b[s, t]`, or `a · bᵀ` with `b[t, s]` when `trans_b`.
    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (r, s) = av.rows_cols();
        let (b0, b1) = super::dims2(bv)?;
        let (bs, t) = if trans_b { (b1, b0) } else { (b0, b1) };
        if s != bs {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}{}",
                av.shape(),
                bv.shape(),
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![0.0; r * t];
        if trans_b {
            gemm_nt(av.data(), bv.data(), &mut out, r, s, t);
        } else {
            gemm_nn(av.data(), bv.data(), &mut out, r, s, t);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = t;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// Batched product `a[B, r, s] · b[B, s, t]` (or `b[B, t, s]ᵀ`).
    fn bmm_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (nb, r, s) = dims3(av)?;
        let (nb2, b1, b2) = dims3(bv)?;
        let (bs, t) = if trans_b { (b2, b1) } else { (b1, b2) };
        if nb != nb2 || s != bs {
            return Err(Error::Shape(format!(
                "bmm shapes {:?} x {:?} incompatible",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![0.0; nb * r * t];
        for i in 0..nb {
            let ai = &av.data()[i * r * s..(i + 1) * r * s];
            let bi = &bv.data()[i * s * t..(i + 1) * s * t];
            let ci = &mut out[i * r * t..(i + 1) * r * t];
            if trans_b {
                gemm_nt(ai, bi, ci, r, s, t);
            } else {
                gemm_nn(ai, bi, ci, r, s, t);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![nb, r, t], out)?, Op::Bmm { a, b, trans_b }, rg))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, false)
    }

    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, true)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * c).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Adds `bias[c]` to every row of `a[.., c]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.value(a).rows_cols();
        if self.shape(bias) != [c] {
            return Err(Error::Shape(format!(
                "row bias of shape {:?} for rows of width {c}",
                self.shape(bias)
            )));
        }
        let bv = self.value(bias).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv).map(|(x, b)| x + b))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRow { a, bias }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        let out = Tensor::new(out.shape().to_vec(), out.into_data())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Concatenates along the last dimension; all inputs share leading dims.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let rows = self.value(first).rows_cols().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::Shape(format!(
                    "concat: leading dims {:?} vs {:?}",
                    &s[..s.len() - 1],
                    lead
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Normalises each vector along the last dimension, then applies
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, m) = self.value(x).rows_cols();
        if self.shape(gain) != [m] || self.shape(bias) != [m] {
            return Err(Error::Shape(format!(
                "layer_norm over width {m} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; rows * m];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let row = &xv[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..m {
                let h = (row[c] - mean) * inv;
                xhat[r * m + c] = h;
                out[r * m + c] = h * gv[c] + bv[c];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax over the last dimension. `-inf` entries get zero
    /// probability; a row that is entirely `-inf` maps to all zeros.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (_, c) = av.rows_cols();
        let mut out = vec![0.0; av.numel()];
        for (src, dst) in av.data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_into(src, dst)?;
        }
        let out = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Adds a constant `[L, L]` mask to every trailing `L × L` block of `a`.
    pub fn add_mask(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        let (l0, l1) = super::dims2(mask)?;
        let av = self.value(a);
        let s = av.shape();
        if s.len() < 2 || s[s.len() - 2] != l0 || s[s.len() - 1] != l1 {
            return Err(Error::Shape(format!(
                "mask {:?} does not fit scores {:?}",
                mask.shape(),
                s
            )));
        }
        let block = l0 * l1;
        let data = av
            .data()
            .chunks(block)
            .flat_map(|chunk| chunk.iter().zip(mask.data()).map(|(x, m)| x + m))
            .collect();
        let out = Tensor::new(s.to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::AddMask(a), rg))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, natural log.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, v) = lv.rows_cols();
        if targets.len() != b {
            return Err(Error::Shape(format!(
                "{} targets for {b} rows of logits",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index(format!("target {t} outside [0, {v})")));
        }
        let mut probs = vec![0.0; b * v];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &lv.data()[r * v..(r + 1) * v];
            if row.iter().any(|x| x.is_nan()) {
                return Err(Error::Numeric("NaN logit".into()));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[t];
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / b as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Gathers rows of `table[V, m]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (vocab, m) = super::dims2(tv)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index(format!("token id {bad} outside [0, {vocab})")));
        }
        if ids.is_empty() {
            return Err(Error::Shape("embedding of zero ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * m);
        for &i in ids {
            data.extend_from_slice(&tv.data()[i * m..(i + 1) * m]);
        }
        let out = Tensor::new(vec![ids.len(), m], data)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// L2-normalises every row. Rows with norm below [`NORM_EPS`] become the
    /// unit basis vector `e₁` and pass no gradient.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, c) = av.rows_cols();
        let mut norms = vec![0.0; rows];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let row = &av.data()[r * c..(r + 1) * c];
            let n = dot(row, row).sqrt();
            if n < NORM_EPS {
                out[r * c] = 1.0;
            } else {
                norms[r] = n;
                for (o, x) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
                    *o = x / n;
                }
            }
        }
        let out = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::NormalizeRows { a, norms }, rg)
    }

    /// `s[b, i, j] = -‖q[b, i] − k[b, j]‖²` for `q, k` of shape `[B, L, d]`.
    pub fn neg_sq_dist(&mut self, q: Var, k: Var) -> Result<Var> {
        self.same_shape(q, k, "neg_sq_dist")?;
        let (nb, l, d) = dims3(self.value(q))?;
        let (qv, kv) = (self.value(q).data(), self.value(k).data());
        let mut out = vec![0.0; nb * l * l];
        for b in 0..nb {
            for i in 0..l {
                let qi = &qv[(b * l + i) * d..(b * l + i + 1) * d];
                for j in 0..l {
                    let kj = &kv[(b * l + j) * d..(b * l + j + 1) * d];
                    out[(b * l + i) * l + j] = -qi.iter().zip(kj).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                }
            }
        }
        let rg = self.rg(q) || self.rg(k);
        Ok(self.push(Tensor::new(vec![nb, l, l], out)?, Op::NegSqDist { q, k }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Inverted dropout with drop probability `p`. Identity when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let av = self.value(a);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..av.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = zip_map(av.data(), &mask, |x, m| x * m);
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout { a, mask }, rg))
    }

    /// Records an externally computed value with a custom backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    // ----------------------------------------------------------- backward

    /// Populates gradients of every node that `loss` depends on through
    /// gradient-tracking paths. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract("backward called twice on the same graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.vjp(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (v, cg) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.iter_mut().zip(&cg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(cg),
                }
            }
        }
        Ok(())
    }

    fn vjp(&self, i: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (r, s) = av.rows_cols();
                let t = node.value.rows_cols().1;
                if self.rg(a) {
                    let mut ga = vec![0.0; r * s];
                    if trans_b {
                        gemm_nn(g, bv.data(), &mut ga, r, t, s);
                    } else {
                        gemm_nt(g, bv.data(), &mut ga, r, t, s);
                    }
                    out.push((a, ga));
                }
                if self.rg(b) {
                    let mut gb = vec![0.0; s * t];
                    if trans_b {
                        gemm_tn(g, av.data(), &mut gb, r, t, s);
                    } else {
                        gemm_tn(av.data(), g, &mut gb, r, s, t);
                    }
                    out.push((b, gb));
                }
            }
            &Op::Bmm { a, b, trans_b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (nb, r, s) = dims3(av)?;
                let t = node.value.shape()[2];
                let mut ga = self.rg(a).then(|| vec![0.0; nb * r * s]);
                let mut gb = self.rg(b).then(|| vec![0.0; nb * s * t]);
                for bi in 0..nb {
                    let gi = &g[bi * r * t..(bi + 1) * r * t];
                    let ai = &av.data()[bi * r * s..(bi + 1) * r * s];
                    let bvi = &bv.data()[bi * s * t..(bi + 1) * s * t];
                    if let Some(ga) = ga.as_mut() {
                        let gai = &mut ga[bi * r * s..(bi + 1) * r * s];
                        if trans_b {
                            gemm_nn(gi, bvi, gai, r, t, s);
                        } else {
                            gemm_nt(gi, bvi, gai, r, t, s);
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        let gbi = &mut gb[bi * s * t..(bi + 1) * s * t];
                        if trans_b {
                            gemm_tn(gi, ai, gbi, r, t, s);
                        } else {
                            gemm_tn(ai, gi, gbi, r, s, t);
                        }
                    }
                }
                out.extend(ga.map(|v| (a, v)));
                out.extend(gb.map(|v| (b, v)));
            }
            &Op::Add(a, b) => {
                out.push((a, g.to_vec()));
                out.push((b, g.to_vec()));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                if self.rg(a) {
                    out.push((a, zip_map(g, bv, |x, y| x * y)));
                }
                if self.rg(b) {
                    out.push((b, zip_map(g, av, |x, y| x * y)));
                }
            }
            &Op::Scale(a, c) => out.push((a, g.iter().map(|x| x * c).collect())),
            &Op::AddRow { a, bias } => {
                out.push((a, g.to_vec()));
                if self.rg(bias) {
                    let c = self.shape(bias)[0];
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                    }
                    out.push((bias, gb));
                }
            }
            &Op::Reshape(a) => out.push((a, g.to_vec())),
            Op::ConcatCols(parts) => {
                let rows = node.value.rows_cols().0;
                let total = node.value.rows_cols().1;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).rows_cols().1;
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        out.push((p, gp));
                    }
                    offset += w;
                }
            }
            &Op::Gelu(a) => {
                let xv = self.value(a).data();
                let ga = zip_map(g, xv, |gi, x| {
                    let u = GELU_C * (x + 0.044715 * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    gi * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                out.push((a, ga));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let m = self.shape(*gain)[0];
                let gv = self.value(*gain).data();
                let rows = inv_std.len();
                if self.rg(*gain) {
                    let mut gg = vec![0.0; m];
                    for r in 0..rows {
                        for c in 0..m {
                            gg[c] += g[r * m + c] * xhat[r * m + c];
                        }
                    }
                    out.push((*gain, gg));
                }
                if self.rg(*bias) {
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    out.push((*bias, gb));
                }
                if self.rg(*x) {
                    let mut gx = vec![0.0; rows * m];
                    let mf = m as f64;
                    for r in 0..rows {
                        let gh: Vec<f64> = (0..m).map(|c| g[r * m + c] * gv[c]).collect();
                        let xh = &xhat[r * m..(r + 1) * m];
                        let sum_gh: f64 = gh.iter().sum();
                        let sum_ghx = dot(&gh, xh);
                        for c in 0..m {
                            gx[r * m + c] = inv_std[r] / mf * (mf * gh[c] - sum_gh - xh[c] * sum_ghx);
                        }
                    }
                    out.push((*x, gx));
                }
            }
            &Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.rows_cols().1;
                let mut ga = vec![0.0; y.len()];
                for ((yr, gr), dst) in y.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                    let s = dot(yr, gr);
                    for k in 0..c {
                        dst[k] = yr[k] * (gr[k] - s);
                    }
                }
                out.push((a, ga));
            }
            &Op::AddMask(a) => out.push((a, g.to_vec())),
            Op::CrossEntropy { logits, targets, probs } => {
                let b = targets.len();
                let v = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * v + t] -= scale;
                }
                out.push((*logits, gl));
            }
            Op::Embedding { table, ids } => {
                let m = self.shape(*table)[1];
                let mut gt = vec![0.0; self.value(*table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..m {
                        gt[id * m + c] += g[r * m + c];
                    }
                }
                out.push((*table, gt));
            }
            Op::NormalizeRows { a, norms } => {
                let y = node.value.data();
                let c = node.value.rows_cols().1;
                let mut ga = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let proj = dot(yr, gr);
                    for k in 0..c {
                        ga[r * c + k] = (gr[k] - yr[k] * proj) / n;
                    }
                }
                out.push((*a, ga));
            }
            &Op::NegSqDist { q, k } => {
                let (nb, l, d) = dims3(self.value(q))?;
                let (qv, kv) = (self.value(q).data(), self.value(k).data());
                let mut gq = vec![0.0; qv.len()];
                let mut gk = vec![0.0; kv.len()];
                for b in 0..nb {
                    for i in 0..l {
                        for j in 0..l {
                            let gij = g[(b * l + i) * l + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for e in 0..d {
                                let diff = qv[(b * l + i) * d + e] - kv[(b * l + j) * d + e];
                                gq[(b * l + i) * d + e] -= 2.0 * gij * diff;
                                gk[(b * l + j) * d + e] += 2.0 * gij * diff;
                            }
                        }
                    }
                }
                out.push((q, gq));
                out.push((k, gk));
            }
            &Op::Sum(a) => out.push((a, vec![g[0]; self.value(a).numel()])),
            Op::Dropout { a, mask } => out.push((*a, zip_map(g, mask, |x, m| x * m))),
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.rg(v)).collect();
                let grads = op.backward(&vals, &node.value, g, &needs)?;
                if grads.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    )));
                }
                for (&v, gv) in inputs.iter().zip(grads) {
                    if let Some(gv) = gv {
                        if gv.len() != self.value(v).numel() {
                            return Err(Error::Shape(format!(
                                "custom op {} gradient length mismatch",
                                op.name()
                            )));
                        }
                        out.push((v, gv));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Numerically stable softmax of one row, honouring `-inf` entries.
pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64]) -> Result<()> {
    if src.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric("NaN in softmax input".into()));
    }
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        dst.iter_mut().for_each(|d| *d = 0.0);
        return Ok(());
    }
    let mut sum = 0.0;
    for (d, &x) in dst.iter_mut().zip(src) {
        *d = (x - max).exp();
        sum += *d;
    }
    dst.iter_mut().for_each(|d| *d /= sum);
    Ok(())
}
