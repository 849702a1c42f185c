use crate::error::{Error, Result};

use super::Tensor;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    /// `a · bᵀ` with `a: [m×k]`, `b: [n×k]`.
    MatMulNt {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddTrailing {
        a: usize,
        bias: usize,
    },
    MulTrailing {
        a: usize,
        scale: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    Reshape {
        a: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis_sizes: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Slice {
        a: usize,
        start: usize,
        len: usize,
        axis_len: usize,
        outer: usize,
        inner: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Softmax {
        a: usize,
        n: usize,
    },
    Gelu {
        a: usize,
    },
    Normalize {
        a: usize,
        inv_std: Vec<f64>,
        n: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
        classes: usize,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// A recording of one forward computation.
///
/// Nodes are appended in execution order, so the tape is topologically sorted
/// by construction and backward visits every node once.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Copies a tensor onto the tape. Its `requires_grad` flag decides whether
    /// backward computes a gradient for it.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), false, Op::Leaf))
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are valid")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass. Populated for every leaf that
    /// requires a gradient; intermediate buffers are released during the pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!(
                "{what} expects a matrix, got shape {s:?}"
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner extents disagree: {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(
            vec![m, n],
            out,
            rg,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    /// `a · bᵀ`, the score product of attention.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul_nt trailing extents disagree: {:?} · {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bv[j * k..(j + 1) * k]);
            }
        }
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(
            vec![m, n],
            out,
            rg,
            Op::MatMulNt {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what} needs equal shapes, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Mul { a: a.0, b: b.0 }))
    }

    fn trailing(&self, a: Var, t: Var, what: &str) -> Result<usize> {
        let last = *self.shape(a).last().expect("rank ≥ 1");
        if self.nodes[t.0].value.len() != last {
            return Err(Error::Shape(format!(
                "{what}: vector of shape {:?} does not match trailing extent of {:?}",
                self.shape(t),
                self.shape(a)
            )));
        }
        Ok(last)
    }

    /// Adds a vector along the trailing axis (the only broadcast supported).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = self.trailing(a, bias, "add_bias")?;
        let bv = self.value(bias);
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        let rg = self.rg(&[a.0, bias.0]);
        Ok(self.push(
            self.shape(a).to_vec(),
            out,
            rg,
            Op::AddTrailing {
                a: a.0,
                bias: bias.0,
            },
        ))
    }

    /// Multiplies by a vector along the trailing axis.
    pub fn mul_trailing(&mut self, a: Var, scale: Var) -> Result<Var> {
        let n = self.trailing(a, scale, "mul_trailing")?;
        let sv = self.value(scale);
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * sv[i % n])
            .collect();
        let rg = self.rg(&[a.0, scale.0]);
        Ok(self.push(
            self.shape(a).to_vec(),
            out,
            rg,
            Op::MulTrailing {
                a: a.0,
                scale: scale.0,
            },
        ))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        let rg = self.rg(&[a.0]);
        self.push(
            self.shape(a).to_vec(),
            out,
            rg,
            Op::Scale { a: a.0, factor },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).len() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(a)
            )));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(shape, out, rg, Op::Reshape { a: a.0 }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut axis_sizes = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape(format!(
                    "concat along axis {axis}: {:?} incompatible with {base:?}",
                    s
                )));
            }
            axis_sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = axis_sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &sz) in parts.iter().zip(&axis_sizes) {
                let v = self.value(*p);
                out.extend_from_slice(&v[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                inputs: ids,
                axis_sizes,
                outer,
                inner,
            },
        ))
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) along axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let v = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(&[a.0]);
        Ok(self.push(
            new_shape,
            out,
            rg,
            Op::Slice {
                a: a.0,
                start,
                len,
                axis_len,
                outer,
                inner,
            },
        ))
    }

    /// Splits `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let extent = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| Error::Shape(format!("split axis {axis} out of range")))?;
        if sizes.iter().sum::<usize>() != extent {
            return Err(Error::Shape(format!(
                "split sizes {sizes:?} do not add up to extent {extent}"
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(a, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a.0]);
        self.push(vec![1], vec![s], rg, Op::Sum { a: a.0 })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a.0]);
        self.push(vec![1], vec![m], rg, Op::Mean { a: a.0 })
    }

    /// Softmax over the trailing axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = *self.shape(a).last().expect("rank ≥ 1");
        let v = self.value(a);
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("softmax input contains {bad}")));
        }
        let mut out = vec![0.0; v.len()];
        for (row, o) in v.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            softmax_row(row, o);
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Softmax { a: a.0, n }))
    }

    /// GELU, tanh form.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let rg = self.rg(&[a.0]);
        self.push(self.shape(a).to_vec(), out, rg, Op::Gelu { a: a.0 })
    }

    /// Layer-norm statistics: each trailing-axis row mapped to
    /// `(x - mean) / sqrt(var + eps)` with the biased variance.
    pub fn normalize(&mut self, a: Var, eps: f64) -> Var {
        let n = *self.shape(a).last().expect("rank ≥ 1");
        let v = self.value(a);
        let rows = v.len() / n;
        let mut out = vec![0.0; v.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for (row, o) in v.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            for (y, &x) in o.iter_mut().zip(row) {
                *y = (x - mean) * r;
            }
            inv_std.push(r);
        }
        let rg = self.rg(&[a.0]);
        self.push(
            self.shape(a).to_vec(),
            out,
            rg,
            Op::Normalize { a: a.0, inv_std, n },
        )
    }

    /// Mean per-row cross-entropy of `logits: [rows × classes]` against labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, classes) = self.matrix_dims(logits, "cross_entropy")?;
        if labels.len() != rows {
            return Err(Error::Shape(format!(
                "cross_entropy: {} labels for {rows} rows",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {l} outside [0, {classes})")));
        }
        let v = self.value(logits);
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "cross_entropy logits contain {bad}"
            )));
        }
        let mut probs = vec![0.0; v.len()];
        let mut loss = 0.0;
        for (r, (row, p)) in v
            .chunks_exact(classes)
            .zip(probs.chunks_exact_mut(classes))
            .enumerate()
        {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[labels[r]];
            for (pi, &x) in p.iter_mut().zip(row) {
                *pi = (x - lse).exp();
            }
        }
        loss /= rows as f64;
        let rg = self.rg(&[logits.0]);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
                classes,
            },
        ))
    }

    /// Reverse pass from a scalar. Replaces gradients of any previous pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.nodes[loss.0].value.len();
        if numel != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |i: usize| nodes[i].requires_grad;
        let acc = |i: usize, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            let buf = grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]);
            f(buf);
        };
        match &nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if needs(a) {
                    // da = g · bᵀ
                    let bv = &nodes[b].value;
                    acc(a, grads, &mut |da| {
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for l in 0..k {
                                da[i * k + l] += dot(gr, &bv[l * n..(l + 1) * n]);
                            }
                        }
                    });
                }
                if needs(b) {
                    // db = aᵀ · g
                    let av = &nodes[a].value;
                    acc(b, grads, &mut |db| {
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for l in 0..k {
                                let x = av[i * k + l];
                                if x != 0.0 {
                                    axpy(x, gr, &mut db[l * n..(l + 1) * n]);
                                }
                            }
                        }
                    });
                }
            }
            &Op::MatMulNt { a, b, m, k, n } => {
                if needs(a) {
                    // da = g · b
                    let bv = &nodes[b].value;
                    acc(a, grads, &mut |da| matmul_acc(g, bv, da, m, n, k));
                }
                if needs(b) {
                    // db = gᵀ · a
                    let av = &nodes[a].value;
                    acc(b, grads, &mut |db| {
                        for i in 0..m {
                            let ar = &av[i * k..(i + 1) * k];
                            for j in 0..n {
                                let x = g[i * n + j];
                                if x != 0.0 {
                                    axpy(x, ar, &mut db[j * k..(j + 1) * k]);
                                }
                            }
                        }
                    });
                }
            }
            &Op::Add { a, b } => {
                for i in [a, b] {
                    if needs(i) {
                        acc(i, grads, &mut |d| axpy(1.0, g, d));
                    }
                }
            }
            &Op::AddTrailing { a, bias } => {
                if needs(a) {
                    acc(a, grads, &mut |d| axpy(1.0, g, d));
                }
                if needs(bias) {
                    let n = nodes[bias].value.len();
                    acc(bias, grads, &mut |d| {
                        for row in g.chunks_exact(n) {
                            axpy(1.0, row, d);
                        }
                    });
                }
            }
            &Op::MulTrailing { a, scale } => {
                let n = nodes[scale].value.len();
                if needs(a) {
                    let sv = &nodes[scale].value;
                    acc(a, grads, &mut |d| {
                        for (i, x) in d.iter_mut().enumerate() {
                            *x += g[i] * sv[i % n];
                        }
                    });
                }
                if needs(scale) {
                    let av = &nodes[a].value;
                    acc(scale, grads, &mut |d| {
                        for (i, (&gi, &ai)) in g.iter().zip(av).enumerate() {
                            d[i % n] += gi * ai;
                        }
                    });
                }
            }
            &Op::Mul { a, b } => {
                if needs(a) {
                    let bv = &nodes[b].value;
                    acc(a, grads, &mut |d| {
                        for ((x, &gi), &bi) in d.iter_mut().zip(g).zip(bv) {
                            *x += gi * bi;
                        }
                    });
                }
                if needs(b) {
                    let av = &nodes[a].value;
                    acc(b, grads, &mut |d| {
                        for ((x, &gi), &ai) in d.iter_mut().zip(g).zip(av) {
                            *x += gi * ai;
                        }
                    });
                }
            }
            &Op::Scale { a, factor } => {
                if needs(a) {
                    acc(a, grads, &mut |d| axpy(factor, g, d));
                }
            }
            &Op::Reshape { a } => {
                if needs(a) {
                    acc(a, grads, &mut |d| axpy(1.0, g, d));
                }
            }
            Op::Concat {
                inputs,
                axis_sizes,
                outer,
                inner,
            } => {
                let total: usize = axis_sizes.iter().sum();
                let mut offset = 0;
                for (&p, &sz) in inputs.iter().zip(axis_sizes) {
                    if needs(p) {
                        acc(p, grads, &mut |d| {
                            for o in 0..*outer {
                                let src = (o * total + offset) * inner;
                                axpy(
                                    1.0,
                                    &g[src..src + sz * inner],
                                    &mut d[o * sz * inner..(o + 1) * sz * inner],
                                );
                            }
                        });
                    }
                    offset += sz;
                }
            }
            &Op::Slice {
                a,
                start,
                len,
                axis_len,
                outer,
                inner,
            } => {
                if needs(a) {
                    acc(a, grads, &mut |d| {
                        for o in 0..outer {
                            let dst = (o * axis_len + start) * inner;
                            axpy(
                                1.0,
                                &g[o * len * inner..(o + 1) * len * inner],
                                &mut d[dst..dst + len * inner],
                            );
                        }
                    });
                }
            }
            &Op::Sum { a } => {
                if needs(a) {
                    acc(a, grads, &mut |d| d.iter_mut().for_each(|x| *x += g[0]));
                }
            }
            &Op::Mean { a } => {
                if needs(a) {
                    let s = g[0] / nodes[a].value.len() as f64;
                    acc(a, grads, &mut |d| d.iter_mut().for_each(|x| *x += s));
                }
            }
            &Op::Softmax { a, n } => {
                if needs(a) {
                    let y = &nodes[id].value;
                    acc(a, grads, &mut |d| {
                        for ((yr, gr), dr) in y
                            .chunks_exact(n)
                            .zip(g.chunks_exact(n))
                            .zip(d.chunks_exact_mut(n))
                        {
                            let s = dot(yr, gr);
                            for ((x, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                                *x += yi * (gi - s);
                            }
                        }
                    });
                }
            }
            &Op::Gelu { a } => {
                if needs(a) {
                    let xv = &nodes[a].value;
                    acc(a, grads, &mut |d| {
                        for ((x, &gi), &xi) in d.iter_mut().zip(g).zip(xv) {
                            *x += gi * gelu_grad(xi);
                        }
                    });
                }
            }
            Op::Normalize { a, inv_std, n } => {
                let (a, n) = (*a, *n);
                if needs(a) {
                    let y = &nodes[id].value;
                    acc(a, grads, &mut |d| {
                        for (r, ((yr, gr), dr)) in y
                            .chunks_exact(n)
                            .zip(g.chunks_exact(n))
                            .zip(d.chunks_exact_mut(n))
                            .enumerate()
                        {
                            let mg = gr.iter().sum::<f64>() / n as f64;
                            let mgy = dot(gr, yr) / n as f64;
                            for ((x, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                                *x += inv_std[r] * (gi - mg - yi * mgy);
                            }
                        }
                    });
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                classes,
            } => {
                let (logits, classes) = (*logits, *classes);
                if needs(logits) {
                    let s = g[0] / labels.len() as f64;
                    acc(logits, grads, &mut |d| {
                        for (r, (dr, pr)) in d
                            .chunks_exact_mut(classes)
                            .zip(probs.chunks_exact(classes))
                            .enumerate()
                        {
                            for (x, &p) in dr.iter_mut().zip(pr) {
                                *x += s * p;
                            }
                            dr[labels[r]] -= s;
                        }
                    });
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// `out = a · b` for row-major `a: [m×k]`, `b: [k×n]`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.fill(0.0);
    matmul_acc(a, b, out, m, k, n);
}

fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let x = a[i * k + l];
            axpy(x, &b[l * n..(l + 1) * n], orow);
        }
    }
}

pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
