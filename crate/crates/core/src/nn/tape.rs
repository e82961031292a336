//! Reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters can be
//! borrowed from their store for the lifetime of the tape, so binding a large
//! frozen model costs nothing. Nodes that do not depend on a trainable
//! parameter are skipped during the backward sweep.

use std::borrow::Cow;

use ndarray::{s, Array2, Axis};

/// Identifies a trainable tensor: `group` selects the owning store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub group: u16,
    pub index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Softmax(Var),
    SliceCols {
        src: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Array2<f64>>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Array2<f64>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// A constant leaf whose gradient is still collected (used to read
    /// gradients with respect to intermediate features).
    pub fn watched(&mut self, value: Array2<f64>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn param(&mut self, value: &'a Array2<f64>, id: ParamId) -> Var {
        self.push(Cow::Borrowed(value), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Cow::Owned(v), Op::MatMul(a, b), ng)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(Cow::Owned(v), Op::MatMulT(a, b), ng)
    }

    /// Adds a `1×n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias).row(0).to_owned();
        let v = self.value(a) + &b;
        let ng = self.ng(a) || self.ng(bias);
        self.push(Cow::Owned(v), Op::AddRow(a, bias), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(Cow::Owned(v), Op::Add(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(Cow::Owned(v), Op::Scale(a, k), ng)
    }

    /// Row-wise layer normalisation with affine `1×n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.to_owned();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let g = self.value(gamma).row(0).to_owned();
        let b = self.value(beta).row(0).to_owned();
        let out = &xhat * &g + &b;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| {
            let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
            0.5 * x * (1.0 + t)
        });
        let ng = self.ng(a);
        self.push(Cow::Owned(v), Op::Gelu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).to_owned();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let ng = self.ng(a);
        self.push(Cow::Owned(v), Op::Softmax(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(Cow::Owned(v), Op::SliceCols { src: a, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Mean over rows, giving a `1×n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(Cow::Owned(v), Op::MeanRows(a), ng)
    }

    /// Mean squared difference over every element, as a `1×1` node.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.dim(), bv.dim(), "mse operands differ in shape");
        let n = av.len() as f64;
        let v = av
            .iter()
            .zip(bv.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let ng = self.ng(a) || self.ng(b);
        self.push(Cow::Owned(Array2::from_elem((1, 1), v)), Op::Mse(a, b), ng)
    }

    /// Mean cross-entropy of row-wise logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), labels.len());
        let mut probs = lv.to_owned();
        let mut total = 0.0;
        for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
            total -= row[y].max(1e-300).ln();
        }
        let v = total / labels.len() as f64;
        let ng = self.ng(logits);
        self.push(
            Cow::Owned(Array2::from_elem((1, 1), v)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Runs the backward sweep from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.value(loss).dim()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                // Leaf gradients are kept for inspection.
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Param(_) => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.dot(self.value(*b)));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.t().dot(self.value(*a)));
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.ng(*bias) {
                        acc(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.ng(*gamma) {
                        acc(
                            &mut grads,
                            *gamma,
                            (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                        );
                    }
                    if self.ng(*beta) {
                        acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*x) {
                        let gam = self.value(*gamma).row(0).to_owned();
                        let dxhat = &g * &gam;
                        let n = xhat.ncols() as f64;
                        let mut dx = Array2::zeros(xhat.dim());
                        for r in 0..xhat.nrows() {
                            let dh = dxhat.row(r);
                            let xh = xhat.row(r);
                            let sum_dh = dh.sum();
                            let sum_dh_xh = dh.dot(&xh);
                            let is = inv_std[r];
                            for c in 0..xhat.ncols() {
                                dx[[r, c]] = is / n * (n * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                            }
                        }
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(|x| {
                        let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                        0.5 * (1.0 + t)
                            + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
                    });
                    acc(&mut grads, *a, g * d);
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref();
                    let mut dx = &g * y;
                    for (mut row, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let s = row.sum();
                        row.zip_mut_with(&yrow, |d, &yv| *d -= s * yv);
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::SliceCols { src, start } => {
                    let mut full = Array2::zeros(self.value(*src).dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *src, full);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.ng(*p) {
                            acc(&mut grads, *p, g.slice(s![.., off..off + w]).to_owned());
                        }
                        off += w;
                    }
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).nrows();
                    let row = g.row(0).to_owned() / rows as f64;
                    let full = Array2::from_shape_fn((rows, row.len()), |(_, c)| row[c]);
                    acc(&mut grads, *a, full);
                }
                Op::Mse(a, b) => {
                    let k = 2.0 * g[[0, 0]] / self.value(*a).len() as f64;
                    let diff = (self.value(*a) - self.value(*b)) * k;
                    if self.ng(*b) {
                        acc(&mut grads, *b, -&diff);
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, diff);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let k = g[[0, 0]] / labels.len() as f64;
                    let mut d = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        d[[r, y]] -= 1.0;
                    }
                    acc(&mut grads, *logits, d * k);
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Tape::param`] or
    /// [`Tape::watched`].
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter of `group`, summed over repeated bindings.
    pub fn for_group(&self, group: u16, len: usize) -> Vec<Option<Array2<f64>>> {
        let mut out: Vec<Option<Array2<f64>>> = vec![None; len];
        for (id, node) in &self.params {
            if id.group != group {
                continue;
            }
            if let Some(g) = &self.grads[*node] {
                match &mut out[id.index as usize] {
                    Some(e) => *e += g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}
