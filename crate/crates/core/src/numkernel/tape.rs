//! Reverse-mode gradient tape over the small set of layers the model uses.
//!
//! Matrices only ever enter through parameters, so every matrix operand is a
//! [`ParamId`]; everything recorded on the tape is a vector (scalars are
//! length-1 vectors).

use super::params::{ParamId, ParameterStore};
use super::tensor::{axpy, dot, matvec_acc, sigmoid, softmax_slice, Tensor, PROB_FLOOR};
use crate::error::{EnrollError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        w: ParamId,
        x: Var,
        b: Option<ParamId>,
    },
    Column {
        w: ParamId,
        col: usize,
        b: Option<ParamId>,
    },
    MeanRows {
        table: ParamId,
        rows: Vec<usize>,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sum(Vec<Var>),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Dot(Var, Var),
    Stack(Vec<Var>),
    Softmax(Var),
    Mix {
        weights: Var,
        rows: Vec<Var>,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        gold: usize,
        probs: Vec<f64>,
    },
    SigmoidBce {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records a forward computation against a fixed parameter store.
pub struct Tape<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParameterStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, w: ParamId) -> (usize, usize) {
        self.params
            .get(w)
            .dims2()
            .expect("matrix parameter must be 2-d")
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// A vector parameter (or a flattened matrix) as a differentiable value.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).data().to_vec();
        self.push(value, Op::Param(id))
    }

    pub fn affine(&mut self, w: ParamId, x: Var, b: Option<ParamId>) -> Result<Var> {
        let wt = self.params.get(w);
        let (m, n) = wt.dims2().ok_or_else(|| EnrollError::Dimension {
            op: "affine",
            left: wt.shape().to_vec(),
            right: vec![self.value(x).len()],
        })?;
        if self.value(x).len() != n {
            return Err(EnrollError::Dimension {
                op: "affine",
                left: vec![m, n],
                right: vec![self.value(x).len()],
            });
        }
        let mut out = match b {
            Some(b) => {
                let bt = self.params.get(b);
                if bt.shape() != [m] {
                    return Err(EnrollError::Dimension {
                        op: "affine",
                        left: vec![m, n],
                        right: bt.shape().to_vec(),
                    });
                }
                bt.data().to_vec()
            }
            None => vec![0.0; m],
        };
        matvec_acc(wt.data(), m, n, self.value(x), &mut out);
        Ok(self.push(out, Op::Affine { w, x, b }))
    }

    /// `W·onehot(col) + b`, i.e. column `col` of `W` plus the bias.
    pub fn column(&mut self, w: ParamId, col: usize, b: Option<ParamId>) -> Result<Var> {
        let wt = self.params.get(w);
        let (m, n) = wt.dims2().ok_or_else(|| EnrollError::Dimension {
            op: "column",
            left: wt.shape().to_vec(),
            right: vec![col],
        })?;
        if col >= n {
            return Err(EnrollError::Dimension {
                op: "column",
                left: vec![m, n],
                right: vec![col],
            });
        }
        let mut out: Vec<f64> = (0..m).map(|i| wt.data()[i * n + col]).collect();
        if let Some(b) = b {
            for (o, bv) in out.iter_mut().zip(self.params.get(b).data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::Column { w, col, b }))
    }

    /// Mean of the selected rows of an embedding table. An empty selection
    /// yields the zero vector.
    pub fn mean_rows(&mut self, table: ParamId, rows: &[usize]) -> Result<Var> {
        let t = self.params.get(table);
        let (r, c) = t.dims2().ok_or_else(|| EnrollError::Dimension {
            op: "mean_rows",
            left: t.shape().to_vec(),
            right: vec![rows.len()],
        })?;
        let mut out = vec![0.0; c];
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(EnrollError::Dimension {
                op: "mean_rows",
                left: vec![r, c],
                right: vec![bad],
            });
        }
        if !rows.is_empty() {
            let scale = 1.0 / rows.len() as f64;
            for &i in rows {
                axpy(scale, &t.data()[i * c..(i + 1) * c], &mut out);
            }
        }
        Ok(self.push(
            out,
            Op::MeanRows {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        self.push(out, Op::Relu(x))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(EnrollError::Dimension {
                op,
                left: vec![la],
                right: vec![lb],
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Elementwise sum of one or more equally sized vectors.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(EnrollError::Dimension {
            op: "sum",
            left: vec![],
            right: vec![],
        })?;
        let mut out = self.value(first).to_vec();
        for &x in &xs[1..] {
            self.check_same("sum", first, x)?;
            for (o, v) in out.iter_mut().zip(self.value(x)) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::Sum(xs.to_vec())))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        self.push(out, Op::Scale(x, c))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let mut out = Vec::new();
        for &x in xs {
            out.extend_from_slice(self.value(x));
        }
        self.push(out, Op::Concat(xs.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("dot", a, b)?;
        let s = dot(self.value(a), self.value(b));
        Ok(self.push(vec![s], Op::Dot(a, b)))
    }

    /// Stacks scalars into a vector.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        let out = xs.iter().map(|&x| self.value(x)[0]).collect();
        self.push(out, Op::Stack(xs.to_vec()))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_slice(self.value(x));
        self.push(out, Op::Softmax(x))
    }

    /// `Σ_k weights[k] · rows[k]`.
    pub fn mix(&mut self, weights: Var, rows: &[Var]) -> Result<Var> {
        if self.value(weights).len() != rows.len() || rows.is_empty() {
            return Err(EnrollError::Dimension {
                op: "mix",
                left: vec![self.value(weights).len()],
                right: vec![rows.len()],
            });
        }
        let dim = self.value(rows[0]).len();
        let mut out = vec![0.0; dim];
        for (k, &r) in rows.iter().enumerate() {
            if self.value(r).len() != dim {
                return Err(EnrollError::Dimension {
                    op: "mix",
                    left: vec![dim],
                    right: vec![self.value(r).len()],
                });
            }
            let w = self.value(weights)[k];
            axpy(w, self.value(r), &mut out);
        }
        Ok(self.push(
            out,
            Op::Mix {
                weights,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Elementwise product with a constant mask (inverted dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(EnrollError::Dimension {
                op: "mask",
                left: vec![self.value(x).len()],
                right: vec![mask.len()],
            });
        }
        let out = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        Ok(self.push(out, Op::Mask { x, mask }))
    }

    /// Scalar cross-entropy of `softmax(logits)` against `gold`.
    pub fn softmax_xent(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let probs = softmax_slice(self.value(logits));
        let p = *probs.get(gold).ok_or(EnrollError::ClassOutOfRange {
            index: gold,
            classes: probs.len(),
        })?;
        let loss = -p.max(PROB_FLOOR).ln();
        Ok(self.push(
            vec![loss],
            Op::SoftmaxXent {
                logits,
                gold,
                probs,
            },
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() || z.is_empty() {
            return Err(EnrollError::Dimension {
                op: "sigmoid_bce",
                left: vec![z.len()],
                right: vec![targets.len()],
            });
        }
        // log(1 + e^z) - t·z, written to avoid overflow
        let total: f64 = z
            .iter()
            .zip(&targets)
            .map(|(&zi, &t)| zi.max(0.0) - zi * t + (-zi.abs()).exp().ln_1p())
            .sum();
        let loss = total / z.len() as f64;
        Ok(self.push(vec![loss], Op::SigmoidBce { logits, targets }))
    }

    /// Reverse sweep from a scalar node. Returns dense gradients shaped like
    /// the parameter store (zeros for parameters the forward pass never read).
    pub fn backward(&self, loss: Var) -> ParameterStore {
        let mut pgrads: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);

        fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
            slot.get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let pg = acc(&mut pgrads[id.0], g.len());
                    axpy(1.0, &g, pg);
                }
                Op::Affine { w, x, b } => {
                    let (m, n) = self.dims2(*w);
                    let wt = self.params.get(*w).data();
                    let xv = &self.nodes[x.0].value;
                    {
                        let gw = acc(&mut pgrads[w.0], m * n);
                        for (r, &gi) in g.iter().enumerate() {
                            if gi != 0.0 {
                                axpy(gi, xv, &mut gw[r * n..(r + 1) * n]);
                            }
                        }
                    }
                    if let Some(b) = b {
                        axpy(1.0, &g, acc(&mut pgrads[b.0], m));
                    }
                    let gx = acc(&mut grads[x.0], n);
                    for (r, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            axpy(gi, &wt[r * n..(r + 1) * n], gx);
                        }
                    }
                }
                Op::Column { w, col, b } => {
                    let (m, n) = self.dims2(*w);
                    let gw = acc(&mut pgrads[w.0], m * n);
                    for (r, &gi) in g.iter().enumerate() {
                        gw[r * n + col] += gi;
                    }
                    if let Some(b) = b {
                        axpy(1.0, &g, acc(&mut pgrads[b.0], m));
                    }
                }
                Op::MeanRows { table, rows } => {
                    if rows.is_empty() {
                        continue;
                    }
                    let (r, c) = self.dims2(*table);
                    let gt = acc(&mut pgrads[table.0], r * c);
                    let scale = 1.0 / rows.len() as f64;
                    for &row in rows {
                        axpy(scale, &g, &mut gt[row * c..(row + 1) * c]);
                    }
                }
                Op::Relu(x) => {
                    let gx = acc(&mut grads[x.0], g.len());
                    for ((gx, gi), v) in gx.iter_mut().zip(&g).zip(&node.value) {
                        if *v > 0.0 {
                            *gx += gi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, acc(&mut grads[a.0], g.len()));
                    axpy(1.0, &g, acc(&mut grads[b.0], g.len()));
                }
                Op::Sub(a, b) => {
                    axpy(1.0, &g, acc(&mut grads[a.0], g.len()));
                    axpy(-1.0, &g, acc(&mut grads[b.0], g.len()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    {
                        let ga = acc(&mut grads[a.0], g.len());
                        for ((o, gi), y) in ga.iter_mut().zip(&g).zip(bv) {
                            *o += gi * y;
                        }
                    }
                    let gb = acc(&mut grads[b.0], g.len());
                    for ((o, gi), x) in gb.iter_mut().zip(&g).zip(av) {
                        *o += gi * x;
                    }
                }
                Op::Sum(xs) => {
                    for x in xs {
                        axpy(1.0, &g, acc(&mut grads[x.0], g.len()));
                    }
                }
                Op::Scale(x, c) => {
                    axpy(*c, &g, acc(&mut grads[x.0], g.len()));
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for x in xs {
                        let len = self.nodes[x.0].value.len();
                        axpy(1.0, &g[off..off + len], acc(&mut grads[x.0], len));
                        off += len;
                    }
                }
                Op::Dot(a, b) => {
                    let gi = g[0];
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    axpy(gi, bv, acc(&mut grads[a.0], av.len()));
                    axpy(gi, av, acc(&mut grads[b.0], bv.len()));
                }
                Op::Stack(xs) => {
                    for (x, gi) in xs.iter().zip(&g) {
                        acc(&mut grads[x.0], 1)[0] += gi;
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner = dot(&g, y);
                    let gx = acc(&mut grads[x.0], y.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o += yi * (gi - inner);
                    }
                }
                Op::Mix { weights, rows } => {
                    let wv = &self.nodes[weights.0].value;
                    let mut gw = vec![0.0; rows.len()];
                    for (k, r) in rows.iter().enumerate() {
                        let rv = &self.nodes[r.0].value;
                        gw[k] = dot(&g, rv);
                        axpy(wv[k], &g, acc(&mut grads[r.0], rv.len()));
                    }
                    axpy(1.0, &gw, acc(&mut grads[weights.0], rows.len()));
                }
                Op::Mask { x, mask } => {
                    let gx = acc(&mut grads[x.0], g.len());
                    for ((o, gi), m) in gx.iter_mut().zip(&g).zip(mask) {
                        *o += gi * m;
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    gold,
                    probs,
                } => {
                    let gl = acc(&mut grads[logits.0], probs.len());
                    for (k, (o, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let t = if k == *gold { 1.0 } else { 0.0 };
                        *o += g[0] * (p - t);
                    }
                }
                Op::SigmoidBce { logits, targets } => {
                    let z = &self.nodes[logits.0].value;
                    let scale = g[0] / z.len() as f64;
                    let gl = acc(&mut grads[logits.0], z.len());
                    for ((o, &zi), t) in gl.iter_mut().zip(z).zip(targets) {
                        *o += scale * (sigmoid(zi) - t);
                    }
                }
            }
        }

        let mut out = ParameterStore::new();
        for (id, g) in self.params.ids().zip(pgrads) {
            let shape = self.params.get(id).shape().to_vec();
            let t = match g {
                Some(data) => Tensor::new(shape, data).expect("gradient shape"),
                None => Tensor::zeros(&shape),
            };
            out.insert(self.params.name(id), t).expect("unique names");
        }
        out
    }
}
