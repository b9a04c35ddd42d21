//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough
//! saved state to run its backward rule. Nodes are only ever appended, so
//! the tape is always in topological order and [`Tape::backward`] is a
//! single reverse sweep.

use rand::Rng;

use super::kernels::{axpy, conv_forward, conv_input_grad, conv_weight_grad, dot, sum};
use super::tensor::DiffTensor;
use crate::error::{Error, Result};
use crate::seed;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        batch: usize,
        c_in: usize,
        c_out: usize,
        len: usize,
        k: usize,
    },
    Subsample {
        input: Var,
        factor: usize,
        rows: usize,
        len: usize,
    },
    Relu(Var),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        rows: usize,
        n: usize,
        m: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        input: Var,
        rows: usize,
        cols: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    NormalizeRows {
        input: Var,
        cols: usize,
        norms: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        cols: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Records a forward computation for one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        self.nodes.push(Node {
            shape,
            values,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Register a tensor (parameter or input) as a leaf.
    pub fn leaf(&mut self, t: &DiffTensor) -> Var {
        self.push(t.shape.clone(), t.values.clone(), t.requires_grad, Op::Leaf)
    }

    /// Register a leaf that takes ownership of its values.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        if numel(&shape) != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(&shape),
                values.len()
            )));
        }
        Ok(self.push(shape, values, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).values[0]
    }

    pub fn tensor(&self, v: Var) -> DiffTensor {
        let n = self.node(v);
        DiffTensor {
            shape: n.shape.clone(),
            values: n.values.clone(),
            requires_grad: n.requires_grad,
            grad: self.grads.get(v.0).cloned().flatten(),
        }
    }

    // -----------------------------------------------------------------
    // operators

    /// Valid cross-correlation summed over input channels, plus bias.
    /// `input` is `[c_in, len]` or `[batch, c_in, len]`, `kernels` is
    /// `[c_out, c_in, k]`, `bias` is `[c_out]`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (ishape, kshape, bshape) = (
            self.shape(input).to_vec(),
            self.shape(kernels).to_vec(),
            self.shape(bias).to_vec(),
        );
        let (batch, c_in, len, batched) = match ishape[..] {
            [c, l] => (1, c, l, false),
            [b, c, l] => (b, c, l, true),
            _ => return Err(Error::Shape(format!("conv1d input must be 2-D or 3-D, got {ishape:?}"))),
        };
        let [c_out, kc_in, k] = kshape[..] else {
            return Err(Error::Shape(format!("conv1d kernels must be 3-D, got {kshape:?}")));
        };
        if kc_in != c_in {
            return Err(Error::Shape(format!(
                "conv1d kernels expect {kc_in} input channels, input has {c_in}"
            )));
        }
        if bshape != [c_out] {
            return Err(Error::Shape(format!("conv1d bias must be [{c_out}], got {bshape:?}")));
        }
        if len < k || k == 0 {
            return Err(Error::Shape(format!(
                "conv1d input length {len} shorter than kernel size {k}"
            )));
        }
        let lo = len - k + 1;
        let (x, w, b) = (self.value(input), self.value(kernels), self.value(bias));
        let mut y = vec![0.0; batch * c_out * lo];
        for bi in 0..batch {
            conv_forward(
                &x[bi * c_in * len..(bi + 1) * c_in * len],
                w,
                b,
                &mut y[bi * c_out * lo..(bi + 1) * c_out * lo],
                c_in,
                len,
                k,
            );
        }
        let shape = if batched { vec![batch, c_out, lo] } else { vec![c_out, lo] };
        let rg = self.rg(input) || self.rg(kernels) || self.rg(bias);
        Ok(self.push(
            shape,
            y,
            rg,
            Op::Conv1d {
                input,
                kernels,
                bias,
                batch,
                c_in,
                c_out,
                len,
                k,
            },
        ))
    }

    /// Non-overlapping average pooling along the last axis; a trailing
    /// remainder shorter than `factor` is dropped.
    pub fn subsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let Some(&len) = shape.last() else {
            return Err(Error::Shape("subsample needs at least one axis".into()));
        };
        if factor == 0 {
            return Err(Error::Shape("subsample factor must be >= 1".into()));
        }
        if len < factor {
            return Err(Error::Shape(format!(
                "subsample input length {len} shorter than factor {factor}"
            )));
        }
        let rows = numel(&shape) / len;
        let lo = len / factor;
        let inv = 1.0 / factor as f64;
        let x = self.value(input);
        let mut y = Vec::with_capacity(rows * lo);
        for r in 0..rows {
            let xr = &x[r * len..r * len + lo * factor];
            y.extend(xr.chunks_exact(factor).map(|c| c.iter().sum::<f64>() * inv));
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = lo;
        let rg = self.rg(input);
        Ok(self.push(oshape, y, rg, Op::Subsample { input, factor, rows, len }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = self.value(input).iter().map(|&v| v.max(0.0)).collect();
        let (shape, rg) = (self.shape(input).to_vec(), self.rg(input));
        self.push(shape, y, rg, Op::Relu(input))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`. In eval
    /// mode (or with `p == 0`) the input is returned unchanged.
    pub fn dropout(&mut self, input: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let mut rng = seed::rng(seed, seed::DROPOUT, &[]);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(input).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let y = self.value(input).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let (shape, rg) = (self.shape(input).to_vec(), self.rg(input));
        Ok(self.push(shape, y, rg, Op::Dropout { input, mask }))
    }

    /// Affine map `x W^T + b` for `x` of shape `[n]` or `[rows, n]` and
    /// `W` of shape `[m, n]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        let (rows, n, batched) = match ishape[..] {
            [n] => (1, n, false),
            [r, n] => (r, n, true),
            _ => return Err(Error::Shape(format!("dense input must be 1-D or 2-D, got {ishape:?}"))),
        };
        let [m, wn] = wshape[..] else {
            return Err(Error::Shape(format!("dense weight must be 2-D, got {wshape:?}")));
        };
        if wn != n {
            return Err(Error::Shape(format!(
                "dense weight expects {wn} inputs, input has {n}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(Error::Shape(format!(
                    "dense bias must be [{m}], got {:?}",
                    self.shape(b)
                )));
            }
        }
        let (x, w) = (self.value(input), self.value(weight));
        let bv = bias.map(|b| self.value(b));
        let mut y = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &x[r * n..(r + 1) * n];
            for o in 0..m {
                y[r * m + o] = dot(&w[o * n..(o + 1) * n], xr) + bv.map_or(0.0, |b| b[o]);
            }
        }
        let shape = if batched { vec![rows, m] } else { vec![m] };
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            shape,
            y,
            rg,
            Op::Dense {
                input,
                weight,
                bias,
                rows,
                n,
                m,
            },
        ))
    }

    /// `[m, k] x [k, n]` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (&[m, k], &[k2, n]) = (&ash[..], &bsh[..]) else {
            return Err(Error::Shape(format!("matmul needs 2-D operands, got {ash:?} x {bsh:?}")));
        };
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dims differ: {ash:?} x {bsh:?}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut y[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(row, av[i * k + p], &bv[p * n..(p + 1) * n]);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], y, rg, Op::MatMul { a, b, m, k, n }))
    }

    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let sh = self.shape(input).to_vec();
        let [rows, cols] = sh[..] else {
            return Err(Error::Shape(format!("transpose needs a 2-D tensor, got {sh:?}")));
        };
        let x = self.value(input);
        let mut y = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                y[c * rows + r] = x[r * cols + c];
            }
        }
        let rg = self.rg(input);
        Ok(self.push(vec![cols, rows], y, rg, Op::Transpose { input, rows, cols }))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(input).len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(input)
            )));
        }
        let (y, rg) = (self.value(input).to_vec(), self.rg(input));
        Ok(self.push(shape, y, rg, Op::Reshape(input)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(a) || self.rg(b));
        Ok(self.push(shape, y, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, input: Var, c: f64) -> Var {
        let y = self.value(input).iter().map(|v| v * c).collect();
        let (shape, rg) = (self.shape(input).to_vec(), self.rg(input));
        self.push(shape, y, rg, Op::Scale(input, c))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = sum(self.value(input));
        let rg = self.rg(input);
        self.push(vec![], vec![s], rg, Op::Sum(input))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let s = sum(x) / x.len() as f64;
        let rg = self.rg(input);
        self.push(vec![], vec![s], rg, Op::Mean(input))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 || self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "dot needs equal-length vectors, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let s = dot(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![], vec![s], rg, Op::Dot(a, b)))
    }

    /// Scale every row of a 2-D tensor to unit Euclidean norm. A zero row
    /// is a degenerate-input error naming the row.
    pub fn normalize_rows(&mut self, input: Var) -> Result<Var> {
        let sh = self.shape(input).to_vec();
        let [rows, cols] = sh[..] else {
            return Err(Error::Shape(format!("normalize_rows needs a 2-D tensor, got {sh:?}")));
        };
        let x = self.value(input);
        let mut norms = Vec::with_capacity(rows);
        let mut y = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let xr = &x[r * cols..(r + 1) * cols];
            let norm = dot(xr, xr).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Degenerate(format!("row {r} has zero or non-finite norm")));
            }
            norms.push(norm);
            y.extend(xr.iter().map(|v| v / norm));
        }
        let rg = self.rg(input);
        Ok(self.push(sh, y, rg, Op::NormalizeRows { input, cols, norms }))
    }

    /// Mean over rows of `logsumexp(row) - row[target]`, i.e. softmax
    /// cross-entropy. With `exclude_diagonal` (square logits only) entry
    /// `(r, r)` is left out of row `r`'s softmax.
    pub fn softmax_xent(
        &mut self,
        logits: Var,
        targets: &[usize],
        exclude_diagonal: bool,
    ) -> Result<Var> {
        let sh = self.shape(logits).to_vec();
        let [rows, cols] = sh[..] else {
            return Err(Error::Shape(format!("softmax_xent needs 2-D logits, got {sh:?}")));
        };
        if targets.len() != rows {
            return Err(Error::Shape(format!(
                "{} targets for {rows} logit rows",
                targets.len()
            )));
        }
        if exclude_diagonal && rows != cols {
            return Err(Error::Shape(format!(
                "diagonal exclusion needs square logits, got {sh:?}"
            )));
        }
        let x = self.value(logits);
        let mut probs = vec![0.0; rows * cols];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols || (exclude_diagonal && t == r) {
                return Err(Error::Parameter(format!("invalid target {t} for row {r}")));
            }
            let xr = &x[r * cols..(r + 1) * cols];
            let allowed = |c: usize| !(exclude_diagonal && c == r);
            let mx = (0..cols).filter(|&c| allowed(c)).map(|c| xr[c]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            let pr = &mut probs[r * cols..(r + 1) * cols];
            for c in (0..cols).filter(|&c| allowed(c)) {
                pr[c] = (xr[c] - mx).exp();
                z += pr[c];
            }
            pr.iter_mut().for_each(|p| *p /= z);
            total += mx + z.ln() - xr[t];
        }
        let loss = total / rows as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            vec![],
            vec![loss],
            rg,
            Op::SoftmaxXent {
                logits,
                cols,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    // -----------------------------------------------------------------
    // backward

    /// Propagate d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass; zeros for a node that requires
    /// a gradient but did not participate, `None` if it requires none.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        let node = self.node(v);
        if !node.requires_grad {
            return None;
        }
        Some(
            self.grads
                .get(v.0)
                .cloned()
                .flatten()
                .unwrap_or_else(|| vec![0.0; node.values.len()]),
        )
    }

    /// Copy the gradient of leaf `v` into `t.grad`.
    pub fn write_grad(&self, v: Var, t: &mut DiffTensor) {
        if t.requires_grad {
            t.grad = Some(self.grad(v).unwrap_or_else(|| vec![0.0; t.values.len()]));
        }
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let n = nodes[v.0].values.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
                } else {
                    None
                }
            }};
        }
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Conv1d {
                input,
                kernels,
                bias,
                batch,
                c_in,
                c_out,
                len,
                k,
            } => {
                let lo = len - k + 1;
                let (x, w) = (&nodes[input.0].values, &nodes[kernels.0].values);
                if let Some(gb) = acc!(bias) {
                    for bi in 0..batch {
                        for o in 0..c_out {
                            gb[o] += sum(&g[(bi * c_out + o) * lo..(bi * c_out + o + 1) * lo]);
                        }
                    }
                }
                if let Some(gw) = acc!(kernels) {
                    for bi in 0..batch {
                        conv_weight_grad(
                            &g[bi * c_out * lo..(bi + 1) * c_out * lo],
                            &x[bi * c_in * len..(bi + 1) * c_in * len],
                            gw,
                            c_in,
                            c_out,
                            len,
                            k,
                        );
                    }
                }
                if let Some(gx) = acc!(input) {
                    for bi in 0..batch {
                        conv_input_grad(
                            &g[bi * c_out * lo..(bi + 1) * c_out * lo],
                            w,
                            &mut gx[bi * c_in * len..(bi + 1) * c_in * len],
                            c_in,
                            c_out,
                            len,
                            k,
                        );
                    }
                }
            }
            &Op::Subsample {
                input,
                factor,
                rows,
                len,
            } => {
                let lo = len / factor;
                let inv = 1.0 / factor as f64;
                if let Some(gx) = acc!(input) {
                    for r in 0..rows {
                        for t in 0..lo {
                            let v = g[r * lo + t] * inv;
                            gx[r * len + t * factor..r * len + (t + 1) * factor]
                                .iter_mut()
                                .for_each(|e| *e += v);
                        }
                    }
                }
            }
            &Op::Relu(input) => {
                let x = &nodes[input.0].values;
                if let Some(gx) = acc!(input) {
                    for ((gxi, &xi), &gi) in gx.iter_mut().zip(x).zip(g) {
                        if xi > 0.0 {
                            *gxi += gi;
                        }
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(gx) = acc!(*input) {
                    for ((gxi, m), gi) in gx.iter_mut().zip(mask).zip(g) {
                        *gxi += m * gi;
                    }
                }
            }
            &Op::Dense {
                input,
                weight,
                bias,
                rows,
                n,
                m,
            } => {
                let (x, w) = (&nodes[input.0].values, &nodes[weight.0].values);
                if let Some(b) = bias {
                    if let Some(gb) = acc!(b) {
                        for r in 0..rows {
                            for o in 0..m {
                                gb[o] += g[r * m + o];
                            }
                        }
                    }
                }
                if let Some(gw) = acc!(weight) {
                    for r in 0..rows {
                        for o in 0..m {
                            axpy(&mut gw[o * n..(o + 1) * n], g[r * m + o], &x[r * n..(r + 1) * n]);
                        }
                    }
                }
                if let Some(gx) = acc!(input) {
                    for r in 0..rows {
                        for o in 0..m {
                            axpy(&mut gx[r * n..(r + 1) * n], g[r * m + o], &w[o * n..(o + 1) * n]);
                        }
                    }
                }
            }
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (&nodes[a.0].values, &nodes[b.0].values);
                if let Some(ga) = acc!(a) {
                    for r in 0..m {
                        for p in 0..k {
                            ga[r * k + p] += dot(&g[r * n..(r + 1) * n], &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if let Some(gb) = acc!(b) {
                    for r in 0..m {
                        for p in 0..k {
                            axpy(&mut gb[p * n..(p + 1) * n], av[r * k + p], &g[r * n..(r + 1) * n]);
                        }
                    }
                }
            }
            &Op::Transpose { input, rows, cols } => {
                if let Some(gx) = acc!(input) {
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            &Op::Reshape(input) => {
                if let Some(gx) = acc!(input) {
                    axpy(gx, 1.0, g);
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = acc!(a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = acc!(b) {
                    axpy(gb, 1.0, g);
                }
            }
            &Op::Scale(input, c) => {
                if let Some(gx) = acc!(input) {
                    axpy(gx, c, g);
                }
            }
            &Op::Sum(input) => {
                if let Some(gx) = acc!(input) {
                    gx.iter_mut().for_each(|e| *e += g[0]);
                }
            }
            &Op::Mean(input) => {
                let n = nodes[input.0].values.len() as f64;
                if let Some(gx) = acc!(input) {
                    gx.iter_mut().for_each(|e| *e += g[0] / n);
                }
            }
            &Op::Dot(a, b) => {
                let (av, bv) = (&nodes[a.0].values, &nodes[b.0].values);
                if let Some(ga) = acc!(a) {
                    axpy(ga, g[0], bv);
                }
                if let Some(gb) = acc!(b) {
                    axpy(gb, g[0], av);
                }
            }
            Op::NormalizeRows { input, cols, norms } => {
                let y = &nodes[i].values;
                let cols = *cols;
                if let Some(gx) = acc!(*input) {
                    for (r, norm) in norms.iter().enumerate() {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let yg = dot(yr, gr);
                        for c in 0..cols {
                            gx[r * cols + c] += (gr[c] - yr[c] * yg) / norm;
                        }
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                cols,
                targets,
                probs,
            } => {
                let cols = *cols;
                let scale = g[0] / targets.len() as f64;
                if let Some(gx) = acc!(*logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        axpy(&mut gx[r * cols..(r + 1) * cols], scale, &probs[r * cols..(r + 1) * cols]);
                        gx[r * cols + t] -= scale;
                    }
                }
            }
        }
    }
}
