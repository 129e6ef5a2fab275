use super::{matmul_into, transpose_data, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    BatchTranspose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var),
    Sum(Var),
    Detach,
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Ops execute eagerly and are appended in order; backward
/// walks the record in reverse and visits each op once.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; zeros if `v` does not influence the loss or is
    /// not tracked.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let n: usize = shape.iter().product();
    (if cols == 0 { 0 } else { n / cols }, cols)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Tracked input (gradients are reported for it).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Same value, no gradient flows back through it.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.push(t, Op::Detach, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim(format!("bmm {:?} x {:?}", sa, sb)));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            matmul_into(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[bs, m, n], out)?, Op::BatchMatMul(a, b), rg))
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (bs, m, n) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => return Err(Error::dim(format!("transpose of {:?}", s))),
        };
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(src.len());
        for i in 0..bs {
            out.extend(transpose_data(&src[i * m * n..(i + 1) * m * n], m, n));
        }
        let shape = if s.len() == 2 {
            vec![n, m]
        } else {
            vec![bs, n, m]
        };
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::BatchTranspose(a), rg))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of a tensor whose last axis is `n`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(a));
        let bs = self.shape(bias);
        if bs.iter().product::<usize>() != cols
            || bs.len() > 1 && bs[..bs.len() - 1].iter().any(|&d| d != 1)
        {
            return Err(Error::dim(format!(
                "bias {:?} does not match rows of {:?}",
                bs,
                self.shape(a)
            )));
        }
        let bd = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&bd) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.add_scalar(n, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("log of a nonpositive value".into()));
        }
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Square(a), rg)
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let (_, cols) = out.as_matrix();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let (_, cols) = out.as_matrix();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Concatenate rank-2 tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let rows = self.shape(parts[0]).first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim(format!(
                    "concat_cols part {:?}, rows {}",
                    s, rows
                )));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(&[rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Concatenate along the leading axis; trailing axes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let tail = self.shape(parts[0]).get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat_rows part {:?}, tail {:?}",
                    s, tail
                )));
            }
            lead += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// `len` entries of the leading axis starting at `start`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(Error::dim(format!(
                "slice {}..{} of {:?}",
                start,
                start + len,
                s
            )));
        }
        let stride: usize = s[1..].iter().product();
        let data = self.value(a).data()[start * stride..(start + len) * stride].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::SliceRows(a, start), rg))
    }

    /// Mean over all but the last axis: `[.., n] -> [n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (rows, cols) = rows_cols(self.shape(a));
        let mut out = vec![0.0; cols];
        for row in self.value(a).data().chunks(cols.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let inv = 1.0 / rows.max(1) as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&[cols], out).unwrap(), Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let bt = transpose_data(val(*b), k, n);
                    let mut ga = vec![0.0; m * k];
                    matmul_into(g, &bt, &mut ga, m, n, k);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let at = transpose_data(val(*a), m, k);
                    let mut gb = vec![0.0; k * n];
                    matmul_into(&at, g, &mut gb, k, m, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; bs * m * k];
                    for z in 0..bs {
                        let bt = transpose_data(&val(*b)[z * k * n..(z + 1) * k * n], k, n);
                        matmul_into(
                            &g[z * m * n..(z + 1) * m * n],
                            &bt,
                            &mut ga[z * m * k..(z + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; bs * k * n];
                    for z in 0..bs {
                        let at = transpose_data(&val(*a)[z * m * k..(z + 1) * m * k], m, k);
                        matmul_into(
                            &at,
                            &g[z * m * n..(z + 1) * m * n],
                            &mut gb[z * k * n..(z + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::BatchTranspose(a) => {
                let s = node.value.shape();
                let (bs, n, m) = if s.len() == 2 {
                    (1, s[0], s[1])
                } else {
                    (s[0], s[1], s[2])
                };
                let mut ga = Vec::with_capacity(g.len());
                for z in 0..bs {
                    ga.extend(transpose_data(&g[z * n * m..(z + 1) * n * m], n, m));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(g, b)| g / b).collect());
                }
                if self.requires_grad(*b) {
                    let gb = g
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(g, (a, b))| -g * a / (b * b))
                        .collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.requires_grad(*bias) {
                    let cols = self.value(*bias).numel();
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks(cols.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.iter().map(|x| x * c).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Sigmoid(a) => self.accumulate(
                grads,
                *a,
                g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect(),
            ),
            Op::Tanh(a) => self.accumulate(
                grads,
                *a,
                g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect(),
            ),
            Op::Exp(a) => self.accumulate(grads, *a, g.iter().zip(y).map(|(g, e)| g * e).collect()),
            Op::Log(a) => self.accumulate(
                grads,
                *a,
                g.iter().zip(val(*a)).map(|(g, x)| g / x).collect(),
            ),
            Op::Square(a) => self.accumulate(
                grads,
                *a,
                g.iter().zip(val(*a)).map(|(g, x)| 2.0 * g * x).collect(),
            ),
            Op::SoftmaxRows(a) => {
                let (_, cols) = node.value.as_matrix();
                let mut ga = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(cols.max(1)).zip(y.chunks(cols.max(1))) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    ga.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let (_, cols) = node.value.as_matrix();
                let mut ga = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(cols.max(1)).zip(y.chunks(cols.max(1))) {
                    let total: f64 = gr.iter().sum();
                    ga.extend(gr.iter().zip(yr).map(|(g, ly)| g - ly.exp() * total));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.requires_grad(*p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, *p, gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.requires_grad(*p) {
                        self.accumulate(grads, *p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.shape(*a);
                let stride: usize = src[1..].iter().product();
                let mut ga = vec![0.0; self.value(*a).numel()];
                ga[start * stride..start * stride + g.len()].copy_from_slice(g);
                self.accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let (rows, cols) = rows_cols(self.shape(*a));
                let inv = 1.0 / rows.max(1) as f64;
                let mut ga = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    ga.extend(g.iter().map(|x| x * inv));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
