//! Define-by-run reverse-mode autodiff over a per-step tape.
//!
//! The primitive set is deliberately small: matmul, add (plus row broadcast),
//! mul, scale, relu, mean, sum, log, exp, softmax, cosine similarity, gather,
//! concat, transpose, reshape, sigmoid and gradient reversal. Convolution and
//! the losses compose from these, so one finite-difference checker covers the
//! whole graph.

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, p: usize, q: usize, r: usize },
    Transpose { a: Var, rows: usize, cols: usize },
    Add { a: Var, b: Var },
    AddRow { a: Var, b: Var, cols: usize },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    Relu { a: Var },
    Exp { a: Var },
    Log { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    MeanTime { a: Var, batch: usize, t: usize, ch: usize },
    SoftmaxRows { a: Var, cols: usize },
    CosinePairs { a: Var, b: Var, n: usize, k: usize, d: usize },
    Gather { a: Var, idx: Vec<usize> },
    Concat { parts: Vec<Var> },
    Reshape { a: Var },
    Sigmoid { a: Var },
    GradReverse { a: Var, strength: f64 },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation for one training step. Confined to a single thread.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient buffer for `v`; zeros for unreachable requires_grad leaves,
    /// `None` for nodes that never required grad.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.slots[v.0].as_deref()
    }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone()).unwrap()
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

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a leaf. `requires_grad` leaves receive gradient in backward.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            requires_grad,
            Op::Leaf,
        )
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![], vec![v], false, Op::Leaf)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    /// `[p×q] · [q×r] -> [p×r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims2(a, "matmul")?;
        let (q2, r) = self.dims2(b, "matmul")?;
        if q != q2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; p * r];
        matmul_raw(self.data(a), self.data(b), p, q, r, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![p, r], out, rg, Op::MatMul { a, b, p, q, r }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(a, "transpose")?;
        let src = self.data(a);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = src[i * cols + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![cols, rows], out, rg, Op::Transpose { a, rows, cols }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, rg, Op::Add { a, b }))
    }

    /// `[n×d] + [d]`, the bias broadcast over leading batch rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(a, "add_row")?;
        if self.shape(b) != [cols] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bv = self.data(b).to_vec();
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % cols])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![rows, cols], out, rg, Op::AddRow { a, b, cols }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::AddScalar { a })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Relu { a })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x.exp()).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Exp { a })
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x.ln()).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Log { a })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.data(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![], vec![s], rg, Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.data(a).len() as f64;
        let s: f64 = self.data(a).iter().sum::<f64>() / n;
        let rg = self.rg(a);
        self.push(vec![], vec![s], rg, Op::Mean { a })
    }

    /// Mean over the time axis of a `[batch, t, ch]` tensor -> `[batch, ch]`.
    pub fn mean_time(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "mean_time",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (batch, t, ch) = (s[0], s[1], s[2]);
        let src = self.data(a);
        let mut out = vec![0.0; batch * ch];
        for b in 0..batch {
            for ti in 0..t {
                for c in 0..ch {
                    out[b * ch + c] += src[(b * t + ti) * ch + c];
                }
            }
        }
        for v in out.iter_mut() {
            *v /= t as f64;
        }
        let rg = self.rg(a);
        Ok(self.push(vec![batch, ch], out, rg, Op::MeanTime { a, batch, t, ch }))
    }

    /// Row-wise softmax with max-subtraction. Accepts 1-D (one row) or 2-D input.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let cols = match s.len() {
            1 => s[0],
            2 => s[1],
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "softmax",
                    lhs: s.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if cols == 0 {
            return Err(Error::Contract("softmax over empty row".into()));
        }
        if !self.data(a).iter().all(|v| v.is_finite()) {
            return Err(Error::NumericDomain("softmax input not finite".into()));
        }
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for (orow, irow) in out.chunks_mut(cols).zip(src.chunks(cols)) {
            let mx = irow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, x) in orow.iter_mut().zip(irow) {
                *o = (x - mx).exp();
                z += *o;
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let shape = s.to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::SoftmaxRows { a, cols }))
    }

    /// All pairwise cosine similarities between rows of `a` `[n×d]` and rows
    /// of `b` `[k×d]` -> `[n×k]`. Errors on any zero-norm row.
    pub fn cosine_pairs(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims2(a, "cosine_pairs")?;
        let (k, d2) = self.dims2(b, "cosine_pairs")?;
        if d != d2 {
            return Err(Error::ShapeMismatch {
                op: "cosine_pairs",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let av = self.data(a);
        let bv = self.data(b);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..n {
            if norm(&av[i * d..(i + 1) * d]) == 0.0 {
                return Err(Error::DegenerateVector("cosine_pairs lhs"));
            }
        }
        for j in 0..k {
            if norm(&bv[j * d..(j + 1) * d]) == 0.0 {
                return Err(Error::DegenerateVector("cosine_pairs rhs"));
            }
        }
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let ai = &av[i * d..(i + 1) * d];
            let na = norm(ai);
            for j in 0..k {
                let bj = &bv[j * d..(j + 1) * d];
                let nb = norm(bj);
                let dot: f64 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
                out[i * k + j] = dot / (na * nb);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![n, k], out, rg, Op::CosinePairs { a, b, n, k, d }))
    }

    /// Cosine similarity between two vectors -> scalar.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let la = self.data(a).len();
        let lb = self.data(b).len();
        if la != lb {
            return Err(Error::ShapeMismatch {
                op: "cosine",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let am = self.reshape(a, vec![1, la])?;
        let bm = self.reshape(b, vec![1, lb])?;
        let c = self.cosine_pairs(am, bm)?;
        self.reshape(c, vec![])
    }

    /// `out[j] = a_flat[idx[j]]` -> `[idx.len()]`.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let src = self.data(a);
        let n = src.len();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Contract(format!(
                "gather index {} out of bounds for {} elements",
                bad, n
            )));
        }
        let out: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        let shape = vec![idx.len()];
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::Gather { a, idx }))
    }

    /// Concatenate the flattened parts into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            out.extend_from_slice(self.data(p));
            rg |= self.rg(p);
        }
        let shape = vec![out.len()];
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.data(a).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let out = self.data(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::Reshape { a }))
    }

    /// Numerically stable logistic sigmoid.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Sigmoid { a })
    }

    /// Identity forward; backward multiplies the incoming gradient by
    /// `-strength`. The adversarial connection between features and the
    /// discriminator.
    pub fn grad_reverse(&mut self, a: Var, strength: f64) -> Var {
        let out = self.data(a).to_vec();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::GradReverse { a, strength })
    }

    /// Reverse sweep from a scalar loss. Populates gradients for every
    /// requires_grad node reachable from `loss`; unreachable requires_grad
    /// leaves hold zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Grads> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut slots: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| {
                if n.requires_grad {
                    Some(vec![0.0; n.value.len()])
                } else {
                    None
                }
            })
            .collect();
        if let Some(g) = slots[loss.0].as_mut() {
            g[0] = 1.0;
        }
        for i in (0..=loss.0).rev() {
            let g = match slots[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut slots);
            slots[i] = Some(g);
        }
        Ok(Grads { slots })
    }

    fn accumulate(&self, i: usize, g: &[f64], slots: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, p, q, r } => {
                // dA = G·Bᵀ, dB = Aᵀ·G
                if let Some(ga) = slots[a.0].as_mut() {
                    let bv = &self.nodes[b.0].value;
                    for i in 0..*p {
                        for k in 0..*q {
                            let mut acc = 0.0;
                            for j in 0..*r {
                                acc += g[i * r + j] * bv[k * r + j];
                            }
                            ga[i * q + k] += acc;
                        }
                    }
                }
                if let Some(gb) = slots[b.0].as_mut() {
                    let av = &self.nodes[a.0].value;
                    for k in 0..*q {
                        for i in 0..*p {
                            let aik = av[i * q + k];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..*r {
                                gb[k * r + j] += aik * g[i * r + j];
                            }
                        }
                    }
                }
            }
            Op::Transpose { a, rows, cols } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for i in 0..*rows {
                        for j in 0..*cols {
                            ga[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if let Some(gb) = slots[b.0].as_mut() {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::AddRow { a, b, cols } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if let Some(gb) = slots[b.0].as_mut() {
                    for (i, y) in g.iter().enumerate() {
                        gb[i % cols] += y;
                    }
                }
            }
            Op::Mul { a, b } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    let bv = &self.nodes[b.0].value;
                    for ((x, y), bvv) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * bvv;
                    }
                }
                if let Some(gb) = slots[b.0].as_mut() {
                    let av = &self.nodes[a.0].value;
                    for ((x, y), avv) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * avv;
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y * c;
                    }
                }
            }
            Op::AddScalar { a } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::Relu { a } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    let av = &self.nodes[a.0].value;
                    for ((x, y), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::Exp { a } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(&node.value) {
                        *x += y * v;
                    }
                }
            }
            Op::Log { a } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    let av = &self.nodes[a.0].value;
                    for ((x, y), &v) in ga.iter_mut().zip(g).zip(av) {
                        *x += y / v;
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Mean { a } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    let n = ga.len() as f64;
                    for x in ga.iter_mut() {
                        *x += g[0] / n;
                    }
                }
            }
            Op::MeanTime { a, batch, t, ch } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    let tf = *t as f64;
                    for b in 0..*batch {
                        for ti in 0..*t {
                            for c in 0..*ch {
                                ga[(b * t + ti) * ch + c] += g[b * ch + c] / tf;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows { a, cols } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for ((grow, yrow), garow) in g
                        .chunks(*cols)
                        .zip(node.value.chunks(*cols))
                        .zip(ga.chunks_mut(*cols))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(gi, yi)| gi * yi).sum();
                        for ((x, gi), yi) in garow.iter_mut().zip(grow).zip(yrow) {
                            *x += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::CosinePairs { a, b, n, k, d } => {
                let (av, bv) = (val(*a).clone(), val(*b).clone());
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nas: Vec<f64> = (0..*n).map(|i| norm(&av[i * d..(i + 1) * d])).collect();
                let nbs: Vec<f64> = (0..*k).map(|j| norm(&bv[j * d..(j + 1) * d])).collect();
                for i in 0..*n {
                    let ai = &av[i * d..(i + 1) * d];
                    for j in 0..*k {
                        let gij = g[i * k + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let bj = &bv[j * d..(j + 1) * d];
                        let c = node.value[i * k + j];
                        if let Some(ga) = slots[a.0].as_mut() {
                            for t in 0..*d {
                                ga[i * d + t] += gij
                                    * (bj[t] / (nas[i] * nbs[j]) - c * ai[t] / (nas[i] * nas[i]));
                            }
                        }
                        if let Some(gb) = slots[b.0].as_mut() {
                            for t in 0..*d {
                                gb[j * d + t] += gij
                                    * (ai[t] / (nas[i] * nbs[j]) - c * bj[t] / (nbs[j] * nbs[j]));
                            }
                        }
                    }
                }
            }
            Op::Gather { a, idx } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for (&i, y) in idx.iter().zip(g) {
                        ga[i] += y;
                    }
                }
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = slots[p.0].as_mut() {
                        for (x, y) in gp.iter_mut().zip(&g[off..off + len]) {
                            *x += y;
                        }
                    }
                    off += len;
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::Sigmoid { a } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for ((x, y), s) in ga.iter_mut().zip(g).zip(&node.value) {
                        *x += y * s * (1.0 - s);
                    }
                }
            }
            Op::GradReverse { a, strength } => {
                if let Some(ga) = slots[a.0].as_mut() {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x -= strength * y;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn softmax_uniform_and_log_inputs() {
        let mut tape = Tape::new();
        let v = tape.leaf(&Tensor::vector(vec![0.0, 0.0, 0.0]), false);
        let s = tape.softmax(v).unwrap();
        for &x in tape.data(s) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let v = tape.leaf(
            &Tensor::vector(vec![1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()]),
            false,
        );
        let s = tape.softmax(v).unwrap();
        let expect = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (x, e) in tape.data(s).iter().zip(expect) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut tape = Tape::new();
        let v = tape.leaf(&Tensor::vector(vec![1.0, f64::NAN]), false);
        assert!(matches!(tape.softmax(v), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn softmax_shift_invariance_and_magnitude_500() {
        let mut tape = Tape::new();
        let v = tape.leaf(&Tensor::vector(vec![480.0, -500.0, 500.0, 3.0]), false);
        let s = tape.softmax(v).unwrap();
        let sum: f64 = tape.data(s).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let shifted = tape.add_scalar(v, 123.456);
        let s2 = tape.softmax(shifted).unwrap();
        for (a, b) in tape.data(s).to_vec().iter().zip(tape.data(s2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![2, 3], vec![0.0; 6]), false);
        let b = tape.leaf(&t(vec![2, 2], vec![0.0; 4]), false);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_1x1() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![1, 1], vec![2.0]), false);
        let b = tape.leaf(&t(vec![1, 1], vec![3.0]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(c), &[6.0]);
    }

    #[test]
    fn backward_square() {
        // loss = x², x = 3 → grad 6
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert!((grads.get(x).unwrap()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_cross_entropy_grad_is_p_minus_y() {
        let mut tape = Tape::new();
        let v = tape.leaf(&Tensor::vector(vec![0.3, -1.2, 2.0]), true);
        let p = tape.softmax(v).unwrap();
        let onehot = tape.constant(&Tensor::vector(vec![0.0, 1.0, 0.0]));
        let lp = tape.log(p);
        let picked = tape.mul(lp, onehot).unwrap();
        let s = tape.sum(picked);
        let loss = tape.scale(s, -1.0);
        let grads = tape.backward(loss).unwrap();
        let pv = tape.data(p).to_vec();
        let y = [0.0, 1.0, 0.0];
        for (i, g) in grads.get(v).unwrap().iter().enumerate() {
            assert!((g - (pv[i] - y[i])).abs() < 1e-12, "coord {i}");
        }
    }

    #[test]
    fn grad_reverse_identity_forward_negated_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, -2.0, 3.0]), true);
        let r = tape.grad_reverse(x, 1.0);
        assert_eq!(tape.data(r), tape.data(x));
        let loss = tape.sum(r);
        let grads = tape.backward(loss).unwrap();
        for &g in grads.get(x).unwrap() {
            assert!((g + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_reverse_zero_strength_kills_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]), true);
        let r = tape.grad_reverse(x, 0.0);
        let loss = tape.sum(r);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.0), true);
        let y = tape.leaf(&Tensor::scalar(5.0), true);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(y).unwrap(), &[0.0]);
    }

    #[test]
    fn cosine_scale_invariance() {
        let a = Tensor::vector(vec![0.3, -1.0, 2.5]);
        let b = Tensor::vector(vec![1.1, 0.7, -0.2]);
        let mut base = None;
        for &(al, be) in &[(1.0, 1.0), (1e-3, 1e3), (1e3, 1e-3), (1e-3, 1e-3)] {
            let mut tape = Tape::new();
            let av: Vec<f64> = a.data().iter().map(|x| x * al).collect();
            let bv: Vec<f64> = b.data().iter().map(|x| x * be).collect();
            let va = tape.leaf(&Tensor::vector(av), false);
            let vb = tape.leaf(&Tensor::vector(bv), false);
            let c = tape.cosine(va, vb).unwrap();
            let v = tape.item(c);
            match base {
                None => base = Some(v),
                Some(b0) => assert!((v - b0).abs() < 1e-12),
            }
        }
    }

    #[test]
    fn cosine_zero_norm_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::vector(vec![0.0, 0.0]), false);
        let b = tape.leaf(&Tensor::vector(vec![1.0, 0.0]), false);
        assert!(matches!(
            tape.cosine(a, b),
            Err(Error::DegenerateVector(_))
        ));
    }
}
