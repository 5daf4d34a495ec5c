use rand::Rng;

use super::kernels;
use super::{dims2, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow {
        a: Var,
        row: Var,
    },
    Scale(Var, T),
    Gelu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    SoftmaxMasked {
        a: Var,
    },
    LogSoftmax(Var),
    Gather {
        table: Var,
        indices: Vec<Option<usize>>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Pick {
        a: Var,
        idx: Vec<usize>,
    },
    Dropout {
        a: Var,
        scale: Vec<T>,
    },
}

impl<T> Op<T> {
    #[allow(dead_code)]
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SoftmaxMasked { .. } => "softmax_masked",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Gather { .. } => "gather_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Transpose(_) => "transpose",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Pick { .. } => "pick",
            Op::Dropout { .. } => "dropout",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRow { a, row } => vec![*a, *row],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(parts) => parts.clone(),
            Op::Gather { table, .. } => vec![*table],
            Op::Scale(a, _)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::SoftmaxMasked { a, .. }
            | Op::LogSoftmax(a)
            | Op::SliceCols { a, .. }
            | Op::SliceRows { a, .. }
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Pick { a, .. }
            | Op::Dropout { a, .. } => vec![*a],
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed operations. Inputs always precede their
/// consumers, so a single reverse sweep visits every node once.
pub struct Tape<'p, T: Real> {
    params: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: Vec<Option<Vec<T>>>,
    leaves: Vec<(Var, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Gradients {
            params: store.entries().iter().map(|e| Some(vec![T::zero(); e.tensor.numel()])).collect(),
            leaves: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Vec<T>> {
        self.params.get_mut(id.0).and_then(|g| g.as_mut())
    }

    pub fn leaf(&self, v: Var) -> Option<&[T]> {
        self.leaves.iter().find(|(var, _)| *var == v).map(|(_, g)| g.as_slice())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `self += other` over parameter gradients.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if let Some(src) = src {
                match dst {
                    Some(d) => d.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s),
                    None => *dst = Some(src.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.params.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v = *v * c);
        }
    }

    /// Store gradients in each parameter tensor's `grad` field.
    pub fn write_to(&self, store: &mut ParamStore<T>) {
        for (entry, g) in store.entries_mut().iter_mut().zip(&self.params) {
            entry.tensor.grad = g.clone();
        }
    }
}

impl<T: Real> Default for Tape<'static, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<'static, T> {
    pub fn new() -> Self {
        Tape {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
        }
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let inputs = op.inputs();
        #[cfg(debug_assertions)]
        if value.iter().any(|v| !v.is_finite()) && inputs.iter().all(|&i| self.value(i).iter().all(|v| v.is_finite())) {
            panic!("{} produced a non-finite value from finite inputs", op.name());
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a tensor as a leaf; it receives a gradient iff `requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        let shape = tensor.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: tensor.into_data(),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape.to_vec(), data)?))
    }

    /// Parameter from the borrowed store. Repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Vec::new(),
            op: Op::Param(id),
            needs_grad: t.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.expect("param store").get(id).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("consistent node")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims2(self.shape(v))
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (bk, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(Error::Shape {
                op: if trans_b { "matmul_nt" } else { "matmul" },
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        T::gemm(
            m,
            k,
            n,
            self.value(a),
            k as isize,
            1,
            self.value(b),
            rsb,
            csb,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, trans_b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b)))
    }

    /// Broadcast-add a `[n]` row to every row of `a[...×n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks(n.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &b)| x + b))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow { a, row }))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::gelu(x)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::sigmoid(x)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::log_sigmoid(x)).collect();
        self.push(self.shape(a).to_vec(), out, Op::LogSigmoid(a))
    }

    /// Per-row normalisation over the last axis, then `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (rows, d) = self.dims(x);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let mut out = vec![T::zero(); rows * d];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        {
            let xv = self.value(x);
            let (g, b) = (self.value(gain), self.value(bias));
            for r in 0..rows {
                let (mu, rs) = kernels::layer_norm_row(&xv[r * d..(r + 1) * d], g, b, eps, &mut out[r * d..(r + 1) * d]);
                mean.push(mu);
                rstd.push(rs);
            }
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, gain, bias, mean, rstd }))
    }

    /// Row-wise softmax restricted to `mask`; masked entries are exactly 0.
    pub fn softmax_masked(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let (rows, n) = self.dims(a);
        if mask.len() != rows * n {
            return Err(Error::Shape {
                op: "softmax_masked",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut out = vec![T::zero(); rows * n];
        {
            let av = self.value(a);
            for r in 0..rows {
                let span = r * n..(r + 1) * n;
                kernels::softmax_masked_row(&av[span.clone()], &mask[span.clone()], &mut out[span])
                    .map_err(|_| Error::FullyMasked { row: r })?;
            }
        }
        Ok(self.push(self.shape(a).to_vec(), out, Op::SoftmaxMasked { a }))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (rows, n) = self.dims(a);
        let mut out = vec![T::zero(); rows * n];
        let av = self.value(a);
        for r in 0..rows {
            let row = &av[r * n..(r + 1) * n];
            let lse = kernels::logsumexp(row);
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.push(self.shape(a).to_vec(), out, Op::LogSoftmax(a))
    }

    /// Rows of `table[V×d]` selected by `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let opt: Vec<Option<usize>> = indices.iter().map(|&i| Some(i)).collect();
        self.gather_rows_opt(table, opt)
    }

    /// Like [`gather_rows`](Self::gather_rows); `None` yields a zero row.
    pub fn gather_rows_opt(&mut self, table: Var, indices: Vec<Option<usize>>) -> Result<Var> {
        let (v, d) = self.dims(table);
        let mut out = vec![T::zero(); indices.len() * d];
        {
            let tv = self.value(table);
            for (r, idx) in indices.iter().enumerate() {
                if let Some(i) = *idx {
                    if i >= v {
                        return Err(Error::Index { index: i, len: v });
                    }
                    out[r * d..(r + 1) * d].copy_from_slice(&tv[i * d..(i + 1) * d]);
                }
            }
        }
        Ok(self.push(vec![indices.len(), d], out, Op::Gather { table, indices }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, n) = self.dims(a);
        if start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: self.shape(a).to_vec(),
                rhs: vec![start, len],
            });
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&av[r * n + start..r * n + start + len]);
        }
        Ok(self.push(vec![rows, len], out, Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: self.shape(parts[0]).to_vec(),
                rhs: parts.iter().map(|&p| self.dims(p).0).collect(),
            });
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, n) = self.dims(a);
        if start + len > rows {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: self.shape(a).to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        Ok(self.push(vec![len, n], out, Op::SliceRows { a, start }))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (rows, n) = self.dims(a);
        let av = self.value(a);
        let mut out = vec![T::zero(); rows * n];
        for r in 0..rows {
            for c in 0..n {
                out[c * rows + r] = av[r * n + c];
            }
        }
        self.push(vec![n, rows], out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    /// Gather individual entries by `(row, col)`; result has shape `[len]`.
    pub fn pick(&mut self, a: Var, coords: &[(usize, usize)]) -> Result<Var> {
        let (rows, n) = self.dims(a);
        let mut idx = Vec::with_capacity(coords.len());
        for &(r, c) in coords {
            if r >= rows || c >= n {
                return Err(Error::Index {
                    index: r * n + c,
                    len: rows * n,
                });
            }
            idx.push(r * n + c);
        }
        let av = self.value(a);
        let out = idx.iter().map(|&i| av[i]).collect();
        Ok(self.push(vec![coords.len()], out, Op::Pick { a, idx }))
    }

    /// Inverted dropout; identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let scale: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = self.value(a).iter().zip(&scale).map(|(&x, &s)| x * s).collect();
        self.push(self.shape(a).to_vec(), out, Op::Dropout { a, scale })
    }

    // ── reverse sweep ───────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            params: vec![None; self.params.map_or(0, |p| p.len())],
            leaves: Vec::new(),
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => out.leaves.push((Var(i), g)),
                Op::Param(id) => match &mut out.params[id.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a = *a + v),
                    slot => *slot = Some(g),
                },
                op => self.backprop_op(op, &node.value, &g, &mut grads),
            }
        }
        out.leaves.sort_by_key(|(v, _)| *v);
        Ok(out)
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop_op(&self, op: &Op<T>, y: &[T], g: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims(*a);
                let n = g.len() / m.max(1);
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_buf(grads, *a) {
                    // dA[m×k] += dC[m×n] · Bᵀ
                    let (rs, cs) = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                    T::gemm(m, n, k, g, n as isize, 1, bv, rs, cs, T::one(), ga, k as isize, 1);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    if *trans_b {
                        // dB[n×k] += dCᵀ · A
                        T::gemm(n, m, k, g, 1, n as isize, av, k as isize, 1, T::one(), gb, k as isize, 1);
                    } else {
                        // dB[k×n] += Aᵀ · dC
                        T::gemm(k, m, n, av, 1, k as isize, g, n as isize, 1, T::one(), gb, n as isize, 1);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.grad_buf(grads, v) {
                        ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *d = *d + s * o;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for ((d, &s), &o) in gb.iter_mut().zip(g).zip(av) {
                        *d = *d + s * o;
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s);
                }
                if let Some(gr) = self.grad_buf(grads, *row) {
                    let n = gr.len();
                    for chunk in g.chunks(n.max(1)) {
                        gr.iter_mut().zip(chunk).for_each(|(d, &s)| *d = *d + s);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s * *c);
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(av) {
                        *d = *d + s * kernels::gelu_grad(x);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(y) {
                        *d = *d + s * o * (T::one() - o);
                    }
                }
            }
            Op::LogSigmoid(a) => {
                let av = self.value(*a);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(av) {
                        *d = *d + s * kernels::sigmoid(-x);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let (rows, d) = self.dims(*x);
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let xhat = |r: usize, j: usize| (xv[r * d + j] - mean[r]) * rstd[r];
                if let Some(gg) = self.grad_buf(grads, *gain) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] = gg[j] + g[r * d + j] * xhat(r, j);
                        }
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *bias) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] = gb[j] + g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = self.grad_buf(grads, *x) {
                    let dn = T::of(d as f64);
                    for r in 0..rows {
                        let mut sum_dxh = T::zero();
                        let mut sum_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = g[r * d + j] * gv[j];
                            sum_dxh = sum_dxh + dxh;
                            sum_dxh_xh = sum_dxh_xh + dxh * xhat(r, j);
                        }
                        let (m1, m2) = (sum_dxh / dn, sum_dxh_xh / dn);
                        for j in 0..d {
                            let dxh = g[r * d + j] * gv[j];
                            gx[r * d + j] = gx[r * d + j] + rstd[r] * (dxh - m1 - xhat(r, j) * m2);
                        }
                    }
                }
            }
            Op::SoftmaxMasked { a, .. } => {
                let (rows, n) = self.dims(*a);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for r in 0..rows {
                        let span = r * n..(r + 1) * n;
                        let dotp: T = y[span.clone()].iter().zip(&g[span.clone()]).map(|(&p, &s)| p * s).sum();
                        for j in span {
                            ga[j] = ga[j] + y[j] * (g[j] - dotp);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let (rows, n) = self.dims(*a);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for r in 0..rows {
                        let span = r * n..(r + 1) * n;
                        let gs: T = g[span.clone()].iter().copied().sum();
                        for j in span {
                            ga[j] = ga[j] + g[j] - y[j].exp() * gs;
                        }
                    }
                }
            }
            Op::Gather { table, indices } => {
                let d = self.dims(*table).1;
                if let Some(gt) = self.grad_buf(grads, *table) {
                    for (r, idx) in indices.iter().enumerate() {
                        if let Some(i) = *idx {
                            let dst = &mut gt[i * d..(i + 1) * d];
                            dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(d, &s)| *d = *d + s);
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let (rows, n) = self.dims(*a);
                let len = g.len() / rows.max(1);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for r in 0..rows {
                        for j in 0..len {
                            ga[r * n + start + j] = ga[r * n + start + j] + g[r * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = self.dims(parts[0]).0;
                let total = g.len() / rows.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] = gp[r * w + j] + g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows { a, start } => {
                let n = self.dims(*a).1;
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let dst = &mut ga[start * n..start * n + g.len()];
                    dst.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s);
                }
            }
            Op::Transpose(a) => {
                let (rows, n) = self.dims(*a);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for r in 0..rows {
                        for c in 0..n {
                            ga[r * n + c] = ga[r * n + c] + g[c * rows + r];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let c = g[0] / T::of(ga.len().max(1) as f64);
                    ga.iter_mut().for_each(|d| *d = *d + c);
                }
            }
            Op::Pick { a, idx } => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (&i, &s) in idx.iter().zip(g) {
                        ga[i] = ga[i] + s;
                    }
                }
            }
            Op::Dropout { a, scale } => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((d, &s), &k) in ga.iter_mut().zip(g).zip(scale) {
                        *d = *d + s * k;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::finite_diff_check;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.leaf(t(&[2, 2], &[3.0, -1.0, 2.5, 7.0]));
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out), tape.value(m));

        let a = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(&[2, 1], &[1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 1]);
        assert_eq!(tape.value(c), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_sum_gradient_is_column_sums_of_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a0: Tensor<f64> = Tensor::randn(&[3, 4], 1.0, &mut rng).with_grad();
        let b0: Tensor<f64> = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let mut tape = Tape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.leaf(b0.clone());
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c);
        let grads = tape.backward(s).unwrap();
        let ga = grads.leaf(a).unwrap();
        // row-sums of b (sum over output columns) repeated for each row of a
        let expected: Vec<f64> = (0..4).map(|t| b0.row(t).iter().sum()).collect();
        for r in 0..3 {
            for t in 0..4 {
                assert!((ga[r * 4 + t] - expected[t]).abs() < 1e-12);
            }
        }

        // and the same against central differences
        let report = finite_diff_check(
            |tape, vars| {
                let c = tape.matmul(vars[0], vars[1])?;
                Ok(tape.sum(c))
            },
            &[a0, b0.with_grad()],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn softmax_masked_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[0.0, 0.0, 0.0]));
        let p = tape.softmax_masked(x, vec![true; 3]).unwrap();
        for &v in tape.value(p) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let x = tape.leaf(t(&[3], &[5.0, 5.0, 5.0]));
        let p = tape.softmax_masked(x, vec![true, false, true]).unwrap();
        assert_eq!(tape.value(p), &[0.5, 0.0, 0.5]);

        let x = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        match tape.softmax_masked(x, vec![true, true, false, false]) {
            Err(Error::FullyMasked { row }) => assert_eq!(row, 1),
            other => panic!("expected fully-masked error, got {other:?}"),
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::<f64>::new();
        let g = tape.leaf(t(&[2], &[1.0, 1.0]));
        let b = tape.leaf(t(&[2], &[0.0, 0.0]));
        let x = tape.leaf(t(&[1, 2], &[4.0, 4.0]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0]);
        let x = tape.leaf(t(&[1, 2], &[1.0, -1.0]));
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        assert!((tape.value(y)[0] - 1.0).abs() < 1e-9);
        assert!((tape.value(y)[1] + 1.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = tape.leaf(Tensor::from_f64(&[16], &[1.0; 16]).unwrap());
        let b = tape.leaf(Tensor::zeros(&[16]));
        let x = tape.leaf(Tensor::randn(&[1, 16], 3.0, &mut rng));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let v = tape.value(y);
        let mean = v.iter().sum::<f64>() / 16.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn gather_rows_examples() {
        let mut tape = Tape::<f64>::new();
        let table = tape.leaf(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad());
        let r = tape.gather_rows(table, &[0]).unwrap();
        assert_eq!(tape.value(r), &[1.0, 2.0]);
        let e = tape.gather_rows(table, &[]).unwrap();
        assert_eq!(tape.shape(e), &[0, 2]);
        match tape.gather_rows(table, &[3]) {
            Err(Error::Index { index: 3, len: 3 }) => {}
            other => panic!("expected index error, got {other:?}"),
        }
        let rr = tape.gather_rows(table, &[2, 2]).unwrap();
        let s = tape.sum(rr);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.leaf(table).unwrap(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[0.3, -2.0, 9.0]).with_grad());
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.leaf(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.leaf(x).unwrap(), &[2.0, 4.0]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Tensor<f64> = Tensor::randn(&[3, 4], 1.0, &mut rng).with_grad();
        let w: Tensor<f64> = Tensor::randn(&[4, 4], 0.5, &mut rng).with_grad();
        let gain: Tensor<f64> = Tensor::randn(&[4], 1.0, &mut rng).with_grad();
        let bias: Tensor<f64> = Tensor::randn(&[4], 1.0, &mut rng).with_grad();
        let report = finite_diff_check(
            |tape, v| {
                let h = tape.layer_norm(v[0], v[2], v[3], 1e-5)?;
                let h = tape.matmul(h, v[1])?;
                let h = tape.add_row(h, v[3])?;
                let h = tape.gelu(h);
                let t = tape.transpose(h);
                let scores = tape.matmul(h, t)?;
                let mask: Vec<bool> = (0..9).map(|i| i % 5 != 1).collect();
                let s3 = tape.slice_rows(scores, 0, 3)?;
                let p = tape.softmax_masked(s3, mask)?;
                let nt = tape.matmul_nt(h, v[1])?;
                let nt = tape.mul(nt, h)?;
                let nts = tape.sum(nt);
                let left = tape.slice_cols(p, 0, 2)?;
                let right = tape.slice_cols(h, 1, 2)?;
                let cat = tape.concat_cols(&[left, right])?;
                let ls = tape.log_softmax(cat);
                let sg = tape.sigmoid(ls);
                let lsg = tape.log_sigmoid(h);
                let m = tape.mean(lsg);
                let picked = tape.pick(sg, &[(0, 0), (2, 3), (1, 1)])?;
                let gathered = tape.gather_rows(v[1], &[1, 1, 3])?;
                let gs = tape.sum(gathered);
                let ps = tape.sum(picked);
                let tot = tape.add(ps, m)?;
                let tot = tape.add(tot, gs)?;
                let tot = tape.add(tot, nts)?;
                Ok(tape.scale(tot, 0.7))
            },
            &[x, w, gain, bias],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut tape = Tape::<f64>::new();
            let a = tape.leaf(Tensor::randn(&[5, 7], 1.0, &mut rng).with_grad());
            let b = tape.leaf(Tensor::randn(&[7, 3], 1.0, &mut rng).with_grad());
            let c = tape.matmul(a, b).unwrap();
            let l = tape.log_softmax(c);
            let s = tape.sum(l);
            let g = tape.backward(s).unwrap();
            (g.leaf(a).unwrap().to_vec(), g.leaf(b).unwrap().to_vec())
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert!(a1.iter().zip(&a2).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(b1.iter().zip(&b2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
