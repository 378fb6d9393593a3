use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How two operand shapes combine under leading-axis broadcasting.
#[derive(Clone, Copy)]
enum Bcast {
    Same,
    /// rhs shape is a proper suffix of lhs shape
    Rhs,
    /// lhs shape is a proper suffix of rhs shape
    Lhs,
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn broadcast_kind(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Bcast> {
    if lhs == rhs {
        Ok(Bcast::Same)
    } else if is_suffix(rhs, lhs) {
        Ok(Bcast::Rhs)
    } else if is_suffix(lhs, rhs) {
        Ok(Bcast::Lhs)
    } else {
        Err(Error::shape(op, lhs, rhs))
    }
}

/// Sums `g` (length a multiple of `n`) down to length `n`.
fn reduce_to<S: Scalar>(g: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n];
    for chunk in g.chunks(n) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

/// (outer, axis, inner) split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_axis(t_shape: &[usize]) -> (usize, usize) {
    let n = *t_shape.last().unwrap_or(&1);
    (numel(t_shape) / n.max(1), n)
}

/// `c[m,n] += a[m,k] * b[k,n]`, all row-major.
fn gemm<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

fn transpose_buf<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl<S: Scalar> Tensor<S> {
    fn binary(
        &self,
        other: &Tensor<S>,
        op: &'static str,
        f: impl Fn(S, S) -> S,
        // (grad_out, a, b) -> (da, db) element-wise partials
        df: impl Fn(S, S, S) -> (S, S) + Send + Sync + 'static,
    ) -> Result<Tensor<S>> {
        let kind = broadcast_kind(op, self.shape(), other.shape())?;
        let (a, b) = (self.data(), other.data());
        let (na, nb) = (a.len(), b.len());
        let (out_shape, n) = match kind {
            Bcast::Same | Bcast::Rhs => (self.shape().to_vec(), na),
            Bcast::Lhs => (other.shape().to_vec(), nb),
        };
        let data: Vec<S> = (0..n).map(|i| f(a[i % na], b[i % nb])).collect();
        drop((a, b));
        let (lhs, rhs) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            op,
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let (a, b) = (lhs.data(), rhs.data());
                let (na, nb) = (a.len(), b.len());
                let mut da = vec![S::zero(); g.len()];
                let mut db = vec![S::zero(); g.len()];
                for i in 0..g.len() {
                    let (x, y) = df(g[i], a[i % na], b[i % nb]);
                    da[i] = x;
                    db[i] = y;
                }
                let da = needs[0].then(|| {
                    if na == g.len() {
                        da
                    } else {
                        reduce_to(&da, na)
                    }
                });
                let db = needs[1].then(|| {
                    if nb == g.len() {
                        db
                    } else {
                        reduce_to(&db, nb)
                    }
                });
                vec![da, db]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    /// Element-wise product.
    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    /// Element-wise quotient; any zero divisor is a domain error.
    pub fn div(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if other.data().iter().any(|&v| v == S::zero()) {
            return Err(Error::domain("div", "division by zero"));
        }
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |g, a, b| (g / b, -g * a / (b * b)),
        )
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(S) -> S,
        // (grad_out, input, output) -> grad_in
        df: impl Fn(S, S, S) -> S + Send + Sync + 'static,
    ) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        let out = data.clone();
        Tensor::from_op(
            op,
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _| {
                let x = input.data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .zip(&out)
                        .map(|((&g, &x), &y)| df(g, x, y))
                        .collect(),
                )]
            },
        )
    }

    pub fn neg(&self) -> Tensor<S> {
        self.unary("neg", |x| -x, |g, _, _| -g)
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        self.unary("scale", move |x| x * c, move |g, _, _| g * c)
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        self.unary("add_scalar", move |x| x + c, |g, _, _| g)
    }

    pub fn exp(&self) -> Tensor<S> {
        self.unary("exp", |x| x.exp(), |g, _, y| g * y)
    }

    /// Natural log; non-positive inputs are a domain error.
    pub fn log(&self) -> Result<Tensor<S>> {
        if let Some(pos) = self.data().iter().position(|&v| !(v > S::zero())) {
            return Err(Error::domain(
                "log",
                format!("non-positive input at flat index {pos}"),
            ));
        }
        Ok(self.unary("log", |x| x.ln(), |g, x, _| g / x))
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        self.unary("sigmoid", sigmoid, |g, _, y| g * y * (S::one() - y))
    }

    /// `log σ(x)`, stable for large |x|.
    pub fn log_sigmoid(&self) -> Tensor<S> {
        self.unary(
            "log_sigmoid",
            |x| -softplus(-x),
            |g, x, _| g * (S::one() - sigmoid(x)),
        )
    }

    pub fn tanh(&self) -> Tensor<S> {
        self.unary("tanh", |x| x.tanh(), |g, _, y| g * (S::one() - y * y))
    }

    pub fn relu(&self) -> Tensor<S> {
        self.unary(
            "relu",
            |x| if x > S::zero() { x } else { S::zero() },
            |g, x, _| if x > S::zero() { g } else { S::zero() },
        )
    }

    pub fn square(&self) -> Tensor<S> {
        self.unary("square", |x| x * x, |g, x, _| g * (x + x))
    }

    /// 2-D matrix product `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(Error::shape("matmul", ls, rs));
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let mut data = vec![S::zero(); m * n];
        gemm(&self.data(), &other.data(), &mut data, m, k, n);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            data,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let da = needs[0].then(|| {
                    // dA = G Bᵀ
                    let bt = transpose_buf(&b.data(), k, n);
                    let mut da = vec![S::zero(); m * k];
                    gemm(g, &bt, &mut da, m, n, k);
                    da
                });
                let db = needs[1].then(|| {
                    // dB = Aᵀ G
                    let at = transpose_buf(&a.data(), m, k);
                    let mut db = vec![S::zero(); k * n];
                    gemm(&at, g, &mut db, k, m, n);
                    db
                });
                vec![da, db]
            },
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Tensor<S>> {
        if self.rank() != 2 {
            return Err(Error::shape("transpose", self.shape(), &[]));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = transpose_buf(&self.data(), r, c);
        Ok(Tensor::from_op(
            "transpose",
            data,
            vec![c, r],
            vec![self.clone()],
            move |g, _| vec![Some(transpose_buf(g, c, r))],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape("concat", first.shape(), &[axis]));
        }
        for p in &parts[1..] {
            let ok = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        {
            let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (g, &s) in guards.iter().zip(&sizes) {
                    data.extend_from_slice(&g[o * s * inner..(o + 1) * s * inner]);
                }
            }
        }
        Ok(Tensor::from_op(
            "concat",
            data,
            shape,
            parts.to_vec(),
            move |g, needs| {
                let mut grads: Vec<Option<Vec<S>>> = needs
                    .iter()
                    .zip(&sizes)
                    .map(|(&need, &s)| need.then(|| Vec::with_capacity(outer * s * inner)))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (slot, &s) in grads.iter_mut().zip(&sizes) {
                        let len = s * inner;
                        if let Some(buf) = slot.as_mut() {
                            buf.extend_from_slice(&g[off..off + len]);
                        }
                        off += len;
                    }
                }
                grads
            },
        ))
    }

    /// Sub-range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() || start >= end || end > self.shape()[axis] {
            return Err(Error::domain(
                "slice",
                format!(
                    "range {start}..{end} on axis {axis} of shape {:?}",
                    self.shape()
                ),
            ));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        {
            let src = self.data();
            for o in 0..outer {
                let base = o * len * inner;
                data.extend_from_slice(&src[base + start * inner..base + end * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = width;
        let full = self.numel();
        Ok(Tensor::from_op(
            "slice",
            data,
            shape,
            vec![self.clone()],
            move |g, _| {
                let mut dx = vec![S::zero(); full];
                for o in 0..outer {
                    let base = o * len * inner;
                    dx[base + start * inner..base + end * inner]
                        .copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Row gather from a `(vocab, dim)` table: returns `(ids.len(), dim)`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor<S>> {
        if self.rank() != 2 {
            return Err(Error::shape("embedding", self.shape(), &[ids.len()]));
        }
        if ids.is_empty() {
            return Err(Error::domain("embedding", "empty id list"));
        }
        let (vocab, dim) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                size: vocab,
            });
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        {
            let table = self.data();
            for &i in ids {
                data.extend_from_slice(&table[i * dim..(i + 1) * dim]);
            }
        }
        let ids = ids.to_vec();
        Ok(Tensor::from_op(
            "embedding",
            data,
            vec![ids.len(), dim],
            vec![self.clone()],
            move |g, _| {
                let mut dt = vec![S::zero(); vocab * dim];
                for (r, &i) in ids.iter().enumerate() {
                    for (d, &v) in dt[i * dim..(i + 1) * dim]
                        .iter_mut()
                        .zip(&g[r * dim..(r + 1) * dim])
                    {
                        *d += v;
                    }
                }
                vec![Some(dt)]
            },
        ))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<S> {
        let s: S = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![s],
            Vec::new(),
            vec![self.clone()],
            move |g, _| vec![Some(vec![g[0]; n])],
        )
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = S::from_usize_lossy(self.numel());
        self.sum().scale(S::one() / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(Error::shape("sum_axis", self.shape(), &[axis]));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let mut data = vec![S::zero(); outer * inner];
        {
            let src = self.data();
            for o in 0..outer {
                for a in 0..len {
                    let base = (o * len + a) * inner;
                    for i in 0..inner {
                        data[o * inner + i] += src[base + i];
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            "sum_axis",
            data,
            shape,
            vec![self.clone()],
            move |g, _| {
                let mut dx = vec![S::zero(); outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        dx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(dx)]
            },
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<S>> {
        let n = S::from_usize_lossy(*self.shape().get(axis).unwrap_or(&1));
        Ok(self.sum_axis(axis)?.scale(S::one() / n))
    }

    /// Repeats this tensor over new leading axes so that its shape becomes
    /// `shape`; the current shape must be a suffix of `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if !is_suffix(self.shape(), shape) {
            return Err(Error::shape("broadcast_to", self.shape(), shape));
        }
        let n = self.numel();
        let total = numel(shape);
        let src = self.data();
        let data: Vec<S> = (0..total).map(|i| src[i % n]).collect();
        drop(src);
        Ok(Tensor::from_op(
            "broadcast_to",
            data,
            shape.to_vec(),
            vec![self.clone()],
            move |g, _| vec![Some(reduce_to(g, n))],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor<S> {
        let (rows, n) = last_axis(self.shape());
        let mut data = self.to_vec();
        for r in 0..rows {
            softmax_in_place(&mut data[r * n..(r + 1) * n]);
        }
        let y = data.clone();
        Tensor::from_op(
            "softmax",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _| {
                let mut dx = vec![S::zero(); y.len()];
                for r in 0..rows {
                    let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Tensor<S> {
        let (rows, n) = last_axis(self.shape());
        let mut data = self.to_vec();
        for r in 0..rows {
            log_softmax_in_place(&mut data[r * n..(r + 1) * n]);
        }
        let y = data.clone();
        Tensor::from_op(
            "log_softmax",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _| {
                let mut dx = vec![S::zero(); y.len()];
                for r in 0..rows {
                    let gs: S = g[r * n..(r + 1) * n].iter().copied().sum();
                    for j in 0..n {
                        dx[r * n + j] = g[r * n + j] - y[r * n + j].exp() * gs;
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Normalises the last axis to zero mean and unit variance (no affine
    /// parameters; compose with `mul`/`add` for gain and bias).
    pub fn layer_norm(&self, eps: S) -> Tensor<S> {
        let (rows, n) = last_axis(self.shape());
        let nf = S::from_usize_lossy(n);
        let src = self.data();
        let mut data = vec![S::zero(); src.len()];
        let mut inv_std = vec![S::zero(); rows];
        for r in 0..rows {
            let x = &src[r * n..(r + 1) * n];
            let mu = x.iter().copied().sum::<S>() / nf;
            let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / nf;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                data[r * n + j] = (x[j] - mu) * is;
            }
        }
        drop(src);
        let xhat = data.clone();
        Tensor::from_op(
            "layer_norm",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _| {
                let mut dx = vec![S::zero(); xhat.len()];
                for r in 0..rows {
                    let (xh, gr) = (&xhat[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let gm = gr.iter().copied().sum::<S>() / nf;
                    let gxm = gr.iter().zip(xh).map(|(&a, &b)| a * b).sum::<S>() / nf;
                    for j in 0..n {
                        dx[r * n + j] = inv_std[r] * (gr[j] - gm - xh[j] * gxm);
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Sum of squared entries.
    pub fn sq_norm(&self) -> Tensor<S> {
        self.square().sum()
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != other.shape() {
            return Err(Error::shape("dot", self.shape(), other.shape()));
        }
        Ok(self.mul(other)?.sum())
    }

    /// Cosine similarity of two equally shaped tensors. Zero-norm inputs are a
    /// domain error.
    pub fn cosine_similarity(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "cosine_similarity",
                self.shape(),
                other.shape(),
            ));
        }
        let (a, b) = (self.to_vec(), other.to_vec());
        let na = a.iter().map(|&v| v * v).sum::<S>().sqrt();
        let nb = b.iter().map(|&v| v * v).sum::<S>().sqrt();
        if na == S::zero() || nb == S::zero() {
            return Err(Error::domain("cosine_similarity", "zero-norm operand"));
        }
        let ab: S = a.iter().zip(&b).map(|(&x, &y)| x * y).sum();
        let cos = ab / (na * nb);
        Ok(Tensor::from_op(
            "cosine_similarity",
            vec![cos],
            Vec::new(),
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let g = g[0];
                // d cos / da = b/(|a||b|) - cos * a/|a|^2
                let da = needs[0].then(|| {
                    a.iter()
                        .zip(&b)
                        .map(|(&x, &y)| g * (y / (na * nb) - cos * x / (na * na)))
                        .collect()
                });
                let db = needs[1].then(|| {
                    a.iter()
                        .zip(&b)
                        .map(|(&x, &y)| g * (x / (na * nb) - cos * y / (nb * nb)))
                        .collect()
                });
                vec![da, db]
            },
        ))
    }

    /// Mean cross-entropy of `(n, vocab)` logits against `targets`, skipping
    /// rows whose target equals `ignore_index`. Fails when every row is
    /// ignored.
    pub fn cross_entropy(
        &self,
        targets: &[usize],
        ignore_index: Option<usize>,
    ) -> Result<Tensor<S>> {
        if self.rank() != 2 || self.shape()[0] != targets.len() {
            return Err(Error::shape(
                "cross_entropy",
                self.shape(),
                &[targets.len()],
            ));
        }
        let (rows, n) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = targets.iter().find(|&&t| Some(t) != ignore_index && t >= n) {
            return Err(Error::TokenOutOfRange { id: bad, size: n });
        }
        let active: Vec<bool> = targets.iter().map(|&t| Some(t) != ignore_index).collect();
        let count = active.iter().filter(|&&a| a).count();
        if count == 0 {
            return Err(Error::domain("cross_entropy", "every target is ignored"));
        }
        let mut logp = self.to_vec();
        let mut total = S::zero();
        for r in 0..rows {
            log_softmax_in_place(&mut logp[r * n..(r + 1) * n]);
            if active[r] {
                total -= logp[r * n + targets[r]];
            }
        }
        let cnt = S::from_usize_lossy(count);
        let targets = targets.to_vec();
        Ok(Tensor::from_op(
            "cross_entropy",
            vec![total / cnt],
            Vec::new(),
            vec![self.clone()],
            move |g, _| {
                let scale = g[0] / cnt;
                let mut dx = vec![S::zero(); rows * n];
                for r in 0..rows {
                    if !active[r] {
                        continue;
                    }
                    for j in 0..n {
                        dx[r * n + j] = scale * logp[r * n + j].exp();
                    }
                    dx[r * n + targets[r]] -= scale;
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Picks one entry per row of a 2-D tensor: `out[r] = self[r, cols[r]]`.
    pub fn gather_cols(&self, cols: &[usize]) -> Result<Tensor<S>> {
        if self.rank() != 2 || self.shape()[0] != cols.len() {
            return Err(Error::shape("gather_cols", self.shape(), &[cols.len()]));
        }
        let n = self.shape()[1];
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::TokenOutOfRange { id: bad, size: n });
        }
        let src = self.data();
        let data: Vec<S> = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| src[r * n + c])
            .collect();
        drop(src);
        let cols = cols.to_vec();
        let total = self.numel();
        Ok(Tensor::from_op(
            "gather_cols",
            data,
            vec![cols.len()],
            vec![self.clone()],
            move |g, _| {
                let mut dx = vec![S::zero(); total];
                for (r, &c) in cols.iter().enumerate() {
                    dx[r * n + c] = g[r];
                }
                vec![Some(dx)]
            },
        ))
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut z = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

pub fn log_softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
    for v in row.iter_mut() {
        *v -= lse;
    }
}
