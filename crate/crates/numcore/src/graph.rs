use std::collections::HashMap;

use crate::{Grads, NumError, ParamId, ParamStore, Result, Tensor, BCE_EPS};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { w: Var, x: Var },
    MatMul { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRowBroadcast { m: Var, v: Var },
    RowScale { m: Var, s: Var },
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Row { m: Var, index: usize },
    StackRows(Vec<Var>),
    MeanRows { m: Var, start: usize, end: usize },
    Reshape(Var),
    Sum(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, weights: Vec<Vec<f64>> },
    SquaredError { pred: Var, target: Vec<f64> },
    Bce { prob: Var, target: Vec<f64> },
    CrossEntropy { scores: Var, target: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of operations for one forward pass.
///
/// Parameters are read from a borrowed [`ParamStore`]; each parameter is
/// copied onto the tape at most once per graph.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn shape_str(t: &Tensor) -> String {
    format!("{:?}", t.shape())
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph { store, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Per-head attention distributions recorded by [`Graph::attention`].
    pub fn attention_weights(&self, v: Var) -> Option<&[Vec<f64>]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.input(Tensor::vector(data))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    /// `Wᵀx` for `W: [in, out]`, `x: [in]`.
    pub fn linear(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wt, xt) = (self.value(w), self.value(x));
        if wt.rank() != 2 || xt.rank() != 1 || wt.shape()[0] != xt.len() {
            return Err(NumError::shape(
                "linear",
                format!("[{}, _] x [{}]", xt.len(), xt.len()),
                format!("{} x {}", shape_str(wt), shape_str(xt)),
            ));
        }
        let (n_in, n_out) = (wt.shape()[0], wt.shape()[1]);
        let mut out = vec![0.0; n_out];
        let wd = wt.data();
        for (i, &xi) in xt.data().iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &wd[i * n_out..(i + 1) * n_out];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += w * xi);
        }
        debug_assert_eq!(wd.len(), n_in * n_out);
        Ok(self.push(Tensor::vector(out), Op::Linear { w, x }))
    }

    /// Matrix product `A[n, k] · B[k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rank() != 2 || bt.rank() != 2 || at.shape()[1] != bt.shape()[0] {
            return Err(NumError::shape("matmul", "[n, k] x [k, m]", format!("{} x {}", shape_str(at), shape_str(bt))));
        }
        let (n, k, m) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
        let mut out = vec![0.0; n * m];
        let (ad, bd) = (at.data(), bt.data());
        for r in 0..n {
            let orow = &mut out[r * m..(r + 1) * m];
            for p in 0..k {
                let a_rp = ad[r * k + p];
                if a_rp == 0.0 {
                    continue;
                }
                orow.iter_mut().zip(&bd[p * m..(p + 1) * m]).for_each(|(o, b)| *o += a_rp * b);
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul { a, b }))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(NumError::shape(op, shape_str(at), shape_str(bt)));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(at.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Sums a non-empty list of same-shaped values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars.split_first().ok_or(NumError::EmptySequence("add_all"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Multiplies every row of `m: [r, c]` elementwise by `v: [c]`.
    pub fn mul_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.rank() != 2 || vt.rank() != 1 || mt.shape()[1] != vt.len() {
            return Err(NumError::shape(
                "mul_row_broadcast",
                "[r, c] and [c]",
                format!("{} and {}", shape_str(mt), shape_str(vt)),
            ));
        }
        let c = vt.len();
        let data = mt.data().iter().enumerate().map(|(i, &x)| x * vt.data()[i % c]).collect();
        let t = Tensor::new(mt.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MulRowBroadcast { m, v }))
    }

    /// Scales row `i` of `m: [r, c]` by `s[i]`.
    pub fn row_scale(&mut self, m: Var, s: Var) -> Result<Var> {
        let (mt, st) = (self.value(m), self.value(s));
        if mt.rank() != 2 || st.rank() != 1 || mt.shape()[0] != st.len() {
            return Err(NumError::shape("row_scale", "[r, c] and [r]", format!("{} and {}", shape_str(mt), shape_str(st))));
        }
        let c = mt.shape()[1];
        let data = mt.data().iter().enumerate().map(|(i, &x)| x * st.data()[i / c]).collect();
        let t = Tensor::new(mt.shape().to_vec(), data)?;
        Ok(self.push(t, Op::RowScale { m, s }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let at = self.value(a);
        let t = Tensor::new(at.shape().to_vec(), at.data().iter().map(|x| x * c).collect()).expect("same shape");
        self.push(t, Op::Scale(a, c))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let at = self.value(a);
        Tensor::new(at.shape().to_vec(), at.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, crate::relu);
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, crate::sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let at = self.value(a);
        if at.rank() != 1 || at.is_empty() {
            return Err(NumError::shape("softmax", "non-empty vector", shape_str(at)));
        }
        let t = Tensor::vector(crate::softmax(at.data()));
        Ok(self.push(t, Op::Softmax(a)))
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let pt = self.value(p);
            if pt.rank() != 1 {
                return Err(NumError::shape("concat", "vector", shape_str(pt)));
            }
            data.extend_from_slice(pt.data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        if xt.rank() != 1 || start + len > xt.len() {
            return Err(NumError::shape("slice", format!("vector of at least {}", start + len), shape_str(xt)));
        }
        let t = Tensor::vector(xt.data()[start..start + len].to_vec());
        Ok(self.push(t, Op::Slice { x, start }))
    }

    /// Row `index` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, m: Var, index: usize) -> Result<Var> {
        let mt = self.value(m);
        if mt.rank() != 2 || index >= mt.shape()[0] {
            return Err(NumError::shape("row", format!("matrix with > {index} rows"), shape_str(mt)));
        }
        let t = Tensor::vector(mt.row(index).to_vec());
        Ok(self.push(t, Op::Row { m, index }))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(NumError::EmptySequence("stack_rows"))?;
        let c = self.value(first).len();
        let mut data = Vec::with_capacity(c * rows.len());
        for &r in rows {
            let rt = self.value(r);
            if rt.rank() != 1 || rt.len() != c {
                return Err(NumError::shape("stack_rows", format!("[{c}]"), shape_str(rt)));
            }
            data.extend_from_slice(rt.data());
        }
        let t = Tensor::new(vec![rows.len(), c], data)?;
        Ok(self.push(t, Op::StackRows(rows.to_vec())))
    }

    /// Mean of rows `start..end` of a matrix.
    pub fn mean_rows(&mut self, m: Var, start: usize, end: usize) -> Result<Var> {
        let mt = self.value(m);
        if mt.rank() != 2 || start >= end || end > mt.shape()[0] {
            return Err(NumError::shape("mean_rows", format!("matrix with rows {start}..{end}"), shape_str(mt)));
        }
        let c = mt.shape()[1];
        let mut out = vec![0.0; c];
        for r in start..end {
            out.iter_mut().zip(mt.row(r)).for_each(|(o, x)| *o += x);
        }
        let inv = 1.0 / (end - start) as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(Tensor::vector(out), Op::MeanRows { m, start, end }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let at = self.value(a);
        let t = Tensor::new(shape.to_vec(), at.data().to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Scaled dot-product attention split over `heads`.
    ///
    /// `q: [p]`, `k, v: [n, p]`; each head sees a contiguous `p / heads` slice.
    /// Returns the concatenated per-head outputs, shape `[p]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let p = qt.len();
        if qt.rank() != 1 || kt.rank() != 2 || vt.shape() != kt.shape() || kt.shape()[1] != p {
            return Err(NumError::shape(
                "attention",
                format!("q [{p}], k/v [n, {p}]"),
                format!("q {}, k {}, v {}", shape_str(qt), shape_str(kt), shape_str(vt)),
            ));
        }
        if heads == 0 || p % heads != 0 {
            return Err(NumError::shape("attention", format!("heads dividing {p}"), heads));
        }
        let n = kt.shape()[0];
        if n == 0 {
            return Err(NumError::EmptySequence("attention"));
        }
        let dh = p / heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; p];
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = &qt.data()[h * dh..(h + 1) * dh];
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    let kj = &kt.row(j)[h * dh..(h + 1) * dh];
                    qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt
                })
                .collect();
            let w = crate::softmax(&scores);
            let oh = &mut out[h * dh..(h + 1) * dh];
            for (j, &wj) in w.iter().enumerate() {
                oh.iter_mut().zip(&vt.row(j)[h * dh..(h + 1) * dh]).for_each(|(o, x)| *o += wj * x);
            }
            weights.push(w);
        }
        Ok(self.push(Tensor::vector(out), Op::Attention { q, k, v, heads, weights }))
    }

    /// `Σ (pred - target)²`.
    pub fn squared_error(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pt = self.value(pred);
        if pt.len() != target.len() {
            return Err(NumError::shape("squared_error", target.len(), pt.len()));
        }
        let s = pt.data().iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
        Ok(self.push(Tensor::scalar(s), Op::SquaredError { pred, target: target.to_vec() }))
    }

    /// Summed binary cross-entropy with probabilities clamped to `[ε, 1-ε]`.
    pub fn bce(&mut self, prob: Var, target: &[f64]) -> Result<Var> {
        let pt = self.value(prob);
        if pt.len() != target.len() {
            return Err(NumError::shape("bce", target.len(), pt.len()));
        }
        let s = pt
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Bce { prob, target: target.to_vec() }))
    }

    /// `-log softmax(scores)[target]`. Entries equal to `-inf` are masked out.
    pub fn cross_entropy(&mut self, scores: Var, target: usize) -> Result<Var> {
        let st = self.value(scores);
        if st.rank() != 1 || target >= st.len() {
            return Err(NumError::shape("cross_entropy", format!("vector longer than {target}"), shape_str(st)));
        }
        let probs = crate::softmax(st.data());
        let max = st.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + st.data().iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
        let loss = lse - st.data()[target];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { scores, target, probs }))
    }

    /// Reverse-mode sweep from a scalar `root`; returns parameter gradients.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(NumError::NotScalarRoot(rt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut out = Grads::zeros_like(self.store);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::Linear { w, x } => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let n_out = wt.shape()[1];
                    let wd = wt.data();
                    acc(*x, &mut |dx| {
                        for (i, d) in dx.iter_mut().enumerate() {
                            *d += wd[i * n_out..(i + 1) * n_out].iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
                        }
                    });
                    acc(*w, &mut |dw| {
                        for (i, &xi) in xt.data().iter().enumerate() {
                            if xi == 0.0 {
                                continue;
                            }
                            dw[i * n_out..(i + 1) * n_out].iter_mut().zip(&g).for_each(|(d, gj)| *d += xi * gj);
                        }
                    });
                }
                Op::MatMul { a, b } => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
                    let (ad, bd) = (at.data(), bt.data());
                    acc(*a, &mut |da| {
                        for r in 0..n {
                            let grow = &g[r * m..(r + 1) * m];
                            for p in 0..k {
                                da[r * k + p] += grow.iter().zip(&bd[p * m..(p + 1) * m]).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    acc(*b, &mut |db| {
                        for r in 0..n {
                            let grow = &g[r * m..(r + 1) * m];
                            for p in 0..k {
                                let a_rp = ad[r * k + p];
                                if a_rp == 0.0 {
                                    continue;
                                }
                                db[p * m..(p + 1) * m].iter_mut().zip(grow).for_each(|(d, x)| *d += a_rp * x);
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(d, x)| *d += x));
                    acc(*b, &mut |d| d.iter_mut().zip(&g).for_each(|(d, x)| *d += x));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(d, x)| *d += x));
                    acc(*b, &mut |d| d.iter_mut().zip(&g).for_each(|(d, x)| *d -= x));
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    acc(*a, &mut |d| d.iter_mut().zip(&g).zip(bd).for_each(|((d, x), y)| *d += x * y));
                    acc(*b, &mut |d| d.iter_mut().zip(&g).zip(ad).for_each(|((d, x), y)| *d += x * y));
                }
                Op::MulRowBroadcast { m, v } => {
                    let (md, vd) = (self.data(*m), self.data(*v));
                    let c = vd.len();
                    acc(*m, &mut |d| d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * vd[i % c]));
                    acc(*v, &mut |d| {
                        for (i, (&gi, &mi)) in g.iter().zip(md).enumerate() {
                            d[i % c] += gi * mi;
                        }
                    });
                }
                Op::RowScale { m, s } => {
                    let (md, sd) = (self.data(*m), self.data(*s));
                    let c = md.len() / sd.len().max(1);
                    acc(*m, &mut |d| d.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * sd[i / c]));
                    acc(*s, &mut |d| {
                        for (i, (&gi, &mi)) in g.iter().zip(md).enumerate() {
                            d[i / c] += gi * mi;
                        }
                    });
                }
                Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(d, x)| *d += c * x)),
                Op::Relu(a) => {
                    let y = node.value.data();
                    acc(*a, &mut |d| {
                        d.iter_mut().zip(&g).zip(y).for_each(|((d, x), y)| {
                            if *y > 0.0 {
                                *d += x
                            }
                        })
                    });
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    acc(*a, &mut |d| d.iter_mut().zip(&g).zip(y).for_each(|((d, x), y)| *d += x * y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    acc(*a, &mut |d| d.iter_mut().zip(&g).zip(y).for_each(|((d, x), y)| *d += x * (1.0 - y * y)));
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: f64 = g.iter().zip(y).map(|(x, y)| x * y).sum();
                    acc(*a, &mut |d| d.iter_mut().zip(&g).zip(y).for_each(|((d, x), y)| *d += y * (x - dot)));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        acc(p, &mut |d| d.iter_mut().zip(&g[off..off + n]).for_each(|(d, x)| *d += x));
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let s = *start;
                    acc(*x, &mut |d| d[s..s + g.len()].iter_mut().zip(&g).for_each(|(d, x)| *d += x));
                }
                Op::Row { m, index } => {
                    let c = g.len();
                    let r = *index;
                    acc(*m, &mut |d| d[r * c..(r + 1) * c].iter_mut().zip(&g).for_each(|(d, x)| *d += x));
                }
                Op::StackRows(rows) => {
                    let c = node.value.cols();
                    for (r, &v) in rows.iter().enumerate() {
                        acc(v, &mut |d| d.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(d, x)| *d += x));
                    }
                }
                Op::MeanRows { m, start, end } => {
                    let c = g.len();
                    let inv = 1.0 / (end - start) as f64;
                    acc(*m, &mut |d| {
                        for r in *start..*end {
                            d[r * c..(r + 1) * c].iter_mut().zip(&g).for_each(|(d, x)| *d += x * inv);
                        }
                    });
                }
                Op::Reshape(a) => acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(d, x)| *d += x)),
                Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
                Op::Attention { q, k, v, heads, weights } => {
                    let (qt, kt, vt) = (self.value(*q), self.value(*k), self.value(*v));
                    let p = qt.len();
                    let n = kt.shape()[0];
                    let dh = p / heads;
                    let inv_sqrt = 1.0 / (dh as f64).sqrt();
                    let mut dq = vec![0.0; p];
                    let mut dk = vec![0.0; n * p];
                    let mut dv = vec![0.0; n * p];
                    for (h, w) in weights.iter().enumerate() {
                        let span = h * dh..(h + 1) * dh;
                        let gh = &g[span.clone()];
                        let dw: Vec<f64> =
                            (0..n).map(|j| gh.iter().zip(&vt.row(j)[span.clone()]).map(|(a, b)| a * b).sum()).collect();
                        let wdw: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            let wj = w[j];
                            let ds = wj * (dw[j] - wdw) * inv_sqrt;
                            let row = j * p;
                            for (c, idx) in span.clone().enumerate() {
                                dv[row + idx] += wj * gh[c];
                                dq[idx] += ds * kt.data()[row + idx];
                                dk[row + idx] += ds * qt.data()[idx];
                            }
                        }
                    }
                    acc(*q, &mut |d| d.iter_mut().zip(&dq).for_each(|(d, x)| *d += x));
                    acc(*k, &mut |d| d.iter_mut().zip(&dk).for_each(|(d, x)| *d += x));
                    acc(*v, &mut |d| d.iter_mut().zip(&dv).for_each(|(d, x)| *d += x));
                }
                Op::SquaredError { pred, target } => {
                    let pd = self.data(*pred);
                    acc(*pred, &mut |d| d.iter_mut().zip(pd).zip(target).for_each(|((d, p), t)| *d += 2.0 * (p - t) * g[0]));
                }
                Op::Bce { prob, target } => {
                    let pd = self.data(*prob);
                    acc(*prob, &mut |d| {
                        for ((d, &p), &t) in d.iter_mut().zip(pd).zip(target) {
                            if (BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                                *d += g[0] * (-t / p + (1.0 - t) / (1.0 - p));
                            }
                        }
                    });
                }
                Op::CrossEntropy { scores, target, probs } => {
                    acc(*scores, &mut |d| {
                        for (i, (d, &p)) in d.iter_mut().zip(probs).enumerate() {
                            let y = if i == *target { 1.0 } else { 0.0 };
                            *d += g[0] * (p - y);
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}
