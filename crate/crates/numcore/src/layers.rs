use crate::{Graph, NumError, ParamId, ParamStore, Result, Tensor, Var};

/// Affine map `Wᵀx + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, bias: bool) -> Result<Self> {
        let w = store.add_uniform(&format!("{name}.w"), &[n_in, n_out], n_in)?;
        let b = if bias { Some(store.add_uniform(&format!("{name}.b"), &[n_out], n_in)?) } else { None };
        Ok(Linear { w, b, n_in, n_out })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.linear(w, x)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }

    /// Applies the weight (no bias) to every row of `x: [n, in]`.
    pub fn forward_rows(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        g.matmul(x, w)
    }
}

/// Lookup table of `rows` vectors of width `dim`.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize) -> Result<Self> {
        let table = store.add_uniform(name, &[rows, dim], dim)?;
        Ok(Embedding { table, rows, dim })
    }

    pub fn forward(&self, g: &mut Graph, index: usize) -> Result<Var> {
        let t = g.param(self.table);
        g.row(t, index.min(self.rows - 1))
    }
}

/// Hidden and cell vectors of an [`LstmCell`].
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

/// Gated recurrent cell with input, forget and output gates and a tanh
/// candidate. Gate blocks are laid out `[i, f, g, o]` along the output axis.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, hidden: usize) -> Result<Self> {
        let wx = store.add_uniform(&format!("{name}.wx"), &[n_in, 4 * hidden], hidden)?;
        let wh = store.add_uniform(&format!("{name}.wh"), &[hidden, 4 * hidden], hidden)?;
        let b = store.add_uniform(&format!("{name}.b"), &[4 * hidden], hidden)?;
        Ok(LstmCell { wx, wh, b, n_in, hidden })
    }

    pub fn zero_state(&self, g: &mut Graph) -> LstmState {
        LstmState { hidden: g.input(Tensor::zeros(&[self.hidden])), cell: g.input(Tensor::zeros(&[self.hidden])) }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, state: LstmState) -> Result<LstmState> {
        if g.value(x).len() != self.n_in {
            return Err(NumError::shape("lstm input", self.n_in, g.value(x).len()));
        }
        let h = self.hidden;
        let (wx, wh, b) = (g.param(self.wx), g.param(self.wh), g.param(self.b));
        let zx = g.linear(wx, x)?;
        let zh = g.linear(wh, state.hidden)?;
        let z = g.add(zx, zh)?;
        let z = g.add(z, b)?;
        let i = g.slice(z, 0, h)?;
        let f = g.slice(z, h, h)?;
        let c_hat = g.slice(z, 2 * h, h)?;
        let o = g.slice(z, 3 * h, h)?;
        let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
        let c_hat = g.tanh(c_hat);
        let keep = g.mul(f, state.cell)?;
        let write = g.mul(i, c_hat)?;
        let cell = g.add(keep, write)?;
        let squashed = g.tanh(cell);
        let hidden = g.mul(o, squashed)?;
        Ok(LstmState { hidden, cell })
    }
}

/// Bidirectional sequence encoder: one forward and one backward [`LstmCell`],
/// per-position outputs concatenated as `[forward ⊕ backward]`.
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    /// `out_dim` is the width of the concatenated output and must be even.
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, out_dim: usize) -> Result<Self> {
        if !out_dim.is_multiple_of(2) {
            return Err(NumError::shape("BiLstm::new", "even output width", out_dim));
        }
        Ok(BiLstm {
            fwd: LstmCell::new(store, &format!("{name}.fwd"), n_in, out_dim / 2)?,
            bwd: LstmCell::new(store, &format!("{name}.bwd"), n_in, out_dim / 2)?,
        })
    }

    /// Encodes `inputs` into a `[L, out_dim]` matrix.
    pub fn encode(&self, g: &mut Graph, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(NumError::EmptySequence("bidirectional_encode"));
        }
        let mut state = self.fwd.zero_state(g);
        let mut fwd = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.fwd.forward(g, x, state)?;
            fwd.push(state.hidden);
        }
        let mut state = self.bwd.zero_state(g);
        let mut bwd = vec![fwd[0]; inputs.len()];
        for (t, &x) in inputs.iter().enumerate().rev() {
            state = self.bwd.forward(g, x, state)?;
            bwd[t] = state.hidden;
        }
        let rows = fwd.into_iter().zip(bwd).map(|(f, b)| g.concat(&[f, b])).collect::<Result<Vec<_>>>()?;
        g.stack_rows(&rows)
    }
}

/// Multi-head cross-attention with separate query and key/value widths.
///
/// Keys and values are projected without bias, so scaling a key/value row by
/// a constant scales its projected row by the same constant.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_query: usize, d_kv: usize, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(NumError::shape("MultiHeadAttention::new", format!("heads dividing {d_model}"), heads));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), d_query, d_model, true)?,
            k: Linear::new(store, &format!("{name}.k"), d_kv, d_model, false)?,
            v: Linear::new(store, &format!("{name}.v"), d_kv, d_model, false)?,
            out: Linear::new(store, &format!("{name}.out"), d_model, d_model, true)?,
            heads,
        })
    }

    /// Projects a `[N, d_kv]` matrix into keys and values.
    pub fn project_kv(&self, g: &mut Graph, kv: Var) -> Result<(Var, Var)> {
        let k = self.k.forward_rows(g, kv)?;
        let v = self.v.forward_rows(g, kv)?;
        Ok((k, v))
    }

    /// Attends with pre-projected keys and values; returns `(output, raw)`
    /// where `raw` carries the per-head attention weights.
    pub fn attend(&self, g: &mut Graph, query: Var, keys: Var, values: Var) -> Result<(Var, Var)> {
        let q = self.q.forward(g, query)?;
        let heads = g.attention(q, keys, values, self.heads)?;
        let out = self.out.forward(g, heads)?;
        Ok((out, heads))
    }

    pub fn forward(&self, g: &mut Graph, query: Var, kv: Var) -> Result<Var> {
        let (k, v) = self.project_kv(g, kv)?;
        Ok(self.attend(g, query, k, v)?.0)
    }
}
