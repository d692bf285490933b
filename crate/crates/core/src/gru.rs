//! Gated recurrent unit (reset and update gates) and the recurrent encoder.
//!
//! ```text
//! r  = σ(W_r x + U_r h + b_r)
//! z  = σ(W_z x + U_z h + b_z)
//! h~ = tanh(W x + U (r ⊙ h) + b)
//! h' = z ⊙ h + (1 − z) ⊙ h~
//! ```

use crate::corpus::TokenId;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{orthogonal_init, sigmoid, Matrix, Rng};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Standard deviation for non-square weights and embeddings.
pub const INIT_SIGMA: f64 = 0.01;
/// Spectral radius of recurrent transition matrices.
pub const GRU_RADIUS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T> {
    pub w: Matrix<T>,
    pub w_r: Matrix<T>,
    pub w_z: Matrix<T>,
    pub u: Matrix<T>,
    pub u_r: Matrix<T>,
    pub u_z: Matrix<T>,
    pub b: Matrix<T>,
    pub b_r: Matrix<T>,
    pub b_z: Matrix<T>,
}

impl<T: Scalar> GruParams<T> {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            w: Matrix::zeros(d_h, d_in),
            w_r: Matrix::zeros(d_h, d_in),
            w_z: Matrix::zeros(d_h, d_in),
            u: Matrix::zeros(d_h, d_h),
            u_r: Matrix::zeros(d_h, d_h),
            u_z: Matrix::zeros(d_h, d_h),
            b: Matrix::column(d_h),
            b_r: Matrix::column(d_h),
            b_z: Matrix::column(d_h),
        }
    }

    /// Orthogonal (radius 1) transitions, N(0, 0.01²) input weights, zero biases.
    pub fn init(d_in: usize, d_h: usize, rng: &mut Rng) -> Result<Self> {
        Self::init_with_sigma(d_in, d_h, INIT_SIGMA, rng)
    }

    /// As [`init`](Self::init) with a different Gaussian scale.
    pub fn init_with_sigma(d_in: usize, d_h: usize, sigma: f64, rng: &mut Rng) -> Result<Self> {
        let sigma = T::lit(sigma);
        let radius = T::lit(GRU_RADIUS);
        Ok(Self {
            w: Matrix::gaussian(d_h, d_in, sigma, rng),
            w_r: Matrix::gaussian(d_h, d_in, sigma, rng),
            w_z: Matrix::gaussian(d_h, d_in, sigma, rng),
            u: orthogonal_init(d_h, radius, rng)?,
            u_r: orthogonal_init(d_h, radius, rng)?,
            u_z: orthogonal_init(d_h, radius, rng)?,
            b: Matrix::column(d_h),
            b_r: Matrix::column(d_h),
            b_z: Matrix::column(d_h),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    /// Single step without caching.
    pub fn step(&self, h_prev: &[T], x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(h_prev, x, None)?.h)
    }

    /// Step with optional extra pre-activation terms, keeping what the
    /// backward pass needs.
    pub fn forward(&self, h_prev: &[T], x: &[T], extra: Option<&GateInputs<'_, T>>) -> Result<GruCache<T>> {
        let d_h = self.hidden_dim();
        check_dim("gru_step h_prev", d_h, h_prev.len())?;
        check_dim("gru_step x", self.input_dim(), x.len())?;
        if let Some(e) = extra {
            check_dim("gru_step candidate injection", d_h, e.candidate.len())?;
            check_dim("gru_step reset injection", d_h, e.reset.len())?;
            check_dim("gru_step update injection", d_h, e.update.len())?;
        }

        let mut a_r = self.b_r.as_slice().to_vec();
        self.w_r.gemv_acc(x, &mut a_r);
        self.u_r.gemv_acc(h_prev, &mut a_r);
        let mut a_z = self.b_z.as_slice().to_vec();
        self.w_z.gemv_acc(x, &mut a_z);
        self.u_z.gemv_acc(h_prev, &mut a_z);
        if let Some(e) = extra {
            add_into(&mut a_r, e.reset);
            add_into(&mut a_z, e.update);
        }
        let r: Vec<T> = a_r.into_iter().map(sigmoid).collect();
        let z: Vec<T> = a_z.into_iter().map(sigmoid).collect();

        let rh: Vec<T> = r.iter().zip(h_prev).map(|(&r, &h)| r * h).collect();
        let mut a_c = self.b.as_slice().to_vec();
        self.w.gemv_acc(x, &mut a_c);
        self.u.gemv_acc(&rh, &mut a_c);
        if let Some(e) = extra {
            add_into(&mut a_c, e.candidate);
        }
        let cand: Vec<T> = a_c.into_iter().map(T::tanh).collect();

        let h = (0..d_h)
            .map(|i| z[i] * h_prev[i] + (T::one() - z[i]) * cand[i])
            .collect();
        Ok(GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            z,
            rh,
            cand,
            h,
        })
    }

    /// Reverse-mode derivative of one step; parameter gradients are added
    /// into `grads`.
    pub fn backward_into(&self, cache: &GruCache<T>, dh: &[T], grads: &mut GruParams<T>) -> Result<GruInputGrads<T>> {
        let d_h = self.hidden_dim();
        check_dim("gru_backward output gradient", d_h, dh.len())?;
        if cache.h_prev.len() != d_h || cache.x.len() != self.input_dim() || cache.h.len() != d_h {
            return Err(Error::InvalidArgument(
                "gru_backward: cache does not match parameter shapes".into(),
            ));
        }
        let one = T::one();
        let mut dh_prev = vec![T::zero(); d_h];
        let mut dx = vec![T::zero(); self.input_dim()];
        let mut da_c = vec![T::zero(); d_h];
        let mut da_z = vec![T::zero(); d_h];
        for i in 0..d_h {
            let z = cache.z[i];
            let c = cache.cand[i];
            dh_prev[i] = dh[i] * z;
            da_z[i] = dh[i] * (cache.h_prev[i] - c) * z * (one - z);
            da_c[i] = dh[i] * (one - z) * (one - c * c);
        }

        grads.w.add_outer(&da_c, &cache.x);
        grads.u.add_outer(&da_c, &cache.rh);
        grads.b.add_to_column(&da_c);
        self.w.gemv_t_acc(&da_c, &mut dx);
        let mut drh = vec![T::zero(); d_h];
        self.u.gemv_t_acc(&da_c, &mut drh);

        let mut da_r = vec![T::zero(); d_h];
        for i in 0..d_h {
            let r = cache.r[i];
            dh_prev[i] += drh[i] * r;
            da_r[i] = drh[i] * cache.h_prev[i] * r * (one - r);
        }

        grads.w_r.add_outer(&da_r, &cache.x);
        grads.u_r.add_outer(&da_r, &cache.h_prev);
        grads.b_r.add_to_column(&da_r);
        self.w_r.gemv_t_acc(&da_r, &mut dx);
        self.u_r.gemv_t_acc(&da_r, &mut dh_prev);

        grads.w_z.add_outer(&da_z, &cache.x);
        grads.u_z.add_outer(&da_z, &cache.h_prev);
        grads.b_z.add_to_column(&da_z);
        self.w_z.gemv_t_acc(&da_z, &mut dx);
        self.u_z.gemv_t_acc(&da_z, &mut dh_prev);

        Ok(GruInputGrads {
            dh_prev,
            dx,
            d_candidate: da_c,
            d_reset: da_r,
            d_update: da_z,
        })
    }

    /// Fresh parameter gradients plus gradients w.r.t. `h_prev` and `x`.
    pub fn backward(&self, cache: &GruCache<T>, dh: &[T]) -> Result<(GruParams<T>, Vec<T>, Vec<T>)> {
        let mut grads = self.zeros_like();
        let g = self.backward_into(cache, dh, &mut grads)?;
        Ok((grads, g.dh_prev, g.dx))
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Scalar> ParamSet<T> for GruParams<T> {
    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        out.push((format!("{p}W"), &self.w));
        out.push((format!("{p}W_r"), &self.w_r));
        out.push((format!("{p}W_z"), &self.w_z));
        out.push((format!("{p}U"), &self.u));
        out.push((format!("{p}U_r"), &self.u_r));
        out.push((format!("{p}U_z"), &self.u_z));
        out.push((format!("{p}b"), &self.b));
        out.push((format!("{p}b_r"), &self.b_r));
        out.push((format!("{p}b_z"), &self.b_z));
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        out.push((format!("{p}W"), &mut self.w));
        out.push((format!("{p}W_r"), &mut self.w_r));
        out.push((format!("{p}W_z"), &mut self.w_z));
        out.push((format!("{p}U"), &mut self.u));
        out.push((format!("{p}U_r"), &mut self.u_r));
        out.push((format!("{p}U_z"), &mut self.u_z));
        out.push((format!("{p}b"), &mut self.b));
        out.push((format!("{p}b_r"), &mut self.b_r));
        out.push((format!("{p}b_z"), &mut self.b_z));
    }
}

/// Additive pre-activation terms for the candidate, reset and update paths.
/// The decoder uses these to inject the context vector.
#[derive(Clone, Copy, Debug)]
pub struct GateInputs<'a, T> {
    pub candidate: &'a [T],
    pub reset: &'a [T],
    pub update: &'a [T],
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub r: Vec<T>,
    pub z: Vec<T>,
    pub rh: Vec<T>,
    pub cand: Vec<T>,
    pub h: Vec<T>,
}

/// Gradients flowing out of one step. `d_*` are gradients w.r.t. the
/// candidate, reset and update pre-activations.
#[derive(Clone, Debug)]
pub struct GruInputGrads<T> {
    pub dh_prev: Vec<T>,
    pub dx: Vec<T>,
    pub d_candidate: Vec<T>,
    pub d_reset: Vec<T>,
    pub d_update: Vec<T>,
}

/// Word embeddings; row `i` embeds token id `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    pub table: Matrix<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        Self {
            table: Matrix::zeros(vocab, dim),
        }
    }

    pub fn init(vocab: usize, dim: usize, rng: &mut Rng) -> Self {
        Self::init_with_sigma(vocab, dim, INIT_SIGMA, rng)
    }

    pub fn init_with_sigma(vocab: usize, dim: usize, sigma: f64, rng: &mut Rng) -> Self {
        Self {
            table: Matrix::gaussian(vocab, dim, T::lit(sigma), rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn lookup(&self, id: TokenId) -> Result<&[T]> {
        if (id as usize) < self.table.rows() {
            Ok(self.table.row(id as usize))
        } else {
            Err(Error::TokenOutOfRange {
                id,
                size: self.table.rows(),
            })
        }
    }

    pub fn accumulate(&mut self, id: TokenId, grad: &[T]) {
        add_into(self.table.row_mut(id as usize), grad);
    }
}

impl<T: Scalar> ParamSet<T> for EmbeddingTable<T> {
    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        out.push((format!("{p}embedding"), &self.table));
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        out.push((format!("{p}embedding"), &mut self.table));
    }
}

/// Recurrent encoder: fold the GRU over embedded source tokens from a zero
/// state and return the final hidden state as the context.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnEncoder<T> {
    pub gru: GruParams<T>,
    pub embedding: EmbeddingTable<T>,
}

/// Per-step caches of one encoder pass.
#[derive(Clone, Debug)]
pub struct RnnTrace<T> {
    pub ids: Vec<TokenId>,
    pub steps: Vec<GruCache<T>>,
}

impl<T: Scalar> RnnTrace<T> {
    pub fn context(&self) -> &[T] {
        &self.steps.last().expect("nonempty trace").h
    }
}

impl<T: Scalar> RnnEncoder<T> {
    pub fn init(vocab: usize, d_emb: usize, d_h: usize, rng: &mut Rng) -> Result<Self> {
        Self::init_with_sigma(vocab, d_emb, d_h, INIT_SIGMA, rng)
    }

    pub fn init_with_sigma(vocab: usize, d_emb: usize, d_h: usize, sigma: f64, rng: &mut Rng) -> Result<Self> {
        let embedding = EmbeddingTable::init_with_sigma(vocab, d_emb, sigma, rng);
        let gru = GruParams::init_with_sigma(d_emb, d_h, sigma, rng)?;
        Ok(Self { gru, embedding })
    }

    pub fn zeros(vocab: usize, d_emb: usize, d_h: usize) -> Self {
        Self {
            gru: GruParams::zeros(d_emb, d_h),
            embedding: EmbeddingTable::zeros(vocab, d_emb),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn encode(&self, source: &[TokenId]) -> Result<Vec<T>> {
        if source.is_empty() {
            return Err(Error::Empty("source sequence"));
        }
        let mut h = vec![T::zero(); self.gru.hidden_dim()];
        for &id in source {
            h = self.gru.step(&h, self.embedding.lookup(id)?)?;
        }
        Ok(h)
    }

    pub fn forward(&self, source: &[TokenId]) -> Result<RnnTrace<T>> {
        if source.is_empty() {
            return Err(Error::Empty("source sequence"));
        }
        let mut steps: Vec<GruCache<T>> = Vec::with_capacity(source.len());
        let zero = vec![T::zero(); self.gru.hidden_dim()];
        for &id in source {
            let h_prev = steps.last().map_or(&zero[..], |c| &c.h[..]);
            let cache = self.gru.forward(h_prev, self.embedding.lookup(id)?, None)?;
            steps.push(cache);
        }
        Ok(RnnTrace {
            ids: source.to_vec(),
            steps,
        })
    }

    /// Backpropagation through time from a context gradient.
    pub fn backward_into(&self, trace: &RnnTrace<T>, d_context: &[T], grads: &mut RnnEncoder<T>) -> Result<()> {
        let mut dh = d_context.to_vec();
        for (cache, &id) in trace.steps.iter().zip(&trace.ids).rev() {
            let g = self.gru.backward_into(cache, &dh, &mut grads.gru)?;
            grads.embedding.accumulate(id, &g.dx);
            dh = g.dh_prev;
        }
        Ok(())
    }
}

impl<T: Scalar> ParamSet<T> for RnnEncoder<T> {
    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.embedding.collect(p, out);
        self.gru.collect(&format!("{p}gru."), out);
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        self.embedding.collect_mut(p, out);
        self.gru.collect_mut(&format!("{p}gru."), out);
    }
}
