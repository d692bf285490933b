//! Gated recurrent decoder conditioned on a fixed context vector.
//!
//! The context enters once through the initial state, `h_0 = tanh(V c)`, and
//! again at every step as extra pre-activation terms `C c`, `C_r c`, `C_z c`
//! on the candidate, reset and update paths of the GRU. The next-token
//! distribution is `softmax(O h_t + o)`.

use crate::corpus::{TokenId, BOS, EOS};
use crate::error::{check_dim, Error, Result};
use crate::gru::{EmbeddingTable, GateInputs, GruCache, GruParams, INIT_SIGMA};
use crate::numerics::{log_softmax, softmax, Matrix, Rng};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    pub gru: GruParams<T>,
    pub c: Matrix<T>,
    pub c_r: Matrix<T>,
    pub c_z: Matrix<T>,
    pub v: Matrix<T>,
    pub out_w: Matrix<T>,
    pub out_b: Matrix<T>,
    pub embedding: EmbeddingTable<T>,
}

/// Decoder hidden state plus the sentence's context vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState<T> {
    pub hidden: Vec<T>,
    pub context: Vec<T>,
}

struct Injection<T> {
    candidate: Vec<T>,
    reset: Vec<T>,
    update: Vec<T>,
}

impl<T: Scalar> Injection<T> {
    fn inputs(&self) -> GateInputs<'_, T> {
        GateInputs {
            candidate: &self.candidate,
            reset: &self.reset,
            update: &self.update,
        }
    }
}

impl<T: Scalar> DecoderParams<T> {
    pub fn zeros(vocab: usize, d_emb: usize, d_h: usize, d_ctx: usize) -> Self {
        Self {
            gru: GruParams::zeros(d_emb, d_h),
            c: Matrix::zeros(d_h, d_ctx),
            c_r: Matrix::zeros(d_h, d_ctx),
            c_z: Matrix::zeros(d_h, d_ctx),
            v: Matrix::zeros(d_h, d_ctx),
            out_w: Matrix::zeros(vocab, d_h),
            out_b: Matrix::column(vocab),
            embedding: EmbeddingTable::zeros(vocab, d_emb),
        }
    }

    /// GRU initialization for the cell; Gaussian context, init and output
    /// matrices; zero output bias.
    pub fn init(vocab: usize, d_emb: usize, d_h: usize, d_ctx: usize, rng: &mut Rng) -> Result<Self> {
        Self::init_with_sigma(vocab, d_emb, d_h, d_ctx, INIT_SIGMA, rng)
    }

    pub fn init_with_sigma(vocab: usize, d_emb: usize, d_h: usize, d_ctx: usize, sigma: f64, rng: &mut Rng) -> Result<Self> {
        let embedding = EmbeddingTable::init_with_sigma(vocab, d_emb, sigma, rng);
        let gru = GruParams::init_with_sigma(d_emb, d_h, sigma, rng)?;
        let sigma = T::lit(sigma);
        Ok(Self {
            gru,
            c: Matrix::gaussian(d_h, d_ctx, sigma, rng),
            c_r: Matrix::gaussian(d_h, d_ctx, sigma, rng),
            c_z: Matrix::gaussian(d_h, d_ctx, sigma, rng),
            v: Matrix::gaussian(d_h, d_ctx, sigma, rng),
            out_w: Matrix::gaussian(vocab, d_h, sigma, rng),
            out_b: Matrix::column(vocab),
            embedding,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.out_w.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn context_dim(&self) -> usize {
        self.v.cols()
    }

    pub fn init_state(&self, context: &[T]) -> Result<DecoderState<T>> {
        check_dim("decoder init_state context", self.context_dim(), context.len())?;
        let hidden = self.v.matvec(context).into_iter().map(T::tanh).collect();
        Ok(DecoderState {
            hidden,
            context: context.to_vec(),
        })
    }

    fn injection(&self, context: &[T]) -> Injection<T> {
        Injection {
            candidate: self.c.matvec(context),
            reset: self.c_r.matvec(context),
            update: self.c_z.matvec(context),
        }
    }

    fn logits(&self, hidden: &[T]) -> Vec<T> {
        let mut logits = self.out_b.as_slice().to_vec();
        self.out_w.gemv_acc(hidden, &mut logits);
        logits
    }

    /// Consume `y_prev`, return the next state and next-token logits.
    pub fn step(&self, state: &DecoderState<T>, y_prev: TokenId) -> Result<(DecoderState<T>, Vec<T>)> {
        check_dim("decoder step context", self.context_dim(), state.context.len())?;
        let x = self.embedding.lookup(y_prev)?;
        let inj = self.injection(&state.context);
        let cache = self.gru.forward(&state.hidden, x, Some(&inj.inputs()))?;
        let logits = self.logits(&cache.h);
        Ok((
            DecoderState {
                hidden: cache.h,
                context: state.context.clone(),
            },
            logits,
        ))
    }

    /// Step returning log-probabilities instead of logits.
    pub fn step_log_probs(&self, state: &DecoderState<T>, y_prev: TokenId) -> Result<(DecoderState<T>, Vec<T>)> {
        let (s, logits) = self.step(state, y_prev)?;
        Ok((s, log_softmax(&logits)?))
    }

    /// Teacher-forced negative log-likelihood of `target` followed by EOS.
    pub fn sequence_nll(&self, context: &[T], target: &[TokenId]) -> Result<T> {
        if target.is_empty() {
            return Err(Error::Empty("target sequence"));
        }
        let mut outputs = target.to_vec();
        outputs.push(EOS);
        self.masked_nll(context, &outputs, None)
    }

    /// NLL over decoder `outputs` (already EOS-terminated), skipping masked
    /// positions.
    pub fn masked_nll(&self, context: &[T], outputs: &[TokenId], mask: Option<&[bool]>) -> Result<T> {
        let n = active_len(outputs, mask)?;
        let mut state = self.init_state(context)?;
        let inj = self.injection(context);
        let mut loss = T::zero();
        let mut prev = BOS;
        for (t, &y) in outputs[..n].iter().enumerate() {
            let cache = self.gru.forward(&state.hidden, self.embedding.lookup(prev)?, Some(&inj.inputs()))?;
            if mask.is_none_or(|m| m[t]) {
                let lp = log_softmax(&self.logits(&cache.h))?;
                loss -= *lp.get(y as usize).ok_or(Error::TokenOutOfRange {
                    id: y,
                    size: self.vocab_size(),
                })?;
            }
            state.hidden = cache.h;
            prev = y;
        }
        Ok(loss)
    }

    /// NLL and its gradient. Parameter gradients are added into `grads`;
    /// the gradient w.r.t. `context` is returned.
    pub fn nll_backward(
        &self,
        context: &[T],
        outputs: &[TokenId],
        mask: Option<&[bool]>,
        grads: &mut DecoderParams<T>,
    ) -> Result<(T, Vec<T>)> {
        self.nll_backward_fed(context, None, outputs, mask, grads)
    }

    /// [`Self::nll_backward`] with explicit step inputs: `inputs[t]` is fed
    /// at step `t` instead of the teacher-forced `BOS, outputs[..]`.
    pub fn nll_backward_fed(
        &self,
        context: &[T],
        inputs: Option<&[TokenId]>,
        outputs: &[TokenId],
        mask: Option<&[bool]>,
        grads: &mut DecoderParams<T>,
    ) -> Result<(T, Vec<T>)> {
        let n = active_len(outputs, mask)?;
        if let Some(i) = inputs {
            check_dim("decoder inputs", outputs.len(), i.len())?;
        }
        let init = self.init_state(context)?;
        let inj = self.injection(context);
        let d_h = self.hidden_dim();

        let mut caches: Vec<GruCache<T>> = Vec::with_capacity(n);
        let mut fed: Vec<TokenId> = Vec::with_capacity(n);
        let mut d_hidden: Vec<Vec<T>> = Vec::with_capacity(n);
        let mut loss = T::zero();
        let mut last = BOS;
        for (t, &y) in outputs[..n].iter().enumerate() {
            let prev = inputs.map_or(last, |i| i[t]);
            let h_prev = caches.last().map_or(&init.hidden[..], |c| &c.h[..]);
            let cache = self.gru.forward(h_prev, self.embedding.lookup(prev)?, Some(&inj.inputs()))?;
            let mut dh = vec![T::zero(); d_h];
            if mask.is_none_or(|m| m[t]) {
                let mut p = softmax(&self.logits(&cache.h))?;
                let yi = y as usize;
                if yi >= p.len() {
                    return Err(Error::TokenOutOfRange { id: y, size: p.len() });
                }
                loss -= p[yi].ln();
                p[yi] -= T::one();
                grads.out_w.add_outer(&p, &cache.h);
                grads.out_b.add_to_column(&p);
                self.out_w.gemv_t_acc(&p, &mut dh);
            }
            d_hidden.push(dh);
            fed.push(prev);
            caches.push(cache);
            last = y;
        }

        let mut d_cand = vec![T::zero(); d_h];
        let mut d_reset = vec![T::zero(); d_h];
        let mut d_update = vec![T::zero(); d_h];
        let mut carry = vec![T::zero(); d_h];
        for t in (0..n).rev() {
            let dh: Vec<T> = d_hidden[t].iter().zip(&carry).map(|(&a, &b)| a + b).collect();
            let g = self.gru.backward_into(&caches[t], &dh, &mut grads.gru)?;
            grads.embedding.accumulate(fed[t], &g.dx);
            for i in 0..d_h {
                d_cand[i] += g.d_candidate[i];
                d_reset[i] += g.d_reset[i];
                d_update[i] += g.d_update[i];
            }
            carry = g.dh_prev;
        }

        let mut d_context = vec![T::zero(); self.context_dim()];
        grads.c.add_outer(&d_cand, context);
        grads.c_r.add_outer(&d_reset, context);
        grads.c_z.add_outer(&d_update, context);
        self.c.gemv_t_acc(&d_cand, &mut d_context);
        self.c_r.gemv_t_acc(&d_reset, &mut d_context);
        self.c_z.gemv_t_acc(&d_update, &mut d_context);

        let d_pre0: Vec<T> = carry
            .iter()
            .zip(&init.hidden)
            .map(|(&g, &h)| g * (T::one() - h * h))
            .collect();
        grads.v.add_outer(&d_pre0, context);
        self.v.gemv_t_acc(&d_pre0, &mut d_context);
        Ok((loss, d_context))
    }
}

/// Number of leading positions that can influence the loss.
fn active_len(outputs: &[TokenId], mask: Option<&[bool]>) -> Result<usize> {
    if outputs.is_empty() {
        return Err(Error::Empty("decoder outputs"));
    }
    match mask {
        None => Ok(outputs.len()),
        Some(m) => {
            check_dim("decoder mask", outputs.len(), m.len())?;
            Ok(m.iter().rposition(|&b| b).map_or(0, |i| i + 1))
        }
    }
}

impl<T: Scalar> ParamSet<T> for DecoderParams<T> {
    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.embedding.collect(p, out);
        self.gru.collect(&format!("{p}gru."), out);
        out.push((format!("{p}C"), &self.c));
        out.push((format!("{p}C_r"), &self.c_r));
        out.push((format!("{p}C_z"), &self.c_z));
        out.push((format!("{p}V"), &self.v));
        out.push((format!("{p}O"), &self.out_w));
        out.push((format!("{p}o"), &self.out_b));
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        self.embedding.collect_mut(p, out);
        self.gru.collect_mut(&format!("{p}gru."), out);
        out.push((format!("{p}C"), &mut self.c));
        out.push((format!("{p}C_r"), &mut self.c_r));
        out.push((format!("{p}C_z"), &mut self.c_z));
        out.push((format!("{p}V"), &mut self.v));
        out.push((format!("{p}O"), &mut self.out_w));
        out.push((format!("{p}o"), &mut self.out_b));
    }
}
