//! AdaDelta and the minibatch training loop.
//!
//! Batches of epoch `e` come from a permutation seeded by `(seed, e)`, so the
//! whole run is a function of the seed and the number of updates already
//! applied. A checkpoint therefore only needs the parameters, the optimizer
//! accumulators and the update index to resume bit-exactly.

use crate::corpus::{make_batches, Batch, SentencePair, TokenId, BOS, UNK};
use crate::error::{Error, Result};
use crate::model::{ModelDims, Seq2Seq};
use crate::numerics::Rng;
use crate::params::ParamSet;
use crate::scalar::Scalar;

pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;
pub const CLIP_NORM: f64 = 1.0;

const DROPOUT_STREAM: u64 = 0xD50F_0000_0000_0001;
const INIT_STREAM: u64 = u64::MAX;

/// Freshly initialized model for a run seed, Gaussian tensors drawn with
/// standard deviation `sigma`. Batch shuffling uses other streams of the
/// same seed.
pub fn init_model<T: Scalar>(dims: ModelDims, seed: u64, sigma: f64) -> Result<Seq2Seq<T>> {
    Seq2Seq::init_with_sigma(dims, sigma, &mut Rng::derived(seed, INIT_STREAM))
}

/// One AdaDelta step on flat slices. All four slices must have equal length.
pub fn adadelta_step<T: Scalar>(eg2: &mut [T], edx2: &mut [T], params: &mut [T], grads: &[T], rho: T, eps: T) {
    debug_assert!(eg2.len() == params.len() && edx2.len() == params.len() && grads.len() == params.len());
    let one = T::one();
    for i in 0..params.len() {
        let g = grads[i];
        eg2[i] = rho * eg2[i] + (one - rho) * g * g;
        let dx = -((edx2[i] + eps).sqrt() / (eg2[i] + eps).sqrt()) * g;
        edx2[i] = rho * edx2[i] + (one - rho) * dx * dx;
        params[i] += dx;
    }
}

/// Running averages `E[g²]` and `E[Δx²]`, stored with the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDeltaState<P> {
    pub eg2: P,
    pub edx2: P,
    pub rho: f64,
    pub eps: f64,
}

impl<P> AdaDeltaState<P> {
    pub fn new<T: Scalar>(params: &P) -> Self
    where
        P: ParamSet<T>,
    {
        Self::with_hyper(params, ADADELTA_RHO, ADADELTA_EPS)
    }

    pub fn with_hyper<T: Scalar>(params: &P, rho: f64, eps: f64) -> Self
    where
        P: ParamSet<T>,
    {
        Self {
            eg2: params.zeros_like(),
            edx2: params.zeros_like(),
            rho,
            eps,
        }
    }

    pub fn update<T: Scalar>(&mut self, params: &mut P, grads: &P) -> Result<()>
    where
        P: ParamSet<T>,
    {
        let shapes = |p: &P| p.tensors().iter().map(|(_, m)| m.shape()).collect::<Vec<_>>();
        let want = shapes(params);
        for (what, got) in [("gradient", shapes(grads)), ("E[g^2]", shapes(&self.eg2)), ("E[dx^2]", shapes(&self.edx2))] {
            if got != want {
                return Err(Error::InvalidArgument(format!("adadelta: {what} shapes do not match parameters")));
            }
        }
        let (rho, eps) = (T::lit(self.rho), T::lit(self.eps));
        let g = grads.tensors();
        let mut a = self.eg2.tensors_mut();
        let mut b = self.edx2.tensors_mut();
        for (k, (_, p)) in params.tensors_mut().into_iter().enumerate() {
            adadelta_step(a[k].1.as_mut_slice(), b[k].1.as_mut_slice(), p.as_mut_slice(), g[k].1.as_slice(), rho, eps);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_updates: u64,
    pub seed: u64,
    /// Updates between checkpoints; 0 disables them.
    pub checkpoint_interval: u64,
    /// Updates averaged into each loss-trace entry.
    pub report_interval: u64,
    pub clip_norm: f64,
    pub rho: f64,
    pub eps: f64,
    /// Probability of replacing each teacher-forced decoder input (BOS
    /// excluded) by UNK during training.
    pub input_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_updates: 10_000,
            seed: 1234,
            checkpoint_interval: 0,
            report_interval: 100,
            clip_norm: CLIP_NORM,
            rho: ADADELTA_RHO,
            eps: ADADELTA_EPS,
            input_dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.report_interval == 0 {
            return Err(Error::Config("report_interval must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return Err(Error::Config("input_dropout must lie in [0, 1)".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.eps > 0.0) {
            return Err(Error::Config("adadelta needs 0 < rho < 1 and eps > 0".into()));
        }
        Ok(())
    }
}

/// `(updates completed, mean per-token loss over the reporting interval)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub update: u64,
    pub loss: f64,
}

impl LossPoint {
    pub fn csv_line(&self) -> String {
        format!("{},{:.6}", self.update, self.loss)
    }
}

/// Teacher-forced decoder inputs for each row of `batch`, with every input
/// after BOS replaced by UNK with probability `p`.
pub fn dropped_inputs(batch: &Batch, p: f64, rng: &mut Rng) -> Vec<Vec<TokenId>> {
    batch
        .outputs
        .iter()
        .map(|out| {
            std::iter::once(BOS)
                .chain(out[..out.len() - 1].iter().map(|&y| if rng.coin(p) { UNK } else { y }))
                .collect()
        })
        .collect()
}

/// Average per-token loss of `batch` and its gradient, written to `grads`.
/// `inputs` optionally overrides the decoder inputs of each row.
pub fn batch_gradient<T: Scalar>(
    model: &Seq2Seq<T>,
    pairs: &[SentencePair],
    batch: &Batch,
    inputs: Option<&[Vec<TokenId>]>,
    grads: &mut Seq2Seq<T>,
) -> Result<T> {
    grads.fill(T::zero());
    let mut total = T::zero();
    for (row, &i) in batch.indices.iter().enumerate() {
        total += model.loss_and_gradient_fed(
            &pairs[i].source,
            inputs.map(|x| &x[row][..]),
            &batch.outputs[row],
            Some(&batch.mask[row]),
            grads,
        )?;
    }
    let tokens = T::lit(batch.token_count().max(1) as f64);
    grads.scale(T::one() / tokens);
    Ok(total / tokens)
}

/// Rescale `grads` so its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar, P: ParamSet<T>>(grads: &mut P, max_norm: T) -> T {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Training loop state.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: Seq2Seq<T>,
    pub optimizer: AdaDeltaState<Seq2Seq<T>>,
    pub config: TrainConfig,
    /// Updates applied so far.
    pub updates: u64,
    grads: Seq2Seq<T>,
    epoch_cache: Option<(u64, Vec<Batch>)>,
    pending: (f64, u64),
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Seq2Seq<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdaDeltaState::with_hyper(&model, config.rho, config.eps);
        Ok(Self::resume(model, optimizer, config, 0))
    }

    /// Continue from saved parameters, accumulators and update count.
    pub fn resume(model: Seq2Seq<T>, optimizer: AdaDeltaState<Seq2Seq<T>>, config: TrainConfig, updates: u64) -> Self {
        let grads = model.zeros_like();
        Self {
            model,
            optimizer,
            config,
            updates,
            grads,
            epoch_cache: None,
            pending: (0.0, 0),
        }
    }

    fn batch_for(&mut self, pairs: &[SentencePair], update: u64) -> Result<Batch> {
        let per_epoch = pairs.len().div_ceil(self.config.batch_size) as u64;
        let (epoch, within) = (update / per_epoch, (update % per_epoch) as usize);
        if self.epoch_cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut rng = Rng::derived(self.config.seed, epoch);
            self.epoch_cache = Some((epoch, make_batches(pairs, self.config.batch_size, &mut rng)?));
        }
        Ok(self.epoch_cache.as_ref().expect("filled above").1[within].clone())
    }

    /// Apply one update; returns its per-token training loss.
    pub fn step(&mut self, pairs: &[SentencePair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let batch = self.batch_for(pairs, self.updates)?;
        let inputs = (self.config.input_dropout > 0.0).then(|| {
            let mut rng = Rng::derived(self.config.seed ^ DROPOUT_STREAM, self.updates);
            dropped_inputs(&batch, self.config.input_dropout, &mut rng)
        });
        let loss = batch_gradient(&self.model, pairs, &batch, inputs.as_deref(), &mut self.grads)?.to_f64_lossy();
        if !loss.is_finite() || !self.grads.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {loss} at update {} (batch of pairs {:?})",
                self.updates + 1,
                batch.indices
            )));
        }
        clip_global_norm(&mut self.grads, T::lit(self.config.clip_norm));
        self.optimizer.update(&mut self.model, &self.grads)?;
        self.updates += 1;
        Ok(loss)
    }

    /// Train until `config.max_updates` updates have been applied in total.
    ///
    /// `on_report` sees every loss-trace point; `on_checkpoint` runs every
    /// `checkpoint_interval` updates. Either may stop training early by
    /// returning `Ok(false)`.
    pub fn run<R, C>(&mut self, pairs: &[SentencePair], mut on_report: R, mut on_checkpoint: C) -> Result<Vec<LossPoint>>
    where
        R: FnMut(&LossPoint) -> Result<bool>,
        C: FnMut(&Self) -> Result<bool>,
    {
        let mut trace = Vec::new();
        while self.updates < self.config.max_updates {
            let loss = self.step(pairs)?;
            self.pending.0 += loss;
            self.pending.1 += 1;
            let mut go_on = true;
            if self.updates % self.config.report_interval == 0 {
                let point = LossPoint {
                    update: self.updates,
                    loss: self.pending.0 / self.pending.1 as f64,
                };
                self.pending = (0.0, 0);
                trace.push(point);
                go_on &= on_report(&point)?;
            }
            if self.config.checkpoint_interval > 0 && self.updates % self.config.checkpoint_interval == 0 {
                go_on &= on_checkpoint(self)?;
            }
            if !go_on {
                break;
            }
        }
        Ok(trace)
    }
}

/// Train `model` on `pairs` for `cfg.max_updates` updates.
pub fn train<T: Scalar>(model: Seq2Seq<T>, pairs: &[SentencePair], cfg: &TrainConfig) -> Result<(Seq2Seq<T>, Vec<LossPoint>)> {
    if pairs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut t = Trainer::new(model, cfg.clone())?;
    let trace = t.run(pairs, |_| Ok(true), |_| Ok(true))?;
    Ok((t.model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_toy_task, ToyTask};
    use crate::model::EncoderKind;

    #[test]
    fn zero_gradient_only_decays() {
        let (rho, eps) = (0.95, 1e-6);
        let mut eg2 = vec![0.4, 1.0];
        let mut edx2 = vec![0.2, 0.0];
        let mut p = vec![1.5, -2.0];
        adadelta_step(&mut eg2, &mut edx2, &mut p, &[0.0, 0.0], rho, eps);
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(eg2, vec![0.4 * rho, rho]);
        assert_eq!(edx2, vec![0.2 * rho, 0.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let (rho, eps): (f64, f64) = (0.95, 1e-6);
        for g in [1e-3, 0.5, -3.0] {
            let (mut a, mut b, mut p) = (vec![0.0], vec![0.0], vec![0.0]);
            adadelta_step(&mut a, &mut b, &mut p, &[g], rho, eps);
            let expect = -(eps.sqrt() / ((1.0 - rho) * g * g + eps).sqrt()) * g;
            assert!((p[0] - expect).abs() <= 1e-15 * expect.abs().max(1e-300));
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    fn quadratic_ratio(eps: f64, steps: usize, seed: u64) -> (f64, usize) {
        let mut rng = Rng::new(seed);
        let target: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let mut theta: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let f = |t: &[f64]| 0.5 * t.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let f0 = f(&theta);
        let (mut a, mut b) = (vec![0.0; 6], vec![0.0; 6]);
        let (mut prev, mut rising) = (f0, 0);
        for _ in 0..steps {
            let g: Vec<f64> = theta.iter().zip(&target).map(|(x, t)| x - t).collect();
            adadelta_step(&mut a, &mut b, &mut theta, &g, ADADELTA_RHO, eps);
            let v = f(&theta);
            rising += usize::from(v > prev);
            prev = v;
        }
        (f0 / f(&theta).max(1e-300), rising)
    }

    #[test]
    fn quadratic_descends() {
        for seed in 0..5 {
            // The step size starts near sqrt(eps); with eps = 1e-4 it warms
            // up within a few dozen steps.
            let (ratio, rising) = quadratic_ratio(1e-4, 200, seed);
            assert!(ratio >= 100.0, "seed {seed}: {ratio}");
            assert!(rising < 20, "seed {seed}: {rising} increases");
            let (ratio, _) = quadratic_ratio(ADADELTA_EPS, 1000, seed);
            assert!(ratio >= 100.0, "seed {seed} default eps: {ratio}");
        }
    }

    #[test]
    fn zero_updates_leave_model_unchanged() {
        let dims = ModelDims {
            kind: EncoderKind::GrConv,
            d_emb: 3,
            d_hidden: 4,
            d_ctx: 4,
            src_vocab: 8,
            tgt_vocab: 8,
        };
        let model = Seq2Seq::<f64>::init(dims, &mut Rng::new(1)).unwrap();
        let pairs = gen_toy_task(ToyTask::Copy, 5, 2..=3, 10, &mut Rng::new(2)).unwrap();
        let cfg = TrainConfig { max_updates: 0, ..TrainConfig::default() };
        let (out, trace) = train(model.clone(), &pairs, &cfg).unwrap();
        assert_eq!(out, model);
        assert!(trace.is_empty());
        assert!(train(model, &[], &cfg).is_err());
    }

    #[test]
    fn clip_scales_to_threshold() {
        let dims = ModelDims {
            kind: EncoderKind::Rnn,
            d_emb: 2,
            d_hidden: 2,
            d_ctx: 2,
            src_vocab: 4,
            tgt_vocab: 4,
        };
        let mut g = Seq2Seq::<f64>::zeros(dims).unwrap();
        g.fill(1.0);
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - (g.num_params() as f64).sqrt()).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
