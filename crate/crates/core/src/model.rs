//! Encoder-decoder composition.

use std::fmt;
use std::str::FromStr;

use crate::corpus::TokenId;
use crate::decoder::DecoderParams;
use crate::error::{Error, Result};
use crate::grconv::{GateRecord, GrConvEncoder, GrConvTrace};
use crate::gru::{RnnEncoder, RnnTrace, INIT_SIGMA};
use crate::numerics::{Matrix, Rng};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    /// Gated recurrent encoder.
    Rnn,
    /// Gated recursive convolutional encoder.
    GrConv,
}

impl EncoderKind {
    pub fn tag(self) -> u8 {
        match self {
            EncoderKind::Rnn => 1,
            EncoderKind::GrConv => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(EncoderKind::Rnn),
            2 => Ok(EncoderKind::GrConv),
            t => Err(Error::Format(format!("unknown encoder kind tag {t}"))),
        }
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnnenc" | "rnn" | "gru" => Ok(EncoderKind::Rnn),
            "grconv" => Ok(EncoderKind::GrConv),
            other => Err(Error::InvalidArgument(format!("unknown encoder {other:?} (rnnenc|grconv)"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Rnn => "rnnenc",
            EncoderKind::GrConv => "grconv",
        })
    }
}

/// Sizes that fully determine every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub kind: EncoderKind,
    pub d_emb: usize,
    /// Decoder hidden size (and RNN encoder hidden size).
    pub d_hidden: usize,
    /// Encoder output size (`d` for grConv).
    pub d_ctx: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("d_emb", self.d_emb),
            ("d_hidden", self.d_hidden),
            ("d_ctx", self.d_ctx),
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if self.kind == EncoderKind::Rnn && self.d_ctx != self.d_hidden {
            return Err(Error::InvalidArgument(format!(
                "rnnenc context size equals its hidden size: d_ctx {} != d_hidden {}",
                self.d_ctx, self.d_hidden
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder<T> {
    Rnn(RnnEncoder<T>),
    GrConv(GrConvEncoder<T>),
}

pub enum EncoderTrace<T> {
    Rnn(RnnTrace<T>),
    GrConv(GrConvTrace<T>),
}

impl<T: Scalar> EncoderTrace<T> {
    pub fn context(&self) -> &[T] {
        match self {
            EncoderTrace::Rnn(t) => t.context(),
            EncoderTrace::GrConv(t) => t.context(),
        }
    }
}

impl<T: Scalar> Encoder<T> {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Rnn(_) => EncoderKind::Rnn,
            Encoder::GrConv(_) => EncoderKind::GrConv,
        }
    }

    pub fn encode(&self, source: &[TokenId]) -> Result<Vec<T>> {
        match self {
            Encoder::Rnn(e) => e.encode(source),
            Encoder::GrConv(e) => e.encode(source).map(|(c, _)| c),
        }
    }

    pub fn forward(&self, source: &[TokenId]) -> Result<EncoderTrace<T>> {
        match self {
            Encoder::Rnn(e) => e.forward(source).map(EncoderTrace::Rnn),
            Encoder::GrConv(e) => e.forward(source).map(EncoderTrace::GrConv),
        }
    }

    pub fn backward_into(&self, trace: &EncoderTrace<T>, d_context: &[T], grads: &mut Encoder<T>) -> Result<()> {
        match (self, trace, grads) {
            (Encoder::Rnn(e), EncoderTrace::Rnn(t), Encoder::Rnn(g)) => e.backward_into(t, d_context, g),
            (Encoder::GrConv(e), EncoderTrace::GrConv(t), Encoder::GrConv(g)) => e.backward_into(t, d_context, g),
            _ => Err(Error::InvalidArgument("encoder kind mismatch in backward pass".into())),
        }
    }
}

impl<T: Scalar> ParamSet<T> for Encoder<T> {
    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        match self {
            Encoder::Rnn(e) => e.collect(p, out),
            Encoder::GrConv(e) => e.collect(p, out),
        }
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        match self {
            Encoder::Rnn(e) => e.collect_mut(p, out),
            Encoder::GrConv(e) => e.collect_mut(p, out),
        }
    }
}

/// Full translation model. Tensor names are prefixed `enc.` / `dec.`.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq<T> {
    pub encoder: Encoder<T>,
    pub decoder: DecoderParams<T>,
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn init(dims: ModelDims, rng: &mut Rng) -> Result<Self> {
        Self::init_with_sigma(dims, INIT_SIGMA, rng)
    }

    /// Orthogonal transitions as usual; every Gaussian tensor drawn with
    /// standard deviation `sigma` instead of the default 0.01.
    pub fn init_with_sigma(dims: ModelDims, sigma: f64, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("init sigma must be positive, got {sigma}")));
        }
        let encoder = match dims.kind {
            EncoderKind::Rnn => Encoder::Rnn(RnnEncoder::init_with_sigma(dims.src_vocab, dims.d_emb, dims.d_ctx, sigma, rng)?),
            EncoderKind::GrConv => {
                Encoder::GrConv(GrConvEncoder::init_with_sigma(dims.src_vocab, dims.d_emb, dims.d_ctx, sigma, rng)?)
            }
        };
        let decoder = DecoderParams::init_with_sigma(dims.tgt_vocab, dims.d_emb, dims.d_hidden, dims.d_ctx, sigma, rng)?;
        Ok(Self { encoder, decoder })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let encoder = match dims.kind {
            EncoderKind::Rnn => Encoder::Rnn(RnnEncoder::zeros(dims.src_vocab, dims.d_emb, dims.d_ctx)),
            EncoderKind::GrConv => Encoder::GrConv(GrConvEncoder::zeros(dims.src_vocab, dims.d_emb, dims.d_ctx)),
        };
        let decoder = DecoderParams::zeros(dims.tgt_vocab, dims.d_emb, dims.d_hidden, dims.d_ctx);
        Ok(Self { encoder, decoder })
    }

    pub fn dims(&self) -> ModelDims {
        let (src_vocab, d_emb, d_ctx) = match &self.encoder {
            Encoder::Rnn(e) => (e.embedding.vocab_size(), e.embedding.dim(), e.output_dim()),
            Encoder::GrConv(e) => (e.embedding.vocab_size(), e.embedding.dim(), e.output_dim()),
        };
        ModelDims {
            kind: self.encoder.kind(),
            d_emb,
            d_hidden: self.decoder.hidden_dim(),
            d_ctx,
            src_vocab,
            tgt_vocab: self.decoder.vocab_size(),
        }
    }

    pub fn encode(&self, source: &[TokenId]) -> Result<Vec<T>> {
        self.encoder.encode(source)
    }

    /// Gate record of a grConv encoder; error for other encoders.
    pub fn gate_record(&self, source: &[TokenId]) -> Result<GateRecord<T>> {
        match &self.encoder {
            Encoder::GrConv(e) => e.encode(source).map(|(_, r)| r),
            Encoder::Rnn(_) => Err(Error::InvalidArgument("model does not have a grConv encoder".into())),
        }
    }

    /// `-log p(target, EOS | source)`.
    pub fn sequence_nll(&self, source: &[TokenId], target: &[TokenId]) -> Result<T> {
        let ctx = self.encode(source)?;
        self.decoder.sequence_nll(&ctx, target)
    }

    /// Masked NLL of EOS-terminated `outputs` and its gradient, added into
    /// `grads`. Returns the summed loss.
    pub fn loss_and_gradient(
        &self,
        source: &[TokenId],
        outputs: &[TokenId],
        mask: Option<&[bool]>,
        grads: &mut Seq2Seq<T>,
    ) -> Result<T> {
        self.loss_and_gradient_fed(source, None, outputs, mask, grads)
    }

    /// [`Self::loss_and_gradient`] with explicit decoder step inputs.
    pub fn loss_and_gradient_fed(
        &self,
        source: &[TokenId],
        inputs: Option<&[TokenId]>,
        outputs: &[TokenId],
        mask: Option<&[bool]>,
        grads: &mut Seq2Seq<T>,
    ) -> Result<T> {
        let trace = self.encoder.forward(source)?;
        let (loss, d_ctx) = self
            .decoder
            .nll_backward_fed(trace.context(), inputs, outputs, mask, &mut grads.decoder)?;
        self.encoder.backward_into(&trace, &d_ctx, &mut grads.encoder)?;
        Ok(loss)
    }

    pub fn masked_nll(&self, source: &[TokenId], outputs: &[TokenId], mask: Option<&[bool]>) -> Result<T> {
        let ctx = self.encode(source)?;
        self.decoder.masked_nll(&ctx, outputs, mask)
    }

    pub fn cast<U: Scalar>(&self) -> Seq2Seq<U> {
        let mut out = Seq2Seq::<U>::zeros(self.dims()).expect("dims already valid");
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }
}

impl<T: Scalar> ParamSet<T> for Seq2Seq<T> {
    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.encoder.collect(&format!("{p}enc."), out);
        self.decoder.collect(&format!("{p}dec."), out);
    }

    fn collect_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        self.encoder.collect_mut(&format!("{p}enc."), out);
        self.decoder.collect_mut(&format!("{p}dec."), out);
    }
}
