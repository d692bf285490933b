//! Binary model and checkpoint files.
//!
//! ```text
//! magic      7 bytes  "GRNMT1\0"
//! version    u16
//! encoder    u8       1 = gated recurrent, 2 = grConv
//! dims       5 x u32  d_emb, d_hidden, d_ctx, K_source, K_target
//! count      u32
//! count x {  name_len u16, name (UTF-8), rank u8, dims rank x u32,
//!            payload prod(dims) x f64 }
//! ```
//!
//! Every integer and float is little-endian. A checkpoint is the same layout
//! with the optimizer accumulators (`adadelta.eg2/<name>`,
//! `adadelta.edx2/<name>`) and a `trainer.state` vector appended.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EncoderKind, ModelDims, Seq2Seq};
use crate::numerics::Matrix;
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::training::AdaDeltaState;

pub const MAGIC: &[u8; 7] = b"GRNMT1\0";
pub const FORMAT_VERSION: u16 = 1;

const EG2: &str = "adadelta.eg2/";
const EDX2: &str = "adadelta.edx2/";
const TRAINER_STATE: &str = "trainer.state";

/// Decoded file contents: header dims plus tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub dims: ModelDims,
    pub tensors: Vec<(String, Matrix<f64>)>,
}

/// Parameters, optimizer state and progress of an interrupted run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Seq2Seq<T>,
    pub optimizer: AdaDeltaState<Seq2Seq<T>>,
    pub updates: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated file while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn dim_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{what} {x} does not fit in u32")))
}

impl ModelFile {
    pub fn from_model<T: Scalar>(model: &Seq2Seq<T>) -> Self {
        Self {
            dims: model.dims(),
            tensors: model.tensors().into_iter().map(|(n, m)| (n, m.cast())).collect(),
        }
    }

    pub fn from_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Self {
        let mut f = Self::from_model(&ck.model);
        for (prefix, acc) in [(EG2, &ck.optimizer.eg2), (EDX2, &ck.optimizer.edx2)] {
            for (n, m) in acc.tensors() {
                f.tensors.push((format!("{prefix}{n}"), m.cast()));
            }
        }
        let state = vec![ck.updates as f64, ck.optimizer.rho, ck.optimizer.eps];
        f.tensors
            .push((TRAINER_STATE.into(), Matrix::from_vec(3, 1, state).expect("3 values")));
        f
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.dims.kind.tag());
        let d = &self.dims;
        for (x, what) in [
            (d.d_emb, "d_emb"),
            (d.d_hidden, "d_hidden"),
            (d.d_ctx, "d_ctx"),
            (d.src_vocab, "K_source"),
            (d.tgt_vocab, "K_target"),
        ] {
            out.extend_from_slice(&dim_u32(x, what)?.to_le_bytes());
        }
        out.extend_from_slice(&dim_u32(self.tensors.len(), "tensor count")?.to_le_bytes());
        for (name, m) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(2);
            out.extend_from_slice(&dim_u32(m.rows(), "rows")?.to_le_bytes());
            out.extend_from_slice(&dim_u32(m.cols(), "cols")?.to_le_bytes());
            for &x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format version {version}")));
        }
        let kind = EncoderKind::from_tag(r.u8("encoder kind")?)?;
        let mut d = [0usize; 5];
        for x in &mut d {
            *x = r.u32("dims")? as usize;
        }
        let dims = ModelDims {
            kind,
            d_emb: d[0],
            d_hidden: d[1],
            d_ctx: d[2],
            src_vocab: d[3],
            tgt_vocab: d[4],
        };
        dims.validate()?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u8("rank")?;
            let (rows, cols) = match rank {
                1 => (r.u32("dims")? as usize, 1),
                2 => (r.u32("dims")? as usize, r.u32("dims")? as usize),
                _ => return Err(Error::Format(format!("tensor {name}: unsupported rank {rank}"))),
            };
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= buf.len()))
                .ok_or_else(|| Error::Format(format!("tensor {name}: implausible shape {rows}x{cols}")))?;
            let bytes = r.take(n * 8, &format!("payload of {name}"))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes after last tensor", buf.len() - r.pos)));
        }
        Ok(Self { dims, tensors })
    }

    /// Fill every tensor of `target` (prefixed by `prefix`) from `by_name`,
    /// removing the entries it consumes.
    fn fill<T: Scalar, P: ParamSet<T>>(
        target: &mut P,
        prefix: &str,
        by_name: &mut HashMap<String, Matrix<f64>>,
    ) -> Result<()> {
        for (name, dst) in target.tensors_mut() {
            let key = format!("{prefix}{name}");
            let src = by_name
                .remove(&key)
                .ok_or_else(|| Error::Format(format!("missing tensor {key}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::Format(format!(
                    "tensor {key}: shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            if !src.is_finite() {
                return Err(Error::Format(format!("tensor {key} holds non-finite values")));
            }
            *dst = src.cast();
        }
        Ok(())
    }

    fn index(self) -> Result<(ModelDims, HashMap<String, Matrix<f64>>)> {
        let mut by_name = HashMap::with_capacity(self.tensors.len());
        for (name, m) in self.tensors {
            if by_name.contains_key(&name) {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
            by_name.insert(name, m);
        }
        Ok((self.dims, by_name))
    }

    fn reject_rest(rest: HashMap<String, Matrix<f64>>) -> Result<()> {
        let mut names: Vec<String> = rest.into_keys().collect();
        names.sort();
        match names.first() {
            None => Ok(()),
            Some(n) => Err(Error::Format(format!("unexpected tensor {n}"))),
        }
    }

    pub fn into_model<T: Scalar>(self) -> Result<Seq2Seq<T>> {
        let (dims, mut by_name) = self.index()?;
        let mut model = Seq2Seq::zeros(dims)?;
        Self::fill(&mut model, "", &mut by_name)?;
        Self::reject_rest(by_name)?;
        Ok(model)
    }

    pub fn into_checkpoint<T: Scalar>(self) -> Result<Checkpoint<T>> {
        let (dims, mut by_name) = self.index()?;
        let mut model = Seq2Seq::zeros(dims)?;
        Self::fill(&mut model, "", &mut by_name)?;
        let mut eg2 = model.zeros_like();
        let mut edx2 = model.zeros_like();
        Self::fill(&mut eg2, EG2, &mut by_name)?;
        Self::fill(&mut edx2, EDX2, &mut by_name)?;
        let state = by_name
            .remove(TRAINER_STATE)
            .ok_or_else(|| Error::Format(format!("missing tensor {TRAINER_STATE}")))?;
        Self::reject_rest(by_name)?;
        let s = state.as_slice();
        if s.len() != 3 || !(s[0] >= 0.0 && s[0].fract() == 0.0) {
            return Err(Error::Format(format!("malformed {TRAINER_STATE}")));
        }
        Ok(Checkpoint {
            model,
            optimizer: AdaDeltaState {
                eg2,
                edx2,
                rho: s[1],
                eps: s[2],
            },
            updates: s[0] as u64,
        })
    }
}

/// Write `bytes` to a sibling temporary file, then rename over `path`, so a
/// reader never observes a half-written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_model<T: Scalar>(model: &Seq2Seq<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ModelFile::from_model(model).to_bytes()?)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Seq2Seq<T>> {
    ModelFile::from_bytes(&fs::read(path)?)?.into_model()
}

pub fn save_checkpoint<T: Scalar>(ck: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ModelFile::from_checkpoint(ck).to_bytes()?)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    ModelFile::from_bytes(&fs::read(path)?)?.into_checkpoint()
}
