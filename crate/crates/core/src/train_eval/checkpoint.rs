//! Self-describing binary checkpoint.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "TATNCKPT" | version u32 | epoch u64
//! rng seed [u8; 32] | rng stream u64 | rng word position u128
//! config length u32 | config text (key = value, UTF-8)
//! tensor count u32
//! per tensor: name length u32 | name | rank u32 | extents u64… | values f64…
//! ```

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use tempattn_autograd::Tensor;

use crate::config::TrainConfig;
use crate::error::{io_err, ReidError, Result};
use crate::model::ReidModel;
use crate::params::ParamSet;

pub const MAGIC: &[u8; 8] = b"TATNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: RngState,
    pub config: TrainConfig,
    pub model: ReidModel,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ReidError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > self.buf.len() - self.pos {
            return Err(ReidError::Checkpoint(format!("length {n} exceeds file size")));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.bytes(n)?.to_vec())
            .map_err(|_| ReidError::Checkpoint("non-UTF-8 string".into()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let text = self.config.to_text();
        put_u32(&mut out, text.len());
        out.extend_from_slice(text.as_bytes());

        let params = self.model.named_params();
        put_u32(&mut out, params.len());
        for (name, t) in params {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.ndim());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.bytes(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(ReidError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ReidError::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let epoch = r.u64()? as usize;
        let rng = RngState {
            seed: r.array()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.array()?),
        };
        let config = TrainConfig::parse(&r.string()?)?;

        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes = numel
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| ReidError::Checkpoint(format!("{name}: shape overflow")))?;
            let data = r
                .bytes(bytes)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(ReidError::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }

        let num_classes = tensors
            .iter()
            .find(|(n, _)| n == "classifier.bias")
            .map(|(_, t)| t.numel())
            .ok_or_else(|| ReidError::Checkpoint("missing classifier.bias".into()))?;
        let mut model = ReidModel::init(0, num_classes, &config.cnn_config(), &config.attention_config())?;
        let slots = model.named_params_mut();
        if slots.len() != tensors.len() {
            return Err(ReidError::Checkpoint(format!(
                "{} tensors stored, model has {}",
                tensors.len(),
                slots.len()
            )));
        }
        for ((want, slot), (name, tensor)) in slots.into_iter().zip(tensors) {
            if want != name || slot.shape() != tensor.shape() {
                return Err(ReidError::Checkpoint(format!(
                    "manifest mismatch: stored {name} {:?}, expected {want} {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(Self {
            epoch,
            rng,
            config,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}
