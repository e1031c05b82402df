//! Checkpoint container (`.vcck`), little-endian:
//!
//! ```text
//! magic      4 bytes "VCCK"
//! version    u32     1
//! kind       str     "cyclevae" | "vocoder"        (str = u32 length + utf-8)
//! config     str     JSON of the model and training configuration
//! step       u64     optimizer steps taken
//! epoch      u64     completed epochs
//! rng        u32 flag, then seed[32], stream u64, word_pos lo u64, hi u64
//! optimizers u32 count; per entry: name str, lr, beta1, beta2, eps f64,
//!            clip flag u32 + f64, step u64
//! arrays     u32 count; per entry: name str, ndim u32, dims u64..., f64 data
//! checksum   u64     FNV-1a of every preceding byte
//! ```
//!
//! Parameter stores are saved as three arrays per entry, `{prefix}/value/{name}`,
//! `{prefix}/m/{name}` and `{prefix}/v/{name}`; normalization statistics and
//! other buffers are plain named arrays.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;

use super::featfile::{put_f64, put_str, put_u32, put_u64, write_atomic, Reader};
use crate::error::{ensure, Error, Result};
use crate::nn::{Adam, FeatureNorm, ParameterStore, Rng, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    CycleVae,
    Vocoder,
}

impl CheckpointKind {
    pub fn tag(self) -> &'static str {
        match self {
            CheckpointKind::CycleVae => "cyclevae",
            CheckpointKind::Vocoder => "vocoder",
        }
    }

    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "cyclevae" => Some(CheckpointKind::CycleVae),
            "vocoder" => Some(CheckpointKind::Vocoder),
            _ => None,
        }
    }
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Full position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: String,
    pub step: u64,
    pub epoch: u64,
    pub rng: Option<RngState>,
    pub optimizers: Vec<(String, Adam)>,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: String) -> Self {
        Self {
            kind,
            config,
            step: 0,
            epoch: 0,
            rng: None,
            optimizers: Vec::new(),
            arrays: Vec::new(),
        }
    }

    pub fn push_array(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("checkpoint has no array '{name}'")))
    }

    pub fn push_store(&mut self, prefix: &str, store: &ParameterStore) {
        for e in store.entries() {
            for (part, t) in [("value", &e.value), ("m", &e.m), ("v", &e.v)] {
                self.push_array(format!("{prefix}/{part}/{}", e.name), t.shape().to_vec(), t.data().to_vec());
            }
        }
    }

    /// Overwrites values and optimizer moments of `store`, which must have
    /// been built with the same architecture.
    pub fn restore_store(&self, prefix: &str, store: &mut ParameterStore) -> Result<()> {
        let stored = self
            .arrays
            .iter()
            .filter(|a| a.name.starts_with(&format!("{prefix}/value/")))
            .count();
        ensure!(
            stored == store.len(),
            Error::CheckpointMismatch(format!(
                "'{prefix}' holds {stored} parameters, the model has {}",
                store.len()
            ))
        );
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.entry(id).name.clone();
            let shape = store.entry(id).value.shape().to_vec();
            let mut parts = Vec::with_capacity(3);
            for part in ["value", "m", "v"] {
                let a = self.array(&format!("{prefix}/{part}/{name}"))?;
                ensure!(
                    a.shape == shape,
                    Error::CheckpointMismatch(format!(
                        "parameter '{name}' has shape {:?} in the checkpoint, {shape:?} in the model",
                        a.shape
                    ))
                );
                parts.push(Tensor::new(shape.clone(), a.data.clone())?);
            }
            let e = store.entry_mut(id);
            e.v = parts.pop().expect("three parts");
            e.m = parts.pop().expect("three parts");
            e.value = parts.pop().expect("three parts");
        }
        Ok(())
    }

    pub fn push_norm(&mut self, prefix: &str, norm: &FeatureNorm) {
        self.push_array(format!("{prefix}/mean"), vec![norm.dim()], norm.mean.clone());
        self.push_array(format!("{prefix}/std"), vec![norm.dim()], norm.std.clone());
    }

    pub fn norm(&self, prefix: &str) -> Result<FeatureNorm> {
        let mean = self.array(&format!("{prefix}/mean"))?.data.clone();
        let std = self.array(&format!("{prefix}/std"))?.data.clone();
        ensure!(
            mean.len() == std.len(),
            Error::CheckpointMismatch(format!("'{prefix}' mean and std differ in length"))
        );
        Ok(FeatureNorm { mean, std })
    }

    pub fn optimizer(&self, name: &str) -> Result<Adam> {
        self.optimizers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a.clone())
            .ok_or_else(|| Error::CheckpointMismatch(format!("checkpoint has no optimizer '{name}'")))
    }

    /// Fails unless the checkpoint holds a model of the expected kind.
    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        ensure!(
            self.kind == kind,
            Error::CheckpointMismatch(format!("expected a {kind} checkpoint, found {}", self.kind))
        );
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, self.kind.tag());
        put_str(&mut out, &self.config);
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.epoch);
        match &self.rng {
            Some(r) => {
                put_u32(&mut out, 1);
                out.extend_from_slice(&r.seed);
                put_u64(&mut out, r.stream);
                put_u64(&mut out, r.word_pos as u64);
                put_u64(&mut out, (r.word_pos >> 64) as u64);
            }
            None => put_u32(&mut out, 0),
        }
        put_u32(&mut out, self.optimizers.len() as u32);
        for (name, a) in &self.optimizers {
            put_str(&mut out, name);
            for v in [a.lr, a.beta1, a.beta2, a.eps] {
                put_f64(&mut out, v);
            }
            put_u32(&mut out, a.clip_norm.is_some() as u32);
            put_f64(&mut out, a.clip_norm.unwrap_or(0.0));
            put_u64(&mut out, a.step);
        }
        put_u32(&mut out, self.arrays.len() as u32);
        for a in &self.arrays {
            put_str(&mut out, &a.name);
            put_u32(&mut out, a.shape.len() as u32);
            for &d in &a.shape {
                put_u64(&mut out, d as u64);
            }
            for &v in &a.data {
                put_f64(&mut out, v);
            }
        }
        let sum = fnv1a(&out);
        put_u64(&mut out, sum);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic, not a checkpoint".into()));
        }
        if bytes.len() < 12 {
            return Err(corrupt(format!("truncated: only {} bytes", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv1a(body) != stored {
            return Err(corrupt("checksum mismatch, file is truncated or damaged".into()));
        }
        let mut r = Reader::new(body, path);
        r.bytes(4)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.corrupt(format!("unsupported checkpoint version {version}")));
        }
        let tag = r.string()?;
        let kind = CheckpointKind::parse(&tag).ok_or_else(|| r.corrupt(format!("unknown model kind '{tag}'")))?;
        let config = r.string()?;
        let step = r.u64()?;
        let epoch = r.u64()?;
        let rng = match r.u32()? {
            0 => None,
            1 => {
                let seed: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
                let stream = r.u64()?;
                let lo = r.u64()? as u128;
                let hi = r.u64()? as u128;
                Some(RngState {
                    seed,
                    stream,
                    word_pos: lo | (hi << 64),
                })
            }
            f => return Err(r.corrupt(format!("bad rng flag {f}"))),
        };
        let n_opt = r.u32()?;
        let mut optimizers = Vec::new();
        for _ in 0..n_opt {
            let name = r.string()?;
            let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let has_clip = r.u32()? != 0;
            let clip = r.f64()?;
            let step = r.u64()?;
            optimizers.push((
                name,
                Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    clip_norm: has_clip.then_some(clip),
                    step,
                },
            ));
        }
        let n_arr = r.u32()?;
        let mut arrays = Vec::new();
        for _ in 0..n_arr {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.corrupt(format!("array '{name}' is too large")))?;
            let data = r.f64s(len)?;
            arrays.push(NamedArray { name, shape, data });
        }
        r.finish()?;
        Ok(Self {
            kind,
            config,
            step,
            epoch,
            rng,
            optimizers,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn sample() -> Checkpoint {
        let mut store = ParameterStore::new();
        let mut rng = Rng::seed_from_u64(3);
        store.add_uniform("w", &[2, 3], 0.5, &mut rng).unwrap();
        store.add_zeros("b", &[3]).unwrap();
        rng.next_u64();
        let mut ck = Checkpoint::new(CheckpointKind::Vocoder, "{\"x\":1}".into());
        ck.step = 17;
        ck.epoch = 2;
        ck.rng = Some(RngState::capture(&rng));
        ck.optimizers.push(("gen".into(), Adam::with_lr(1e-3)));
        ck.push_store("gen", &store);
        ck.push_norm("norm", &FeatureNorm::identity(4));
        ck
    }

    #[test]
    fn round_trip_preserves_everything() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("c")).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = Rng::seed_from_u64(9);
        rng.next_u32();
        let state = RngState::capture(&rng);
        let expected: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        let mut again = state.restore();
        let got: Vec<u64> = (0..5).map(|_| again.next_u64()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn damage_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [2, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut], Path::new("c")), Err(Error::Corrupt { .. })));
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&flipped, Path::new("c")), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn kind_and_shape_mismatches_are_reported() {
        let ck = sample();
        assert!(matches!(ck.expect_kind(CheckpointKind::CycleVae), Err(Error::CheckpointMismatch(_))));
        let mut other = ParameterStore::new();
        other.add_zeros("w", &[3, 2]).unwrap();
        other.add_zeros("b", &[3]).unwrap();
        assert!(matches!(ck.restore_store("gen", &mut other), Err(Error::CheckpointMismatch(_))));
        let mut same = ParameterStore::new();
        same.add_zeros("w", &[2, 3]).unwrap();
        same.add_zeros("b", &[3]).unwrap();
        ck.restore_store("gen", &mut same).unwrap();
        assert_eq!(same.value(same.get("w").unwrap()).data(), ck.array("gen/value/w").unwrap().data.as_slice());
    }
}
