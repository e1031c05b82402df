//! Feature container (`.vcft`), little-endian:
//!
//! ```text
//! magic        4 bytes  "VCFT"
//! version      u32      1
//! frames       u32
//! frame_shift  f64      milliseconds
//! groups       u32      number of channel groups
//!   name_len   u32
//!   name       bytes    utf-8 ("mcep", "log_f0", "uv", "coded_ap")
//!   width      u32
//! data         f64      frames x sum(width), frame-major, groups in order
//! ```

use std::path::Path;

use crate::dsp::{AcousticFrameSequence, ExcitationFrame};
use crate::error::{ensure, Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"VCFT";
pub const FEATURE_VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    pub(crate) fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.bytes(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.corrupt("invalid utf-8 string"))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.corrupt("array length overflow"))?;
        let b = self.bytes(len)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Writes `bytes` next to `path` and renames it into place, so readers never
/// observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_features(seq: &AcousticFrameSequence) -> Vec<u8> {
    let groups = [("mcep", seq.mcep_dim), ("log_f0", 1), ("uv", 1), ("coded_ap", 3)];
    let mut out = Vec::with_capacity(64 + seq.frames() * seq.feature_dim() * 8);
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, FEATURE_VERSION);
    put_u32(&mut out, seq.frames() as u32);
    put_f64(&mut out, seq.frame_shift_ms);
    put_u32(&mut out, groups.len() as u32);
    for (name, width) in groups {
        put_str(&mut out, name);
        put_u32(&mut out, width as u32);
    }
    for v in seq.to_matrix() {
        put_f64(&mut out, v);
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<AcousticFrameSequence> {
    let mut r = Reader::new(bytes, path);
    if r.bytes(4)? != FEATURE_MAGIC {
        return Err(r.corrupt("bad magic, not a feature file"));
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(r.corrupt(format!("unsupported feature version {version}")));
    }
    let frames = r.u32()? as usize;
    let frame_shift_ms = r.f64()?;
    let count = r.u32()?;
    let mut groups = Vec::new();
    for _ in 0..count {
        let name = r.string()?;
        let width = r.u32()? as usize;
        groups.push((name, width));
    }
    let names: Vec<&str> = groups.iter().map(|(n, _)| n.as_str()).collect();
    if names != ["mcep", "log_f0", "uv", "coded_ap"] || groups[1].1 != 1 || groups[2].1 != 1 || groups[3].1 != 3 {
        return Err(r.corrupt(format!("unexpected channel layout {groups:?}")));
    }
    let d = groups[0].1;
    let width = d + 5;
    let data = r.f64s(frames * width)?;
    r.finish()?;
    let mut mcep = Vec::with_capacity(frames * d);
    let mut excitation = Vec::with_capacity(frames);
    for row in data.chunks_exact(width) {
        mcep.extend_from_slice(&row[..d]);
        let uv = row[d + 1];
        ensure!(uv == 0.0 || uv == 1.0, r.corrupt(format!("voicing flag {uv} is not 0 or 1")));
        excitation.push(ExcitationFrame {
            log_f0: row[d],
            voiced: uv == 1.0,
            coded_ap: [row[d + 2], row[d + 3], row[d + 4]],
        });
    }
    AcousticFrameSequence::new(d, mcep, excitation, frame_shift_ms).map_err(|e| r.corrupt(e.to_string()))
}

pub fn write_features(path: &Path, seq: &AcousticFrameSequence) -> Result<()> {
    write_atomic(path, &encode_features(seq))
}

pub fn read_features(path: &Path) -> Result<AcousticFrameSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}
