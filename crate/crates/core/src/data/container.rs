//! `STNETFRM` raw frame container.
//!
//! Layout, little-endian:
//!
//! ```text
//! "STNETFRM"  u32 version  u32 T  u32 H  u32 W  u32 C  u8 label  f64 fps
//! u32 id_len  id (UTF-8)   T·H·W·C frame bytes, time-major, row-major
//! ```
//!
//! An external decoder only has to emit raw RGB24 frames in that order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::write_atomically;

use super::FrameSequence;

pub const FRAME_MAGIC: &[u8; 8] = b"STNETFRM";
pub const FRAME_VERSION: u32 = 1;

pub fn encode_frames(seq: &FrameSequence) -> Vec<u8> {
    let id = seq.clip_id.as_bytes();
    let mut out = Vec::with_capacity(45 + id.len() + seq.frames.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    for d in seq.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(seq.label as u8);
    out.extend_from_slice(&seq.fps.to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&seq.frames);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(format!("frame container truncated in {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parse a container. Nothing is returned unless the whole file checks out.
pub fn decode_frames(bytes: &[u8]) -> Result<FrameSequence> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != FRAME_MAGIC {
        return Err(Error::format("not a STNETFRM frame container (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FRAME_VERSION {
        return Err(Error::format(format!(
            "frame container version {version} is not supported (this build reads version {FRAME_VERSION})"
        )));
    }
    let mut dims = [0usize; 4];
    for (d, name) in dims.iter_mut().zip(["T", "H", "W", "C"]) {
        *d = r.u32(name)? as usize;
        if *d == 0 {
            return Err(Error::format(format!("frame container header has {name} = 0")));
        }
    }
    let label = r.take(1, "label")?[0] as usize;
    let fps = f64::from_le_bytes(r.take(8, "fps")?.try_into().expect("8 bytes"));
    let id_len = r.u32("clip id length")? as usize;
    let clip_id = std::str::from_utf8(r.take(id_len, "clip id")?)
        .map_err(|_| Error::format("clip id is not UTF-8"))?
        .to_string();
    let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let body = &bytes[r.pos..];
    if expected != Some(body.len()) {
        return Err(Error::integrity(format!(
            "header {}×{}×{}×{} needs {} frame bytes, file holds {}",
            dims[0],
            dims[1],
            dims[2],
            dims[3],
            expected.map_or("more than usize".to_string(), |n| n.to_string()),
            body.len()
        )));
    }
    FrameSequence::new(body.to_vec(), dims, label, clip_id, fps).map_err(|e| match e {
        Error::Label(m) => Error::format(format!("frame container header: {m}")),
        other => other,
    })
}

pub fn write_frame_container(seq: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    write_atomically(path.as_ref(), &encode_frames(seq))
}

pub fn read_frame_container(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    decode_frames(&bytes).map_err(|e| e.context(path.display().to_string()))
}
