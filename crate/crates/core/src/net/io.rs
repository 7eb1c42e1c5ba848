//! Binary weight files.
//!
//! ```text
//! magic      8 bytes  "REACHNET"
//! version    u32 LE
//! actions    u32 LE   (K, actions per joint)
//! tensors    u32 LE
//! per tensor:
//!   name_len u16 LE, name (UTF-8), ndim u8, dims u32 LE × ndim
//! payload    f32 LE × total parameters, in table order
//! checksum   u64 LE   (FNV-1a over the payload bytes)
//! ```

use std::path::Path;

use super::{Layout, NetParams};
use crate::error::{Error, Result};

pub const WEIGHT_FILE_MAGIC: &[u8; 8] = b"REACHNET";
pub const WEIGHT_FILE_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn encode_params(params: &NetParams<f32>) -> Vec<u8> {
    let layout = params.layout();
    let mut out = Vec::with_capacity(64 + 4 * params.len());
    out.extend_from_slice(WEIGHT_FILE_MAGIC);
    out.extend_from_slice(&WEIGHT_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.actions as u32).to_le_bytes());
    out.extend_from_slice(&(layout.tensors.len() as u32).to_le_bytes());
    for t in &layout.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
    }
    let start = out.len();
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = fnv1a(&out[start..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated at byte {} (needed {n} more)", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a weight file image. `expected_actions` rejects files built for a
/// different action count.
pub fn decode_params(
    bytes: &[u8],
    expected_actions: Option<usize>,
) -> std::result::Result<NetParams<f32>, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != WEIGHT_FILE_MAGIC {
        return Err("not a weight file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != WEIGHT_FILE_VERSION {
        return Err(format!(
            "unsupported format version {version} (this build reads {WEIGHT_FILE_VERSION})"
        ));
    }
    let actions = r.u32()? as usize;
    if let Some(k) = expected_actions {
        if k != actions {
            return Err(format!(
                "file holds policy heads with {actions} actions, the run expects {k}"
            ));
        }
    }
    if actions == 0 {
        return Err("file declares zero actions".into());
    }
    let layout = Layout::new(actions);
    let count = r.u32()? as usize;
    if count != layout.tensors.len() {
        return Err(format!(
            "file has {count} tensors, expected {}",
            layout.tensors.len()
        ));
    }
    for t in &layout.tensors {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        if name != t.name || shape != t.shape {
            return Err(format!(
                "tensor table mismatch: file has {name} {shape:?}, expected {} {:?}",
                t.name, t.shape
            ));
        }
    }
    let payload = r.take(4 * layout.total)?;
    let checksum = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    if fnv1a(payload) != checksum {
        return Err("payload checksum mismatch".into());
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    NetParams::from_vec(actions, data).map_err(|e| e.to_string())
}

/// Writes atomically through a sibling temporary file.
pub fn save_params(params: &NetParams<f32>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_params(params)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path, expected_actions: Option<usize>) -> Result<NetParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, expected_actions).map_err(|reason| Error::WeightFile {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(k: usize) -> NetParams<f32> {
        NetParams::init(&mut ChaCha8Rng::seed_from_u64(21), k).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let p = params(7);
        save_params(&p, &path).unwrap();
        let q = load_params(&path, Some(7)).unwrap();
        assert_eq!(p.fingerprint(), q.fingerprint());
        assert_eq!(p, q);
    }

    #[test]
    fn action_count_mismatch_rejected() {
        let bytes = encode_params(&params(7));
        let err = decode_params(&bytes, Some(5)).unwrap_err();
        assert!(err.contains("7 actions"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode_params(&params(7));
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_params(&bytes[..cut], None).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn corrupted_payload_and_version_rejected() {
        let mut bytes = encode_params(&params(5));
        let n = bytes.len();
        bytes[n - 20] ^= 0x40;
        assert!(decode_params(&bytes, None).unwrap_err().contains("checksum"));
        let mut bytes = encode_params(&params(5));
        bytes[8] = 9;
        assert!(decode_params(&bytes, None).unwrap_err().contains("version"));
    }
}
