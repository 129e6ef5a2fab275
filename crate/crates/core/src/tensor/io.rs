//! Binary tensor files and parameter checkpoints.
//!
//! Tensor file layout (little-endian): magic `FLT1`, `u32` rank, `rank`
//! `u32` dimensions, then the `f64` payload in row-major order.
//! A checkpoint is a directory of tensor files plus `manifest.json`
//! mapping parameter names to file names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FLT1";
pub const MANIFEST: &str = "manifest.json";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |msg: &str| Error::format(path, msg);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing FLT1 magic"));
    }
    let u32_at = |off: usize| -> Option<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    };
    let rank = u32_at(4).ok_or_else(|| bad("truncated header"))? as usize;
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated shape header"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u32_at(8 + 4 * i).unwrap() as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("shape overflows"))?;
    let payload = &bytes[header..];
    if payload.len() != n * 8 {
        return Err(bad(&format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            n * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn file_name_for(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.flt")
}

pub fn save_checkpoint(dir: &Path, params: &ParamSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = BTreeMap::new();
    for (name, t) in params.iter() {
        let file = file_name_for(name);
        write_tensor(&dir.join(&file), t)?;
        manifest.insert(name.to_string(), file);
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::json("checkpoint manifest", e))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<ParamSet> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let mut params = ParamSet::new();
    for (name, file) in manifest {
        params.insert(name, read_tensor(&dir.join(file))?)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_roundtrip(dims in proptest::collection::vec(0usize..4, 0..4), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::randn(&dims, 10.0, &mut rng);
            let back = decode(&encode(&t), Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let t = Tensor::new(&[2], vec![1.0, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"FLT1");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[12..20], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    #[test]
    fn truncated_and_bad_magic_are_format_errors() {
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = encode(&t);
        for cut in [0, 3, 7, 11, b.len() - 1] {
            assert!(matches!(
                decode(&b[..cut], Path::new("x")),
                Err(Error::Format { .. })
            ));
        }
        let mut bad = b.clone();
        bad[0] = b'G';
        assert!(matches!(
            decode(&bad, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ps = ParamSet::new();
        ps.insert("gru.wz", Tensor::full(&[2, 2], 0.25)).unwrap();
        ps.insert("head/0", Tensor::scalar(-1.0)).unwrap();
        save_checkpoint(dir.path(), &ps).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), ps);
    }
}
