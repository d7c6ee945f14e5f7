//! Checkpoint wire format.
//!
//! ```text
//! magic "OSCK" | u32 version
//! u32 record_len | record_len bytes of UTF-8 key=value lines (the config)
//! repeated until EOF:
//!   u32 name_len | name bytes | u8 rank | rank x u32 dims
//!   | little-endian f32 row-major data
//! ```
//! Values are stored as f32; reloading reproduces forward outputs within
//! the f32 cast tolerance.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::weights::ModelWeights;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"OSCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(weights: &ModelWeights, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let record = weights.config.to_record();
    w.write_all(&(record.len() as u32).to_le_bytes())?;
    w.write_all(record.as_bytes())?;
    let mut failed = None;
    weights.for_each(|name, tensor| {
        if failed.is_some() {
            return;
        }
        if let Err(e) = write_tensor(&mut w, name, tensor) {
            failed = Some(e);
        }
    });
    if let Some(e) = failed {
        return Err(e);
    }
    w.flush()?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelWeights> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let record_len = read_u32(&mut r)? as usize;
    let mut record = vec![0u8; record_len];
    read_exact(&mut r, &mut record)?;
    let record =
        String::from_utf8(record).map_err(|_| Error::Format("config record not UTF-8".into()))?;
    let config = ModelConfig::from_record(&record)?;

    let mut weights = ModelWeights::init(&config, 0)?;
    let expected = weights.param_names();
    let mut seen = std::collections::BTreeSet::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::Format(format!("truncated checkpoint: {e}"))),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("tensor name not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b)?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        weights.set_by_name(&name, Tensor::new(shape, data)?)?;
        seen.insert(name);
    }
    for name in &expected {
        if !seen.contains(name) {
            return Err(Error::Format(format!("checkpoint missing tensor {name:?}")));
        }
    }
    Ok(weights)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::triple::Triple;
    use crate::model::encoder::hidden_states;
    use crate::model::mask::{build_mask, MaskKind};
    use crate::rng::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("oscar_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_reproduces_forward_within_f32_tolerance() {
        let cfg = ModelConfig::tiny();
        let mut weights = ModelWeights::init(&cfg, 42).unwrap();
        // make the heads nonzero so the comparison exercises them
        let mut rng = Rng::new(1);
        weights.mlm_w = Tensor::randn(vec![cfg.hidden, cfg.vocab], 0.1, &mut rng);
        let path = tmp("rt.osck");
        save_checkpoint(&weights, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, cfg);

        let triple = Triple {
            word_ids: vec![1, 8, 2],
            tag_ids: vec![6, 2],
            region_vecs: vec![(0..cfg.region_input_dim())
                .map(|i| (i as f32) * 0.05 - 0.2)
                .collect()],
        };
        let mask = build_mask(MaskKind::Full, &triple.layout());
        let a = hidden_states(&weights, &triple, &mask).unwrap();
        let b = hidden_states(&loaded, &triple, &mask).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-3);
            assert!(rel < 1e-6, "{x} vs {y}");
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn wrong_magic_rejected() {
        let path = tmp("bad.osck");
        std::fs::write(&path, b"JUNKxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn missing_tensor_rejected() {
        let cfg = ModelConfig::tiny();
        let weights = ModelWeights::init(&cfg, 1).unwrap();
        let path = tmp("partial.osck");
        // hand-write a checkpoint with only the config record
        let mut f = std::fs::File::create(&path).unwrap();
        use std::io::Write as _;
        f.write_all(b"OSCK").unwrap();
        f.write_all(&1u32.to_le_bytes()).unwrap();
        let record = weights.config.to_record();
        f.write_all(&(record.len() as u32).to_le_bytes()).unwrap();
        f.write_all(record.as_bytes()).unwrap();
        drop(f);
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
        std::fs::remove_file(path).ok();
    }
}
