//! Corpus wire format.
//!
//! ```text
//! magic "OSCT" | u32 version | u32 count | count x triple
//! triple: u32 word_len | u32 tag_len | u32 region_count | u32 region_dim
//!         | word ids as u32 | tag ids as u32
//!         | region vectors as little-endian f32, row-major
//! ```
//! All integers little-endian. The round trip is bit-exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::triple::Triple;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OSCT";
const VERSION: u32 = 1;

pub fn save_corpus(triples: &[Triple], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(triples.len() as u32).to_le_bytes())?;
    for t in triples {
        w.write_all(&(t.word_ids.len() as u32).to_le_bytes())?;
        w.write_all(&(t.tag_ids.len() as u32).to_le_bytes())?;
        w.write_all(&(t.region_vecs.len() as u32).to_le_bytes())?;
        w.write_all(&(t.region_dim() as u32).to_le_bytes())?;
        for &id in t.word_ids.iter().chain(&t.tag_ids) {
            w.write_all(&(id as u32).to_le_bytes())?;
        }
        for v in &t.region_vecs {
            for &x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Triple>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad corpus magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "corpus version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut triples = Vec::with_capacity(count);
    for _ in 0..count {
        let word_len = read_u32(&mut r)? as usize;
        let tag_len = read_u32(&mut r)? as usize;
        let region_count = read_u32(&mut r)? as usize;
        let region_dim = read_u32(&mut r)? as usize;
        let mut word_ids = Vec::with_capacity(word_len);
        for _ in 0..word_len {
            word_ids.push(read_u32(&mut r)? as usize);
        }
        let mut tag_ids = Vec::with_capacity(tag_len);
        for _ in 0..tag_len {
            tag_ids.push(read_u32(&mut r)? as usize);
        }
        let mut region_vecs = Vec::with_capacity(region_count);
        for _ in 0..region_count {
            let mut v = Vec::with_capacity(region_dim);
            for _ in 0..region_dim {
                v.push(read_f32(&mut r)?);
            }
            region_vecs.push(v);
        }
        triples.push(Triple {
            word_ids,
            tag_ids,
            region_vecs,
        });
    }
    Ok(triples)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated corpus file: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sample_corpus;
    use crate::corpus::world::{build_world, WorldConfig};
    use crate::corpus::CorpusConfig;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("oscar_corpus_io");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_value_identical() {
        let world = build_world(WorldConfig::default(), 7).unwrap();
        let corpus = sample_corpus(&world, &CorpusConfig { size: 100, ..CorpusConfig::default() }, 21).unwrap();
        let triples = corpus.to_triples();
        let path = tmp("roundtrip.osct");
        save_corpus(&triples, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, triples);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn empty_corpus_round_trips() {
        let path = tmp("empty.osct");
        save_corpus(&[], &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), vec![]);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let path = tmp("bad.osct");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Format(_))));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let path = tmp("trunc.osct");
        std::fs::write(&path, b"OSCT\x01\x00\x00\x00\x05\x00\x00\x00").unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Format(_))));
        std::fs::remove_file(path).ok();
    }
}
