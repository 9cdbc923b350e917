//! SEMV1 binary container.
//!
//! ```text
//! "SEMV" | version u8 = 1 | model len u8 + bytes | doc-id len u8 + bytes
//! | n u32 LE | d u32 LE | [similarity only: flag u8 (0 raw, 1 z-scored)
//! | z-scored only: mu f64 LE, sigma f64 LE] | n*d f32 LE row-major
//! | CRC32 (u32 LE) of the value bytes
//! ```
//!
//! Embedding files stop the header after `d`. Similarity matrices use the
//! same layout with `d = n` plus the flag byte, so callers must know which
//! kind they are reading.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::embedding::{EmbeddingMatrix, ModelId};
use crate::error::{Error, Result};
use crate::ssm::{Ssm, StandardizedSsm};

pub const MAGIC: &[u8; 4] = b"SEMV";
pub const VERSION: u8 = 1;

const FLAG_RAW: u8 = 0;
const FLAG_STANDARDIZED: u8 = 1;

/// A similarity matrix read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum SimilarityFile {
    Raw(Ssm),
    Standardized(StandardizedSsm),
}

struct Header {
    model: String,
    doc_id: String,
    n: usize,
    d: usize,
}

fn put_short_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u8::try_from(s.len()).map_err(|_| Error::FieldTooLong(s.chars().take(40).collect()))?;
    out.push(len);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn header_bytes(model: &str, doc_id: &str, n: usize, d: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_short_str(&mut out, model)?;
    put_short_str(&mut out, doc_id)?;
    let n32 = u32::try_from(n).map_err(|_| Error::FieldTooLong(format!("n = {n}")))?;
    let d32 = u32::try_from(d).map_err(|_| Error::FieldTooLong(format!("d = {d}")))?;
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    Ok(out)
}

fn write_payload(mut w: impl Write, header: &[u8], values: &[f32]) -> std::io::Result<()> {
    w.write_all(header)?;
    let mut crc = crc32fast::Hasher::new();
    let mut buf = Vec::with_capacity(64 * 1024);
    for chunk in values.chunks(16 * 1024) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        crc.update(&buf);
        w.write_all(&buf)?;
    }
    w.write_all(&crc.finalize().to_le_bytes())?;
    w.flush()
}

fn write_file(path: &Path, header: &[u8], values: &[f32]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::write(path, e))?;
    write_payload(BufWriter::new(file), header, values).map_err(|e| Error::write(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).ok_or(Error::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn short_str(&mut self) -> Result<String> {
        let len = self.u8()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::WrongKind("non-UTF-8 label".into()))
    }
}

fn read_header(c: &mut Cursor<'_>) -> Result<Header> {
    if c.buf.len() < 4 || &c.buf[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    c.pos = 4;
    let version = c.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let model = c.short_str()?;
    let doc_id = c.short_str()?;
    let n = c.u32()? as usize;
    let d = c.u32()? as usize;
    Ok(Header { model, doc_id, n, d })
}

fn read_values(c: &mut Cursor<'_>, count: usize) -> Result<Vec<f32>> {
    let bytes = count.checked_mul(4).ok_or(Error::Truncated)?;
    let payload = c.take(bytes)?;
    let stored = c.u32()?;
    if c.pos != c.buf.len() {
        return Err(Error::TrailingBytes);
    }
    if crc32fast::hash(payload) != stored {
        return Err(Error::ChecksumMismatch);
    }
    Ok(payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::read(path, e))
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let header = header_bytes(m.model().as_str(), m.doc_id(), m.n(), m.d())?;
    let mut out = Vec::with_capacity(header.len() + m.values().len() * 4 + 4);
    write_payload(&mut out, &header, m.values()).expect("writing to Vec cannot fail");
    Ok(out)
}

pub fn decode_embeddings(buf: &[u8]) -> Result<EmbeddingMatrix> {
    let mut c = Cursor { buf, pos: 0 };
    let h = read_header(&mut c)?;
    let values = read_values(&mut c, h.n.checked_mul(h.d).ok_or(Error::Truncated)?)?;
    EmbeddingMatrix::new(ModelId::new(h.model)?, h.doc_id, h.n, h.d, values)
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let header = header_bytes(m.model().as_str(), m.doc_id(), m.n(), m.d())?;
    write_file(path.as_ref(), &header, m.values())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    decode_embeddings(&read_bytes(path.as_ref())?)
}

fn ssm_header(model: &ModelId, doc_id: &str, n: usize, stats: Option<(f64, f64)>) -> Result<Vec<u8>> {
    let mut h = header_bytes(model.as_str(), doc_id, n, n)?;
    match stats {
        None => h.push(FLAG_RAW),
        Some((mu, sigma)) => {
            h.push(FLAG_STANDARDIZED);
            h.extend_from_slice(&mu.to_le_bytes());
            h.extend_from_slice(&sigma.to_le_bytes());
        }
    }
    Ok(h)
}

pub fn write_ssm(s: &Ssm, path: impl AsRef<Path>) -> Result<()> {
    let h = ssm_header(&s.model, &s.doc_id, s.n(), None)?;
    write_file(path.as_ref(), &h, s.values())
}

pub fn write_standardized(z: &StandardizedSsm, path: impl AsRef<Path>) -> Result<()> {
    let h = ssm_header(&z.model, &z.doc_id, z.n(), Some((z.mu, z.sigma)))?;
    write_file(path.as_ref(), &h, z.values())
}

pub fn decode_similarity(buf: &[u8]) -> Result<SimilarityFile> {
    let mut c = Cursor { buf, pos: 0 };
    let h = read_header(&mut c)?;
    if h.n != h.d {
        return Err(Error::WrongKind(format!("similarity matrix must be square, got {}x{}", h.n, h.d)));
    }
    let model = ModelId::new(h.model)?;
    match c.u8()? {
        FLAG_RAW => {
            let values = read_values(&mut c, h.n * h.n)?;
            Ok(SimilarityFile::Raw(Ssm::new(model, h.doc_id, h.n, values)?))
        }
        FLAG_STANDARDIZED => {
            let mu = c.f64()?;
            let sigma = c.f64()?;
            let values = read_values(&mut c, h.n * h.n)?;
            Ok(SimilarityFile::Standardized(StandardizedSsm::new(
                model, h.doc_id, h.n, values, mu, sigma,
            )?))
        }
        other => Err(Error::WrongKind(format!("unknown similarity flag {other}"))),
    }
}

pub fn read_similarity(path: impl AsRef<Path>) -> Result<SimilarityFile> {
    decode_similarity(&read_bytes(path.as_ref())?)
}

pub fn read_standardized(path: impl AsRef<Path>) -> Result<StandardizedSsm> {
    match read_similarity(path)? {
        SimilarityFile::Standardized(z) => Ok(z),
        SimilarityFile::Raw(_) => Err(Error::WrongKind("expected a standardized SSM, found raw".into())),
    }
}

pub fn read_ssm(path: impl AsRef<Path>) -> Result<Ssm> {
    match read_similarity(path)? {
        SimilarityFile::Raw(s) => Ok(s),
        SimilarityFile::Standardized(_) => Err(Error::WrongKind("expected a raw SSM, found standardized".into())),
    }
}
