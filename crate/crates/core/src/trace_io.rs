//! `SCTR` binary trace files and CSV export.
//!
//! All integers and floats are little-endian. Blocks are stored in hex-string
//! order (`x_15` first), so a hex dump of the file reads like the CLI output.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SCTR"
//!      4     2  version (u16) = 1
//!      6     1  cipher: 0 aes256, 1 kuznyechik, 2 kuznyechik-masked
//!      7     1  leakage model: 0 hw, 1 hd, 2 single bit
//!      8     1  bit index (single-bit model, else 0)
//!      9     4  trace count N (u32, >= 1)
//!     13     4  samples per trace S (u32)
//!     17     4  samples per event (u32)
//!     21     8  alpha (f64)
//!     29     8  beta (f64)
//!     37     8  sigma (f64)
//!     45     8  noise seed (u64)
//!     53    32  SHA-256 of the key
//!     85     4  event count E (u32)
//!     89        E entries: label length (u16), UTF-8 label, sample offset (u32)
//!               N records: plaintext (16), ciphertext (16), S samples (f32)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::block::{Block, BLOCK_LEN};
use crate::cpa::CorrelationMatrix;
use crate::leakage_sim::{CipherId, EventEntry, LeakageConfig, LeakageModel, Trace, TraceSet};

pub const MAGIC: [u8; 4] = *b"SCTR";
pub const VERSION: u16 = 1;
/// Bytes before the event map.
pub const FIXED_HEADER_LEN: usize = 89;

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an SCTR file (magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported SCTR version {0}")]
    UnsupportedVersion(u16),
    #[error("expected {expected} bytes of trace data, found {got}")]
    LengthMismatch { expected: u64, got: u64 },
    #[error("corrupt header: {0}")]
    Corrupt(String),
    #[error("refusing to write an empty trace set")]
    Empty,
}

fn model_tag(m: LeakageModel) -> (u8, u8) {
    match m {
        LeakageModel::HammingWeight => (0, 0),
        LeakageModel::HammingDistance => (1, 0),
        LeakageModel::SingleBit(b) => (2, b),
    }
}

fn record_len(samples: usize) -> u64 {
    2 * BLOCK_LEN as u64 + 4 * samples as u64
}

/// Serializes `ts`; returns the number of bytes written.
pub fn write_trace_set<W: Write>(ts: &TraceSet, w: W) -> Result<u64, TraceIoError> {
    if ts.is_empty() {
        return Err(TraceIoError::Empty);
    }
    let s = ts.samples_per_trace();
    if let Some(i) = ts.traces.iter().position(|t| t.samples.len() != s) {
        return Err(TraceIoError::Corrupt(format!(
            "trace {i} has {} samples, expected {s}",
            ts.traces[i].samples.len()
        )));
    }
    let mut w = BufWriter::new(w);
    let mut n = 0u64;
    let mut put = |w: &mut BufWriter<W>, bytes: &[u8]| -> io::Result<()> {
        n += bytes.len() as u64;
        w.write_all(bytes)
    };
    let cfg = &ts.config;
    let (tag, bit) = model_tag(cfg.model);
    put(&mut w, &MAGIC)?;
    put(&mut w, &VERSION.to_le_bytes())?;
    put(&mut w, &[ts.cipher.code(), tag, bit])?;
    put(&mut w, &(ts.len() as u32).to_le_bytes())?;
    put(&mut w, &(s as u32).to_le_bytes())?;
    put(&mut w, &cfg.samples_per_event.to_le_bytes())?;
    put(&mut w, &cfg.alpha.to_le_bytes())?;
    put(&mut w, &cfg.beta.to_le_bytes())?;
    put(&mut w, &cfg.sigma.to_le_bytes())?;
    put(&mut w, &cfg.seed.to_le_bytes())?;
    put(&mut w, &ts.key_fingerprint)?;
    put(&mut w, &(ts.events.len() as u32).to_le_bytes())?;
    for e in &ts.events {
        let label = e.label.as_bytes();
        let len = u16::try_from(label.len())
            .map_err(|_| TraceIoError::Corrupt(format!("event label too long: {}", e.label)))?;
        put(&mut w, &len.to_le_bytes())?;
        put(&mut w, label)?;
        put(&mut w, &e.offset.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(record_len(s) as usize);
    for t in &ts.traces {
        buf.clear();
        buf.extend_from_slice(&t.plaintext.to_be_bytes());
        buf.extend_from_slice(&t.ciphertext.to_be_bytes());
        for v in &t.samples {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&mut w, &buf)?;
    }
    w.flush()?;
    Ok(n)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceIoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TraceIoError::Corrupt("header truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], TraceIoError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16, TraceIoError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, TraceIoError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, TraceIoError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, TraceIoError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn read_trace_set<R: Read>(mut r: R) -> Result<TraceSet, TraceIoError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_trace_set(&buf)
}

pub fn parse_trace_set(buf: &[u8]) -> Result<TraceSet, TraceIoError> {
    if buf.len() < 4 || buf[..4] != MAGIC {
        let mut m = [0u8; 4];
        let k = buf.len().min(4);
        m[..k].copy_from_slice(&buf[..k]);
        return Err(TraceIoError::BadMagic(m));
    }
    let mut c = Cursor { buf, pos: 4 };
    let version = c.u16()?;
    if version != VERSION {
        return Err(TraceIoError::UnsupportedVersion(version));
    }
    let [code, tag, bit] = c.array()?;
    let cipher = CipherId::from_code(code).map_err(|e| TraceIoError::Corrupt(e.to_string()))?;
    let model = match tag {
        0 => LeakageModel::HammingWeight,
        1 => LeakageModel::HammingDistance,
        2 if bit < 128 => LeakageModel::SingleBit(bit),
        _ => return Err(TraceIoError::Corrupt(format!("leakage model {tag}/{bit}"))),
    };
    let n = c.u32()? as usize;
    let s = c.u32()? as usize;
    let spe = c.u32()?;
    let config = LeakageConfig {
        model,
        samples_per_event: spe,
        alpha: c.f64()?,
        beta: c.f64()?,
        sigma: c.f64()?,
        seed: c.u64()?,
    };
    let key_fingerprint = c.array()?;
    let n_events = c.u32()? as usize;
    if n == 0 {
        return Err(TraceIoError::Corrupt("trace count is zero".into()));
    }
    if spe == 0 || n_events.checked_mul(spe as usize) != Some(s) {
        return Err(TraceIoError::Corrupt(format!(
            "{n_events} events x {spe} samples does not give {s} samples per trace"
        )));
    }
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let len = c.u16()? as usize;
        let label = std::str::from_utf8(c.take(len)?)
            .map_err(|_| TraceIoError::Corrupt("event label is not UTF-8".into()))?
            .to_string();
        let offset = c.u32()?;
        if offset as usize >= s {
            return Err(TraceIoError::Corrupt(format!(
                "event {label} at {offset} beyond {s}"
            )));
        }
        events.push(EventEntry { label, offset });
    }

    let body = &buf[c.pos..];
    let rec = record_len(s);
    let expected = rec * n as u64;
    if body.len() as u64 != expected {
        return Err(TraceIoError::LengthMismatch {
            expected,
            got: body.len() as u64,
        });
    }
    let traces = body
        .chunks_exact(rec as usize)
        .map(|r| {
            let block = |b: &[u8]| Block::from_be_bytes(b.try_into().expect("16 bytes"));
            Trace {
                plaintext: block(&r[..BLOCK_LEN]),
                ciphertext: block(&r[BLOCK_LEN..2 * BLOCK_LEN]),
                samples: r[2 * BLOCK_LEN..]
                    .chunks_exact(4)
                    .map(|f| f32::from_le_bytes(f.try_into().expect("4 bytes")))
                    .collect(),
            }
        })
        .collect();
    Ok(TraceSet {
        cipher,
        key_fingerprint,
        config,
        events,
        traces,
    })
}

pub fn save_trace_set(ts: &TraceSet, path: &Path) -> Result<u64, TraceIoError> {
    if ts.is_empty() {
        return Err(TraceIoError::Empty);
    }
    write_trace_set(ts, File::create(path)?)
}

pub fn load_trace_set(path: &Path) -> Result<TraceSet, TraceIoError> {
    read_trace_set(BufReader::new(File::open(path)?))
}

/// Column names for each sample: the event label, suffixed with `#k` when
/// an event spans several samples.
pub fn sample_names(ts: &TraceSet) -> Vec<String> {
    let spe = ts.config.samples_per_event as usize;
    let mut names = vec![String::new(); ts.samples_per_trace()];
    for e in &ts.events {
        for k in 0..spe {
            let j = e.offset as usize + k;
            if j < names.len() {
                names[j] = if spe == 1 {
                    e.label.clone()
                } else {
                    format!("{}#{k}", e.label)
                };
            }
        }
    }
    for (j, n) in names.iter_mut().enumerate() {
        if n.is_empty() {
            *n = format!("s{j}");
        }
    }
    names
}

/// One row per trace: index, plaintext, ciphertext, samples.
pub fn export_traces_csv<W: Write>(ts: &TraceSet, w: W) -> io::Result<()> {
    let mut w = BufWriter::new(w);
    write!(w, "trace,plaintext,ciphertext")?;
    for n in sample_names(ts) {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (i, t) in ts.traces.iter().enumerate() {
        write!(w, "{i},{},{}", t.plaintext, t.ciphertext)?;
        for v in &t.samples {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// One row per guess, one column per sample; degenerate cells are empty.
pub fn export_correlation_csv<W: Write>(cm: &CorrelationMatrix, w: W) -> io::Result<()> {
    let mut w = BufWriter::new(w);
    write!(w, "guess")?;
    for j in cm.window() {
        write!(w, ",{j}")?;
    }
    writeln!(w)?;
    for g in 0..=255u8 {
        write!(w, "{g}")?;
        for r in cm.row(g) {
            match r {
                Some(r) => write!(w, ",{r}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()
}
