//! Binary trace container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SCFTRC01"
//! 8       8     n_traces        u64 LE
//! 16      4     n_samples       u32 LE
//! 20      1     sample_dtype    u8   (0 = IEEE-754 binary32 LE)
//! 21      1     flags           u8   (bit0 = variant log present)
//! 22      4     metadata_len    u32 LE
//! 26      ...   metadata        UTF-8 "key=value\n" lines
//! then n_traces records of
//!         16    plaintext
//!         16    ciphertext
//!         4*n_samples samples
//!         variant_log_len variant indices (only when flags bit0 is set;
//!               the length is the `variant_log_len` metadata entry)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::aes::Block128;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"SCFTRC01";
pub const DTYPE_F32: u8 = 0;
pub const FLAG_VARIANT_LOG: u8 = 0b1;
pub const FIXED_HEADER_LEN: u64 = 26;
pub const VARIANT_LOG_KEY: &str = "variant_log_len";

/// Ordered `key=value` pairs. Keys may not contain `=` or newlines, values
/// may not contain newlines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Metadata {
        Metadata::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> Result<String> {
        let mut s = String::new();
        for (k, v) in &self.0 {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Header(format!("unencodable metadata entry {k:?}")));
            }
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Metadata> {
        text.lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Header(format!("metadata line without '=': {l:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Metadata)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSetHeader {
    pub n_traces: u64,
    pub n_samples: u32,
    pub flags: u8,
    pub metadata: Metadata,
}

impl TraceSetHeader {
    pub fn new(n_traces: u64, n_samples: u32, metadata: Metadata) -> TraceSetHeader {
        TraceSetHeader {
            n_traces,
            n_samples,
            flags: 0,
            metadata,
        }
    }

    pub fn has_variant_log(&self) -> bool {
        self.flags & FLAG_VARIANT_LOG != 0
    }

    pub fn variant_log_len(&self) -> Result<usize> {
        if !self.has_variant_log() {
            return Ok(0);
        }
        self.metadata
            .get(VARIANT_LOG_KEY)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Header(format!("variant log flagged but {VARIANT_LOG_KEY} missing")))
    }

    pub fn record_len(&self) -> Result<u64> {
        Ok(32 + 4 * self.n_samples as u64 + self.variant_log_len()? as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flags & !FLAG_VARIANT_LOG != 0 {
            return Err(Error::Header(format!("unknown flag bits {:#04x}", self.flags)));
        }
        self.variant_log_len()?;
        self.metadata.render()?;
        Ok(())
    }

    fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let meta = self.metadata.render()?;
        let meta_len = u32::try_from(meta.len())
            .map_err(|_| Error::Header("metadata longer than 4 GiB".into()))?;
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN as usize + meta.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.n_traces.to_le_bytes());
        out.extend_from_slice(&self.n_samples.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.flags);
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        Ok(out)
    }

    /// Header length on disk, metadata included.
    pub fn encoded_len(&self) -> Result<u64> {
        Ok(FIXED_HEADER_LEN + self.metadata.render()?.len() as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub plaintext: Block128,
    pub ciphertext: Block128,
    pub samples: Vec<f32>,
    pub variant_log: Option<Vec<u8>>,
}

impl TraceRecord {
    pub fn empty(n_samples: usize) -> TraceRecord {
        TraceRecord {
            plaintext: Block128::default(),
            ciphertext: Block128::default(),
            samples: vec![0.0; n_samples],
            variant_log: None,
        }
    }
}

pub struct TraceWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: TraceSetHeader,
    log_len: usize,
    written: u64,
    buf: Vec<u8>,
}

impl TraceWriter {
    pub fn create(path: impl AsRef<Path>, header: TraceSetHeader) -> Result<TraceWriter> {
        let path = path.as_ref().to_path_buf();
        let bytes = header.encode()?;
        let log_len = header.variant_log_len()?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        out.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        Ok(TraceWriter {
            path,
            out,
            header,
            log_len,
            written: 0,
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &TraceSetHeader {
        &self.header
    }

    pub fn write(&mut self, rec: &TraceRecord) -> Result<()> {
        let n = self.header.n_samples as usize;
        if rec.samples.len() != n {
            return Err(Error::Geometry {
                expected: n,
                actual: rec.samples.len(),
            });
        }
        if self.written == self.header.n_traces {
            return Err(Error::CountMismatch {
                declared: self.header.n_traces,
                written: self.written + 1,
            });
        }
        self.buf.clear();
        self.buf.extend_from_slice(&rec.plaintext.0);
        self.buf.extend_from_slice(&rec.ciphertext.0);
        for s in &rec.samples {
            self.buf.extend_from_slice(&s.to_le_bytes());
        }
        if self.header.has_variant_log() {
            match &rec.variant_log {
                Some(log) if log.len() == self.log_len => self.buf.extend_from_slice(log),
                other => {
                    return Err(Error::Geometry {
                        expected: self.log_len,
                        actual: other.as_ref().map_or(0, Vec::len),
                    })
                }
            }
        }
        self.out
            .write_all(&self.buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.n_traces {
            return Err(Error::CountMismatch {
                declared: self.header.n_traces,
                written: self.written,
            });
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_traceset<I>(path: impl AsRef<Path>, header: TraceSetHeader, records: I) -> Result<()>
where
    I: IntoIterator<Item = Result<TraceRecord>>,
{
    let mut w = TraceWriter::create(path, header)?;
    for rec in records {
        w.write(&rec?)?;
    }
    w.finish()
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Header(format!("file ends inside the {what}")),
        _ => Error::io(path, e),
    })
}

/// Streaming reader. Holds one buffered file handle and one record buffer,
/// so memory use does not depend on the number of traces.
pub struct TraceReader {
    path: PathBuf,
    input: BufReader<File>,
    header: TraceSetHeader,
    data_start: u64,
    record_len: u64,
    log_len: usize,
    next: u64,
    end: u64,
    buf: Vec<u8>,
}

impl TraceReader {
    pub fn open(path: impl AsRef<Path>) -> Result<TraceReader> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut input = BufReader::with_capacity(1 << 20, file);

        let mut fixed = [0u8; FIXED_HEADER_LEN as usize];
        read_exact_or(&mut input, &mut fixed, &path, "fixed header")?;
        let magic: [u8; 8] = fixed[0..8].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let n_traces = u64::from_le_bytes(fixed[8..16].try_into().unwrap());
        let n_samples = u32::from_le_bytes(fixed[16..20].try_into().unwrap());
        let dtype = fixed[20];
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        let flags = fixed[21];
        let meta_len = u32::from_le_bytes(fixed[22..26].try_into().unwrap()) as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact_or(&mut input, &mut meta, &path, "metadata")?;
        let meta = String::from_utf8(meta)
            .map_err(|_| Error::Header("metadata is not UTF-8".into()))?;
        let header = TraceSetHeader {
            n_traces,
            n_samples,
            flags,
            metadata: Metadata::parse(&meta)?,
        };
        header.validate()?;

        let data_start = FIXED_HEADER_LEN + meta_len as u64;
        let record_len = header.record_len()?;
        let available = file_len.saturating_sub(data_start);
        let expected = n_traces
            .checked_mul(record_len)
            .ok_or_else(|| Error::Header("n_traces * record length overflows".into()))?;
        if available < expected {
            let record = available / record_len;
            return Err(Error::Truncated {
                record,
                expected: record_len,
                actual: available - record * record_len,
            });
        }
        Ok(TraceReader {
            path,
            input,
            log_len: header.variant_log_len()?,
            header,
            data_start,
            record_len,
            next: 0,
            end: n_traces,
            buf: vec![0u8; record_len as usize],
        })
    }

    /// Reader positioned on records `start..start + count` only.
    pub fn open_range(path: impl AsRef<Path>, start: u64, count: u64) -> Result<TraceReader> {
        let mut r = TraceReader::open(path)?;
        let end = start.saturating_add(count);
        if end > r.header.n_traces {
            return Err(Error::Config(format!(
                "record range {start}..{end} exceeds {} traces",
                r.header.n_traces
            )));
        }
        r.input
            .seek(SeekFrom::Start(r.data_start + start * r.record_len))
            .map_err(|e| Error::io(&r.path, e))?;
        r.next = start;
        r.end = end;
        Ok(r)
    }

    pub fn header(&self) -> &TraceSetHeader {
        &self.header
    }

    pub fn remaining(&self) -> u64 {
        self.end - self.next
    }

    /// Reads the next record into `rec`, reusing its allocations. Returns
    /// `false` once the range is exhausted.
    pub fn read_into(&mut self, rec: &mut TraceRecord) -> Result<bool> {
        if self.next >= self.end {
            return Ok(false);
        }
        let idx = self.next;
        let mut filled = 0usize;
        while filled < self.buf.len() {
            match self.input.read(&mut self.buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Truncated {
                        record: idx,
                        expected: self.record_len,
                        actual: filled as u64,
                    })
                }
                Ok(k) => filled += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io(&self.path, e)),
            }
        }
        let b = &self.buf;
        rec.plaintext.0.copy_from_slice(&b[0..16]);
        rec.ciphertext.0.copy_from_slice(&b[16..32]);
        let n = self.header.n_samples as usize;
        rec.samples.clear();
        rec.samples.extend(
            b[32..32 + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        if self.header.has_variant_log() {
            let log = rec.variant_log.get_or_insert_with(Vec::new);
            log.clear();
            log.extend_from_slice(&b[32 + 4 * n..32 + 4 * n + self.log_len]);
        } else {
            rec.variant_log = None;
        }
        self.next += 1;
        Ok(true)
    }
}

impl Iterator for TraceReader {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut rec = TraceRecord::empty(self.header.n_samples as usize);
        match self.read_into(&mut rec) {
            Ok(true) => Some(Ok(rec)),
            Ok(false) => None,
            Err(e) => {
                // Stop after the first error.
                self.end = self.next;
                Some(Err(e))
            }
        }
    }
}

pub fn read_traceset(path: impl AsRef<Path>) -> Result<(TraceSetHeader, TraceReader)> {
    let r = TraceReader::open(path)?;
    Ok((r.header.clone(), r))
}
