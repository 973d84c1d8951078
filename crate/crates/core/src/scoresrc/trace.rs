//! Binary stream traces.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header, 32 bytes:
//!   magic "SKVT" | version u32 | L u32 | M u32 | d_model u32 | d u32 | frame_count u32 | reserved u32
//! records, in (frame, layer) order, L per frame:
//!   frame u32 | layer u32 | hidden M×d_model f64 | keys M×d f64 | values M×d f64 | raw_scores M f64
//! ```
//!
//! Matrices are stored row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FrameActivations;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"SKVT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceDims {
    pub num_layers: usize,
    pub tokens_per_frame: usize,
    pub model_dim: usize,
    pub key_dim: usize,
}

impl TraceDims {
    pub fn of(a: &FrameActivations, num_layers: usize) -> Self {
        Self {
            num_layers,
            tokens_per_frame: a.tokens(),
            model_dim: a.hidden.cols(),
            key_dim: a.keys.cols(),
        }
    }

    /// Size of one record in bytes.
    pub fn record_len(&self) -> u64 {
        let m = self.tokens_per_frame as u64;
        8 + 8 * m * (self.model_dim as u64 + 2 * self.key_dim as u64 + 1)
    }

    fn check(&self, a: &FrameActivations) -> Result<()> {
        let checks = [
            ("trace tokens", self.tokens_per_frame, a.tokens()),
            ("trace model width", self.model_dim, a.hidden.cols()),
            ("trace key width", self.key_dim, a.keys.cols()),
            ("trace value width", self.key_dim, a.values.cols()),
            ("trace hidden rows", self.tokens_per_frame, a.hidden.rows()),
            ("trace key rows", self.tokens_per_frame, a.keys.rows()),
            ("trace value rows", self.tokens_per_frame, a.values.rows()),
        ];
        for (context, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| {
        Error::Io(std::io::Error::new(
            ErrorKind::InvalidInput,
            format!("{what} {v} does not fit in u32"),
        ))
    })
}

/// Streaming trace writer. The frame count in the header is patched by
/// [`TraceWriter::finish`].
pub struct TraceWriter<W: Write + Seek> {
    out: W,
    dims: TraceDims,
    next_frame: usize,
    next_layer: usize,
}

impl TraceWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, dims: TraceDims) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), dims)
    }
}

impl<W: Write + Seek> TraceWriter<W> {
    pub fn new(mut out: W, dims: TraceDims) -> Result<Self> {
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            to_u32(dims.num_layers, "layer count")?,
            to_u32(dims.tokens_per_frame, "token count")?,
            to_u32(dims.model_dim, "model width")?,
            to_u32(dims.key_dim, "key width")?,
            0,
            0,
        ] {
            header.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&header)?;
        Ok(Self {
            out,
            dims,
            next_frame: 0,
            next_layer: 0,
        })
    }

    pub fn dims(&self) -> TraceDims {
        self.dims
    }

    /// Appends one record; records must arrive in (frame, layer) order.
    pub fn write(&mut self, a: &FrameActivations) -> Result<()> {
        self.dims.check(a)?;
        if (a.frame_index, a.layer_index) != (self.next_frame, self.next_layer) {
            return Err(Error::Io(std::io::Error::new(
                ErrorKind::InvalidInput,
                format!(
                    "record ({}, {}) out of order, expected ({}, {})",
                    a.frame_index, a.layer_index, self.next_frame, self.next_layer
                ),
            )));
        }
        let mut buf = Vec::with_capacity(self.dims.record_len() as usize);
        buf.extend_from_slice(&to_u32(a.frame_index, "frame index")?.to_le_bytes());
        buf.extend_from_slice(&to_u32(a.layer_index, "layer index")?.to_le_bytes());
        for v in a
            .hidden
            .as_slice()
            .iter()
            .chain(a.keys.as_slice())
            .chain(a.values.as_slice())
            .chain(&a.raw_scores)
        {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.next_layer += 1;
        if self.next_layer == self.dims.num_layers {
            self.next_layer = 0;
            self.next_frame += 1;
        }
        Ok(())
    }

    /// Writes the frame count into the header and flushes. Fails if the last
    /// frame is incomplete.
    pub fn finish(mut self) -> Result<W> {
        if self.next_layer != 0 {
            return Err(Error::Io(std::io::Error::new(
                ErrorKind::InvalidInput,
                format!("frame {} is missing layers", self.next_frame),
            )));
        }
        self.out.seek(SeekFrom::Start(24))?;
        self.out
            .write_all(&to_u32(self.next_frame, "frame count")?.to_le_bytes())?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes `records` as a trace. The layer count is the number of records of
/// the first frame; an empty slice yields a header-only trace.
pub fn save_trace(records: &[FrameActivations], path: impl AsRef<Path>) -> Result<()> {
    let dims = match records.first() {
        Some(first) => {
            let layers = records
                .iter()
                .take_while(|r| r.frame_index == first.frame_index)
                .count();
            TraceDims::of(first, layers)
        }
        None => TraceDims::default(),
    };
    let mut w = TraceWriter::create(path, dims)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

/// Streaming trace reader yielding one record at a time.
pub struct TraceReader<R: Read> {
    input: R,
    dims: TraceDims,
    frame_count: usize,
    offset: u64,
    next_frame: usize,
    next_layer: usize,
    failed: bool,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

fn format_err(offset: u64, reason: impl Into<String>) -> Error {
    Error::TraceFormat {
        offset,
        reason: reason.into(),
    }
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN as usize];
        let got = read_full(&mut input, &mut header)?;
        if got < header.len() {
            return Err(format_err(got as u64, "truncated header"));
        }
        if &header[..4] != MAGIC {
            return Err(format_err(0, "bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
        if word(1) != VERSION {
            return Err(format_err(4, format!("unsupported version {}", word(1))));
        }
        let dims = TraceDims {
            num_layers: word(2) as usize,
            tokens_per_frame: word(3) as usize,
            model_dim: word(4) as usize,
            key_dim: word(5) as usize,
        };
        let frame_count = word(6) as usize;
        if frame_count > 0
            && (dims.num_layers == 0 || dims.tokens_per_frame == 0 || dims.key_dim == 0)
        {
            return Err(format_err(8, "zero dimension in a non-empty trace"));
        }
        Ok(Self {
            input,
            dims,
            frame_count,
            offset: HEADER_LEN,
            next_frame: 0,
            next_layer: 0,
            failed: false,
        })
    }

    pub fn dims(&self) -> TraceDims {
        self.dims
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn read_record(&mut self) -> Result<FrameActivations> {
        let start = self.offset;
        let mut buf = vec![0u8; self.dims.record_len() as usize];
        let got = read_full(&mut self.input, &mut buf)?;
        self.offset += got as u64;
        if got < buf.len() {
            return Err(format_err(self.offset, "truncated record"));
        }
        let frame = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
        let layer = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        if layer >= self.dims.num_layers {
            return Err(format_err(
                start + 4,
                format!(
                    "layer {layer} out of range for {} layers",
                    self.dims.num_layers
                ),
            ));
        }
        if (frame, layer) != (self.next_frame, self.next_layer) {
            return Err(format_err(
                start,
                format!(
                    "record ({frame}, {layer}) out of order, expected ({}, {})",
                    self.next_frame, self.next_layer
                ),
            ));
        }
        let mut floats = buf[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let m = self.dims.tokens_per_frame;
        let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f64>>();
        let hidden = Matrix::from_vec(m, self.dims.model_dim, take(m * self.dims.model_dim));
        let keys = Matrix::from_vec(m, self.dims.key_dim, take(m * self.dims.key_dim));
        let values = Matrix::from_vec(m, self.dims.key_dim, take(m * self.dims.key_dim));
        let raw_scores = take(m);
        let record = FrameActivations {
            frame_index: frame,
            layer_index: layer,
            hidden,
            keys,
            values,
            raw_scores,
        };
        record
            .validate()
            .map_err(|e| format_err(start, format!("invalid record: {e}")))?;
        self.next_layer += 1;
        if self.next_layer == self.dims.num_layers {
            self.next_layer = 0;
            self.next_frame += 1;
        }
        Ok(record)
    }

    fn check_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        if read_full(&mut self.input, &mut probe)? != 0 {
            return Err(format_err(
                self.offset,
                "trailing bytes after the last record",
            ));
        }
        Ok(())
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<FrameActivations>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let res = if self.next_frame >= self.frame_count {
            self.failed = true;
            return self.check_eof().err().map(Err);
        } else {
            self.read_record()
        };
        if res.is_err() {
            self.failed = true;
        }
        Some(res)
    }
}

/// Reads every record of a trace file.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<FrameActivations>> {
    TraceReader::open(path)?.collect()
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(n)
}
