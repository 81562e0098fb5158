//! Frame-level posterior matrices, the VPPM binary format and a synthetic
//! posterior generator.
//!
//! VPPM layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"VPPM"`                         |
//! | 4      | 1    | version, currently 1                    |
//! | 5      | 1    | flags, bit 0 set = natural-log domain   |
//! | 6      | 2    | reserved, zero                          |
//! | 8      | 4    | frames (u32)                            |
//! | 12     | 4    | vocab size (u32)                        |
//! | 16     | 4·T·V| f32 values, row-major                   |
//!
//! In the log domain `-inf` is stored as `f32::MIN`.

use std::collections::HashMap;
use std::io::{self, BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"VPPM";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
const FLAG_LOG: u8 = 1;

/// Tolerance on `|logsumexp(row)|`.
pub const NORM_TOLERANCE: f64 = 1e-4;

pub const BLANK_TOKEN: &str = "<blank>";
pub const BLANK_ID: u32 = 0;

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    VersionMismatch(u8),
    #[error("truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("row {row} not normalized: logsumexp = {logsumexp}")]
    NotNormalized { row: usize, logsumexp: f64 },
    #[error("invalid value {value} at row {row}, column {col}")]
    InvalidValue { row: usize, col: usize, value: f32 },
    #[error("shape {frames}x{vocab_size} does not match {len} values")]
    Shape {
        frames: usize,
        vocab_size: usize,
        len: usize,
    },
    #[error("token id {id} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Read access to a frames × vocab grid of natural-log scores.
///
/// CTC routines are generic over this so they run both on stored posteriors
/// and on unnormalized `f64` grids used for gradient checks.
pub trait LogProbs {
    fn frames(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn log_prob(&self, frame: usize, token: usize) -> f64;
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-major `f64` grid with no normalization requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGrid {
    pub frames: usize,
    pub vocab_size: usize,
    pub values: Vec<f64>,
}

impl LogGrid {
    pub fn new(frames: usize, vocab_size: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), frames * vocab_size, "grid shape mismatch");
        Self {
            frames,
            vocab_size,
            values,
        }
    }
}

impl LogProbs for LogGrid {
    fn frames(&self) -> usize {
        self.frames
    }
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn log_prob(&self, frame: usize, token: usize) -> f64 {
        self.values[frame * self.vocab_size + token]
    }
}

/// Frames × vocab natural-log posteriors, one normalized distribution per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    frames: usize,
    vocab_size: usize,
    values: Vec<f32>,
}

impl PosteriorMatrix {
    pub fn new(frames: usize, vocab_size: usize, values: Vec<f32>) -> Result<Self, PosteriorError> {
        let m = Self::new_unchecked(frames, vocab_size, values)?;
        m.validate()?;
        Ok(m)
    }

    /// Builds a matrix checking only the shape. [`write_posteriors`] still
    /// validates before emitting anything.
    pub fn new_unchecked(
        frames: usize,
        vocab_size: usize,
        values: Vec<f32>,
    ) -> Result<Self, PosteriorError> {
        if values.len() != frames * vocab_size || (frames > 0 && vocab_size == 0) {
            return Err(PosteriorError::Shape {
                frames,
                vocab_size,
                len: values.len(),
            });
        }
        Ok(Self {
            frames,
            vocab_size,
            values,
        })
    }

    /// Normalizes each row of linear-domain values and converts to log.
    pub fn from_linear(frames: usize, vocab_size: usize, values: &[f32]) -> Result<Self, PosteriorError> {
        if values.len() != frames * vocab_size {
            return Err(PosteriorError::Shape {
                frames,
                vocab_size,
                len: values.len(),
            });
        }
        let mut out = Vec::with_capacity(values.len());
        for (row, chunk) in values.chunks(vocab_size.max(1)).enumerate() {
            for (col, &v) in chunk.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(PosteriorError::InvalidValue { row, col, value: v });
                }
            }
            let sum: f64 = chunk.iter().map(|&v| v as f64).sum();
            out.extend(chunk.iter().map(|&v| {
                if v == 0.0 {
                    f32::NEG_INFINITY
                } else {
                    ((v as f64) / sum).ln() as f32
                }
            }));
        }
        Self::new(frames, vocab_size, out)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.vocab_size..(frame + 1) * self.vocab_size]
    }

    pub fn to_grid(&self) -> LogGrid {
        LogGrid::new(
            self.frames,
            self.vocab_size,
            self.values.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn validate(&self) -> Result<(), PosteriorError> {
        for row in 0..self.frames {
            let r = self.row(row);
            for (col, &v) in r.iter().enumerate() {
                if v.is_nan() || v == f32::INFINITY {
                    return Err(PosteriorError::InvalidValue { row, col, value: v });
                }
            }
            let lse = log_sum_exp(r.iter().map(|&v| v as f64));
            if !(lse.abs() <= NORM_TOLERANCE) {
                return Err(PosteriorError::NotNormalized {
                    row,
                    logsumexp: lse,
                });
            }
        }
        Ok(())
    }

    /// Per-frame argmax, ties toward the lowest id.
    pub fn argmax_path(&self) -> Vec<u32> {
        (0..self.frames)
            .map(|t| {
                let mut best = 0;
                let r = self.row(t);
                for (v, &x) in r.iter().enumerate() {
                    if x > r[best] {
                        best = v;
                    }
                }
                best as u32
            })
            .collect()
    }
}

impl LogProbs for PosteriorMatrix {
    fn frames(&self) -> usize {
        self.frames
    }
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn log_prob(&self, frame: usize, token: usize) -> f64 {
        self.values[frame * self.vocab_size + token] as f64
    }
}

/// Writes `m` in VPPM format (log domain) and returns the byte count.
pub fn write_posteriors<W: Write>(m: &PosteriorMatrix, mut sink: W) -> Result<usize, PosteriorError> {
    m.validate()?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.values.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(FLAG_LOG);
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&(m.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(m.vocab_size as u32).to_le_bytes());
    for &v in &m.values {
        let stored = if v == f32::NEG_INFINITY { f32::MIN } else { v };
        buf.extend_from_slice(&stored.to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

fn read_up_to<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn read_posteriors<R: Read>(mut source: R) -> Result<PosteriorMatrix, PosteriorError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(&mut source, &mut header)?;
    if got >= 4 && &header[..4] != MAGIC {
        return Err(PosteriorError::BadMagic(header[..4].try_into().unwrap()));
    }
    if got < HEADER_LEN {
        return Err(PosteriorError::Truncated {
            expected: HEADER_LEN,
            actual: got,
        });
    }
    if header[4] != VERSION {
        return Err(PosteriorError::VersionMismatch(header[4]));
    }
    let log_domain = header[5] & FLAG_LOG != 0;
    let frames = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let vocab_size = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let expected = frames
        .checked_mul(vocab_size)
        .and_then(|n| n.checked_mul(4))
        .ok_or(PosteriorError::Shape {
            frames,
            vocab_size,
            len: 0,
        })?;
    let mut payload = Vec::new();
    source.take(expected as u64).read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(PosteriorError::Truncated {
            expected: HEADER_LEN + expected,
            actual: HEADER_LEN + payload.len(),
        });
    }
    let raw = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    if log_domain {
        let values = raw
            .map(|v| if v == f32::MIN { f32::NEG_INFINITY } else { v })
            .collect();
        PosteriorMatrix::new(frames, vocab_size, values)
    } else {
        let values: Vec<f32> = raw.collect();
        PosteriorMatrix::from_linear(frames, vocab_size, &values)
    }
}

/// Token list for one decoder stream; id = position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("line {line}: duplicate token {token:?}")]
    Duplicate { line: usize, token: String },
    #[error("CTC vocab must start with {BLANK_TOKEN:?}, found {0:?}")]
    MissingBlank(String),
    #[error("vocab is empty")]
    Empty,
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl StreamVocab {
    pub fn new(tokens: Vec<String>) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(VocabError::Duplicate {
                    line: i + 1,
                    token: t.clone(),
                });
            }
        }
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        Ok(Self { tokens, index })
    }

    /// Like [`StreamVocab::new`] but requires `<blank>` at id 0.
    pub fn ctc(tokens: Vec<String>) -> Result<Self, VocabError> {
        match tokens.first() {
            Some(t) if t == BLANK_TOKEN => Self::new(tokens),
            Some(t) => Err(VocabError::MissingBlank(t.clone())),
            None => Err(VocabError::Empty),
        }
    }

    /// Blank followed by the given tokens.
    pub fn ctc_with<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![BLANK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        Self::ctc(all)
    }

    pub fn load<R: BufRead>(source: R) -> Result<Self, VocabError> {
        let tokens = source
            .lines()
            .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::ctc(tokens)
    }

    pub fn write<W: Write>(&self, mut sink: W) -> io::Result<()> {
        for t in &self.tokens {
            writeln!(sink, "{t}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Concatenates tokens, joined by `sep`.
    pub fn render(&self, ids: &[u32], sep: &str) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(sep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub vocab_size: usize,
    pub frames_per_token: usize,
    pub blank_gap: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Logit margin of the intended token at zero noise.
const SHARP: f64 = 40.0;

/// Generates posteriors whose argmax path collapses to `target` at zero noise.
///
/// Each frame has a peak token, normally the intended one (blank in gaps).
/// With probability `noise` the peak moves to a uniformly random token, and
/// off-peak logits get uniform jitter scaled by `noise`.
pub fn synth_posteriors(target: &[u32], p: &SynthParams) -> Result<PosteriorMatrix, PosteriorError> {
    assert!(p.frames_per_token >= 1, "frames_per_token must be >= 1");
    assert!((0.0..=1.0).contains(&p.noise), "noise must lie in [0, 1]");
    let v = p.vocab_size;
    if let Some(&id) = target.iter().find(|&&id| id as usize >= v || id == BLANK_ID) {
        return Err(PosteriorError::TokenOutOfRange { id, vocab_size: v });
    }
    let mut path = vec![BLANK_ID; p.blank_gap];
    for (i, &tok) in target.iter().enumerate() {
        if i > 0 && p.blank_gap == 0 && target[i - 1] == tok {
            path.push(BLANK_ID);
        }
        path.extend(std::iter::repeat_n(tok, p.frames_per_token));
        path.extend(std::iter::repeat_n(BLANK_ID, p.blank_gap));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut values = Vec::with_capacity(path.len() * v);
    let mut logits = vec![0.0f64; v];
    for &intended in &path {
        let peak = if p.noise > 0.0 && rng.gen::<f64>() < p.noise {
            rng.gen_range(0..v)
        } else {
            intended as usize
        };
        for (k, l) in logits.iter_mut().enumerate() {
            *l = if k == peak {
                SHARP
            } else if p.noise > 0.0 {
                p.noise * SHARP * rng.gen::<f64>()
            } else {
                0.0
            };
        }
        let lse = log_sum_exp(logits.iter().copied());
        values.extend(logits.iter().map(|l| (l - lse) as f32));
    }
    PosteriorMatrix::new(path.len(), v, values)
}
