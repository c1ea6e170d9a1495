//! Hidden-state trace data model and the `AERT` binary container.
//!
//! A container holds one [`TraceDataset`]: a header (magic, schema version,
//! hidden dimension, record count) followed by length-prefixed records. All
//! integers and floats are little-endian; floats are stored as `f32` and
//! round-trip bit-exactly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_MAGIC: &[u8; 4] = b"AERT";
pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload")]
    Truncated,
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("trace {trace_id}: {violation}")]
    Invalid {
        trace_id: String,
        violation: Violation,
    },
    #[error("duplicate trace_id {0}")]
    DuplicateId(String),
    #[error("dangling pair_id {pair_id} on trace {trace_id}")]
    DanglingPair { trace_id: String, pair_id: String },
    #[error("json export failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Safety label of one generation. Onsets are 1-based over response tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Safe,
    Unsafe { onset: Option<usize> },
    PromptOnly,
}

impl Label {
    pub fn is_unsafe(&self) -> bool {
        matches!(self, Label::Unsafe { .. })
    }

    fn code(&self) -> u8 {
        match self {
            Label::Safe => 0,
            Label::Unsafe { .. } => 1,
            Label::PromptOnly => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairSide {
    SafeSide,
    UnsafeSide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoleTag {
    SupportPositive,
    SupportNegative,
    Pair { pair_id: String, side: PairSide },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Cal,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Cal, Split::Dev, Split::Test];

    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Cal => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }

    fn from_code(code: u8) -> Option<Split> {
        Split::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Cal => "cal",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "cal" | "calibration" => Ok(Split::Cal),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One recorded generation: prompt summary, per-token hidden states and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub hidden_dim: usize,
    pub token_count: usize,
    pub prompt_summary: Vec<f32>,
    /// Row-major `token_count x hidden_dim`.
    pub frames: Vec<f32>,
    pub label: Label,
    pub split: Split,
    pub role_tags: Vec<RoleTag>,
    pub meta: BTreeMap<String, String>,
}

impl TraceRecord {
    /// Hidden state at 1-based token index `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let d = self.hidden_dim;
        &self.frames[(t - 1) * d..t * d]
    }

    pub fn frame_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.frames.chunks_exact(self.hidden_dim.max(1))
    }

    pub fn has_tag(&self, tag: &RoleTag) -> bool {
        self.role_tags.contains(tag)
    }

    pub fn pair(&self) -> Option<(&str, PairSide)> {
        self.role_tags.iter().find_map(|t| match t {
            RoleTag::Pair { pair_id, side } => Some((pair_id.as_str(), *side)),
            _ => None,
        })
    }

    pub fn is_support_positive(&self) -> bool {
        self.has_tag(&RoleTag::SupportPositive)
    }

    pub fn is_support_negative(&self) -> bool {
        self.has_tag(&RoleTag::SupportNegative)
    }
}

/// A single invariant failure found by [`validate_trace`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    EmptyTraceId,
    HiddenDimMismatch { expected: usize, found: usize },
    PromptLength { expected: usize, found: usize },
    FrameShape { expected: usize, found: usize },
    NonFinite,
    OnsetOutOfRange { onset: usize, token_count: usize },
    PromptOnlyWithFrames { token_count: usize },
    FieldTooLong { field: &'static str },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::EmptyTraceId => "empty trace id",
            Violation::HiddenDimMismatch { .. } => "hidden dim mismatch",
            Violation::PromptLength { .. } => "prompt summary length",
            Violation::FrameShape { .. } => "frame matrix shape",
            Violation::NonFinite => "non-finite value",
            Violation::OnsetOutOfRange { .. } => "onset out of range",
            Violation::PromptOnlyWithFrames { .. } => "prompt-only record with frames",
            Violation::FieldTooLong { .. } => "field too long",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::HiddenDimMismatch { expected, found }
            | Violation::PromptLength { expected, found }
            | Violation::FrameShape { expected, found } => {
                write!(f, "{} (expected {expected}, found {found})", self.code())
            }
            Violation::OnsetOutOfRange { onset, token_count } => {
                write!(f, "{} (onset {onset}, T = {token_count})", self.code())
            }
            Violation::PromptOnlyWithFrames { token_count } => {
                write!(f, "{} (T = {token_count})", self.code())
            }
            Violation::FieldTooLong { field } => write!(f, "{} ({field})", self.code()),
            _ => f.write_str(self.code()),
        }
    }
}

/// Checks every per-record invariant against hidden dimension `d`.
pub fn validate_trace(record: &TraceRecord, d: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.trace_id.is_empty() {
        out.push(Violation::EmptyTraceId);
    }
    if record.trace_id.len() > u16::MAX as usize {
        out.push(Violation::FieldTooLong { field: "trace_id" });
    }
    if record.hidden_dim != d {
        out.push(Violation::HiddenDimMismatch {
            expected: d,
            found: record.hidden_dim,
        });
    }
    if record.prompt_summary.len() != d {
        out.push(Violation::PromptLength {
            expected: d,
            found: record.prompt_summary.len(),
        });
    }
    let expected_frames = record.token_count * d;
    if record.frames.len() != expected_frames {
        out.push(Violation::FrameShape {
            expected: expected_frames,
            found: record.frames.len(),
        });
    }
    let finite = record
        .prompt_summary
        .iter()
        .chain(record.frames.iter())
        .all(|v| v.is_finite());
    if !finite {
        out.push(Violation::NonFinite);
    }
    match record.label {
        Label::Unsafe { onset: Some(o) } if o < 1 || o > record.token_count => {
            out.push(Violation::OnsetOutOfRange {
                onset: o,
                token_count: record.token_count,
            });
        }
        Label::PromptOnly if record.token_count != 0 => {
            out.push(Violation::PromptOnlyWithFrames {
                token_count: record.token_count,
            });
        }
        _ => {}
    }
    for tag in &record.role_tags {
        if let RoleTag::Pair { pair_id, .. } = tag {
            if pair_id.len() > u16::MAX as usize {
                out.push(Violation::FieldTooLong { field: "pair_id" });
            }
        }
    }
    if record.role_tags.len() > u16::MAX as usize {
        out.push(Violation::FieldTooLong { field: "role_tags" });
    }
    if record.meta.len() > u16::MAX as usize
        || record
            .meta
            .iter()
            .any(|(k, v)| k.len() > u16::MAX as usize || v.len() > u16::MAX as usize)
    {
        out.push(Violation::FieldTooLong { field: "meta" });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDataset {
    pub schema_version: u32,
    pub hidden_dim: usize,
    pub records: Vec<TraceRecord>,
}

impl TraceDataset {
    pub fn new(hidden_dim: usize) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            hidden_dim,
            records: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TraceRecord> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_tags(&self) -> BTreeMap<&str, Split> {
        self.records
            .iter()
            .map(|r| (r.trace_id.as_str(), r.split))
            .collect()
    }

    pub fn get(&self, trace_id: &str) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.trace_id == trace_id)
    }

    /// Validates record invariants plus dataset-level ones (unique ids, paired sides).
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut seen = HashSet::with_capacity(self.records.len());
        let mut sides: HashMap<&str, (bool, bool)> = HashMap::new();
        for record in &self.records {
            if let Some(v) = validate_trace(record, self.hidden_dim).into_iter().next() {
                return Err(TraceError::Invalid {
                    trace_id: record.trace_id.clone(),
                    violation: v,
                });
            }
            if !seen.insert(record.trace_id.as_str()) {
                return Err(TraceError::DuplicateId(record.trace_id.clone()));
            }
            for tag in &record.role_tags {
                if let RoleTag::Pair { pair_id, side } = tag {
                    let entry = sides.entry(pair_id.as_str()).or_default();
                    match side {
                        PairSide::SafeSide => entry.0 = true,
                        PairSide::UnsafeSide => entry.1 = true,
                    }
                }
            }
        }
        for record in &self.records {
            if let Some((pair_id, _)) = record.pair() {
                if sides.get(pair_id) != Some(&(true, true)) {
                    return Err(TraceError::DanglingPair {
                        trace_id: record.trace_id.clone(),
                        pair_id: pair_id.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Collects every violation in the dataset instead of stopping at the first.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut sides: HashMap<&str, (bool, bool)> = HashMap::new();
        for record in &self.records {
            for v in validate_trace(record, self.hidden_dim) {
                out.push((record.trace_id.clone(), v.to_string()));
            }
            if !seen.insert(record.trace_id.as_str()) {
                out.push((record.trace_id.clone(), "duplicate trace_id".into()));
            }
            if let Some((pair_id, side)) = record.pair() {
                let entry = sides.entry(pair_id).or_default();
                match side {
                    PairSide::SafeSide => entry.0 = true,
                    PairSide::UnsafeSide => entry.1 = true,
                }
            }
        }
        for record in &self.records {
            if let Some((pair_id, _)) = record.pair() {
                if sides.get(pair_id) != Some(&(true, true)) {
                    out.push((
                        record.trace_id.clone(),
                        format!("dangling pair_id {pair_id}"),
                    ));
                }
            }
        }
        out
    }
}

/// Serializes `dataset` into container bytes after validating it.
pub fn encode_dataset(dataset: &TraceDataset) -> Result<Vec<u8>, TraceError> {
    dataset.validate()?;
    let d = dataset.hidden_dim;
    let frame_bytes: usize = dataset.records.iter().map(|r| r.frames.len() * 4).sum();
    let mut buf = Vec::with_capacity(32 + frame_bytes + dataset.records.len() * (64 + d * 4));
    buf.extend_from_slice(TRACE_MAGIC);
    buf.extend_from_slice(&dataset.schema_version.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.records.len() as u64).to_le_bytes());
    for r in &dataset.records {
        put_str(&mut buf, &r.trace_id);
        buf.push(r.label.code());
        let onset: i64 = match r.label {
            Label::Unsafe { onset: Some(o) } => o as i64 - 1,
            _ => -1,
        };
        buf.extend_from_slice(&onset.to_le_bytes());
        buf.push(r.split.code());
        buf.extend_from_slice(&(r.role_tags.len() as u16).to_le_bytes());
        for tag in &r.role_tags {
            match tag {
                RoleTag::SupportPositive => buf.push(0),
                RoleTag::SupportNegative => buf.push(1),
                RoleTag::Pair { pair_id, side } => {
                    buf.push(2);
                    put_str(&mut buf, pair_id);
                    buf.push(match side {
                        PairSide::SafeSide => 0,
                        PairSide::UnsafeSide => 1,
                    });
                }
            }
        }
        buf.extend_from_slice(&(r.token_count as u64).to_le_bytes());
        put_f32s(&mut buf, &r.prompt_summary);
        put_f32s(&mut buf, &r.frames);
        buf.extend_from_slice(&(r.meta.len() as u16).to_le_bytes());
        for (k, v) in &r.meta {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
    }
    Ok(buf)
}

pub fn write_dataset(dataset: &TraceDataset, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let bytes = encode_dataset(dataset)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<TraceDataset, TraceError> {
    let bytes = fs::read(path)?;
    decode_dataset(&bytes)
}

/// Parses and validates container bytes. Never repairs.
pub fn decode_dataset(bytes: &[u8]) -> Result<TraceDataset, TraceError> {
    let dataset = parse_dataset(bytes)?;
    dataset.validate()?;
    Ok(dataset)
}

/// Parses container bytes without checking record invariants, so that
/// [`TraceDataset::violations`] can report every problem at once.
pub fn parse_dataset(bytes: &[u8]) -> Result<TraceDataset, TraceError> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4)? != TRACE_MAGIC {
        return Err(TraceError::BadMagic);
    }
    let version = cur.u32()?;
    if version != TRACE_SCHEMA_VERSION {
        return Err(TraceError::UnsupportedVersion(version));
    }
    let d = cur.u32()? as usize;
    let count = cur.u64()?;
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let trace_id = cur.string()?;
        let label_code = cur.u8()?;
        let onset = cur.i64()?;
        let split_code = cur.u8()?;
        let split = Split::from_code(split_code)
            .ok_or_else(|| TraceError::Malformed(format!("split code {split_code}")))?;
        let tag_count = cur.u16()?;
        let mut role_tags = Vec::with_capacity(tag_count as usize);
        for _ in 0..tag_count {
            let tag = match cur.u8()? {
                0 => RoleTag::SupportPositive,
                1 => RoleTag::SupportNegative,
                2 => {
                    let pair_id = cur.string()?;
                    let side = match cur.u8()? {
                        0 => PairSide::SafeSide,
                        1 => PairSide::UnsafeSide,
                        other => return Err(TraceError::Malformed(format!("pair side {other}"))),
                    };
                    RoleTag::Pair { pair_id, side }
                }
                other => return Err(TraceError::Malformed(format!("tag code {other}"))),
            };
            role_tags.push(tag);
        }
        let token_count = usize::try_from(cur.u64()?)
            .map_err(|_| TraceError::Malformed("token count overflow".into()))?;
        let label = match label_code {
            0 => Label::Safe,
            1 => Label::Unsafe {
                onset: match onset {
                    -1 => None,
                    o if o >= 0 => Some(o as usize + 1),
                    o => return Err(TraceError::Malformed(format!("onset {o}"))),
                },
            },
            2 => Label::PromptOnly,
            other => return Err(TraceError::Malformed(format!("label code {other}"))),
        };
        let prompt_summary = cur.f32s(d)?;
        let n_frames = token_count
            .checked_mul(d)
            .ok_or_else(|| TraceError::Malformed("frame count overflow".into()))?;
        let frames = cur.f32s(n_frames)?;
        let meta_count = cur.u16()?;
        let mut meta = BTreeMap::new();
        for _ in 0..meta_count {
            let k = cur.string()?;
            let v = cur.string()?;
            meta.insert(k, v);
        }
        records.push(TraceRecord {
            trace_id,
            hidden_dim: d,
            token_count,
            prompt_summary,
            frames,
            label,
            split,
            role_tags,
            meta,
        });
    }
    if cur.remaining() != 0 {
        return Err(TraceError::Malformed(format!(
            "{} trailing bytes",
            cur.remaining()
        )));
    }
    Ok(TraceDataset {
        schema_version: version,
        hidden_dim: d,
        records,
    })
}

/// Debug-only JSON view of a dataset; the binary container stays canonical.
pub fn export_json_manifest(dataset: &TraceDataset) -> Result<String, TraceError> {
    Ok(serde_json::to_string_pretty(dataset)?)
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceError> {
        if self.remaining() < n {
            return Err(TraceError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], TraceError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, TraceError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TraceError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, TraceError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, TraceError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64, TraceError> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, TraceError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| TraceError::Malformed("invalid utf-8".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, TraceError> {
        let len = n.checked_mul(4).ok_or(TraceError::Truncated)?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, d: usize, t: usize, label: Label) -> TraceRecord {
        TraceRecord {
            trace_id: id.to_string(),
            hidden_dim: d,
            token_count: t,
            prompt_summary: vec![0.5; d],
            frames: (0..t * d).map(|i| i as f32 * 0.25).collect(),
            label,
            split: Split::Train,
            role_tags: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = TraceDataset::new(4);
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8);
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }

    #[test]
    fn zero_length_record_round_trips() {
        let mut ds = TraceDataset::new(2);
        let mut r = record("a", 2, 0, Label::Safe);
        r.prompt_summary = vec![0.0, 0.0];
        ds.records.push(r);
        let back = decode_dataset(&encode_dataset(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn onset_is_stored_zero_based() {
        let mut ds = TraceDataset::new(1);
        ds.records
            .push(record("u", 1, 3, Label::Unsafe { onset: Some(2) }));
        ds.records
            .push(record("v", 1, 3, Label::Unsafe { onset: None }));
        let bytes = encode_dataset(&ds).unwrap();
        // header 20, id 2+1, label 1 -> onset at byte 24
        assert_eq!(i64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.records[0].label, Label::Unsafe { onset: Some(2) });
        assert_eq!(back.records[1].label, Label::Unsafe { onset: None });
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_dataset(&TraceDataset::new(4)).unwrap();
        bytes[0] = b'X';
        let err = decode_dataset(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "bad magic");
    }

    #[test]
    fn truncated_frames_rejected() {
        let mut ds = TraceDataset::new(3);
        ds.records.push(record("a", 3, 5, Label::Safe));
        let bytes = encode_dataset(&ds).unwrap();
        let cut = bytes.len() - 2 - 20;
        let err = decode_dataset(&bytes[..cut]).unwrap_err();
        assert_eq!(err.to_string(), "truncated payload");
    }

    #[test]
    fn nan_frame_rejected_on_read() {
        let mut ds = TraceDataset::new(1);
        ds.records.push(record("a", 1, 2, Label::Safe));
        let mut bytes = encode_dataset(&ds).unwrap();
        // last frame value sits just before the u16 meta count
        let at = bytes.len() - 2 - 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_dataset(&bytes).unwrap_err() {
            TraceError::Invalid { violation, .. } => assert_eq!(violation, Violation::NonFinite),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_and_dangling_detected() {
        let mut ds = TraceDataset::new(1);
        ds.records.push(record("a", 1, 1, Label::Safe));
        ds.records.push(record("a", 1, 1, Label::Safe));
        assert!(matches!(ds.validate(), Err(TraceError::DuplicateId(_))));

        let mut ds = TraceDataset::new(1);
        let mut r = record("a", 1, 1, Label::Safe);
        r.role_tags.push(RoleTag::Pair {
            pair_id: "p0".into(),
            side: PairSide::SafeSide,
        });
        ds.records.push(r);
        assert!(matches!(
            ds.validate(),
            Err(TraceError::DanglingPair { .. })
        ));
        assert!(write_dataset(&ds, "/nonexistent/never").is_err());
    }

    #[test]
    fn validate_trace_reports_onset_and_nan() {
        let r = record("u", 2, 4, Label::Unsafe { onset: Some(5) });
        let v = validate_trace(&r, 2);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code(), "onset out of range");

        let mut r = record("s", 2, 2, Label::Safe);
        r.frames[1] = f32::NAN;
        assert_eq!(validate_trace(&r, 2), vec![Violation::NonFinite]);

        let r = record("s", 2, 2, Label::Safe);
        assert!(validate_trace(&r, 2).is_empty());
    }

    #[test]
    fn each_violation_is_detected() {
        let ok = record("x", 3, 2, Label::Unsafe { onset: Some(1) });
        assert!(validate_trace(&ok, 3).is_empty());

        let mut r = ok.clone();
        r.trace_id.clear();
        assert_eq!(validate_trace(&r, 3), vec![Violation::EmptyTraceId]);

        let v = validate_trace(&ok, 4);
        assert!(v.contains(&Violation::HiddenDimMismatch {
            expected: 4,
            found: 3
        }));

        let mut r = ok.clone();
        r.prompt_summary.pop();
        assert_eq!(
            validate_trace(&r, 3),
            vec![Violation::PromptLength {
                expected: 3,
                found: 2
            }]
        );

        let mut r = ok.clone();
        r.frames.push(1.0);
        assert_eq!(
            validate_trace(&r, 3),
            vec![Violation::FrameShape {
                expected: 6,
                found: 7
            }]
        );

        let mut r = ok.clone();
        r.prompt_summary[0] = f32::INFINITY;
        assert_eq!(validate_trace(&r, 3), vec![Violation::NonFinite]);

        let mut r = ok.clone();
        r.label = Label::Unsafe { onset: Some(0) };
        assert_eq!(validate_trace(&r, 3)[0].code(), "onset out of range");

        let mut r = ok.clone();
        r.label = Label::PromptOnly;
        assert_eq!(
            validate_trace(&r, 3),
            vec![Violation::PromptOnlyWithFrames { token_count: 2 }]
        );

        let mut r = ok;
        r.meta.insert("k".repeat(70_000), "v".into());
        assert_eq!(
            validate_trace(&r, 3),
            vec![Violation::FieldTooLong { field: "meta" }]
        );
    }

    #[test]
    fn json_manifest_contains_ids() {
        let mut ds = TraceDataset::new(1);
        ds.records.push(record("abc", 1, 1, Label::Safe));
        let json = export_json_manifest(&ds).unwrap();
        assert!(json.contains("\"abc\""));
    }
}
