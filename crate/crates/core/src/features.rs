//! Feature matrices, speech/silence labels, manifests and their file formats.
//!
//! * NVF1 binary: ASCII `NVF1`, u32 LE frame count, u32 LE dim, then
//!   `frames * dim` little-endian f64 values in row-major order.
//! * Text: `#frames=<T> dim=<d>` followed by one tab-separated line per frame.
//! * Labels: one line, one character per frame, `S` speech and `N` silence.
//! * Manifest: TSV `utt_id<TAB>features[<TAB>labels]`; relative paths resolve
//!   against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::{format_row, parse_f64};
use crate::error::{Error, Result};

pub const NVF1_MAGIC: &[u8; 4] = b"NVF1";
const NVF1_HEADER_LEN: usize = 12;

/// Per-frame acoustic features of one utterance, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    num_frames: usize,
    dim: usize,
}

impl FeatureMatrix {
    pub fn new(num_frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be at least 1".into()));
        }
        if data.len() != num_frames * dim {
            return Err(Error::Dimension {
                what: "feature payload length",
                expected: num_frames * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self { data, num_frames, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension {
                    what: "frame length",
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.num_frames == 0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + DoubleEndedIterator + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copies frames `[start, end)` into a new matrix.
    pub fn slice_frames(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            num_frames: end - start,
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureFormat {
    #[default]
    Binary,
    Text,
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "nvf1" => Ok(FeatureFormat::Binary),
            "text" | "txt" => Ok(FeatureFormat::Text),
            other => Err(Error::InvalidConfig(format!("unknown feature format {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureFormat::Binary => "binary",
            FeatureFormat::Text => "text",
        })
    }
}

pub fn encode_binary(matrix: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(NVF1_HEADER_LEN + 8 * matrix.data.len());
    out.extend_from_slice(NVF1_MAGIC);
    out.extend_from_slice(&(matrix.num_frames as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    for v in &matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8], context: &str) -> Result<FeatureMatrix> {
    let at = |offset: usize| format!("byte {offset}");
    if bytes.len() < 4 || &bytes[..4] != NVF1_MAGIC {
        return Err(Error::parse(context, at(0), "missing NVF1 magic"));
    }
    if bytes.len() < NVF1_HEADER_LEN {
        return Err(Error::parse(context, at(bytes.len()), "truncated header"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (frames, dim) = (word(4), word(8));
    if dim == 0 {
        return Err(Error::parse(context, at(8), "dimension must be at least 1"));
    }
    let count = frames
        .checked_mul(dim)
        .ok_or_else(|| Error::parse(context, at(4), "header size overflow"))?;
    let payload = &bytes[NVF1_HEADER_LEN..];
    if payload.len() != count * 8 {
        return Err(Error::parse(
            context,
            at(NVF1_HEADER_LEN),
            format!(
                "header declares {frames}x{dim} ({} bytes) but payload has {} bytes",
                count * 8,
                payload.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::parse(context, at(NVF1_HEADER_LEN + 8 * i), "non-finite value"));
        }
        data.push(v);
    }
    Ok(FeatureMatrix {
        data,
        num_frames: frames,
        dim,
    })
}

pub fn encode_text(matrix: &FeatureMatrix) -> String {
    let mut out = format!("#frames={} dim={}\n", matrix.num_frames, matrix.dim);
    for frame in matrix.frames() {
        out.push_str(&format_row(frame.iter().copied()));
        out.push('\n');
    }
    out
}

pub fn decode_text(text: &str, context: &str) -> Result<FeatureMatrix> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let (frames, dim) =
        parse_text_header(header).ok_or_else(|| Error::parse(context, "line 1", format!("bad header {header:?}")))?;
    if dim == 0 {
        return Err(Error::parse(context, "line 1", "dimension must be at least 1"));
    }
    let mut data = Vec::with_capacity(frames * dim);
    let mut seen = 0;
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        if line.is_empty() {
            continue;
        }
        if seen == frames {
            return Err(Error::parse(
                context,
                format!("line {lineno}"),
                "more frames than declared",
            ));
        }
        let before = data.len();
        for (c, tok) in line.split('\t').enumerate() {
            data.push(parse_f64(tok, context, || format!("line {lineno} column {}", c + 1))?);
        }
        if data.len() - before != dim {
            return Err(Error::parse(
                context,
                format!("line {lineno}"),
                format!("expected {dim} values, found {}", data.len() - before),
            ));
        }
        seen += 1;
    }
    if seen != frames {
        return Err(Error::parse(
            context,
            "end of file",
            format!("header declares {frames} frames, found {seen}"),
        ));
    }
    Ok(FeatureMatrix {
        data,
        num_frames: frames,
        dim,
    })
}

fn parse_text_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.trim_end().split(' ');
    let frames = parts.next()?.strip_prefix("#frames=")?.parse().ok()?;
    let dim = parts.next()?.strip_prefix("dim=")?.parse().ok()?;
    parts.next().is_none().then_some((frames, dim))
}

pub fn encode_features(matrix: &FeatureMatrix, format: FeatureFormat) -> Vec<u8> {
    match format {
        FeatureFormat::Binary => encode_binary(matrix),
        FeatureFormat::Text => encode_text(matrix).into_bytes(),
    }
}

/// Decodes either format, sniffing the leading magic.
pub fn decode_features_auto(bytes: &[u8], context: &str) -> Result<FeatureMatrix> {
    if bytes.starts_with(NVF1_MAGIC) {
        decode_binary(bytes, context)
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| {
            Error::parse(
                context,
                format!("byte {}", e.valid_up_to()),
                "not NVF1 and not UTF-8 text",
            )
        })?;
        decode_text(text, context)
    }
}

pub fn read_features(path: impl AsRef<Path>, format: FeatureFormat) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    match format {
        FeatureFormat::Binary => decode_binary(&bytes, &context),
        FeatureFormat::Text => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::parse(&context, format!("byte {}", e.valid_up_to()), "invalid UTF-8"))?;
            decode_text(text, &context)
        }
    }
}

pub fn read_features_auto(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features_auto(&bytes, &path.display().to_string())
}

pub fn write_features(matrix: &FeatureMatrix, path: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(matrix, format)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Speech,
    Silence,
}

impl Label {
    pub fn as_char(self) -> char {
        match self {
            Label::Speech => 'S',
            Label::Silence => 'N',
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Speech => Label::Silence,
            Label::Silence => Label::Speech,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SadLabels(Vec<Label>);

impl SadLabels {
    pub fn new(labels: Vec<Label>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.0
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Label> + '_ {
        self.0.iter().copied()
    }

    pub fn count(&self, label: Label) -> usize {
        self.0.iter().filter(|&&l| l == label).count()
    }

    /// Swaps every speech label for silence and vice versa.
    pub fn swapped(&self) -> SadLabels {
        SadLabels(self.0.iter().map(|l| l.flipped()).collect())
    }

    pub fn to_line(&self) -> String {
        self.0.iter().map(|l| l.as_char()).collect()
    }

    pub fn parse(text: &str, expected_frames: usize, context: &str) -> Result<Self> {
        let line = text.strip_suffix('\n').unwrap_or(text);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut labels = Vec::with_capacity(line.len());
        for (i, c) in line.chars().enumerate() {
            labels.push(match c {
                'S' => Label::Speech,
                'N' => Label::Silence,
                other => {
                    return Err(Error::parse(
                        context,
                        format!("position {i}"),
                        format!("illegal label character {other:?}"),
                    ))
                }
            });
        }
        if labels.len() != expected_frames {
            return Err(Error::LengthMismatch {
                frames: expected_frames,
                labels: labels.len(),
            });
        }
        Ok(Self(labels))
    }
}

impl FromIterator<Label> for SadLabels {
    fn from_iter<I: IntoIterator<Item = Label>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl FromStr for SadLabels {
    type Err = Error;

    /// Parses a label line without a length check.
    fn from_str(s: &str) -> Result<Self> {
        let n = s.trim_end_matches(['\n', '\r']).chars().count();
        Self::parse(s, n, "labels")
    }
}

pub fn read_labels(path: impl AsRef<Path>, expected_frames: usize) -> Result<SadLabels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SadLabels::parse(&text, expected_frames, &path.display().to_string())
}

pub fn write_labels(labels: &SadLabels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut line = labels.to_line();
    line.push('\n');
    fs::write(path, line).map_err(|e| Error::io(path, e))
}

/// Checks that a label sequence covers exactly the frames of `features`.
pub fn check_pairing(features: &FeatureMatrix, labels: &SadLabels) -> Result<()> {
    if features.num_frames() != labels.len() {
        return Err(Error::LengthMismatch {
            frames: features.num_frames(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Features and labels of one utterance, with the pairing already validated.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub id: String,
    features: FeatureMatrix,
    labels: SadLabels,
}

impl LabeledUtterance {
    pub fn new(id: impl Into<String>, features: FeatureMatrix, labels: SadLabels) -> Result<Self> {
        check_pairing(&features, &labels)?;
        Ok(Self {
            id: id.into(),
            features,
            labels,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &SadLabels {
        &self.labels
    }

    pub fn with_labels(&self, labels: SadLabels) -> Result<Self> {
        Self::new(self.id.clone(), self.features.clone(), labels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub feature_path: String,
    pub label_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.utterance_id.is_empty() || e.feature_path.is_empty() {
                return Err(Error::InvalidConfig(
                    "manifest entries need an id and a feature path".into(),
                ));
            }
            if e.label_path.as_deref() == Some("") {
                return Err(Error::InvalidConfig(format!(
                    "empty label path for {:?}",
                    e.utterance_id
                )));
            }
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::DuplicateId(e.utterance_id.clone()));
            }
        }
        Ok(Self {
            entries,
            base_dir: None,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let at = format!("line {}", n + 1);
            if !(2..=3).contains(&cols.len()) || cols.iter().any(|c| c.is_empty()) {
                return Err(Error::parse(
                    context,
                    at,
                    format!("expected 2 or 3 non-empty tab-separated columns, found {}", cols.len()),
                ));
            }
            if !seen.insert(cols[0].to_string()) {
                return Err(Error::parse(
                    context,
                    at,
                    format!("duplicate utterance id {:?}", cols[0]),
                ));
            }
            entries.push(ManifestEntry {
                utterance_id: cols[0].to_string(),
                feature_path: cols[1].to_string(),
                label_path: cols.get(2).map(|s| s.to_string()),
            });
        }
        Ok(Self {
            entries,
            base_dir: None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.utterance_id);
            out.push('\t');
            out.push_str(&e.feature_path);
            if let Some(l) = &e.label_path {
                out.push('\t');
                out.push_str(l);
            }
            out.push('\n');
        }
        out
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = Manifest::parse(&text, &path.display().to_string())?;
    manifest.base_dir = path.parent().map(Path::to_path_buf);
    Ok(manifest)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_text()).map_err(|e| Error::io(path, e))
}
