//! Corpus manifests.
//!
//! One record per line, whitespace separated, `-` for a missing field:
//!
//! ```text
//! # id  path  positive  transcript  frame_labels  source
//! utt1  far/utt1.wav  1  3,1,2,3  3*20,1*9,2*31,3*14  clean/utt1.wav
//! ```
//!
//! * `path`: 16 kHz WAV, or a feature archive when it ends in `.fea`.
//! * `positive`: `1`/`0`, keyword presence.
//! * `transcript`: comma-separated label ids.
//! * `frame_labels`: run-length encoded 10 ms frame labels, `label*count`.
//! * `source`: close-talk partner of a parallel pair.
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{PipelineError, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub path: PathBuf,
    pub positive: Option<bool>,
    pub transcript: Option<Vec<usize>>,
    pub frame_labels: Option<Vec<usize>>,
    pub source: Option<PathBuf>,
}

impl Record {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

pub fn encode_rle(labels: &[usize]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < labels.len() {
        let mut j = i;
        while j < labels.len() && labels[j] == labels[i] {
            j += 1;
        }
        if !out.is_empty() {
            out.push(',');
        }
        write!(out, "{}*{}", labels[i], j - i).unwrap();
        i = j;
    }
    out
}

pub fn decode_rle(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for run in s.split(',') {
        let (l, n) = run.split_once('*').ok_or_else(|| format!("run `{run}` lacks `*`"))?;
        let l: usize = l.parse().map_err(|_| format!("bad label `{l}`"))?;
        let n: usize = n.parse().map_err(|_| format!("bad count `{n}`"))?;
        out.extend(std::iter::repeat(l).take(n));
    }
    Ok(out)
}

fn opt<'a>(s: &'a str) -> Option<&'a str> {
    (s != "-").then_some(s)
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.id.is_empty() || r.id.contains(char::is_whitespace) {
                return Err(PipelineError::Manifest(format!("invalid id `{}`", r.id)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(PipelineError::Manifest(format!("duplicate id `{}`", r.id)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| PipelineError::Manifest(format!("line {}: {m}", i + 1));
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(err(format!("expected 6 columns, found {}", cols.len())));
            }
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let positive = match cols[2] {
                "-" => None,
                "1" => Some(true),
                "0" => Some(false),
                other => return Err(err(format!("positive flag `{other}`"))),
            };
            let transcript = opt(cols[3])
                .map(|t| t.split(',').map(|v| v.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>())
                .transpose()
                .map_err(|e| err(format!("transcript: {e}")))?;
            let frame_labels = opt(cols[4]).map(decode_rle).transpose().map_err(err)?;
            records.push(Record {
                id: cols[0].to_string(),
                path: resolve(cols[1]),
                positive,
                transcript,
                frame_labels,
                source: opt(cols[5]).map(resolve),
            });
        }
        Self::new(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Text form with paths made relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = String::from("# id path positive transcript frame_labels source\n");
        for r in &self.records {
            let pos = r.positive.map_or("-", |p| if p { "1" } else { "0" });
            let tr = r.transcript.as_ref().map_or("-".into(), |t| {
                if t.is_empty() {
                    "-".into()
                } else {
                    t.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
                }
            });
            let fl = r.frame_labels.as_ref().filter(|f| !f.is_empty()).map_or("-".into(), |f| encode_rle(f));
            let src = r.source.as_ref().map_or("-".into(), |s| rel(s));
            writeln!(out, "{} {} {} {} {} {}", r.id, rel(&r.path), pos, tr, fl, src).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text(path.parent().unwrap_or(Path::new("."))))?;
        Ok(())
    }

    /// Copy with transcripts and frame labels removed.
    pub fn strip_labels(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| Record {
                transcript: None,
                frame_labels: None,
                ..r.clone()
            })
            .collect();
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
