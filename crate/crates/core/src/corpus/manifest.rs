use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LineImage;
use crate::models::Charset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

/// One manifest line. Paths are relative to the manifest root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub clean_path: String,
    #[serde(default)]
    pub degraded_path: Option<String>,
    #[serde(default)]
    pub text: String,
    pub split: Split,
}

/// A loaded ground-truth sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: LineImage,
    pub text: String,
    pub split: Split,
}

/// Dataset records plus the directory their paths are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl CorpusManifest {
    /// Builds and validates a manifest.
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            records,
        };
        m.validate()?;
        Ok(m)
    }

    /// Reads a JSON Lines manifest; its parent directory becomes the root.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            records.push(rec);
        }
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::new(root, records)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Unique ids, relative in-root paths and non-empty train/valid texts.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.records {
            if rec.id.is_empty() {
                return Err(Error::Config("manifest record with empty id".into()));
            }
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::Config(format!("duplicate manifest id `{}`", rec.id)));
            }
            check_relative(&rec.clean_path)?;
            if let Some(p) = &rec.degraded_path {
                check_relative(p)?;
            }
            if matches!(rec.split, Split::Train | Split::Valid) && rec.text.is_empty() {
                return Err(Error::Config(format!(
                    "{} sample `{}` has an empty transcription",
                    rec.split, rec.id
                )));
            }
        }
        Ok(())
    }

    pub fn charset(&self) -> Charset {
        Charset::from_texts(self.records.iter().map(|r| r.text.as_str()))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn load_sample(&self, rec: &ManifestRecord) -> Result<Sample> {
        Ok(Sample {
            id: rec.id.clone(),
            image: LineImage::load_png(self.resolve(&rec.clean_path))?,
            text: rec.text.clone(),
            split: rec.split,
        })
    }

    pub fn load_degraded(&self, rec: &ManifestRecord) -> Result<LineImage> {
        let rel = rec.degraded_path.as_deref().ok_or_else(|| {
            Error::Config(format!("sample `{}` has no degraded image", rec.id))
        })?;
        LineImage::load_png(self.resolve(rel))
    }
}

fn check_relative(p: &str) -> Result<()> {
    let path = Path::new(p);
    let escapes = path
        .components()
        .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir));
    if p.is_empty() || escapes {
        return Err(Error::Config(format!(
            "manifest path `{p}` must be relative and stay under the manifest root"
        )));
    }
    Ok(())
}
