use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: a single high-quality anchor plus variants of unknown quality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub anchor: String,
    pub variants: Vec<String>,
}

#[derive(Deserialize)]
struct RawSubject {
    subject_id: Option<String>,
    anchor: Option<String>,
    #[serde(default)]
    variants: Vec<String>,
}

/// Subject list read from a JSON manifest. Image paths are stored as written
/// (relative to `root`) and double as image ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub subjects: Vec<SubjectRecord>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, subjects: Vec<SubjectRecord>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            subjects,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, root)
    }

    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let raw: Vec<RawSubject> = serde_json::from_str(text)?;
        let mut subjects = Vec::with_capacity(raw.len());
        for (i, s) in raw.into_iter().enumerate() {
            let subject_id = s
                .subject_id
                .ok_or_else(|| Error::Manifest(format!("entry {i} has no subject_id")))?;
            let anchor = s
                .anchor
                .ok_or_else(|| Error::Manifest(format!("subject {subject_id} has no anchor")))?;
            subjects.push(SubjectRecord {
                subject_id,
                anchor,
                variants: s.variants,
            });
        }
        Self::new(root, subjects)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.subjects)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut paths = HashSet::new();
        for s in &self.subjects {
            if s.subject_id.is_empty() {
                return Err(Error::Manifest("empty subject_id".into()));
            }
            if !ids.insert(s.subject_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate subject {}", s.subject_id)));
            }
            if s.anchor.is_empty() {
                return Err(Error::Manifest(format!("subject {} has no anchor", s.subject_id)));
            }
            for p in std::iter::once(&s.anchor).chain(&s.variants) {
                if !paths.insert(p.as_str()) {
                    return Err(Error::Manifest(format!("image {p} listed twice")));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, image_id: &str) -> PathBuf {
        self.root.join(image_id)
    }

    /// `(image_id, subject_id)` for every anchor and variant, in manifest order.
    pub fn images(&self) -> Vec<(&str, &str)> {
        self.subjects
            .iter()
            .flat_map(|s| {
                std::iter::once(s.anchor.as_str())
                    .chain(s.variants.iter().map(String::as_str))
                    .map(move |p| (p, s.subject_id.as_str()))
            })
            .collect()
    }

    pub fn num_images(&self) -> usize {
        self.subjects.iter().map(|s| 1 + s.variants.len()).sum()
    }
}
