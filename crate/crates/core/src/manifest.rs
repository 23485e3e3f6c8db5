//! JSON sidecar describing a dataset: classes with their synonym and
//! description rows, and images with their view and attention files.
//!
//! Paths are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cadrs::CropSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynonymEntry {
    pub text: String,
    /// Row of the bare synonym embedding in the text set.
    pub row: usize,
    #[serde(default)]
    pub is_original: bool,
    /// Row of the template-only prompt "a photo of a {synonym}".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_row: Option<usize>,
}

/// One description and its prompt rows: `rows[0] + s` holds the prompt
/// built from synonym `s` (manifest order) and this description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptionEntry {
    pub text: String,
    pub rows: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class_id: u32,
    pub given_name: String,
    pub synonyms: Vec<SynonymEntry>,
    #[serde(default)]
    pub descriptions: Vec<DescriptionEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub true_class_id: u32,
    /// CPEB file: row 0 is the full image, rows 1.. are candidate crops.
    pub views: PathBuf,
    /// CPEA file.
    pub attention: PathBuf,
    #[serde(default)]
    pub crops: Vec<CropSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_name: String,
    /// CPEB file holding every synonym and prompt row.
    pub text_embeddings: PathBuf,
    pub classes: Vec<ClassRecord>,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
    /// Synonyms kept by the topological filter, keyed by class id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retained_synonyms: Option<BTreeMap<u32, Vec<String>>>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Checks ids, original-name flags and row bounds against a text set
    /// of `text_rows` rows.
    pub fn validate(&self, text_rows: usize) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::EmptyClassList);
        }
        let mut ids = HashSet::new();
        for c in &self.classes {
            let ctx = |msg: String| Error::Manifest(format!("class {}: {msg}", c.class_id));
            if !ids.insert(c.class_id) {
                return Err(ctx("duplicate class id".into()));
            }
            if !c.synonyms.iter().any(|s| s.is_original) {
                return Err(ctx("no synonym marked is_original".into()));
            }
            for s in &c.synonyms {
                for row in std::iter::once(s.row).chain(s.prompt_row) {
                    if row >= text_rows {
                        return Err(ctx(format!(
                            "synonym {:?} row {row} out of bounds ({text_rows} rows)",
                            s.text
                        )));
                    }
                }
            }
            for d in &c.descriptions {
                let [start, end] = d.rows;
                if end < start || end > text_rows {
                    return Err(ctx(format!(
                        "description {:?} rows {start}..{end} out of bounds ({text_rows} rows)",
                        d.text
                    )));
                }
                if end - start != c.synonyms.len() {
                    return Err(ctx(format!(
                        "description {:?} covers {} rows, expected one per synonym ({})",
                        d.text,
                        end - start,
                        c.synonyms.len()
                    )));
                }
            }
        }
        for img in &self.images {
            if !ids.contains(&img.true_class_id) {
                return Err(Error::Manifest(format!(
                    "image {}: unknown class {}",
                    img.image_id, img.true_class_id
                )));
            }
        }
        Ok(())
    }

    /// Position of a class id in `classes`.
    pub fn class_index(&self, class_id: u32) -> Option<usize> {
        self.classes.iter().position(|c| c.class_id == class_id)
    }
}

/// Resolves `rel` against the directory containing `manifest_path`.
pub fn resolve(manifest_path: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(rel)
    }
}
