use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::SemanticCategory;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub name: String,
    pub id: usize,
}

/// One mask file per instance, or a single file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskRef {
    One(PathBuf),
    Instances(Vec<PathBuf>),
}

impl MaskRef {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            MaskRef::One(p) => vec![p.as_path()],
            MaskRef::Instances(ps) => ps.iter().map(PathBuf::as_path).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub image: PathBuf,
    pub category: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskRef>,
}

/// On-disk dataset description. Paths are stored relative to the manifest
/// file and resolved against `root` after loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub split: Split,
    pub categories: Vec<CategoryEntry>,
    pub samples: Vec<SampleEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    /// Category names ordered by id.
    pub fn category_names(&self) -> Vec<String> {
        let mut cats = self.categories.clone();
        cats.sort_by_key(|c| c.id);
        cats.into_iter().map(|c| c.name).collect()
    }

    pub fn category(&self, id: usize) -> Result<SemanticCategory> {
        SemanticCategory::new(id, self.num_categories())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Indices of the samples of one category, in manifest order.
    pub fn indices_of(&self, category: SemanticCategory) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].category == category.id())
            .collect()
    }

    /// Checks the schema and category references, without touching files.
    pub fn validate_schema(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let ids: BTreeSet<usize> = self.categories.iter().map(|c| c.id).collect();
        if ids.len() != self.categories.len() || ids.iter().copied().ne(0..ids.len()) {
            return Err(Error::Parse("category ids must be unique and numbered 0..C".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::Parse("manifest lists no samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if !ids.contains(&s.category) {
                return Err(Error::Parse(format!(
                    "sample {i} ({}) references unknown category id {}",
                    s.image.display(),
                    s.category
                )));
            }
            if let Some(MaskRef::Instances(v)) = &s.mask {
                if v.is_empty() {
                    return Err(Error::Parse(format!(
                        "sample {i} ({}) has an empty mask list",
                        s.image.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every referenced file that cannot be opened for reading.
    pub fn unreadable_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for s in &self.samples {
            let mut paths = vec![s.image.as_path()];
            if let Some(m) = &s.mask {
                paths.extend(m.paths());
            }
            for p in paths {
                let full = self.resolve(p);
                if std::fs::File::open(&full).is_err() || !full.is_file() {
                    out.push(full);
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// SHA-256 over the manifest and every file it references, in order.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).map_err(|e| Error::Parse(e.to_string()))?);
        for s in &self.samples {
            let mut paths = vec![s.image.as_path()];
            if let Some(m) = &s.mask {
                paths.extend(m.paths());
            }
            for p in paths {
                let full = self.resolve(p);
                h.update(std::fs::read(&full).map_err(|e| Error::io(&full, e))?);
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Reads and validates a manifest. Fails if any referenced image or mask is
/// unreadable, listing all such paths.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate_schema()
        .map_err(|e| Error::Parse(format!("{}: {}", path.display(), strip_kind(&e))))?;
    let missing = m.unreadable_files();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Parse(format!(
            "{}: {} unreadable file(s): {}",
            path.display(),
            list.len(),
            list.join(", ")
        )));
    }
    Ok(m)
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Parse(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn manifest_json(samples: &str) -> String {
        format!(
            r#"{{"schema_version":1,"split":"train",
               "categories":[{{"name":"a","id":0}},{{"name":"b","id":1}}],
               "samples":[{samples}]}}"#
        )
    }

    #[test]
    fn parses_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["x0.png", "x1.png", "y0.png", "y1.png", "m.png"] {
            write(dir.path(), f, "x");
        }
        let body = manifest_json(
            r#"{"image":"x0.png","category":0,"mask":"m.png"},
               {"image":"x1.png","category":0,"mask":["m.png","m.png"]},
               {"image":"y0.png","category":1},
               {"image":"y1.png","category":1}"#,
        );
        let p = write(dir.path(), "train.json", &body);
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.samples.len(), 4);
        assert_eq!(m.resolve(&m.samples[0].image), dir.path().join("x0.png"));
        assert_eq!(m.samples[1].mask.as_ref().unwrap().paths().len(), 2);
        assert_eq!(m.indices_of(m.category(1).unwrap()), vec![2, 3]);
        assert_eq!(m.category_names(), vec!["a", "b"]);
    }

    #[test]
    fn unknown_category_names_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "q.png", "x");
        let p = write(
            dir.path(),
            "m.json",
            &manifest_json(r#"{"image":"q.png","category":5}"#),
        );
        match load_manifest(&p) {
            Err(Error::Parse(msg)) => assert!(msg.contains("q.png") && msg.contains("sample 0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_samples_and_bad_json_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.json", &manifest_json(""));
        assert!(matches!(load_manifest(&p), Err(Error::Parse(_))));
        let p = write(
            dir.path(),
            "bad.json",
            "{\n\"schema_version\": 1,\n\"split\": \"sideways\"\n}",
        );
        match load_manifest(&p) {
            Err(Error::Parse(msg)) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_manifest(&dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn unreadable_masks_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "x.png", "x");
        let p = write(
            dir.path(),
            "m.json",
            &manifest_json(r#"{"image":"x.png","category":0,"mask":["gone1.png","gone2.png"]}"#),
        );
        match load_manifest(&p) {
            Err(Error::Parse(msg)) => assert!(msg.contains("gone1.png") && msg.contains("gone2.png")),
            other => panic!("{other:?}"),
        }
    }
}
