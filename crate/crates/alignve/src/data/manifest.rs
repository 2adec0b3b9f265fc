//! JSON-lines dataset manifests: one `{"id", "feature_file", "hypothesis",
//! "label"}` object per line. Feature paths are resolved relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::visual::PremiseFeatures;

pub const LABELS: [&str; 3] = ["entailment", "neutral", "contradiction"];

pub fn label_index(label: &str) -> Result<usize> {
    LABELS
        .iter()
        .position(|&l| l == label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))
}

pub fn label_name(index: usize) -> &'static str {
    LABELS[index]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub feature_file: String,
    pub hypothesis: String,
    pub label: String,
}

/// A fully loaded example: features read from disk, label mapped to its
/// class index (0 entailment, 1 neutral, 2 contradiction).
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub features: PremiseFeatures,
    pub hypothesis: String,
    pub label: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_histogram(&self) -> [usize; 3] {
        let mut hist = [0usize; 3];
        for ex in &self.examples {
            hist[ex.label] += 1;
        }
        hist
    }

    pub fn find(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }
}

pub fn parse_manifest(content: &str, path: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (line_no, line) in content.lines().enumerate() {
        let line_no = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::malformed_line(path, line_no, e.to_string()))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Loads a manifest and every referenced feature file. Duplicate ids,
/// unknown labels and missing files are rejected; an empty manifest loads
/// as an empty dataset with a warning (training will refuse it later).
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let content = std::fs::read_to_string(manifest_path)?;
    let display = manifest_path.display().to_string();
    let entries = parse_manifest(&content, &display)?;
    if entries.is_empty() {
        eprintln!("warning: manifest {display} has no entries");
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut examples = Vec::with_capacity(entries.len());
    for entry in entries {
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateId(entry.id));
        }
        let label = label_index(&entry.label)?;
        let feature_path: PathBuf = base.join(&entry.feature_file);
        if !feature_path.is_file() {
            return Err(Error::MissingFile(feature_path));
        }
        let features = super::read_feature_file(&feature_path)?;
        examples.push(Example {
            id: entry.id,
            features,
            hypothesis: entry.hypothesis,
            label,
        });
    }
    Ok(Dataset { examples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_feature_file;

    fn grid(channels: usize) -> PremiseFeatures {
        PremiseFeatures::Grid {
            height: 2,
            width: 2,
            channels,
            data: vec![0.5; 4 * channels],
        }
    }

    fn write_manifest(dir: &Path, lines: &[String]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn loads_one_example_per_class() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = Vec::new();
        for (i, label) in LABELS.iter().enumerate() {
            let file = format!("ex{i}.avef");
            write_feature_file(&dir.path().join(&file), &grid(3)).unwrap();
            lines.push(format!(
                "{{\"id\":\"ex{i}\",\"feature_file\":\"{file}\",\"hypothesis\":\"a b\",\"label\":\"{label}\"}}"
            ));
        }
        let manifest = write_manifest(dir.path(), &lines);
        let dataset = load_dataset(&manifest).unwrap();
        assert_eq!(dataset.class_histogram(), [1, 1, 1]);
        assert!(dataset.find("ex1").is_some());
    }

    #[test]
    fn unknown_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(&dir.path().join("x.avef"), &grid(2)).unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[r#"{"id":"x","feature_file":"x.avef","hypothesis":"h","label":"maybe"}"#.to_string()],
        );
        assert!(matches!(
            load_dataset(&manifest),
            Err(Error::UnknownLabel(l)) if l == "maybe"
        ));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(&dir.path().join("x.avef"), &grid(2)).unwrap();
        let line =
            r#"{"id":"x","feature_file":"x.avef","hypothesis":"h","label":"neutral"}"#.to_string();
        let manifest = write_manifest(dir.path(), &[line.clone(), line]);
        assert!(matches!(load_dataset(&manifest), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn missing_feature_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[r#"{"id":"x","feature_file":"gone.avef","hypothesis":"h","label":"neutral"}"#
                .to_string()],
        );
        assert!(matches!(load_dataset(&manifest), Err(Error::MissingFile(_))));
    }

    #[test]
    fn empty_manifest_loads_as_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(dir.path(), &[]);
        let dataset = load_dataset(&manifest).unwrap();
        assert!(dataset.is_empty());
    }

    #[test]
    fn malformed_json_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"id":"a","feature_file":"x","hypothesis":"h","label":"neutral""#.to_string(),
            ],
        );
        assert!(matches!(
            load_dataset(&manifest),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }
}
