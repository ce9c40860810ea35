//! `path,label` CSV manifests with a `classes.txt` beside them.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ppm::{load_ppm, save_ppm};
use super::{Dataset, Sample};
use crate::error::{Error, Result};

pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    path: String,
    label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory that relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<(String, usize)>,
    pub classes: Vec<String>,
}

/// One class name per line; line number is the label.
pub fn read_classes(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let classes = read_classes(root.join(CLASSES_FILE))?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Dataset(format!(
        "{}: {e}",
        path.display()
    )))?;
    let mut entries = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        entries.push((row.path, row.label));
    }
    let manifest = Manifest {
        root,
        entries,
        classes,
    };
    manifest.validate()?;
    Ok(manifest)
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 classes, found {}",
                self.classes.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut used = vec![false; self.classes.len()];
        for (p, label) in &self.entries {
            if !seen.insert(p.as_str()) {
                return Err(Error::Dataset(format!("duplicate path {p}")));
            }
            if *label >= self.classes.len() {
                return Err(Error::Dataset(format!(
                    "label {label} for {p} outside [0, {})",
                    self.classes.len()
                )));
            }
            used[*label] = true;
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(Error::Dataset(format!(
                "labels not dense: class {missing} ({}) has no samples",
                self.classes[missing]
            )));
        }
        Ok(())
    }
}

/// Loads every image, resizing bilinearly to `image_size²` when needed.
pub fn load_dataset(manifest_path: impl AsRef<Path>, image_size: usize) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for (rel, label) in &manifest.entries {
        let mut image = load_ppm(manifest.root.join(rel))?;
        if image.height() != image_size || image.width() != image_size {
            image = image.resize(image_size, image_size)?;
        }
        image.clamp_unit();
        samples.push(Sample {
            image,
            label: *label,
            id: rel.clone(),
        });
    }
    Ok(Dataset {
        samples,
        classes: manifest.classes,
    })
}

/// Writes `<dir>/<subdir>/<id>.ppm` for every sample, `<dir>/<manifest_name>`
/// and `<dir>/classes.txt`.
pub fn write_dataset(dataset: &Dataset, dir: &Path, subdir: &str, manifest_name: &str) -> Result<()> {
    let image_dir = dir.join(subdir);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let manifest_path = dir.join(manifest_name);
    let mut writer = csv::Writer::from_path(&manifest_path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
    for sample in &dataset.samples {
        let rel = format!("{subdir}/{}.ppm", sample.id);
        save_ppm(&sample.image, dir.join(&rel))?;
        writer
            .serialize(Row {
                path: rel,
                label: sample.label,
            })
            .map_err(|e| Error::Dataset(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    let classes_path = dir.join(CLASSES_FILE);
    let mut text = dataset.classes.join("\n");
    text.push('\n');
    fs::write(&classes_path, text).map_err(|e| Error::io(&classes_path, e))
}
