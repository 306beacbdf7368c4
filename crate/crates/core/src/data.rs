//! Paired datasets on disk: `{id}_moire.png`, `{id}_clean.png` and a
//! `manifest.csv` with columns `id,seed`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::io::{read_image, write_image};
use crate::synth::MoirePair;
use crate::tensor::Tensor;

/// A degraded image and its ground truth, both `(1, h, w, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub moire: Tensor<f32>,
    pub clean: Tensor<f32>,
}

pub const MANIFEST: &str = "manifest.csv";

/// PNG and PNM files in `dir`, sorted by name.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Writes the images and the manifest. Existing files are overwritten.
pub fn write_pairs(dir: &Path, pairs: &[MoirePair]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    pairs.par_iter().try_for_each(|p| {
        write_image(&p.moire, &dir.join(format!("{}_moire.png", p.id)))?;
        write_image(&p.clean, &dir.join(format!("{}_clean.png", p.id)))
    })?;
    let mut sorted: Vec<&MoirePair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut manifest = String::from("id,seed\n");
    for p in sorted {
        let _ = writeln!(manifest, "{},{}", p.id, p.seed);
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Ids listed in the manifest, or else every `{id}_moire.png` with a
/// matching clean image. Sorted.
pub fn pair_ids(dir: &Path) -> Result<Vec<String>> {
    let manifest = dir.join(MANIFEST);
    let mut ids: Vec<String> = if manifest.exists() {
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').next().unwrap_or_default().trim().to_owned())
            .collect()
    } else {
        image_files(dir)?
            .iter()
            .filter_map(|p| {
                p.file_name()?
                    .to_str()?
                    .strip_suffix("_moire.png")
                    .map(str::to_owned)
            })
            .filter(|id| dir.join(format!("{id}_clean.png")).exists())
            .collect()
    };
    ids.sort();
    Ok(ids)
}

/// Loads every pair in `dir`, sorted by id.
pub fn load_pairs(dir: &Path) -> Result<Vec<ImagePair>> {
    let ids = pair_ids(dir)?;
    if ids.is_empty() {
        return Err(invalid!("no image pairs in {}", dir.display()));
    }
    ids.par_iter()
        .map(|id| {
            let moire = read_image(&dir.join(format!("{id}_moire.png")))?;
            let clean = read_image(&dir.join(format!("{id}_clean.png")))?;
            if moire.shape() != clean.shape() {
                return Err(invalid!(
                    "pair {id}: moire {:?} and clean {:?} differ in size",
                    moire.shape(),
                    clean.shape()
                ));
            }
            Ok(ImagePair {
                id: id.clone(),
                moire,
                clean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::procedural_dataset;

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = procedural_dataset(3, 16, 40).unwrap();
        write_pairs(dir.path(), &pairs).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest, "id,seed\n0000,40\n0001,41\n0002,42\n");
        let loaded = load_pairs(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for (l, p) in loaded.iter().zip(&pairs) {
            assert_eq!(l.id, p.id);
            assert!(l.moire.max_abs_diff(&p.moire) <= 0.5 / 255.0 + 1e-6);
        }
        std::fs::remove_file(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(pair_ids(dir.path()).unwrap(), vec!["0000", "0001", "0002"]);
    }
}
