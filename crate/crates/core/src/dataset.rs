//! Labeled image collections backed by directories.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MdcaError, Result};
use crate::image_io::load_image;
use crate::tensor::{ImageTensor, Shape};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub labels: Vec<String>,
    pub entries: Vec<(PathBuf, String)>,
}

impl LabeledDataset {
    /// `root/<label>/<image>`; labels and files are taken in sorted order.
    pub fn from_tree(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let pairs = dirs
            .into_iter()
            .filter_map(|d| {
                let label = d.file_name()?.to_str()?.to_string();
                Some((label, d))
            })
            .collect::<Vec<_>>();
        Self::from_dirs(&pairs)
    }

    /// One directory per label.
    pub fn from_dirs(dirs: &[(String, PathBuf)]) -> Result<Self> {
        let mut labels = Vec::new();
        let mut entries = Vec::new();
        for (label, dir) in dirs {
            labels.push(label.clone());
            for f in list_images(dir)? {
                entries.push((f, label.clone()));
            }
        }
        if entries.is_empty() {
            return Err(MdcaError::Empty("no images found in dataset directories".into()));
        }
        Ok(Self { labels, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reorders entries with a seeded shuffle.
    pub fn shuffle(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.entries.shuffle(&mut rng);
    }
}

/// Loads every file, skipping (and logging) those that fail to decode.
pub fn load_images(paths: &[PathBuf], shape: Shape) -> Vec<(PathBuf, ImageTensor)> {
    paths
        .iter()
        .filter_map(|p| match load_image(p, shape.height, shape.width, shape.channels) {
            Ok(x) => Some((p.clone(), x)),
            Err(e) => {
                warn!("skipping {}: {e}", p.display());
                None
            }
        })
        .collect()
}
