//! Dataset loading by file type, and content hashes for manifests.

use std::fs;
use std::path::Path;

use sbm_core::data::{load_array_archive, load_csv, load_idx_dataset};
use sbm_core::{Grid, ImageDataset};
use sha2::{Digest, Sha256};

use crate::error::{code, CliError, CliResult};

fn missing(path: &Path) -> CliError {
    CliError::new(code::DATASET_MISSING, format!("dataset {} does not exist", path.display()))
}

fn square_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

/// Infers a square grid from the first CSV row (with or without a label column).
fn csv_grid(path: &Path) -> CliResult<Grid> {
    let text = fs::read_to_string(path)?;
    let cols = text.lines().next().map_or(0, |l| l.split(',').count());
    square_side(cols)
        .or_else(|| cols.checked_sub(1).and_then(square_side))
        .map(Grid::square)
        .ok_or_else(|| CliError::config(format!("cannot infer the image grid of {}; set \"grid\"", path.display())))
}

/// Loads a dataset from a directory of `.npy` arrays, an `.npz` archive, a
/// CSV file, or an IDX image file with an optional IDX label file.
pub fn load(path: &Path, labels: Option<&Path>, split: Option<&str>, grid: Option<Grid>) -> CliResult<ImageDataset> {
    if !path.exists() {
        return Err(missing(path));
    }
    if let Some(l) = labels.filter(|l| !l.exists()) {
        return Err(missing(l));
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let ds = if path.is_dir() || ext == "npz" {
        load_array_archive(path, split)?
    } else if ext == "csv" {
        let grid = match grid {
            Some(g) => g,
            None => csv_grid(path)?,
        };
        load_csv(path, grid)?
    } else {
        load_idx_dataset(path, labels)?
    };
    if ds.is_empty() {
        return Err(CliError::config(format!("dataset {} is empty", path.display())));
    }
    if let Some(g) = grid {
        if g != ds.grid() && g.len() == ds.n_visible() {
            let tag = ds.tag().map(str::to_string);
            let relaid = ImageDataset::new(ds.images().to_vec(), g, ds.labels().map(<[usize]>::to_vec))?;
            return Ok(match tag {
                Some(t) => relaid.with_tag(t),
                None => relaid,
            });
        }
    }
    Ok(ds)
}

/// SHA-256 of a file, or of every file under a directory (sorted by
/// relative path, each contributing its path and contents).
pub fn content_hash(path: &Path) -> CliResult<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(path.join(&rel))?);
        }
    } else {
        hasher.update(fs::read(path)?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> CliResult<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_string_lossy().into_owned());
        }
    }
    Ok(())
}
