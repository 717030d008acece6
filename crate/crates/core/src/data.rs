//! Image datasets: loading, splitting and mini-batch sampling.
//!
//! Pixels are stored as intensities in `[0, 1]`, one flattened row-major
//! image per row. Loaders accept MNIST-style IDX files, `.npy`/`.npz` array
//! archives and plain CSV.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use npyz::npz::NpzArchive;
use npyz::{NpyFile, TypeChar, WriterBuilder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::structure::Grid;

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Flattened grey-scale images with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    images: Vec<f64>,
    grid: Grid,
    labels: Option<Vec<usize>>,
    tag: Option<String>,
}

impl ImageDataset {
    /// Validates the pixel range and shape. An empty dataset is allowed so
    /// that degenerate splits can be represented; loaders reject empty input.
    pub fn new(images: Vec<f64>, grid: Grid, labels: Option<Vec<usize>>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::shape("image grid has no pixels"));
        }
        if images.len() % grid.len() != 0 {
            return Err(Error::shape(format!(
                "{} values is not a multiple of n_v = {}",
                images.len(),
                grid.len()
            )));
        }
        if let Some(bad) = images.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        let n = images.len() / grid.len();
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::shape(format!("{} labels for {n} images", labels.len())));
            }
        }
        Ok(ImageDataset { images, grid, labels, tag: None })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub fn len(&self) -> usize {
        self.images.len() / self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_visible(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn image(&self, k: usize) -> &[f64] {
        let n_v = self.grid.len();
        &self.images[k * n_v..(k + 1) * n_v]
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// One more than the largest label, or `None` for unlabelled data.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    pub fn set_labels(&mut self, labels: Vec<usize>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::shape(format!("{} labels for {} images", labels.len(), self.len())));
        }
        self.labels = Some(labels);
        Ok(())
    }

    /// New dataset made of the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> ImageDataset {
        let mut images = Vec::with_capacity(indices.len() * self.n_visible());
        for &k in indices {
            images.extend_from_slice(self.image(k));
        }
        ImageDataset {
            images,
            grid: self.grid,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&k| l[k]).collect()),
            tag: self.tag.clone(),
        }
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Batch {
        Batch {
            n_visible: self.n_visible(),
            values: self.images.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Rows of a mini-batch, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n_visible: usize,
    pub values: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(n_visible: usize, values: Vec<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if n_visible == 0 || values.len() % n_visible != 0 {
            return Err(Error::shape(format!("{} values do not form rows of {n_visible}", values.len())));
        }
        if let Some(l) = &labels {
            if l.len() != values.len() / n_visible {
                return Err(Error::shape("label count differs from row count"));
            }
        }
        Ok(Batch { n_visible, values, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_v = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_v) {
            return Err(Error::shape("ragged rows"));
        }
        Batch::new(n_v, rows.concat(), None)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape("label count differs from row count"));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n_visible
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_visible..(k + 1) * self.n_visible]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_visible)
    }
}

/// Contents of an IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Images(ImageDataset),
    Labels(Vec<usize>),
}

/// Reads an IDX image (`0x803`) or label (`0x801`) file.
pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let bytes = fs::read(path)?;
    parse_idx(&bytes)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let mut cur = Cursor::new(bytes);
    let truncated = |_| Error::Corrupted("IDX header truncated".into());
    let magic = cur.read_u32::<BigEndian>().map_err(truncated)?;
    let count = cur.read_u32::<BigEndian>().map_err(truncated)? as usize;
    match magic {
        IDX_LABELS_MAGIC => {
            let payload = &bytes[8..];
            if payload.len() != count {
                return Err(Error::Corrupted(format!(
                    "label payload has {} bytes, header says {count}",
                    payload.len()
                )));
            }
            Ok(IdxData::Labels(payload.iter().map(|&b| b as usize).collect()))
        }
        IDX_IMAGES_MAGIC => {
            let rows = cur.read_u32::<BigEndian>().map_err(truncated)? as usize;
            let cols = cur.read_u32::<BigEndian>().map_err(truncated)? as usize;
            let payload = &bytes[16..];
            let expected = count * rows * cols;
            if payload.len() != expected {
                return Err(Error::Corrupted(format!(
                    "image payload has {} bytes, header says {expected}",
                    payload.len()
                )));
            }
            if count == 0 {
                return Err(Error::Corrupted("IDX file holds no images".into()));
            }
            let images = payload.iter().map(|&b| normalize_byte(b)).collect();
            Ok(IdxData::Images(ImageDataset::new(images, Grid::new(rows, cols), None)?))
        }
        other => Err(Error::Format(format!("bad IDX magic number {other:#010x}"))),
    }
}

/// Loads an IDX image file and, optionally, its label file.
pub fn load_idx_dataset(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<ImageDataset> {
    let mut ds = match load_idx(images)? {
        IdxData::Images(ds) => ds,
        IdxData::Labels(_) => return Err(Error::Format("expected an IDX image file, got labels".into())),
    };
    if let Some(path) = labels {
        match load_idx(path)? {
            IdxData::Labels(l) => ds.set_labels(l)?,
            IdxData::Images(_) => return Err(Error::Format("expected an IDX label file, got images".into())),
        }
    }
    Ok(ds)
}

#[inline]
fn normalize_byte(b: u8) -> f64 {
    b as f64 / 255.0
}

#[inline]
fn to_byte(p: f64) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes images as an IDX `0x803` file, quantizing to bytes.
pub fn save_idx_images(path: impl AsRef<Path>, ds: &ImageDataset) -> Result<()> {
    let mut out = Vec::with_capacity(16 + ds.images.len());
    out.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    out.write_u32::<BigEndian>(ds.len() as u32)?;
    out.write_u32::<BigEndian>(ds.grid.height as u32)?;
    out.write_u32::<BigEndian>(ds.grid.width as u32)?;
    out.extend(ds.images.iter().map(|&p| to_byte(p)));
    fs::write(path, out)?;
    Ok(())
}

pub fn save_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    out.write_u32::<BigEndian>(labels.len() as u32)?;
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit a byte")))?;
        out.push(b);
    }
    fs::write(path, out)?;
    Ok(())
}

struct RawArray {
    shape: Vec<usize>,
    values: Vec<f64>,
    integral: bool,
}

fn read_npy<R: Read>(npy: NpyFile<R>) -> Result<RawArray> {
    let shape = npy.shape().iter().map(|&d| d as usize).collect::<Vec<_>>();
    let dtype = npy.dtype();
    let ts = match &dtype {
        npyz::DType::Plain(ts) => ts.clone(),
        other => return Err(Error::Format(format!("unsupported array dtype {other:?}"))),
    };
    let values: Vec<f64> = match (ts.type_char(), ts.size_field()) {
        (TypeChar::Uint, 1) => npy.into_vec::<u8>()?.into_iter().map(f64::from).collect(),
        (TypeChar::Uint, 2) => npy.into_vec::<u16>()?.into_iter().map(f64::from).collect(),
        (TypeChar::Uint, 4) => npy.into_vec::<u32>()?.into_iter().map(f64::from).collect(),
        (TypeChar::Uint, 8) => npy.into_vec::<u64>()?.into_iter().map(|x| x as f64).collect(),
        (TypeChar::Int, 1) => npy.into_vec::<i8>()?.into_iter().map(f64::from).collect(),
        (TypeChar::Int, 2) => npy.into_vec::<i16>()?.into_iter().map(f64::from).collect(),
        (TypeChar::Int, 4) => npy.into_vec::<i32>()?.into_iter().map(f64::from).collect(),
        (TypeChar::Int, 8) => npy.into_vec::<i64>()?.into_iter().map(|x| x as f64).collect(),
        (TypeChar::Float, 4) => npy.into_vec::<f32>()?.into_iter().map(f64::from).collect(),
        (TypeChar::Float, 8) => npy.into_vec::<f64>()?,
        _ => return Err(Error::Format(format!("unsupported array dtype {ts}"))),
    };
    let integral = matches!(ts.type_char(), TypeChar::Uint | TypeChar::Int);
    Ok(RawArray { shape, values, integral })
}

/// Named arrays from a directory of `.npy` files or a `.npz` file.
enum Archive {
    Dir(std::path::PathBuf),
    Npz(NpzArchive<std::io::BufReader<fs::File>>),
}

impl Archive {
    fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Ok(Archive::Dir(path.to_path_buf()))
        } else {
            Ok(Archive::Npz(NpzArchive::open(path)?))
        }
    }

    fn get(&mut self, name: &str) -> Result<Option<RawArray>> {
        match self {
            Archive::Dir(dir) => {
                let file = dir.join(format!("{name}.npy"));
                if !file.exists() {
                    return Ok(None);
                }
                let bytes = fs::read(file)?;
                read_npy(NpyFile::new(&bytes[..])?).map(Some)
            }
            Archive::Npz(npz) => match npz.by_name(name)? {
                Some(npy) => read_npy(npy).map(Some),
                None => Ok(None),
            },
        }
    }
}

/// Loads images (and labels, when present) from an array archive.
///
/// With `split = Some("test")` the arrays `test_images` / `test_labels` are
/// read (the MNIST-C and MedMNIST layouts). Without a split the keys
/// `images`, then the archive's own name, are tried for images and `labels`
/// for labels. The archive name (directory name or file stem) becomes the
/// dataset tag, e.g. the corruption name.
pub fn load_array_archive(path: impl AsRef<Path>, split: Option<&str>) -> Result<ImageDataset> {
    let path = path.as_ref();
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut archive = Archive::open(path)?;
    let (image_keys, label_key) = match split {
        Some(s) => (vec![format!("{s}_images")], format!("{s}_labels")),
        None => (vec!["images".to_string(), tag.clone()], "labels".to_string()),
    };
    let mut images = None;
    for key in &image_keys {
        if let Some(arr) = archive.get(key)? {
            images = Some(arr);
            break;
        }
    }
    let images = images.ok_or_else(|| {
        Error::Format(format!("archive {} has no image array (tried {image_keys:?})", path.display()))
    })?;

    let grid = match images.shape.as_slice() {
        [_, h, w] | [_, h, w, 1] => Grid::new(*h, *w),
        other => return Err(Error::shape(format!("image array has shape {other:?}, expected N×H×W"))),
    };
    let n = images.shape[0];
    if n == 0 {
        return Err(Error::shape("image array is empty"));
    }
    let scale = if images.integral || images.values.iter().any(|&v| v > 1.0) { 255.0 } else { 1.0 };
    let pixels = images.values.iter().map(|&v| v / scale).collect::<Vec<_>>();

    let labels = match archive.get(&label_key)? {
        None => None,
        Some(arr) => {
            let flat_ok = matches!(arr.shape.as_slice(), [m] | [m, 1] if *m == n);
            if !flat_ok {
                return Err(Error::shape(format!(
                    "labels have shape {:?} but there are {n} images",
                    arr.shape
                )));
            }
            Some(arr.values.iter().map(|&v| v as usize).collect())
        }
    };
    Ok(ImageDataset::new(pixels, grid, labels)?.with_tag(tag))
}

/// Writes images as a `uint8` `N×H×W` `.npy` file.
pub fn save_npy_images(path: impl AsRef<Path>, ds: &ImageDataset) -> Result<()> {
    let file = fs::File::create(path)?;
    let shape = [ds.len() as u64, ds.grid.height as u64, ds.grid.width as u64];
    let mut writer = npyz::WriteOptions::<u8>::new()
        .default_dtype()
        .shape(&shape)
        .writer(std::io::BufWriter::new(file))
        .begin_nd()?;
    writer.extend(ds.images.iter().map(|&p| to_byte(p)))?;
    writer.finish()?;
    Ok(())
}

pub fn save_npy_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = npyz::WriteOptions::<i64>::new()
        .default_dtype()
        .shape(&[labels.len() as u64])
        .writer(std::io::BufWriter::new(file))
        .begin_nd()?;
    writer.extend(labels.iter().map(|&l| l as i64))?;
    writer.finish()?;
    Ok(())
}

/// One image per row, `n_v` pixel columns and an optional trailing label.
/// Values above 1 are taken as bytes and divided by 255.
pub fn load_csv(path: impl AsRef<Path>, grid: Grid) -> Result<ImageDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let n_v = grid.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut with_labels = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let has_label = match record.len() {
            n if n == n_v => false,
            n if n == n_v + 1 => true,
            n => return Err(Error::shape(format!("row {line} has {n} columns, expected {n_v} or {}", n_v + 1))),
        };
        if *with_labels.get_or_insert(has_label) != has_label {
            return Err(Error::shape(format!("row {line} disagrees on the label column")));
        }
        for field in record.iter().take(n_v) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {line}: cannot parse {field:?}")))?;
            values.push(v);
        }
        if has_label {
            let l = record[n_v].trim();
            labels.push(l.parse().map_err(|_| Error::Format(format!("row {line}: bad label {l:?}")))?);
        }
    }
    if values.is_empty() {
        return Err(Error::shape("CSV file holds no images"));
    }
    if values.iter().any(|&v| v > 1.0) {
        values.iter_mut().for_each(|v| *v /= 255.0);
    }
    ImageDataset::new(values, grid, with_labels.unwrap_or(false).then_some(labels))
}

pub fn save_csv(path: impl AsRef<Path>, ds: &ImageDataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for k in 0..ds.len() {
        let mut fields: Vec<String> = ds.image(k).iter().map(|p| p.to_string()).collect();
        if let Some(l) = ds.labels() {
            fields.push(l[k].to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Train/validation/test partition sizes.
///
/// `train_count = None` means "everything not assigned to validation or test".
/// Without shuffling, the layout of the source is `[train | val | test]`, so
/// validation is taken from the end of the canonical training order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_count: Option<usize>,
    pub val_count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl SplitSpec {
    pub fn holdout(val_count: usize) -> Self {
        SplitSpec { train_count: None, val_count, test_count: 0, seed: 0, shuffle: false }
    }
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let held = spec.val_count + spec.test_count;
    if held > n {
        return Err(Error::invalid(format!("split needs {held} instances but only {n} are available")));
    }
    let train_count = spec.train_count.unwrap_or(n - held);
    if train_count + held > n {
        return Err(Error::invalid(format!(
            "split needs {} instances but only {n} are available",
            train_count + held
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if spec.shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    }
    let train = order[..train_count].to_vec();
    let val_start = n - held;
    let val = order[val_start..val_start + spec.val_count].to_vec();
    let test = order[val_start + spec.val_count..].to_vec();
    Ok((train, val, test))
}

pub fn split(ds: &ImageDataset, spec: &SplitSpec) -> Result<(ImageDataset, ImageDataset, ImageDataset)> {
    let (train, val, test) = split_indices(ds.len(), spec)?;
    Ok((ds.select(&train), ds.select(&val), ds.select(&test)))
}

/// Draws mini-batches uniformly with replacement from a dataset.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    source: &'a ImageDataset,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    pub fn new(source: &'a ImageDataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if source.is_empty() {
            return Err(Error::invalid("cannot sample batches from an empty dataset"));
        }
        Ok(BatchSampler { source, batch_size, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_batch(&mut self) -> Batch {
        let n = self.source.len();
        let picks: Vec<usize> = (0..self.batch_size).map(|_| self.rng.gen_range(0..n)).collect();
        let mut values = Vec::with_capacity(self.batch_size * self.source.n_visible());
        for &k in &picks {
            values.extend_from_slice(self.source.image(k));
        }
        Batch {
            n_visible: self.source.n_visible(),
            values,
            labels: self.source.labels().map(|l| picks.iter().map(|&k| l[k]).collect()),
        }
    }
}
