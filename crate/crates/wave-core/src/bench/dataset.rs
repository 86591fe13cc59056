//! Datasets for the benchmark harness: a synthetic glyph classification
//! task that generates itself from a seed, and a loader for IDX-format
//! image/label files. Pixels are normalized per channel with statistics
//! taken from the training split only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::vit::Image;

/// One split: images with labels, index-aligned.
#[derive(Clone, Debug)]
pub struct Split {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Per-channel statistics used to normalize pixels.
#[derive(Clone, Debug)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub classes: usize,
    pub image_size: usize,
    pub channels: usize,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::Input("both dataset splits must be nonempty".into()));
        }
        for (name, split) in [("train", &self.train), ("val", &self.val)] {
            if split.images.len() != split.labels.len() {
                return Err(Error::Input(format!(
                    "{name} split has {} images but {} labels",
                    split.images.len(),
                    split.labels.len()
                )));
            }
            for (i, y) in split.labels.iter().enumerate() {
                if *y >= self.classes {
                    return Err(Error::Input(format!(
                        "{name} label {y} at index {i} out of range for {} classes",
                        self.classes
                    )));
                }
            }
            for (i, img) in split.images.iter().enumerate() {
                if img.height != self.image_size
                    || img.width != self.image_size
                    || img.channels != self.channels
                {
                    return Err(Error::Shape(format!(
                        "{name} image {i} is {}x{}x{}, dataset says {}x{}x{}",
                        img.height,
                        img.width,
                        img.channels,
                        self.image_size,
                        self.image_size,
                        self.channels
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Spec for the self-generating glyph dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            train_samples: 1024,
            val_samples: 256,
            image_size: 32,
            channels: 1,
            noise_std: 0.45,
            seed: 17,
        }
    }
}

/// Builds the synthetic dataset: each class owns a fixed random sign glyph
/// which is stamped at a random position onto a noisy background. Labels
/// cycle round-robin so splits stay balanced.
pub fn synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::Input("synthetic dataset needs at least 2 classes".into()));
    }
    if spec.train_samples == 0 || spec.val_samples == 0 {
        return Err(Error::Input("synthetic dataset splits must be nonempty".into()));
    }
    let glyph = spec.image_size * 3 / 8;
    if glyph == 0 || glyph > spec.image_size {
        return Err(Error::Input(format!(
            "image_size {} leaves no room for a glyph",
            spec.image_size
        )));
    }
    // Class glyphs come from their own stream so sample counts never shift
    // the patterns.
    let mut gstream = rng::seeded(rng::sub_seed(spec.seed, "glyphs"));
    let glyphs: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let m = rng::normal(&mut gstream, glyph, glyph, 1.0);
            m.as_slice().iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect()
        })
        .collect();

    let mut sample_stream = rng::seeded(rng::sub_seed(spec.seed, "samples"));
    let mut make_split = |count: usize| -> Split {
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % spec.classes;
            let mut img = Image::zeros(spec.image_size, spec.image_size, spec.channels);
            let noise = rng::normal(
                &mut sample_stream,
                spec.image_size,
                spec.image_size * spec.channels,
                spec.noise_std,
            );
            img.data.copy_from_slice(noise.as_slice());
            let margin = spec.image_size - glyph;
            let dy = sample_stream_next(&mut sample_stream, margin + 1) as usize;
            let dx = sample_stream_next(&mut sample_stream, margin + 1) as usize;
            for y in 0..glyph {
                for x in 0..glyph {
                    let v = glyphs[class][y * glyph + x];
                    for c in 0..spec.channels {
                        let cur = img.get(dy + y, dx + x, c);
                        img.set(dy + y, dx + x, c, cur + v);
                    }
                }
            }
            images.push(img);
            labels.push(class);
        }
        Split { images, labels }
    };
    let train = make_split(spec.train_samples);
    let val = make_split(spec.val_samples);
    let mut ds = Dataset {
        train,
        val,
        classes: spec.classes,
        image_size: spec.image_size,
        channels: spec.channels,
        normalization: Normalization {
            mean: vec![0.0; spec.channels],
            std: vec![1.0; spec.channels],
        },
    };
    normalize(&mut ds);
    ds.validate()?;
    Ok(ds)
}

fn sample_stream_next(stream: &mut rand_chacha::ChaCha8Rng, bound: usize) -> u64 {
    use rand::Rng;
    stream.gen_range(0..bound as u64)
}

/// Computes per-channel mean/std on the train split and applies them to
/// both splits.
fn normalize(ds: &mut Dataset) {
    let c = ds.channels;
    let mut mean = vec![0.0; c];
    let mut count = 0usize;
    for img in &ds.train.images {
        for (i, v) in img.data.iter().enumerate() {
            mean[i % c] += v;
        }
        count += img.data.len() / c;
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; c];
    for img in &ds.train.images {
        for (i, v) in img.data.iter().enumerate() {
            let d = v - mean[i % c];
            var[i % c] += d * d;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt().max(1e-9)).collect();
    for split in [&mut ds.train, &mut ds.val] {
        for img in split.images.iter_mut() {
            for (i, v) in img.data.iter_mut().enumerate() {
                *v = (*v - mean[i % c]) / std[i % c];
            }
        }
    }
    ds.normalization = Normalization { mean, std };
}

/// Spec for loading IDX image/label pairs. When no test pair is given the
/// train pair is split by `val_fraction` (taken from the end after a seeded
/// shuffle).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_val_fraction() -> f64 {
    0.2
}

fn read_be_u32(bytes: &[u8], off: usize, path: &Path) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Input(format!("{}: truncated idx header", path.display())))
}

/// Reads an IDX image file (magic 0x00000803): big-endian dims, u8 pixels.
fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != 0x0000_0803 {
        return Err(Error::Input(format!(
            "{}: idx image magic is {magic:#010x}, expected 0x00000803",
            path.display()
        )));
    }
    let n = read_be_u32(&bytes, 4, path)? as usize;
    let rows = read_be_u32(&bytes, 8, path)? as usize;
    let cols = read_be_u32(&bytes, 12, path)? as usize;
    let want = 16 + n * rows * cols;
    if bytes.len() != want {
        return Err(Error::Input(format!(
            "{}: idx image file holds {} bytes, header implies {want}",
            path.display(),
            bytes.len()
        )));
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

/// Reads an IDX label file (magic 0x00000801): u8 labels.
fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != 0x0000_0801 {
        return Err(Error::Input(format!(
            "{}: idx label magic is {magic:#010x}, expected 0x00000801",
            path.display()
        )));
    }
    let n = read_be_u32(&bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::Input(format!(
            "{}: idx label file holds {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            8 + n
        )));
    }
    Ok(bytes[8..].to_vec())
}

fn idx_split(path_imgs: &Path, path_labels: &Path) -> Result<(Split, usize, usize)> {
    let (n, rows, cols, pixels) = load_idx_images(path_imgs)?;
    if rows != cols {
        return Err(Error::Input(format!(
            "{}: only square images are supported, got {rows}x{cols}",
            path_imgs.display()
        )));
    }
    let labels = load_idx_labels(path_labels)?;
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{} holds {n} images but {} holds {} labels",
            path_imgs.display(),
            path_labels.display(),
            labels.len()
        )));
    }
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut img = Image::zeros(rows, cols, 1);
        for (j, p) in pixels[i * rows * cols..(i + 1) * rows * cols].iter().enumerate() {
            img.data[j] = *p as f64 / 255.0;
        }
        images.push(img);
    }
    let classes = labels.iter().copied().max().map(|m| m as usize + 1).unwrap_or(0);
    Ok((
        Split { images, labels: labels.into_iter().map(|y| y as usize).collect() },
        rows,
        classes,
    ))
}

/// Loads an IDX dataset per the spec and normalizes with train statistics.
pub fn from_idx(spec: &IdxSpec) -> Result<Dataset> {
    let (train, size, train_classes) = idx_split(&spec.train_images, &spec.train_labels)?;
    let (train, val, classes) = match (&spec.test_images, &spec.test_labels) {
        (Some(ti), Some(tl)) => {
            let (val, vsize, val_classes) = idx_split(ti, tl)?;
            if vsize != size {
                return Err(Error::Input(format!(
                    "train images are {size}x{size} but test images are {vsize}x{vsize}"
                )));
            }
            (train, val, train_classes.max(val_classes))
        }
        (None, None) => {
            if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
                return Err(Error::Input(format!(
                    "val_fraction must lie in (0, 1), got {}",
                    spec.val_fraction
                )));
            }
            let n = train.len();
            let n_val = ((n as f64 * spec.val_fraction) as usize).max(1);
            if n_val >= n {
                return Err(Error::Input(format!(
                    "val_fraction {} leaves no training data",
                    spec.val_fraction
                )));
            }
            let order = rng::shuffled_indices(&mut rng::seeded(spec.seed), n);
            let mut tr = Split { images: Vec::new(), labels: Vec::new() };
            let mut va = Split { images: Vec::new(), labels: Vec::new() };
            for (rank, idx) in order.into_iter().enumerate() {
                let dst = if rank < n - n_val { &mut tr } else { &mut va };
                dst.images.push(train.images[idx].clone());
                dst.labels.push(train.labels[idx]);
            }
            (tr, va, train_classes)
        }
        _ => {
            return Err(Error::Input(
                "test_images and test_labels must be given together".into(),
            ))
        }
    };
    if classes < 2 {
        return Err(Error::Input(format!("labels span {classes} classes, need at least 2")));
    }
    let mut ds = Dataset {
        train,
        val,
        classes,
        image_size: size,
        channels: 1,
        normalization: Normalization { mean: vec![0.0], std: vec![1.0] },
    };
    normalize(&mut ds);
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let spec = SyntheticSpec { classes: 4, train_samples: 64, val_samples: 16, ..Default::default() };
        let a = synthetic(&spec).unwrap();
        let b = synthetic(&spec).unwrap();
        assert_eq!(a.train.labels, b.train.labels);
        assert_eq!(a.train.images[3].data, b.train.images[3].data);
        // Round-robin labels.
        let mut counts = vec![0usize; 4];
        for y in &a.train.labels {
            counts[*y] += 1;
        }
        assert!(counts.iter().all(|c| *c == 16));
        let c = synthetic(&SyntheticSpec { seed: 18, ..spec }).unwrap();
        assert_ne!(a.train.images[0].data, c.train.images[0].data);
    }

    #[test]
    fn synthetic_is_normalized_by_train_stats() {
        let spec = SyntheticSpec { classes: 4, train_samples: 128, val_samples: 32, ..Default::default() };
        let ds = synthetic(&spec).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for img in &ds.train.images {
            sum += img.data.iter().sum::<f64>();
            count += img.data.len();
        }
        let mean = sum / count as f64;
        assert!(mean.abs() < 1e-9, "train mean {mean}");
        let mut var = 0.0;
        for img in &ds.train.images {
            var += img.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        let std = (var / count as f64).sqrt();
        assert!((std - 1.0).abs() < 1e-9, "train std {std}");
    }

    #[test]
    fn synthetic_rejects_degenerate_specs() {
        let spec = SyntheticSpec { classes: 1, ..Default::default() };
        assert!(synthetic(&spec).is_err());
        let spec = SyntheticSpec { train_samples: 0, ..Default::default() };
        assert!(synthetic(&spec).is_err());
    }

    fn write_idx_pair(dir: &Path, n: usize, size: usize) -> (PathBuf, PathBuf) {
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&(n as u32).to_be_bytes());
        img.extend_from_slice(&(size as u32).to_be_bytes());
        img.extend_from_slice(&(size as u32).to_be_bytes());
        for i in 0..n * size * size {
            img.push((i % 251) as u8);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lab.extend_from_slice(&(n as u32).to_be_bytes());
        for i in 0..n {
            lab.push((i % 5) as u8);
        }
        let ip = dir.join("imgs.idx");
        let lp = dir.join("labels.idx");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_loader_roundtrip_and_split() {
        let dir = std::env::temp_dir().join(format!("idx-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let (ip, lp) = write_idx_pair(&dir, 50, 8);
        let spec = IdxSpec {
            train_images: ip.clone(),
            train_labels: lp.clone(),
            test_images: None,
            test_labels: None,
            val_fraction: 0.2,
            seed: 3,
        };
        let ds = from_idx(&spec).unwrap();
        assert_eq!(ds.train.len() + ds.val.len(), 50);
        assert_eq!(ds.val.len(), 10);
        assert_eq!(ds.classes, 5);
        assert_eq!(ds.image_size, 8);
        // Same spec, same split.
        let ds2 = from_idx(&spec).unwrap();
        assert_eq!(ds.train.labels, ds2.train.labels);

        // Corrupt magic.
        let mut bad = std::fs::read(&ip).unwrap();
        bad[3] = 0x99;
        let bp = dir.join("bad.idx");
        std::fs::write(&bp, bad).unwrap();
        let err = from_idx(&IdxSpec { train_images: bp, ..spec }).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
