//! Datasets: IDX-format image/label ingestion and seeded synthetic blobs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Big-endian magic for IDX image files (unsigned bytes, 3 dimensions).
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Big-endian magic for IDX label files (unsigned bytes, 1 dimension).
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown magic {0:#010x}")]
    BadMagic(u32),
    #[error("file truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("dimension sizes overflow")]
    DimensionOverflow,
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0}")]
    BadArgument(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One split: `n` samples of `dim` features each, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Split {
    pub fn from_parts(
        dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Split, DataError> {
        if dim == 0 {
            return Err(DataError::BadArgument("feature dimension is zero".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(DataError::BadArgument(format!(
                "{} feature values cannot hold {} samples of dim {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        Ok(Split {
            dim,
            features,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Train/test splits plus the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub n_classes: usize,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.train.dim()
    }
}

/// Parsed IDX image file, pixels raw (unscaled).
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    let end = at + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            needed: end,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[at],
        bytes[at + 1],
        bytes[at + 2],
        bytes[at + 3],
    ]))
}

/// Parses an IDX image file: magic 0x00000803, three big-endian u32
/// dimensions (count, rows, cols), then raw row-major pixel bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let payload = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(DataError::DimensionOverflow)?;
    let needed = payload
        .checked_add(16)
        .ok_or(DataError::DimensionOverflow)?;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingBytes {
            extra: bytes.len() - needed,
        });
    }
    Ok(IdxImages {
        n,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parses an IDX label file: magic 0x00000801, one big-endian u32 count,
/// then raw label bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let needed = n.checked_add(8).ok_or(DataError::DimensionOverflow)?;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingBytes {
            extra: bytes.len() - needed,
        });
    }
    Ok(bytes[8..].to_vec())
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn build_split(
    images: IdxImages,
    labels: Vec<u8>,
    limit: Option<usize>,
    n_classes: usize,
) -> Result<Split, DataError> {
    if images.n != labels.len() {
        return Err(DataError::BadArgument(format!(
            "{} images but {} labels",
            images.n,
            labels.len()
        )));
    }
    let keep = limit.unwrap_or(images.n).min(images.n);
    let dim = images.rows * images.cols;
    let mut features = Vec::with_capacity(keep * dim);
    let mut out_labels = Vec::with_capacity(keep);
    for i in 0..keep {
        let label = labels[i] as usize;
        if label >= n_classes {
            return Err(DataError::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        out_labels.push(label);
        features.extend(
            images.pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&p| p as f64 / 255.0),
        );
    }
    Split::from_parts(dim, features, out_labels)
}

/// Loads the four standard MNIST-layout IDX files from `dir`, scaling
/// pixels to [0, 1]. `train_limit` / `test_limit` truncate the splits.
pub fn load_mnist_dir(
    dir: &Path,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
) -> Result<Dataset, DataError> {
    let n_classes = 10;
    let train = build_split(
        parse_idx_images(&read_file(&dir.join("train-images-idx3-ubyte"))?)?,
        parse_idx_labels(&read_file(&dir.join("train-labels-idx1-ubyte"))?)?,
        train_limit,
        n_classes,
    )?;
    let test = build_split(
        parse_idx_images(&read_file(&dir.join("t10k-images-idx3-ubyte"))?)?,
        parse_idx_labels(&read_file(&dir.join("t10k-labels-idx1-ubyte"))?)?,
        test_limit,
        n_classes,
    )?;
    Ok(Dataset {
        train,
        test,
        n_classes,
    })
}

/// Seeded Gaussian blobs: one unit-sphere centroid per class scaled to
/// radius 3.5, unit isotropic noise, labels round-robin, every fifth
/// sample held out for test.
pub fn gen_synthetic(
    seed: u64,
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
) -> Result<Dataset, DataError> {
    if n_samples == 0 || n_features == 0 || n_classes == 0 {
        return Err(DataError::BadArgument(
            "n_samples, n_features, n_classes must all be nonzero".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let mut c: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut c {
            *v *= 3.5 / norm;
        }
        centroids.push(c);
    }
    let mut tr = (Vec::new(), Vec::new());
    let mut te = (Vec::new(), Vec::new());
    for i in 0..n_samples {
        let label = i % n_classes;
        let (features, labels) = if i % 5 == 4 { &mut te } else { &mut tr };
        for d in 0..n_features {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(centroids[label][d] + noise);
        }
        labels.push(label);
    }
    Ok(Dataset {
        train: Split::from_parts(n_features, tr.0, tr.1)?,
        test: Split::from_parts(n_features, te.0, te.1)?,
        n_classes,
    })
}
