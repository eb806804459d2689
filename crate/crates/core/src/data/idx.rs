//! IDX files (the MNIST container): big-endian magic `0x0000 08 nd`
//! (unsigned bytes, `nd` dimensions), `nd` big-endian u32 dims, raw bytes.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};

pub const IMAGES_MAGIC_3D: u32 = 0x0000_0803;
pub const IMAGES_MAGIC_4D: u32 = 0x0000_0804;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn header(path: &Path, bytes: &[u8], allowed: &[u32]) -> Result<(Vec<usize>, usize), DataError> {
    let p = path.display().to_string();
    let truncated = |expected| DataError::Truncated {
        path: p.clone(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if !allowed.contains(&magic) {
        return Err(DataError::Magic {
            path: p,
            expected: allowed[0],
            found: magic,
        });
    }
    let nd = (magic & 0xff) as usize;
    let head = 4 + 4 * nd;
    if bytes.len() < head {
        return Err(truncated(head));
    }
    let dims: Vec<usize> = (0..nd)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let payload: usize = dims.iter().product();
    if bytes.len() < head + payload {
        return Err(truncated(head + payload));
    }
    if bytes.len() > head + payload {
        return Err(DataError::Dims { path: p, dims });
    }
    Ok((dims, head))
}

/// Images as NCHW floats `byte / 255`. Accepts `[N, rows, cols]`
/// (one channel) and `[N, rows, cols, channels]`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<(Vec<f32>, [usize; 4]), DataError> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let (dims, head) = header(path, &bytes, &[IMAGES_MAGIC_3D, IMAGES_MAGIC_4D])?;
    let (n, h, w, c) = match dims[..] {
        [n, h, w] => (n, h, w, 1),
        [n, h, w, c] => (n, h, w, c),
        _ => unreachable!("magic restricts rank"),
    };
    if h == 0 || w == 0 || c == 0 {
        return Err(DataError::Dims {
            path: path.display().to_string(),
            dims,
        });
    }
    let src = &bytes[head..];
    let mut out = vec![0.0f32; n * c * h * w];
    for img in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = src[((img * h + y) * w + x) * c + ch];
                    out[((img * c + ch) * h + y) * w + x] = v as f32 / 255.0;
                }
            }
        }
    }
    Ok((out, [n, c, h, w]))
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>, DataError> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let (_, head) = header(path, &bytes, &[LABELS_MAGIC])?;
    Ok(bytes[head..].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair. The class count is `max label + 1`
/// unless `num_classes` is given.
pub fn load_idx_dataset(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<Dataset, DataError> {
    let (images, [n, c, h, w]) = read_idx_images(image_path)?;
    let labels = read_idx_labels(label_path)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(images, labels, [c, h, w], classes)
}

/// Writes `[N, rows, cols]` unsigned-byte images.
pub fn write_idx_images(path: impl AsRef<Path>, pixels: &[u8], n: usize, rows: usize, cols: usize) -> std::io::Result<()> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut out = IMAGES_MAGIC_3D.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> std::io::Result<()> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)
}
