//! IDX image and label files (the MNIST distribution format).

use std::path::{Path, PathBuf};

use serde_json::{json, Map};

use super::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    /// `n * rows * cols` unsigned bytes, image-major.
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse { offset: offset as u64, msg: "truncated header".into() })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse { offset: 0, msg: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}") });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Parse {
        offset: bytes.len() as u64,
        msg: format!("truncated payload: need {len} bytes from offset {start}"),
    })
}

pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Parse { offset: 8, msg: format!("empty image shape {rows}x{cols}") });
    }
    let pixels = payload(bytes, 16, n * rows * cols)?.to_vec();
    Ok(IdxImages { n, rows, cols, pixels })
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, n)?.to_vec())
}

/// Conventional label file next to an images file:
/// `train-images-idx3-ubyte` becomes `train-labels-idx1-ubyte`.
fn companion_labels(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_str()?;
    name.contains("images-idx3")
        .then(|| images.with_file_name(name.replace("images-idx3", "labels-idx1")))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads images as flattened rows. With `filter_label`, only images whose
/// label matches are kept; `limit` applies after filtering.
pub fn load_idx(
    images: &Path,
    labels: Option<&Path>,
    filter_label: Option<u8>,
    limit: Option<usize>,
    normalize: bool,
) -> Result<Dataset> {
    let img = read_idx_images(&read_file(images)?)?;
    let dim = img.rows * img.cols;
    let keep: Vec<usize> = match filter_label {
        None => (0..img.n).collect(),
        Some(label) => {
            let path = match labels {
                Some(p) => p.to_path_buf(),
                None => companion_labels(images).ok_or_else(|| {
                    Error::Config(format!("no label file given for {}", images.display()))
                })?,
            };
            let lab = read_idx_labels(&read_file(&path)?)?;
            if lab.len() != img.n {
                return Err(Error::Parse {
                    offset: 4,
                    msg: format!("{} labels for {} images", lab.len(), img.n),
                });
            }
            (0..img.n).filter(|&i| lab[i] == label).collect()
        }
    };
    let keep = &keep[..limit.map_or(keep.len(), |l| l.min(keep.len()))];
    if keep.is_empty() {
        return Err(Error::Config("no images selected".into()));
    }
    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let mut pts = Vec::with_capacity(keep.len() * dim);
    for &i in keep {
        pts.extend(img.pixels[i * dim..(i + 1) * dim].iter().map(|&b| b as f64 * scale));
    }
    let mut ds = Dataset::new(pts, dim)?.with_name("idx");
    let mut params = Map::new();
    params.insert("source".into(), json!(images.display().to_string()));
    params.insert("rows".into(), json!(img.rows));
    params.insert("cols".into(), json!(img.cols));
    params.insert("filter_label".into(), json!(filter_label));
    params.insert("normalize".into(), json!(normalize));
    ds.generator_params = params;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend((0..(n * rows * cols) as usize).map(fill));
        b
    }

    fn labels(l: &[u8]) -> Vec<u8> {
        let mut b = LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend((l.len() as u32).to_be_bytes());
        b.extend(l);
        b
    }

    #[test]
    fn parses_images() {
        let img = read_idx_images(&images(2, 2, 3, |i| i as u8)).unwrap();
        assert_eq!((img.n, img.rows, img.cols), (2, 2, 3));
        assert_eq!(img.pixels[11], 11);
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let mut b = images(1, 2, 2, |_| 0);
        b[3] = 0x01;
        assert!(matches!(read_idx_images(&b), Err(Error::Parse { offset: 0, .. })));
        let b = images(2, 2, 2, |_| 0);
        match read_idx_images(&b[..b.len() - 1]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, b.len() as u64 - 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_idx_images(&b[..6]), Err(Error::Parse { offset: 4, .. })));
        assert!(read_idx_labels(&b).is_err());
    }

    #[test]
    fn filters_by_label_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("t10k-images-idx3-ubyte");
        std::fs::write(&ip, images(3, 28, 28, |i| (i % 256) as u8)).unwrap();
        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte"), labels(&[5, 3, 5])).unwrap();
        let ds = load_idx(&ip, None, Some(5), None, true).unwrap();
        assert_eq!((ds.len(), ds.dim()), (2, 784));
        assert!(ds.points().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ds.point(1)[0], (2 * 784 % 256) as f64 / 255.0);
        let ds = load_idx(&ip, None, None, Some(1), false).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.point(0)[255], 255.0);
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("a");
        let lp = dir.path().join("b");
        std::fs::write(&ip, images(2, 1, 1, |_| 0)).unwrap();
        std::fs::write(&lp, labels(&[1])).unwrap();
        assert!(matches!(load_idx(&ip, Some(&lp), Some(1), None, true), Err(Error::Parse { .. })));
    }
}
