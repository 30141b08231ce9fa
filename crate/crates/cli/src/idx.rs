//! Reader and writer for the IDX files MNIST ships in.
//!
//! Headers are big-endian: a 4-byte magic, then one 4-byte size per
//! dimension. The payload is unsigned bytes.

use std::path::Path;

use mlpform_core::{Dataset, Matrix};

use crate::error::{CliError, CliResult};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw image file contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// Pixels flattened per image and scaled into `[0, 1]`.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Matrix::from_vec(self.count, self.rows * self.cols, data).expect("sized by the header")
    }
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, String> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(format!("truncated header: expected {need} bytes, found {}", bytes.len()));
    }
    let word = |at: usize| u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap());
    let found = word(0);
    if found != magic {
        return Err(format!("bad magic at offset 0: expected {magic:#010x}, found {found:#010x}"));
    }
    Ok((0..dims).map(|d| word(4 + 4 * d) as usize).collect())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], String> {
    let expected = offset + len;
    if bytes.len() != expected {
        let what = if bytes.len() < expected { "truncated file" } else { "trailing data" };
        return Err(format!(
            "{what}: expected {expected} bytes ({offset}-byte header + {len} payload), found {}",
            bytes.len()
        ));
    }
    Ok(&bytes[offset..])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, String> {
    let dims = header(bytes, IMAGE_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| format!("dimensions {count}x{rows}x{cols} at offset 4 overflow"))?;
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, String> {
    let count = header(bytes, LABEL_MAGIC, 1)?[0];
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for word in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn format(path: &Path) -> impl Fn(String) -> CliError + '_ {
    move |message| CliError::Format { path: path.to_path_buf(), message }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Loads an image/label pair as an `M x D` matrix in `[0, 1]` plus labels.
pub fn load_idx(images: &Path, labels: &Path) -> CliResult<(Matrix, Vec<usize>)> {
    let img = parse_images(&read(images)?).map_err(format(images))?;
    let lab = parse_labels(&read(labels)?).map_err(format(labels))?;
    if lab.len() != img.count {
        return Err(format(labels)(format!(
            "label count {} at offset 4 does not match image count {}",
            lab.len(),
            img.count
        )));
    }
    Ok((img.to_matrix(), lab.into_iter().map(usize::from).collect()))
}

/// [`load_idx`] wrapped into a dataset with `classes` classes.
pub fn load_dataset(images: &Path, labels: &Path, classes: usize) -> CliResult<Dataset> {
    let (x, labels) = load_idx(images, labels)?;
    Ok(Dataset::new(x, labels, classes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_images() -> IdxImages {
        IdxImages { count: 2, rows: 2, cols: 3, pixels: vec![0, 255, 51, 102, 153, 204, 1, 2, 3, 4, 5, 6] }
    }

    #[test]
    fn encode_parse_round_trip() {
        let img = two_images();
        assert_eq!(parse_images(&encode_images(&img)).unwrap(), img);
        assert_eq!(parse_labels(&encode_labels(&[7, 3])).unwrap(), vec![7, 3]);
    }

    #[test]
    fn pixels_scale_to_unit_interval() {
        let m = two_images().to_matrix();
        assert_eq!((m.rows(), m.cols()), (2, 6));
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), 0.2);
        assert_eq!(m.get(1, 5), 6.0 / 255.0);
    }

    #[test]
    fn bad_magic_reports_offset() {
        let mut bytes = encode_images(&two_images());
        bytes[3] = 0x01;
        let err = parse_images(&bytes).unwrap_err();
        assert!(err.contains("offset 0") && err.contains("0x00000801"), "{err}");
        assert!(parse_labels(&encode_images(&two_images())).is_err());
    }

    #[test]
    fn truncation_names_both_sizes() {
        let bytes = encode_images(&two_images());
        let err = parse_images(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(err.contains("expected 28") && err.contains("found 23"), "{err}");
        let err = parse_labels(&[0, 0, 8]).unwrap_err();
        assert!(err.contains("expected 8") && err.contains("found 3"), "{err}");
        let mut long = encode_labels(&[1]);
        long.push(0);
        assert!(parse_labels(&long).unwrap_err().contains("trailing"));
    }
}
