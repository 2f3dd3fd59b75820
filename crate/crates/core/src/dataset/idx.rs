//! IDX (MNIST-style) tensor files.
//!
//! Layout: two zero bytes, a dtype byte (only `0x08`, unsigned byte, is
//! supported), a dimension-count byte, one big-endian `u32` per dimension,
//! then the raw payload in row-major order.

use std::fs;
use std::path::Path;

use super::{DatasetError, LabeledDataset, Result};

const UBYTE: u8 = 0x08;
pub(crate) const IMAGE_MAGIC: u32 = 0x0000_0803;
pub(crate) const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_err(offset: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        offset,
        message: message.into(),
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(format_err(
            bytes.len(),
            "file shorter than the 4-byte magic number",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, "magic number must start with two zero bytes"));
    }
    if bytes[2] != UBYTE {
        return Err(format_err(
            2,
            format!("unsupported dtype 0x{:02x}", bytes[2]),
        ));
    }
    let n_dims = bytes[3] as usize;
    if n_dims == 0 {
        return Err(format_err(3, "tensor must have at least one dimension"));
    }
    let header_len = 4 + 4 * n_dims;
    if bytes.len() < header_len {
        return Err(format_err(
            bytes.len(),
            format!("truncated header, expected {header_len} bytes"),
        ));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload_len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(4, "dimension product overflows"))?;
    let available = bytes.len() - header_len;
    if available < payload_len {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated payload, expected {payload_len} bytes after header, found {available}"
            ),
        ));
    }
    if available > payload_len {
        return Err(format_err(
            header_len + payload_len,
            "trailing bytes after payload",
        ));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header_len..].to_vec(),
    })
}

pub fn encode_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    out.extend_from_slice(&[0, 0, UBYTE, tensor.dims.len() as u8]);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

pub fn write_idx(path: impl AsRef<Path>, tensor: &IdxTensor) -> Result<()> {
    fs::write(path, encode_idx(tensor))?;
    Ok(())
}

fn magic_of(bytes: &[u8]) -> Option<u32> {
    bytes
        .get(..4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Decodes an image tensor and a label vector into a dataset.
///
/// Image bytes are scaled by 1/255. The class count is `max(label) + 1`.
pub fn load_idx_bytes(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    if magic_of(images) != Some(IMAGE_MAGIC) {
        return Err(format_err(0, "image file must carry magic 0x00000803"));
    }
    if magic_of(labels) != Some(LABEL_MAGIC) {
        return Err(format_err(0, "label file must carry magic 0x00000801"));
    }
    let images = parse_idx(images)?;
    let labels = parse_idx(labels)?;
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(DatasetError::Invalid(format!(
            "{n} images but {} labels",
            labels.dims[0]
        )));
    }
    let dim: usize = images.dims[1..].iter().product();
    let features = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::from_flat(features, dim, labels, n_classes)
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    load_idx_bytes(&fs::read(images)?, &fs::read(labels)?)
}

impl LabeledDataset {
    /// Quantizes features back to bytes (`round(v * 255)`) as an
    /// `N x dim` image tensor plus a label vector.
    pub fn to_idx(&self, image_dims: &[usize]) -> Result<(IdxTensor, IdxTensor)> {
        if image_dims.iter().product::<usize>() != self.dim() {
            return Err(DatasetError::Invalid(format!(
                "image dims {image_dims:?} do not multiply to {}",
                self.dim()
            )));
        }
        if self.n_classes() > 256 {
            return Err(DatasetError::Invalid(
                "labels do not fit in one byte".into(),
            ));
        }
        let mut dims = vec![self.len()];
        dims.extend_from_slice(image_dims);
        let data = self
            .features()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let labels = self.labels().iter().map(|&l| l as u8).collect();
        Ok((
            IdxTensor { dims, data },
            IdxTensor {
                dims: vec![self.len()],
                data: labels,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_two_images() -> Vec<u8> {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[0, 255, 128, 64, 1, 2, 3, 4]);
        bytes
    }

    #[test]
    fn hand_encoded_file_decodes() {
        let labels = [0u8, 0, 8, 1, 0, 0, 0, 2, 1, 0];
        let d = load_idx_bytes(&two_by_two_images(), &labels).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 4);
        assert_eq!(d.n_classes(), 2);
        assert_eq!(d.row(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(
            d.row(1),
            &[1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0, 4.0 / 255.0]
        );
        assert_eq!(d.labels(), &[1, 0]);
    }

    #[test]
    fn empty_file_is_format_error() {
        assert!(matches!(
            parse_idx(&[]),
            Err(DatasetError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_payload_names_offset() {
        let mut bytes = two_by_two_images();
        bytes.truncate(20);
        match parse_idx(&bytes) {
            Err(DatasetError::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = two_by_two_images();
        bytes[1] = 1;
        assert!(matches!(
            parse_idx(&bytes),
            Err(DatasetError::Format { offset: 0, .. })
        ));
        bytes[1] = 0;
        bytes[2] = 0x0d;
        assert!(matches!(
            parse_idx(&bytes),
            Err(DatasetError::Format { offset: 2, .. })
        ));
    }

    #[test]
    fn labels_and_images_must_be_swapped_correctly() {
        let labels = [0u8, 0, 8, 1, 0, 0, 0, 2, 1, 0];
        assert!(load_idx_bytes(&labels, &two_by_two_images()).is_err());
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            rows in prop::collection::vec((prop::collection::vec(any::<u8>(), 6), 0usize..5), 1..20)
        ) {
            let features = rows.iter().map(|(r, _)| r.iter().map(|&b| f64::from(b) / 255.0).collect()).collect();
            let labels: Vec<usize> = rows.iter().map(|(_, l)| *l).collect();
            let n_classes = labels.iter().max().unwrap() + 1;
            let d = LabeledDataset::from_rows(features, labels, n_classes).unwrap();
            let (img, lab) = d.to_idx(&[2, 3]).unwrap();
            let back = load_idx_bytes(&encode_idx(&img), &encode_idx(&lab)).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
