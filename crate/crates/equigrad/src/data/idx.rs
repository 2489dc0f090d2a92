//! The IDX ubyte container, the format image classification sources are
//! published in: a big-endian magic (0x00 0x00, element type, dimension
//! count), one big-endian u32 per dimension, then the payload bytes.
//! Parsing is bit-exact and every rejection names the byte offset it
//! happened at.

use std::path::Path;

use crate::error::{Error, Result};

/// Element type tag for unsigned bytes, the only type supported here.
pub const IDX_UBYTE: u8 = 0x08;

/// A parsed IDX ubyte file: dimension sizes plus the raw payload, whose
/// length always equals the product of the dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

impl IdxFile {
    pub fn new(dims: Vec<usize>, payload: Vec<u8>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Idx(
                "a file needs at least one dimension".to_string(),
            ));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::Idx(format!(
                "{} dimensions cannot be encoded in a one-byte count",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Idx(
                "a dimension exceeds the format's u32 limit".to_string(),
            ));
        }
        let expected = checked_product(&dims)?;
        if payload.len() != expected {
            return Err(Error::Idx(format!(
                "payload holds {} bytes, dimensions {:?} require {expected}",
                payload.len(),
                dims
            )));
        }
        Ok(Self { dims, payload })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Interprets a 3-dimensional file as a stack of images, scaling pixels
    /// to [0, 1] by 1/255.
    pub fn images(&self) -> Result<(usize, usize, usize, Vec<f64>)> {
        let [n, h, w] = self.dims[..] else {
            return Err(Error::Idx(format!(
                "expected 3 dimensions (count, height, width), file has {:?}",
                self.dims
            )));
        };
        let pixels = self.payload.iter().map(|&b| f64::from(b) / 255.0).collect();
        Ok((n, h, w, pixels))
    }

    /// Interprets a 1-dimensional file as a label array.
    pub fn labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(Error::Idx(format!(
                "expected 1 dimension for labels, file has {:?}",
                self.dims
            )));
        }
        Ok(self.payload.iter().map(|&b| b as usize).collect())
    }
}

/// Decodes an IDX ubyte byte stream. Trailing bytes beyond the declared
/// payload are rejected, so parse and serialize are exact inverses.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(Error::Idx(format!(
            "truncated magic at offset 0: {} bytes, need 4",
            bytes.len()
        )));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx(format!(
            "bad magic at offset 0: {:#04x} {:#04x}, expected 0x00 0x00",
            bytes[0], bytes[1]
        )));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(Error::Idx(format!(
            "unsupported element type {:#04x} at offset 2, only ubyte ({IDX_UBYTE:#04x}) is supported",
            bytes[2]
        )));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Idx("zero dimension count at offset 3".to_string()));
    }
    let header_end = 4 + 4 * ndims;
    if bytes.len() < header_end {
        return Err(Error::Idx(format!(
            "truncated dimension header: {ndims} dimensions need {header_end} bytes, stream ends at offset {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let at = 4 + 4 * i;
            u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize
        })
        .collect();
    let expected = checked_product(&dims)?;
    let actual = bytes.len() - header_end;
    if actual != expected {
        return Err(Error::Idx(format!(
            "payload at offset {header_end} holds {actual} bytes, dimensions {dims:?} require {expected}"
        )));
    }
    Ok(IdxFile {
        dims,
        payload: bytes[header_end..].to_vec(),
    })
}

/// Encodes an IdxFile back to the byte stream `parse_idx` accepts.
pub fn serialize_idx(file: &IdxFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * file.dims.len() + file.payload.len());
    out.extend_from_slice(&[0, 0, IDX_UBYTE, file.dims.len() as u8]);
    for &d in &file.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&file.payload);
    out
}

/// Reads and parses an IDX file from disk, naming the path on failure.
pub fn load_idx(path: &Path) -> Result<IdxFile> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Idx(format!("cannot read {}: {e}", path.display())))?;
    parse_idx(&bytes).map_err(|e| Error::Idx(format!("{}: {e}", path.display())))
}

fn checked_product(dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::Idx(format!("dimension product overflows: {dims:?}")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_reference_vector() {
        let file = parse_idx(&[0, 0, 0x08, 1, 0, 0, 0, 3, 7, 0, 255]).unwrap();
        assert_eq!(file.dims(), &[3]);
        assert_eq!(file.payload(), &[7, 0, 255]);
        assert_eq!(file.labels().unwrap(), vec![7, 0, 255]);
    }

    #[test]
    fn truncated_payload_names_expected_and_actual_lengths() {
        let err = parse_idx(&[0, 0, 0x08, 1, 0, 0, 0, 3, 7, 0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("holds 2"), "{msg}");
        assert!(msg.contains("require 3"), "{msg}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let err = parse_idx(&[0, 0, 0x08, 1, 0, 0, 0, 1, 9, 9]).unwrap_err();
        assert!(err.to_string().contains("holds 2"), "{err}");
    }

    #[test]
    fn bad_magic_and_bad_type_name_their_offsets() {
        let err = parse_idx(&[1, 0, 0x08, 1, 0, 0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("offset 0"), "{err}");
        let err = parse_idx(&[0, 0, 0x0d, 1, 0, 0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("offset 2"), "{err}");
    }

    #[test]
    fn truncated_headers_are_rejected() {
        assert!(parse_idx(&[0, 0])
            .unwrap_err()
            .to_string()
            .contains("offset 0"));
        let err = parse_idx(&[0, 0, 0x08, 2, 0, 0, 0, 1]).unwrap_err();
        assert!(
            err.to_string().contains("truncated dimension header"),
            "{err}"
        );
    }

    #[test]
    fn round_trip_is_identity() {
        let file = IdxFile::new(vec![2, 3, 4], (0..24).collect()).unwrap();
        assert_eq!(parse_idx(&serialize_idx(&file)).unwrap(), file);
    }

    #[test]
    fn image_conversion_scales_to_unit_range() {
        let file = IdxFile::new(vec![1, 1, 3], vec![0, 51, 255]).unwrap();
        let (n, h, w, pixels) = file.images().unwrap();
        assert_eq!((n, h, w), (1, 1, 3));
        assert_eq!(pixels, vec![0.0, 51.0 / 255.0, 1.0]);
    }

    #[test]
    fn shape_accessors_reject_wrong_rank() {
        let file = IdxFile::new(vec![6], vec![0; 6]).unwrap();
        assert!(file.images().is_err());
        let file = IdxFile::new(vec![2, 3], vec![0; 6]).unwrap();
        assert!(file.labels().is_err());
    }

    #[test]
    fn constructor_checks_payload_length() {
        assert!(IdxFile::new(vec![2, 2], vec![0; 3]).is_err());
        assert!(IdxFile::new(vec![], vec![]).is_err());
    }
}
