use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded contents of an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxTensor {
    Images { n: usize, rows: usize, cols: usize, data: Vec<u8> },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Parse {
            offset,
            reason: "truncated header".into(),
        })
}

/// Decodes a big-endian IDX image (`0x00000803`) or label (`0x00000801`) file.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = be_u32(bytes, 0)?;
    let (dims, header_len) = match magic {
        IMAGES_MAGIC => (vec![be_u32(bytes, 4)?, be_u32(bytes, 8)?, be_u32(bytes, 12)?], 16),
        LABELS_MAGIC => (vec![be_u32(bytes, 4)?], 8),
        other => {
            return Err(Error::Parse {
                offset: 0,
                reason: format!("unsupported IDX magic {other:#010x}"),
            })
        }
    };
    let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or(Error::Parse {
        offset: 4,
        reason: "declared size overflows".into(),
    })?;
    let payload = &bytes[header_len..];
    if payload.len() < len {
        return Err(Error::Parse {
            offset: bytes.len(),
            reason: format!("truncated payload: header declares {len} bytes, {} present", payload.len()),
        });
    }
    if payload.len() > len {
        return Err(Error::Parse {
            offset: header_len + len,
            reason: format!("{} trailing bytes", payload.len() - len),
        });
    }
    let data = payload.to_vec();
    Ok(match magic {
        IMAGES_MAGIC => IdxTensor::Images {
            n: dims[0] as usize,
            rows: dims[1] as usize,
            cols: dims[2] as usize,
            data,
        },
        _ => IdxTensor::Labels(data),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Grayscale digits with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub split: Split,
}

impl MnistSet {
    pub fn new(images: IdxTensor, labels: IdxTensor, split: Split) -> Result<Self> {
        match (images, labels) {
            (IdxTensor::Images { n, rows, cols, data }, IdxTensor::Labels(labels)) => {
                if labels.len() != n {
                    return Err(Error::Mismatch(format!("{n} images but {} labels", labels.len())));
                }
                if let Some(bad) = labels.iter().find(|&&l| l > 9) {
                    return Err(Error::Domain(format!("label {bad} outside 0..9")));
                }
                Ok(Self {
                    images: data,
                    labels,
                    rows,
                    cols,
                    split,
                })
            }
            _ => Err(Error::Mismatch("expected an image tensor and a label vector".into())),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let sz = self.rows * self.cols;
        &self.images[i * sz..(i + 1) * sz]
    }
}
