//! Big-endian IDX files as distributed for MNIST-style datasets.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use super::Dataset;
use crate::error::{AsifError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an image/label file pair; pixels are scaled to `[0,1]` and ids
/// follow file order.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&fs::read(ip)?, &ip.display().to_string())?;
    let labels = parse_idx_labels(&fs::read(lp)?, &lp.display().to_string())?;
    if images.len() != labels.len() {
        return Err(AsifError::Parse {
            source_name: lp.display().to_string(),
            offset: 4,
            detail: format!("{} labels for {} images", labels.len(), images.len()),
        });
    }
    let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    Dataset::from_labelled(images, labels.into_iter().map(usize::from).collect(), classes)
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    name: &'a str,
}

impl Reader<'_> {
    fn err(&self, detail: impl Into<String>) -> AsifError {
        AsifError::Parse {
            source_name: self.name.to_string(),
            offset: self.cur.position(),
            detail: detail.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let at = self.cur.position();
        self.cur.read_u32::<BigEndian>().map_err(|_| AsifError::Parse {
            source_name: self.name.to_string(),
            offset: at,
            detail: format!("truncated while reading {what}"),
        })
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let at = self.cur.position();
        let available = self.cur.get_ref().len() as u64 - at;
        if (n as u64) > available {
            return Err(AsifError::Parse {
                source_name: self.name.to_string(),
                offset: at + available,
                detail: format!("truncated {what}: need {n} bytes, {available} available"),
            });
        }
        let mut buf = vec![0; n];
        self.cur.read_exact(&mut buf)?;
        Ok(buf)
    }
}

/// Parses an `0x00000803` image file into flattened `[0,1]` vectors.
pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<Vec<Vec<f64>>> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        name,
    };
    let magic = r.u32("magic")?;
    if magic != IMAGES_MAGIC {
        r.cur.set_position(0);
        return Err(r.err(format!("magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let px = rows * cols;
    let payload = r.bytes(n * px, "pixel payload")?;
    Ok(payload
        .chunks(px.max(1))
        .take(n)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect())
}

/// Parses an `0x00000801` label file.
pub fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<u8>> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        name,
    };
    let magic = r.u32("magic")?;
    if magic != LABELS_MAGIC {
        r.cur.set_position(0);
        return Err(r.err(format!("magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = r.u32("label count")? as usize;
    r.bytes(n, "label payload")
}
