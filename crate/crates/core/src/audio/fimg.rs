//! `.fimg` cache files: magic `FIMG`, u32 version, u32 side, u8 channel
//! count, then little-endian f32 values channel by channel in row-major order.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::FeatureImage;

pub const FIMG_MAGIC: &[u8; 4] = b"FIMG";
pub const FIMG_VERSION: u32 = 1;

pub fn write_fimg<W: Write>(mut w: W, img: &FeatureImage) -> Result<()> {
    w.write_all(FIMG_MAGIC)?;
    w.write_all(&FIMG_VERSION.to_le_bytes())?;
    w.write_all(&(img.side() as u32).to_le_bytes())?;
    w.write_all(&[FeatureImage::CHANNELS as u8])?;
    let mut buf = Vec::with_capacity(img.data().len() * 4);
    for v in img.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_fimg<R: Read>(mut r: R) -> Result<FeatureImage> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FIMG_MAGIC {
        return Err(Error::Format(format!("bad fimg magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FIMG_VERSION {
        return Err(Error::Format(format!("unsupported fimg version {version}")));
    }
    r.read_exact(&mut word)?;
    let side = u32::from_le_bytes(word) as usize;
    let mut channels = [0u8; 1];
    r.read_exact(&mut channels)?;
    if channels[0] as usize != FeatureImage::CHANNELS {
        return Err(Error::Format(format!(
            "expected 3 channels, found {}",
            channels[0]
        )));
    }
    let mut raw = vec![0u8; FeatureImage::CHANNELS * side * side * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureImage::from_vec(side, data)
}
