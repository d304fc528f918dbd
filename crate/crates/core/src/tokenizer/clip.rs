//! Raw clip files: the magic `TVT0`, then `T, H, W, C` as little-endian
//! `u32`, then `T*H*W*C` little-endian `f32` voxels in t, h, w, c order.

use std::fs;
use std::path::Path;

use ndarray::Array4;

use super::VideoClip;
use crate::error::{Error, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"TVT0";
const HEADER_LEN: usize = 20;

pub fn encode_clip(clip: &VideoClip<f32>) -> Vec<u8> {
    let (t, h, w, c) = clip.data.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * clip.data.len());
    out.extend_from_slice(CLIP_MAGIC);
    for v in [t, h, w, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in clip.data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_clip(bytes: &[u8]) -> Result<VideoClip<f32>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != CLIP_MAGIC {
        return Err(Error::BadClipFile("missing TVT0 header".into()));
    }
    let dim =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (t, h, w, c) = (dim(0), dim(1), dim(2), dim(3));
    if t == 0 || h == 0 || w == 0 || c == 0 {
        return Err(Error::BadClipFile(format!(
            "zero dimension in {t}x{h}x{w}x{c}"
        )));
    }
    let n = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::BadClipFile("dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(Error::BadClipFile(format!(
            "expected {} voxel bytes, found {}",
            4 * n,
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let data = Array4::from_shape_vec((t, h, w, c), data)
        .map_err(|e| Error::BadClipFile(e.to_string()))?;
    Ok(VideoClip { data })
}

pub fn read_clip(path: &Path) -> Result<VideoClip<f32>> {
    if path.as_os_str().is_empty() {
        return Err(Error::BadClipFile("empty clip path".into()));
    }
    let bytes =
        fs::read(path).map_err(|e| Error::BadClipFile(format!("{}: {e}", path.display())))?;
    decode_clip(&bytes)
}

pub fn write_clip(path: &Path, clip: &VideoClip<f32>) -> Result<()> {
    fs::write(path, encode_clip(clip))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let clip = VideoClip {
            data: Array4::from_shape_fn((2, 3, 4, 1), |(t, h, w, _)| (t * 12 + h * 4 + w) as f32),
        };
        let bytes = encode_clip(&clip);
        assert_eq!(&bytes[..4], b"TVT0");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 4 * 24);
        assert_eq!(decode_clip(&bytes).unwrap().data, clip.data);
    }

    #[test]
    fn truncated_and_empty_inputs_fail() {
        let clip = VideoClip {
            data: Array4::<f32>::zeros((1, 2, 2, 1)),
        };
        let bytes = encode_clip(&clip);
        assert!(matches!(
            decode_clip(&bytes[..bytes.len() - 1]),
            Err(Error::BadClipFile(_))
        ));
        assert!(matches!(decode_clip(b"TVT1"), Err(Error::BadClipFile(_))));
        assert!(matches!(
            read_clip(Path::new("")),
            Err(Error::BadClipFile(_))
        ));
    }
}
