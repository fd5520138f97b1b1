//! `maps.bin`: the feature maps of one scene.
//!
//! Layout (little endian): magic `MVPM`, `u32` version, `u32` rank (4),
//! four `u64` dimensions `[views, height, width, channels]`, then the `f32`
//! values in that order (channel fastest).

use std::io::{Read, Write};
use std::path::Path;

use crate::decoder::{FeatureMap, FeatureMapSet};
use crate::error::{Error, Result};

pub const MAPS_MAGIC: &[u8; 4] = b"MVPM";
pub const MAPS_VERSION: u32 = 1;

pub fn write_maps(maps: &FeatureMapSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = maps
        .views
        .first()
        .map(|m| (m.height, m.width, m.channels))
        .unwrap_or((0, 0, 0));
    let mut buf = Vec::with_capacity(40 + maps.views.len() * h * w * c * 4);
    buf.extend_from_slice(MAPS_MAGIC);
    buf.extend_from_slice(&MAPS_VERSION.to_le_bytes());
    buf.extend_from_slice(&4u32.to_le_bytes());
    for d in [maps.views.len(), h, w, c] {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for m in &maps.views {
        if (m.height, m.width, m.channels) != (h, w, c) {
            return Err(Error::ShapeMismatch("views differ in size".into()));
        }
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_maps(path: impl AsRef<Path>) -> Result<FeatureMapSet> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        line: None,
        field: Some(path.display().to_string()),
        msg: m.into(),
    };
    if bytes.len() < 44 || &bytes[..4] != MAPS_MAGIC {
        return Err(bad("not a maps file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at =
        |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes")) as usize;
    if u32_at(4) != MAPS_VERSION {
        return Err(bad("unsupported version"));
    }
    if u32_at(8) != 4 {
        return Err(bad("expected rank 4"));
    }
    let (t, h, w, c) = (u64_at(12), u64_at(20), u64_at(28), u64_at(36));
    let n = h * w * c;
    if bytes.len() != 44 + t * n * 4 {
        return Err(bad("payload length does not match header"));
    }
    let views = (0..t)
        .map(|i| {
            let off = 44 + i * n * 4;
            FeatureMap {
                width: w,
                height: h,
                channels: c,
                data: bytes[off..off + n * 4]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            }
        })
        .collect();
    Ok(FeatureMapSet { views })
}
