//! `.cvol` and `.maps` on-disk formats.
//!
//! `.cvol`: magic `CVOL1\0`, 3x u32 LE dims (W, H, D), 3x f32 LE voxel sizes
//! in mm, then W*H*D interleaved (re, im) f32 pairs, row-major with D fastest.
//!
//! `.maps`: magic `CMAP1\0`, u32 LE coil count, then that many consecutive
//! `.cvol`-style payloads without the magic.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::Array3;

use crate::{CoilSensitivities, ComplexVolume, Result, VolumeError, C32};

pub const CVOL_MAGIC: &[u8; 6] = b"CVOL1\0";
pub const CMAP_MAGIC: &[u8; 6] = b"CMAP1\0";

/// Byte cursor that reports the offset of whatever failed to parse.
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(VolumeError::Format {
                offset: self.pos as u64,
                what: format!(
                    "truncated file: needed {n} bytes for {what}, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 6], name: &str) -> Result<()> {
        let at = self.pos as u64;
        let got = self.take(6, "magic")?;
        if got != magic {
            return Err(VolumeError::Format {
                offset: at,
                what: format!(
                    "bad magic {:?}, expected {name} ({:?})",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        Ok(())
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn read_f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn read_complex_payload(&mut self, count: usize) -> Result<Vec<C32>> {
        let bytes = self.take(count * 8, "complex samples")?;
        let mut out = Vec::with_capacity(count);
        for c in bytes.chunks_exact(8) {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            out.push(C32::new(re, im));
        }
        Ok(out)
    }
}

pub fn write_volume_payload<W: Write>(w: &mut W, vol: &ComplexVolume) -> Result<()> {
    let (wd, h, d) = vol.dims();
    w.write_u32::<LittleEndian>(wd as u32)?;
    w.write_u32::<LittleEndian>(h as u32)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    for &v in &vol.voxel_size {
        w.write_f32::<LittleEndian>(v)?;
    }
    // Standard layout guarantees D-fastest order on iteration.
    for z in vol.data.iter() {
        w.write_f32::<LittleEndian>(z.re)?;
        w.write_f32::<LittleEndian>(z.im)?;
    }
    Ok(())
}

pub fn read_volume_payload(cur: &mut Cursor) -> Result<ComplexVolume> {
    let at = cur.offset();
    let w = cur.read_u32("dim W")? as usize;
    let h = cur.read_u32("dim H")? as usize;
    let d = cur.read_u32("dim D")? as usize;
    if w == 0 || h == 0 || d == 0 {
        return Err(VolumeError::Format {
            offset: at,
            what: format!("zero dimension in header: {w}x{h}x{d}"),
        });
    }
    let vox = [
        cur.read_f32("voxel size w")?,
        cur.read_f32("voxel size h")?,
        cur.read_f32("voxel size d")?,
    ];
    if vox.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(VolumeError::Format {
            offset: at + 12,
            what: format!("non-positive voxel size {vox:?}"),
        });
    }
    let data = cur.read_complex_payload(w * h * d)?;
    let arr = Array3::from_shape_vec((w, h, d), data).expect("shape matches count");
    ComplexVolume::new(arr, vox)
}

pub fn write_cvol(vol: &ComplexVolume, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CVOL_MAGIC)?;
    write_volume_payload(&mut w, vol)?;
    w.flush()?;
    Ok(())
}

pub fn read_cvol(path: impl AsRef<Path>) -> Result<ComplexVolume> {
    let buf = std::fs::read(path)?;
    let mut cur = Cursor::new(&buf);
    cur.expect_magic(CVOL_MAGIC, "CVOL1")?;
    let vol = read_volume_payload(&mut cur)?;
    Ok(vol)
}

pub fn write_maps(maps: &CoilSensitivities, voxel_size: [f32; 3], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CMAP_MAGIC)?;
    w.write_u32::<LittleEndian>(maps.num_coils() as u32)?;
    for m in &maps.maps {
        let vol = ComplexVolume::new(m.clone(), voxel_size)?;
        write_volume_payload(&mut w, &vol)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_maps(path: impl AsRef<Path>) -> Result<(CoilSensitivities, [f32; 3])> {
    let buf = std::fs::read(path)?;
    let mut cur = Cursor::new(&buf);
    cur.expect_magic(CMAP_MAGIC, "CMAP1")?;
    let at = cur.offset();
    let c = cur.read_u32("coil count")? as usize;
    if c == 0 {
        return Err(VolumeError::Format {
            offset: at,
            what: "coil count must be >= 1".into(),
        });
    }
    let mut vols = Vec::with_capacity(c);
    for _ in 0..c {
        vols.push(read_volume_payload(&mut cur)?);
    }
    let dims = vols[0].dims();
    let vox = vols[0].voxel_size;
    if vols.iter().any(|v| v.dims() != dims) {
        return Err(VolumeError::Format {
            offset: at,
            what: "coil payloads disagree on dims".into(),
        });
    }
    let maps = CoilSensitivities::new(vols.into_iter().map(|v| v.data).collect())?;
    Ok((maps, vox))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{generate_phantom, synth_coil_maps};

    #[test]
    fn cvol_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cvol");
        let mut v = generate_phantom(9, (10, 12, 8), 5).unwrap();
        v.voxel_size = [0.6, 0.5, 0.5];
        write_cvol(&v, &path).unwrap();
        let r = read_cvol(&path).unwrap();
        assert_eq!(v.data, r.data);
        assert_eq!(v.voxel_size, r.voxel_size);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cvol");
        let v = generate_phantom(9, (8, 8, 8), 3).unwrap();
        write_cvol(&v, &path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        match read_cvol(&path) {
            Err(VolumeError::Format { offset, what }) => {
                assert!(offset > 0);
                assert!(what.contains("truncated"), "{what}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_names_expected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cvol");
        std::fs::write(&path, b"NOPE!\0rest").unwrap();
        match read_cvol(&path) {
            Err(VolumeError::Format { offset, what }) => {
                assert_eq!(offset, 0);
                assert!(what.contains("CVOL1"), "{what}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn maps_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.maps");
        let maps = synth_coil_maps((8, 10, 6), 4, 2).unwrap();
        write_maps(&maps, [1.0; 3], &path).unwrap();
        let (r, vox) = read_maps(&path).unwrap();
        assert_eq!(vox, [1.0; 3]);
        assert_eq!(r.num_coils(), 4);
        for (a, b) in maps.maps.iter().zip(r.maps.iter()) {
            assert_eq!(a, b);
        }
    }
}
