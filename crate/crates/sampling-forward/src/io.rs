//! `.cksp` on-disk format: magic `CKSP1\0`, u32 coil count, 3x u32 dims
//! (W, H, D), f32 noise sigma, f32 scale, the mask payload, then one
//! `.cvol`-style payload (dims, voxel sizes, complex data) per coil.
//!
//! Mask payload: u32 H, u32 D, H*D bytes of 0/1 (row-major, D fastest),
//! 2x u32 ACS dims, one kind tag byte with kind parameters, f64 achieved_R.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::Array2;

use volume_core::io::{read_volume_payload, write_volume_payload, Cursor};
use volume_core::{ComplexVolume, VolumeError};

use crate::mask::{MaskKind, SamplingMask};
use crate::ops::MulticoilKSpace;
use crate::{Result, SamplingError};

pub const CKSP_MAGIC: &[u8; 6] = b"CKSP1\0";

const KIND_FULL: u8 = 0;
const KIND_POISSON: u8 = 1;
const KIND_GAUSSIAN: u8 = 2;

fn write_mask<W: Write>(w: &mut W, mask: &SamplingMask) -> Result<()> {
    let (h, d) = mask.shape();
    w.write_u32::<LittleEndian>(h as u32)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    for &b in mask.pattern.iter() {
        w.write_u8(b as u8)?;
    }
    w.write_u32::<LittleEndian>(mask.acs.0 as u32)?;
    w.write_u32::<LittleEndian>(mask.acs.1 as u32)?;
    match mask.kind {
        MaskKind::Full => w.write_u8(KIND_FULL)?,
        MaskKind::Poisson { r0, slope } => {
            w.write_u8(KIND_POISSON)?;
            w.write_f64::<LittleEndian>(r0)?;
            w.write_f64::<LittleEndian>(slope)?;
        }
        MaskKind::Gaussian { sigma_frac } => {
            w.write_u8(KIND_GAUSSIAN)?;
            w.write_f64::<LittleEndian>(sigma_frac)?;
        }
    }
    w.write_f64::<LittleEndian>(mask.achieved_r)?;
    Ok(())
}

fn format_err(offset: u64, what: impl Into<String>) -> SamplingError {
    SamplingError::Volume(VolumeError::Format {
        offset,
        what: what.into(),
    })
}

fn read_f64(cur: &mut Cursor, what: &str) -> Result<f64> {
    let lo = cur.read_u32(what)? as u64;
    let hi = cur.read_u32(what)? as u64;
    Ok(f64::from_bits(lo | (hi << 32)))
}

fn read_mask(cur: &mut Cursor, readout_len: usize) -> Result<SamplingMask> {
    let h = cur.read_u32("mask H")? as usize;
    let d = cur.read_u32("mask D")? as usize;
    let mut pattern = Array2::from_elem((h, d), false);
    for b in pattern.iter_mut() {
        let at = cur.offset();
        let v = cur.read_u8("mask byte")?;
        *b = match v {
            0 => false,
            1 => true,
            other => return Err(format_err(at, format!("mask byte must be 0/1, got {other}"))),
        };
    }
    let acs = (
        cur.read_u32("acs h")? as usize,
        cur.read_u32("acs d")? as usize,
    );
    let at = cur.offset();
    let tag = cur.read_u8("mask kind")?;
    let kind = match tag {
        KIND_FULL => MaskKind::Full,
        KIND_POISSON => MaskKind::Poisson {
            r0: read_f64(cur, "poisson r0")?,
            slope: read_f64(cur, "poisson slope")?,
        },
        KIND_GAUSSIAN => MaskKind::Gaussian {
            sigma_frac: read_f64(cur, "gaussian sigma")?,
        },
        other => return Err(format_err(at, format!("unknown mask kind tag {other}"))),
    };
    let stored_r = read_f64(cur, "achieved R")?;
    let mut mask = SamplingMask::new(pattern, readout_len, acs, kind)?;
    if (mask.achieved_r - stored_r).abs() > 1e-9 {
        return Err(format_err(
            at,
            format!(
                "stored achieved_R {stored_r} disagrees with pattern ({})",
                mask.achieved_r
            ),
        ));
    }
    mask.achieved_r = stored_r;
    Ok(mask)
}

pub fn write_cksp(ksp: &MulticoilKSpace, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKSP_MAGIC)?;
    w.write_u32::<LittleEndian>(ksp.num_coils() as u32)?;
    let (wd, h, d) = ksp.dims();
    w.write_u32::<LittleEndian>(wd as u32)?;
    w.write_u32::<LittleEndian>(h as u32)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    w.write_f32::<LittleEndian>(ksp.noise_sigma)?;
    w.write_f32::<LittleEndian>(ksp.scale)?;
    write_mask(&mut w, &ksp.mask)?;
    for coil in &ksp.coils {
        let vol = ComplexVolume::new(coil.clone(), ksp.voxel_size)?;
        write_volume_payload(&mut w, &vol)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cksp(path: impl AsRef<Path>) -> Result<MulticoilKSpace> {
    let buf = std::fs::read(path)?;
    let mut cur = Cursor::new(&buf);
    cur.expect_magic(CKSP_MAGIC, "CKSP1")?;
    let at = cur.offset();
    let c = cur.read_u32("coil count")? as usize;
    if c == 0 {
        return Err(format_err(at, "coil count must be >= 1"));
    }
    let w = cur.read_u32("dim W")? as usize;
    let h = cur.read_u32("dim H")? as usize;
    let d = cur.read_u32("dim D")? as usize;
    let noise_sigma = cur.read_f32("noise sigma")?;
    let scale = cur.read_f32("scale")?;
    let mask_at = cur.offset();
    let mask = read_mask(&mut cur, w)?;
    if mask.shape() != (h, d) {
        return Err(format_err(
            mask_at,
            format!("mask shape {:?} disagrees with dims {:?}", mask.shape(), (h, d)),
        ));
    }
    let mut coils = Vec::with_capacity(c);
    let mut voxel_size = [1.0f32; 3];
    for i in 0..c {
        let at = cur.offset();
        let vol = read_volume_payload(&mut cur).map_err(SamplingError::Volume)?;
        if vol.dims() != (w, h, d) {
            return Err(format_err(
                at,
                format!("coil {i} dims {:?} disagree with header {:?}", vol.dims(), (w, h, d)),
            ));
        }
        voxel_size = vol.voxel_size;
        coils.push(vol.data);
    }
    Ok(MulticoilKSpace {
        coils,
        mask,
        noise_sigma,
        scale,
        voxel_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::gen_poisson_mask;
    use crate::ops::forward;
    use volume_core::{generate_phantom, synth_coil_maps};

    #[test]
    fn cksp_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cksp");
        let dims = (8, 16, 16);
        let maps = synth_coil_maps(dims, 3, 0).unwrap();
        let mask = gen_poisson_mask((16, 16), 2.0, (4, 4), 1).unwrap();
        let vol = generate_phantom(0, dims, 4).unwrap();
        let ksp = forward(&vol, &maps, &mask).unwrap();
        write_cksp(&ksp, &path).unwrap();
        let r = read_cksp(&path).unwrap();
        assert_eq!(r.num_coils(), 3);
        assert_eq!(r.mask.pattern, ksp.mask.pattern);
        assert_eq!(r.mask.kind, ksp.mask.kind);
        assert_eq!(r.scale, ksp.scale);
        for (a, b) in r.coils.iter().zip(ksp.coils.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cksp");
        std::fs::write(&path, b"WRONG\0xx").unwrap();
        let err = read_cksp(&path);
        assert!(matches!(
            err,
            Err(SamplingError::Volume(VolumeError::Format { offset: 0, .. }))
        ));
    }
}
