use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use volume_core::{Plane, C32};

use crate::{ReconError, Result};

/// One contiguous run of slice indices along a plane's fixed axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlabRun {
    pub start: usize,
    pub len: usize,
}

/// Per-plane slab draws for one iteration; exactly `slices_per_plane`
/// indices per plane. A final shorter slab keeps the count exact and is
/// drawn over its own valid start range rather than clipped at the border.
#[derive(Debug, Clone)]
pub struct SlabPlan {
    pub per_plane: [(Plane, Vec<SlabRun>); 3],
}

pub fn sample_slabs(
    dims: (usize, usize, usize),
    slices_per_plane: usize,
    slab_size: usize,
    rng: &mut impl Rng,
) -> Result<SlabPlan> {
    if slices_per_plane == 0 {
        return Err(ReconError::invalid("need at least one slice per plane"));
    }
    let extents = [dims.0, dims.1, dims.2];
    if slab_size == 0 || slab_size > *extents.iter().min().unwrap() {
        return Err(ReconError::invalid(format!(
            "slab size {slab_size} exceeds a plane extent of {dims:?}"
        )));
    }
    let mut per_plane = Vec::with_capacity(3);
    for plane in Plane::ALL {
        let extent = extents[plane.fixed_axis()];
        let mut runs = Vec::new();
        let mut remaining = slices_per_plane;
        while remaining > 0 {
            let len = remaining.min(slab_size);
            let start = rng.gen_range(0..=extent - len);
            runs.push(SlabRun { start, len });
            remaining -= len;
        }
        per_plane.push((plane, runs));
    }
    Ok(SlabPlan {
        per_plane: per_plane.try_into().expect("three planes"),
    })
}

/// Flatten a plane's runs into slice indices.
pub fn slab_indices(runs: &[SlabRun]) -> Vec<usize> {
    runs.iter()
        .flat_map(|r| r.start..r.start + r.len)
        .collect()
}

/// Pull the indexed slices of one plane out of a volume.
pub fn extract_plane_slices(vol: &Array3<C32>, plane: Plane, indices: &[usize]) -> Vec<Array2<C32>> {
    indices
        .iter()
        .map(|&i| vol.index_axis(Axis(plane.fixed_axis()), i).to_owned())
        .collect()
}

/// Adjoint of `extract_plane_slices`: add per-slice gradients back into the
/// accumulator, summing where indices repeat.
pub fn scatter_plane_slices(
    acc: &mut Array3<C32>,
    plane: Plane,
    indices: &[usize],
    grads: &[Array2<C32>],
) {
    for (&i, g) in indices.iter().zip(grads.iter()) {
        let mut dst = acc.index_axis_mut(Axis(plane.fixed_axis()), i);
        dst += g;
    }
}
