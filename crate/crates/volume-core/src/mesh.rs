use crate::{Result, VolumeError};

/// Anatomical slicing plane. Each plane fixes one volume axis:
/// sagittal fixes W, coronal fixes H, axial fixes D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plane {
    Sagittal,
    Coronal,
    Axial,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Sagittal, Plane::Coronal, Plane::Axial];

    /// Index of the volume axis this plane fixes.
    pub fn fixed_axis(self) -> usize {
        match self {
            Plane::Sagittal => 0,
            Plane::Coronal => 1,
            Plane::Axial => 2,
        }
    }

    /// The two in-plane volume axes, in ascending order.
    pub fn in_plane_axes(self) -> (usize, usize) {
        match self {
            Plane::Sagittal => (1, 2),
            Plane::Coronal => (0, 2),
            Plane::Axial => (0, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
            Plane::Axial => "axial",
        }
    }
}

/// Cell-center coordinates of a size-`n` axis mapped into (-1, 1):
/// the i-th center sits at `-1 + (i + 0.5) * 2 / n`.
pub fn axis_coords(n: usize) -> Vec<f32> {
    let step = 2.0 / n as f32;
    (0..n).map(|i| -1.0 + (i as f32 + 0.5) * step).collect()
}

/// Regular cell-center grid over `[-1,1]^3`, row-major with the last axis
/// fastest. Physical spacing is carried as metadata for resolution-matched
/// slice views.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh3D {
    pub xs: Vec<f32>,
    pub ys: Vec<f32>,
    pub zs: Vec<f32>,
    /// Physical spacing in mm per axis.
    pub pixel_size: [f32; 3],
}

impl Mesh3D {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.xs.len(), self.ys.len(), self.zs.len())
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len() * self.zs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f32; 3] {
        [self.xs[i], self.ys[j], self.zs[k]]
    }

    /// Restrict the mesh to one plane at the given slice index.
    pub fn plane_restriction(&self, plane: Plane, index: usize) -> Mesh2D {
        let axes = [&self.xs, &self.ys, &self.zs];
        let (a, b) = plane.in_plane_axes();
        let f = plane.fixed_axis();
        Mesh2D {
            plane,
            position: axes[f][index],
            xs: axes[a].clone(),
            ys: axes[b].clone(),
            pixel_size: [self.pixel_size[a], self.pixel_size[b]],
        }
    }
}

/// Cell-center grid on one coordinate plane of `[-1,1]^3`.
///
/// `xs` and `ys` run along the plane's two in-plane volume axes (ascending
/// axis order); `position` is the normalized coordinate along the fixed axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    pub plane: Plane,
    pub position: f32,
    pub xs: Vec<f32>,
    pub ys: Vec<f32>,
    /// In-plane physical spacing in mm.
    pub pixel_size: [f32; 2],
}

impl Mesh2D {
    pub fn dims(&self) -> (usize, usize) {
        (self.xs.len(), self.ys.len())
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    /// 3D location of mesh node (i, j).
    pub fn point(&self, i: usize, j: usize) -> [f32; 3] {
        let mut p = [self.position; 3];
        let (a, b) = self.plane.in_plane_axes();
        p[a] = self.xs[i];
        p[b] = self.ys[j];
        p[self.plane.fixed_axis()] = self.position;
        p
    }
}

/// Cell-center mesh over `[-1,1]^3` for a `(W, H, D)` grid.
pub fn make_mesh3(dims: (usize, usize, usize)) -> Result<Mesh3D> {
    make_mesh3_with_spacing(dims, [1.0; 3])
}

pub fn make_mesh3_with_spacing(dims: (usize, usize, usize), pixel_size: [f32; 3]) -> Result<Mesh3D> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(VolumeError::invalid(format!(
            "mesh dims must all be >= 1, got {:?}",
            dims
        )));
    }
    Ok(Mesh3D {
        xs: axis_coords(dims.0),
        ys: axis_coords(dims.1),
        zs: axis_coords(dims.2),
        pixel_size,
    })
}
