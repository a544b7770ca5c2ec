use crate::geometry::{Aabb, Vec3};
use serde::{Deserialize, Serialize};

/// Length unit declared by a scene; never converted internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    #[serde(alias = "meter")]
    M,
    #[serde(alias = "kilometer")]
    Km,
}

impl LengthUnit {
    pub fn tag(self) -> u8 {
        match self {
            LengthUnit::M => 0,
            LengthUnit::Km => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LengthUnit::M),
            1 => Some(LengthUnit::Km),
            _ => None,
        }
    }
}

/// Placement of a regular voxel grid. Voxels are indexed x-fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub voxel_size: Vec3,
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], origin: Vec3, voxel_size: Vec3) -> Self {
        GridGeometry {
            dims,
            origin,
            voxel_size,
        }
    }

    /// Grid of `dims` voxels filling `bounds`.
    pub fn covering(bounds: &Aabb, dims: [usize; 3]) -> Self {
        let e = bounds.extent();
        GridGeometry {
            dims,
            origin: bounds.min,
            voxel_size: Vec3::new(
                e.x / dims[0] as f64,
                e.y / dims[1] as f64,
                e.z / dims[2] as f64,
            ),
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new(
            self.origin,
            self.origin
                + Vec3::new(
                    self.voxel_size.x * self.dims[0] as f64,
                    self.voxel_size.y * self.dims[1] as f64,
                    self.voxel_size.z * self.dims[2] as f64,
                ),
        )
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn voxel_center(&self, index: usize) -> Vec3 {
        let c = self.coords(index);
        self.origin
            + Vec3::new(
                (c[0] as f64 + 0.5) * self.voxel_size.x,
                (c[1] as f64 + 0.5) * self.voxel_size.y,
                (c[2] as f64 + 0.5) * self.voxel_size.z,
            )
    }

    /// Voxel containing `p`; points on the upper faces belong to the last voxel.
    pub fn voxel_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - self.origin[a]) / self.voxel_size[a];
            let n = self.dims[a] as f64;
            let tol = 1e-9 * n;
            if !(f >= -tol && f <= n + tol) {
                return None;
            }
            out[a] = (f.floor().max(0.0) as usize).min(self.dims[a] - 1);
        }
        Some(out)
    }
}

/// Scalar field, one non-negative value per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGridField {
    pub geometry: GridGeometry,
    pub unit: LengthUnit,
    pub values: Vec<f64>,
}

impl VoxelGridField {
    pub fn new(geometry: GridGeometry, unit: LengthUnit, values: Vec<f64>) -> Self {
        VoxelGridField {
            geometry,
            unit,
            values,
        }
    }

    pub fn filled(geometry: GridGeometry, unit: LengthUnit, value: f64) -> Self {
        let n = geometry.voxel_count();
        VoxelGridField::new(geometry, unit, vec![value; n])
    }

    pub fn get(&self, ijk: [usize; 3]) -> f64 {
        self.values[self.geometry.index(ijk)]
    }
}
