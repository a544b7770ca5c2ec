//! Small scene builders shared by the self-test, examples and tests.

use super::{Detector, Extinction, GridGeometry, LengthUnit, LightSource, ParticleSpecies, PhaseFunction, SceneSpec};
use crate::geometry::{Aabb, Vec3};

/// Grid of `dims` voxels filling the cube `[0, size]^3`.
pub fn cube_grid(size: f64, dims: [usize; 3]) -> GridGeometry {
    GridGeometry::covering(&Aabb::new(Vec3::ZERO, Vec3::new(size, size, size)), dims)
}

pub fn zenith_sun(radiance: f64) -> LightSource {
    LightSource::DirectionalSun {
        direction: Vec3::new(0.0, 0.0, -1.0),
        radiance,
    }
}

/// Camera straight above the centre of `grid`, looking down, at height
/// `height` above its top face.
pub fn nadir_camera(grid: &GridGeometry, height: f64, rows: usize, cols: usize, fov: f64) -> Detector {
    let b = grid.bounds();
    let c = b.center();
    Detector::looking_at(
        Vec3::new(c.x, c.y, b.max.z + height),
        c,
        Vec3::new(0.0, 1.0, 0.0),
        rows,
        cols,
        fov,
    )
}

/// `count` cameras on a circle of radius `radius` around the vertical axis
/// through the centre of `grid`, at height `height` above the centre, all
/// aimed at the centre.
pub fn camera_ring(grid: &GridGeometry, radius: f64, height: f64, count: usize, rows: usize, cols: usize, fov: f64) -> Vec<Detector> {
    let c = grid.bounds().center();
    (0..count)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let p = c + Vec3::new(radius * phi.cos(), radius * phi.sin(), height);
            Detector::looking_at(p, c, Vec3::new(0.0, 0.0, 1.0), rows, cols, fov)
        })
        .collect()
}

/// One-species medium with per-voxel extinction `values`.
pub fn single_species(
    grid: GridGeometry,
    unit: LengthUnit,
    values: Vec<f64>,
    albedo: f64,
    phase: PhaseFunction,
    light: LightSource,
    detectors: Vec<Detector>,
) -> SceneSpec {
    let field = super::VoxelGridField::new(grid, unit, values);
    SceneSpec {
        unit,
        grid,
        species: vec![ParticleSpecies {
            extinction: Extinction::Grid(field),
            albedo,
            phase,
        }],
        surfaces: vec![],
        light,
        detectors,
    }
}
