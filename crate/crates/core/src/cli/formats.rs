//! On-disk formats: VGRD grids, PFM/PGM images, CSV logs and scene files.

use crate::geometry::Vec3;
use crate::image::Image;
use crate::inverse::IterRow;
use crate::scene::{
    Detector, Extinction, GridGeometry, LengthUnit, LightSource, ParticleSpecies, PhaseFunction, SceneSpec, Surface,
    VoxelGridField,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg} at byte offset {offset}")]
    Malformed { path: PathBuf, offset: usize, msg: String },
    #[error("{count} non-finite pixel(s), first at index {first}")]
    NonFinite { count: usize, first: usize },
    #[error("{path}: {msg}")]
    Scene { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, offset: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

pub const VGRD_MAGIC: &[u8; 4] = b"VGRD";
pub const VGRD_VERSION: u32 = 1;
pub const VGRD_HEADER: usize = 4 + 4 + 12 + 24 + 24 + 1;

pub fn encode_grid(field: &VoxelGridField) -> Vec<u8> {
    let g = &field.geometry;
    let mut b = Vec::with_capacity(VGRD_HEADER + 4 * field.values.len());
    b.extend_from_slice(VGRD_MAGIC);
    b.extend_from_slice(&VGRD_VERSION.to_le_bytes());
    for d in g.dims {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in [g.origin, g.voxel_size] {
        for k in 0..3 {
            b.extend_from_slice(&v[k].to_le_bytes());
        }
    }
    b.push(field.unit.tag());
    for &x in &field.values {
        b.extend_from_slice(&(x as f32).to_le_bytes());
    }
    b
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<VoxelGridField, FormatError> {
    if bytes.len() < VGRD_HEADER {
        let at = if bytes.len() < 4 || &bytes[..4] != VGRD_MAGIC { 0 } else { bytes.len() };
        let msg = if at == 0 { "bad magic" } else { "truncated header" };
        return Err(malformed(path, at, msg));
    }
    if &bytes[..4] != VGRD_MAGIC {
        return Err(malformed(path, 0, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VGRD_VERSION {
        return Err(malformed(path, 4, format!("unsupported version {version}")));
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n > 0 && n.checked_mul(4).is_some())
        .ok_or_else(|| malformed(path, 8, format!("bad dimensions {dims:?}")))?;
    let origin = Vec3::new(f64_at(20), f64_at(28), f64_at(36));
    let size = Vec3::new(f64_at(44), f64_at(52), f64_at(60));
    let unit = LengthUnit::from_tag(bytes[68]).ok_or_else(|| malformed(path, 68, format!("unit tag {}", bytes[68])))?;
    let want = VGRD_HEADER + 4 * n;
    if bytes.len() != want {
        return Err(malformed(
            path,
            bytes.len().min(want),
            format!("payload holds {} bytes, expected {}", bytes.len() - VGRD_HEADER, 4 * n),
        ));
    }
    let values = bytes[VGRD_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(VoxelGridField::new(GridGeometry::new(dims, origin, size), unit, values))
}

pub fn save_grid(path: &Path, field: &VoxelGridField) -> Result<(), FormatError> {
    fs::write(path, encode_grid(field)).map_err(io_err(path))
}

pub fn load_grid(path: &Path) -> Result<VoxelGridField, FormatError> {
    decode_grid(&fs::read(path).map_err(io_err(path))?, path)
}

fn check_finite(image: &Image) -> Result<(), FormatError> {
    let bad: Vec<usize> = (0..image.data.len()).filter(|&i| !image.data[i].is_finite()).collect();
    match bad.first() {
        Some(&first) => Err(FormatError::NonFinite { count: bad.len(), first }),
        None => Ok(()),
    }
}

/// Little-endian PFM, rows stored bottom to top.
pub fn encode_pfm(image: &Image) -> Result<Vec<u8>, FormatError> {
    check_finite(image)?;
    let mut b = format!("Pf\n{} {}\n-1.0\n", image.cols, image.rows).into_bytes();
    for r in (0..image.rows).rev() {
        for c in 0..image.cols {
            b.extend_from_slice(&(image.get(r, c) as f32).to_le_bytes());
        }
    }
    Ok(b)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Image, FormatError> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(path, pos, "truncated header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    pos += 1;
    if fields[0].1 != "Pf" {
        return Err(malformed(path, 0, "not a greyscale PFM"));
    }
    let num = |i: usize| fields[i].1.parse::<usize>().map_err(|_| malformed(path, fields[i].0, "bad dimension"));
    let (cols, rows) = (num(1)?, num(2)?);
    let scale: f64 = fields[3].1.parse().map_err(|_| malformed(path, fields[3].0, "bad scale"))?;
    let n = rows * cols;
    if bytes.len() < pos || bytes.len() - pos != 4 * n {
        return Err(malformed(path, pos.min(bytes.len()), format!("expected {} payload bytes", 4 * n)));
    }
    let mut img = Image::zeros(rows, cols);
    for (i, c) in bytes[pos..].chunks_exact(4).enumerate() {
        let raw: [u8; 4] = c.try_into().unwrap();
        let x = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (r, col) = (rows - 1 - i / cols, i % cols);
        img.data[r * cols + col] = x as f64;
    }
    Ok(img)
}

pub fn save_pfm(path: &Path, image: &Image) -> Result<(), FormatError> {
    fs::write(path, encode_pfm(image)?).map_err(io_err(path))
}

pub fn load_pfm(path: &Path) -> Result<Image, FormatError> {
    decode_pfm(&fs::read(path).map_err(io_err(path))?, path)
}

/// 8-bit preview, linear up to the image maximum then gamma 1/2.2.
pub fn save_pgm(path: &Path, image: &Image) -> Result<(), FormatError> {
    check_finite(image)?;
    let mx = image.max();
    let mut b = format!("P5\n{} {}\n255\n", image.cols, image.rows).into_bytes();
    b.extend(image.data.iter().map(|&x| {
        let t = if mx > 0.0 { (x / mx).clamp(0.0, 1.0) } else { 0.0 };
        (t.powf(1.0 / 2.2) * 255.0).round() as u8
    }));
    fs::write(path, b).map_err(io_err(path))
}

pub const LOSS_HEADER: &str = "iter,time_s,loss,eps,delta,stage";

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Loss history as CSV; undefined error columns are left empty.
pub fn loss_csv(rows: &[IterRow], with_phase: bool) -> String {
    let mut s = String::from(LOSS_HEADER);
    if with_phase {
        s.push_str(",phase");
    }
    s.push_str("\r\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}",
            r.iter,
            num(r.time_s),
            num(r.loss),
            num(r.eps),
            num(r.delta),
            r.stage
        ));
        if with_phase {
            s.push_str(&format!(",{}", r.phase));
        }
        s.push_str("\r\n");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn append_text(path: &Path, text: &str) -> Result<(), FormatError> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Extinction as written in a scene file: a constant or a grid file path
/// relative to the scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtinctionFile {
    Constant(f64),
    Grid { grid: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesFile {
    pub extinction: ExtinctionFile,
    pub albedo: f64,
    pub phase: PhaseFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub unit: LengthUnit,
    pub grid: GridGeometry,
    #[serde(default)]
    pub species: Vec<SpeciesFile>,
    #[serde(default)]
    pub surfaces: Vec<Surface>,
    pub light: LightSource,
    pub detectors: Vec<Detector>,
}

pub fn load_scene(path: &Path) -> Result<SceneSpec, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: SceneFile = serde_json::from_str(&text).map_err(|e| FormatError::Scene {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut species = Vec::with_capacity(file.species.len());
    for (j, s) in file.species.into_iter().enumerate() {
        let extinction = match s.extinction {
            ExtinctionFile::Constant(b) => Extinction::Constant(b),
            ExtinctionFile::Grid { grid } => {
                let f = load_grid(&dir.join(&grid))?;
                if f.geometry != file.grid {
                    return Err(FormatError::Scene {
                        path: path.to_path_buf(),
                        msg: format!("species {j}: grid {} does not match the scene grid", grid.display()),
                    });
                }
                Extinction::Grid(f)
            }
        };
        species.push(ParticleSpecies {
            extinction,
            albedo: s.albedo,
            phase: s.phase,
        });
    }
    Ok(SceneSpec {
        unit: file.unit,
        grid: file.grid,
        species,
        surfaces: file.surfaces,
        light: file.light,
        detectors: file.detectors,
    })
}

/// Writes `spec` as `path`; gridded species go to `<stem>_species<j>.vgrd`
/// beside it.
pub fn save_scene(path: &Path, spec: &SceneSpec) -> Result<(), FormatError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    let mut species = Vec::new();
    for (j, s) in spec.species.iter().enumerate() {
        let extinction = match &s.extinction {
            Extinction::Constant(b) => ExtinctionFile::Constant(*b),
            Extinction::Grid(f) => {
                let name = PathBuf::from(format!("{stem}_species{j}.vgrd"));
                save_grid(&dir.join(&name), f)?;
                ExtinctionFile::Grid { grid: name }
            }
        };
        species.push(SpeciesFile {
            extinction,
            albedo: s.albedo,
            phase: s.phase,
        });
    }
    let file = SceneFile {
        unit: spec.unit,
        grid: spec.grid,
        species,
        surfaces: spec.surfaces.clone(),
        light: spec.light,
        detectors: spec.detectors.clone(),
    };
    write_text(path, &serde_json::to_string_pretty(&file).expect("scene serializes"))
}
