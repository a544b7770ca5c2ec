//! Binary store dump: magic `PSTR`, version `u32`, record count `u64`,
//! generation `u64`, reference fingerprint `u64`, sorted flag `u8`, then the
//! records. All fields little-endian.

use super::PathStore;
use crate::geometry::Vec3;
use crate::transport::{Entry, EventKind, LeEvent, PathRecord, Span, Vertex};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PSTR";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a path store file")]
    BadMagic,
    #[error("unsupported store version {0}")]
    Version(u32),
    #[error("corrupt store: {0}")]
    Corrupt(String),
}

struct W<T: Write>(T);

impl<T: Write> W<T> {
    fn u8(&mut self, x: u8) -> std::io::Result<()> {
        self.0.write_all(&[x])
    }
    fn u32(&mut self, x: u32) -> std::io::Result<()> {
        self.0.write_all(&x.to_le_bytes())
    }
    fn u64(&mut self, x: u64) -> std::io::Result<()> {
        self.0.write_all(&x.to_le_bytes())
    }
    fn f32(&mut self, x: f32) -> std::io::Result<()> {
        self.0.write_all(&x.to_le_bytes())
    }
    fn f64(&mut self, x: f64) -> std::io::Result<()> {
        self.0.write_all(&x.to_le_bytes())
    }
    fn vec3(&mut self, v: Vec3) -> std::io::Result<()> {
        self.f64(v.x)?;
        self.f64(v.y)?;
        self.f64(v.z)
    }
    fn len(&mut self, n: usize) -> std::io::Result<()> {
        self.u32(n as u32)
    }
}

struct R<T: Read>(T);

impl<T: Read> R<T> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> std::io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f32(&mut self) -> std::io::Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn vec3(&mut self) -> std::io::Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn span(&mut self) -> std::io::Result<Span> {
        Ok(Span {
            start: self.u32()?,
            end: self.u32()?,
        })
    }
}

fn write_record<T: Write>(w: &mut W<T>, r: &PathRecord) -> std::io::Result<()> {
    w.u64(r.path_index)?;
    w.vec3(r.initial_direction)?;
    w.u8(r.truncated as u8)?;
    w.len(r.vertices.len())?;
    for v in &r.vertices {
        w.vec3(v.position)?;
        w.f64(v.cos)?;
        w.u32(v.voxel)?;
        w.u32(v.surface)?;
        w.u8(v.kind as u8)?;
        w.u8(v.species)?;
    }
    w.len(r.segments.len())?;
    for s in &r.segments {
        w.u32(s.start)?;
        w.u32(s.end)?;
    }
    w.len(r.le.len())?;
    for e in &r.le {
        w.u32(e.vertex)?;
        w.u32(e.detector)?;
        w.f32(e.u)?;
        w.f32(e.v)?;
        w.f64(e.cos)?;
        w.f64(e.geom)?;
        w.f64(e.tau)?;
        w.u32(e.span.start)?;
        w.u32(e.span.end)?;
    }
    w.len(r.entries.len())?;
    for e in &r.entries {
        w.u32(e.voxel)?;
        w.f32(e.length)?;
    }
    Ok(())
}

fn read_record<T: Read>(r: &mut R<T>) -> Result<PathRecord, StoreIoError> {
    let path_index = r.u64()?;
    let initial_direction = r.vec3()?;
    let truncated = r.u8()? != 0;
    let nv = r.u32()? as usize;
    let mut vertices = Vec::with_capacity(nv.min(1 << 16));
    for _ in 0..nv {
        let position = r.vec3()?;
        let cos = r.f64()?;
        let voxel = r.u32()?;
        let surface = r.u32()?;
        let k = r.u8()?;
        let kind = EventKind::from_u8(k).ok_or_else(|| StoreIoError::Corrupt(format!("event kind {k}")))?;
        let species = r.u8()?;
        vertices.push(Vertex {
            position,
            cos,
            voxel,
            surface,
            kind,
            species,
        });
    }
    let ns = r.u32()? as usize;
    let mut segments = Vec::with_capacity(ns.min(1 << 16));
    for _ in 0..ns {
        segments.push(r.span()?);
    }
    let nl = r.u32()? as usize;
    let mut le = Vec::with_capacity(nl.min(1 << 16));
    for _ in 0..nl {
        le.push(LeEvent {
            vertex: r.u32()?,
            detector: r.u32()?,
            u: r.f32()?,
            v: r.f32()?,
            cos: r.f64()?,
            geom: r.f64()?,
            tau: r.f64()?,
            span: r.span()?,
        });
    }
    let ne = r.u32()? as usize;
    let mut entries = Vec::with_capacity(ne.min(1 << 20));
    for _ in 0..ne {
        entries.push(Entry {
            voxel: r.u32()?,
            length: r.f32()?,
        });
    }
    if vertices.len() != segments.len() + 1 && !(vertices.is_empty() && segments.is_empty()) {
        return Err(StoreIoError::Corrupt("vertex and segment counts disagree".into()));
    }
    let bad_span = |s: &Span| s.start > s.end || s.end as usize > entries.len();
    if segments.iter().any(bad_span) || le.iter().any(|e| bad_span(&e.span) || e.vertex as usize >= vertices.len()) {
        return Err(StoreIoError::Corrupt("span out of range".into()));
    }
    Ok(PathRecord {
        path_index,
        initial_direction,
        truncated,
        vertices,
        segments,
        le,
        entries,
    })
}

pub fn save(store: &PathStore, path: &Path) -> Result<(), StoreIoError> {
    let mut w = W(BufWriter::new(File::create(path)?));
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u64(store.len() as u64)?;
    w.u64(store.generation())?;
    w.u64(store.reference())?;
    w.u8(store.is_sorted() as u8)?;
    for r in store.records() {
        write_record(&mut w, r)?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PathStore, StoreIoError> {
    let mut r = R(BufReader::new(File::open(path)?));
    if &r.bytes::<4>()? != MAGIC {
        return Err(StoreIoError::BadMagic);
    }
    let v = r.u32()?;
    if v != VERSION {
        return Err(StoreIoError::Version(v));
    }
    let n = r.u64()? as usize;
    let generation = r.u64()?;
    let reference = r.u64()?;
    let sorted = r.u8()? != 0;
    let mut records = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        records.push(read_record(&mut r)?);
    }
    Ok(PathStore::from_parts(records, sorted, generation, reference))
}
