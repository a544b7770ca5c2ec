use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum EventKind {
    /// Path origin on the light source.
    Emission = 0,
    /// Volume scattering.
    Scatter = 1,
    /// Surface reflection.
    Reflect = 2,
    /// Path left the scene bounds, or was truncated.
    Escape = 3,
}

impl EventKind {
    pub fn from_u8(x: u8) -> Option<Self> {
        match x {
            0 => Some(EventKind::Emission),
            1 => Some(EventKind::Scatter),
            2 => Some(EventKind::Reflect),
            3 => Some(EventKind::Escape),
            _ => None,
        }
    }
}

pub const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub position: Vec3,
    /// Scatter: cosine between incoming and outgoing directions.
    /// Reflect: cosine between the outgoing direction and the mirror of the
    /// incoming one. Unused (zero) for other kinds.
    pub cos: f64,
    /// Voxel of a scatter vertex, else [`NONE`].
    pub voxel: u32,
    /// Surface of a reflect vertex, else [`NONE`].
    pub surface: u32,
    pub kind: EventKind,
    /// Particle species sampled at a scatter vertex.
    pub species: u8,
}

/// Voxel id and length of one segment/voxel intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub voxel: u32,
    pub length: f32,
}

/// Range into [`PathRecord::entries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

/// Local-estimation connection of one vertex to one detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeEvent {
    pub vertex: u32,
    pub detector: u32,
    /// Normalized image-plane coordinates of the vertex.
    pub u: f32,
    pub v: f32,
    /// Same meaning as [`Vertex::cos`], for the direction to the detector.
    pub cos: f64,
    /// Geometry factor: `1 / r^2`, times the cosine at the surface for reflect
    /// vertices.
    pub geom: f64,
    /// Optical depth to the detector under the sampling parameters.
    pub tau: f64,
    pub span: Span,
}

/// One sampled light path with everything needed to re-evaluate it under new
/// parameters without ray casting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathRecord {
    pub path_index: u64,
    pub initial_direction: Vec3,
    pub truncated: bool,
    pub vertices: Vec<Vertex>,
    /// `segments[b]` joins `vertices[b]` and `vertices[b + 1]`.
    pub segments: Vec<Span>,
    /// Ordered by vertex.
    pub le: Vec<LeEvent>,
    pub entries: Vec<Entry>,
}

impl PathRecord {
    /// Number of segments (path size B).
    pub fn size(&self) -> usize {
        self.segments.len()
    }

    #[inline]
    pub fn span_entries(&self, s: Span) -> &[Entry] {
        &self.entries[s.start as usize..s.end as usize]
    }

    pub fn segment_entries(&self, b: usize) -> &[Entry] {
        self.span_entries(self.segments[b])
    }

    /// Heap bytes held by this record.
    pub fn heap_bytes(&self) -> usize {
        self.vertices.capacity() * std::mem::size_of::<Vertex>()
            + self.segments.capacity() * std::mem::size_of::<Span>()
            + self.le.capacity() * std::mem::size_of::<LeEvent>()
            + self.entries.capacity() * std::mem::size_of::<Entry>()
    }

    /// Unit direction of segment `b`.
    pub fn segment_direction(&self, b: usize) -> Vec3 {
        (self.vertices[b + 1].position - self.vertices[b].position).normalized()
    }

    pub fn scatter_count(&self) -> usize {
        self.vertices.iter().filter(|v| v.kind == EventKind::Scatter).count()
    }
}
