//! Light-path sampling, transmittance and image estimation.

mod dda;
pub mod estimator;
pub mod pdf;
mod record;
mod render;
mod trace;

pub use dda::{traverse, walk, SegmentIntersections};
pub use estimator::{source_prefactor, Evaluator, ForwardAccum, PixelLayout};
pub use pdf::{path_contribution, path_pdf};
pub use record::{Entry, EventKind, LeEvent, PathRecord, Span, Vertex, NONE};
pub use render::{render, RenderError, RenderOptions, RenderOutput, PATH_CHUNK};
pub(crate) use render::chunk_count;
pub use trace::{
    local_estimate, optical_depth, trace_path, transmittance, uniform_sphere, DistanceSample, TraceOptions, Tracer,
    DEFAULT_MAX_BOUNCES,
};
