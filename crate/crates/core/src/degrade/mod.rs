//! Synthetic dust/scratch degradation and the median baseline.

pub mod artifact;
pub mod median;
pub mod scene;
pub mod specfile;

pub use artifact::{
    composite, count_range, render_artifact, sample_specs, ArtifactMask, DegradationSpec, Geometry,
    Preset, Severity,
};
pub use median::median_filter;
pub use scene::synthetic_scene;
pub use specfile::{format_specs, parse_specs};

/// Median kernel used for the residual baseline unless configured otherwise.
pub const DEFAULT_MEDIAN_K: usize = 5;
