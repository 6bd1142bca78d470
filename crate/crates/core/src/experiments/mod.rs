//! Metrics, aggregation, plotting and the figure presets.

pub mod metrics;
pub mod presets;
pub mod svg;

pub use metrics::{action_gap_curve, aggregate, error_ratio, percentile_sorted, Stat};
pub use presets::{run_preset, Manifest, PresetName, PresetOptions};
pub use svg::{emit_svg, render_svg, Axes, Plot, Series};
