//! Language-conditioned risk posteriors, repulsive cost fields, and
//! multi-heuristic grid planning.
//!
//! The pipeline: a rating sensor scores each obstacle class against a prompt
//! with `k` independent shots ([`sensor`]), a weighted-resampling posterior
//! summarizes those scores and their tail risk ([`posterior`]), the tail risk
//! scales per-class repulsive potentials into a cost field ([`field`]), and a
//! multi-queue best-first planner trades the field against path length while
//! keeping the shortest-path guarantee of its anchor heuristic ([`planner`]).
//! [`metrics`] quantifies the resulting paths and [`render`] draws them.

pub mod field;
pub mod grid;
pub mod map;
pub mod metrics;
pub mod planner;
pub mod posterior;
pub mod render;
pub mod rng;
pub mod sensor;

pub use field::{AuxPhiMode, CostField, CostFieldConfig, FieldError};
pub use grid::{Cell, Grid};
pub use map::{min_clearance_at, DistanceField, MapError, ObstacleClass, SemanticMap};
pub use metrics::{
    ablate_shots, compare_methods, format_metrics_table, method_row, path_metrics,
    AblationReport, MethodRow, MetricsError, PathMetrics,
};
pub use planner::{
    astar, dijkstra_oracle, mhastar, Connectivity, Expansions, PlanResult, PlanStatus,
    PlannerConfig, PlannerError,
};
pub use posterior::{BootstrapConfig, PosteriorError, PosteriorSummary, Statistic};
pub use render::{render_field_pgm, render_overlay, PathLayer, RenderError, RenderSpec};
pub use sensor::{Prompt, Provenance, SampleSet, SensorConfig, SensorError};
