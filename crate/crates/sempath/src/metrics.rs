//! Path quality measurement and the comparison/ablation harnesses: clearance
//! statistics per path, a three-method table (plain shortest path, the
//! rating-driven planner, a prompt-independent fixed-weight baseline), and a
//! shot-count ablation of posterior tail dispersion.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::field::{build_cost_field, scale_lambdas, scale_lambdas_from_cvars, CostFieldConfig};
use crate::grid::Cell;
use crate::map::{DistanceField, SemanticMap};
use crate::planner::{astar, mhastar, PlanStatus, PlannerConfig};
use crate::posterior::{posterior_for_all_classes, BootstrapConfig, PosteriorSummary};
use crate::rng::substream_seed;
use crate::sensor::{Prompt, Sampler};

/// Constant class weight used by the prompt-independent baseline: the
/// midpoint of the rating range, standing in for a fixed-cost method with
/// no tail-risk signal.
pub const FIXED_CLASS_WEIGHT: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("path is empty")]
    EmptyPath,
    #[error("path vertex {0} is outside the map")]
    VertexOutOfBounds(Cell),
    #[error("path vertex {0} lies on an obstacle")]
    VertexOnObstacle(Cell),
    #[error("distance fields do not cover class {0:?}")]
    MissingField(String),
    #[error("ablation needs at least one shot count")]
    NoShotCounts,
    #[error("ablation shot counts must be positive")]
    ZeroShots,
    #[error("ablation needs at least one run")]
    ZeroRuns,
    #[error(transparent)]
    Sensor(#[from] crate::sensor::SensorError),
    #[error(transparent)]
    Posterior(#[from] crate::posterior::PosteriorError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error(transparent)]
    Planner(#[from] crate::planner::PlannerError),
}

/// Clearance and length statistics for one vertex path. Clearances are
/// measured at path vertices against the per-class distance fields; on a
/// map with no obstacle classes they are infinite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMetrics {
    pub length: f64,
    pub min_dist: f64,
    pub avg_dist: f64,
    pub per_class_min: BTreeMap<String, f64>,
}

/// One method's line in the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub status: PlanStatus,
    pub combined_cost: Option<f64>,
    pub metrics: Option<PathMetrics>,
}

/// Posterior tail statistics collected over repeated sensor runs at each
/// shot count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub ks: Vec<usize>,
    /// label → one list per entry of `ks`, holding that class's CVaR from
    /// every run.
    pub per_k_cvar: BTreeMap<String, Vec<Vec<f64>>>,
    /// label → per-k sample standard deviation across runs; absent when
    /// there are fewer than two runs.
    pub dispersion: Option<BTreeMap<String, Vec<f64>>>,
}

/// Measures a vertex path: geometric length plus clearance statistics
/// against every obstacle class.
pub fn path_metrics(
    path: &[Cell],
    map: &SemanticMap,
    fields: &[DistanceField],
) -> Result<PathMetrics, MetricsError> {
    if path.is_empty() {
        return Err(MetricsError::EmptyPath);
    }
    for &cell in path {
        if !map.in_bounds(cell) {
            return Err(MetricsError::VertexOutOfBounds(cell));
        }
        if map.is_obstacle(cell) {
            return Err(MetricsError::VertexOnObstacle(cell));
        }
    }
    let length: f64 = path.windows(2).map(|w| w[0].distance(w[1])).sum();
    let mut per_class_min = BTreeMap::new();
    for class in map.classes() {
        let field = fields
            .iter()
            .find(|f| f.class_name() == class.name())
            .ok_or_else(|| MetricsError::MissingField(class.name().to_string()))?;
        let closest = path
            .iter()
            .map(|&cell| field.at(cell))
            .fold(f64::INFINITY, f64::min);
        per_class_min.insert(class.name().to_string(), closest);
    }
    let clearance_at = |cell: Cell| -> f64 {
        map.classes()
            .iter()
            .map(|class| {
                fields
                    .iter()
                    .find(|f| f.class_name() == class.name())
                    .expect("checked above")
                    .at(cell)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let clearances: Vec<f64> = path.iter().map(|&c| clearance_at(c)).collect();
    let min_dist = clearances.iter().copied().fold(f64::INFINITY, f64::min);
    let avg_dist = clearances.iter().sum::<f64>() / clearances.len() as f64;
    Ok(PathMetrics {
        length,
        min_dist,
        avg_dist,
        per_class_min,
    })
}

/// Wraps one plan as a table row, measuring its path when one was found.
pub fn method_row(
    method: &str,
    plan: &crate::planner::PlanResult,
    map: &SemanticMap,
    fields: &[DistanceField],
) -> Result<MethodRow, MetricsError> {
    let metrics = match plan.status {
        PlanStatus::Found => Some(path_metrics(&plan.path, map, fields)?),
        PlanStatus::NoPath => None,
    };
    Ok(MethodRow {
        method: method.to_string(),
        status: plan.status,
        combined_cost: plan.combined_cost,
        metrics,
    })
}

/// Plans the same map three ways and measures each result:
///
/// * `astar` — shortest geometric path, risk ignored (γ = 0);
/// * `ours` — the two-queue planner on the posterior-CVaR-scaled field;
/// * `fixed` — the same planner with every class at the constant
///   [`FIXED_CLASS_WEIGHT`], blind to the prompt.
///
/// A method that finds no path gets a row with empty metrics rather than
/// an error.
pub fn compare_methods(
    map: &SemanticMap,
    posteriors: &BTreeMap<String, PosteriorSummary>,
    planner: &PlannerConfig,
    alpha: f64,
) -> Result<Vec<MethodRow>, MetricsError> {
    planner.validate()?;
    let fields = map.distance_fields();
    let zero_lambdas: BTreeMap<String, f64> = map
        .classes()
        .iter()
        .map(|c| (c.name().to_string(), 0.0))
        .collect();

    let baseline_config = PlannerConfig {
        gamma: 0.0,
        ..*planner
    };
    let baseline_field = build_cost_field(
        map,
        &fields,
        &zero_lambdas,
        CostFieldConfig { gamma: 0.0, alpha },
    )?;
    let baseline = astar(map, &baseline_field, &baseline_config)?;

    let ours_lambdas = scale_lambdas(map.classes(), posteriors)?;
    let ours_field = build_cost_field(
        map,
        &fields,
        &ours_lambdas,
        CostFieldConfig {
            gamma: planner.gamma,
            alpha,
        },
    )?;
    let ours = mhastar(map, &ours_field, planner)?;

    let fixed_cvars: BTreeMap<String, f64> = map
        .classes()
        .iter()
        .map(|c| (c.name().to_string(), FIXED_CLASS_WEIGHT))
        .collect();
    let fixed_lambdas = scale_lambdas_from_cvars(map.classes(), &fixed_cvars)?;
    let fixed_field = build_cost_field(
        map,
        &fields,
        &fixed_lambdas,
        CostFieldConfig {
            gamma: planner.gamma,
            alpha,
        },
    )?;
    let fixed = mhastar(map, &fixed_field, planner)?;

    Ok(vec![
        method_row("astar", &baseline, map, &fields)?,
        method_row("ours", &ours, map, &fields)?,
        method_row("fixed", &fixed, map, &fields)?,
    ])
}

fn sample_std(values: &[f64]) -> f64 {
    // A constant series has zero spread by definition; computing it would
    // leave ~1-ulp noise from the mean's rounding.
    if values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Repeats the sample → posterior pipeline `runs` times at each shot count
/// and records how the per-class CVaR scatters across runs. Each (k, run)
/// pair draws from its own derived seed stream, so runs are independent
/// but the whole ablation is reproducible from one seed.
pub fn ablate_shots(
    prompt: &Prompt,
    ks: &[usize],
    runs: usize,
    sampler: &dyn Sampler,
    bootstrap: &BootstrapConfig,
) -> Result<AblationReport, MetricsError> {
    if ks.is_empty() {
        return Err(MetricsError::NoShotCounts);
    }
    if ks.contains(&0) {
        return Err(MetricsError::ZeroShots);
    }
    if runs == 0 {
        return Err(MetricsError::ZeroRuns);
    }
    bootstrap.validate()?;

    let mut per_k_cvar: BTreeMap<String, Vec<Vec<f64>>> = prompt
        .class_names()
        .iter()
        .map(|name| (name.clone(), vec![Vec::with_capacity(runs); ks.len()]))
        .collect();
    for (k_index, &k) in ks.iter().enumerate() {
        let k_seed = substream_seed(bootstrap.seed, k as u64);
        for run in 0..runs {
            let set = sampler.sample(prompt, k, substream_seed(k_seed, run as u64))?;
            let posteriors = posterior_for_all_classes(&set, bootstrap)?;
            for (label, summary) in &posteriors {
                per_k_cvar
                    .get_mut(label)
                    .expect("posterior classes match the prompt")[k_index]
                    .push(summary.cvar_alpha);
            }
        }
    }
    let dispersion = (runs >= 2).then(|| {
        per_k_cvar
            .iter()
            .map(|(label, per_k)| {
                (
                    label.clone(),
                    per_k.iter().map(|values| sample_std(values)).collect(),
                )
            })
            .collect()
    });
    Ok(AblationReport {
        ks: ks.to_vec(),
        per_k_cvar,
        dispersion,
    })
}

fn status_label(status: PlanStatus) -> &'static str {
    match status {
        PlanStatus::Found => "found",
        PlanStatus::NoPath => "no_path",
    }
}

/// Fixed-width text rendering of a comparison table, one method per line.
pub fn format_metrics_table(rows: &[MethodRow]) -> String {
    let mut out = format!(
        "{:<8} {:>9} {:>9} {:>9} {:>14}  {}\n",
        "method", "length", "min_dist", "avg_dist", "combined_cost", "status"
    );
    for row in rows {
        match (&row.metrics, row.combined_cost) {
            (Some(m), Some(cost)) => {
                out.push_str(&format!(
                    "{:<8} {:>9.2} {:>9.2} {:>9.2} {:>14.2}  {}\n",
                    row.method,
                    m.length,
                    m.min_dist,
                    m.avg_dist,
                    cost,
                    status_label(row.status)
                ));
            }
            _ => {
                out.push_str(&format!(
                    "{:<8} {:>9} {:>9} {:>9} {:>14}  {}\n",
                    row.method,
                    "-",
                    "-",
                    "-",
                    "-",
                    status_label(row.status)
                ));
            }
        }
    }
    out
}
