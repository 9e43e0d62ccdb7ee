//! Prompt-conditioned repulsive cost field: each obstacle class contributes
//! an exponentially decaying potential whose strength is its prior weight
//! scaled by the posterior tail risk, and the field is the per-cell sum.
//!
//! Obstacle cells carry infinite potential — they are hard geometry, not
//! merely expensive. The semantic weight γ stays out of the field itself so
//! one field serves many γ sweeps; the planner applies it per edge.

use std::collections::BTreeMap;

use crate::grid::{Cell, Grid};
use crate::map::{DistanceField, ObstacleClass, SemanticMap};
use crate::posterior::PosteriorSummary;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("distance must be nonnegative, got {0}")]
    NegativeDistance(f64),
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("gamma must be nonnegative, got {0}")]
    NegativeGamma(f64),
    #[error("no posterior for class {0:?}")]
    MissingPosterior(String),
    #[error("no scaled lambda for class {0:?}")]
    MissingLambda(String),
    #[error("no distance field for class {0:?}")]
    MissingField(String),
    #[error("distance field for {class:?} is {got_w}x{got_h}, map is {want_w}x{want_h}")]
    DimensionMismatch {
        class: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostFieldConfig {
    /// Semantic cost weight γ applied by the planner per edge.
    pub gamma: f64,
    /// Tail level the lambdas were scaled at; echoed for provenance.
    pub alpha: f64,
}

impl Default for CostFieldConfig {
    fn default() -> Self {
        CostFieldConfig {
            gamma: 1.5,
            alpha: 0.1,
        }
    }
}

/// How Φ is evaluated at continuous sample points inside the auxiliary
/// heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxPhiMode {
    /// Full per-class sum.
    ExactSum,
    /// Only the nearest class's term — cheaper, a lower bound when all
    /// classes share one λ.
    NearestDominant,
}

/// The additive repulsive field plus everything needed to re-evaluate it at
/// continuous points: per-class distance fields and scaled strengths, in map
/// class order.
#[derive(Debug, Clone, PartialEq)]
pub struct CostField {
    phi: Grid<f64>,
    lambda_scaled: BTreeMap<String, f64>,
    config: CostFieldConfig,
    class_fields: Vec<DistanceField>,
    class_lambdas: Vec<f64>,
}

impl CostField {
    /// Potential at a cell center; infinite on obstacle cells.
    pub fn phi_at(&self, cell: Cell) -> f64 {
        *self.phi.get(cell)
    }

    pub fn is_blocked(&self, cell: Cell) -> bool {
        self.phi.get(cell).is_infinite()
    }

    pub fn phi(&self) -> &Grid<f64> {
        &self.phi
    }

    pub fn lambda_scaled(&self) -> &BTreeMap<String, f64> {
        &self.lambda_scaled
    }

    pub fn config(&self) -> CostFieldConfig {
        self.config
    }

    pub fn width(&self) -> u32 {
        self.phi.width()
    }

    pub fn height(&self) -> u32 {
        self.phi.height()
    }

    /// Φ at a continuous point, per-class distances bilinearly interpolated.
    /// Never infinite: soft potential only, no hard-block marker. Terms
    /// beyond [`FAR_CUTOFF`] are dropped without evaluating the exponential.
    pub fn phi_continuous(&self, x: f64, y: f64, mode: AuxPhiMode) -> f64 {
        self.phi_with_clearance(x, y, mode).0
    }

    /// Φ plus the smallest interpolated class distance, in one pass over
    /// the class fields. The clearance is infinite when no class has any
    /// cells. Distance fields are 1-Lipschitz and their bilinear
    /// interpolants √2-Lipschitz, so the clearance lower-bounds its
    /// neighborhood: anywhere within radius r it is at least the returned
    /// value minus √2·r — which lets segment integrals skip spans that
    /// provably lie beyond [`FAR_CUTOFF`].
    pub fn phi_with_clearance(&self, x: f64, y: f64, mode: AuxPhiMode) -> (f64, f64) {
        const FAR: f64 = FAR_CUTOFF;
        match mode {
            AuxPhiMode::ExactSum => {
                let mut sum = 0.0;
                let mut clearance = f64::INFINITY;
                for (field, &lambda) in self.class_fields.iter().zip(&self.class_lambdas) {
                    let d = field.values().bilinear(x, y);
                    // `d <= FAR` rather than `!(d > FAR)`: a class with no
                    // cells has an all-infinite distance field whose
                    // interpolation is NaN, and NaN belongs with "too far".
                    if d <= FAR {
                        sum += lambda * (-d).exp();
                    }
                    if d < clearance {
                        clearance = d;
                    }
                }
                (sum, clearance)
            }
            AuxPhiMode::NearestDominant => {
                let mut best_lambda = 0.0;
                let mut best_distance = f64::INFINITY;
                for (field, &lambda) in self.class_fields.iter().zip(&self.class_lambdas) {
                    let d = field.values().bilinear(x, y);
                    // Strict `<` keeps the earlier (smaller-index) class on ties.
                    if d < best_distance {
                        best_distance = d;
                        best_lambda = lambda;
                    }
                }
                if best_distance <= FAR {
                    (best_lambda * (-best_distance).exp(), best_distance)
                } else {
                    (0.0, best_distance)
                }
            }
        }
    }
}

/// Distance beyond which a class's potential term is dropped unevaluated:
/// e^(−45) ≈ 2.9e−20 sits below one ulp of any reachable phi value, so the
/// cutoff is numerically invisible but saves the dominant cost on large,
/// mostly-empty grids.
pub const FAR_CUTOFF: f64 = 45.0;

/// The repulsive kernel: λ·e^(−d), strictly decreasing in distance.
pub fn phi_kernel(distance: f64, lambda: f64) -> Result<f64, FieldError> {
    if !(distance >= 0.0) {
        return Err(FieldError::NegativeDistance(distance));
    }
    if !(lambda >= 0.0) {
        return Err(FieldError::NegativeLambda(lambda));
    }
    Ok(lambda * (-distance).exp())
}

/// λ_scaled(c) = λ_prior(c) × CVaR_α(c), per class.
pub fn scale_lambdas(
    classes: &[ObstacleClass],
    posteriors: &BTreeMap<String, PosteriorSummary>,
) -> Result<BTreeMap<String, f64>, FieldError> {
    let cvars: BTreeMap<String, f64> = posteriors
        .iter()
        .map(|(name, summary)| (name.clone(), summary.cvar_alpha))
        .collect();
    scale_lambdas_from_cvars(classes, &cvars)
}

/// Same scaling from raw CVaR values, for replaying published numbers or
/// injected posteriors.
pub fn scale_lambdas_from_cvars(
    classes: &[ObstacleClass],
    cvars: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>, FieldError> {
    let mut out = BTreeMap::new();
    for class in classes {
        let cvar = cvars
            .get(class.name())
            .copied()
            .ok_or_else(|| FieldError::MissingPosterior(class.name().to_string()))?;
        out.insert(class.name().to_string(), class.lambda_prior() * cvar);
    }
    Ok(out)
}

/// Builds the additive field: phi(s) = Σ_c λ_scaled(c)·e^(−d_c(s)) on free
/// cells, +∞ on obstacle cells. One pass per class over the grid.
pub fn build_cost_field(
    map: &SemanticMap,
    fields: &[DistanceField],
    lambdas: &BTreeMap<String, f64>,
    config: CostFieldConfig,
) -> Result<CostField, FieldError> {
    if !(config.gamma >= 0.0) {
        return Err(FieldError::NegativeGamma(config.gamma));
    }
    let mut class_fields = Vec::with_capacity(map.classes().len());
    let mut class_lambdas = Vec::with_capacity(map.classes().len());
    for class in map.classes() {
        let field = fields
            .iter()
            .find(|f| f.class_name() == class.name())
            .ok_or_else(|| FieldError::MissingField(class.name().to_string()))?;
        let values = field.values();
        if values.width() != map.width() || values.height() != map.height() {
            return Err(FieldError::DimensionMismatch {
                class: class.name().to_string(),
                got_w: values.width(),
                got_h: values.height(),
                want_w: map.width(),
                want_h: map.height(),
            });
        }
        let lambda = lambdas
            .get(class.name())
            .copied()
            .ok_or_else(|| FieldError::MissingLambda(class.name().to_string()))?;
        if !(lambda >= 0.0) {
            return Err(FieldError::NegativeLambda(lambda));
        }
        class_fields.push(field.clone());
        class_lambdas.push(lambda);
    }

    let n = (map.width() as usize) * (map.height() as usize);
    let mut phi = vec![0.0f64; n];
    for (field, &lambda) in class_fields.iter().zip(&class_lambdas) {
        for (slot, &d) in phi.iter_mut().zip(field.values().data()) {
            *slot += lambda * (-d).exp();
        }
    }
    for y in 0..map.height() {
        for x in 0..map.width() {
            let cell = Cell::new(x, y);
            if map.is_obstacle(cell) {
                phi[(y * map.width() + x) as usize] = f64::INFINITY;
            }
        }
    }

    let lambda_scaled = map
        .classes()
        .iter()
        .zip(&class_lambdas)
        .map(|(class, &lambda)| (class.name().to_string(), lambda))
        .collect();
    Ok(CostField {
        phi: Grid::from_vec(map.width(), map.height(), phi),
        lambda_scaled,
        config,
        class_fields,
        class_lambdas,
    })
}

/// Single-term approximation of phi at a cell: the nearest class's λ times
/// e^(−δ) where δ is the minimum class distance. Ties pick the class with
/// the smaller index in map class order.
pub fn nearest_dominant_phi(
    map: &SemanticMap,
    fields: &[DistanceField],
    lambdas: &BTreeMap<String, f64>,
    cell: Cell,
) -> Result<f64, FieldError> {
    let mut best_lambda = 0.0;
    let mut best_distance = f64::INFINITY;
    for class in map.classes() {
        let field = fields
            .iter()
            .find(|f| f.class_name() == class.name())
            .ok_or_else(|| FieldError::MissingField(class.name().to_string()))?;
        let lambda = lambdas
            .get(class.name())
            .copied()
            .ok_or_else(|| FieldError::MissingLambda(class.name().to_string()))?;
        let d = field.at(cell);
        if d < best_distance {
            best_distance = d;
            best_lambda = lambda;
        }
    }
    if best_distance.is_finite() {
        Ok(best_lambda * (-best_distance).exp())
    } else {
        Ok(0.0)
    }
}
