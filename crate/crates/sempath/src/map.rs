//! Labeled planning environment: a bounded 2-D grid with named obstacle
//! classes, plus exact per-class Euclidean distance fields.
//!
//! Distances are measured between cell centers in cell units. Obstacle cells
//! are hard (untraversable) in addition to exerting potential. The map is
//! immutable after load and safe to share across planner and field
//! computations.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{Cell, Grid};

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("malformed map document: {0}")]
    Malformed(String),
    #[error("could not read map document: {0}")]
    Io(#[from] std::io::Error),
    #[error("map dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("class name must be non-empty")]
    EmptyClassName,
    #[error("duplicate class name {0:?}")]
    DuplicateClassName(String),
    #[error("class {0:?} has no cells")]
    EmptyClass(String),
    #[error("class {class:?} has negative lambda_prior {lambda}")]
    NegativeLambda { class: String, lambda: f64 },
    #[error("cell {cell} of class {class:?} is out of bounds ({width}x{height})")]
    CellOutOfBounds {
        class: String,
        cell: Cell,
        width: u32,
        height: u32,
    },
    #[error("cell {cell} belongs to both {first:?} and {second:?}")]
    OverlappingClasses {
        cell: Cell,
        first: String,
        second: String,
    },
    #[error("{which} {cell} is out of bounds ({width}x{height})")]
    EndpointOutOfBounds {
        which: &'static str,
        cell: Cell,
        width: u32,
        height: u32,
    },
    #[error("{which} {cell} lies inside obstacle class {class:?}")]
    EndpointInObstacle {
        which: &'static str,
        cell: Cell,
        class: String,
    },
    #[error("rect [{x0},{y0},{x1},{y1}] of class {class:?} is inverted")]
    InvertedRect {
        class: String,
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
    },
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error("distance fields do not cover class {0:?}")]
    MissingField(String),
}

/// One named obstacle class: a set of occupied cells and a repulsion-strength
/// prior that the posterior CVaR later scales.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleClass {
    name: String,
    cells: BTreeSet<Cell>,
    lambda_prior: f64,
}

impl ObstacleClass {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cells(&self) -> &BTreeSet<Cell> {
        &self.cells
    }

    pub fn lambda_prior(&self) -> f64 {
        self.lambda_prior
    }
}

/// Exact Euclidean distance from every cell center to the nearest obstacle
/// cell center of one class, in cell units.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    class_name: String,
    values: Grid<f64>,
}

impl DistanceField {
    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn at(&self, cell: Cell) -> f64 {
        *self.values.get(cell)
    }
}

/// The labeled planning environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    width: u32,
    height: u32,
    classes: Vec<ObstacleClass>,
    start: Cell,
    goal: Cell,
    // Per-cell class index, u16::MAX for free. Derived at load.
    occupancy: Grid<u16>,
}

const FREE: u16 = u16::MAX;

/// On-disk map document. Rectangles are inclusive on both corners; `cells`
/// and `rects` for one class are unioned and deduplicated.
#[derive(Debug, Serialize, Deserialize)]
struct MapDocument {
    width: u32,
    height: u32,
    start: Cell,
    goal: Cell,
    classes: Vec<ClassDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassDocument {
    name: String,
    #[serde(default = "default_lambda")]
    lambda_prior: f64,
    #[serde(default)]
    cells: Vec<Cell>,
    #[serde(default)]
    rects: Vec<[u32; 4]>,
}

fn default_lambda() -> f64 {
    1.0
}

impl SemanticMap {
    /// Loads and validates a map document from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses and validates a map document from JSON text.
    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let doc: MapDocument =
            serde_json::from_str(text).map_err(|e| MapError::Malformed(e.to_string()))?;
        let mut classes = Vec::with_capacity(doc.classes.len());
        for class in doc.classes {
            let mut cells: BTreeSet<Cell> = class.cells.iter().copied().collect();
            for &[x0, y0, x1, y1] in &class.rects {
                if x1 < x0 || y1 < y0 {
                    return Err(MapError::InvertedRect {
                        class: class.name.clone(),
                        x0,
                        y0,
                        x1,
                        y1,
                    });
                }
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        cells.insert(Cell::new(x, y));
                    }
                }
            }
            classes.push((class.name, class.lambda_prior, cells));
        }
        Self::new(doc.width, doc.height, doc.start, doc.goal, classes)
    }

    /// Builds a validated map from expanded per-class cell sets.
    pub fn new(
        width: u32,
        height: u32,
        start: Cell,
        goal: Cell,
        classes: Vec<(String, f64, BTreeSet<Cell>)>,
    ) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::EmptyDimensions { width, height });
        }
        let mut seen_names = BTreeSet::new();
        let mut occupancy = Grid::filled(width, height, FREE);
        let mut validated = Vec::with_capacity(classes.len());
        for (index, (name, lambda_prior, cells)) in classes.into_iter().enumerate() {
            if name.is_empty() {
                return Err(MapError::EmptyClassName);
            }
            if !seen_names.insert(name.clone()) {
                return Err(MapError::DuplicateClassName(name));
            }
            if cells.is_empty() {
                return Err(MapError::EmptyClass(name));
            }
            if !(lambda_prior >= 0.0) {
                return Err(MapError::NegativeLambda {
                    class: name,
                    lambda: lambda_prior,
                });
            }
            for &cell in &cells {
                if cell.x >= width || cell.y >= height {
                    return Err(MapError::CellOutOfBounds {
                        class: name,
                        cell,
                        width,
                        height,
                    });
                }
                let slot = occupancy.get_mut(cell);
                if *slot != FREE {
                    let first: &(String, f64, BTreeSet<Cell>) = &validated[*slot as usize];
                    return Err(MapError::OverlappingClasses {
                        cell,
                        first: first.0.clone(),
                        second: name,
                    });
                }
                *slot = index as u16;
            }
            validated.push((name, lambda_prior, cells));
        }
        for (which, cell) in [("start", start), ("goal", goal)] {
            if cell.x >= width || cell.y >= height {
                return Err(MapError::EndpointOutOfBounds {
                    which,
                    cell,
                    width,
                    height,
                });
            }
            let slot = *occupancy.get(cell);
            if slot != FREE {
                return Err(MapError::EndpointInObstacle {
                    which,
                    cell,
                    class: validated[slot as usize].0.clone(),
                });
            }
        }
        let classes = validated
            .into_iter()
            .map(|(name, lambda_prior, cells)| ObstacleClass {
                name,
                cells,
                lambda_prior,
            })
            .collect();
        Ok(SemanticMap {
            width,
            height,
            classes,
            start,
            goal,
            occupancy,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn classes(&self) -> &[ObstacleClass] {
        &self.classes
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        *self.occupancy.get(cell) != FREE
    }

    /// Index of the class occupying `cell`, if any.
    pub fn class_at(&self, cell: Cell) -> Option<usize> {
        match *self.occupancy.get(cell) {
            FREE => None,
            idx => Some(idx as usize),
        }
    }

    /// Exact Euclidean distance field for one class.
    pub fn distance_field(&self, class_name: &str) -> Result<DistanceField, MapError> {
        let class = self
            .classes
            .iter()
            .find(|c| c.name == class_name)
            .ok_or_else(|| MapError::UnknownClass(class_name.to_string()))?;
        Ok(DistanceField {
            class_name: class.name.clone(),
            values: euclidean_distance_transform(self.width, self.height, &class.cells),
        })
    }

    /// Distance fields for every class, in class order.
    pub fn distance_fields(&self) -> Vec<DistanceField> {
        self.classes
            .iter()
            .map(|c| DistanceField {
                class_name: c.name.clone(),
                values: euclidean_distance_transform(self.width, self.height, &c.cells),
            })
            .collect()
    }
}

/// Minimum over classes of the per-class distance at `cell` — the clearance.
pub fn min_clearance_at(
    map: &SemanticMap,
    fields: &[DistanceField],
    cell: Cell,
) -> Result<f64, MapError> {
    if !map.in_bounds(cell) {
        return Err(MapError::EndpointOutOfBounds {
            which: "query cell",
            cell,
            width: map.width,
            height: map.height,
        });
    }
    let mut min = f64::INFINITY;
    for class in &map.classes {
        let field = fields
            .iter()
            .find(|f| f.class_name == class.name)
            .ok_or_else(|| MapError::MissingField(class.name.clone()))?;
        min = min.min(field.at(cell));
    }
    Ok(min)
}

/// Exact squared Euclidean distance transform (two-pass lower-envelope
/// method), then square roots. `O(N)` per class.
fn euclidean_distance_transform(width: u32, height: u32, obstacles: &BTreeSet<Cell>) -> Grid<f64> {
    let w = width as usize;
    let h = height as usize;

    // Pass 1: per column, squared distance to the nearest obstacle row.
    let mut column_sq = vec![f64::INFINITY; w * h];
    for x in 0..w {
        let mut last_obstacle: Option<usize> = None;
        for y in 0..h {
            if obstacles.contains(&Cell::new(x as u32, y as u32)) {
                last_obstacle = Some(y);
            }
            if let Some(oy) = last_obstacle {
                let d = (y - oy) as f64;
                column_sq[y * w + x] = d * d;
            }
        }
        last_obstacle = None;
        for y in (0..h).rev() {
            if obstacles.contains(&Cell::new(x as u32, y as u32)) {
                last_obstacle = Some(y);
            }
            if let Some(oy) = last_obstacle {
                let d = (oy - y) as f64;
                let sq = d * d;
                if sq < column_sq[y * w + x] {
                    column_sq[y * w + x] = sq;
                }
            }
        }
    }

    // Pass 2: per row, lower envelope of parabolas over the column distances.
    let mut out = vec![0.0f64; w * h];
    let mut f = vec![0.0f64; w];
    let mut v = vec![0usize; w];
    let mut z = vec![0.0f64; w + 1];
    for y in 0..h {
        for x in 0..w {
            f[x] = column_sq[y * w + x];
        }
        let mut k = 0usize;
        let mut started = false;
        for q in 0..w {
            if f[q].is_infinite() {
                continue;
            }
            if !started {
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                started = true;
                continue;
            }
            let mut s;
            loop {
                let p = v[k];
                s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                    / (2.0 * q as f64 - 2.0 * p as f64);
                if s <= z[k] {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                } else {
                    break;
                }
            }
            if s <= z[k] {
                // Degenerate: new parabola dominates everything so far.
                v[k] = q;
            } else {
                k += 1;
                v[k] = q;
            }
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        debug_assert!(started, "class has at least one obstacle cell");
        let mut k = 0usize;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let p = v[k];
            let dx = x as f64 - p as f64;
            out[y * w + x] = (dx * dx + f[p]).sqrt();
        }
    }

    Grid::from_vec(width, height, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_map() -> &'static str {
        r#"{
            "width": 10, "height": 10,
            "start": [0, 0], "goal": [9, 9],
            "classes": [
                {"name": "crane", "lambda_prior": 1.0, "rects": [[2, 2, 3, 3]]}
            ]
        }"#
    }

    #[test]
    fn rect_expands_to_cell_set() {
        let map = SemanticMap::from_json(square_map()).unwrap();
        assert_eq!(map.classes()[0].cells().len(), 4);
        assert!(map.is_obstacle(Cell::new(2, 3)));
        assert!(!map.is_obstacle(Cell::new(4, 4)));
    }

    #[test]
    fn start_in_obstacle_is_rejected() {
        let doc = r#"{
            "width": 10, "height": 10,
            "start": [2, 2], "goal": [9, 9],
            "classes": [{"name": "crane", "rects": [[2, 2, 3, 3]]}]
        }"#;
        match SemanticMap::from_json(doc) {
            Err(MapError::EndpointInObstacle { which: "start", class, .. }) => {
                assert_eq!(class, "crane");
            }
            other => panic!("expected start-in-obstacle, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_classes_are_rejected() {
        let doc = r#"{
            "width": 10, "height": 10,
            "start": [0, 0], "goal": [9, 9],
            "classes": [
                {"name": "a", "cells": [[5, 5]]},
                {"name": "b", "cells": [[5, 5], [6, 6]]}
            ]
        }"#;
        match SemanticMap::from_json(doc) {
            Err(MapError::OverlappingClasses { cell, first, second }) => {
                assert_eq!(cell, Cell::new(5, 5));
                assert_eq!((first.as_str(), second.as_str()), ("a", "b"));
            }
            other => panic!("expected overlap error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_cells_within_one_class_deduplicate() {
        let doc = r#"{
            "width": 10, "height": 10,
            "start": [0, 0], "goal": [9, 9],
            "classes": [{"name": "a", "cells": [[5, 5], [5, 5]], "rects": [[5, 5, 5, 6]]}]
        }"#;
        let map = SemanticMap::from_json(doc).unwrap();
        assert_eq!(map.classes()[0].cells().len(), 2);
    }

    #[test]
    fn out_of_bounds_cell_is_rejected() {
        let doc = r#"{
            "width": 4, "height": 4,
            "start": [0, 0], "goal": [3, 3],
            "classes": [{"name": "a", "cells": [[4, 0]]}]
        }"#;
        assert!(matches!(
            SemanticMap::from_json(doc),
            Err(MapError::CellOutOfBounds { .. })
        ));
    }

    #[test]
    fn malformed_document_is_rejected() {
        assert!(matches!(
            SemanticMap::from_json("{\"width\": 3"),
            Err(MapError::Malformed(_))
        ));
    }

    #[test]
    fn distance_zero_on_obstacle_and_exact_nearby() {
        let doc = r#"{
            "width": 5, "height": 5,
            "start": [0, 0], "goal": [4, 4],
            "classes": [{"name": "a", "cells": [[2, 2]]}]
        }"#;
        let map = SemanticMap::from_json(doc).unwrap();
        let field = map.distance_field("a").unwrap();
        assert_eq!(field.at(Cell::new(2, 2)), 0.0);
        let d = field.at(Cell::new(0, 0));
        assert!((d - 8.0f64.sqrt()).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn distance_from_square_block() {
        // 4-cell block (2,2)-(3,3); nearest cell to (5,3) is (3,3) at distance 2.
        let map = SemanticMap::from_json(square_map()).unwrap();
        let field = map.distance_field("crane").unwrap();
        assert!((field.at(Cell::new(5, 3)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_class_is_an_error() {
        let map = SemanticMap::from_json(square_map()).unwrap();
        assert!(matches!(
            map.distance_field("bulldozer"),
            Err(MapError::UnknownClass(_))
        ));
    }

    #[test]
    fn clearance_is_min_over_classes() {
        let doc = r#"{
            "width": 8, "height": 8,
            "start": [0, 0], "goal": [7, 7],
            "classes": [
                {"name": "far", "cells": [[0, 4]]},
                {"name": "near", "cells": [[4, 3]]}
            ]
        }"#;
        let map = SemanticMap::from_json(doc).unwrap();
        let fields = map.distance_fields();
        // (3,4): distance 3.0 to "far", sqrt(2) to "near".
        let c = min_clearance_at(&map, &fields, Cell::new(3, 4)).unwrap();
        assert!((c - 2.0f64.sqrt()).abs() < 1e-12);
        // On an obstacle the clearance is zero.
        let z = min_clearance_at(&map, &fields, Cell::new(0, 4)).unwrap();
        assert_eq!(z, 0.0);
        // Single class: equals that class's field value.
        let single = SemanticMap::from_json(square_map()).unwrap();
        let sf = single.distance_fields();
        let cell = Cell::new(7, 1);
        assert_eq!(
            min_clearance_at(&single, &sf, cell).unwrap(),
            sf[0].at(cell)
        );
    }

    #[test]
    fn distance_field_is_deterministic() {
        let map = SemanticMap::from_json(square_map()).unwrap();
        let a = map.distance_field("crane").unwrap();
        let b = map.distance_field("crane").unwrap();
        assert_eq!(a.values().data(), b.values().data());
    }

    /// Reference O(N * |obstacles|) scan, kept as the oracle for the
    /// two-pass transform.
    pub(crate) fn brute_force_distances(
        width: u32,
        height: u32,
        obstacles: &BTreeSet<Cell>,
    ) -> Grid<f64> {
        let mut out = Grid::filled(width, height, f64::INFINITY);
        for y in 0..height {
            for x in 0..width {
                let here = Cell::new(x, y);
                let mut best = f64::INFINITY;
                for &obs in obstacles {
                    best = best.min(here.distance(obs));
                }
                out.set(here, best);
            }
        }
        out
    }

    proptest::proptest! {
        #[test]
        fn transform_matches_brute_force(
            width in 1u32..=32,
            height in 1u32..=32,
            seeds in proptest::collection::vec((0u32..32, 0u32..32), 1..40),
        ) {
            let obstacles: BTreeSet<Cell> = seeds
                .into_iter()
                .map(|(x, y)| Cell::new(x % width, y % height))
                .collect();
            let fast = euclidean_distance_transform(width, height, &obstacles);
            let slow = brute_force_distances(width, height, &obstacles);
            for y in 0..height {
                for x in 0..width {
                    let cell = Cell::new(x, y);
                    let (f, s) = (*fast.get(cell), *slow.get(cell));
                    proptest::prop_assert!(
                        (f - s).abs() <= 1e-9,
                        "mismatch at {cell}: fast {f}, brute force {s}"
                    );
                }
            }
        }

        /// Moving one cell changes the distance by at most the step length.
        #[test]
        fn transform_is_1_lipschitz(
            seeds in proptest::collection::vec((0u32..16, 0u32..16), 1..20),
        ) {
            let obstacles: BTreeSet<Cell> = seeds.into_iter().map(|(x, y)| Cell::new(x, y)).collect();
            let field = euclidean_distance_transform(16, 16, &obstacles);
            for y in 0..16u32 {
                for x in 0..15u32 {
                    let a = *field.get(Cell::new(x, y));
                    let b = *field.get(Cell::new(x + 1, y));
                    proptest::prop_assert!((a - b).abs() <= 1.0 + 1e-12);
                }
            }
            for y in 0..15u32 {
                for x in 0..16u32 {
                    let a = *field.get(Cell::new(x, y));
                    let b = *field.get(Cell::new(x, y + 1));
                    proptest::prop_assert!((a - b).abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
