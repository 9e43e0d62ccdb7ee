//! Grid search over the combined cost — Euclidean step length plus the
//! γ-weighted potential of the target cell.
//!
//! Three planners share one edge relaxation: a plain best-first baseline
//! ([`astar`]), an exhaustive uniform-cost oracle ([`dijkstra_oracle`]), and
//! a two-queue multi-heuristic search ([`mhastar`]) whose anchor queue uses
//! the consistent Euclidean heuristic — so its result keeps the anchor's
//! optimality guarantee — while an auxiliary queue biased by a line integral
//! of the potential field pulls expansions toward low-risk corridors.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::field::CostField;
use crate::grid::Cell;
use crate::map::SemanticMap;

pub use crate::field::AuxPhiMode;

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("w1 must be at least 1, got {0}")]
    InvalidW1(f64),
    #[error("w2 must be at least 1, got {0}")]
    InvalidW2(f64),
    #[error("delta_ell must be positive, got {0}")]
    InvalidDeltaEll(f64),
    #[error("gamma must be nonnegative, got {0}")]
    NegativeGamma(f64),
    #[error("cell {0} is outside the field")]
    OutOfBounds(Cell),
    #[error("{from} and {to} are not adjacent under {connectivity:?} connectivity")]
    NotAdjacent {
        from: Cell,
        to: Cell,
        connectivity: Connectivity,
    },
    #[error("edge target {0} is an obstacle cell")]
    ObstacleTarget(Cell),
    #[error("field is {field_w}x{field_h} but map is {map_w}x{map_h}")]
    DimensionMismatch {
        field_w: u32,
        field_h: u32,
        map_w: u32,
        map_h: u32,
    },
}

/// Grid neighborhood: 4 orthogonal moves, or 8 with diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Semantic cost weight γ in the edge cost.
    pub gamma: f64,
    pub connectivity: Connectivity,
    /// Heuristic inflation; 1 keeps the anchor admissible.
    pub w1: f64,
    /// Suboptimality bound: auxiliary expansions are admitted only while
    /// their key stays within w2 times the anchor's minimum key.
    pub w2: f64,
    /// Sampling step (cell units) of the auxiliary line integral.
    pub delta_ell: f64,
    pub aux_phi_mode: AuxPhiMode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            gamma: 1.5,
            connectivity: Connectivity::Eight,
            w1: 1.0,
            w2: 1.0,
            delta_ell: 0.5,
            aux_phi_mode: AuxPhiMode::ExactSum,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.w1 >= 1.0) {
            return Err(PlannerError::InvalidW1(self.w1));
        }
        if !(self.w2 >= 1.0) {
            return Err(PlannerError::InvalidW2(self.w2));
        }
        if !(self.delta_ell > 0.0) {
            return Err(PlannerError::InvalidDeltaEll(self.delta_ell));
        }
        if !(self.gamma >= 0.0) {
            return Err(PlannerError::NegativeGamma(self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expansions {
    pub anchor: usize,
    pub aux: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Found,
    NoPath,
}

/// Search outcome. Cost fields are `None` exactly when no path exists.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanResult {
    pub path: Vec<Cell>,
    pub combined_cost: Option<f64>,
    pub geometric_length: Option<f64>,
    pub expansions: Expansions,
    pub status: PlanStatus,
}

impl PlanResult {
    fn no_path(expansions: Expansions) -> Self {
        PlanResult {
            path: Vec::new(),
            combined_cost: None,
            geometric_length: None,
            expansions,
            status: PlanStatus::NoPath,
        }
    }
}

/// Straight-line Euclidean distance between cell centers; zero at the goal.
pub fn anchor_heuristic(cell: Cell, goal: Cell) -> f64 {
    cell.distance(goal)
}

/// Line-integral heuristic: samples Φ at L = ⌈dist/Δℓ⌉ points spaced evenly
/// along the segment to the goal and sums γ·Φ(x_ℓ)·Δℓ. Inadmissible in
/// general — it prices risk the true path may sidestep — which is exactly
/// why it rides the auxiliary queue, not the anchor.
pub fn aux_heuristic(cell: Cell, goal: Cell, field: &CostField, config: &PlannerConfig) -> f64 {
    let distance = cell.distance(goal);
    if distance == 0.0 || config.gamma == 0.0 {
        return 0.0;
    }
    let samples = (distance / config.delta_ell).ceil() as usize;
    let spacing = distance / samples as f64;
    let (x0, y0) = (f64::from(cell.x), f64::from(cell.y));
    let (dx, dy) = (
        f64::from(goal.x) - x0,
        f64::from(goal.y) - y0,
    );
    let mut sum = 0.0;
    let mut i = 1usize;
    while i <= samples {
        let t = i as f64 / samples as f64;
        let (phi, clearance) =
            field.phi_with_clearance(x0 + t * dx, y0 + t * dy, config.aux_phi_mode);
        sum += phi;
        i += 1;
        // Samples dominated by a wide clearance contribute exactly zero:
        // interpolated class distances fall by at most √2 per unit moved,
        // so everything within the margin (less one cell of slack against
        // rounding) still lies past the cutoff where every term is
        // dropped. Skipping them changes the runtime, not the sum.
        let margin = clearance - crate::field::FAR_CUTOFF - 1.0;
        if margin > 0.0 {
            let skip = (margin / (std::f64::consts::SQRT_2 * spacing)) as usize;
            i = i.saturating_add(skip);
        }
    }
    config.gamma * sum * config.delta_ell
}

/// Cost of one move: Euclidean step (1 or √2) plus γ times the potential of
/// the cell stepped onto. The origin cell's potential is not charged, which
/// keeps path cost a plain sum over edges.
pub fn edge_cost(
    from: Cell,
    to: Cell,
    field: &CostField,
    config: &PlannerConfig,
) -> Result<f64, PlannerError> {
    config.validate()?;
    for cell in [from, to] {
        if cell.x >= field.width() || cell.y >= field.height() {
            return Err(PlannerError::OutOfBounds(cell));
        }
    }
    let dx = from.x.abs_diff(to.x);
    let dy = from.y.abs_diff(to.y);
    let adjacent = match config.connectivity {
        Connectivity::Four => dx + dy == 1,
        Connectivity::Eight => dx.max(dy) == 1,
    };
    if !adjacent {
        return Err(PlannerError::NotAdjacent {
            from,
            to,
            connectivity: config.connectivity,
        });
    }
    if field.is_blocked(to) {
        return Err(PlannerError::ObstacleTarget(to));
    }
    let step = if dx + dy == 2 { SQRT_2 } else { 1.0 };
    Ok(step + config.gamma * field.phi_at(to))
}

// Priority entry. BinaryHeap pops its maximum, so "best" must compare
// greatest: smallest key, then largest g, then smallest cell.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    key: f64,
    g: f64,
    cell: Cell,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then(self.g.total_cmp(&other.g))
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct SearchSpace<'a> {
    field: &'a CostField,
    width: u32,
    height: u32,
    gamma: f64,
    connectivity: Connectivity,
}

impl SearchSpace<'_> {
    fn index(&self, cell: Cell) -> usize {
        (cell.y as usize) * (self.width as usize) + cell.x as usize
    }

    /// Visits each legal move out of `from` with its edge cost increment.
    /// Diagonal moves with either flanking orthogonal cell blocked are
    /// skipped — no cutting corners around hard geometry.
    fn for_each_neighbor(&self, from: Cell, mut visit: impl FnMut(Cell, f64)) {
        const ORTHO: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const DIAG: [(i32, i32); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];
        let moves: &[(i32, i32)] = match self.connectivity {
            Connectivity::Four => &ORTHO,
            Connectivity::Eight => &[ORTHO[0], ORTHO[1], ORTHO[2], ORTHO[3], DIAG[0], DIAG[1], DIAG[2], DIAG[3]],
        };
        for &(dx, dy) in moves {
            let nx = from.x as i64 + i64::from(dx);
            let ny = from.y as i64 + i64::from(dy);
            if nx < 0 || ny < 0 || nx >= i64::from(self.width) || ny >= i64::from(self.height) {
                continue;
            }
            let to = Cell::new(nx as u32, ny as u32);
            if self.field.is_blocked(to) {
                continue;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal {
                let side_a = Cell::new(nx as u32, from.y);
                let side_b = Cell::new(from.x, ny as u32);
                if self.field.is_blocked(side_a) || self.field.is_blocked(side_b) {
                    continue;
                }
            }
            let step = if diagonal { SQRT_2 } else { 1.0 };
            visit(to, step + self.gamma * self.field.phi_at(to));
        }
    }
}

fn check_dimensions(map: &SemanticMap, field: &CostField) -> Result<(), PlannerError> {
    if map.width() != field.width() || map.height() != field.height() {
        return Err(PlannerError::DimensionMismatch {
            field_w: field.width(),
            field_h: field.height(),
            map_w: map.width(),
            map_h: map.height(),
        });
    }
    Ok(())
}

fn reconstruct(parent: &[u32], space: &SearchSpace, start: Cell, goal: Cell) -> Vec<Cell> {
    let mut path = vec![goal];
    let mut current = space.index(goal);
    let start_index = space.index(start);
    while current != start_index {
        current = parent[current] as usize;
        let x = (current % space.width as usize) as u32;
        let y = (current / space.width as usize) as u32;
        path.push(Cell::new(x, y));
    }
    path.reverse();
    path
}

fn finish(
    g_goal: f64,
    parent: &[u32],
    space: &SearchSpace,
    start: Cell,
    goal: Cell,
    expansions: Expansions,
) -> PlanResult {
    let path = reconstruct(parent, space, start, goal);
    let geometric: f64 = path.windows(2).map(|w| w[0].distance(w[1])).sum();
    debug_assert!(g_goal >= geometric - 1e-9);
    PlanResult {
        path,
        combined_cost: Some(g_goal),
        geometric_length: Some(geometric),
        expansions,
        status: PlanStatus::Found,
    }
}

/// Handles endpoint degeneracies shared by all planners. `Some` means the
/// search is already decided.
fn trivial_cases(map: &SemanticMap, field: &CostField) -> Option<PlanResult> {
    let (start, goal) = (map.start(), map.goal());
    if field.is_blocked(start) || field.is_blocked(goal) {
        return Some(PlanResult::no_path(Expansions::default()));
    }
    if start == goal {
        return Some(PlanResult {
            path: vec![start],
            combined_cost: Some(0.0),
            geometric_length: Some(0.0),
            expansions: Expansions::default(),
            status: PlanStatus::Found,
        });
    }
    None
}

fn single_queue_search(
    map: &SemanticMap,
    field: &CostField,
    config: &PlannerConfig,
    heuristic: impl Fn(Cell) -> f64,
) -> PlanResult {
    if let Some(done) = trivial_cases(map, field) {
        return done;
    }
    let space = SearchSpace {
        field,
        width: map.width(),
        height: map.height(),
        gamma: config.gamma,
        connectivity: config.connectivity,
    };
    let (start, goal) = (map.start(), map.goal());
    let n = (map.width() as usize) * (map.height() as usize);
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![u32::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let goal_index = space.index(goal);

    g[space.index(start)] = 0.0;
    open.push(Entry {
        key: heuristic(start),
        g: 0.0,
        cell: start,
    });
    let mut expansions = Expansions::default();

    while let Some(entry) = open.pop() {
        let index = space.index(entry.cell);
        if closed[index] || entry.g != g[index] {
            continue;
        }
        if g[goal_index] <= entry.key {
            return finish(g[goal_index], &parent, &space, start, goal, expansions);
        }
        closed[index] = true;
        expansions.anchor += 1;
        let g_here = g[index];
        space.for_each_neighbor(entry.cell, |to, cost| {
            let to_index = space.index(to);
            let tentative = g_here + cost;
            if tentative < g[to_index] {
                g[to_index] = tentative;
                parent[to_index] = index as u32;
                if !closed[to_index] {
                    open.push(Entry {
                        key: tentative + heuristic(to),
                        g: tentative,
                        cell: to,
                    });
                }
            }
        });
    }
    if g[goal_index].is_finite() {
        return finish(g[goal_index], &parent, &space, start, goal, expansions);
    }
    PlanResult::no_path(expansions)
}

/// Best-first baseline with the Euclidean anchor heuristic. Always optimal
/// with respect to [`edge_cost`] (the heuristic is never inflated here).
pub fn astar(
    map: &SemanticMap,
    field: &CostField,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    config.validate()?;
    check_dimensions(map, field)?;
    let goal = map.goal();
    Ok(single_queue_search(map, field, config, |cell| {
        anchor_heuristic(cell, goal)
    }))
}

/// Exhaustive uniform-cost search; the ground-truth optimum for tests.
pub fn dijkstra_oracle(
    map: &SemanticMap,
    field: &CostField,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    config.validate()?;
    check_dimensions(map, field)?;
    Ok(single_queue_search(map, field, config, |_| 0.0))
}

/// Shared-open two-queue search. The anchor queue is keyed g + w1·h0; the
/// auxiliary queue adds the potential line integral, g + w1·(h0 + h_aux),
/// and may expand only while its minimum key is within w2 times the
/// anchor's. States the anchor has expanded are final; states expanded only
/// by the auxiliary queue may still be re-expanded by the anchor. Returned
/// cost is within w1·w2 of optimal; with w1 = w2 = 1 it is exactly optimal.
pub fn mhastar(
    map: &SemanticMap,
    field: &CostField,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    config.validate()?;
    check_dimensions(map, field)?;
    if let Some(done) = trivial_cases(map, field) {
        return Ok(done);
    }
    let (start, goal) = (map.start(), map.goal());
    // With w2 = 1 the auxiliary queue can never underbid the anchor: its
    // keys add a nonnegative line integral on top of the same g + w1·h0,
    // so admission only ever passes on exact key ties, where the auxiliary
    // cannot change the returned cost. Run the anchor alone and skip the
    // per-cell integrals entirely.
    if config.w2 <= 1.0 {
        return Ok(single_queue_search(map, field, config, |cell| {
            config.w1 * anchor_heuristic(cell, goal)
        }));
    }
    let space = SearchSpace {
        field,
        width: map.width(),
        height: map.height(),
        gamma: config.gamma,
        connectivity: config.connectivity,
    };
    let n = (map.width() as usize) * (map.height() as usize);
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![u32::MAX; n];
    let mut closed_anchor = vec![false; n];
    let mut closed_aux = vec![false; n];
    // Lazily filled h_aux per cell; NaN marks "not yet computed".
    let mut aux_cache = vec![f64::NAN; n];
    let mut open_anchor = BinaryHeap::new();
    let mut open_aux = BinaryHeap::new();
    let goal_index = space.index(goal);

    let aux_value = |cache: &mut [f64], cell: Cell, index: usize| -> f64 {
        if cache[index].is_nan() {
            cache[index] = aux_heuristic(cell, goal, field, config);
        }
        cache[index]
    };

    g[space.index(start)] = 0.0;
    let h0_start = anchor_heuristic(start, goal);
    open_anchor.push(Entry {
        key: config.w1 * h0_start,
        g: 0.0,
        cell: start,
    });
    let start_index = space.index(start);
    open_aux.push(Entry {
        key: config.w1 * (h0_start + aux_value(&mut aux_cache, start, start_index)),
        g: 0.0,
        cell: start,
    });
    let mut expansions = Expansions::default();

    loop {
        // Drop stale heap tops so peeked keys are trustworthy.
        while let Some(top) = open_anchor.peek() {
            let index = space.index(top.cell);
            if !closed_anchor[index] && top.g == g[index] {
                break;
            }
            open_anchor.pop();
        }
        while let Some(top) = open_aux.peek() {
            let index = space.index(top.cell);
            if !closed_anchor[index] && !closed_aux[index] && top.g == g[index] {
                break;
            }
            open_aux.pop();
        }

        let anchor_key = open_anchor.peek().map(|e| e.key);
        let aux_key = open_aux.peek().map(|e| e.key);
        let expand_aux = match (aux_key, anchor_key) {
            (Some(aux), Some(anchor)) => aux <= config.w2 * anchor,
            (Some(_), None) => true,
            (None, _) => false,
        };

        let (queue_key, entry) = if expand_aux {
            (aux_key.expect("aux key present"), open_aux.pop().expect("aux top present"))
        } else if anchor_key.is_some() {
            (
                anchor_key.expect("anchor key present"),
                open_anchor.pop().expect("anchor top present"),
            )
        } else {
            break;
        };

        if g[goal_index] <= queue_key {
            return Ok(finish(g[goal_index], &parent, &space, start, goal, expansions));
        }

        let index = space.index(entry.cell);
        if expand_aux {
            closed_aux[index] = true;
            expansions.aux += 1;
        } else {
            closed_anchor[index] = true;
            expansions.anchor += 1;
        }
        let g_here = g[index];
        space.for_each_neighbor(entry.cell, |to, cost| {
            let to_index = space.index(to);
            let tentative = g_here + cost;
            if tentative < g[to_index] {
                g[to_index] = tentative;
                parent[to_index] = index as u32;
                if !closed_anchor[to_index] {
                    let h0 = anchor_heuristic(to, goal);
                    open_anchor.push(Entry {
                        key: tentative + config.w1 * h0,
                        g: tentative,
                        cell: to,
                    });
                    if !closed_aux[to_index] {
                        let h_aux = aux_value(&mut aux_cache, to, to_index);
                        open_aux.push(Entry {
                            key: tentative + config.w1 * (h0 + h_aux),
                            g: tentative,
                            cell: to,
                        });
                    }
                }
            }
        });
    }

    if g[goal_index].is_finite() {
        return Ok(finish(g[goal_index], &parent, &space, start, goal, expansions));
    }
    Ok(PlanResult::no_path(expansions))
}
