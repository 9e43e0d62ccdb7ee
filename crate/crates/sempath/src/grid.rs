//! Dense row-major grids and cell coordinates.
//!
//! Coordinates are `(col, row)` with the origin at the top-left; serialized
//! forms are `[x, y]` pairs and grids are stored row-major.

use serde::{Deserialize, Serialize};

/// A cell coordinate: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }

    /// Euclidean distance between cell centers, in cell units.
    pub fn distance(self, other: Cell) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

impl From<(u32, u32)> for Cell {
    fn from((x, y): (u32, u32)) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for (u32, u32) {
    fn from(c: Cell) -> Self {
        (c.x, c.y)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Dense row-major grid of `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; (width as usize) * (height as usize)],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Self {
        assert_eq!(data.len(), (width as usize) * (height as usize));
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        debug_assert!(self.contains(cell));
        (cell.y as usize) * (self.width as usize) + (cell.x as usize)
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> &T {
        &self.data[self.index(cell)]
    }

    #[inline]
    pub fn get_mut(&mut self, cell: Cell) -> &mut T {
        let idx = self.index(cell);
        &mut self.data[idx]
    }

    pub fn set(&mut self, cell: Cell, value: T) {
        let idx = self.index(cell);
        self.data[idx] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Iterate cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let w = self.width;
        let h = self.height;
        (0..h).flat_map(move |y| (0..w).map(move |x| Cell::new(x, y)))
    }
}

impl Grid<f64> {
    /// Bilinear interpolation at a point in cell-center coordinates, where
    /// cell `(x, y)` has its center at `(x as f64, y as f64)`. Points are
    /// clamped to the center lattice before sampling.
    pub fn bilinear(&self, px: f64, py: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let px = px.clamp(0.0, max_x);
        let py = py.clamp(0.0, max_y);
        let x0 = px.floor().min(max_x - 0.0) as u32;
        let y0 = py.floor().min(max_y - 0.0) as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = px - x0 as f64;
        let fy = py - y0 as f64;
        let v00 = *self.get(Cell::new(x0, y0));
        let v10 = *self.get(Cell::new(x1, y0));
        let v01 = *self.get(Cell::new(x0, y1));
        let v11 = *self.get(Cell::new(x1, y1));
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        top + (bottom - top) * fy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_serializes_as_pair() {
        let c = Cell::new(3, 7);
        assert_eq!(serde_json::to_string(&c).unwrap(), "[3,7]");
        let back: Cell = serde_json::from_str("[3,7]").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bilinear_matches_corners_and_midpoint() {
        let g = Grid::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(g.bilinear(0.0, 0.0), 0.0);
        assert_eq!(g.bilinear(1.0, 0.0), 1.0);
        assert_eq!(g.bilinear(0.0, 1.0), 2.0);
        assert_eq!(g.bilinear(1.0, 1.0), 3.0);
        assert!((g.bilinear(0.5, 0.5) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_clamps_outside_lattice() {
        let g = Grid::from_vec(2, 1, vec![4.0, 8.0]);
        assert_eq!(g.bilinear(-3.0, 0.0), 4.0);
        assert_eq!(g.bilinear(5.0, 2.0), 8.0);
    }
}
