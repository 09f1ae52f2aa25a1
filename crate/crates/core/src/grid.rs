//! Needle-template lattice geometry.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// A position on the template lattice: needle `(row, col)` and axial `plane`.
///
/// The derived ordering is the scan order used throughout the engine
/// (row, then column, then plane, ascending).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub row: usize,
    pub col: usize,
    pub plane: usize,
}

impl GridPoint {
    pub const fn new(row: usize, col: usize, plane: usize) -> Self {
        Self { row, col, plane }
    }
}

/// The physical needle template: `rows × cols` needle holes at
/// `in_plane_spacing`, with `num_planes` axial planes at `plane_spacing`.
/// Rows listed in `excluded_rows` never receive seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateGrid {
    pub rows: usize,
    pub cols: usize,
    pub in_plane_spacing: f64,
    pub plane_spacing: f64,
    pub num_planes: usize,
    excluded_rows: Vec<usize>,
}

impl Default for TemplateGrid {
    fn default() -> Self {
        Self {
            rows: 11,
            cols: 13,
            in_plane_spacing: 5.0,
            plane_spacing: 5.0,
            num_planes: 14,
            excluded_rows: vec![0],
        }
    }
}

impl TemplateGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        in_plane_spacing: f64,
        plane_spacing: f64,
        num_planes: usize,
        excluded_rows: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut excluded: Vec<usize> = excluded_rows.into_iter().collect();
        excluded.sort_unstable();
        excluded.dedup();
        let grid = Self {
            rows,
            cols,
            in_plane_spacing,
            plane_spacing,
            num_planes,
            excluded_rows: excluded,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 || self.num_planes < 1 {
            return validation(format!(
                "template must be at least 2x2x1, got {}x{}x{}",
                self.rows, self.cols, self.num_planes
            ));
        }
        if !(self.in_plane_spacing > 0.0 && self.plane_spacing > 0.0)
            || !self.in_plane_spacing.is_finite()
            || !self.plane_spacing.is_finite()
        {
            return validation("template spacings must be positive and finite");
        }
        if let Some(&r) = self.excluded_rows.iter().find(|&&r| r >= self.rows) {
            return validation(format!("excluded row {r} outside template of {} rows", self.rows));
        }
        if self.excluded_rows.len() >= self.rows {
            return validation("every template row is excluded");
        }
        Ok(())
    }

    pub fn excluded_rows(&self) -> &[usize] {
        &self.excluded_rows
    }

    pub fn is_excluded(&self, row: usize) -> bool {
        self.excluded_rows.binary_search(&row).is_ok()
    }

    /// Template rows that may hold seeds, ascending.
    pub fn active_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&r| !self.is_excluded(r)).collect()
    }

    /// Shape of the plan tensor seen by learned components:
    /// `(active rows, cols, planes)`, e.g. 10×13×14 for the default template.
    pub fn plan_shape(&self) -> (usize, usize, usize) {
        (self.rows - self.excluded_rows.len(), self.cols, self.num_planes)
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        p.row < self.rows && p.col < self.cols && p.plane < self.num_planes
    }

    /// Whether a seed may be placed at `p`.
    pub fn is_seed_slot(&self, p: GridPoint) -> bool {
        self.contains(p) && !self.is_excluded(p.row)
    }

    /// Offset in mm of `p` from the template origin, as `[x, y, z]`.
    pub fn offset_mm(&self, p: GridPoint) -> [f64; 3] {
        [
            p.col as f64 * self.in_plane_spacing,
            p.row as f64 * self.in_plane_spacing,
            p.plane as f64 * self.plane_spacing,
        ]
    }

    /// Iterate over every seed slot in scan order.
    pub fn seed_slots(&self) -> impl Iterator<Item = GridPoint> + '_ {
        self.active_rows().into_iter().flat_map(move |row| {
            (0..self.cols).flat_map(move |col| {
                (0..self.num_planes).map(move |plane| GridPoint::new(row, col, plane))
            })
        })
    }

    /// The face neighbours of `p` that lie on the template, in scan order.
    pub fn face_neighbors(&self, p: GridPoint) -> impl Iterator<Item = GridPoint> + '_ {
        let GridPoint { row, col, plane } = p;
        let candidates = [
            row.checked_sub(1).map(|r| GridPoint::new(r, col, plane)),
            col.checked_sub(1).map(|c| GridPoint::new(row, c, plane)),
            plane.checked_sub(1).map(|z| GridPoint::new(row, col, z)),
            Some(GridPoint::new(row, col, plane + 1)),
            Some(GridPoint::new(row, col + 1, plane)),
            Some(GridPoint::new(row + 1, col, plane)),
        ];
        candidates
            .into_iter()
            .flatten()
            .filter(move |q| self.contains(*q))
    }
}
