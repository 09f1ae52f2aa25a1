//! Needle, seed and probability plans over a [`TemplateGrid`].
//!
//! Seed and needle occupancy is stored over the full template (excluded rows
//! included, always empty). Learned components see the compact plan tensor
//! returned by [`SeedPlan::to_tensor`], which drops excluded rows.

use ndarray::{Array2, Array3, ArrayView3};

use crate::error::{validation, Result};
use crate::grid::{GridPoint, TemplateGrid};

/// Binary needle occupancy indexed by template `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedlePlan {
    grid: TemplateGrid,
    occupancy: Array2<bool>,
}

impl NeedlePlan {
    pub fn new(grid: TemplateGrid) -> Self {
        let occupancy = Array2::from_elem((grid.rows, grid.cols), false);
        Self { grid, occupancy }
    }

    pub fn from_positions(
        grid: TemplateGrid,
        positions: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut plan = Self::new(grid);
        for (r, c) in positions {
            plan.insert(r, c)?;
        }
        Ok(plan)
    }

    pub fn grid(&self) -> &TemplateGrid {
        &self.grid
    }

    pub fn insert(&mut self, row: usize, col: usize) -> Result<()> {
        if row >= self.grid.rows || col >= self.grid.cols {
            return validation(format!("needle ({row},{col}) outside template"));
        }
        if self.grid.is_excluded(row) {
            return validation(format!("needle ({row},{col}) in excluded row"));
        }
        self.occupancy[[row, col]] = true;
        Ok(())
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.grid.rows && col < self.grid.cols && self.occupancy[[row, col]]
    }

    /// Occupied positions in scan order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        self.occupancy
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|(idx, _)| idx)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v).count()
    }

    pub fn occupancy(&self) -> &Array2<bool> {
        &self.occupancy
    }
}

/// Binary seed occupancy indexed by `(row, col, plane)` plus the per-seed
/// air-kerma strength in U.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPlan {
    grid: TemplateGrid,
    occupancy: Array3<bool>,
    pub source_strength: f64,
    pub case_id: String,
}

impl SeedPlan {
    pub fn new(grid: TemplateGrid, source_strength: f64) -> Self {
        let occupancy = Array3::from_elem((grid.rows, grid.cols, grid.num_planes), false);
        Self {
            grid,
            occupancy,
            source_strength,
            case_id: String::new(),
        }
    }

    pub fn from_seeds(
        grid: TemplateGrid,
        source_strength: f64,
        seeds: impl IntoIterator<Item = GridPoint>,
    ) -> Result<Self> {
        let mut plan = Self::new(grid, source_strength);
        for p in seeds {
            plan.insert(p)?;
        }
        Ok(plan)
    }

    /// Build a plan from a compact plan tensor (`grid.plan_shape()`); cells
    /// `>= 0.5` become seeds.
    pub fn from_tensor(grid: TemplateGrid, source_strength: f64, tensor: ArrayView3<f64>) -> Result<Self> {
        let shape = grid.plan_shape();
        if tensor.dim() != shape {
            return validation(format!(
                "plan tensor shape {:?} does not match template {:?}",
                tensor.dim(),
                shape
            ));
        }
        let rows = grid.active_rows();
        let mut plan = Self::new(grid, source_strength);
        for ((er, c, p), &v) in tensor.indexed_iter() {
            if v >= 0.5 {
                plan.occupancy[[rows[er], c, p]] = true;
            }
        }
        Ok(plan)
    }

    pub fn grid(&self) -> &TemplateGrid {
        &self.grid
    }

    pub fn with_case_id(mut self, case_id: impl Into<String>) -> Self {
        self.case_id = case_id.into();
        self
    }

    /// Place a seed. Returns whether the slot was previously empty.
    pub fn insert(&mut self, p: GridPoint) -> Result<bool> {
        if !self.grid.contains(p) {
            return validation(format!("seed {p:?} outside template"));
        }
        if self.grid.is_excluded(p.row) {
            return validation(format!("seed {p:?} in excluded row"));
        }
        let cell = &mut self.occupancy[[p.row, p.col, p.plane]];
        let was_empty = !*cell;
        *cell = true;
        Ok(was_empty)
    }

    /// Remove a seed. Returns whether one was present.
    pub fn remove(&mut self, p: GridPoint) -> bool {
        if !self.grid.contains(p) {
            return false;
        }
        std::mem::replace(&mut self.occupancy[[p.row, p.col, p.plane]], false)
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        self.grid.contains(p) && self.occupancy[[p.row, p.col, p.plane]]
    }

    /// All seeds in scan order.
    pub fn seeds(&self) -> Vec<GridPoint> {
        self.occupancy
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|((r, c, p), _)| GridPoint::new(r, c, p))
            .collect()
    }

    pub fn seed_count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.occupancy.iter().any(|&v| v)
    }

    /// Number of seeds on the needle at `(row, col)`.
    pub fn needle_load(&self, row: usize, col: usize) -> usize {
        (0..self.grid.num_planes)
            .filter(|&p| self.occupancy[[row, col, p]])
            .count()
    }

    /// Template positions carrying at least one seed, in scan order.
    pub fn needle_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.grid.rows {
            for c in 0..self.grid.cols {
                if self.needle_load(r, c) > 0 {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn needle_count(&self) -> usize {
        self.needle_positions().len()
    }

    /// The needle plan implied by the occupied seed columns.
    pub fn needles(&self) -> NeedlePlan {
        NeedlePlan::from_positions(self.grid.clone(), self.needle_positions())
            .expect("seed columns lie on seed rows")
    }

    /// Seeds per axial plane.
    pub fn plane_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.grid.num_planes];
        for ((_, _, p), &v) in self.occupancy.indexed_iter() {
            if v {
                counts[p] += 1;
            }
        }
        counts
    }

    pub fn occupancy(&self) -> &Array3<bool> {
        &self.occupancy
    }

    /// Compact 0/1 tensor of shape `grid.plan_shape()`.
    pub fn to_tensor(&self) -> Array3<f64> {
        let rows = self.grid.active_rows();
        let (nr, nc, np) = self.grid.plan_shape();
        Array3::from_shape_fn((nr, nc, np), |(er, c, p)| {
            if self.occupancy[[rows[er], c, p]] {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Real-valued seed probabilities over the compact plan tensor, as produced
/// by a generator before binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbPlan {
    grid: TemplateGrid,
    values: Array3<f64>,
}

impl ProbPlan {
    pub fn new(grid: TemplateGrid, values: Array3<f64>) -> Result<Self> {
        if values.dim() != grid.plan_shape() {
            return validation(format!(
                "probability tensor shape {:?} does not match template {:?}",
                values.dim(),
                grid.plan_shape()
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return validation(format!("probability {v} outside [0, 1]"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TemplateGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }
}

/// Outcome of checking a seed plan against a needle plan.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub off_needle: Vec<GridPoint>,
    pub excluded_row: Vec<GridPoint>,
    pub seed_count: usize,
    pub needle_count: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.off_needle.is_empty() && self.excluded_row.is_empty()
    }
}

/// Report every seed without a needle and every seed in an excluded row.
pub fn validate_plan(plan: &SeedPlan, needles: &NeedlePlan) -> ValidationReport {
    let mut report = ValidationReport {
        seed_count: plan.seed_count(),
        needle_count: needles.count(),
        ..Default::default()
    };
    for s in plan.seeds() {
        if plan.grid().is_excluded(s.row) || needles.grid().is_excluded(s.row) {
            report.excluded_row.push(s);
        }
        if !needles.contains(s.row, s.col) {
            report.off_needle.push(s);
        }
    }
    report
}
