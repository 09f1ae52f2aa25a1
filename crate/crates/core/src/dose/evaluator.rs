//! Incremental dose-volume evaluation for search.
//!
//! Dose is held in fixed point at sample voxels so seeds can be added and
//! removed without drift. When seed positions coincide with voxel centres
//! the per-seed kernel comes from a lookup table indexed by voxel offset.

use ndarray::Array3;

use super::{MetricKind, SourceModel};
use crate::anatomy::{AnatomyCase, Structure};
use crate::error::{validation, Result};
use crate::grid::{GridPoint, TemplateGrid};

/// Fixed-point units per Gy.
const SCALE: f64 = (1u64 << 24) as f64;

const FLAG_PTV: u8 = 1;
const FLAG_CTV: u8 = 2;
const FLAG_URE: u8 = 4;
const FLAG_REC: u8 = 8;

fn flag(s: Structure) -> u8 {
    match s {
        Structure::Ptv => FLAG_PTV,
        Structure::Ctv => FLAG_CTV,
        Structure::Urethra => FLAG_URE,
        Structure::Rectum => FLAG_REC,
    }
}

/// Sample counts per structure and per metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricCounts {
    /// Sample voxels in PTV, CTV, urethra, rectum.
    pub totals: [usize; 4],
    /// Samples reaching each [`MetricKind`] level, in [`MetricKind::ALL`] order.
    pub hits: [usize; 6],
}

impl MetricCounts {
    /// Percentage for `kind`; 0 when the structure has no samples.
    pub fn percent(&self, kind: MetricKind) -> f64 {
        let total = self.totals[structure_index(kind.structure())];
        if total == 0 {
            0.0
        } else {
            100.0 * self.hits[kind.index()] as f64 / total as f64
        }
    }
}

fn structure_index(s: Structure) -> usize {
    match s {
        Structure::Ptv => 0,
        Structure::Ctv => 1,
        Structure::Urethra => 2,
        Structure::Rectum => 3,
    }
}

/// Which samples a [`DoseEvaluator`] tracks.
#[derive(Debug, Clone)]
pub struct EvaluatorOptions {
    pub prescribed: f64,
    /// Keep voxels whose indices are all multiples of this.
    pub sample_stride: usize,
    pub structures: Vec<Structure>,
}

impl Default for EvaluatorOptions {
    fn default() -> Self {
        Self {
            prescribed: 144.0,
            sample_stride: 2,
            structures: Structure::ALL.to_vec(),
        }
    }
}

struct Kernel {
    table: Array3<i64>,
}

#[derive(Clone)]
pub struct DoseEvaluator {
    points: Vec<[usize; 3]>,
    flags: Vec<u8>,
    dose: Vec<i64>,
    scratch: Vec<i64>,
    counts: MetricCounts,
    pending: Option<MetricCounts>,
    thresholds: [i64; 6],
    kernel: std::sync::Arc<Option<Kernel>>,
    model: SourceModel,
    strength: f64,
    spacing: [f64; 3],
    origin: [f64; 3],
    grid: TemplateGrid,
}

impl std::fmt::Debug for DoseEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DoseEvaluator")
            .field("samples", &self.points.len())
            .field("counts", &self.counts)
            .field("lookup", &self.kernel.is_some())
            .finish()
    }
}

impl DoseEvaluator {
    pub fn new(
        case: &AnatomyCase,
        grid: &TemplateGrid,
        model: &SourceModel,
        strength: f64,
        options: &EvaluatorOptions,
    ) -> Result<Self> {
        if !(strength > 0.0 && strength.is_finite()) {
            return validation(format!("source strength must be positive, got {strength}"));
        }
        if options.sample_stride == 0 {
            return validation("sample stride must be at least 1");
        }
        let wanted: u8 = options.structures.iter().map(|&s| flag(s)).fold(0, |a, b| a | b);
        let (nz, ny, nx) = case.dims();
        let st = options.sample_stride;
        let mut points = Vec::new();
        let mut flags = Vec::new();
        for z in (0..nz).step_by(st) {
            for y in (0..ny).step_by(st) {
                for x in (0..nx).step_by(st) {
                    let f = Structure::ALL
                        .iter()
                        .filter(|&&s| case.mask(s)[[z, y, x]] == 1)
                        .map(|&s| flag(s))
                        .fold(0, |a, b| a | b)
                        & wanted;
                    if f != 0 {
                        points.push([z, y, x]);
                        flags.push(f);
                    }
                }
            }
        }
        let mut totals = [0; 4];
        for &f in &flags {
            for s in Structure::ALL {
                if f & flag(s) != 0 {
                    totals[structure_index(s)] += 1;
                }
            }
        }
        let mut thresholds = [0; 6];
        for k in MetricKind::ALL {
            thresholds[k.index()] = (k.percent() / 100.0 * options.prescribed * SCALE).ceil() as i64;
        }
        let origin = [case.template_origin.z, case.template_origin.y, case.template_origin.x];
        let kernel = Self::lookup_table(case, grid, model, strength);
        let n = points.len();
        Ok(Self {
            points,
            flags,
            dose: vec![0; n],
            scratch: vec![0; n],
            counts: MetricCounts { totals, hits: [0; 6] },
            pending: None,
            thresholds,
            kernel: std::sync::Arc::new(kernel),
            model: model.clone(),
            strength,
            spacing: case.spacing,
            origin,
            grid: grid.clone(),
        })
    }

    /// A lookup table applies when every grid point sits on a voxel centre.
    fn lookup_table(case: &AnatomyCase, grid: &TemplateGrid, model: &SourceModel, strength: f64) -> Option<Kernel> {
        let on_voxel = |v: f64, s: f64| {
            let q = v / s;
            (q - q.round()).abs() < 1e-9
        };
        let o = case.template_origin;
        let aligned = on_voxel(o.x, case.spacing[2])
            && on_voxel(o.y, case.spacing[1])
            && on_voxel(o.z, case.spacing[0])
            && on_voxel(grid.in_plane_spacing, case.spacing[2])
            && on_voxel(grid.in_plane_spacing, case.spacing[1])
            && on_voxel(grid.plane_spacing, case.spacing[0]);
        if !aligned {
            return None;
        }
        let [dz, dy, dx] = case.spacing;
        let table = Array3::from_shape_fn(case.dims(), |(z, y, x)| {
            let r = ((z as f64 * dz).powi(2) + (y as f64 * dy).powi(2) + (x as f64 * dx).powi(2)).sqrt();
            to_fixed(model.total_dose(r, strength))
        });
        Some(Kernel { table })
    }

    pub fn sample_count(&self) -> usize {
        self.points.len()
    }

    pub fn counts(&self) -> MetricCounts {
        self.counts
    }

    pub fn uses_lookup(&self) -> bool {
        self.kernel.is_some()
    }

    /// Seed position in fractional voxel units `[z, y, x]`.
    fn seed_voxel(&self, p: GridPoint) -> [f64; 3] {
        let [ox, oy, oz] = self.grid.offset_mm(p);
        [
            (self.origin[0] + oz) / self.spacing[0],
            (self.origin[1] + oy) / self.spacing[1],
            (self.origin[2] + ox) / self.spacing[2],
        ]
    }

    fn for_each_contribution(&self, p: GridPoint, mut f: impl FnMut(usize, i64)) {
        let sv = self.seed_voxel(p);
        match self.kernel.as_ref() {
            Some(k) => {
                let s = sv.map(|v| v.round() as i64);
                for (i, pt) in self.points.iter().enumerate() {
                    let dz = (pt[0] as i64 - s[0]).unsigned_abs() as usize;
                    let dy = (pt[1] as i64 - s[1]).unsigned_abs() as usize;
                    let dx = (pt[2] as i64 - s[2]).unsigned_abs() as usize;
                    let v = k.table.get([dz, dy, dx]).copied().unwrap_or_else(|| {
                        let r = ((dz as f64 * self.spacing[0]).powi(2)
                            + (dy as f64 * self.spacing[1]).powi(2)
                            + (dx as f64 * self.spacing[2]).powi(2))
                        .sqrt();
                        to_fixed(self.model.total_dose(r, self.strength))
                    });
                    f(i, v);
                }
            }
            None => {
                for (i, pt) in self.points.iter().enumerate() {
                    let r = (0..3)
                        .map(|a| ((pt[a] as f64 - sv[a]) * self.spacing[a]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    f(i, to_fixed(self.model.total_dose(r, self.strength)));
                }
            }
        }
    }

    fn count(&self, dose: &[i64]) -> [usize; 6] {
        let mut hits = [0; 6];
        for (d, &f) in dose.iter().zip(&self.flags) {
            for k in MetricKind::ALL {
                if f & flag(k.structure()) != 0 && *d >= self.thresholds[k.index()] {
                    hits[k.index()] += 1;
                }
            }
        }
        hits
    }

    /// Reset to the dose of exactly `seeds`.
    pub fn set_seeds(&mut self, seeds: impl IntoIterator<Item = GridPoint>) {
        self.dose.iter_mut().for_each(|d| *d = 0);
        for p in seeds {
            let mut dose = std::mem::take(&mut self.dose);
            self.for_each_contribution(p, |i, v| dose[i] += v);
            self.dose = dose;
        }
        self.counts.hits = self.count(&self.dose);
        self.pending = None;
    }

    /// Counts after adding `added` and removing `removed`, without committing.
    pub fn propose(&mut self, added: &[GridPoint], removed: &[GridPoint]) -> MetricCounts {
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.copy_from_slice(&self.dose);
        for &p in added {
            self.for_each_contribution(p, |i, v| scratch[i] += v);
        }
        for &p in removed {
            self.for_each_contribution(p, |i, v| scratch[i] -= v);
        }
        let counts = MetricCounts {
            totals: self.counts.totals,
            hits: self.count(&scratch),
        };
        self.scratch = scratch;
        self.pending = Some(counts);
        counts
    }

    /// Make the last [`propose`](Self::propose) the current state.
    pub fn commit(&mut self) {
        if let Some(c) = self.pending.take() {
            std::mem::swap(&mut self.dose, &mut self.scratch);
            self.counts = c;
        }
    }

    /// Dose (Gy) at each sample, in sample order.
    pub fn sample_doses(&self) -> Vec<f64> {
        self.dose.iter().map(|&d| d as f64 / SCALE).collect()
    }
}

fn to_fixed(gy: f64) -> i64 {
    (gy * SCALE).round() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::MmPoint;
    use crate::dose::plan_metrics;
    use crate::plan::SeedPlan;

    fn case(origin: MmPoint) -> AnatomyCase {
        let dims = (30, 30, 30);
        let mut ptv = Array3::<u8>::zeros(dims);
        let mut ctv = Array3::<u8>::zeros(dims);
        let mut ure = Array3::<u8>::zeros(dims);
        let mut rec = Array3::<u8>::zeros(dims);
        for z in 5..25 {
            for y in 5..20 {
                for x in 5..25 {
                    ptv[[z, y, x]] = 1;
                    if (8..17).contains(&y) && (8..22).contains(&x) {
                        ctv[[z, y, x]] = 1;
                    }
                }
            }
            ure[[z, 12, 15]] = 1;
            for x in 10..20 {
                rec[[z, 24, x]] = 1;
            }
        }
        AnatomyCase::new("c", [1.0; 3], origin, ptv, ctv, ure, rec).unwrap()
    }

    fn grid() -> TemplateGrid {
        TemplateGrid::new(5, 5, 5.0, 5.0, 5, [0]).unwrap()
    }

    fn seeds() -> Vec<GridPoint> {
        vec![
            GridPoint::new(1, 1, 1),
            GridPoint::new(2, 3, 2),
            GridPoint::new(3, 2, 3),
            GridPoint::new(2, 1, 0),
        ]
    }

    fn full() -> EvaluatorOptions {
        EvaluatorOptions {
            sample_stride: 1,
            ..Default::default()
        }
    }

    fn check_against_exact(origin: MmPoint, lookup: bool) {
        let c = case(origin);
        let model = SourceModel::default();
        let mut ev = DoseEvaluator::new(&c, &grid(), &model, 0.5, &full()).unwrap();
        assert_eq!(ev.uses_lookup(), lookup);
        ev.set_seeds(seeds());
        let plan = SeedPlan::from_seeds(grid(), 0.5, seeds()).unwrap();
        let exact = plan_metrics(&plan, &c, &model, 144.0).unwrap();
        let counts = ev.counts();
        for k in MetricKind::ALL {
            assert!((counts.percent(k) - exact.get(k)).abs() < 0.05, "{k:?}");
        }
    }

    #[test]
    fn lookup_matches_exact_metrics() {
        check_against_exact(MmPoint::new(5.0, 5.0, 5.0), true);
    }

    #[test]
    fn direct_matches_exact_metrics() {
        check_against_exact(MmPoint::new(5.5, 5.25, 4.5), false);
    }

    #[test]
    fn propose_commit_and_exact_undo() {
        let c = case(MmPoint::new(5.0, 5.0, 5.0));
        let mut ev = DoseEvaluator::new(&c, &grid(), &SourceModel::default(), 0.5, &Default::default()).unwrap();
        ev.set_seeds(seeds());
        let before = ev.clone();
        let extra = GridPoint::new(3, 3, 3);
        let proposed = ev.propose(&[extra], &[seeds()[0]]);
        assert_eq!(ev.counts(), before.counts());
        ev.commit();
        assert_eq!(ev.counts(), proposed);
        ev.propose(&[seeds()[0]], &[extra]);
        ev.commit();
        assert_eq!(ev.counts(), before.counts());
        assert_eq!(ev.dose, before.dose);

        let mut fresh = before.clone();
        let mut moved = seeds();
        moved[0] = extra;
        fresh.set_seeds(moved);
        assert_eq!(fresh.counts(), proposed);
    }

    #[test]
    fn structure_subset() {
        let c = case(MmPoint::new(5.0, 5.0, 5.0));
        let opts = EvaluatorOptions {
            structures: vec![Structure::Ptv],
            sample_stride: 1,
            ..Default::default()
        };
        let ev = DoseEvaluator::new(&c, &grid(), &SourceModel::default(), 0.5, &opts).unwrap();
        assert_eq!(ev.sample_count(), 20 * 15 * 20);
        assert_eq!(ev.counts().totals, [6000, 0, 0, 0]);
    }
}
