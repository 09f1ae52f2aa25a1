//! Permanent-implant dose by superposition of point-source kernels, and the
//! dose-volume metrics used to score plans.

mod evaluator;

pub use evaluator::{DoseEvaluator, EvaluatorOptions, MetricCounts};

use std::io::Write;

use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::anatomy::{AnatomyCase, MmPoint, Structure};
use crate::error::{validation, Error, Result};
use crate::plan::SeedPlan;

/// Distances below this are evaluated at this radius (mm).
pub const MIN_RADIUS_MM: f64 = 0.5;

const DEFAULT_SOURCE_MODEL: &str = include_str!("../../data/source_model_i125.json");

/// Point-source dosimetry parameters for one seed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub name: String,
    /// Dose-rate constant, cGy·h⁻¹·U⁻¹.
    #[serde(rename = "lambda_cGy_per_hU")]
    pub dose_rate_constant: f64,
    pub half_life_days: f64,
    /// Radial dose function as `(r mm, g)` pairs.
    #[serde(rename = "g_table")]
    pub radial_dose: Vec<(f64, f64)>,
    /// 1D anisotropy function as `(r mm, φ_an)` pairs.
    #[serde(rename = "phi_table")]
    pub anisotropy: Vec<(f64, f64)>,
    #[serde(rename = "cutoff_mm")]
    pub cutoff_radius: f64,
}

impl Default for SourceModel {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SOURCE_MODEL).expect("bundled source model parses")
    }
}

impl SourceModel {
    /// A model with `g ≡ φ_an ≡ 1`, useful for checking geometry alone.
    pub fn unit_tables(dose_rate_constant: f64, half_life_days: f64, cutoff_radius: f64) -> Self {
        Self {
            name: "unit tables".into(),
            dose_rate_constant,
            half_life_days,
            radial_dose: vec![(1.0, 1.0), (100.0, 1.0)],
            anisotropy: vec![(1.0, 1.0), (100.0, 1.0)],
            cutoff_radius,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("source model serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_life_days > 0.0) || !(self.dose_rate_constant > 0.0) {
            return validation("half-life and dose-rate constant must be positive");
        }
        if !(self.cutoff_radius > 0.0) {
            return validation("cutoff radius must be positive");
        }
        for (name, table) in [("g", &self.radial_dose), ("phi_an", &self.anisotropy)] {
            if table.is_empty() {
                return validation(format!("{name} table is empty"));
            }
            if table.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return validation(format!("{name} table radii must be strictly increasing"));
            }
            if table.iter().any(|&(_, v)| !(v > 0.0)) {
                return validation(format!("{name} table values must be positive"));
            }
        }
        Ok(())
    }

    /// Mean life τ in hours; total dose to complete decay is `rate · τ`.
    pub fn mean_life_hours(&self) -> f64 {
        self.half_life_days * 24.0 / std::f64::consts::LN_2
    }

    /// Total dose (Gy) at `distance` mm from a seed of `strength` U, without
    /// argument checks.
    pub(crate) fn total_dose(&self, distance: f64, strength: f64) -> f64 {
        if distance > self.cutoff_radius {
            return 0.0;
        }
        let r = distance.max(MIN_RADIUS_MM);
        let geometry = (10.0 / r) * (10.0 / r);
        let rate = strength * self.dose_rate_constant * geometry * interp(&self.radial_dose, r) * interp(&self.anisotropy, r);
        rate * self.mean_life_hours() / 100.0
    }
}

/// Linear interpolation clamped to the table endpoints.
fn interp(table: &[(f64, f64)], r: f64) -> f64 {
    let first = table[0];
    let last = table[table.len() - 1];
    if r <= first.0 {
        return first.1;
    }
    if r >= last.0 {
        return last.1;
    }
    let i = table.partition_point(|&(x, _)| x <= r);
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    y0 + (y1 - y0) * (r - x0) / (x1 - x0)
}

/// Total absorbed dose (Gy) to complete decay at `distance` mm from one seed.
pub fn seed_point_dose(distance: f64, strength: f64, model: &SourceModel) -> Result<f64> {
    if !(strength > 0.0) || !strength.is_finite() {
        return validation(format!("source strength must be positive, got {strength}"));
    }
    if !(distance >= 0.0) {
        return validation(format!("distance must be non-negative, got {distance}"));
    }
    Ok(model.total_dose(distance, strength))
}

/// Absorbed dose (Gy) on an anatomy voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseGrid {
    pub values: Array3<f64>,
    pub spacing: [f64; 3],
}

impl DoseGrid {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// mm positions of every seed in scan order, checking registration.
pub(crate) fn seed_positions(plan: &SeedPlan, case: &AnatomyCase) -> Result<Vec<MmPoint>> {
    if !plan.case_id.is_empty() && !case.case_id.is_empty() && plan.case_id != case.case_id {
        return Err(Error::Registration(format!(
            "plan belongs to case '{}', not '{}'",
            plan.case_id, case.case_id
        )));
    }
    let (nz, ny, nx) = case.dims();
    let bounds = [
        (nx, case.spacing[2]),
        (ny, case.spacing[1]),
        (nz, case.spacing[0]),
    ];
    plan.seeds()
        .into_iter()
        .map(|s| {
            let p = case.grid_point_mm(plan.grid(), s);
            let inside = [p.x, p.y, p.z]
                .iter()
                .zip(bounds)
                .all(|(&v, (n, d))| v >= -0.5 * d && v <= (n as f64 - 0.5) * d);
            if inside {
                Ok(p)
            } else {
                Err(Error::Registration(format!("seed {s:?} at {p:?} lies outside the anatomy volume")))
            }
        })
        .collect()
}

fn check_strength(strength: f64) -> Result<()> {
    if strength > 0.0 && strength.is_finite() {
        Ok(())
    } else {
        validation(format!("source strength must be positive, got {strength}"))
    }
}

/// Dose from every seed of `plan`, summed per voxel in seed scan order.
pub fn compute_dose(plan: &SeedPlan, case: &AnatomyCase, model: &SourceModel) -> Result<DoseGrid> {
    let seeds = seed_positions(plan, case)?;
    if !seeds.is_empty() {
        check_strength(plan.source_strength)?;
    }
    let strength = plan.source_strength;
    let mut values = Array3::<f64>::zeros(case.dims());
    Zip::indexed(&mut values).par_for_each(|(z, y, x), v| {
        let c = case.voxel_center(z, y, x);
        let mut acc = 0.0;
        for s in &seeds {
            acc += model.total_dose(c.distance(s), strength);
        }
        *v = acc;
    });
    Ok(DoseGrid {
        values,
        spacing: case.spacing,
    })
}

/// Dose at selected voxels, bit-identical to the matching [`compute_dose`] entries.
pub(crate) fn dose_at_voxels(
    plan: &SeedPlan,
    case: &AnatomyCase,
    model: &SourceModel,
    voxels: &[(usize, usize, usize)],
) -> Result<Vec<f64>> {
    let seeds = seed_positions(plan, case)?;
    if !seeds.is_empty() {
        check_strength(plan.source_strength)?;
    }
    let strength = plan.source_strength;
    use rayon::prelude::*;
    Ok(voxels
        .par_iter()
        .map(|&(z, y, x)| {
            let c = case.voxel_center(z, y, x);
            let mut acc = 0.0;
            for s in &seeds {
                acc += model.total_dose(c.distance(s), strength);
            }
            acc
        })
        .collect())
}

/// Percentage of `mask` receiving at least `x_percent`% of `prescribed` Gy.
pub fn v_metric(dose: ArrayView3<f64>, mask: ArrayView3<u8>, x_percent: f64, prescribed: f64) -> Result<f64> {
    if dose.dim() != mask.dim() {
        return validation(format!("dose dims {:?} differ from mask dims {:?}", dose.dim(), mask.dim()));
    }
    let threshold = x_percent / 100.0 * prescribed;
    let mut total = 0usize;
    let mut hit = 0usize;
    Zip::from(&dose).and(&mask).for_each(|&d, &m| {
        if m != 0 {
            total += 1;
            if d >= threshold {
                hit += 1;
            }
        }
    });
    if total == 0 {
        return Err(Error::UndefinedMetric("V metric of an empty mask".into()));
    }
    Ok(100.0 * hit as f64 / total as f64)
}

/// A dose-volume metric by structure and dose level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricKind {
    PtvV100,
    PtvV150,
    CtvV100,
    CtvV150,
    UreV150,
    RecV50,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::PtvV100,
        MetricKind::PtvV150,
        MetricKind::CtvV100,
        MetricKind::CtvV150,
        MetricKind::UreV150,
        MetricKind::RecV50,
    ];

    pub fn structure(self) -> Structure {
        match self {
            MetricKind::PtvV100 | MetricKind::PtvV150 => Structure::Ptv,
            MetricKind::CtvV100 | MetricKind::CtvV150 => Structure::Ctv,
            MetricKind::UreV150 => Structure::Urethra,
            MetricKind::RecV50 => Structure::Rectum,
        }
    }

    pub fn percent(self) -> f64 {
        match self {
            MetricKind::PtvV100 | MetricKind::CtvV100 => 100.0,
            MetricKind::PtvV150 | MetricKind::CtvV150 | MetricKind::UreV150 => 150.0,
            MetricKind::RecV50 => 50.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One row of plan-quality metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub ptv_v100: f64,
    pub ptv_v150: f64,
    pub ctv_v100: f64,
    pub ctv_v150: f64,
    pub ure_v150: f64,
    pub rec_v50: f64,
    pub needles: usize,
    pub seeds: usize,
    pub plan_time: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "PTV_V100,PTV_V150,CTV_V100,CTV_V150,URE_V150,REC_V50,N_needles,N_seeds,plan_time_s";

    pub fn get(&self, kind: MetricKind) -> f64 {
        self.as_array()[kind.index()]
    }

    /// All nine columns in CSV order.
    pub fn as_array(&self) -> [f64; 9] {
        [
            self.ptv_v100,
            self.ptv_v150,
            self.ctv_v100,
            self.ctv_v150,
            self.ure_v150,
            self.rec_v50,
            self.needles as f64,
            self.seeds as f64,
            self.plan_time,
        ]
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.ptv_v100,
            self.ptv_v150,
            self.ctv_v100,
            self.ctv_v150,
            self.ure_v150,
            self.rec_v50,
            self.needles,
            self.seeds,
            self.plan_time
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() != 9 {
            return validation(format!("metrics row needs 9 fields, got {}", fields.len()));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Validation(format!("field {i} '{}': {e}", fields[i])))
        };
        let count = |i: usize| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| Error::Validation(format!("field {i} '{}': {e}", fields[i])))
        };
        Ok(Self {
            ptv_v100: num(0)?,
            ptv_v150: num(1)?,
            ctv_v100: num(2)?,
            ctv_v150: num(3)?,
            ure_v150: num(4)?,
            rec_v50: num(5)?,
            needles: count(6)?,
            seeds: count(7)?,
            plan_time: num(8)?,
        })
    }
}

/// Write rows as CSV with the standard header.
pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(w, "{}", MetricsRow::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.to_csv_line())?;
    }
    Ok(())
}

/// Parse CSV produced by [`write_metrics_csv`]; the header line is optional.
pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("PTV_V100"))
        .map(MetricsRow::from_csv_line)
        .collect()
}

fn mask_voxels(mask: &Array3<u8>) -> Vec<(usize, usize, usize)> {
    mask.indexed_iter().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect()
}

fn v_from_doses(doses: &[f64], x_percent: f64, prescribed: f64, what: Structure) -> Result<f64> {
    if doses.is_empty() {
        return Err(Error::UndefinedMetric(format!("{} mask is empty", what.name())));
    }
    let threshold = x_percent / 100.0 * prescribed;
    let hit = doses.iter().filter(|&&d| d >= threshold).count();
    Ok(100.0 * hit as f64 / doses.len() as f64)
}

/// Evaluate one metric for `plan` without computing the full dose grid.
pub fn plan_metric(
    plan: &SeedPlan,
    case: &AnatomyCase,
    model: &SourceModel,
    kind: MetricKind,
    prescribed: f64,
) -> Result<f64> {
    let voxels = mask_voxels(case.mask(kind.structure()));
    let doses = dose_at_voxels(plan, case, model, &voxels)?;
    v_from_doses(&doses, kind.percent(), prescribed, kind.structure())
}

/// All dose-volume metrics plus needle and seed counts. `plan_time` is 0.
pub fn plan_metrics(plan: &SeedPlan, case: &AnatomyCase, model: &SourceModel, prescribed: f64) -> Result<MetricsRow> {
    let mut values = [0.0; 6];
    for s in Structure::ALL {
        let voxels = mask_voxels(case.mask(s));
        let doses = dose_at_voxels(plan, case, model, &voxels)?;
        for kind in MetricKind::ALL.into_iter().filter(|k| k.structure() == s) {
            values[kind.index()] = v_from_doses(&doses, kind.percent(), prescribed, s)?;
        }
    }
    Ok(MetricsRow {
        ptv_v100: values[0],
        ptv_v150: values[1],
        ctv_v100: values[2],
        ctv_v150: values[3],
        ure_v150: values[4],
        rec_v50: values[5],
        needles: plan.needle_count(),
        seeds: plan.seed_count(),
        plan_time: 0.0,
    })
}

/// A metric level to calibrate source strength against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub metric: MetricKind,
    pub value: f64,
}

pub const STRENGTH_BOUNDS: (f64, f64) = (0.01, 10.0);
const CALIBRATION_TOLERANCE: f64 = 0.1;
const CALIBRATION_ITERATIONS: usize = 40;

/// Smallest per-seed strength (U) whose `target.metric` reaches `target.value`,
/// found by bisection; V metrics are non-decreasing in strength.
pub fn calibrate_strength(
    case: &AnatomyCase,
    plan: &SeedPlan,
    target: CalibrationTarget,
    model: &SourceModel,
    prescribed: f64,
) -> Result<f64> {
    if plan.is_empty() {
        return validation("cannot calibrate the strength of an empty plan");
    }
    let metric_at = |strength: f64| -> Result<f64> {
        let mut p = plan.clone();
        p.source_strength = strength;
        plan_metric(&p, case, model, target.metric, prescribed)
    };
    let (mut lo, mut hi) = STRENGTH_BOUNDS;
    if metric_at(lo)? >= target.value {
        return Ok(lo);
    }
    let mut hi_value = metric_at(hi)?;
    if hi_value < target.value {
        return Err(Error::Calibration(format!(
            "{:?} reaches only {hi_value:.3}% at {hi} U, below target {}",
            target.metric, target.value
        )));
    }
    for _ in 0..CALIBRATION_ITERATIONS {
        if hi_value - target.value <= CALIBRATION_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = metric_at(mid)?;
        if v >= target.value {
            hi = mid;
            hi_value = v;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
