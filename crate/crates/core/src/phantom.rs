//! Synthetic prostate phantoms and reference-plan datasets.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::anatomy::{AnatomyCase, MmPoint, Structure};
use crate::config::PlannerConfig;
use crate::dose::SourceModel;
use crate::error::{validation, Error, Result};
use crate::grid::TemplateGrid;
use crate::io::{write_case_file, write_plan_file, Manifest, ManifestEntry, PlanFile, Split, MANIFEST_MAGIC};
use crate::pipeline::{run_pipeline, PipelineOptions, PlanSource};
use crate::plan::{NeedlePlan, SeedPlan};
use crate::planner::footprint_depth;

pub const VOLUME_RANGE_CC: (f64, f64) = (20.0, 70.0);
/// Phantom volume shape `(nz, ny, nx)` at 1 mm.
pub const PHANTOM_DIMS: (usize, usize, usize) = (78, 100, 88);
/// Where template point (0, 0, 0) sits in phantom coordinates.
pub const PHANTOM_TEMPLATE_ORIGIN: MmPoint = MmPoint::new(14.0, 12.0, 6.0);
/// CTV center `[x, y, z]` in mm.
const CENTER: [f64; 3] = [44.0, 39.5, 38.5];
/// Upper bounds on the CTV semi-axes `[x, y, z]` before perturbation.
const SEMI_AXIS_CAP: [f64; 3] = [32.0, 26.0, 29.0];
const PERTURBATION: f64 = 0.05;
const PTV_MARGIN_MM: f64 = 3.0;
const URETHRA_RADIUS_MM: f64 = 3.5;
/// Footprint ring depth (mm) loaded on the checkerboard.
pub const NEEDLE_RING_MM: f64 = 7.5;

fn superellipsoid_volume(semi: [f64; 3], n: f64) -> f64 {
    8.0 * semi[0] * semi[1] * semi[2] * gamma(1.0 + 1.0 / n).powi(3) / gamma(1.0 + 3.0 / n)
}

/// Scale the axis ratios to `volume` mm³, holding capped axes at their cap.
fn fit_semi_axes(ratios: [f64; 3], n: f64, volume: f64) -> [f64; 3] {
    let mut semi = ratios;
    let mut capped = [false; 3];
    for _ in 0..4 {
        let free = capped.iter().filter(|&&c| !c).count();
        if free == 0 {
            break;
        }
        let f = (volume / superellipsoid_volume(semi, n)).powf(1.0 / free as f64);
        for i in 0..3 {
            if !capped[i] {
                semi[i] *= f;
            }
        }
        let mut changed = false;
        for i in 0..3 {
            let cap = SEMI_AXIS_CAP[i] / (1.0 + PERTURBATION);
            if semi[i] > cap {
                semi[i] = cap;
                capped[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    semi
}

/// Smooth surface modulation in [-1, 1] built from second-order harmonics.
struct Perturbation {
    coef: [f64; 6],
}

impl Perturbation {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut coef = [0.0; 6];
        for c in &mut coef {
            *c = rng.gen_range(-1.0..1.0);
        }
        let norm: f64 = coef.iter().map(|c: &f64| c.abs()).sum::<f64>().max(1e-12);
        coef.iter_mut().for_each(|c| *c /= norm);
        Self { coef }
    }

    fn at(&self, u: [f64; 3]) -> f64 {
        let [x, y, z] = u;
        let basis = [x * y, y * z, x * z, x * x - y * y, 1.5 * z * z - 0.5, x];
        self.coef.iter().zip(basis).map(|(c, b)| c * b).sum()
    }
}

/// Generate a phantom with a CTV of `volume_cc`.
pub fn gen_anatomy(rng_seed: u64, volume_cc: f64) -> Result<AnatomyCase> {
    if !(VOLUME_RANGE_CC.0..=VOLUME_RANGE_CC.1).contains(&volume_cc) {
        return validation(format!(
            "volume {volume_cc} cc outside [{}, {}]",
            VOLUME_RANGE_CC.0, VOLUME_RANGE_CC.1
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = rng.gen_range(2.0..2.6);
    let base = [1.0, 0.8, 0.9];
    let ratios = base.map(|b| b * rng.gen_range(0.8..1.2));
    let semi = fit_semi_axes(ratios, n, volume_cc * 1000.0);
    let bump = Perturbation::sample(&mut rng);
    let rect_radius = rng.gen_range(8.0..11.0);
    let rect_gap = rng.gen_range(2.0..5.0);

    let dims = PHANTOM_DIMS;
    let rho = Array3::from_shape_fn(dims, |(z, y, x)| {
        let d = [x as f64 - CENTER[0], y as f64 - CENTER[1], z as f64 - CENTER[2]];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let h = if len > 0.0 { bump.at(d.map(|v| v / len)) } else { 0.0 };
        let norm = (0..3).map(|i| (d[i] / semi[i]).abs().powf(n)).sum::<f64>().powf(1.0 / n);
        norm / (1.0 + PERTURBATION * h)
    });
    let target = (volume_cc * 1000.0).round() as usize;
    let mut sorted: Vec<f64> = rho.iter().copied().collect();
    let (_, &mut cut, _) = sorted.select_nth_unstable_by(target - 1, f64::total_cmp);
    let ctv = rho.mapv(|r| u8::from(r <= cut));

    let r = PTV_MARGIN_MM as isize;
    let offsets: Vec<(isize, isize)> = (-r..=0)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) <= PTV_MARGIN_MM * PTV_MARGIN_MM)
        .collect();
    let (nz, ny, nx) = dims;
    let mut ptv = ctv.clone();
    for ((z, y, x), &v) in ctv.indexed_iter() {
        if v == 0 {
            continue;
        }
        for &(dy, dx) in &offsets {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < ny && (xx as usize) < nx {
                ptv[[z, yy as usize, xx as usize]] = 1;
            }
        }
    }

    let (mut cx, mut cy, mut count) = (0.0, 0.0, 0usize);
    let (mut zmin, mut zmax, mut ymax) = (nz, 0, 0);
    for ((z, y, x), &v) in ctv.indexed_iter() {
        if v == 1 {
            cx += x as f64;
            cy += y as f64;
            count += 1;
            zmin = zmin.min(z);
            zmax = zmax.max(z);
            ymax = ymax.max(y);
        }
    }
    cx /= count as f64;
    cy /= count as f64;
    let urethra = Array3::from_shape_fn(dims, |(z, y, x)| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        u8::from(ctv[[z, y, x]] == 1 && dx * dx + dy * dy <= URETHRA_RADIUS_MM * URETHRA_RADIUS_MM)
    });

    let rect_y = ymax as f64 + rect_gap + rect_radius;
    let z_lo = zmin.saturating_sub(5);
    let z_hi = (zmax + 5).min(nz - 1);
    let rectum = Array3::from_shape_fn(dims, |(z, y, x)| {
        let (dx, dy) = (x as f64 - cx, y as f64 - rect_y);
        let inside = (z_lo..=z_hi).contains(&z) && dx * dx + dy * dy <= rect_radius * rect_radius;
        u8::from(inside && ptv[[z, y, x]] == 0)
    });

    AnatomyCase::new(
        format!("phantom_{rng_seed}"),
        [1.0; 3],
        PHANTOM_TEMPLATE_ORIGIN,
        ptv,
        ctv,
        urethra,
        rectum,
    )
}

/// Heuristic needle plan: a checkerboard over the outer ring of the PTV's
/// mid-plane footprint plus a sparse even lattice inside it.
pub fn gen_needle_plan(case: &AnatomyCase, grid: &TemplateGrid) -> Result<NeedlePlan> {
    let depth = footprint_depth(case, grid).map_err(|e| match e {
        Error::Init(m) => Error::Degenerate(m),
        other => other,
    })?;
    let chosen: Vec<(usize, usize)> = depth
        .indexed_iter()
        .filter_map(|((r, c), d)| {
            let d = (*d)?;
            let on = if d <= NEEDLE_RING_MM {
                (r + c) % 2 == 0
            } else {
                r % 2 == 0 && c % 2 == 0
            };
            on.then_some((r, c))
        })
        .collect();
    if chosen.is_empty() {
        return Err(Error::Degenerate("PTV footprint admits no needle".into()));
    }
    NeedlePlan::from_positions(grid.clone(), chosen)
}

/// The case's reference plan: needles+SA followed by post-processing.
pub fn gen_reference_plan(case: &AnatomyCase, needles: &NeedlePlan, cfg: &PlannerConfig, model: &SourceModel) -> Result<SeedPlan> {
    let opts = PipelineOptions {
        anneal: true,
        uniformize: cfg.postprocess.uniformize,
    };
    Ok(run_pipeline(case, PlanSource::Needles(needles.clone()), cfg, model, &opts)?.plan)
}

/// Split sizes for `n` cases; val and test are rounded, train takes the rest.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return validation(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1"));
    }
    let val = (n as f64 * fractions[1]).round() as usize;
    let test = ((n as f64 * fractions[2]).round() as usize).min(n - val);
    Ok([n - val - test, val, test])
}

/// Generate `n_cases` phantoms with reference plans under `out_dir` and
/// write `manifest.json` next to them.
pub fn build_dataset(
    n_cases: usize,
    fractions: [f64; 3],
    out_dir: impl AsRef<Path>,
    master_seed: u64,
    cfg: &PlannerConfig,
    model: &SourceModel,
) -> Result<Manifest> {
    let sizes = split_sizes(n_cases, fractions)?;
    cfg.validate()?;
    let out = out_dir.as_ref();
    for sub in ["cases", "needles", "plans"] {
        fs::create_dir_all(out.join(sub))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let specs: Vec<(u64, f64, Split)> = (0..n_cases)
        .map(|i| {
            let split = if i < sizes[0] {
                Split::Train
            } else if i < sizes[0] + sizes[1] {
                Split::Val
            } else {
                Split::Test
            };
            (rng.gen::<u64>(), rng.gen_range(VOLUME_RANGE_CC.0..=VOLUME_RANGE_CC.1), split)
        })
        .collect();
    let grid = TemplateGrid::default();
    let entries: Result<Vec<ManifestEntry>> = specs
        .into_par_iter()
        .enumerate()
        .map(|(i, (seed, volume, split))| {
            let mut case = gen_anatomy(seed, volume)?;
            case.case_id = format!("case_{i:04}");
            let needles = gen_needle_plan(&case, &grid)?;
            let mut case_cfg = cfg.clone();
            case_cfg.sa.rng_seed = seed;
            let plan = gen_reference_plan(&case, &needles, &case_cfg, model)?;
            let id = case.case_id.clone();
            let entry = ManifestEntry {
                case_id: id.clone(),
                case: format!("cases/{id}.spcase"),
                needles: format!("needles/{id}.json"),
                plan: format!("plans/{id}.json"),
                split,
                volume_cc: case.volume_cc(Structure::Ctv),
            };
            write_case_file(out.join(&entry.case), &case)?;
            let used = plan.needles();
            let needle_doc = PlanFile {
                needles: used.clone(),
                seeds: SeedPlan::new(grid.clone(), plan.source_strength).with_case_id(id),
            };
            write_plan_file(out.join(&entry.needles), &needle_doc)?;
            write_plan_file(out.join(&entry.plan), &PlanFile { needles: used, seeds: plan })?;
            Ok(entry)
        })
        .collect();
    let manifest = Manifest {
        magic: MANIFEST_MAGIC.into(),
        master_seed,
        augmented_train_samples: 2 * sizes[0],
        cases: entries?,
    };
    fs::write(out.join("manifest.json"), manifest.to_json())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::init_seattle;

    #[test]
    fn volume_matches_request() {
        for (seed, v) in [(1, 20.0), (2, 40.0), (3, 70.0)] {
            let case = gen_anatomy(seed, v).unwrap();
            let got = case.volume_cc(Structure::Ctv);
            assert!((got - v).abs() <= 0.02 * v, "{got} vs {v}");
        }
        assert!(gen_anatomy(1, 19.9).is_err());
        assert!(gen_anatomy(1, 70.1).is_err());
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_anatomy(7, 33.0).unwrap(), gen_anatomy(7, 33.0).unwrap());
    }

    #[test]
    fn needle_counts_in_envelope() {
        let grid = TemplateGrid::default();
        for seed in 0..5 {
            let case = gen_anatomy(seed, 40.0).unwrap();
            let n = gen_needle_plan(&case, &grid).unwrap().count();
            assert!((18..=32).contains(&n), "needles {n}");
            let s = init_seattle(&case, &grid, 0.5).unwrap().needle_count();
            assert!((20..=36).contains(&s), "seattle {s}");
        }
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(10, [0.7, 0.1, 0.2]).unwrap(), [7, 1, 2]);
        assert_eq!(split_sizes(961, [0.74, 0.104, 0.156]).unwrap().iter().sum::<usize>(), 961);
        assert!(split_sizes(10, [0.5, 0.1, 0.1]).is_err());
    }
}
