//! Turning generator output into an implantable plan: binarization,
//! adjacent-seed resolution and per-plane uniformization.

use crate::anatomy::{AnatomyCase, Structure};
use crate::dose::{DoseEvaluator, EvaluatorOptions, MetricKind, SourceModel};
use crate::error::Result;
use crate::grid::GridPoint;
use crate::plan::{NeedlePlan, ProbPlan, SeedPlan};

/// Seeds where `pred ≥ threshold` on a needle of `needles`.
pub fn binarize(pred: &ProbPlan, needles: &NeedlePlan, threshold: f64, strength: f64) -> SeedPlan {
    let grid = needles.grid().clone();
    let rows = grid.active_rows();
    let mut plan = SeedPlan::new(grid, strength);
    for ((er, c, p), &v) in pred.values().indexed_iter() {
        let r = rows[er];
        if v >= threshold && needles.contains(r, c) {
            plan.insert(GridPoint::new(r, c, p)).expect("active rows are seed rows");
        }
    }
    plan
}

fn first_adjacent_pair(plan: &SeedPlan) -> Option<(GridPoint, GridPoint)> {
    let grid = plan.grid();
    plan.seeds().into_iter().find_map(|s| {
        grid.face_neighbors(s)
            .filter(|&q| q > s && plan.contains(q))
            .min()
            .map(|q| (s, q))
    })
}

fn is_isolated(plan: &SeedPlan, p: GridPoint) -> bool {
    !plan.grid().face_neighbors(p).any(|q| plan.contains(q))
}

/// Resolve adjacent seeds: the later seed of the first pair in scan order
/// moves to the nearest free, non-adjacent plane of its needle (smaller
/// plane on ties), or is removed when no such plane exists.
pub fn fix_adjacent(plan: &SeedPlan) -> SeedPlan {
    let mut out = plan.clone();
    let planes = out.grid().num_planes;
    while let Some((_, later)) = first_adjacent_pair(&out) {
        out.remove(later);
        let target = (1..planes)
            .flat_map(|d| [later.plane.checked_sub(d), Some(later.plane + d)])
            .flatten()
            .filter(|&p| p < planes)
            .map(|p| GridPoint::new(later.row, later.col, p))
            .find(|&q| !out.contains(q) && is_isolated(&out, q));
        if let Some(q) = target {
            out.insert(q).expect("same needle row");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformizeOutcome {
    pub plan: SeedPlan,
    pub moves: usize,
    /// A needed move was refused because every candidate lowered PTV V100.
    pub blocked: bool,
}

/// Planes whose nearest axial slice contains PTV.
fn ptv_planes(case: &AnatomyCase, plan: &SeedPlan) -> Vec<usize> {
    let grid = plan.grid();
    (0..grid.num_planes)
        .filter(|&p| {
            case.plane_slice(grid, p)
                .is_some_and(|z| case.ptv().index_axis(ndarray::Axis(0), z).iter().any(|&v| v == 1))
        })
        .collect()
}

/// Move seeds one at a time from the fullest to the emptiest PTV plane,
/// onto existing needles, while the per-plane spread exceeds the tolerance
/// and PTV V100 does not drop.
pub fn uniformize(
    plan: &SeedPlan,
    case: &AnatomyCase,
    model: &SourceModel,
    tolerance: usize,
    prescribed: f64,
) -> Result<UniformizeOutcome> {
    let mut out = plan.clone();
    let planes = ptv_planes(case, &out);
    let mut outcome = UniformizeOutcome {
        plan: out.clone(),
        moves: 0,
        blocked: false,
    };
    if planes.len() < 2 || out.is_empty() {
        return Ok(outcome);
    }
    let options = EvaluatorOptions {
        prescribed,
        sample_stride: 1,
        structures: vec![Structure::Ptv],
    };
    let mut ev = DoseEvaluator::new(case, out.grid(), model, out.source_strength, &options)?;
    ev.set_seeds(out.seeds());
    let v100 = MetricKind::PtvV100.index();

    for _ in 0..plan.seed_count() {
        let counts = out.plane_counts();
        let src = *planes.iter().rev().max_by_key(|&&p| counts[p]).expect("non-empty");
        let dst = *planes.iter().min_by_key(|&&p| counts[p]).expect("non-empty");
        if counts[src] - counts[dst] <= tolerance {
            break;
        }
        let sources: Vec<GridPoint> = out.seeds().into_iter().filter(|s| s.plane == src).collect();
        let needles = out.needle_positions();
        let before = ev.counts().hits[v100];
        let mut moved = false;
        'search: for &s in &sources {
            out.remove(s);
            for &(r, c) in &needles {
                let t = GridPoint::new(r, c, dst);
                if out.contains(t) || !is_isolated(&out, t) || !case.grid_point_in(out.grid(), t, Structure::Ptv) {
                    continue;
                }
                if ev.propose(&[t], &[s]).hits[v100] >= before {
                    ev.commit();
                    out.insert(t).expect("needle row");
                    moved = true;
                    break 'search;
                }
            }
            out.insert(s).expect("restoring a seed");
        }
        if !moved {
            outcome.blocked = true;
            break;
        }
        outcome.moves += 1;
    }
    outcome.plan = out;
    Ok(outcome)
}
