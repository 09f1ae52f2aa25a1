//! End-to-end planning: initialization, optional annealing, post-processing
//! and metrics.

use std::time::Instant;

use crate::anatomy::AnatomyCase;
use crate::config::PlannerConfig;
use crate::dose::{plan_metrics, MetricsRow, SourceModel};
use crate::error::{Error, Result};
use crate::planner::{anneal, init_from_needles, init_seattle, TraceRow};
use crate::plan::{NeedlePlan, ProbPlan, SeedPlan};
use crate::postprocess::{binarize, fix_adjacent, uniformize};

/// Where the plan comes from.
#[derive(Debug, Clone)]
pub enum PlanSource {
    /// Seattle-style initial plan.
    Seattle,
    /// Alternating seeds along a needle plan.
    Needles(NeedlePlan),
    /// Generator output restricted to a needle plan.
    Probabilities { pred: ProbPlan, needles: NeedlePlan },
    /// An existing discrete plan.
    Seeds(SeedPlan),
}

impl PlanSource {
    /// Whether annealing runs by default for this source.
    pub fn anneals_by_default(&self) -> bool {
        matches!(self, PlanSource::Seattle | PlanSource::Needles(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub anneal: bool,
    pub uniformize: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub plan: SeedPlan,
    pub metrics: MetricsRow,
    pub trace: Vec<TraceRow>,
    pub truncated: bool,
    pub uniformize_blocked: bool,
}

fn clean(plan: &SeedPlan, case: &AnatomyCase, model: &SourceModel, cfg: &PlannerConfig, opts: &PipelineOptions) -> Result<(SeedPlan, bool)> {
    let fixed = fix_adjacent(plan);
    if !opts.uniformize {
        return Ok((fixed, false));
    }
    let out = uniformize(&fixed, case, model, cfg.postprocess.uniformity_tolerance, cfg.cost.prescribed_gy)?;
    Ok((out.plan, out.blocked))
}

/// Run one case through the planning pipeline.
///
/// Annealed sources are annealed first and then cleaned up; discrete and
/// probabilistic sources are cleaned up first and, when annealing is on,
/// annealed from that plan and cleaned up again. `plan_time` covers
/// everything except the final metric evaluation.
pub fn run_pipeline(
    case: &AnatomyCase,
    source: PlanSource,
    cfg: &PlannerConfig,
    model: &SourceModel,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let strength = cfg.source_strength;
    let (initial, pre_clean) = match source {
        PlanSource::Seattle => (init_seattle(case, &crate::grid::TemplateGrid::default(), strength)?, false),
        PlanSource::Needles(n) => (init_from_needles(&n, case, strength)?, false),
        PlanSource::Probabilities { pred, needles } => {
            if pred.grid() != needles.grid() {
                return Err(Error::Validation("probability plan and needle plan use different templates".into()));
            }
            let b = binarize(&pred, &needles, cfg.postprocess.bin_threshold, strength);
            (b.with_case_id(case.case_id.clone()), true)
        }
        PlanSource::Seeds(s) => (s, true),
    };
    let mut plan = initial;
    if plan.case_id.is_empty() {
        plan.case_id = case.case_id.clone();
    }
    let mut blocked = false;
    if pre_clean {
        let (p, b) = clean(&plan, case, model, cfg, opts)?;
        plan = p;
        blocked = b;
    }
    let mut trace = Vec::new();
    let mut truncated = false;
    if opts.anneal && !plan.is_empty() {
        let mut sa = cfg.sa.clone();
        sa.max_wall_time = (sa.max_wall_time - start.elapsed().as_secs_f64()).max(1e-3);
        let out = anneal(&plan, case, model, &sa, &cfg.cost)?;
        plan = out.plan;
        trace = out.trace;
        truncated = out.truncated;
    }
    if opts.anneal || !pre_clean {
        let (p, b) = clean(&plan, case, model, cfg, opts)?;
        plan = p;
        blocked |= b;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut metrics = plan_metrics(&plan, case, model, cfg.cost.prescribed_gy)?;
    metrics.plan_time = elapsed;
    Ok(PipelineOutput {
        plan,
        metrics,
        trace,
        truncated,
        uniformize_blocked: blocked,
    })
}
