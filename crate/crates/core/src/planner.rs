//! Simulated-annealing seed planning with a dosimetric cost, and the
//! deterministic initial plans it starts from.

use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{AnatomyCase, Structure};
use crate::dose::{seed_positions, DoseEvaluator, EvaluatorOptions, MetricCounts, MetricKind, SourceModel};
use crate::error::{validation, Error, Result};
use crate::grid::{GridPoint, TemplateGrid};
use crate::objective::count_adjacent_pairs;
use crate::plan::{NeedlePlan, SeedPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveWeights {
    pub relocate: f64,
    pub add: f64,
    pub remove: f64,
    pub needle_swap: f64,
}

impl Default for MoveWeights {
    fn default() -> Self {
        Self {
            relocate: 0.5,
            add: 0.2,
            remove: 0.2,
            needle_swap: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SAConfig {
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    pub iterations_per_temperature: usize,
    pub min_temperature: f64,
    /// Seconds.
    pub max_wall_time: f64,
    pub rng_seed: u64,
    pub move_weights: MoveWeights,
    /// Share of add moves that may open a new needle.
    pub open_needle_fraction: f64,
    /// Dose is sampled at voxels whose indices are multiples of this.
    pub sample_stride: usize,
}

impl Default for SAConfig {
    fn default() -> Self {
        Self {
            initial_temperature: 1.0,
            cooling_rate: 0.95,
            iterations_per_temperature: 200,
            min_temperature: 1e-4,
            max_wall_time: 180.0,
            rng_seed: 0,
            move_weights: MoveWeights::default(),
            open_needle_fraction: 0.1,
            sample_stride: 2,
        }
    }
}

impl SAConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return validation(format!("cooling rate must lie in (0, 1), got {}", self.cooling_rate));
        }
        if !(self.initial_temperature > 0.0 && self.min_temperature > 0.0) {
            return validation("temperatures must be positive");
        }
        if !(self.max_wall_time > 0.0) {
            return validation("wall-time limit must be positive");
        }
        let w = self.move_weights;
        let ws = [w.relocate, w.add, w.remove, w.needle_swap];
        if ws.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || ws.iter().all(|&v| v == 0.0) {
            return validation("move weights must be non-negative and not all zero");
        }
        if !(0.0..=1.0).contains(&self.open_needle_fraction) {
            return validation("open_needle_fraction must lie in [0, 1]");
        }
        if self.sample_stride == 0 {
            return validation("sample stride must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostTargets {
    pub ptv_v100_min: f64,
    pub ptv_v150_max: f64,
    pub ure_v150_max: f64,
    pub rec_v50_max: f64,
}

impl Default for CostTargets {
    fn default() -> Self {
        Self {
            ptv_v100_min: 96.0,
            ptv_v150_max: 60.0,
            ure_v150_max: 5.0,
            rec_v50_max: 17.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub w_ptv_v100: f64,
    pub w_ptv_v150_excess: f64,
    pub w_ure: f64,
    pub w_rec: f64,
    pub w_adjacency: f64,
    pub w_needle_count: f64,
    pub w_seed_count: f64,
    pub prescribed_gy: f64,
    pub targets: CostTargets,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_ptv_v100: 10.0,
            w_ptv_v150_excess: 1.0,
            w_ure: 5.0,
            w_rec: 2.0,
            w_adjacency: 1e3,
            w_needle_count: 0.05,
            w_seed_count: 0.01,
            prescribed_gy: 144.0,
            targets: CostTargets::default(),
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [
            self.w_ptv_v100,
            self.w_ptv_v150_excess,
            self.w_ure,
            self.w_rec,
            self.w_adjacency,
            self.w_needle_count,
            self.w_seed_count,
        ];
        if ws.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return validation("cost weights must be non-negative");
        }
        if !(self.prescribed_gy > 0.0) {
            return validation("prescribed dose must be positive");
        }
        Ok(())
    }

    /// Cost of a plan with the given metric counts, pair, needle and seed counts.
    pub fn evaluate(&self, counts: &MetricCounts, pairs: usize, needles: usize, seeds: usize) -> f64 {
        let t = &self.targets;
        let hinge = |v: f64| v.max(0.0);
        self.w_ptv_v100 * hinge(t.ptv_v100_min - counts.percent(MetricKind::PtvV100))
            + self.w_ptv_v150_excess * hinge(counts.percent(MetricKind::PtvV150) - t.ptv_v150_max)
            + self.w_ure * hinge(counts.percent(MetricKind::UreV150) - t.ure_v150_max)
            + self.w_rec * hinge(counts.percent(MetricKind::RecV50) - t.rec_v50_max)
            + self.w_adjacency * pairs as f64
            + self.w_needle_count * needles as f64
            + self.w_seed_count * seeds as f64
    }
}

fn evaluator_for(
    plan: &SeedPlan,
    case: &AnatomyCase,
    model: &SourceModel,
    cw: &CostWeights,
    stride: usize,
) -> Result<DoseEvaluator> {
    seed_positions(plan, case)?;
    let options = EvaluatorOptions {
        prescribed: cw.prescribed_gy,
        sample_stride: stride,
        structures: Structure::ALL.to_vec(),
    };
    let mut ev = DoseEvaluator::new(case, plan.grid(), model, plan.source_strength, &options)?;
    ev.set_seeds(plan.seeds());
    Ok(ev)
}

/// Planning cost of `plan`, with dose evaluated at every voxel.
pub fn cost(plan: &SeedPlan, case: &AnatomyCase, model: &SourceModel, cw: &CostWeights) -> Result<f64> {
    cost_sampled(plan, case, model, cw, 1)
}

/// [`cost`] with dose sampled on a voxel lattice of the given stride.
pub fn cost_sampled(plan: &SeedPlan, case: &AnatomyCase, model: &SourceModel, cw: &CostWeights, stride: usize) -> Result<f64> {
    cw.validate()?;
    let ev = evaluator_for(plan, case, model, cw, stride)?;
    Ok(cw.evaluate(&ev.counts(), count_adjacent_pairs(plan), plan.needle_count(), plan.seed_count()))
}

/// PTV plane nearest to the PTV centroid along z.
pub(crate) fn mid_plane(case: &AnatomyCase, grid: &TemplateGrid) -> Result<usize> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((z, _, _), &v) in case.ptv().indexed_iter() {
        if v == 1 {
            sum += z as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Init("PTV is empty".into()));
    }
    let zc = sum / n as f64 * case.spacing[0];
    let p = ((zc - case.template_origin.z) / grid.plane_spacing).round();
    Ok(p.clamp(0.0, (grid.num_planes - 1) as f64) as usize)
}

/// Template cells on seed rows whose mid-plane grid point lies in the PTV,
/// with the distance in mm to the nearest cell outside the footprint.
pub(crate) fn footprint_depth(case: &AnatomyCase, grid: &TemplateGrid) -> Result<Array2<Option<f64>>> {
    let p = mid_plane(case, grid)?;
    let inside = Array2::from_shape_fn((grid.rows, grid.cols), |(r, c)| {
        !grid.is_excluded(r) && case.grid_point_in(grid, GridPoint::new(r, c, p), Structure::Ptv)
    });
    let rows = grid.rows as isize;
    let cols = grid.cols as isize;
    let mut outside = Vec::new();
    for r in -1..=rows {
        for c in -1..=cols {
            let out = r < 0 || c < 0 || r >= rows || c >= cols || !inside[[r as usize, c as usize]];
            if out {
                outside.push((r, c));
            }
        }
    }
    Ok(Array2::from_shape_fn((grid.rows, grid.cols), |(r, c)| {
        inside[[r, c]].then(|| {
            outside
                .iter()
                .map(|&(orow, ocol)| {
                    let dr = (orow - r as isize) as f64;
                    let dc = (ocol - c as isize) as f64;
                    (dr * dr + dc * dc).sqrt() * grid.in_plane_spacing
                })
                .fold(f64::INFINITY, f64::min)
        })
    }))
}

/// Seeds at alternating PTV planes along each needle.
fn alternate_along_needles(
    case: &AnatomyCase,
    grid: &TemplateGrid,
    needles: &[(usize, usize)],
    strength: f64,
) -> Result<SeedPlan> {
    let mut plan = SeedPlan::new(grid.clone(), strength).with_case_id(case.case_id.clone());
    for &(r, c) in needles {
        let mut last: Option<usize> = None;
        for p in 0..grid.num_planes {
            let gp = GridPoint::new(r, c, p);
            if !case.grid_point_in(grid, gp, Structure::Ptv) {
                continue;
            }
            if last.is_none_or(|l| p >= l + 2) {
                plan.insert(gp)?;
                last = Some(p);
            }
        }
    }
    Ok(plan)
}

/// Peripheral-ring width (mm) of the Seattle-style loading pattern.
pub const SEATTLE_RING_MM: f64 = 10.0;

/// Modified peripheral loading: needles on alternating positions of the
/// footprint's outer ring plus a sparse interior lattice, seeds on
/// alternating PTV planes.
pub fn init_seattle(case: &AnatomyCase, grid: &TemplateGrid, strength: f64) -> Result<SeedPlan> {
    let depth = footprint_depth(case, grid)?;
    let needles: Vec<(usize, usize)> = depth
        .indexed_iter()
        .filter_map(|((r, c), d)| {
            let d = (*d)?;
            let on = if d <= SEATTLE_RING_MM {
                (r + c) % 2 == 0
            } else {
                r % 2 == 0 && c % 2 == 0 && (r / 2 + c / 2) % 2 == 0
            };
            on.then_some((r, c))
        })
        .collect();
    if needles.is_empty() {
        return Err(Error::Init("PTV footprint admits no needle".into()));
    }
    let plan = alternate_along_needles(case, grid, &needles, strength)?;
    if plan.is_empty() {
        return Err(Error::Init("no needle intersects the PTV".into()));
    }
    Ok(plan)
}

/// Seeds at alternating PTV planes along each needle of `needles`.
pub fn init_from_needles(needles: &NeedlePlan, case: &AnatomyCase, strength: f64) -> Result<SeedPlan> {
    if needles.count() == 0 {
        return Err(Error::Init("needle plan is empty".into()));
    }
    let plan = alternate_along_needles(case, needles.grid(), &needles.positions(), strength)?;
    if plan.is_empty() {
        return Err(Error::Init("no needle intersects the PTV".into()));
    }
    Ok(plan)
}

/// Seed slots the annealer may use.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    allowed: Array3<bool>,
}

impl SearchSpace {
    /// Slots whose grid point lies in the PTV, plus every seed of `initial`.
    pub fn from_case(case: &AnatomyCase, initial: &SeedPlan) -> Self {
        let grid = initial.grid();
        let mut allowed = Array3::from_elem((grid.rows, grid.cols, grid.num_planes), false);
        for s in grid.seed_slots() {
            if case.grid_point_in(grid, s, Structure::Ptv) {
                allowed[[s.row, s.col, s.plane]] = true;
            }
        }
        for s in initial.seeds() {
            allowed[[s.row, s.col, s.plane]] = true;
        }
        Self { allowed }
    }

    /// Exactly the given slots.
    pub fn from_slots(grid: &TemplateGrid, slots: impl IntoIterator<Item = GridPoint>) -> Result<Self> {
        let mut allowed = Array3::from_elem((grid.rows, grid.cols, grid.num_planes), false);
        for s in slots {
            if !grid.is_seed_slot(s) {
                return validation(format!("{s:?} is not a seed slot"));
            }
            allowed[[s.row, s.col, s.plane]] = true;
        }
        Ok(Self { allowed })
    }

    pub fn allows(&self, p: GridPoint) -> bool {
        self.allowed.get([p.row, p.col, p.plane]).copied().unwrap_or(false)
    }

    pub fn slots(&self) -> Vec<GridPoint> {
        self.allowed
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|((r, c, p), _)| GridPoint::new(r, c, p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveType {
    Relocate,
    Add,
    Remove,
    NeedleSwap,
}

impl MoveType {
    const ALL: [MoveType; 4] = [MoveType::Relocate, MoveType::Add, MoveType::Remove, MoveType::NeedleSwap];

    pub fn name(self) -> &'static str {
        match self {
            MoveType::Relocate => "relocate",
            MoveType::Add => "add",
            MoveType::Remove => "remove",
            MoveType::NeedleSwap => "needle_swap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub temperature: f64,
    pub cost: f64,
    pub best_cost: f64,
    pub accepted: bool,
    pub move_type: MoveType,
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "iteration,temperature,cost,best_cost,accepted,move_type")?;
    for t in trace {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.iteration,
            t.temperature,
            t.cost,
            t.best_cost,
            u8::from(t.accepted),
            t.move_type.name()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AnnealResult {
    pub plan: SeedPlan,
    pub best_cost: f64,
    pub initial_cost: f64,
    pub trace: Vec<TraceRow>,
    /// The wall-time limit stopped the schedule early.
    pub truncated: bool,
}

struct Move {
    added: Vec<GridPoint>,
    removed: Vec<GridPoint>,
}

struct Chain<'a> {
    space: &'a SearchSpace,
    grid: TemplateGrid,
    plan: SeedPlan,
    seeds: Vec<GridPoint>,
    load: Array2<usize>,
    needles: usize,
    pairs: usize,
}

impl<'a> Chain<'a> {
    fn new(plan: SeedPlan, space: &'a SearchSpace) -> Self {
        let grid = plan.grid().clone();
        let mut load = Array2::zeros((grid.rows, grid.cols));
        let seeds = plan.seeds();
        for s in &seeds {
            load[[s.row, s.col]] += 1;
        }
        Self {
            space,
            pairs: count_adjacent_pairs(&plan),
            needles: plan.needle_count(),
            grid,
            plan,
            seeds,
            load,
        }
    }

    fn occupied_neighbors(&self, p: GridPoint) -> usize {
        self.grid.face_neighbors(p).filter(|&q| self.plan.contains(q)).count()
    }

    fn take(&mut self, p: GridPoint) {
        self.plan.remove(p);
        self.pairs -= self.occupied_neighbors(p);
        self.load[[p.row, p.col]] -= 1;
        if self.load[[p.row, p.col]] == 0 {
            self.needles -= 1;
        }
    }

    fn put(&mut self, p: GridPoint) {
        self.pairs += self.occupied_neighbors(p);
        self.plan.insert(p).expect("search space holds seed slots only");
        if self.load[[p.row, p.col]] == 0 {
            self.needles += 1;
        }
        self.load[[p.row, p.col]] += 1;
    }

    fn apply(&mut self, m: &Move) {
        m.removed.iter().for_each(|&p| self.take(p));
        m.added.iter().for_each(|&p| self.put(p));
    }

    fn revert(&mut self, m: &Move) {
        m.added.iter().rev().for_each(|&p| self.take(p));
        m.removed.iter().rev().for_each(|&p| self.put(p));
    }

    fn accept(&mut self, m: &Move) {
        for r in &m.removed {
            let i = self.seeds.iter().position(|s| s == r).expect("removed seed is tracked");
            self.seeds.swap_remove(i);
        }
        self.seeds.extend_from_slice(&m.added);
    }

    fn free_planes(&self, r: usize, c: usize) -> Vec<GridPoint> {
        (0..self.grid.num_planes)
            .map(|p| GridPoint::new(r, c, p))
            .filter(|&q| self.space.allows(q) && !self.plan.contains(q))
            .collect()
    }

    fn occupied_columns(&self) -> Vec<(usize, usize)> {
        self.load
            .indexed_iter()
            .filter(|(_, &n)| n > 0)
            .map(|(rc, _)| rc)
            .collect()
    }

    fn propose(&self, kind: MoveType, rng: &mut ChaCha8Rng, open_fraction: f64, slots: &[GridPoint]) -> Option<Move> {
        let pick = |v: &[GridPoint], rng: &mut ChaCha8Rng| (!v.is_empty()).then(|| v[rng.gen_range(0..v.len())]);
        match kind {
            MoveType::Relocate => {
                let s = *pick(&self.seeds, rng).as_ref()?;
                let to = pick(&self.free_planes(s.row, s.col), rng)?;
                Some(Move { added: vec![to], removed: vec![s] })
            }
            MoveType::Add => {
                let open = self.seeds.is_empty() || rng.gen_bool(open_fraction);
                let to = if open {
                    let free: Vec<GridPoint> = slots.iter().copied().filter(|&q| !self.plan.contains(q)).collect();
                    pick(&free, rng)?
                } else {
                    let cols = self.occupied_columns();
                    let (r, c) = cols[rng.gen_range(0..cols.len())];
                    pick(&self.free_planes(r, c), rng)?
                };
                Some(Move { added: vec![to], removed: vec![] })
            }
            MoveType::Remove => {
                let s = pick(&self.seeds, rng)?;
                Some(Move { added: vec![], removed: vec![s] })
            }
            MoveType::NeedleSwap => {
                let cols = self.occupied_columns();
                if cols.is_empty() {
                    return None;
                }
                let (r, c) = cols[rng.gen_range(0..cols.len())];
                let planes: Vec<usize> = (0..self.grid.num_planes)
                    .filter(|&p| self.plan.contains(GridPoint::new(r, c, p)))
                    .collect();
                let targets: Vec<(usize, usize)> = self
                    .load
                    .indexed_iter()
                    .filter(|&((tr, tc), &n)| {
                        n == 0 && planes.iter().all(|&p| self.space.allows(GridPoint::new(tr, tc, p)))
                    })
                    .map(|(rc, _)| rc)
                    .collect();
                if targets.is_empty() {
                    return None;
                }
                let (tr, tc) = targets[rng.gen_range(0..targets.len())];
                Some(Move {
                    removed: planes.iter().map(|&p| GridPoint::new(r, c, p)).collect(),
                    added: planes.iter().map(|&p| GridPoint::new(tr, tc, p)).collect(),
                })
            }
        }
    }
}

/// Anneal `initial` over `space`; returns the best plan visited.
pub fn anneal_in(
    initial: &SeedPlan,
    case: &AnatomyCase,
    model: &SourceModel,
    sa: &SAConfig,
    cw: &CostWeights,
    space: &SearchSpace,
) -> Result<AnnealResult> {
    sa.validate()?;
    cw.validate()?;
    if let Some(s) = initial.seeds().into_iter().find(|&s| !space.allows(s)) {
        return validation(format!("initial seed {s:?} lies outside the search space"));
    }
    let start = Instant::now();
    let limit = Duration::from_secs_f64(sa.max_wall_time);
    let mut ev = evaluator_for(initial, case, model, cw, sa.sample_stride)?;
    let mut chain = Chain::new(initial.clone(), space);
    let initial_cost = cw.evaluate(&ev.counts(), chain.pairs, chain.needles, chain.seeds.len());
    let mut current = initial_cost;
    let mut best = initial_cost;
    let mut best_plan = initial.clone();
    let mut trace = Vec::new();
    let mut truncated = false;

    let mut rng = ChaCha8Rng::seed_from_u64(sa.rng_seed);
    let mw = sa.move_weights;
    let chooser = WeightedIndex::new([mw.relocate, mw.add, mw.remove, mw.needle_swap]).expect("validated weights");
    let slots = space.slots();

    let mut temperature = sa.initial_temperature;
    let mut iteration = 0;
    'schedule: while temperature >= sa.min_temperature && sa.iterations_per_temperature > 0 {
        for _ in 0..sa.iterations_per_temperature {
            if start.elapsed() > limit {
                truncated = true;
                break 'schedule;
            }
            let kind = MoveType::ALL[chooser.sample(&mut rng)];
            let mut accepted = false;
            if let Some(m) = chain.propose(kind, &mut rng, sa.open_needle_fraction, &slots) {
                chain.apply(&m);
                let counts = ev.propose(&m.added, &m.removed);
                let candidate = cw.evaluate(&counts, chain.pairs, chain.needles, chain.seeds.len() + m.added.len() - m.removed.len());
                let delta = candidate - current;
                accepted = delta <= 0.0 || rng.gen::<f64>() < (-delta / temperature).exp();
                if accepted {
                    ev.commit();
                    chain.accept(&m);
                    current = candidate;
                    if current < best {
                        best = current;
                        best_plan = chain.plan.clone();
                    }
                } else {
                    chain.revert(&m);
                }
            }
            trace.push(TraceRow {
                iteration,
                temperature,
                cost: current,
                best_cost: best,
                accepted,
                move_type: kind,
            });
            iteration += 1;
        }
        temperature *= sa.cooling_rate;
    }

    Ok(AnnealResult {
        plan: best_plan,
        best_cost: best,
        initial_cost,
        trace,
        truncated,
    })
}

/// Anneal over the PTV slots of `case` plus the seeds of `initial`.
pub fn anneal(
    initial: &SeedPlan,
    case: &AnatomyCase,
    model: &SourceModel,
    sa: &SAConfig,
    cw: &CostWeights,
) -> Result<AnnealResult> {
    let space = SearchSpace::from_case(case, initial);
    anneal_in(initial, case, model, sa, cw, &space)
}
