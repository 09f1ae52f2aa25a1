use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use seedplan::anatomy::AnatomyCase;
use seedplan::config::PlannerConfig;
use seedplan::dose::{plan_metrics, read_metrics_csv, write_metrics_csv, MetricsRow, SourceModel};
use seedplan::golden::generate_fixtures;
use seedplan::grid::TemplateGrid;
use seedplan::io::{
    read_case_file, read_manifest_file, read_plan_file, write_case_file, write_plan_file, PlanFile, ProbPlanFile,
    Split, PLAN_MAGIC, PROB_MAGIC,
};
use seedplan::objective::LossDefinition;
use seedplan::phantom::{build_dataset, gen_anatomy, gen_needle_plan};
use seedplan::pipeline::{run_pipeline, PipelineOptions, PipelineOutput, PlanSource};
use seedplan::planner::write_trace_csv;
use seedplan::plan::SeedPlan;
use seedplan::render::render_plane_svg;
use seedplan::stats::{format_report_text, metric_columns, paired_t_test, write_report_csv, TechniqueSummary};

use crate::{Cli, Command, ConfigCmd, EvaluateArgs, GoldenArgs, Mode, PhantomCmd, PlanArgs, RenderArgs, ReportArgs, TtestArgs};

/// Bad command-line usage that clap cannot catch.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

/// 2 for bad input, 3 for runtime failures.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<seedplan::Error>() {
            return if err.is_input_error() { 2 } else { 3 };
        }
    }
    3
}

struct Ctx {
    cfg: PlannerConfig,
    model: SourceModel,
    seed: Option<u64>,
    no_sa: bool,
    uniformize: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return usage("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Command::Config(ConfigCmd::Init { out, force }) = &cli.command {
        return config_init(out.as_deref(), *force);
    }
    let mut cfg = match &cli.config {
        Some(p) => PlannerConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PlannerConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.sa.rng_seed = s;
    }
    let model = match &cli.source_model {
        Some(p) => SourceModel::from_json(&fs::read_to_string(p)?).with_context(|| format!("loading {}", p.display()))?,
        None => SourceModel::default(),
    };
    let ctx = Ctx {
        uniformize: cfg.postprocess.uniformize && !cli.no_uniformize,
        cfg,
        model,
        seed: cli.seed,
        no_sa: cli.no_sa,
    };
    match cli.command {
        Command::Phantom(cmd) => phantom(&ctx, cmd),
        Command::Plan(args) => plan(&ctx, args),
        Command::Evaluate(args) => evaluate(&ctx, args),
        Command::Report(args) => report(args),
        Command::Ttest(args) => ttest(args),
        Command::Render(args) => render(&ctx, args),
        Command::ExportGolden(args) => export_golden(&ctx, args),
        Command::Config(_) => unreachable!("handled above"),
    }
}

fn config_init(out: Option<&Path>, force: bool) -> Result<()> {
    let text = PlannerConfig::default_toml();
    match out {
        None => print!("{text}"),
        Some(p) => {
            if p.exists() && !force {
                return usage(format!("{} exists; pass --force to overwrite", p.display()));
            }
            fs::write(p, text)?;
        }
    }
    Ok(())
}

fn phantom(ctx: &Ctx, cmd: PhantomCmd) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    match cmd {
        PhantomCmd::Case { volume, out, needles } => {
            let case = gen_anatomy(seed, volume)?;
            write_case_file(&out, &case)?;
            if let Some(p) = needles {
                let grid = TemplateGrid::default();
                let n = gen_needle_plan(&case, &grid)?;
                let doc = PlanFile {
                    needles: n,
                    seeds: SeedPlan::new(grid, ctx.cfg.source_strength).with_case_id(case.case_id.clone()),
                };
                write_plan_file(&p, &doc)?;
            }
            println!("{}: {:.2} cc CTV", case.case_id, case.volume_cc(seedplan::anatomy::Structure::Ctv));
        }
        PhantomCmd::Dataset { cases, split, out } => {
            let fractions: [f64; 3] = match split.as_slice() {
                &[a, b, c] => [a, b, c],
                _ => return usage("--split takes three comma-separated fractions"),
            };
            let m = build_dataset(cases, fractions, &out, seed, &ctx.cfg, &ctx.model)?;
            println!(
                "{} cases ({} train, {} val, {} test) in {}",
                m.cases.len(),
                m.split_count(Split::Train),
                m.split_count(Split::Val),
                m.split_count(Split::Test),
                out.display()
            );
        }
    }
    Ok(())
}

enum PlanInput {
    Prob(ProbPlanFile),
    Seeds(PlanFile),
}

fn read_plan_input(path: &Path) -> Result<PlanInput> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(seedplan::Error::from)?;
    match value.get("magic").and_then(|m| m.as_str()) {
        Some(PROB_MAGIC) => Ok(PlanInput::Prob(ProbPlanFile::from_json(&text)?)),
        Some(PLAN_MAGIC) => Ok(PlanInput::Seeds(PlanFile::from_json(&text)?)),
        other => Err(seedplan::Error::Header(format!("{}: not a plan file (magic {other:?})", path.display())).into()),
    }
}

fn plan_source(mode: Mode, needles: Option<&Path>, input: Option<&Path>) -> Result<PlanSource> {
    Ok(match mode {
        Mode::Seattle => PlanSource::Seattle,
        Mode::Needles => {
            let Some(p) = needles else {
                return usage("needles mode requires --needles");
            };
            PlanSource::Needles(read_plan_file(p).with_context(|| format!("reading {}", p.display()))?.needles)
        }
        Mode::PlanFile => {
            let Some(p) = input else {
                return usage("plan-file mode requires --input");
            };
            match read_plan_input(p)? {
                PlanInput::Prob(f) => PlanSource::Probabilities {
                    pred: f.pred,
                    needles: f.needles,
                },
                PlanInput::Seeds(f) => PlanSource::Seeds(f.seeds),
            }
        }
    })
}

fn pipeline_options(ctx: &Ctx, mode: Mode, sa: bool) -> PipelineOptions {
    let wants_sa = match mode {
        Mode::PlanFile => sa,
        _ => true,
    };
    PipelineOptions {
        anneal: wants_sa && !ctx.no_sa,
        uniformize: ctx.uniformize,
    }
}

fn print_metrics(id: &str, m: &MetricsRow) {
    println!(
        "{id}: PTV V100 {:.2}% V150 {:.2}%, CTV V100 {:.2}%, URE V150 {:.2}%, REC V50 {:.2}%, {} needles, {} seeds, {:.2} s",
        m.ptv_v100, m.ptv_v150, m.ctv_v100, m.ure_v150, m.rec_v50, m.needles, m.seeds, m.plan_time
    );
}

fn output_plan_file(out: &PipelineOutput) -> PlanFile {
    PlanFile::from_seeds(out.plan.clone())
}

fn plan(ctx: &Ctx, args: PlanArgs) -> Result<()> {
    let opts = pipeline_options(ctx, args.mode, args.sa);
    if let Some(manifest) = &args.manifest {
        return plan_manifest(ctx, &args, manifest, opts);
    }
    let Some(case_path) = &args.case else {
        return usage("plan requires --case or --manifest");
    };
    let case = read_case_file(case_path).with_context(|| format!("reading {}", case_path.display()))?;
    let source = plan_source(args.mode, args.needles.as_deref(), args.input.as_deref())?;
    let out = run_pipeline(&case, source, &ctx.cfg, &ctx.model, &opts)?;
    write_plan_file(&args.out, &output_plan_file(&out))?;
    if let Some(p) = &args.metrics {
        write_metrics_csv(fs::File::create(p)?, &[out.metrics])?;
    }
    if let Some(p) = &args.trace {
        write_trace_csv(std::io::BufWriter::new(fs::File::create(p)?), &out.trace)?;
    }
    if out.truncated {
        eprintln!("warning: annealing stopped at the wall-time limit");
    }
    print_metrics(&case.case_id, &out.metrics);
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => usage(format!("unknown split {s:?}")),
    }
}

fn plan_manifest(ctx: &Ctx, args: &PlanArgs, manifest_path: &Path, opts: PipelineOptions) -> Result<()> {
    let manifest = read_manifest_file(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let split = parse_split(&args.split)?;
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    if args.mode == Mode::PlanFile && args.input_dir.is_none() {
        return usage("plan-file mode with --manifest requires --input-dir");
    }
    fs::create_dir_all(&args.out)?;
    let entries: Vec<_> = manifest.cases.iter().filter(|e| e.split == split).collect();
    let results: Result<Vec<(String, PipelineOutput)>> = entries
        .par_iter()
        .map(|e| {
            let case: AnatomyCase = read_case_file(root.join(&e.case)).with_context(|| format!("reading {}", e.case))?;
            let needles: PathBuf = root.join(&e.needles);
            let input = args.input_dir.as_ref().map(|d| d.join(format!("{}.json", e.case_id)));
            let source = plan_source(args.mode, Some(&needles), input.as_deref())?;
            let out = run_pipeline(&case, source, &ctx.cfg, &ctx.model, &opts).with_context(|| format!("planning {}", e.case_id))?;
            write_plan_file(args.out.join(format!("{}.json", e.case_id)), &output_plan_file(&out))?;
            Ok((e.case_id.clone(), out))
        })
        .collect();
    let results = results?;
    let rows: Vec<MetricsRow> = results.iter().map(|(_, o)| o.metrics).collect();
    let metrics = args.metrics.clone().unwrap_or_else(|| args.out.join("metrics.csv"));
    write_metrics_csv(fs::File::create(&metrics)?, &rows)?;
    for (id, o) in &results {
        print_metrics(id, &o.metrics);
    }
    Ok(())
}

fn evaluate(ctx: &Ctx, args: EvaluateArgs) -> Result<()> {
    let case = read_case_file(&args.case).with_context(|| format!("reading {}", args.case.display()))?;
    let plan = read_plan_file(&args.plan).with_context(|| format!("reading {}", args.plan.display()))?;
    let row = plan_metrics(&plan.seeds, &case, &ctx.model, ctx.cfg.cost.prescribed_gy)?;
    match &args.out {
        Some(p) => write_metrics_csv(fs::File::create(p)?, &[row])?,
        None => write_metrics_csv(std::io::stdout().lock(), &[row])?,
    }
    Ok(())
}

fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_metrics_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn report(args: ReportArgs) -> Result<()> {
    if !args.names.is_empty() && args.names.len() != args.files.len() {
        return usage(format!("{} names for {} files", args.names.len(), args.files.len()));
    }
    let mut summaries = Vec::new();
    for (i, f) in args.files.iter().enumerate() {
        let name = args.names.get(i).cloned().unwrap_or_else(|| {
            f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| f.display().to_string())
        });
        summaries.push(TechniqueSummary::from_rows(name, &load_metrics(f)?)?);
    }
    print!("{}", format_report_text(&summaries));
    if let Some(p) = &args.csv {
        let mut f = fs::File::create(p)?;
        write_report_csv(&mut f, &summaries)?;
        f.flush()?;
    }
    Ok(())
}

fn ttest(args: TtestArgs) -> Result<()> {
    let Some(col) = metric_columns().iter().position(|c| *c == args.column) else {
        return usage(format!("unknown column {:?}; expected one of {}", args.column, metric_columns().join(", ")));
    };
    let series = |p: &Path| -> Result<Vec<f64>> { Ok(load_metrics(p)?.iter().map(|r| r.as_array()[col]).collect()) };
    let r = paired_t_test(&series(&args.a)?, &series(&args.b)?)?;
    println!("column {}: mean difference {:.6}, t = {:.6}, df = {}, p = {:.6e}", args.column, r.mean_diff, r.t, r.df, r.p);
    Ok(())
}

fn render(ctx: &Ctx, args: RenderArgs) -> Result<()> {
    let case = read_case_file(&args.case).with_context(|| format!("reading {}", args.case.display()))?;
    let plan = read_plan_file(&args.plan).with_context(|| format!("reading {}", args.plan.display()))?;
    let svg = render_plane_svg(&plan.seeds, &case, &ctx.model, args.plane, ctx.cfg.cost.prescribed_gy)?;
    fs::write(&args.out, svg)?;
    Ok(())
}

fn export_golden(ctx: &Ctx, args: GoldenArgs) -> Result<()> {
    let def = match &args.definition {
        Some(p) => LossDefinition::from_json(&fs::read_to_string(p)?).with_context(|| format!("loading {}", p.display()))?,
        None => LossDefinition::default(),
    };
    let dims = {
        let (a, b, c) = TemplateGrid::default().plan_shape();
        [a, b, c]
    };
    let fixtures = generate_fixtures(args.count, ctx.seed.unwrap_or(0), dims, &def.kernel, def.weights)?;
    fs::create_dir_all(&args.out)?;
    for (i, f) in fixtures.iter().enumerate() {
        fs::write(args.out.join(format!("golden_{i:03}.json")), f.to_json())?;
    }
    println!("{} fixtures in {}", fixtures.len(), args.out.display());
    Ok(())
}
