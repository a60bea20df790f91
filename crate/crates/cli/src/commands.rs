//! Subcommand bodies. Each reads its inputs, runs the library, writes its
//! outputs into `--out` and finishes with `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mbot::apps::color::{color_transfer, TransferConfig};
use mbot::apps::flow::{gradient_flow, s_shape_setup, FlowConfig};
use mbot::diagnostics::{
    concentration_plan_experiment, concentration_value_experiment, mapping_census, reference_plan, GaussianPair,
    ENTROPIC_THRESHOLD, EXACT_THRESHOLD,
};
use mbot::io;
use mbot::{
    build_cost, full_mb_transport, mb_transport, mb_transport_with_batches, two_stage_align, AggregatedResult,
    BatchPair, BatchSpec, DiscreteMeasure, Error, SolverKind,
};

use crate::manifest::Recorder;
use crate::{CensusArgs, Cli, CliError, ColorArgs, Command, ConcentrationArgs, ConcentrationMode, FlowArgs, MinibatchArgs, SolveArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(a) => solve(a, cli),
        Command::Minibatch(a) => minibatch(a, cli),
        Command::Census(a) => census(a, cli),
        Command::Concentration(a) => concentration(a, cli),
        Command::Flow(a) => flow(a, cli),
        Command::Color(a) => color(a, cli),
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::Io(e)))
}

fn read_cloud(path: &Path, rec: &mut Recorder) -> Result<DiscreteMeasure> {
    rec.input(path);
    Ok(io::read_point_cloud(path)?)
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| CliError::Usage("this run samples batches and needs --seed".into()))
}

fn finish<P: Serialize>(rec: Recorder, out: &Path, name: &str, params: &P, seed: Option<u64>) -> Result<()> {
    let path = out.join("manifest.json");
    let manifest = rec.finish(name, params, seed);
    io::write_json(&path, &manifest)?;
    Ok(())
}

fn write_json<T: Serialize>(rec: &mut Recorder, path: PathBuf, value: &T) -> Result<()> {
    io::write_json(&path, value)?;
    rec.output(&path);
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary {
    kind: &'static str,
    objective: f64,
    mass: f64,
    converged: bool,
    iterations: usize,
}

fn solve(args: &SolveArgs, cli: &Cli) -> Result<()> {
    let kind = args.solver.kind()?;
    let mut rec = Recorder::new();
    let source = read_cloud(&args.source, &mut rec)?;
    let target = read_cloud(&args.target, &mut rec)?;
    out_dir(&args.out)?;
    let cost = build_cost(&source, &target, args.metric.into())?;
    let a = source.weights().to_vec();
    let b = target.weights().to_vec();
    let plan = kind.build()?.solve(&a, &b, &cost).map_err(CliError::Core)?;

    let plan_path = args.out.join("plan.csv");
    io::write_triplets(&plan_path, &plan.coupling, 0.0)?;
    rec.output(&plan_path);
    let summary = SolveSummary {
        kind: kind.tag(),
        objective: plan.objective,
        mass: plan.total_mass,
        converged: plan.converged,
        iterations: plan.iterations,
    };
    write_json(&mut rec, args.out.join("summary.json"), &summary)?;
    finish(rec, &args.out, "solve", cli, None)
}

#[derive(Serialize)]
struct ValueSummary {
    kind: &'static str,
    value: f64,
    total_mass: f64,
    num_batches: usize,
    all_converged: bool,
}

#[derive(Serialize)]
struct BatchRow {
    index: usize,
    source: String,
    target: String,
    objective: f64,
    mass: f64,
    converged: bool,
}

fn join(ix: &[usize]) -> String {
    ix.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn write_aggregate(rec: &mut Recorder, out: &Path, kind: &SolverKind, result: &AggregatedResult) -> Result<()> {
    let summary = ValueSummary {
        kind: kind.tag(),
        value: result.value,
        total_mass: result.total_mass(),
        num_batches: result.batch_records.len(),
        all_converged: result.all_converged(),
    };
    write_json(rec, out.join("value.json"), &summary)?;
    let plan_path = out.join("padded_plan.csv");
    io::write_triplets(&plan_path, &result.padded_plan, 0.0)?;
    rec.output(&plan_path);
    let rows: Vec<BatchRow> = result
        .batch_records
        .iter()
        .enumerate()
        .map(|(index, r)| BatchRow {
            index,
            source: join(&r.source),
            target: join(&r.target),
            objective: r.objective,
            mass: r.mass,
            converged: r.converged,
        })
        .collect();
    let batches_path = out.join("batches.csv");
    io::write_records(&batches_path, &rows)?;
    rec.output(&batches_path);
    Ok(())
}

fn read_schedule(path: &Path, rec: &mut Recorder) -> Result<Vec<BatchPair>> {
    rec.input(path);
    let text = fs::read_to_string(path).map_err(|e| CliError::Core(Error::Io(e)))?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(Error::Format(format!("{}: {e}", path.display()))))
}

#[derive(Serialize)]
struct GammaRow {
    source_index: usize,
    target_index: Option<usize>,
}

fn minibatch(args: &MinibatchArgs, cli: &Cli) -> Result<()> {
    let kind = args.solver.kind()?;
    let metric = args.metric.into();
    let mut rec = Recorder::new();
    let source = read_cloud(&args.source, &mut rec)?;
    let target = read_cloud(&args.target, &mut rec)?;
    out_dir(&args.out)?;
    let solver = kind.build()?;

    if args.two_stage {
        let seed = require_seed(args.seed)?;
        let big = args.big_batch.expect("clap enforces --big-batch");
        let alignment = two_stage_align(&source, &target, big, args.m, &kind, seed, metric)?;
        let rows: Vec<GammaRow> = alignment
            .source_indices
            .iter()
            .zip(&alignment.gamma)
            .map(|(&s, &t)| GammaRow { source_index: s, target_index: t })
            .collect();
        let gamma_path = args.out.join("gamma.csv");
        io::write_records(&gamma_path, &rows)?;
        rec.output(&gamma_path);
        for (b, block) in alignment.blocks.iter().enumerate() {
            let path = args.out.join(format!("block_{b:04}.csv"));
            io::write_triplets(&path, &block.plan, 0.0)?;
            rec.output(&path);
        }
        write_json(
            &mut rec,
            args.out.join("alignment.json"),
            &serde_json::json!({
                "objective": alignment.plan.objective,
                "mass": alignment.plan.total_mass,
                "blocks": alignment.blocks.len(),
                "absent": alignment.absent(),
            }),
        )?;
        return finish(rec, &args.out, "minibatch", cli, Some(seed));
    }

    let (result, seed) = if args.enumerate {
        let r = full_mb_transport(&source, &target, args.m, solver.as_ref(), metric, args.pair_cap)?;
        (r, None)
    } else if let Some(path) = &args.batches {
        let batches = read_schedule(path, &mut rec)?;
        (mb_transport_with_batches(&source, &target, &batches, solver.as_ref(), metric)?, None)
    } else {
        let seed = require_seed(args.seed)?;
        let spec = BatchSpec { batch_size: args.m, num_batches: args.k, sampling: args.sampling.into(), seed };
        (mb_transport(&source, &target, &spec, solver.as_ref(), metric)?, Some(seed))
    };
    write_aggregate(&mut rec, &args.out, &kind, &result)?;
    finish(rec, &args.out, "minibatch", cli, seed)
}

fn census(args: &CensusArgs, cli: &Cli) -> Result<()> {
    let mut rec = Recorder::new();
    let metric = args.metric.into();
    let source = read_cloud(&args.source, &mut rec)?;
    let target = read_cloud(&args.target, &mut rec)?;
    out_dir(&args.out)?;
    let (candidate, entropic, seed) = match &args.candidate {
        Some(path) => {
            rec.input(path);
            (io::read_triplets(path, source.len(), target.len())?, false, None)
        }
        None => {
            let kind = args.solver.kind()?;
            let m = args.m.ok_or_else(|| CliError::Usage("without --candidate, --m is required".into()))?;
            let seed = require_seed(args.seed)?;
            let solver = kind.build()?;
            let result = mb_transport(&source, &target, &BatchSpec::new(m, args.k, seed), solver.as_ref(), metric)?;
            write_aggregate(&mut rec, &args.out, &kind, &result)?;
            (result.padded_plan, args.solver.is_entropic(), Some(seed))
        }
    };
    let threshold = args.threshold.unwrap_or(if entropic { ENTROPIC_THRESHOLD } else { EXACT_THRESHOLD });
    let reference = reference_plan(&source, &target, metric)?;
    let census = mapping_census(&candidate, &reference, threshold)?;
    println!(
        "total={}, misspecified={}, optimal={}",
        census.total, census.misspecified, census.optimal
    );
    write_json(&mut rec, args.out.join("census.json"), &census)?;
    finish(rec, &args.out, "census", cli, seed)
}

fn concentration(args: &ConcentrationArgs, cli: &Cli) -> Result<()> {
    let mut rec = Recorder::new();
    out_dir(&args.out)?;
    let data = GaussianPair { dim: args.dim, shift: args.shift };
    let run = match args.mode {
        ConcentrationMode::Value => concentration_value_experiment,
        ConcentrationMode::Plan => concentration_plan_experiment,
    };
    let report = run(args.n, args.m, args.s, &args.k_grid, args.replicates, args.seed, &data)?;
    let csv_path = args.out.join("concentration.csv");
    io::write_records(&csv_path, &report.rows)?;
    rec.output(&csv_path);
    write_json(&mut rec, args.out.join("concentration.json"), &report)?;
    finish(rec, &args.out, "concentration", cli, Some(args.seed))
}

#[derive(Serialize)]
struct W2Row {
    step: usize,
    w2: f64,
}

fn flow(args: &FlowArgs, cli: &Cli) -> Result<()> {
    let loss = args.solver.kind()?;
    let mut rec = Recorder::new();
    let (init, target) = match (&args.source, &args.target) {
        (Some(s), Some(t)) => (read_cloud(s, &mut rec)?, read_cloud(t, &mut rec)?),
        _ => s_shape_setup(args.sshape_n, args.seed)?,
    };
    out_dir(&args.out)?;
    let config = FlowConfig {
        loss,
        num_batches: args.k,
        batch_size: args.m,
        learning_rate: args.lr,
        steps: args.steps,
        seed: args.seed,
        eval_every: args.eval_every,
    };
    let traj = gradient_flow(&init, &target, &config)?;

    let snap_dir = args.out.join("snapshots");
    out_dir(&snap_dir)?;
    for (step, pts) in &traj.snapshots {
        let cloud = DiscreteMeasure::new(pts.clone(), init.weights().clone())?;
        let path = snap_dir.join(format!("step_{step:08}.csv"));
        io::write_point_cloud(&path, &cloud, false)?;
        rec.output(&path);
    }
    let target_path = args.out.join("target.csv");
    io::write_point_cloud(&target_path, &target, false)?;
    rec.output(&target_path);
    let rows: Vec<W2Row> = traj.w2_curve.iter().map(|&(step, w2)| W2Row { step, w2 }).collect();
    let w2_path = args.out.join("w2.csv");
    io::write_records(&w2_path, &rows)?;
    rec.output(&w2_path);
    finish(rec, &args.out, "flow", cli, Some(args.seed))
}

fn color(args: &ColorArgs, cli: &Cli) -> Result<()> {
    let kind = args.solver.kind()?;
    if matches!(kind, SolverKind::Uot(_)) {
        return Err(CliError::Usage("color transfer supports ot and pot".into()));
    }
    let mut rec = Recorder::new();
    rec.input(&args.source);
    rec.input(&args.target);
    let source = io::read_ppm(&args.source)?;
    let target = io::read_ppm(&args.target)?;
    out_dir(&args.out)?;
    let config = TransferConfig { num_batches: args.k, batch_size: args.m, seed: args.seed };
    let result = color_transfer(&source, &target, &kind, &config)?;
    let output = args.output.clone().unwrap_or_else(|| args.out.join("transfer.ppm"));
    io::write_ppm(&output, &result.image)?;
    rec.output(&output);
    let visited = result.visits.iter().filter(|&&v| v > 0).count();
    write_json(
        &mut rec,
        args.out.join("transfer.json"),
        &serde_json::json!({
            "pixels": result.visits.len(),
            "visited": visited,
            "unmodified": result.unmodified(),
        }),
    )?;
    finish(rec, &args.out, "color", cli, Some(args.seed))
}
