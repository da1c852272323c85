use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use regimeflow::blockcheck::check_all_blocks;
use regimeflow::evalsuite::{
    emit_report, read_forecasts, read_trajectory, write_forecasts, EvalError, ReportFormat,
};
use regimeflow::marketdata::write_dataset;
use regimeflow::pipeline::ablation::{comparison_table, run_seed, seeded, significance_rows};
use regimeflow::pipeline::{
    build_report, load_checkpoint, parse_stages, save_checkpoint, Ablation, DataSource, Dataset, PipelineError,
    RunConfig, System,
};
use regimeflow::synthgen::{generate, write_regimes, REGIME_FILE};
use sha2::{Digest, Sha256};

use crate::{ConfigArgs, OUT_ROOT_VAR};

pub const SNAPSHOT_FILE: &str = "resolved_config.txt";
const ALL_FORMATS: [ReportFormat; 3] = [ReportFormat::Text, ReportFormat::Csv, ReportFormat::PlotData];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Invariant(String),
    Numeric(String),
    Pipeline(PipelineError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invariant(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Pipeline(e) if e.is_invariant() => 2,
            CliError::Pipeline(e) if e.is_numeric() => 3,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Invariant(m) | CliError::Numeric(m) => f.write_str(m),
            CliError::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Pipeline(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Applies profile, file, overrides and seed on top of `base` (the desk
/// profile for fresh runs).
fn resolve(args: &ConfigArgs, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut c = base.unwrap_or_else(RunConfig::desk);
    if let Some(p) = &args.profile {
        c.set("run.profile", p)?;
    }
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        c.apply_text(&text)?;
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        c = seeded(&c, seed);
    }
    c.validate()?;
    Ok(c)
}

fn out_dir(args: &ConfigArgs, command: &str) -> Result<PathBuf> {
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => std::env::var_os(OUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from).join(command),
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn snapshot(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(dir.join(SNAPSHOT_FILE), cfg.to_text())?;
    Ok(())
}

pub fn gen_data(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args, None)?;
    let DataSource::Synthetic(synth_cfg) = &cfg.data else {
        return Err(CliError::Usage("gen-data needs a synthetic data source".into()));
    };
    let out = out_dir(args, "gen-data")?;
    let synth = generate(synth_cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    write_dataset(&synth.panel, &out).map_err(PipelineError::from)?;
    write_regimes(&synth, &out.join(REGIME_FILE))?;
    snapshot(&out, &cfg)?;
    println!(
        "wrote {} stocks x {} days to {}",
        synth.panel.n_stocks(),
        synth.panel.n_days(),
        out.display()
    );
    Ok(())
}

fn checkpoint_dir(out: &Path, stage: u8) -> PathBuf {
    out.join("checkpoints").join(format!("stage-{stage}"))
}

fn write_stage_logs(sys: &System, out: &Path, stage: u8, steps_from: usize) -> Result<()> {
    let logs = out.join("logs");
    fs::create_dir_all(&logs)?;
    let mut text = String::from("component,epoch,planned_epochs,loss\n");
    for log in sys.logs.iter().filter(|l| l.stage == stage) {
        for (k, v) in log.values.iter().enumerate() {
            text.push_str(&format!("{},{},{},{v:e}\n", log.component, k + 1, log.planned_epochs));
        }
    }
    fs::write(logs.join(format!("stage{stage}_losses.csv")), text)?;
    if steps_from < sys.controller_steps.len() {
        let mut text = String::from("step,reward,critic1_loss,critic2_loss,actor_loss,alpha_ent,tau,alpha_blend\n");
        for s in &sys.controller_steps[steps_from..] {
            let u = &s.update;
            text.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                s.step, s.reward, u.critic1_loss, u.critic2_loss, u.actor_loss, u.alpha_ent, s.tau, s.alpha_blend
            ));
        }
        fs::write(logs.join(format!("stage{stage}_controller.csv")), text)?;
    }
    Ok(())
}

pub fn train(args: &ConfigArgs, stages: &str, resume: Option<PathBuf>, allow_mismatch: bool) -> Result<()> {
    let stages = parse_stages(stages)?;
    let out = out_dir(args, "train")?;
    let first = stages[0];
    let resume = resume.or_else(|| {
        let prev = checkpoint_dir(&out, first.saturating_sub(1));
        (first > 1 && prev.join(regimeflow::pipeline::MANIFEST_FILE).exists()).then_some(prev)
    });
    let mut sys = match resume {
        Some(dir) => {
            let ckpt = load_checkpoint(&dir)?;
            let cfg = resolve(args, Some(ckpt.config()?))?;
            System::from_checkpoint(&ckpt, cfg, allow_mismatch)?
        }
        None if first > 1 => {
            return Err(PipelineError::Resume(format!(
                "stage {first} needs the stage-{} checkpoint; pass --resume",
                first - 1
            ))
            .into())
        }
        None => System::from_config(resolve(args, None)?)?,
    };
    snapshot(&out, &sys.config)?;
    let mut steps_from = sys.controller_steps.len();
    sys.run_stages(&stages, |s| {
        let dir = checkpoint_dir(&out, s.stage);
        save_checkpoint(s, &dir)?;
        write_stage_logs(s, &out, s.stage, steps_from).map_err(|e| match e {
            CliError::Pipeline(p) => p,
            other => PipelineError::Config(other.to_string()),
        })?;
        steps_from = s.controller_steps.len();
        let summary: Vec<String> = s
            .logs
            .iter()
            .filter(|l| l.stage == s.stage)
            .filter_map(|l| l.values.last().map(|v| format!("{} {v:.5}", l.component)))
            .collect();
        println!("stage {} done [{}] -> {}", s.stage, summary.join(", "), dir.display());
        Ok(())
    })?;
    Ok(())
}

/// SHA-256 over the names and bytes of every file in `dir`, sorted by name.
fn dir_digest(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        h.update(fs::read(&f)?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn model_label(sys: &System) -> &'static str {
    match sys.variant() {
        Ablation::Full if !sys.controller_active() => Ablation::NoSac.label(),
        v => v.label(),
    }
}

pub fn evaluate(args: &ConfigArgs, checkpoint: &Path, allow_mismatch: bool) -> Result<()> {
    let before = dir_digest(checkpoint)
        .map_err(|_| CliError::Pipeline(PipelineError::Resume(format!("no checkpoint in {}", checkpoint.display()))))?;
    let ckpt = load_checkpoint(checkpoint)?;
    let base = ckpt.config()?;
    let cfg = if args.is_empty() { base } else { resolve(args, Some(base))? };
    let sys = System::from_checkpoint(&ckpt, cfg, allow_mismatch)?;
    let out = out_dir(args, "evaluate")?;
    snapshot(&out, &sys.config)?;
    let eval = sys.evaluate_test()?;
    let report = sys.report(model_label(&sys), &eval)?;
    emit_report(&report, &out, &ALL_FORMATS)?;
    write_forecasts(&eval.forecasts, &out.join("forecasts.csv"))?;
    if dir_digest(checkpoint)? != before {
        return Err(CliError::Invariant(format!("checkpoint {} changed during evaluation", checkpoint.display())));
    }
    print!("{}", regimeflow::evalsuite::render_text(&report));
    Ok(())
}

pub fn ablate(args: &ConfigArgs, seeds: &str) -> Result<()> {
    let seeds: Vec<u64> = seeds
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("bad seed list {seeds:?}"))))
        .collect::<Result<_>>()?;
    let cfg = resolve(args, None)?;
    let out = out_dir(args, "ablate")?;
    snapshot(&out, &cfg)?;
    let mut runs = Vec::new();
    for &seed in &seeds {
        for run in run_seed(&cfg, seed, |m| eprintln!("{m}"))? {
            let dir = out.join(format!("seed-{seed}")).join(run.variant.label());
            emit_report(&run.report, &dir, &ALL_FORMATS)?;
            write_forecasts(&run.evaluation.forecasts, &dir.join("forecasts.csv"))?;
            runs.push(run);
        }
    }
    let horizons = &cfg.model.horizons;
    let table = comparison_table(&runs, horizons);
    fs::write(out.join("ablation.txt"), &table)?;
    let mut csv = String::from("seed,variant,horizon,n,mape,rmse,da,theil_u,seconds\n");
    for r in &runs {
        for &h in horizons {
            if let Some(m) = r.report.aggregate(h) {
                csv.push_str(&format!(
                    "{},{},{h},{},{:e},{:e},{:e},{:e},{:.1}\n",
                    r.seed,
                    r.variant.label(),
                    m.n,
                    m.mape,
                    m.rmse,
                    m.da,
                    m.theil_u,
                    r.seconds
                ));
            }
        }
    }
    fs::write(out.join("ablation.csv"), csv)?;
    let mut sig = String::from("seed,model,reference,horizon,n,mean_diff,t,p\n");
    for (seed, row) in significance_rows(&runs, horizons)? {
        let g = &row.result;
        sig.push_str(&format!(
            "{seed},{},{},{},{},{:e},{:e},{:e}\n",
            row.model, row.reference, row.horizon, g.n, g.mean_diff, g.t, g.p
        ));
    }
    fs::write(out.join("significance.csv"), sig)?;
    print!("{table}");
    Ok(())
}

pub fn gradcheck(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args, None)?;
    let out = out_dir(args, "gradcheck")?;
    snapshot(&out, &cfg)?;
    let blocks = check_all_blocks(cfg.seed).map_err(|e| CliError::Numeric(e.to_string()))?;
    let mut csv = String::from("block,param,checked,max_rel_error,max_abs_error,tolerance,passed\n");
    let mut failed = Vec::new();
    for b in &blocks {
        println!(
            "{:<28} {:>3} tensors  max rel {:.2e}  tol {:.0e}  {}",
            b.block,
            b.params.len(),
            b.max_rel_error(),
            b.tolerance,
            if b.passed() { "ok" } else { "FAILED" }
        );
        for p in &b.params {
            csv.push_str(&format!(
                "{},{},{},{:e},{:e},{:e},{}\n",
                b.block, p.name, p.checked, p.max_rel_error, p.max_abs_error, b.tolerance, p.passed
            ));
        }
        if !b.passed() {
            failed.push(b.block.clone());
        }
    }
    fs::write(out.join("gradcheck.csv"), csv)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

fn stored_model_label(input: &Path) -> Option<String> {
    let text = fs::read_to_string(input.join("report.csv")).ok()?;
    let row = text.lines().nth(1)?;
    row.split(',').next().map(str::to_string)
}

pub fn report(args: &ConfigArgs, input: &Path, model: Option<String>) -> Result<()> {
    let stored = fs::read_to_string(input.join(SNAPSHOT_FILE))
        .map_err(|e| CliError::Usage(format!("{}: {e}", input.join(SNAPSHOT_FILE).display())))?;
    let cfg = resolve(args, Some(RunConfig::from_text(&stored)?))?;
    let forecasts = read_forecasts(&input.join("forecasts.csv"))?;
    let trajectory_path = input.join("trajectory.csv");
    let trajectory = if trajectory_path.exists() { read_trajectory(&trajectory_path)? } else { Vec::new() };
    let model = model
        .or_else(|| stored_model_label(input))
        .unwrap_or_else(|| cfg.ablation().label().to_string());
    let dataset = Dataset::load(&cfg)?;
    let report = build_report(&dataset, &model, &forecasts, trajectory)?;
    let out = out_dir(args, "report")?;
    snapshot(&out, &cfg)?;
    emit_report(&report, &out, &ALL_FORMATS)?;
    print!("{}", regimeflow::evalsuite::render_text(&report));
    Ok(())
}
