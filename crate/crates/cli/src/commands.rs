use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use latact::codec::{self, VaeModel};
use latact::sim;
use latact::synth::export_corpus;

use crate::config::{BenchConfig, Protocol};
use crate::error::{config_err, io_err, CliError, CliResult};
use crate::manifest::{Manifest, ManifestBuilder};
use crate::protocols;
use crate::tables::{emit_tables, Table};

#[derive(Debug, Parser)]
#[command(name = "latact", version, about = "Latent action-chunk codec, continuity and execution benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config; omitted or empty means all defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed and the codec init seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long)]
    pub out: PathBuf,
    /// Trained model; overrides `model_path` in the config.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the demonstration and held-out corpora as CSV.
    Gen(CommonArgs),
    /// Train the codec on the demonstration corpus.
    Train(CommonArgs),
    /// Per-axis reconstruction error on the held-out corpus.
    EvalRecon(CommonArgs),
    /// Deviation and smoothness of emulated policies.
    EvalPolicy(CommonArgs),
    /// Overlap difference and boundary gap of chunk-switching strategies.
    EvalContinuity(CommonArgs),
    /// Closed-loop execution with asynchronous inference.
    Simulate(CommonArgs),
    /// Sweep the temporal compression factor.
    AblateF(CommonArgs),
    /// Finite-difference check of the codec gradients.
    Gradcheck(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::EvalRecon(_) => "eval-recon",
            Command::EvalPolicy(_) => "eval-policy",
            Command::EvalContinuity(_) => "eval-continuity",
            Command::Simulate(_) => "simulate",
            Command::AblateF(_) => "ablate-f",
            Command::Gradcheck(_) => "gradcheck",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Gen(a)
            | Command::Train(a)
            | Command::EvalRecon(a)
            | Command::EvalPolicy(a)
            | Command::EvalContinuity(a)
            | Command::Simulate(a)
            | Command::AblateF(a)
            | Command::Gradcheck(a) => a,
        }
    }
}

/// Config file plus command-line overrides, validated.
pub fn resolve_config(args: &CommonArgs) -> CliResult<BenchConfig> {
    let mut config = match &args.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.vae.seed = seed;
    }
    if let Some(m) = &args.model {
        config.model_path = Some(m.clone());
    }
    config.output_dir = Some(args.out.clone());
    config.validate()?;
    Ok(config)
}

fn load_model(config: &BenchConfig, manifest: &mut ManifestBuilder) -> CliResult<Option<VaeModel>> {
    let Some(path) = &config.model_path else { return Ok(None) };
    let model = codec::load_model(path).map_err(|e| CliError::Config(format!("model {}: {e}", path.display())))?;
    let (got, want) = (model.config(), &config.vae);
    if got.horizon != want.horizon || got.channels != want.channels {
        return config_err(format!(
            "model {} is for {}x{} chunks, config needs {}x{}",
            path.display(),
            got.horizon,
            got.channels,
            want.horizon,
            want.channels
        ));
    }
    manifest.input("model", path)?;
    Ok(Some(model))
}

fn require_model(config: &BenchConfig, manifest: &mut ManifestBuilder, what: &str) -> CliResult<VaeModel> {
    match load_model(config, manifest)? {
        Some(m) => Ok(m),
        None => config_err(format!("{what} needs a trained model: pass --model or set model_path")),
    }
}

fn model_for_protocol(config: &BenchConfig, manifest: &mut ManifestBuilder, protocol: Protocol) -> CliResult<Option<VaeModel>> {
    let needed: Vec<&str> = config.evaluations_for(protocol).iter().filter(|e| e.needs_model()).map(|e| e.name.as_str()).collect();
    let model = load_model(config, manifest)?;
    if model.is_none() && !needed.is_empty() {
        return config_err(format!("evaluations {needed:?} need a trained model: pass --model or set model_path"));
    }
    Ok(model)
}

fn write_file(path: &Path, bytes: &[u8], manifest: &mut ManifestBuilder) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))?;
    manifest.output(path.to_path_buf());
    Ok(())
}

fn emit(table: &Table, out: &Path, stem: &str, manifest: &mut ManifestBuilder) -> CliResult<bool> {
    let (paths, complete) = emit_tables(table, out, stem)?;
    paths.into_iter().for_each(|p| manifest.output(p));
    Ok(complete)
}

fn partial(table: &Table) -> CliError {
    if table.rows.is_empty() {
        return CliError::Partial(format!("{} table has no evaluations", table.name));
    }
    let failed: Vec<String> = table
        .rows
        .iter()
        .filter(|r| r.error.is_some() || r.cells.iter().any(|c| c.absent))
        .map(|r| match &r.error {
            Some(e) => format!("{}: {e}", r.name),
            None => format!("{}: missing values", r.name),
        })
        .collect();
    CliError::Partial(format!("{} table has ABSENT cells ({})", table.name, failed.join("; ")))
}

fn print_table(table: &Table, stdout: &mut impl Write) {
    for row in &table.rows {
        let cells: Vec<String> = table
            .columns
            .iter()
            .zip(&row.cells)
            .map(|(c, cell)| match cell.mean {
                Some(m) if !cell.absent => format!("{c}={m:.4}"),
                _ => format!("{c}=ABSENT"),
            })
            .collect();
        let _ = writeln!(stdout, "{} {}", row.name, cells.join(" "));
    }
}

/// Runs one subcommand. Files are written under `--out` only; the manifest
/// is written even when a gate fails.
pub fn execute(command: &Command, stdout: &mut impl Write) -> CliResult<Manifest> {
    let args = command.args();
    let config = resolve_config(args)?;
    let out = args.out.as_path();
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut manifest = ManifestBuilder::new(command.name(), &config);
    let outcome = run(command, &config, out, &mut manifest, stdout);
    let complete = match &outcome {
        Ok(()) => true,
        Err(CliError::Gate(_) | CliError::Partial(_)) => false,
        Err(_) => return Err(outcome.unwrap_err()),
    };
    let written = manifest.write(out, complete)?;
    outcome.map(|()| written)
}

fn run(command: &Command, config: &BenchConfig, out: &Path, manifest: &mut ManifestBuilder, stdout: &mut impl Write) -> CliResult<()> {
    match command {
        Command::Gen(_) => {
            for (name, specs) in [("corpus", &config.corpus), ("eval_corpus", &config.eval_corpus)] {
                let dir = out.join(name);
                let m = export_corpus(specs, &dir)?;
                manifest.output(dir.join(latact::synth::CORPUS_MANIFEST_FILE));
                for e in &m.entries {
                    manifest.output(dir.join(&e.path));
                }
                let _ = writeln!(stdout, "{name}: {} trajectories", m.entries.len());
            }
            Ok(())
        }
        Command::Train(_) => {
            let model = protocols::train_model(config, &config.vae)?;
            let path = out.join("model.json");
            let mut bytes = Vec::new();
            codec::write_model(&mut bytes, &model)?;
            write_file(&path, &bytes, manifest)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["epoch", "total", "recon", "kl", "lr"])?;
            for e in &model.train_meta().curve {
                w.write_record([e.epoch.to_string(), e.total.to_string(), e.recon.to_string(), e.kl.to_string(), e.lr.to_string()])?;
            }
            let curve = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
            write_file(&out.join("train_curve.csv"), &curve, manifest)?;
            let last = model.train_meta().curve.last().map(|e| e.recon).unwrap_or(f64::NAN);
            let _ = writeln!(stdout, "trained {} epochs, final recon loss {last:.6}", model.train_meta().epochs);
            Ok(())
        }
        Command::EvalRecon(_) => {
            let model = require_model(config, manifest, "eval-recon")?;
            let table = protocols::recon_table(config, &model)?;
            let complete = emit(&table, out, "recon", manifest)?;
            if !complete {
                return Err(partial(&table));
            }
            let names = model.profile().channel_names().to_vec();
            let pos = model.profile().position_indices().to_vec();
            let mut failed = Vec::new();
            for &c in &pos {
                let col = format!("deviation_{}", names[c]);
                let mae = table.mean("recon", &col).unwrap_or(f64::NAN);
                let _ = writeln!(stdout, "{col} {mae:.4} mm");
                if !(mae <= config.recon_gate_mm) {
                    failed.push(format!("{col}={mae:.4}"));
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Gate(format!("reconstruction above {} mm: {}", config.recon_gate_mm, failed.join(", "))))
            }
        }
        Command::EvalPolicy(_) => {
            let model = model_for_protocol(config, manifest, Protocol::Policy)?;
            let table = protocols::policy_table(config, model.as_ref())?;
            finish_table(&table, out, "policy", manifest, stdout)
        }
        Command::EvalContinuity(_) => {
            let model = model_for_protocol(config, manifest, Protocol::Continuity)?;
            let table = protocols::continuity_table(config, model.as_ref())?;
            finish_table(&table, out, "continuity", manifest, stdout)
        }
        Command::Simulate(_) => {
            let model = model_for_protocol(config, manifest, Protocol::Simulate)?;
            let (table, traces) = protocols::simulate_table(config, model.as_ref())?;
            for (name, trace) in &traces {
                let mut bytes = Vec::new();
                sim::write_trace_csv(&mut bytes, trace)?;
                write_file(&out.join("traces").join(format!("{name}.csv")), &bytes, manifest)?;
            }
            let breakdown = sim::latency_breakdown(&config.sim, 1000, false, None)?;
            let mut bytes = serde_json::to_vec_pretty(&breakdown)?;
            bytes.push(b'\n');
            write_file(&out.join("latency.json"), &bytes, manifest)?;
            finish_table(&table, out, "simulate", manifest, stdout)
        }
        Command::AblateF(_) => {
            let given = load_model(config, manifest)?;
            let mut models = Vec::new();
            for &f in &config.ablation.factors {
                let vae = protocols::vae_for(config, f);
                let model = match &given {
                    Some(m) if protocols::model_matches(m, &vae, config) => m.clone(),
                    _ => protocols::train_model(config, &vae)?,
                };
                let mut bytes = Vec::new();
                codec::write_model(&mut bytes, &model)?;
                write_file(&out.join("ablation").join(format!("model_f{f}.json")), &bytes, manifest)?;
                models.push((f, model));
            }
            let table = protocols::ablation_table(config, &models)?;
            finish_table(&table, out, "ablation", manifest, stdout)
        }
        Command::Gradcheck(_) => {
            let (table, reports) = protocols::gradcheck(config)?;
            let complete = emit(&table, out, "gradcheck", manifest)?;
            if !complete {
                return Err(partial(&table));
            }
            let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
            let _ = writeln!(stdout, "max relative error {worst:.3e} over {} seeds", reports.len());
            let tol = config.gradcheck.tolerance;
            if worst <= tol {
                Ok(())
            } else {
                Err(CliError::Gate(format!("max relative error {worst:.3e} exceeds {tol:e}")))
            }
        }
    }
}

fn finish_table(table: &Table, out: &Path, stem: &str, manifest: &mut ManifestBuilder, stdout: &mut impl Write) -> CliResult<()> {
    let complete = emit(table, out, stem, manifest)?;
    print_table(table, stdout);
    if complete {
        Ok(())
    } else {
        Err(partial(table))
    }
}
