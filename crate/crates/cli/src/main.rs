use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

mod exec;
mod output;
mod plot;
mod presets;
mod spec;

use output::OutDir;
use presets::Preset;
use spec::{parse_seed_arg, parse_spec, spec_err, ExperimentSpec, SpecError};

/// Routing experiments for a central queue with heterogeneous servers.
#[derive(Parser)]
#[command(name = "hetroute", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Output directory (overrides the spec's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed or comma-separated seed list.
    #[arg(long)]
    seed: Option<String>,
    /// Evaluation horizon, or training horizon for `train`.
    #[arg(long)]
    horizon: Option<u64>,
}

#[derive(Args)]
struct SpecArgs {
    /// JSON spec; `kind` may be omitted.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Relative value iteration: values, thresholds, linear fit.
    Rvi(SpecArgs),
    /// Actor-critic training, one run per seed (kind train or train-discounted).
    Train(SpecArgs),
    /// Monte Carlo evaluation of one policy.
    Simulate(SpecArgs),
    /// Monte Carlo comparison of several policies.
    Compare(SpecArgs),
    /// Two-server improvement-step checks.
    Verify2(SpecArgs),
    /// Train and compare across an axis of systems.
    Sweep(SpecArgs),
    /// Run any spec file, or a built-in preset.
    Run {
        #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render CSV columns as an SVG line chart.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// Column for the horizontal axis.
        #[arg(long)]
        x: String,
        /// Comma-separated columns to draw.
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<String>,
        /// Column splitting rows into separate series.
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<SpecError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn thread_pool() -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("HETROUTE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| spec_err(format!("HETROUTE_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().context("starting worker pool")
}

fn real_main(cli: Cli) -> anyhow::Result<()> {
    let pool = thread_pool()?;
    pool.install(|| match cli.command {
        Command::Rvi(a) => run_file(&a.config, Some(&["rvi"]), a.overrides),
        Command::Train(a) => run_file(&a.config, Some(&["train", "train-discounted"]), a.overrides),
        Command::Simulate(a) => run_file(&a.config, Some(&["simulate"]), a.overrides),
        Command::Compare(a) => run_file(&a.config, Some(&["compare"]), a.overrides),
        Command::Verify2(a) => run_file(&a.config, Some(&["verify2"]), a.overrides),
        Command::Sweep(a) => run_file(&a.config, Some(&["sweep"]), a.overrides),
        Command::Run {
            spec: Some(path),
            overrides,
            ..
        } => run_file(&path, None, overrides),
        Command::Run {
            preset: Some(p), overrides, ..
        } => run_preset(p, overrides),
        Command::Run { .. } => Err(spec_err("give --spec or --preset")),
        Command::Plot {
            input,
            x,
            y,
            group,
            title,
            out,
        } => {
            let series = plot::read_series(&input, &x, &y, group.as_deref())?;
            let svg = plot::render(&series, &x, &y.join(", "), title.as_deref().unwrap_or(""))?;
            std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))
        }
    })
}

fn run_file(path: &Path, kind: Option<&[&str]>, o: Overrides) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| spec_err(format!("cannot read {}: {e}", path.display())))?;
    let mut spec = parse_spec(&text, kind)?;
    apply_overrides(&mut spec, o)?;
    spec.validate()?;
    spec.resolve();
    let dir = spec
        .out()
        .cloned()
        .unwrap_or_else(|| PathBuf::from("hetroute-out").join(spec.kind()));
    let out = OutDir::create(dir)?;
    out.manifest(spec.kind(), &spec)?;
    exec::run(&spec, &out)?;
    eprintln!("{}: wrote {}", spec.kind(), out.path.display());
    Ok(())
}

fn apply_overrides(spec: &mut ExperimentSpec, o: Overrides) -> anyhow::Result<()> {
    if let Some(out) = o.out {
        spec.set_out(out);
    }
    if let Some(s) = o.seed {
        if !spec.set_seeds(parse_seed_arg(&s)?) {
            return Err(spec_err(format!("kind {} takes no seeds", spec.kind())));
        }
    }
    if let Some(h) = o.horizon {
        if !spec.set_horizon(h) {
            return Err(spec_err(format!("kind {} takes no horizon", spec.kind())));
        }
    }
    Ok(())
}

fn run_preset(p: Preset, o: Overrides) -> anyhow::Result<()> {
    if o.seed.is_some() || o.horizon.is_some() {
        return Err(spec_err("presets are exact and take no seed or horizon"));
    }
    let dir = o.out.unwrap_or_else(|| PathBuf::from("hetroute-out").join(p.as_str()));
    let out = OutDir::create(dir)?;
    out.manifest(p.as_str(), &presets::describe(p))?;
    presets::run(p, &out)?;
    eprintln!("{}: wrote {}", p.as_str(), out.path.display());
    Ok(())
}
