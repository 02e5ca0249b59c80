use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jolimas::model::Mode;
use serde::Serialize;

mod run;

/// Specular highlight prediction pipeline: render, detect, reconstruct,
/// predict, evaluate, and the synthetic experiments.
#[derive(Debug, Parser)]
#[command(name = "jolimas", version)]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Render every view of a scene to 16-bit PGM.
    Render(Common),
    /// Detect the highlight in every view and export contours and ellipses.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Read `<view id>.pgm` from this directory instead of rendering.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Build a model from the reconstruction views of a scene.
    Reconstruct(Common),
    /// Predict the highlight of every view from a stored model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a stored model against detections on every view.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Plane-to-cylinder morph, model rebuilt at every curvature.
    Exp1(Common),
    /// Plane-to-cylinder morph, model built once on the plane.
    Exp2(Common),
    /// Ellipsoid orbit, model built on the leading frames.
    ExpEllipsoid(Common),
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Canonical,
    Dual,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Canonical => Mode::Canonical,
            ModeArg::Dual => Mode::DualBaseline,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
struct Overrides {
    /// Detection threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Sampling directions per highlight.
    #[arg(long)]
    n: Option<usize>,
    /// Warp march steps per highlight diameter.
    #[arg(long)]
    step: Option<f64>,
    /// Seed of the generated view placement.
    #[arg(long)]
    seed: Option<u64>,
}

/// What was asked for, echoed into reports.
#[derive(Debug, Serialize)]
struct RunConfig<'a> {
    command: &'static str,
    config: Option<&'a PathBuf>,
    out: &'a PathBuf,
    mode: Option<ModeArg>,
    overrides: &'a Overrides,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Render(_) => "render",
            Self::Detect { .. } => "detect",
            Self::Reconstruct(_) => "reconstruct",
            Self::Predict { .. } => "predict",
            Self::Evaluate { .. } => "evaluate",
            Self::Exp1(_) => "exp1",
            Self::Exp2(_) => "exp2",
            Self::ExpEllipsoid(_) => "exp-ellipsoid",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Self::Render(c) | Self::Reconstruct(c) | Self::Exp1(c) | Self::Exp2(c) | Self::ExpEllipsoid(c) => c,
            Self::Detect { common, .. } | Self::Predict { common, .. } | Self::Evaluate { common, .. } => common,
        }
    }

    fn run_config(&self) -> RunConfig<'_> {
        let c = self.common();
        RunConfig {
            command: self.name(),
            config: c.config.as_ref(),
            out: &c.out,
            mode: c.mode,
            overrides: &c.overrides,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run::dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(run::Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(run::Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
