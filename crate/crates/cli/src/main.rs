use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vidsum_core::ablation::{parse_settings, render_table, run_ablation};
use vidsum_core::config::PipelineConfig;
use vidsum_core::manifest::StageId;
use vidsum_core::pipeline::{evaluate_run, read_accounting, Pipeline};
use vidsum_core::synthetic::{generate, SyntheticSpec};

#[derive(Parser)]
#[command(name = "vidsum", version, about = "Keyframe selection and hierarchical video summarization")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML). VIDSUM_<SECTION>_<KEY> variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory. For `ablate`, the parent of one directory per setting.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Named backend profile from the config's [profiles] table.
    #[arg(long, global = true)]
    backend_profile: Option<String>,
    #[arg(long, global = true)]
    skip_stage1: bool,
    #[arg(long, global = true)]
    skip_stage2: bool,
    /// Summarize from frames alone, ignoring any transcript.
    #[arg(long, global = true)]
    video_only: bool,
    /// Summarize every surviving frame on its own instead of in windows.
    #[arg(long, global = true)]
    no_grouping: bool,
}

#[derive(Args)]
struct Input {
    /// Video file or directory of frame images.
    #[arg(long)]
    video: PathBuf,
    /// Transcript (.srt, .vtt or plain text).
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract frames and register the transcript.
    Ingest(Input),
    /// Change points, frame-difference filter and adaptive sampling.
    Stage1,
    /// Label generation, validation and anchoring.
    Stage2,
    /// Windowing, captioning and the merge tree.
    Stage3,
    /// Per-frame importance scores.
    Score,
    /// Score a finished run against the configured references and annotations.
    Eval,
    /// Run every stage that is not already complete.
    Run(Input),
    /// Run one pipeline per setting and tabulate them.
    Ablate {
        #[command(flatten)]
        input: Input,
        /// Settings such as video-only, no-stage2, stage2:0.7, stage1:30,
        /// adaptive:10, delta:0.3 or standard. Commas separate several.
        #[arg(required = true, num_args = 1..)]
        settings: Vec<String>,
    },
    /// Write a synthetic phase-structured video with mock backends and a config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 600)]
        frames: usize,
        #[arg(long, default_value_t = 20)]
        phases: usize,
        #[arg(long, default_value_t = 64)]
        side: u32,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        alias_noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

impl Global {
    fn config(&self) -> Result<PipelineConfig> {
        let path = self.config.as_deref().context("--config is required for this command")?;
        let mut cfg = PipelineConfig::load(path, self.backend_profile.as_deref(), std::env::vars())
            .with_context(|| format!("loading {}", path.display()))?;
        cfg.run.skip_stage1 |= self.skip_stage1;
        cfg.run.skip_stage2 |= self.skip_stage2;
        cfg.run.video_only |= self.video_only;
        cfg.run.no_grouping |= self.no_grouping;
        Ok(cfg)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline::open(&self.run_dir, self.config()?)?)
    }
}

fn print_accounting(run_dir: &Path) -> Result<()> {
    let a = read_accounting(run_dir)?;
    println!(
        "frames: extracted {} filtered {} selected {} anchored {} windows {} summarized {}",
        a.extracted, a.filtered, a.selected, a.anchored, a.windows, a.representative_calls
    );
    Ok(())
}

fn stage(global: &Global, stage: StageId) -> Result<()> {
    global.pipeline()?.run_stage(stage)?;
    println!("{stage} complete in {}", global.run_dir.display());
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest(input) => {
            g.pipeline()?.ingest(&input.video, input.transcript.as_deref())?;
            println!("ingest complete in {}", g.run_dir.display());
        }
        Command::Stage1 => stage(g, StageId::Stage1)?,
        Command::Stage2 => stage(g, StageId::Stage2)?,
        Command::Stage3 => stage(g, StageId::Stage3)?,
        Command::Score => stage(g, StageId::Score)?,
        Command::Eval => {
            let report = evaluate_run(&g.run_dir, &g.config()?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Run(input) => {
            g.pipeline()?.run(&input.video, input.transcript.as_deref())?;
            print_accounting(&g.run_dir)?;
            println!("summary: {}", g.run_dir.join("summary.txt").display());
        }
        Command::Ablate { input, settings } => {
            let settings = parse_settings(&settings)?;
            if settings.is_empty() {
                bail!("ablate needs at least one setting");
            }
            let report = run_ablation(&g.config()?, &settings, &input.video, input.transcript.as_deref(), &g.run_dir)?;
            print!("{}", render_table(&report));
        }
        Command::Synth {
            out,
            frames,
            phases,
            side,
            noise,
            alias_noise,
            seed,
        } => {
            let spec = SyntheticSpec {
                frames,
                phases,
                side,
                noise,
                seed,
                alias_noise,
            };
            let v = generate(&spec, &out)?;
            println!("video: {}", v.frames_dir.display());
            println!("transcript: {}", v.transcript.display());
            println!("reference: {}", v.reference.display());
            println!("annotations: {}", v.annotations.display());
            println!("config: {}", v.config.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = main_inner(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
