use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gags_core::pipeline::*;
use gags_core::Result;

#[derive(Parser)]
#[command(name = "gags", version, about = "Granularity-aware feature fields: scene, prompts, distillation, query")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config for the command.
    #[arg(long, env = "GAGS_CONFIG")]
    config: PathBuf,
    /// Output directory, replacing `out_dir`.
    #[arg(long, env = "GAGS_OUT")]
    out: Option<PathBuf>,
    /// Seed, replacing `seed` (stochastic commands only).
    #[arg(long, env = "GAGS_SEED")]
    seed: Option<u64>,
    /// Worker threads, replacing `threads`.
    #[arg(long, env = "GAGS_THREADS")]
    threads: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle.
    GenScene(Common),
    /// Render feature, depth, transmittance and color images.
    Render(Common),
    /// Plan prompt points per view.
    Prompt(Common),
    /// Produce masks and features with the oracle, or check ingested ones.
    Segment(Common),
    /// Train the feature field and decoder.
    Distill(Common),
    /// Run text queries over rendered views.
    Query(Common),
    /// Score query results against ground truth.
    Eval(Common),
}

fn run(cli: Cli) -> Result<()> {
    let done = |m: PathBuf| {
        println!("wrote {}", m.display());
        Ok(())
    };
    match cli.command {
        Command::GenScene(c) => done(cmd_gen_scene(&load_config(&c.config, &c.overrides())?)?),
        Command::Render(c) => done(cmd_render(&load_config(&c.config, &c.overrides())?)?),
        Command::Prompt(c) => done(cmd_prompt(&load_config(&c.config, &c.overrides())?)?),
        Command::Segment(c) => done(cmd_segment(&load_config(&c.config, &c.overrides())?)?),
        Command::Distill(c) => done(cmd_distill(&load_config(&c.config, &c.overrides())?)?),
        Command::Query(c) => done(cmd_query(&load_config(&c.config, &c.overrides())?)?),
        Command::Eval(c) => {
            let s = cmd_eval(&load_config(&c.config, &c.overrides())?)?;
            print!("{}", s.table);
            done(s.manifest)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GAGS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
