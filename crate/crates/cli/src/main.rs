use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stc_cli::codec_tool;
use stc_cli::config::{ModelChoice, RunConfig};
use stc_cli::congruence::{congruence_alpha, BatchMode};
use stc_cli::{exit_code, run_training, split_table};
use stc_core::data::load_idx_dir;
use stc_core::Result;

#[derive(Parser)]
#[command(name = "stcfl", version, about = "Federated learning with sparse ternary compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a federated training experiment and print evaluation rows as CSV.
    Train {
        config: PathBuf,
        /// Override a config value, e.g. `--set seed=3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append a wall_seconds column.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Print how a config splits the training data across clients.
    Split {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate gradient sign congruence at several batch sizes.
    Congruence {
        /// Directory holding train-images-idx3-ubyte and train-labels-idx1-ubyte.
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "logreg")]
        model: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256")]
        batch_sizes: Vec<usize>,
        /// iid or single_class.
        #[arg(long, default_value = "iid")]
        mode: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Encode, decode or inspect STC1 files.
    Codec {
        #[command(subcommand)]
        action: CodecAction,
    },
}

#[derive(Subcommand)]
enum CodecAction {
    /// Compress a raw little-endian f32 tensor.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Fraction of entries kept.
        #[arg(long)]
        p: f64,
    },
    /// Expand an STC1 file into a raw little-endian f32 tensor.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the header fields and sizes of an STC1 file.
    Inspect { file: PathBuf },
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    for o in overrides {
        cfg.assign(o)?;
    }
    Ok(cfg)
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            overrides,
            out,
            wall_clock,
        } => {
            let cfg = load_config(&config, &overrides)?;
            // validate before touching the output file
            cfg.fed_config()?;
            let mut w = output(out.as_deref())?;
            run_training(&cfg, &mut w, wall_clock)?;
            w.flush()?;
        }
        Command::Split { config, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let table = split_table(&cfg)?;
            let mut w = output(out.as_deref())?;
            w.write_all(table.as_bytes())?;
            w.flush()?;
        }
        Command::Congruence {
            data_dir,
            model,
            batch_sizes,
            mode,
            trials,
            seed,
        } => {
            let mode: BatchMode = mode.parse()?;
            let model: ModelChoice = model.parse()?;
            let train = load_idx_dir(&data_dir, "train")?;
            let spec = model.spec(train.dim(), train.num_classes());
            let params = spec.init_params(seed);
            let mut w = io::stdout().lock();
            writeln!(w, "mode,k,alpha")?;
            for k in batch_sizes {
                let a = congruence_alpha(&params, &spec, &train, k, mode, trials, seed)?;
                let name = if mode == BatchMode::Iid { "iid" } else { "single_class" };
                writeln!(w, "{name},{k},{a:.6}")?;
            }
        }
        Command::Codec { action } => match action {
            CodecAction::Encode { input, output, p } => {
                let e = codec_tool::encode_file(&input, &output, p)?;
                eprintln!("wrote {} nonzeros of {} to {}", e.count, e.len, output.display());
            }
            CodecAction::Decode { input, output } => {
                codec_tool::decode_file(&input, &output)?;
            }
            CodecAction::Inspect { file } => {
                println!("{}", codec_tool::inspect(&file)?);
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
