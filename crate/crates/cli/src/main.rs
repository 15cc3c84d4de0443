use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ppa_cli::check::{self, CheckGrid};
use ppa_cli::config::SweepConfig;
use ppa_cli::render::{self, RenderFormat, RenderSpec};
use ppa_cli::{parse_list, sweep, train_sweep, write_file, CliError, Result};
use ppa_core::{MaskConfig, PatternKind};

const DEFAULT_P_GRID: &str = "0,0.125,0.25,0.375,0.5,0.625,0.75,0.875,1";

#[derive(Parser)]
#[command(
    name = "ppa",
    version,
    about = "Power-law stride attention masks: render, count, verify, train"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fixed,
    Dynamic,
    Incremental,
    Ppa,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ascii,
    Pgm,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a mask as ASCII or PGM.
    Render {
        #[arg(long, value_enum, default_value = "ppa")]
        kind: Kind,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 8)]
        window: usize,
        #[arg(long, default_value_t = 64)]
        length: usize,
        /// Stride for `--kind fixed`.
        #[arg(long, default_value_t = 4)]
        stride: usize,
        #[arg(long, value_enum, default_value = "ascii")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attended-entry totals and fitted scaling exponents as CSV.
    SweepCounts {
        #[arg(long, default_value = DEFAULT_P_GRID)]
        p_grid: String,
        /// Comma-separated sequence lengths.
        #[arg(long, default_value = "1024,4096,16384,65536")]
        length: String,
        #[arg(long, default_value_t = 64)]
        window: usize,
        /// Leave wall_time_ms blank so output is reproducible byte for byte.
        #[arg(long)]
        no_timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare dense and sparse attention and check gradients.
    CheckKernels {
        #[arg(long, default_value = DEFAULT_P_GRID)]
        p_grid: String,
        #[arg(long, default_value = "16,128,512")]
        length: String,
        #[arg(long, default_value = "4,16,64")]
        dim: String,
        /// First seed; `--seeds` consecutive seeds are checked.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Seeds for the finite-difference gradient checks.
        #[arg(long, default_value_t = 10)]
        grad_seeds: u64,
        #[arg(long, default_value_t = 8)]
        window: usize,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train one model per p on the recall task.
    TrainSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config file's grid.
        #[arg(long)]
        p_grid: Option<String>,
        /// Overrides the config file's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Render {
            kind,
            p,
            window,
            length,
            stride,
            format,
            out,
        } => {
            let kind = match kind {
                Kind::Fixed => PatternKind::FixedStride(stride),
                Kind::Dynamic => PatternKind::DynamicStride,
                Kind::Incremental => PatternKind::IncrementalStride,
                Kind::Ppa => PatternKind::IncrementalPlusWindow,
            };
            let format = match format {
                Format::Ascii => RenderFormat::Ascii,
                Format::Pgm => RenderFormat::Pgm,
            };
            let cfg = MaskConfig::new(p, window).map_err(|e| CliError::Usage(e.to_string()))?;
            render::cmd_render(
                &RenderSpec {
                    kind,
                    len: length,
                    cfg,
                    format,
                },
                &out,
            )
        }
        Command::SweepCounts {
            p_grid,
            length,
            window,
            no_timing,
            out,
        } => {
            let ps = parse_list(&p_grid, "p")?;
            let lengths = parse_list(&length, "length")?;
            let rows = sweep::sweep_counts(&ps, &lengths, window, !no_timing)?;
            write_file(&out, sweep::to_csv(&rows).as_bytes())
        }
        Command::CheckKernels {
            p_grid,
            length,
            dim,
            seed,
            seeds,
            grad_seeds,
            window,
            out,
            inject_fault,
        } => {
            let grid = CheckGrid {
                lengths: parse_list(&length, "length")?,
                dims: parse_list(&dim, "dim")?,
                p_grid: parse_list(&p_grid, "p")?,
                seeds: (seed..seed + seeds).collect(),
                grad_seeds: (seed..seed + grad_seeds).collect(),
                window,
                inject_fault,
            };
            let report = check::check_kernels(&grid)?;
            let text = report.render();
            print!("{text}");
            if let Some(out) = out {
                write_file(&out, text.as_bytes())?;
            }
            check::verdict(&report)
        }
        Command::TrainSweep {
            config,
            p_grid,
            seed,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => SweepConfig::load(&path)?,
                None => SweepConfig::default(),
            };
            if let Some(grid) = p_grid {
                cfg.p_grid = parse_list(&grid, "p")?;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let rows = train_sweep::train_sweep(&cfg)?;
            write_file(&out, train_sweep::to_csv(&rows).as_bytes())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ppa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
