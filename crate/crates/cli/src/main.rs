use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hercules_core::dump;
use hercules_core::fuzz::{crash_image, replay};
use hercules_core::report::{emit_comparisons, sniff};
use hercules_core::{
    compare_designs, crash_fuzz, emit, fuzz_spec, load_config_over, parse, run_sweep, run_workload_image, Design,
    Format, SimConfig, SweepAxis, WorkloadKind, WorkloadSpec,
};

#[derive(Parser)]
#[command(name = "hercules-sim", version, about = "Simulate hardware transaction logging on eADR-backed persistent memory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML config; missing keys take the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, e.g. `--set cache_levels.2.transtag_ratio=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Json, global = true)]
    format: OutFormat,
    #[arg(long, default_value_t = 1, global = true)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long)]
    workload: WorkloadKind,
    #[arg(long, default_value_t = 10_000)]
    ops: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Elements in the initial image (default depends on the workload).
    #[arg(long)]
    initial: Option<u64>,
    /// Lines per transaction for `huge_tx`.
    #[arg(long)]
    lines: Option<u64>,
}

impl WorkloadArgs {
    fn spec(&self, seed: u64) -> WorkloadSpec {
        let mut s = WorkloadSpec::new(self.workload, self.ops, seed);
        s.threads = self.threads;
        if let Some(n) = self.initial {
            s.initial = n;
        }
        if let Some(n) = self.lines {
            s.huge_tx_lines = n;
        } else if self.workload == WorkloadKind::HugeTx {
            s.huge_tx_lines = 1024;
        }
        s
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one workload under one design.
    Run {
        #[command(flatten)]
        w: WorkloadArgs,
        #[arg(long)]
        design: Design,
        /// Also write the pmem image left after the clean power-off.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run a workload at each point of one configuration axis.
    Sweep {
        #[command(flatten)]
        w: WorkloadArgs,
        /// Designs to run, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = Design::ALL.to_vec())]
        design: Vec<Design>,
        #[arg(long)]
        axis: SweepAxis,
        /// Axis values, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        points: Vec<f64>,
    },
    /// Inject crashes at random events and check all-or-nothing recovery.
    /// Uses the small stress machine unless --config is given. Exits 2 on
    /// violations.
    Fuzz {
        #[arg(long)]
        workload: WorkloadKind,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 5000)]
        ops: u64,
        /// Re-run a single crash point reported by an earlier fuzz run.
        #[arg(long)]
        replay_event: Option<u64>,
        /// With --replay-event: write the crashed, unrecovered pmem image.
        #[arg(long, requires = "replay_event")]
        dump: Option<PathBuf>,
    },
    /// Normalize result files against a baseline design.
    Compare {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, default_value = "OPT")]
        baseline: String,
    },
    /// Summarize a binary pmem dump.
    DumpInspect { path: PathBuf },
}

fn load_config(c: &Common, base: SimConfig) -> Result<SimConfig> {
    let text = match &c.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None if c.sets.is_empty() => return Ok(base),
        None => String::new(),
    };
    Ok(load_config_over(&base, &text, &c.sets)?)
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    let out = c.out.as_deref();
    match cli.cmd {
        Cmd::Run { w, design, dump: dump_path } => {
            let cfg = load_config(c, SimConfig::default())?;
            let (stats, pmem) = run_workload_image(&w.spec(c.seed), design, &cfg)?;
            if let Some(p) = dump_path {
                dump::write_dump(&p, &pmem).with_context(|| format!("writing {}", p.display()))?;
            }
            write_out(out, &emit(&[stats], c.format.into())?)?;
        }
        Cmd::Sweep { w, design, axis, points } => {
            let cfg = load_config(c, SimConfig::default())?;
            let spec = w.spec(c.seed);
            let mut runs = Vec::new();
            for d in design {
                runs.extend(run_sweep(&spec, d, &cfg, axis, &points)?);
            }
            write_out(out, &emit(&runs, c.format.into())?)?;
        }
        Cmd::Fuzz { workload, trials, ops, replay_event, dump: dump_path } => {
            let cfg = load_config(c, SimConfig::stress())?;
            let spec = fuzz_spec(workload, ops, c.seed);
            if let Some(e) = replay_event {
                if let Some(p) = dump_path {
                    dump::write_dump(&p, &crash_image(&spec, &cfg, e)?)
                        .with_context(|| format!("writing {}", p.display()))?;
                }
                return Ok(match replay(&spec, &cfg, e)? {
                    None => {
                        eprintln!("event {e}: recovered state matches the oracle");
                        ExitCode::SUCCESS
                    }
                    Some(v) => {
                        eprintln!("event {e}: violation at op {}: {}", v.op_index, v.detail);
                        ExitCode::from(2)
                    }
                });
            }
            let rep = crash_fuzz(&spec, &cfg, trials, c.seed)?;
            write_out(out, &(serde_json::to_string_pretty(&rep)? + "\n"))?;
            eprintln!(
                "{}: {} trials over {} events, {} after commit, {} violations",
                rep.workload,
                rep.trials,
                rep.events,
                rep.landed,
                rep.violations.len()
            );
            for v in &rep.violations {
                eprintln!(
                    "violation: op {} event {} ({:?}): {}\n  replay: hercules-sim fuzz --workload {} --ops {ops} --seed {} --replay-event {}",
                    v.op_index, v.event_index, v.event, v.detail, v.workload, v.seed, v.event_index
                );
            }
            if !rep.passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Compare { results, baseline } => {
            let mut runs = Vec::new();
            for p in &results {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                runs.extend(parse(&text, sniff(&text)).with_context(|| format!("parsing {}", p.display()))?);
            }
            let rows = compare_designs(&runs, &baseline)?;
            write_out(out, &emit_comparisons(&rows, c.format.into())?)?;
        }
        Cmd::DumpInspect { path } => {
            if matches!(c.format, OutFormat::Csv) {
                bail!("dump-inspect only writes JSON");
            }
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let s = dump::summarize(&bytes)?;
            write_out(out, &(serde_json::to_string_pretty(&s)? + "\n"))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
