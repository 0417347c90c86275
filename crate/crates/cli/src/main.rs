use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dice_cli::commands;
use dice_cli::config::{env_overrides, RunConfig};
use dice_cli::exit_code;
use dice_core::selector::Strategy;
use dice_core::Error;

/// Stepwise demonstration selection for tool-using agents.
///
/// Any config key can be overridden with a dotted flag, e.g.
/// `--selector.m 3`, or an environment variable such as `DICE_SELECTOR__M=3`.
/// Precedence: flags, then environment, then the config file, then defaults.
#[derive(Parser, Debug)]
#[command(name = "dice", version)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Shorthand for --selector.strategy.
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// Shorthand for --selector.m.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Shorthand for --runtime.max_steps.
    #[arg(long, global = true)]
    max_steps: Option<usize>,
    /// Shorthand for --runtime.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for --paths.pool.
    #[arg(long, global = true)]
    pool: Option<PathBuf>,
    /// Shorthand for --env.kind (synthetic, toywiki, shop).
    #[arg(long, global = true)]
    env: Option<String>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter a raw run log into a pool and warm its knowledge cache.
    BuildPool {
        #[arg(long)]
        runs: PathBuf,
    },
    /// Run one task; exits 0 on success and 1 on failure.
    Run {
        #[arg(long)]
        task: String,
        /// Trace file (default <out_dir>/traces/<task>.jsonl).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate strategies over the evaluation tasks.
    Eval {
        /// World file to evaluate on (sets env.world_path).
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Strategy comparison, relevance buckets, demo-count sweep and the
    /// low-quality pool test.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the selection for a context file ({"task", "history"}).
    Score {
        #[arg(long)]
        context: PathBuf,
    },
    /// Write a synthetic world, raw runs and labels to a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

type Overrides = Vec<(String, String)>;

/// Pulls `--section.key value` and `--section.key=value` pairs out of the
/// argument list.
fn split_dotted(args: Vec<String>) -> Result<(Vec<String>, Overrides), Error> {
    let mut rest = Vec::with_capacity(args.len());
    let mut dotted = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        match arg.strip_prefix("--").filter(|a| a.split('=').next().is_some_and(|k| k.contains('.'))) {
            Some(flag) => match flag.split_once('=') {
                Some((k, v)) => dotted.push((k.to_string(), v.to_string())),
                None => {
                    let v = it.next().ok_or_else(|| Error::Config(format!("--{flag} needs a value")))?;
                    dotted.push((flag.to_string(), v));
                }
            },
            None => rest.push(arg),
        }
    }
    Ok((rest, dotted))
}

fn list(strategies: &[Strategy]) -> String {
    format!("[{}]", strategies.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", "))
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn main() -> ExitCode {
    let (args, dotted) = match split_dotted(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli, dotted) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(cli: Cli, dotted: Overrides) -> Result<u8, Error> {
    let mut flags = Vec::new();
    if let Some(s) = cli.strategy {
        flags.push(("selector.strategy".to_string(), s.to_string()));
    }
    if let Some(m) = cli.m {
        flags.push(("selector.m".to_string(), m.to_string()));
    }
    if let Some(t) = cli.max_steps {
        flags.push(("runtime.max_steps".to_string(), t.to_string()));
    }
    if let Some(seed) = cli.seed {
        flags.push(("runtime.seed".to_string(), seed.to_string()));
    }
    if let Some(p) = &cli.pool {
        flags.push(("paths.pool".to_string(), quoted(&p.to_string_lossy())));
    }
    if let Some(e) = &cli.env {
        flags.push(("env.kind".to_string(), quoted(e)));
    }
    match &cli.command {
        Command::Eval { suite, strategies, out } => {
            if let Some(path) = suite {
                flags.push(("env.world_path".to_string(), quoted(&path.to_string_lossy())));
                if cli.env.is_none() {
                    flags.push(("env.kind".to_string(), quoted("toywiki")));
                }
            }
            if let Some(s) = strategies {
                flags.push(("eval.strategies".to_string(), list(s)));
            }
            if let Some(o) = out {
                flags.push(("paths.out_dir".to_string(), quoted(&o.to_string_lossy())));
            }
        }
        Command::Ablate { strategies, out } => {
            if let Some(s) = strategies {
                flags.push(("eval.strategies".to_string(), list(s)));
            }
            if let Some(o) = out {
                flags.push(("paths.out_dir".to_string(), quoted(&o.to_string_lossy())));
            }
        }
        _ => {}
    }
    flags.extend(dotted);
    let cfg = RunConfig::resolve(cli.config.as_deref(), &env_overrides(std::env::vars()), &flags)?;
    log::info!("config fingerprint {}", cfg.fingerprint());

    match cli.command {
        Command::BuildPool { runs } => {
            let r = commands::build_pool(&cfg, &runs)?;
            println!(
                "kept {} / {} ({} dropped, {} duplicates)",
                r.admission.kept,
                r.admission.total,
                r.admission.dropped(),
                r.admission.duplicates
            );
            println!("{} extraction calls ({} cached entries reused)", r.extraction_calls, r.reused);
            println!("pool written to {}", r.pool_path.display());
            Ok(0)
        }
        Command::Run { task, trace } => {
            let (result, path) = commands::run(&cfg, &task, trace.as_deref())?;
            println!(
                "{}: {} (score {}, {:?}, {} steps); trace at {}",
                result.task_id,
                if result.outcome.success { "success" } else { "failure" },
                result.outcome.score,
                result.termination,
                result.trace.len(),
                path.display()
            );
            if result.termination == dice_core::runtime::Termination::BackendError {
                return Ok(3);
            }
            Ok(if result.outcome.success { 0 } else { 1 })
        }
        Command::Eval { .. } => {
            let summary = commands::eval(&cfg, &cfg.paths.out_dir)?;
            for r in &summary.reports {
                println!(
                    "{:<14} {} = {:.3}  avg_score = {:.3}  (n = {})",
                    r.strategy.as_str(),
                    summary.metric,
                    r.em_or_sr,
                    r.avg_score,
                    r.n_tasks
                );
            }
            Ok(0)
        }
        Command::Ablate { .. } => {
            let summary = commands::ablate(&cfg, &cfg.paths.out_dir)?;
            for r in &summary.reports {
                println!("{:<14} {} = {:.3}", r.strategy.as_str(), summary.metric, r.em_or_sr);
            }
            println!("tables written to {}", cfg.paths.out_dir.display());
            Ok(0)
        }
        Command::Score { context } => {
            let report = commands::score(&cfg, &context)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = writeln!(std::io::stdout().lock(), "{json}");
            Ok(0)
        }
        Command::Synth { out } => {
            let n = commands::synth(&cfg, &out)?;
            println!("wrote world and {n} raw runs to {}", out.display());
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_flags_are_split_out() {
        let args = ["dice", "--selector.m", "3", "run", "--task", "t", "--env.seed=4"].map(String::from).to_vec();
        let (rest, dotted) = split_dotted(args).unwrap();
        assert_eq!(rest, ["dice", "run", "--task", "t"]);
        assert_eq!(dotted, vec![("selector.m".into(), "3".into()), ("env.seed".into(), "4".into())]);
        assert!(split_dotted(vec!["--selector.m".into()]).is_err());
    }
}
