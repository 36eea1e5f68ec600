use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

use fogsim::agent::{load_checkpoint, save_checkpoint, train, CheckpointMeta};
use fogsim::ledger::{Chain, LedgerConfig, Verdict};
use fogsim::metrics::{
    make_policy, run_experiment_with, ConfigError, ExperimentConfig, ExperimentError, ResultRow, ResultTable,
};
use fogsim::policies::PolicyKind;
use fogsim::run_episode;
use fogsim::schedulability::{admit, dbf, default_delta_max, load, max_load, test_points, StreamDemand};

#[derive(Parser)]
#[command(name = "fogsim", version, about = "Fog offloading simulator with a DQN agent and a PoW ledger")]
struct Cli {
    /// Overrides the evaluation seeds (run, eval) or the training seed (train).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for result files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (if needed) and evaluate every policy on every seed.
    Run {
        config: PathBuf,
        /// Use this checkpoint for the dqn policy instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the DQN and save its weights.
    Train {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evaluate one policy and export the ledger of each episode.
    Eval {
        config: PathBuf,
        #[arg(long)]
        policy: PolicyKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Offline analyses.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    /// Verify an exported ledger.
    Audit {
        chain: PathBuf,
        /// Experiment config whose ledger section supplies mining parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Analysis {
    /// Demand-bound table, peak load and sequential admission for `C,T,D` rows.
    Dbf {
        demand_file: PathBuf,
        #[arg(long)]
        delta_max: Option<f64>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => Failure::Config(c.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config, checkpoint } => cmd_run(cli, config, checkpoint.as_deref()),
        Command::Train { config, output } => cmd_train(cli, config, output),
        Command::Eval {
            config,
            policy,
            checkpoint,
        } => cmd_eval(cli, config, *policy, checkpoint.as_deref()),
        Command::Analyze {
            what: Analysis::Dbf { demand_file, delta_max },
        } => cmd_dbf(cli, demand_file, *delta_max),
        Command::Audit { chain, config } => cmd_audit(cli, chain, config.as_deref()),
    }
}

fn load_config(cli: &Cli, path: &Path, eval: bool) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| Failure::Config(anyhow!("{}: {e}", path.display())))?;
    if let Some(s) = cli.seed {
        if eval {
            cfg.seeds = vec![s];
        } else {
            cfg.training.seed = s;
        }
    }
    cfg.scenario()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))
        .map_err(Failure::Runtime)?;
    Ok(&cli.out_dir)
}

fn load_network(path: &Path, cfg: &ExperimentConfig, quiet: bool) -> Result<fogsim::agent::QNetwork, Failure> {
    let (net, meta) = load_checkpoint(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(Failure::Runtime)?;
    if !quiet && meta.config_digest != cfg.digest() {
        eprintln!("warning: checkpoint was trained under a different config");
    }
    Ok(net)
}

fn write_table(dir: &Path, stem: &str, table: &ResultTable, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let csv = dir.join(format!("{stem}.csv"));
    let f = fs::File::create(&csv).with_context(|| format!("creating {}", csv.display())).map_err(runtime)?;
    table.write_csv(BufWriter::new(f)).map_err(runtime)?;
    let json = dir.join(format!("{stem}.json"));
    let body = serde_json::to_string_pretty(&table.sidecar_json(cfg)).map_err(runtime)?;
    fs::write(&json, body).map_err(runtime)?;
    Ok(())
}

fn print_summary(table: &ResultTable) {
    println!("{:<12} {:>6} {:>10} {:>10} {:>10} {:>10}", "policy", "seeds", "sched", "latency", "incidents", "reward");
    let mut kinds: Vec<PolicyKind> = table.rows.iter().map(|r| r.policy).collect();
    kinds.dedup();
    for k in kinds {
        let rows: Vec<&ResultRow> = table.rows_for(k).collect();
        let n = rows.len() as f64;
        let avg = |f: fn(&ResultRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        println!(
            "{:<12} {:>6} {:>10.4} {:>10.4} {:>10.2} {:>10.4}",
            k.as_str(),
            rows.len(),
            avg(|r| r.metrics.sched_ratio),
            avg(|r| r.metrics.mean_latency),
            avg(|r| r.metrics.incidents as f64),
            avg(|r| r.metrics.mean_reward),
        );
    }
}

fn cmd_run(cli: &Cli, path: &Path, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(cli, path, true)?;
    let network = checkpoint.map(|p| load_network(p, &cfg, cli.quiet)).transpose()?;
    if !cli.quiet && network.is_none() && cfg.policies.contains(&PolicyKind::Dqn) {
        eprintln!("training dqn for {} episodes", cfg.training.episodes);
    }
    let table = run_experiment_with(&cfg, network)?;
    let dir = out_dir(cli)?;
    write_table(dir, "results", &table, &cfg)?;
    if let Some(t) = &table.training {
        let mut s = String::from("episode,mean_reward,sched_ratio\n");
        for p in &t.curve {
            s.push_str(&format!("{},{},{}\n", p.episode, p.mean_reward, p.sched_ratio));
        }
        fs::write(dir.join("training_curve.csv"), s).map_err(runtime)?;
    }
    if !cli.quiet {
        print_summary(&table);
        println!("wrote {}", dir.join("results.csv").display());
    }
    Ok(())
}

fn cmd_train(cli: &Cli, path: &Path, output: &Path) -> Result<(), Failure> {
    let cfg = load_config(cli, path, false)?;
    let scenario = cfg.scenario()?;
    cfg.training
        .validate()
        .map_err(|e| Failure::Config(anyhow!("training: {e}")))?;
    if !cli.quiet {
        eprintln!("training dqn for {} episodes", cfg.training.episodes);
    }
    let out = train(&scenario, &cfg.training).map_err(runtime)?;
    let meta = CheckpointMeta {
        seed: cfg.training.seed,
        config_digest: cfg.digest(),
    };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(runtime)?;
    }
    save_checkpoint(output, &out.network, &meta)
        .with_context(|| format!("writing {}", output.display()))
        .map_err(Failure::Runtime)?;
    if !cli.quiet {
        if let Some(last) = out.curve.last() {
            println!(
                "episode {}: mean reward {:.4}, schedulability {:.4}",
                last.episode, last.mean_reward, last.sched_ratio
            );
        }
        println!("{} gradient steps; wrote {}", out.grad_steps, output.display());
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, path: &Path, policy: PolicyKind, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let mut cfg = load_config(cli, path, true)?;
    cfg.policies = vec![policy];
    let scenario = cfg.scenario()?;
    let network = match (policy, checkpoint) {
        (PolicyKind::Dqn, None) => return Err(Failure::Config(anyhow!("--checkpoint is required for dqn"))),
        (_, Some(p)) => Some(load_network(p, &cfg, cli.quiet)?),
        _ => None,
    };
    let table = run_experiment_with(&cfg, network.clone())?;
    let dir = out_dir(cli)?;
    write_table(dir, &format!("eval-{policy}"), &table, &cfg)?;
    if cfg.ledger.enabled {
        for &seed in &cfg.seeds {
            let mut p = make_policy(policy, network.as_ref()).expect("network present for dqn");
            let trace = run_episode(&scenario, p.as_mut(), seed);
            if let Some(chain) = trace.chain {
                let file = dir.join(format!("chain-{policy}-{seed}.ndjson"));
                fs::write(&file, chain.export_ndjson()).map_err(runtime)?;
            }
        }
    }
    if !cli.quiet {
        print_summary(&table);
    }
    Ok(())
}

fn parse_demands(text: &str) -> anyhow::Result<Vec<StreamDemand>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match nums {
            Ok(v) if v.len() == 3 => {
                out.push(StreamDemand::new(v[0], v[1], v[2]).with_context(|| format!("line {}", i + 1))?)
            }
            Ok(_) => bail!("line {}: expected 3 fields C,T,D", i + 1),
            // a non-numeric first row is a header
            Err(_) if out.is_empty() && fields.iter().any(|f| f.chars().any(char::is_alphabetic)) => {}
            Err(e) => bail!("line {}: {e}", i + 1),
        }
    }
    if out.is_empty() {
        bail!("no demand rows");
    }
    Ok(out)
}

fn cmd_dbf(cli: &Cli, file: &Path, delta_max: Option<f64>) -> Result<(), Failure> {
    let text = fs::read_to_string(file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(Failure::Config)?;
    let demands = parse_demands(&text).map_err(|e| Failure::Config(anyhow!("{}: {e:#}", file.display())))?;
    let dmax = delta_max.unwrap_or_else(|| default_delta_max(&demands));
    let (peak, at) = max_load(&demands, dmax).map_err(|e| Failure::Config(e.into()))?;

    let mut table = String::from("delta");
    for i in 0..demands.len() {
        table.push_str(&format!(",dbf_{i}"));
    }
    table.push_str(",load\n");
    for p in test_points(&demands, dmax) {
        table.push_str(&format!("{p}"));
        for d in &demands {
            table.push_str(&format!(",{}", dbf(d, p).map_err(runtime)?));
        }
        table.push_str(&format!(",{}\n", load(&demands, p).map_err(runtime)?));
    }
    let dir = out_dir(cli)?;
    fs::write(dir.join("dbf.csv"), &table).map_err(runtime)?;

    println!("delta_max {dmax}");
    println!("max_load {peak} at delta {at}");
    println!("feasible {}", peak <= 1.0);
    let mut accepted = Vec::new();
    for (i, d) in demands.iter().enumerate() {
        let ok = admit(&accepted, *d, dmax).map_err(runtime)?;
        println!("stream {i} (C={}, T={}, D={}): {}", d.exec, d.period, d.deadline, if ok { "admit" } else { "reject" });
        if ok {
            accepted.push(*d);
        }
    }
    if !cli.quiet {
        eprintln!("wrote {}", dir.join("dbf.csv").display());
    }
    Ok(())
}

fn cmd_audit(cli: &Cli, file: &Path, config: Option<&Path>) -> Result<(), Failure> {
    let ledger = match config {
        Some(p) => ExperimentConfig::load(p)?.ledger,
        None => LedgerConfig::default(),
    };
    let text = fs::read_to_string(file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(Failure::Runtime)?;
    let chain = Chain::import_ndjson(&text, &ledger).map_err(runtime)?;
    match chain.verify() {
        Verdict::Ok => {
            if !cli.quiet {
                println!("ok: {} blocks, {} records", chain.blocks.len(), chain.records().count());
            }
            Ok(())
        }
        Verdict::Bad { index, reason } => Err(Failure::Runtime(anyhow!("chain invalid at block {index}: {reason}"))),
    }
}
