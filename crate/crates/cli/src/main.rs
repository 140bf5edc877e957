use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rmab_core::harness::{
    count_stored_values, measure_runtime_per_decision, read_config_or_manifest, write_outputs, ResourceReport,
    ResourceRow,
};
use rmab_core::policies::{PolicyError, PolicyKind};
use rmab_core::whittle::{solve_whittle_table, WhittleOptions};
use rmab_core::{run_experiment, EnvKind, EnvSpec, HarnessError, PolicyConfig};

#[derive(Parser)]
#[command(name = "rmab", version, about = "Restless multi-armed bandit scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config or a previous manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "RMAB_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
        #[arg(long, env = "RMAB_WORKERS")]
        workers: Option<usize>,
    },
    /// Exact Whittle indices per arm category.
    Whittle {
        /// Accepts the `whittle solve` spelling.
        #[arg(value_parser = ["solve"], hide = true)]
        verb: Option<String>,
        /// Environment name or an EnvSpec JSON file.
        #[arg(long)]
        env: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Stored values, bytes and decision latency of every scheduler.
    Resources {
        #[arg(long, default_value_t = 15)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value = "circulant")]
        env: String,
        #[arg(long, default_value_t = 1000)]
        warmup: u64,
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in environments.
    ListEnvs,
}

fn env_kind(name: &str) -> Result<EnvKind> {
    EnvKind::parse(name).with_context(|| {
        let known: Vec<_> = EnvKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown environment {name:?}, expected one of {}", known.join(", "))
    })
}

fn env_spec(arg: &str, n: Option<usize>, m: Option<usize>) -> Result<EnvSpec> {
    let path = Path::new(arg);
    let mut spec = if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let kind = env_kind(arg)?;
        let (dn, dm) = kind.default_size();
        EnvSpec::new(kind, dn, dm)
    };
    if let Some(n) = n {
        spec.n_arms = n;
        spec.category_mix = None;
    }
    if let Some(m) = m {
        spec.budget_m = m;
    }
    Ok(spec)
}

fn write_or_print(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(config: &Path, output_dir: Option<PathBuf>, workers: Option<usize>) -> Result<()> {
    let mut cfg = read_config_or_manifest(config)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    let result = run_experiment(&cfg)?;
    let paths = write_outputs(&result, &cfg.output_dir)?;
    for agg in &result.aggregates {
        println!("{:<16} {:>12.6} ± {:.6}", agg.policy, agg.final_mean(), agg.final_std());
    }
    println!("wrote {}", paths.rewards.parent().unwrap_or(Path::new(".")).display());
    Ok(())
}

fn whittle(spec: &EnvSpec, out: Option<&Path>) -> Result<()> {
    let arms = spec.build_arms()?;
    let opts = WhittleOptions::default();
    let mut map = BTreeMap::new();
    for arm in &arms {
        if map.contains_key(arm.category()) {
            continue;
        }
        let table = solve_whittle_table(arm, &opts)?;
        if !table.all_converged() {
            eprintln!("warning: some indices of category {} did not converge", arm.category());
        }
        map.insert(arm.category().to_string(), table.indices);
    }
    write_or_print(out, &serde_json::to_value(map)?)
}

fn resource_roster() -> Vec<PolicyConfig> {
    [
        PolicyKind::WiqlUcb { gamma: 1.0 },
        PolicyKind::WiqlBiswas(Default::default()),
        PolicyKind::WiqlAb(Default::default()),
        PolicyKind::WiqlFu(Default::default()),
        PolicyKind::JointQ(Default::default()),
        PolicyKind::Greedy,
        PolicyKind::RoundRobin,
        PolicyKind::Aoi,
        PolicyKind::Oracle {
            whittle: WhittleOptions::default(),
        },
    ]
    .into_iter()
    .map(PolicyConfig::from)
    .collect()
}

fn resources(spec: &EnvSpec, warmup: u64, samples: u64, out: Option<&Path>) -> Result<()> {
    let mut report = ResourceReport::default();
    let mut skipped = BTreeMap::new();
    for policy in resource_roster() {
        let row = match count_stored_values(&policy, spec) {
            Ok(row) => row,
            Err(HarnessError::Policy {
                source: source @ (PolicyError::CapacityExceeded { .. } | PolicyError::NeedsModels { .. }),
                ..
            }) => {
                skipped.insert(policy.name().to_string(), source.to_string());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let ms = measure_runtime_per_decision(&policy, spec, warmup, samples, 0)?;
        println!(
            "{:<12} {:>10} values {:>12} B {:>10.4} ms/decision",
            policy.name(),
            row.stored_values,
            row.bytes,
            ms
        );
        report
            .policies
            .insert(policy.name().to_string(), ResourceRow::new(row.stored_values, Some(ms)));
    }
    for (name, why) in &skipped {
        println!("{name:<12} skipped: {why}");
    }
    if let Some(path) = out {
        write_or_print(Some(path), &serde_json::to_value(&report)?)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            output_dir,
            workers,
        } => run(&config, output_dir, workers),
        Command::Whittle { env, out, n, m, .. } => whittle(&env_spec(&env, n, m)?, out.as_deref()),
        Command::Resources {
            n,
            m,
            env,
            warmup,
            samples,
            out,
        } => {
            if samples == 0 {
                bail!("--samples must be positive");
            }
            let spec = env_spec(&env, Some(n), Some(m))?;
            resources(&spec, warmup, samples, out.as_deref())
        }
        Command::ListEnvs => {
            for kind in EnvKind::ALL {
                let (n, m) = kind.default_size();
                println!("{:<16} N={n:<4} M={m:<3} {}", kind.as_str(), kind.description());
            }
            Ok(())
        }
    }
}
