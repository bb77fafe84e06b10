use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use antijam::auction::{max_weight_allocation, BidCube, EffectiveBids};
use antijam::harness::{emit, run_experiment, sweep, write_summary, ExperimentConfig, Mode, SummaryRow};
use antijam::matgame::{reduce_rows, solve, value, PayoffMatrix};
use antijam::oracle::{brute_force_max_weight, support_enumeration_value};
use antijam::pcgame::{build_full_game, solve_stage, SolveMode, REDUCE_TOL};

#[derive(Parser)]
#[command(name = "antijam", version, about = "Anti-jamming spectrum auction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replications of one configuration.
    Simulate(RunArgs),
    /// Run one configuration per value of a parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Config field to vary, e.g. buffer_capacity.
        #[arg(long)]
        param: String,
        /// Comma-separated JSON values, e.g. 1,2,3.
        #[arg(long)]
        values: String,
    },
    /// Cross-check the solvers against brute-force oracles.
    Verify {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; defaults to the baseline scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stages per replication.
    #[arg(long)]
    steps: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::baseline(),
        };
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(steps) = self.steps {
            cfg.horizon = steps;
        }
        if let Some(reps) = self.reps {
            cfg.replications = reps;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_one(cfg: &ExperimentConfig, dir: &Path, param: &str, value: &str) -> Result<SummaryRow> {
    let records = run_experiment(cfg)?;
    emit(cfg, &records, dir)?;
    let row = SummaryRow::new(cfg, param, value, &records);
    println!(
        "{}: {} x {} stages, theta/T = {:.4} +- {:.4}",
        dir.display(),
        records.len(),
        cfg.horizon,
        row.theta_per_stage_mean,
        row.theta_per_stage_std
    );
    Ok(row)
}

/// Split on commas that are not inside brackets or quotes.
fn split_values(list: &str) -> Vec<&str> {
    let (mut depth, mut quoted, mut start) = (0i32, false, 0);
    let mut parts = Vec::new();
    for (i, c) in list.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '[' | '{' if !quoted => depth += 1,
            ']' | '}' if !quoted => depth -= 1,
            ',' if depth == 0 && !quoted => {
                parts.push(list[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(list[start..].trim());
    parts.into_iter().filter(|s| !s.is_empty()).collect()
}

fn parse_value(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap_or_else(|_| serde_json::Value::String(text.to_string()))
}

fn simulate(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let row = run_one(&cfg, &args.out, "", "")?;
    write_summary(&args.out.join("summary.csv"), &[row])?;
    Ok(())
}

fn run_sweep(args: &RunArgs, param: &str, values: &str) -> Result<()> {
    let base = args.config()?;
    let texts = split_values(values);
    if texts.is_empty() {
        bail!("--values is empty");
    }
    let parsed: Vec<_> = texts.iter().map(|t| parse_value(t)).collect();
    let configs = sweep(&base, param, &parsed).with_context(|| format!("sweeping `{param}`"))?;
    let mut rows = Vec::with_capacity(configs.len());
    for (cfg, text) in configs.iter().zip(&texts) {
        let dir = args.out.join(format!("{param}={text}"));
        rows.push(run_one(cfg, &dir, param, text)?);
    }
    write_summary(&args.out.join("summary.csv"), &rows)?;
    Ok(())
}

struct Check {
    name: &'static str,
    failures: usize,
    trials: usize,
    worst: f64,
}

fn random_game(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> PayoffMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(0.1..10.0)).collect();
    PayoffMatrix::from_flat(rows, cols, data).expect("finite entries")
}

fn verify(trials: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut check = Check { name: "solver vs support enumeration", failures: 0, trials, worst: 0.0 };
    for _ in 0..trials {
        let (rows, cols) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let game = random_game(&mut rng, rows, cols);
        let sol = solve(&game)?;
        let err = (sol.value - support_enumeration_value(&game)?).abs().max(sol.duality_gap(&game));
        check.worst = check.worst.max(err);
        check.failures += usize::from(err > 1e-6);
    }
    checks.push(check);

    let mut check = Check { name: "row elimination keeps value", failures: 0, trials, worst: 0.0 };
    for _ in 0..trials {
        let (rows, cols) = (rng.random_range(5..=20), rng.random_range(2..=4));
        let game = random_game(&mut rng, rows, cols);
        let (reduced, _) = reduce_rows(&game, REDUCE_TOL)?;
        let err = (value(&game)? - value(&reduced)?).abs();
        check.worst = check.worst.max(err);
        check.failures += usize::from(err >= 1e-6 || reduced.rows() > cols);
    }
    checks.push(check);

    let mut check = Check { name: "reduced stage game vs full game", failures: 0, trials, worst: 0.0 };
    for _ in 0..trials {
        let bids = BidCube::from_fn(3, 2, |_, _, _| rng.random_range(0.0..1.0));
        let full = value(&build_full_game(&bids)?.payoff)?;
        let err = (solve_stage(&bids, SolveMode::Reduced)?.value - full).abs();
        check.worst = check.worst.max(err);
        check.failures += usize::from(err > 1e-6);
    }
    checks.push(check);

    let mut check = Check { name: "assignment vs brute force", failures: 0, trials, worst: 0.0 };
    for _ in 0..trials {
        let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..5.0)).collect()).collect();
        let everyone: Vec<usize> = (0..n).collect();
        let (_, welfare) = max_weight_allocation(&EffectiveBids::new(rows.clone()), &everyone);
        let err = (welfare - brute_force_max_weight(&rows)).abs();
        check.worst = check.worst.max(err);
        check.failures += usize::from(err > 1e-9);
    }
    checks.push(check);
    Ok(checks)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(&args)?,
        Command::Sweep { run, param, values } => run_sweep(&run, &param, &values)?,
        Command::Verify { trials, seed } => {
            let checks = verify(trials, seed)?;
            for c in &checks {
                let status = if c.failures == 0 { "PASS" } else { "FAIL" };
                println!("{status} {}: {}/{} failures, worst error {:.2e}", c.name, c.failures, c.trials, c.worst);
            }
            if checks.iter().any(|c| c.failures > 0) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_split_at_top_level_commas() {
        assert_eq!(split_values("1, 2,3"), vec!["1", "2", "3"]);
        assert_eq!(split_values("[0.1,0.2],0.5"), vec!["[0.1,0.2]", "0.5"]);
        assert_eq!(split_values("\"a,b\",c"), vec!["\"a,b\"", "c"]);
        assert!(split_values(" ").is_empty());
    }

    #[test]
    fn bare_words_become_strings() {
        assert_eq!(parse_value("2"), serde_json::json!(2));
        assert_eq!(parse_value("uniform"), serde_json::json!("uniform"));
    }

    #[test]
    fn verify_passes_on_a_small_batch() {
        assert!(verify(20, 1).unwrap().iter().all(|c| c.failures == 0));
    }
}
