use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tblab::fixtures::Instance;
use tblab_harness::config::ALL_SUITES;
use tblab_harness::{ExperimentConfig, SuiteReport};

#[derive(Parser)]
#[command(
    name = "tblab",
    about = "Run local Tb experiment suites on atomic measures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the resolved config and the base fixture (measure, grid, accretive system).
    Gen(Common),
    /// Run the selected suites and write report.json plus CSV artifacts.
    Run(Common),
    /// Re-emit report.json and checks.csv from an existing report.
    Report {
        /// Directory holding report.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated suite names; `all` selects every suite.
    #[arg(long, value_delimiter = ',')]
    suite: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(list) = &self.suite {
            cfg.suites = if list.iter().any(|s| s == "all") {
                ALL_SUITES.iter().map(|s| s.to_string()).collect()
            } else {
                list.iter().filter(|s| !s.is_empty()).cloned().collect()
            };
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if ExperimentConfig::reduced_from_env() {
            cfg.reduce_trials();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gen(cfg: &ExperimentConfig) -> Result<()> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mu = cfg.base_measure()?;
    let inst = Instance::on_measure(&cfg.base_spec()?, &mu)?;
    mu.save(&dir.join("measure.json"))?;
    std::fs::write(
        dir.join("grid.json"),
        serde_json::to_string_pretty(&inst.sys.dump())?,
    )?;
    std::fs::write(
        dir.join("accretive.json"),
        inst.ctx.accretive().to_fixture_string(inst.ctx.index()),
    )?;
    println!(
        "wrote config.toml, measure.json, grid.json, accretive.json to {}",
        dir.display()
    );
    Ok(())
}

fn emit(report: &SuiteReport, dir: &Path) -> Result<ExitCode> {
    report.write(dir)?;
    print!("{}", report.summary());
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(c) => c
            .resolve()
            .and_then(|cfg| gen(&cfg))
            .map(|_| ExitCode::SUCCESS),
        Command::Run(c) => c.resolve().and_then(|cfg| {
            let report = tblab_harness::run(&cfg);
            emit(&report, &cfg.output.dir)
        }),
        Command::Report { out } => std::fs::read_to_string(out.join("report.json"))
            .with_context(|| format!("reading {}", out.join("report.json").display()))
            .and_then(|s| SuiteReport::from_json(&s))
            .and_then(|r| emit(&r, &out)),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
