use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stgn::harness::config::{apply_model, load_stream, split_spec, synthetic_spec, ConfigMap};
use stgn::harness::{load_checkpoint, run_ablation, save_checkpoint, EvalScope, Experiment};
use stgn::ingest::{chronological_split, generate_synthetic, write_jodie_csv};
use stgn::learn::ModelConfig;
use stgn::Result;

#[derive(Parser)]
#[command(
    name = "stgn",
    version,
    about = "Streaming temporal graph network with stale-node augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Off,
    #[value(name = "ball_tree")]
    BallTree,
    #[value(name = "brute_force")]
    BruteForce,
}

impl BackendArg {
    fn key(self) -> &'static str {
        match self {
            BackendArg::Off => "off",
            BackendArg::BallTree => "ball_tree",
            BackendArg::BruteForce => "brute_force",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Trans,
    Ind,
    All,
}

impl From<ScopeArg> for EvalScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Trans => EvalScope::Transductive,
            ScopeArg::Ind => EvalScope::Inductive,
            ScopeArg::All => EvalScope::Combined,
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// `synth` or a JODIE-format CSV file.
    #[arg(long)]
    data: Option<String>,
    /// Flat key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print one staleness line per training batch to stderr.
    #[arg(long)]
    log_staleness: bool,
}

impl Common {
    fn settings(&self) -> Result<ConfigMap> {
        let mut map = match &self.config {
            Some(p) => ConfigMap::from_file(p)?,
            None => ConfigMap::new(),
        };
        if let Some(d) = &self.data {
            map.set("data", d);
        }
        if let Some(e) = self.epochs {
            map.set("epochs", e);
        }
        if let Some(s) = self.seed {
            map.set("seed", s);
        }
        Ok(map)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test range.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        scope: ScopeArg,
        /// Overrides the data source recorded in the checkpoint.
        #[arg(long)]
        data: Option<String>,
    },
    /// Train and evaluate one augmented model per staleness quantile.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.975,0.8,0.7")]
        quantiles: Vec<f64>,
        #[arg(long, value_enum, default_value = "ball_tree")]
        backend: BackendArg,
        #[arg(long, value_enum, default_value = "all")]
        scope: ScopeArg,
        /// Also write the table as comma-separated values here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic community stream in JODIE CSV format.
    GenSynth {
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 8)]
        communities: usize,
        #[arg(long, default_value_t = 20_000)]
        events: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of users given a dormancy window.
        #[arg(long, default_value_t = 0.0)]
        dormancy_frac: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn model_config(settings: &ConfigMap) -> Result<(ModelConfig, stgn::ingest::Split)> {
    let stream = load_stream(settings)?;
    let split = chronological_split(&stream, &split_spec(settings)?)?;
    let mut cfg = ModelConfig::for_stream(&stream);
    apply_model(settings, &mut cfg)?;
    Ok((cfg, split))
}

fn eval_seed(settings: &ConfigMap) -> Result<u64> {
    Ok(settings.value("eval_seed")?.unwrap_or(0))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            backend,
            alpha,
            out,
        } => {
            let mut settings = common.settings()?;
            if let Some(b) = backend {
                settings.set("backend", b.key());
            }
            if let Some(a) = alpha {
                settings.set("alpha", a);
            }
            let (cfg, split) = model_config(&settings)?;
            let mut model = stgn::learn::Model::new(cfg)?;
            model.log_staleness = common.log_staleness;
            let mut state = model.new_state();
            for epoch in 1..=model.config.train.epochs {
                let stats = model.train_epoch(&split.train, &mut state, epoch)?;
                println!("{}", stats.record());
            }
            save_checkpoint(&out, &model, &state, &settings)?;
            println!("checkpoint written to {}", out.display());
        }
        Command::Eval { ckpt, scope, data } => {
            let loaded = load_checkpoint(&ckpt)?;
            let mut settings = loaded.run.clone();
            if let Some(d) = data {
                settings.set("data", d);
            }
            let stream = load_stream(&settings)?;
            let split = chronological_split(&stream, &split_spec(&settings)?)?;
            let mut exp = Experiment {
                model: loaded.model,
                state: loaded.state,
                history: Vec::new(),
            };
            let scored = exp.score_test(&split, eval_seed(&settings)?)?;
            let result = scored.result(scope.into(), &exp.model.config)?;
            println!("{}", result.summary());
        }
        Command::Ablate {
            common,
            quantiles,
            backend,
            scope,
            csv,
        } => {
            let mut settings = common.settings()?;
            settings.set("backend", backend.key());
            let (cfg, split) = model_config(&settings)?;
            let table = run_ablation(
                &split,
                &cfg,
                &quantiles,
                scope.into(),
                eval_seed(&settings)?,
            )?;
            print!("{}", table.render_text());
            if let Some(path) = csv {
                std::fs::write(&path, table.render_csv())?;
            }
        }
        Command::GenSynth {
            users,
            items,
            communities,
            events,
            seed,
            dormancy_frac,
            out,
        } => {
            let mut settings = ConfigMap::new();
            settings.set("users", users);
            settings.set("items", items);
            settings.set("communities", communities);
            settings.set("events", events);
            settings.set("synth_seed", seed);
            settings.set("dormancy_frac", dormancy_frac);
            let stream = generate_synthetic(&synthetic_spec(&settings)?)?;
            write_jodie_csv(&stream, &out)?;
            println!("{} events written to {}", stream.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
