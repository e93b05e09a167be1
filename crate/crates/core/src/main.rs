use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use dataflow_mcts::actions::TargetSpec;
use dataflow_mcts::bench::BenchmarkId;
use dataflow_mcts::cost::{
    evaluate, CostParams, Evaluator, EvaluatorSpec, ExternalEvaluator, NoisySimEvaluator, SimEvaluator,
};
use dataflow_mcts::ir::{parse_program, Program};
use dataflow_mcts::model::TrainConfig;
use dataflow_mcts::pipeline::{
    cmd_experiment, cmd_generate, cmd_search, cmd_train, load_model, read_file, write_file, ExperimentConfig,
    PipelineError, DEFAULT_CUTOFF, DEFAULT_HOLDOUT,
};
use dataflow_mcts::search::{export_dataset, export_tree, dataset_to_jsonl, SearchConfig, SearchMode};

#[derive(Parser)]
#[command(name = "dataflow-mcts", version, about = "Search for faster variants of dataflow programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a search tree in uct mode and export it with a labelled dataset.
    Generate {
        #[command(flatten)]
        input: ProgramArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// Quantile of q_mean at or above which a state is labelled 1.
        #[arg(long, default_value_t = DEFAULT_CUTOFF)]
        cutoff: f64,
    },
    /// Train the prior model on one or more dataset files.
    Train {
        #[arg(long = "train-data", required = true, num_args = 1..)]
        train_data: Vec<PathBuf>,
        #[arg(long = "model-out")]
        model_out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long = "batch-size", default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
        /// Fraction of records held out for accuracy reporting.
        #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
        holdout: f64,
    },
    /// Search for a faster variant and print the recommended alterations.
    Search {
        #[command(flatten)]
        input: ProgramArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// Model file; required in prior mode.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Write the machine-readable report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare search conditions on logreg with priors trained on each benchmark.
    Experiment {
        /// Number of search seeds, starting at --seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        budget: usize,
        #[arg(long = "source-budget")]
        source_budget: Option<usize>,
        /// Concurrent searches (0: one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write the line-delimited JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in benchmark programs.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Read a program on stdin and print its simulated metric in minutes.
    Eval {
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    List,
    /// Print a benchmark's program text.
    Emit {
        id: String,
        /// Print the target facts instead of the program.
        #[arg(long)]
        target: bool,
    },
}

#[derive(Args)]
struct ProgramArgs {
    /// Built-in benchmark (logreg, kmeans, etl).
    #[arg(long, conflicts_with = "program", required_unless_present = "program")]
    bench: Option<String>,
    /// Program file.
    #[arg(long)]
    program: Option<PathBuf>,
    /// Target facts file; defaults to the benchmark's own target.
    #[arg(long)]
    target: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value = "uct")]
    mode: SearchMode,
    #[arg(long, default_value_t = 300)]
    budget: usize,
    #[arg(long = "max-depth", default_value_t = 4)]
    max_depth: usize,
    #[arg(long = "c-uct", default_value_t = 0.5)]
    c_uct: f64,
    #[arg(long = "c-prior", default_value_t = 1.0)]
    c_prior: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "export-tree")]
    export_tree: Option<PathBuf>,
    #[arg(long = "export-dataset")]
    export_dataset: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// sim, sim-noisy, or extern:<command>.
    #[arg(long, default_value = "sim")]
    evaluator: EvaluatorSpec,
    #[arg(long)]
    params: Option<PathBuf>,
    /// Relative noise for sim-noisy.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Timeout in seconds for external evaluations.
    #[arg(long = "eval-timeout", default_value_t = 600)]
    eval_timeout: u64,
    /// Maximum concurrent external evaluations.
    #[arg(long = "max-in-flight", default_value_t = 4)]
    max_in_flight: usize,
}

impl SearchArgs {
    fn config(&self) -> SearchConfig {
        SearchConfig {
            mode: self.mode,
            c_uct: self.c_uct,
            c_prior: self.c_prior,
            gamma: self.gamma,
            max_depth: self.max_depth,
            budget: self.budget,
            seed: self.seed,
            ..SearchConfig::default()
        }
    }
}

fn load_params(path: Option<&Path>) -> Result<CostParams, PipelineError> {
    match path {
        None => Ok(CostParams::default()),
        Some(p) => read_file(p)?
            .parse()
            .map_err(|e| PipelineError::Invalid(format!("{}: {e}", p.display()))),
    }
}

impl EvalArgs {
    fn build(&self, seed: u64) -> Result<Box<dyn Evaluator>, PipelineError> {
        let params = load_params(self.params.as_deref())?;
        Ok(match &self.evaluator {
            EvaluatorSpec::Sim => Box::new(SimEvaluator::new(params)),
            EvaluatorSpec::SimNoisy => Box::new(NoisySimEvaluator {
                params,
                noise_rel: self.noise,
                seed,
            }),
            EvaluatorSpec::External(cmd) => Box::new(ExternalEvaluator::with_limits(
                cmd.clone(),
                Duration::from_secs(self.eval_timeout),
                self.max_in_flight,
            )),
        })
    }
}

impl ProgramArgs {
    fn load(&self) -> Result<(Program, Option<TargetSpec>), PipelineError> {
        let (program, bench_target) = match (&self.bench, &self.program) {
            (Some(id), _) => {
                let id: BenchmarkId = id.parse().map_err(PipelineError::Invalid)?;
                (id.program(), id.target())
            }
            (None, Some(path)) => {
                let text = read_file(path)?;
                let p = parse_program(&text)
                    .map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?;
                (p, None)
            }
            (None, None) => unreachable!("clap requires one of --bench/--program"),
        };
        let target = match &self.target {
            Some(path) => Some(TargetSpec::parse(&read_file(path)?)?),
            None => bench_target,
        };
        Ok((program, target))
    }
}

fn run(cli: Cli) -> Result<bool, PipelineError> {
    match cli.command {
        Command::Generate {
            input,
            search,
            eval,
            cutoff,
        } => {
            let (program, _) = input.load()?;
            let evaluator = eval.build(search.seed)?;
            let summary = cmd_generate(
                &program,
                evaluator.as_ref(),
                &search.config(),
                cutoff,
                search.export_tree.as_deref(),
                search.export_dataset.as_deref(),
            )?;
            print!("{summary}");
            Ok(true)
        }
        Command::Train {
            train_data,
            model_out,
            lr,
            epochs,
            batch_size,
            seed,
            l2,
            holdout,
        } => {
            let config = TrainConfig {
                learning_rate: lr,
                epochs,
                batch_size,
                seed,
                l2_penalty: l2,
            };
            let summary = cmd_train(&train_data, &config, holdout, &model_out)?;
            print!("{}", summary.render());
            Ok(true)
        }
        Command::Search {
            input,
            search,
            eval,
            model,
            report,
        } => {
            let (program, target) = input.load()?;
            let evaluator = eval.build(search.seed)?;
            let model = model.as_deref().map(load_model).transpose()?;
            let config = search.config();
            let (rep, summary) = cmd_search(&program, evaluator.as_ref(), &config, target.as_ref(), model)?;
            print!("{}", summary.render(target.is_some()));
            if let Some(p) = &report {
                let mut text = serde_json::to_string(&summary).expect("serializable");
                text.push('\n');
                write_file(p, &text)?;
            }
            if let Some(p) = &search.export_tree {
                write_file(p, &export_tree(&rep.tree))?;
            }
            if let Some(p) = &search.export_dataset {
                write_file(p, &dataset_to_jsonl(&export_dataset(&rep.tree, DEFAULT_CUTOFF)?))?;
            }
            Ok(summary.valid)
        }
        Command::Experiment {
            seeds,
            seed,
            budget,
            source_budget,
            jobs,
            params,
            out,
        } => {
            let mut config = ExperimentConfig {
                seeds: (seed..seed + seeds).collect(),
                budget,
                jobs,
                params: load_params(params.as_deref())?,
                ..ExperimentConfig::default()
            };
            if let Some(b) = source_budget {
                config.source_budget = b;
            }
            let report = cmd_experiment(&config)?;
            print!("{}", report.to_table());
            if let Some(p) = &out {
                write_file(p, &report.to_jsonl())?;
            }
            Ok(report.all_checks_pass())
        }
        Command::Bench { command } => {
            match command {
                BenchCommand::List => {
                    for id in BenchmarkId::ALL {
                        let p = id.program();
                        println!(
                            "{:<8} {} entities{}",
                            id.name(),
                            p.entities().len(),
                            if id.target().is_some() { ", has target" } else { "" }
                        );
                    }
                }
                BenchCommand::Emit { id, target } => {
                    let id: BenchmarkId = id.parse().map_err(PipelineError::Invalid)?;
                    if target {
                        let t = id
                            .target()
                            .ok_or_else(|| PipelineError::Invalid(format!("{id} has no target")))?;
                        print!("{}", t.to_text());
                    } else {
                        print!("{}", id.source());
                    }
                }
            }
            Ok(true)
        }
        Command::Eval { params } => {
            let params = load_params(params.as_deref())?;
            let mut text = String::new();
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|source| PipelineError::Io {
                    path: PathBuf::from("<stdin>"),
                    source,
                })?;
            let program = parse_program(&text).map_err(|e| PipelineError::Invalid(format!("<stdin>: {e}")))?;
            println!("{}", evaluate(&program, &params).metric_minutes);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
