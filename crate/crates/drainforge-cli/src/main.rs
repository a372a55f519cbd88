//! Command-line front end for the drainforge toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation failure,
//! 3 goal unreachable (solve), 4 data error.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use drainforge::attacker::{simulate_attack, solve, AttackMode, CostModel};
use drainforge::calibrate::{drain_per_message, CalibrationInput};
use drainforge::dataset::{
    binarise, ingest_apache_log, read_csv, write_csv, write_jsonl, EncodingSidecar,
};
use drainforge::ids::{
    evaluate, train_mlp, train_tree, Metrics, MlpParams, ModelFile, ModelKind, TreeParams,
};
use drainforge::model::{load_config, validate, Severity, SystemConfig};
use drainforge::pipeline::{
    generate_labelled_dataset, run_pipeline, AttackerMix, ClassifierChoice, OutputFormat,
    PipelineSpec,
};
use drainforge::semantics::{simulate, write_trace_jsonl, StopCondition, Trace};

#[derive(Parser)]
#[command(name = "drainforge", version, about = "Battery-drain DoS simulator and dataset forge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and report every violation.
    Validate {
        config: PathBuf,
    },
    /// Simulate device traffic and write the trace.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        stop: StopArgs,
        /// Trace output path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the minimum-expected-time attack strategy and print it.
    Solve {
        config: PathBuf,
        /// Weight on predictability scores; switches to the stealth cost.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Simulate the system under attack and write the labelled trace.
    Attack {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Optimal)]
        mode: ModeArg,
        /// Stealth weight, used with --mode stealth.
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        stop: StopArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labelled dataset from the model.
    GenDataset {
        config: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long, default_value_t = 0.1)]
        attack_fraction: f64,
        #[arg(long, value_enum, default_value_t = MixArg::Mixed)]
        attacker_mode: MixArg,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Parse an Apache access log into a categorical table.
    Ingest {
        log: PathBuf,
        /// Table output path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// One-hot encode these columns instead of writing the raw table;
        /// writes an encoding-map sidecar next to --out.
        #[arg(long, value_delimiter = ',')]
        binarise: Vec<String>,
    },
    /// Convert power measurements into a per-message drain.
    Calibrate {
        #[arg(long)]
        baseline_rate: f64,
        #[arg(long)]
        strain_rate: f64,
        #[arg(long)]
        msgs_per_second: f64,
        #[arg(long)]
        battery_capacity: f64,
    },
    /// Train a classifier on a dataset file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        max_depth: usize,
        #[arg(long, default_value_t = 2)]
        min_samples: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![16, 8])]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Score a trained model against a labelled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics record here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full experiment: generate train/test sets, train, evaluate, manifest.
    Pipeline {
        config: PathBuf,
        /// Config for the held-out set (defaults to the training config).
        #[arg(long)]
        test_config: Option<PathBuf>,
        #[arg(long)]
        train_size: usize,
        #[arg(long)]
        train_attack: f64,
        #[arg(long)]
        test_size: usize,
        #[arg(long)]
        test_attack: f64,
        #[arg(long, value_enum, default_value_t = ClassifierArg::Both)]
        classifier: ClassifierArg,
        #[arg(long, value_enum, default_value_t = MixArg::Mixed)]
        attacker_mode: MixArg,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
}

#[derive(Args)]
struct StopArgs {
    #[arg(long, conflicts_with_all = ["max_time", "until_exhausted"])]
    max_steps: Option<u64>,
    #[arg(long, conflicts_with = "until_exhausted")]
    max_time: Option<f64>,
    /// Run until no action is enabled (the default).
    #[arg(long)]
    until_exhausted: bool,
}

impl StopArgs {
    fn condition(&self) -> StopCondition {
        if let Some(n) = self.max_steps {
            StopCondition::MaxSteps(n)
        } else if let Some(t) = self.max_time {
            StopCondition::MaxTime(t)
        } else {
            StopCondition::UntilExhausted
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Optimal,
    Stealth,
    Stochastic,
}

#[derive(Clone, Copy, ValueEnum)]
enum MixArg {
    Optimal,
    Stochastic,
    Stealth,
    Mixed,
}

impl MixArg {
    fn to_mix(self, kappa: f64) -> AttackerMix {
        match self {
            MixArg::Optimal => AttackerMix::Optimal,
            MixArg::Stochastic => AttackerMix::Stochastic,
            MixArg::Stealth => AttackerMix::Stealth { kappa },
            MixArg::Mixed => AttackerMix::Mixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl FormatArg {
    fn to_format(self) -> OutputFormat {
        match self {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Jsonl => OutputFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Tree,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Tree,
    Mlp,
    Both,
}

impl ClassifierArg {
    fn to_choice(self) -> ClassifierChoice {
        match self {
            ClassifierArg::Tree => ClassifierChoice::Tree,
            ClassifierArg::Mlp => ClassifierChoice::Mlp,
            ClassifierArg::Both => ClassifierChoice::Both,
        }
    }
}

enum CliError {
    Validation(String),
    GoalUnreachable,
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::GoalUnreachable => 3,
            CliError::Data(_) => 4,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Validation(m) | CliError::Data(m) => m.clone(),
            CliError::GoalUnreachable => "goal unreachable: minimum time is infinite".to_string(),
        }
    }
}

fn data_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Loads and validates a config; validation errors abort with exit code 2.
fn load_valid_config(path: &PathBuf) -> Result<SystemConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let config = load_config(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    let errors: Vec<String> = validate(&config)
        .into_iter()
        .filter(|v| v.severity == Severity::Error)
        .map(|v| v.to_string())
        .collect();
    if !errors.is_empty() {
        return Err(CliError::Validation(errors.join("\n")));
    }
    Ok(config)
}

fn write_trace(trace: &Trace, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).map_err(data_err)?;
            write_trace_jsonl(trace, io::BufWriter::new(file)).map_err(data_err)?;
        }
        None => {
            let stdout = io::stdout();
            write_trace_jsonl(trace, stdout.lock()).map_err(data_err)?;
        }
    }
    eprintln!(
        "{} transitions, termination {:?}, final clock {}",
        trace.transitions.len(),
        trace.termination,
        trace.final_state.clock
    );
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { config } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| CliError::Data(format!("{}: {e}", config.display())))?;
            let parsed = load_config(&text).map_err(|e| CliError::Validation(e.to_string()))?;
            let violations = validate(&parsed);
            let errors = violations
                .iter()
                .filter(|v| v.severity == Severity::Error)
                .count();
            println!("{} violations", violations.len());
            for v in &violations {
                println!("{v}");
            }
            if errors > 0 {
                return Err(CliError::Validation(format!("{errors} errors")));
            }
            Ok(())
        }

        Command::Simulate {
            config,
            seed,
            stop,
            out,
        } => {
            let config = load_valid_config(&config)?;
            let trace = simulate(&config, seed, stop.condition());
            write_trace(&trace, out.as_ref())
        }

        Command::Solve { config, kappa } => {
            let config = load_valid_config(&config)?;
            let cost_model = match kappa {
                Some(kappa) => CostModel::Stealth { kappa },
                None => CostModel::Time,
            };
            let report = solve(&config, cost_model).map_err(data_err)?;
            if report.state_count > 1_000_000 {
                eprintln!(
                    "warning: {} states; consider smaller batteries",
                    report.state_count
                );
            }
            println!("states: {}", report.state_count);
            println!("battery_vectors: {}", report.battery_vector_count);
            if report.initial_value.is_finite() {
                println!("initial_value: {}", report.initial_value);
            } else {
                println!("initial_value: unreachable");
                return Err(CliError::GoalUnreachable);
            }
            println!("policy:");
            for (batteries, shots_left, action) in &report.policy_rows {
                let battery_list = batteries
                    .iter()
                    .map(|b| b.to_string())
                    .collect::<Vec<_>>()
                    .join(", ");
                println!("  [{battery_list}] shot {shots_left} -> {action}");
            }
            Ok(())
        }

        Command::Attack {
            config,
            mode,
            kappa,
            seed,
            stop,
            out,
        } => {
            let config = load_valid_config(&config)?;
            let mode = match mode {
                ModeArg::Optimal => AttackMode::Optimal,
                ModeArg::Stealth => AttackMode::Stealth { kappa },
                ModeArg::Stochastic => AttackMode::Stochastic,
            };
            let trace = simulate_attack(&config, mode, seed, stop.condition()).map_err(data_err)?;
            write_trace(&trace, out.as_ref())
        }

        Command::GenDataset {
            config,
            rows,
            attack_fraction,
            attacker_mode,
            kappa,
            seed,
            out,
            format,
        } => {
            let config = load_valid_config(&config)?;
            let dataset = generate_labelled_dataset(
                &config,
                rows,
                attack_fraction,
                attacker_mode.to_mix(kappa),
                seed,
            )
            .map_err(data_err)?;
            fs::create_dir_all(&out).map_err(data_err)?;
            let (path, bytes) = match format.to_format() {
                OutputFormat::Csv => {
                    let mut buf = Vec::new();
                    write_csv(&dataset, &mut buf).map_err(data_err)?;
                    (out.join("dataset.csv"), buf)
                }
                OutputFormat::Jsonl => {
                    let mut buf = Vec::new();
                    write_jsonl(&dataset, &mut buf).map_err(data_err)?;
                    (out.join("dataset.jsonl"), buf)
                }
            };
            fs::write(&path, bytes).map_err(data_err)?;
            println!(
                "{} rows ({} attack) -> {}",
                dataset.len(),
                dataset.attack_count(),
                path.display()
            );
            Ok(())
        }

        Command::Ingest { log, out, binarise: cols } => {
            let file = fs::File::open(&log)
                .map_err(|e| CliError::Data(format!("{}: {e}", log.display())))?;
            let (table, rejects) = ingest_apache_log(BufReader::new(file)).map_err(data_err)?;
            for r in &rejects {
                eprintln!("rejected line {}: {}", r.line_number, r.text);
            }
            eprintln!("{} rows, {} rejected", table.rows.len(), rejects.len());

            if cols.is_empty() {
                let mut buf = String::new();
                buf.push_str(&table.columns.join(","));
                buf.push('\n');
                for row in &table.rows {
                    buf.push_str(&row.join(","));
                    buf.push('\n');
                }
                match out {
                    Some(path) => fs::write(path, buf).map_err(data_err)?,
                    None => io::stdout().write_all(buf.as_bytes()).map_err(data_err)?,
                }
                return Ok(());
            }

            // One-hot encode the selected columns.
            let out = out.ok_or_else(|| {
                CliError::Data("--binarise needs --out for the encoding sidecar".to_string())
            })?;
            let mut sidecar: EncodingSidecar = Default::default();
            let mut header: Vec<String> = Vec::new();
            let mut encoded: Vec<Vec<u8>> = vec![Vec::new(); table.rows.len()];
            for col in &cols {
                let idx = table
                    .columns
                    .iter()
                    .position(|c| c == col)
                    .ok_or_else(|| CliError::Data(format!("unknown column `{col}`")))?;
                let values: Vec<String> = table.rows.iter().map(|r| r[idx].clone()).collect();
                let (map, onehot) = binarise(&values).map_err(data_err)?;
                for value in &map.values {
                    header.push(format!("{col}={value}"));
                }
                for (row, bits) in encoded.iter_mut().zip(onehot) {
                    row.extend(bits);
                }
                sidecar.insert(col.clone(), map);
            }
            let mut buf = String::new();
            buf.push_str(&header.join(","));
            buf.push('\n');
            for row in &encoded {
                let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
                buf.push_str(&line.join(","));
                buf.push('\n');
            }
            fs::write(&out, buf).map_err(data_err)?;
            let sidecar_path = out.with_extension("encoding.json");
            fs::write(
                &sidecar_path,
                serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
            )
            .map_err(data_err)?;
            eprintln!("encoding map -> {}", sidecar_path.display());
            Ok(())
        }

        Command::Calibrate {
            baseline_rate,
            strain_rate,
            msgs_per_second,
            battery_capacity,
        } => {
            let input = CalibrationInput {
                baseline_rate,
                strain_rate,
                msgs_per_second,
                battery_capacity,
            };
            let drain = drain_per_message(&input).map_err(data_err)?;
            println!("{drain}");
            Ok(())
        }

        Command::Train {
            data,
            model,
            out,
            seed,
            max_depth,
            min_samples,
            hidden,
            learning_rate,
            epochs,
            batch_size,
        } => {
            let file = fs::File::open(&data)
                .map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
            let dataset = read_csv(BufReader::new(file)).map_err(data_err)?;
            let model_file = match model {
                ModelArg::Tree => {
                    let params = TreeParams {
                        max_depth,
                        min_samples,
                    };
                    ModelFile {
                        model: ModelKind::Tree(train_tree(&dataset, &params).map_err(data_err)?),
                        stats: None,
                    }
                }
                ModelArg::Mlp => {
                    let (train_std, _, stats) =
                        drainforge::dataset::standardize(&dataset, &[]).map_err(data_err)?;
                    let params = MlpParams {
                        hidden,
                        learning_rate,
                        epochs,
                        batch_size,
                        seed,
                    };
                    ModelFile {
                        model: ModelKind::Mlp(train_mlp(&train_std, &params).map_err(data_err)?),
                        stats: Some(stats),
                    }
                }
            };
            fs::write(&out, model_file.to_json()).map_err(data_err)?;
            println!("model -> {}", out.display());
            Ok(())
        }

        Command::Eval { model, data, out } => {
            let text = fs::read_to_string(&model)
                .map_err(|e| CliError::Data(format!("{}: {e}", model.display())))?;
            let model_file = ModelFile::from_json(&text).map_err(data_err)?;
            let file = fs::File::open(&data)
                .map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
            let dataset = read_csv(BufReader::new(file)).map_err(data_err)?;
            let truth: Vec<u8> = dataset.rows.iter().map(|r| r.label).collect();
            let pred = model_file.predict(&dataset).map_err(data_err)?;
            let metrics = evaluate(&pred, &truth).map_err(data_err)?;
            print_metrics(&metrics);
            let record = serde_json::to_string(&metrics).expect("metrics serialize");
            println!("{record}");
            if let Some(path) = out {
                fs::write(path, record).map_err(data_err)?;
            }
            Ok(())
        }

        Command::Pipeline {
            config,
            test_config,
            train_size,
            train_attack,
            test_size,
            test_attack,
            classifier,
            attacker_mode,
            kappa,
            seed,
            out,
            format,
        } => {
            let train_cfg = load_valid_config(&config)?;
            let test_cfg = match &test_config {
                Some(path) => Some(load_valid_config(path)?),
                None => None,
            };
            let spec = PipelineSpec {
                train_size,
                train_attack_fraction: train_attack,
                test_size,
                test_attack_fraction: test_attack,
                classifier: classifier.to_choice(),
                attacker_mix: attacker_mode.to_mix(kappa),
                root_seed: seed,
                format: format.to_format(),
            };
            let manifest =
                run_pipeline(&train_cfg, test_cfg.as_ref(), &spec, &out).map_err(data_err)?;
            println!(
                "train: {} rows ({} attack)",
                manifest.train.rows, manifest.train.attack_rows
            );
            println!(
                "test:  {} rows ({} attack)",
                manifest.test.rows, manifest.test.attack_rows
            );
            for (name, m) in &manifest.metrics {
                println!(
                    "{name}: precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4}",
                    m.precision, m.recall, m.f1, m.accuracy
                );
            }
            println!("manifest -> {}", out.join("manifest.json").display());
            Ok(())
        }
    }
}

fn print_metrics(m: &Metrics) {
    println!("            predicted");
    println!("            attack  normal");
    println!(
        "actual attack {:>7} {:>7}",
        m.true_positives, m.false_negatives
    );
    println!(
        "actual normal {:>7} {:>7}",
        m.false_positives, m.true_negatives
    );
    println!("precision {:.6}", m.precision);
    println!("recall    {:.6}", m.recall);
    println!("f1        {:.6}", m.f1);
    println!("accuracy  {:.6}", m.accuracy);
}
