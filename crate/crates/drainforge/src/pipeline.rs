//! End-to-end experiment runs: generate train and test sets, fit the
//! classifiers, score them, and leave a manifest behind.
//!
//! Every stochastic stage draws its seed from the root seed and the stage
//! name, and the manifest records each output file with its content hash,
//! so a run is reproducible byte for byte from `(configs, root seed)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacker::{simulate_episode, AttackMode, CostModel, MdpError, SolvedPolicy};
use crate::dataset::{encode_trace, mix, standardize, write_csv, write_jsonl, Dataset, DatasetError};
use crate::ids::{evaluate, train_mlp, train_tree, IdsError, Metrics, MlpParams, ModelFile, ModelKind, TreeParams};
use crate::model::SystemConfig;
use crate::rng::stage_seed;
use crate::semantics::{config_hash, hex, simulate, StopCondition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierChoice {
    Tree,
    Mlp,
    Both,
}

/// How attack traces for a dataset are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackerMix {
    Optimal,
    Stochastic,
    Stealth { kappa: f64 },
    /// Alternate optimal and stochastic episodes, half and half.
    Mixed,
}

impl AttackerMix {
    fn name(&self) -> &'static str {
        match self {
            AttackerMix::Optimal => "optimal",
            AttackerMix::Stochastic => "stochastic",
            AttackerMix::Stealth { .. } => "stealth",
            AttackerMix::Mixed => "mixed",
        }
    }
}

/// Everything a pipeline run needs besides the system configs.
#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub train_size: usize,
    pub train_attack_fraction: f64,
    pub test_size: usize,
    pub test_attack_fraction: f64,
    pub classifier: ClassifierChoice,
    pub attacker_mix: AttackerMix,
    pub root_seed: u64,
    /// csv or jsonl dataset files.
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("attacker error: {0}")]
    Mdp(#[from] MdpError),
    #[error("dataset error: {0}")]
    Dataset(#[from] DatasetError),
    #[error("classifier error: {0}")]
    Ids(#[from] IdsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("attack episodes produce no attack rows; check the attacker spec")]
    NoAttackRows,
    #[error("device traffic produces no rows; check the device specs")]
    NoNormalRows,
    #[error("derived train and test seeds collide; change the root seed")]
    SeedCollision,
}

/// Generates a labelled dataset of exactly `size` rows at the requested
/// attack fraction.
///
/// Normal rows come from pure device-traffic simulations; attack rows from
/// attacker episodes (restarting from full batteries each episode). Both
/// pools are grown until large enough, then mixed and shuffled.
pub fn generate_labelled_dataset(
    config: &SystemConfig,
    size: usize,
    attack_fraction: f64,
    attacker_mix: AttackerMix,
    seed: u64,
) -> Result<Dataset, PipelineError> {
    let need_attack = (size as f64 * attack_fraction).round() as usize;
    let need_normal = size - need_attack;

    // Normal pool: restart the traffic simulation until enough rows.
    let mut normal = Dataset::empty(crate::dataset::TRACE_COLUMNS.iter().map(|c| c.to_string()).collect());
    let mut run = 0u64;
    while normal.len() < need_normal {
        let trace = simulate(
            config,
            stage_seed(seed, &format!("traffic-{run}")),
            StopCondition::MaxSteps((need_normal - normal.len()) as u64),
        );
        let part = encode_trace(&trace, config, stage_seed(seed, &format!("spoof-n-{run}")));
        if part.is_empty() {
            return Err(PipelineError::NoNormalRows);
        }
        normal.rows.extend(part.rows);
        run += 1;
    }

    // Attack pool: episodes against full batteries, under the chosen mix.
    let mut attack = Dataset::empty(normal.columns.clone());
    if need_attack > 0 {
        let policy = match attacker_mix {
            AttackerMix::Optimal | AttackerMix::Mixed => {
                Some(SolvedPolicy::solve(config, CostModel::Time)?)
            }
            AttackerMix::Stealth { kappa } => {
                Some(SolvedPolicy::solve(config, CostModel::Stealth { kappa })?)
            }
            AttackerMix::Stochastic => None,
        };
        let mut episode = 0u64;
        let mut starved = 0u32;
        while attack.attack_count() < need_attack {
            let ep_seed = stage_seed(seed, &format!("episode-{episode}"));
            let use_policy = match attacker_mix {
                AttackerMix::Optimal | AttackerMix::Stealth { .. } => true,
                AttackerMix::Stochastic => false,
                AttackerMix::Mixed => episode % 2 == 0,
            };
            let trace = if use_policy {
                simulate_episode(
                    config,
                    policy.as_ref().expect("policy solved"),
                    ep_seed,
                    StopCondition::UntilExhausted,
                )?
            } else {
                crate::attacker::simulate_attack(
                    config,
                    AttackMode::Stochastic,
                    ep_seed,
                    StopCondition::UntilExhausted,
                )?
            };
            let part = encode_trace(&trace, config, stage_seed(seed, &format!("spoof-a-{episode}")));
            let before = attack.attack_count();
            attack
                .rows
                .extend(part.rows.into_iter().filter(|r| r.label == 1));
            if attack.attack_count() == before {
                starved += 1;
                if starved >= 3 {
                    return Err(PipelineError::NoAttackRows);
                }
            } else {
                starved = 0;
            }
            episode += 1;
        }
    }

    Ok(mix(
        &normal,
        &attack,
        attack_fraction,
        size,
        stage_seed(seed, "mix"),
    )?)
}

/// One dataset's worth of bookkeeping in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSummary {
    pub rows: usize,
    pub attack_rows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

/// The run manifest: inputs, derived seeds, results, and a content hash for
/// every file written. Contains nothing volatile, so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub root_seed: u64,
    pub config_hash: String,
    pub test_config_hash: String,
    pub attacker_mix: String,
    pub stage_seeds: BTreeMap<String, u64>,
    pub train: SplitSummary,
    pub test: SplitSummary,
    pub metrics: BTreeMap<String, Metrics>,
    pub outputs: Vec<OutputRecord>,
}

/// Runs the full experiment: generate, train, evaluate, write everything
/// under `out_dir` and return the manifest (also written as
/// `manifest.json`).
///
/// `test_config` lets the held-out set come from a different system
/// description, e.g. one with extra attack actions withheld from training.
pub fn run_pipeline(
    train_config: &SystemConfig,
    test_config: Option<&SystemConfig>,
    spec: &PipelineSpec,
    out_dir: &Path,
) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let test_config = test_config.unwrap_or(train_config);

    let gen_train_seed = stage_seed(spec.root_seed, "gen-train");
    let gen_test_seed = stage_seed(spec.root_seed, "gen-test");
    if gen_train_seed == gen_test_seed {
        return Err(PipelineError::SeedCollision);
    }

    let train = generate_labelled_dataset(
        train_config,
        spec.train_size,
        spec.train_attack_fraction,
        spec.attacker_mix,
        gen_train_seed,
    )?;
    let test = generate_labelled_dataset(
        test_config,
        spec.test_size,
        spec.test_attack_fraction,
        spec.attacker_mix,
        gen_test_seed,
    )?;

    let mut outputs: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let ext = match spec.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Jsonl => "jsonl",
    };
    outputs.push((
        out_dir.join(format!("train.{ext}")),
        dataset_bytes(&train, spec.format)?,
    ));
    outputs.push((
        out_dir.join(format!("test.{ext}")),
        dataset_bytes(&test, spec.format)?,
    ));

    let truth: Vec<u8> = test.rows.iter().map(|r| r.label).collect();
    let mut metrics: BTreeMap<String, Metrics> = BTreeMap::new();

    let train_tree_too = matches!(spec.classifier, ClassifierChoice::Tree | ClassifierChoice::Both);
    let train_mlp_too = matches!(spec.classifier, ClassifierChoice::Mlp | ClassifierChoice::Both);

    if train_tree_too {
        let model = ModelFile {
            model: ModelKind::Tree(train_tree(&train, &TreeParams::default())?),
            stats: None,
        };
        let m = evaluate(&model.predict(&test)?, &truth)?;
        metrics.insert("tree".to_string(), m);
        outputs.push((out_dir.join("model_tree.json"), model.to_json().into_bytes()));
        outputs.push((
            out_dir.join("metrics_tree.json"),
            serde_json::to_string_pretty(&m).expect("metrics serialize").into_bytes(),
        ));
    }
    if train_mlp_too {
        let (train_std, _, stats) = standardize(&train, &[])?;
        let params = MlpParams {
            seed: stage_seed(spec.root_seed, "mlp-init"),
            ..MlpParams::default()
        };
        let model = ModelFile {
            model: ModelKind::Mlp(train_mlp(&train_std, &params)?),
            stats: Some(stats),
        };
        let m = evaluate(&model.predict(&test)?, &truth)?;
        metrics.insert("mlp".to_string(), m);
        outputs.push((out_dir.join("model_mlp.json"), model.to_json().into_bytes()));
        outputs.push((
            out_dir.join("metrics_mlp.json"),
            serde_json::to_string_pretty(&m).expect("metrics serialize").into_bytes(),
        ));
    }

    let mut records = Vec::new();
    for (path, bytes) in &outputs {
        fs::write(path, bytes)?;
        records.push(OutputRecord {
            path: path
                .file_name()
                .expect("output file name")
                .to_string_lossy()
                .into_owned(),
            sha256: sha256_hex(bytes),
        });
    }

    let mut stage_seeds = BTreeMap::new();
    stage_seeds.insert("gen-train".to_string(), gen_train_seed);
    stage_seeds.insert("gen-test".to_string(), gen_test_seed);
    stage_seeds.insert("mlp-init".to_string(), stage_seed(spec.root_seed, "mlp-init"));

    let manifest = Manifest {
        schema_version: 1,
        root_seed: spec.root_seed,
        config_hash: config_hash(train_config),
        test_config_hash: config_hash(test_config),
        attacker_mix: spec.attacker_mix.name().to_string(),
        stage_seeds,
        train: SplitSummary {
            rows: train.len(),
            attack_rows: train.attack_count(),
            seed: gen_train_seed,
        },
        test: SplitSummary {
            rows: test.len(),
            attack_rows: test.attack_count(),
            seed: gen_test_seed,
        },
        metrics,
        outputs: records,
    };

    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(out_dir.join("manifest.json"), manifest_json)?;
    Ok(manifest)
}

fn dataset_bytes(dataset: &Dataset, format: OutputFormat) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    match format {
        OutputFormat::Csv => write_csv(dataset, &mut buf)?,
        OutputFormat::Jsonl => write_jsonl(dataset, &mut buf)?,
    }
    Ok(buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}
