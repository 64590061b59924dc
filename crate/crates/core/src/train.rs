//! Batch gradient training with Adam, per-epoch logging and checkpoints,
//! model selection per validation scheme, curriculum schedules, and 5-fold
//! cross-validation.
//!
//! One parameter update happens per batch. Every epoch logs the mean loss
//! and the four validation-subset accuracies; training accuracy is logged
//! every three epochs starting from the first. Selection picks the epoch
//! with the best scheme score, tie-breaking by the closest logged training
//! accuracy, then by loss.

use crate::backend::{decide, Answer, BackendConfig, CompiledExample, SemanticBackend};
use crate::dataset::{DatasetBundle, LabeledExample, Scheme};
use crate::metrics::{c_score, PredictionRecord};
use crate::params::{save_checkpoint, CheckpointManifest, ParameterStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurriculumMode {
    Smooth,
    Step,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub enabled: bool,
    pub curriculum_epochs: usize,
    pub mode: CurriculumMode,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig { enabled: false, curriculum_epochs: 30, mode: CurriculumMode::Smooth }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub scheme: Scheme,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
}

impl RunConfig {
    /// Task defaults for the quantum model: lr 0.0005, single-example
    /// batches, epochs per task (75/20/30, 30 for overgeneralisation).
    pub fn quantum_defaults(task: crate::dataset::TaskKind) -> RunConfig {
        use crate::dataset::TaskKind::*;
        let max_epochs = match task {
            Productivity => 75,
            Substitutivity => 20,
            Systematicity => 30,
            Overgeneralisation => 30,
        };
        RunConfig {
            backend: BackendConfig::Quantum(crate::quantum::QuantumConfig::default()),
            learning_rate: 0.0005,
            batch_size: 1,
            max_epochs,
            scheme: Scheme::AB,
            curriculum: CurriculumConfig::default(),
            seed: 0,
            deterministic: true,
        }
    }

    /// Task defaults for the neural model (the tuned Flat configuration:
    /// dimension 12, Mish, lr 0.005, batch 4, 50 epochs).
    pub fn neural_defaults(task: crate::dataset::TaskKind) -> RunConfig {
        use crate::dataset::TaskKind::*;
        let max_epochs = match task {
            Productivity | Substitutivity | Systematicity => 50,
            Overgeneralisation => 50,
        };
        RunConfig {
            backend: BackendConfig::Neural(crate::neural::NeuralConfig::default()),
            learning_rate: 0.005,
            batch_size: 4,
            max_epochs,
            scheme: Scheme::AB,
            curriculum: CurriculumConfig::default(),
            seed: 0,
            deterministic: true,
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub acc_v: f64,
    pub acc_a: f64,
    pub acc_b: f64,
    pub acc_c: f64,
    pub scheme_score: f64,
    /// Present on epochs 1, 4, 7, ...
    pub train_acc: Option<f64>,
    pub checkpoint: String,
}

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}, example {example}")]
    NonFiniteLoss { epoch: usize, batch: usize, example: u64 },
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] crate::params::CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty training set")]
    EmptyTrainSet,
}

/// Standard Adam with bias correction.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, dim: usize) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

pub fn compile_examples(examples: &[LabeledExample]) -> Result<Vec<CompiledExample>, TrainError> {
    examples
        .iter()
        .map(|ex| {
            CompiledExample::compile(ex.id, &ex.story, &ex.question, ex.answer, ex.true_answer())
                .map_err(TrainError::from)
        })
        .collect()
}

/// Accuracy of the backend over compiled examples against their labels.
pub fn accuracy_on(
    backend: &dyn SemanticBackend,
    examples: &[CompiledExample],
    store: &ParameterStore,
) -> f64 {
    if examples.is_empty() {
        return f64::NAN;
    }
    let correct: usize = examples
        .par_iter()
        .map(|ex| match backend.overlap_pair(ex, store) {
            Ok((oy, on)) => usize::from(decide(oy, on) == ex.gold),
            Err(_) => 0,
        })
        .sum();
    correct as f64 / examples.len() as f64
}

/// Prediction records for a compiled split.
pub fn predict_records(
    backend: &dyn SemanticBackend,
    examples: &[CompiledExample],
    meta: &[LabeledExample],
    store: &ParameterStore,
) -> Result<Vec<PredictionRecord>, TrainError> {
    let preds: Result<Vec<Answer>, crate::backend::BackendError> = examples
        .par_iter()
        .map(|ex| backend.overlap_pair(ex, store).map(|(oy, on)| decide(oy, on)))
        .collect();
    let preds = preds?;
    Ok(examples
        .iter()
        .zip(meta)
        .zip(preds)
        .map(|((ex, m), predicted)| PredictionRecord {
            id: ex.id,
            predicted,
            gold: ex.gold,
            truth: ex.truth,
            stratum: m.stratum,
            n_sentences: m.n_sentences,
            support_depth: m.support_depth,
            corrupted: m.corrupted,
        })
        .collect())
}

/// Per-epoch curriculum subsets: strata enter in increasing order across
/// the curriculum window. Step mode adds stratum `k` whole at epoch
/// `k * C / n`; smooth mode ramps its inclusion fraction linearly across
/// the same segment. Epoch numbers are 1-based; from epoch `C + 1` on, the
/// schedule is the identity.
pub fn curriculum_schedule(
    strata_of: &[i32],
    curriculum_epochs: usize,
    mode: CurriculumMode,
    epoch: usize,
) -> Vec<usize> {
    let mut strata: Vec<i32> = strata_of.to_vec();
    strata.sort_unstable();
    strata.dedup();
    let n = strata.len();
    let e0 = epoch.saturating_sub(1); // 0-based
    if n <= 1 || curriculum_epochs == 0 || e0 >= curriculum_epochs {
        return (0..strata_of.len()).collect();
    }
    let seg = curriculum_epochs as f64 / n as f64;
    let mut included = Vec::new();
    for (k, &stratum) in strata.iter().enumerate() {
        let members: Vec<usize> =
            (0..strata_of.len()).filter(|&i| strata_of[i] == stratum).collect();
        if k == 0 {
            included.extend(members);
            continue;
        }
        let start = (k - 1) as f64 * seg;
        let end = k as f64 * seg;
        match mode {
            CurriculumMode::Step => {
                if (e0 as f64) >= end {
                    included.extend(members);
                }
            }
            CurriculumMode::Smooth => {
                let frac = (((e0 as f64) - start + 1.0) / (end - start)).clamp(0.0, 1.0);
                let take = (members.len() as f64 * frac).ceil() as usize;
                included.extend(members.into_iter().take(take));
            }
        }
    }
    included
}

pub struct TrainOutput {
    pub logs: Vec<EpochLog>,
    /// Parameter snapshot per epoch, index 0 = epoch 1.
    pub checkpoints: Vec<ParameterStore>,
    pub init: ParameterStore,
}

fn tie_flag(backend: &BackendConfig) -> bool {
    match backend {
        BackendConfig::Quantum(q) => q.tie_synonyms,
        BackendConfig::Neural(n) => n.tie_synonyms,
    }
}

/// Trains per the run config and returns per-epoch logs and checkpoints.
/// When `out_dir` is set, writes `config.json`, `metrics.csv` and one
/// checkpoint pair per epoch under `checkpoints/`.
pub fn train(
    run: &RunConfig,
    data: &DatasetBundle,
    out_dir: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    if data.train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let backend = run.backend.build();
    let train_c = compile_examples(&data.train)?;
    let valid_v = compile_examples(&data.valid_v)?;
    let valid_a = compile_examples(&data.valid_a)?;
    let valid_b = compile_examples(&data.valid_b)?;
    let valid_c = compile_examples(&data.valid_c)?;
    // The store covers every key in the bundle so later evaluation of any
    // split works from any checkpoint.
    let mut all_compiled: Vec<CompiledExample> = train_c.clone();
    for split in [&valid_v, &valid_a, &valid_b, &valid_c] {
        all_compiled.extend(split.iter().cloned());
    }
    all_compiled.extend(compile_examples(&data.test)?);
    if let Some(tp) = &data.train_prime {
        all_compiled.extend(compile_examples(tp)?);
    }
    let mut store = backend.init_params(&all_compiled, run.seed, tie_flag(&run.backend));
    let dim = store.len_params();
    let mut adam = Adam::new(run.learning_rate, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x9e3779b97f4a7c15);
    let strata_of: Vec<i32> = data.train.iter().map(|e| e.stratum).collect();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(run).unwrap())?;
    }
    let mut csv = String::from(
        "epoch,mean_loss,acc_v,acc_a,acc_b,acc_c,scheme_score,train_acc,checkpoint\n",
    );

    let batch_size = run.batch_size.max(1);
    let mut logs: Vec<EpochLog> = Vec::with_capacity(run.max_epochs);
    let mut checkpoints: Vec<ParameterStore> = Vec::with_capacity(run.max_epochs);
    let init = store.clone();
    for epoch in 1..=run.max_epochs {
        let mut active: Vec<usize> = if run.curriculum.enabled {
            curriculum_schedule(
                &strata_of,
                run.curriculum.curriculum_epochs,
                run.curriculum.mode,
                epoch,
            )
        } else {
            (0..train_c.len()).collect()
        };
        active.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_examples = 0usize;
        let mut flat = store.flatten();
        for (batch_idx, batch) in active.chunks(batch_size).enumerate() {
            let mut grad = vec![0.0; dim];
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &train_c[i];
                let loss = backend.loss_grad(ex, &store, scale, &mut grad)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        example: ex.id,
                    });
                }
                loss_sum += loss;
                n_examples += 1;
            }
            adam.step(&mut flat, &grad);
            store.set_from_flat(&flat);
        }
        let mean_loss = loss_sum / n_examples.max(1) as f64;
        let acc_v = accuracy_on(backend.as_ref(), &valid_v, &store);
        let acc_a = accuracy_on(backend.as_ref(), &valid_a, &store);
        let acc_b = accuracy_on(backend.as_ref(), &valid_b, &store);
        let acc_c = accuracy_on(backend.as_ref(), &valid_c, &store);
        let scheme_score = scheme_score_of(run.scheme, acc_v, acc_a, acc_b, acc_c);
        let train_acc = if (epoch - 1) % 3 == 0 {
            Some(accuracy_on(backend.as_ref(), &train_c, &store))
        } else {
            None
        };
        let name = format!("epoch_{epoch:03}");
        if let Some(dir) = out_dir {
            let manifest = CheckpointManifest {
                backend: backend.config_json(),
                seed: run.seed,
                epoch,
                tie_synonyms: store.tie_synonyms,
                keys: vec![],
                metrics: serde_json::json!({
                    "mean_loss": mean_loss,
                    "acc_v": acc_v, "acc_a": acc_a, "acc_b": acc_b, "acc_c": acc_c,
                    "scheme_score": scheme_score,
                }),
            };
            save_checkpoint(&dir.join("checkpoints"), &name, &manifest, &store)?;
        }
        csv.push_str(&format!(
            "{epoch},{mean_loss},{acc_v},{acc_a},{acc_b},{acc_c},{scheme_score},{},{name}\n",
            train_acc.map(|a| a.to_string()).unwrap_or_default()
        ));
        logs.push(EpochLog {
            epoch,
            mean_loss,
            acc_v,
            acc_a,
            acc_b,
            acc_c,
            scheme_score,
            train_acc,
            checkpoint: name,
        });
        checkpoints.push(store.clone());
    }
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("metrics.csv"), csv)?;
    }
    Ok(TrainOutput { logs, checkpoints, init })
}

/// The score an epoch gets under a validation scheme: plain accuracy for
/// the single-set schemes, the compositionality-score estimate from the
/// two halves for AB and All.
pub fn scheme_score_of(scheme: Scheme, acc_v: f64, acc_a: f64, acc_b: f64, acc_c: f64) -> f64 {
    let est = |a: f64, b: f64| {
        if a.is_nan() || b.is_nan() {
            f64::NAN
        } else {
            c_score(a, b).unwrap_or(f64::NAN)
        }
    };
    match scheme {
        Scheme::V => acc_v,
        Scheme::A => acc_a,
        Scheme::B => acc_b,
        Scheme::C => acc_c,
        Scheme::AB => est(acc_a, acc_b),
        Scheme::All => est(acc_v, acc_c),
    }
}

/// Index of the selected epoch: best scheme score; ties prefer the epoch
/// whose nearest logged training accuracy is closest to its own score,
/// then the lower loss, then the earlier epoch.
pub fn select_model(logs: &[EpochLog], scheme: Scheme) -> Option<usize> {
    if logs.is_empty() {
        return None;
    }
    let score = |l: &EpochLog| scheme_score_of(scheme, l.acc_v, l.acc_a, l.acc_b, l.acc_c);
    let nearest_train_acc = |i: usize| -> Option<f64> {
        let mut best: Option<(usize, f64)> = None;
        for (j, l) in logs.iter().enumerate() {
            if let Some(acc) = l.train_acc {
                let dist = i.abs_diff(j);
                let better = match best {
                    None => true,
                    Some((d, _)) => dist < d,
                };
                if better {
                    best = Some((dist, acc));
                }
            }
        }
        best.map(|(_, a)| a)
    };
    let mut best_idx: Option<usize> = None;
    for i in 0..logs.len() {
        let s = score(&logs[i]);
        if s.is_nan() {
            continue;
        }
        let better = match best_idx {
            None => true,
            Some(b) => {
                let sb = score(&logs[b]);
                if s != sb {
                    s > sb
                } else {
                    // Tie: closest logged training accuracy to the score.
                    let da = nearest_train_acc(i).map(|a| (a - s).abs()).unwrap_or(f64::INFINITY);
                    let db =
                        nearest_train_acc(b).map(|a| (a - sb).abs()).unwrap_or(f64::INFINITY);
                    if da != db {
                        da < db
                    } else {
                        // Then the lower loss; earlier epoch wins last.
                        logs[i].mean_loss < logs[b].mean_loss
                    }
                }
            }
        };
        if better {
            best_idx = Some(i);
        }
    }
    best_idx.or(Some(0))
}

/// Reads `metrics.csv` back into epoch logs, for pure selection replay.
pub fn load_logs_csv(path: &Path) -> Result<Vec<EpochLog>, TrainError> {
    let text = std::fs::read_to_string(path)?;
    let mut logs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            continue;
        }
        let f = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
        logs.push(EpochLog {
            epoch: parts[0].parse().unwrap_or(0),
            mean_loss: f(parts[1]),
            acc_v: f(parts[2]),
            acc_a: f(parts[3]),
            acc_b: f(parts[4]),
            acc_c: f(parts[5]),
            scheme_score: f(parts[6]),
            train_acc: if parts[7].is_empty() { None } else { Some(f(parts[7])) },
            checkpoint: parts[8].to_string(),
        });
    }
    Ok(logs)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub selected_epoch: usize,
    pub acc_train: f64,
    pub acc_test: f64,
    pub c_score: f64,
    pub acc_train_prime: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    pub mean_c_score: f64,
    pub interval95: (f64, f64),
}

/// K-fold cross-validation: each stratum is partitioned into `k` equal
/// folds; fold `i` reserves its share of every stratum for validation and
/// trains on the rest of the train-strata examples.
pub fn cross_validate(
    k: usize,
    run: &RunConfig,
    data: &DatasetBundle,
) -> Result<CrossValReport, TrainError> {
    assert!(k >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0xc5);
    // Re-pool reserved validation data with the train/test splits, then
    // partition per stratum.
    let mut train_pool: Vec<LabeledExample> = data.train.clone();
    train_pool.extend(data.valid_v.iter().cloned());
    let mut test_pool: Vec<LabeledExample> = data.test.clone();
    test_pool.extend(data.valid_c.iter().cloned());
    let mut fold_of: std::collections::BTreeMap<u64, usize> = Default::default();
    for pool in [&train_pool, &test_pool] {
        let mut strata: Vec<i32> = pool.iter().map(|e| e.stratum).collect();
        strata.sort_unstable();
        strata.dedup();
        for stratum in strata {
            let mut ids: Vec<u64> =
                pool.iter().filter(|e| e.stratum == stratum).map(|e| e.id).collect();
            ids.shuffle(&mut rng);
            for (i, id) in ids.into_iter().enumerate() {
                fold_of.insert(id, i % k);
            }
        }
    }
    let mut folds = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    for fold in 0..k {
        let in_fold = |e: &LabeledExample| fold_of.get(&e.id) == Some(&fold);
        let fold_train: Vec<LabeledExample> =
            train_pool.iter().filter(|e| !in_fold(e)).cloned().collect();
        let fold_valid_v: Vec<LabeledExample> =
            train_pool.iter().filter(|e| in_fold(e)).cloned().collect();
        let fold_test: Vec<LabeledExample> =
            test_pool.iter().filter(|e| !in_fold(e)).cloned().collect();
        let fold_valid_c: Vec<LabeledExample> =
            test_pool.iter().filter(|e| in_fold(e)).cloned().collect();
        let (valid_a, valid_b) = crate::dataset::fold_tails(
            &fold_valid_v,
            &fold_valid_c,
            &data.train_strata,
            &data.test_strata,
        );
        let fold_bundle = DatasetBundle {
            train: fold_train,
            valid_v: fold_valid_v,
            valid_a,
            valid_b,
            valid_c: fold_valid_c,
            test: fold_test,
            ..data.clone()
        };
        let mut fold_run = run.clone();
        fold_run.seed = run.seed.wrapping_add(fold as u64);
        let out = train(&fold_run, &fold_bundle, None)?;
        let selected = select_model(&out.logs, run.scheme).unwrap_or(0);
        let store = &out.checkpoints[selected];
        let backend = fold_run.backend.build();
        let train_c = compile_examples(&fold_bundle.train)?;
        let test_c = compile_examples(&fold_bundle.test)?;
        let acc_train = accuracy_on(backend.as_ref(), &train_c, store);
        let acc_test = accuracy_on(backend.as_ref(), &test_c, store);
        let cs = c_score(acc_train, acc_test).unwrap_or(f64::NAN);
        let acc_train_prime = match &data.train_prime {
            Some(tp) => {
                let tp_c = compile_examples(tp)?;
                Some(accuracy_on(backend.as_ref(), &tp_c, store))
            }
            None => None,
        };
        scores.push(cs);
        folds.push(FoldReport {
            fold,
            selected_epoch: out.logs[selected].epoch,
            acc_train,
            acc_test,
            c_score: cs,
            acc_train_prime,
        });
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
        / (scores.len().max(2) - 1) as f64;
    let half = 1.96 * (var / scores.len() as f64).sqrt();
    Ok(CrossValReport { folds, mean_c_score: mean, interval95: (mean - half, mean + half) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunPaths {
    pub root: PathBuf,
    pub checkpoints: PathBuf,
    pub metrics_csv: PathBuf,
    pub config_json: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> RunPaths {
        RunPaths {
            root: root.to_path_buf(),
            checkpoints: root.join("checkpoints"),
            metrics_csv: root.join("metrics.csv"),
            config_json: root.join("config.json"),
        }
    }
}
