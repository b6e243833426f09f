//! Train / evaluate / match workflows shared by the binary and the tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{split_dataset, Dataset, LabeledExample, Splits, Vocabularies};
use crate::ec_encoder::token_vocabulary;
use crate::error::{EnrollError, Result};
use crate::matcher::{MatchResult, Matcher};
use crate::model::{Model, ModelConfig, ModelSpec};
use crate::nir::Nir;
use crate::numkernel::ParameterStore;
use crate::trainer::{evaluate, fit_with, EpochLog, FitResult, MetricsReport, Scored, TrainConfig};

pub const SPEC_FILE: &str = "model.json";
pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.csv";

/// Everything that determines a training run. `train.seed` drives the
/// patient split, initialization, shuffling and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Vocabularies from the training patients, tokens from the training
/// statements.
pub fn build_spec(ds: &Dataset, train: &[LabeledExample], config: ModelConfig) -> Result<ModelSpec> {
    let mut statements = Vec::new();
    for ex in train {
        let trial = ds
            .trial(&ex.trial_id)
            .ok_or_else(|| EnrollError::Validation(format!("unknown trial `{}`", ex.trial_id)))?;
        statements.extend(trial.select(&ex.statement_ids)?);
    }
    Ok(ModelSpec {
        config,
        vocabularies: Vocabularies::from_examples(ds, train),
        tokens: token_vocabulary(statements),
    })
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub params: ParameterStore,
    pub run: RunConfig,
}

impl Trained {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| EnrollError::io(dir, e))?;
        self.model.spec.save(&dir.join(SPEC_FILE))?;
        let run = serde_json::to_string_pretty(&self.run)? + "\n";
        let run_path = dir.join(RUN_FILE);
        std::fs::write(&run_path, run).map_err(|e| EnrollError::io(&run_path, e))?;
        self.params.save(&dir.join(CHECKPOINT_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec = ModelSpec::load(&dir.join(SPEC_FILE))?;
        let run_path = dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&run_path).map_err(|e| EnrollError::io(&run_path, e))?;
        let run: RunConfig = serde_json::from_str(&text)?;
        if run.model != spec.config {
            return Err(EnrollError::Config(format!(
                "{} and {} disagree on the model config",
                RUN_FILE, SPEC_FILE
            )));
        }
        let (model, mut params) = Model::init(spec, run.train.seed)?;
        params.load_into(&dir.join(CHECKPOINT_FILE))?;
        Ok(Self { model, params, run })
    }

    pub fn splits(&self, ds: &Dataset) -> Result<Splits> {
        split_dataset(&ds.examples, self.run.train.seed)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trained: Trained,
    pub splits: Splits,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_dev_accuracy: Option<f64>,
}

pub fn train<F: FnMut(&EpochLog)>(ds: &Dataset, run: &RunConfig, on_epoch: F) -> Result<TrainOutcome> {
    run.train.validate()?;
    let splits = split_dataset(&ds.examples, run.train.seed)?;
    let spec = build_spec(ds, &splits.train, run.model)?;
    let (model, params) = Model::init(spec, run.train.seed)?;
    let FitResult {
        params,
        log,
        best_epoch,
        best_dev_accuracy,
    } = fit_with(&model, params, ds, &splits.train, &splits.validation, &run.train, on_epoch)?;
    Ok(TrainOutcome {
        trained: Trained {
            model,
            params,
            run: *run,
        },
        splits,
        log,
        best_epoch,
        best_dev_accuracy,
    })
}

/// Matches `examples` and scores the final labels. Probabilities (and so
/// PR-AUC) are the neural ones.
pub fn score(
    trained: &Trained,
    nir: &Nir,
    ds: &Dataset,
    examples: &[LabeledExample],
    use_nir: bool,
) -> Result<(Vec<MatchResult>, MetricsReport)> {
    let matcher = Matcher {
        model: &trained.model,
        params: &trained.params,
        nir,
        use_nir,
    };
    let results = matcher.match_all(ds, examples)?;
    let scored: Vec<Scored> = results
        .iter()
        .map(|r| Scored {
            trial_id: r.trial_id.clone(),
            label: r.final_label,
            probs: r.neural.output.probs,
        })
        .collect();
    let gold: Vec<_> = examples.iter().map(|e| e.label).collect();
    let report = evaluate(&scored, &gold)?;
    Ok((results, report))
}
