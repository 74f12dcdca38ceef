//! The end-to-end protocol for one seed: train every requested model, then
//! measure clean, corruption and adversarial accuracy on the test split.

use std::path::Path;

use mocse_corrupt::{CorruptionKind, Manifest};

use crate::data::checkpoint::{encode, TrainState};
use crate::data::config::Config;
use crate::data::Dataset;
use crate::error::Result;
use crate::eval::{
    accuracy, corruption_matrices, robust_accuracy, CorruptionSource, EvalReport, ReportMeta,
    SEVERITIES,
};
use crate::model::{Model, ModelKind};
use crate::par;
use crate::train::{train, EpochRecord, History};

/// One cell of the training matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub kind: ModelKind,
    pub adversarial: bool,
}

impl RunSpec {
    pub fn label(&self) -> String {
        format!(
            "{}-{}",
            self.kind,
            if self.adversarial {
                "adversarial"
            } else {
                "standard"
            }
        )
    }
}

/// The three runs compared at every seed, plus adversarial MoCSE on request.
pub fn default_runs(cfg: &Config) -> Vec<RunSpec> {
    let mut runs = vec![
        RunSpec {
            kind: ModelKind::Standard,
            adversarial: false,
        },
        RunSpec {
            kind: ModelKind::Standard,
            adversarial: true,
        },
        RunSpec {
            kind: ModelKind::Mocse,
            adversarial: false,
        },
    ];
    if cfg.experiment.mocse_adversarial {
        runs.push(RunSpec {
            kind: ModelKind::Mocse,
            adversarial: true,
        });
    }
    runs
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub model: Model<f32>,
    pub history: History,
    pub state: TrainState,
    /// Encoded checkpoint of the final model.
    pub checkpoint: Vec<u8>,
    pub report: EvalReport,
}

/// Progress messages for long runs.
pub enum Progress<'a> {
    Epoch {
        run: &'a RunSpec,
        record: &'a EpochRecord,
    },
    Stage(&'a str),
}

pub fn manifest(cfg: &Config) -> Result<Manifest> {
    Ok(match &cfg.eval.manifest {
        Some(p) => Manifest::load(p)?,
        None => Manifest::builtin().clone(),
    })
}

/// Trains one model of `spec` on `train_set` at `seed`.
pub fn train_run(
    cfg: &Config,
    spec: &RunSpec,
    seed: u64,
    train_set: &Dataset,
    val: Option<&Dataset>,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<(Model<f32>, History, TrainState)> {
    let mc = cfg.model_config(spec.kind, train_set.num_classes(), train_set.image_shape());
    let mut model = Model::init(mc, seed)?;
    let tc = cfg.train_config(seed, spec.adversarial);
    let out = train(
        &mut model,
        train_set,
        val,
        &tc,
        None,
        &mut |record, _, _| {
            progress(Progress::Epoch { run: spec, record });
            Ok(())
        },
    )?;
    Ok((model, out.history, out.state))
}

/// Evaluates several models on `test`, sharing each corrupted cell.
pub fn evaluate(
    cfg: &Config,
    models: &[(&str, &Model<f32>)],
    test: &Dataset,
    seed: u64,
    corrupted_dir: Option<&Path>,
) -> Result<Vec<EvalReport>> {
    let manifest = manifest(cfg)?;
    let corruption_seed = cfg.eval.corruption_seed.unwrap_or(seed);
    let source = match corrupted_dir {
        Some(dir) => CorruptionSource::Directory(dir),
        None => CorruptionSource::OnTheFly {
            manifest: &manifest,
            seed: corruption_seed,
        },
    };
    let refs: Vec<&Model<f32>> = models.iter().map(|(_, m)| *m).collect();
    let matrices = corruption_matrices(
        &refs,
        test,
        source,
        &CorruptionKind::ALL,
        &SEVERITIES,
        par::threads(),
    )?;
    models
        .iter()
        .zip(matrices)
        .map(|((id, m), matrix)| {
            let robust = if cfg.eval.robust {
                let attack = crate::attack::AttackConfig {
                    seed: cfg.attack.seed ^ seed,
                    ..cfg.attack
                };
                Some(robust_accuracy(m, test, &attack)?)
            } else {
                None
            };
            let meta = ReportMeta {
                model_id: id.to_string(),
                model_kind: m.kind(),
                dataset_id: test.id().to_string(),
                manifest_hash: manifest.hash().to_string(),
                seed: corruption_seed,
                num_classes: m.num_classes(),
            };
            EvalReport::new(meta, accuracy(m, test)?, &matrix, robust)
        })
        .collect()
}

/// Trains and evaluates every run of `runs` at `seed`.
pub fn run_seed(
    cfg: &Config,
    seed: u64,
    runs: &[RunSpec],
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<Vec<RunOutcome>> {
    let (train_set, test) = cfg.datasets(seed)?;
    let mut trained = Vec::new();
    for spec in runs {
        progress(Progress::Stage(&format!(
            "seed {seed}: training {}",
            spec.label()
        )));
        trained.push((
            spec,
            train_run(cfg, spec, seed, &train_set, Some(&test), progress)?,
        ));
    }
    progress(Progress::Stage(&format!("seed {seed}: evaluating")));
    let labels: Vec<String> = runs
        .iter()
        .map(|r| format!("{}-seed{seed}", r.label()))
        .collect();
    let models: Vec<(&str, &Model<f32>)> = labels
        .iter()
        .zip(&trained)
        .map(|(l, (_, (m, _, _)))| (l.as_str(), m))
        .collect();
    let reports = evaluate(cfg, &models, &test, seed, None)?;
    Ok(trained
        .into_iter()
        .zip(reports)
        .map(|((spec, (model, history, state)), report)| RunOutcome {
            spec: *spec,
            checkpoint: encode(&model, Some(&state)),
            model,
            history,
            state,
            report,
        })
        .collect())
}
