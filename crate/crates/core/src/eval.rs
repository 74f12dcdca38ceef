//! Clean, corruption and adversarial accuracy, their averages, and reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mocse_corrupt::{apply_with_manifest, CorruptionKind, CorruptionSpec, Family, Image, Manifest};
use serde::{Deserialize, Serialize};

use crate::attack::{attack_objective, pgd_traced, AttackConfig};
use crate::data::ppm::{read_ppm, write_ppm};
use crate::data::{stack, Dataset};
use crate::error::{invalid, io_err, CoreError, Result};
use crate::model::{argmax, Model, ModelKind};
use crate::par;

pub const SEVERITIES: [u8; 5] = [1, 2, 3, 4, 5];
pub const NUM_CORRUPTIONS: usize = CorruptionKind::ALL.len();
/// Images per forward pass during evaluation.
pub const EVAL_BATCH: usize = 100;
pub const REPORT_VERSION: u32 = 1;

/// Predicted class (arg-max score, ties to the lower index) per image.
pub fn predict(model: &Model<f32>, images: &[Image]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let logits = model.logits(&stack(chunk)?)?;
        out.extend(logits.data().chunks(model.num_classes()).map(argmax));
    }
    Ok(out)
}

/// Fraction of predictions equal to their label.
pub fn accuracy_of(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(invalid("accuracy of an empty dataset"));
    }
    if predictions.len() != labels.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn accuracy(model: &Model<f32>, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("accuracy of an empty dataset"));
    }
    accuracy_of(&predict(model, dataset.images())?, dataset.labels())
}

/// Where corrupted test images come from. Both sources yield 8-bit
/// quantized images, so they agree bitwise.
#[derive(Debug, Clone, Copy)]
pub enum CorruptionSource<'a> {
    /// Corrupt image `i` with stream `(seed, i)` and quantize.
    OnTheFly { manifest: &'a Manifest, seed: u64 },
    /// Read `<dir>/<kind>/<severity>/<i>.ppm`.
    Directory(&'a Path),
}

/// Path of image `index` in an exported corruption tree.
pub fn export_path(dir: &Path, kind: CorruptionKind, severity: u8, index: usize) -> PathBuf {
    dir.join(kind.name())
        .join(severity.to_string())
        .join(format!("{index}.ppm"))
}

/// The corrupted copy of every image of `dataset` for one cell.
pub fn corrupted_images(
    dataset: &Dataset,
    source: CorruptionSource<'_>,
    kind: CorruptionKind,
    severity: u8,
) -> Result<Vec<Image>> {
    match source {
        CorruptionSource::OnTheFly { manifest, seed } => {
            let spec = CorruptionSpec::new(kind, severity, seed)?;
            dataset
                .images()
                .iter()
                .enumerate()
                .map(|(i, im)| Ok(apply_with_manifest(im, &spec, i as u64, manifest)?.quantized()))
                .collect()
        }
        CorruptionSource::Directory(dir) => (0..dataset.len())
            .map(|i| {
                let path = export_path(dir, kind, severity, i);
                let im = read_ppm(&path)?;
                if im.shape() != dataset.image_shape() {
                    return Err(CoreError::Format {
                        path,
                        msg: format!(
                            "shape {:?}, dataset has {:?}",
                            im.shape(),
                            dataset.image_shape()
                        ),
                    });
                }
                Ok(im)
            })
            .collect(),
    }
}

/// Writes the corrupted copies of `dataset` as a PPM tree under `dir`
/// (see [`export_path`]), one cell per worker.
pub fn export_corruptions(
    dataset: &Dataset,
    manifest: &Manifest,
    seed: u64,
    dir: &Path,
    kinds: &[CorruptionKind],
    severities: &[u8],
    threads: usize,
) -> Result<()> {
    let cells: Vec<(CorruptionKind, u8)> = kinds
        .iter()
        .flat_map(|&k| severities.iter().map(move |&s| (k, s)))
        .collect();
    par::map(&cells, threads, |&(kind, s)| -> Result<()> {
        let images = corrupted_images(
            dataset,
            CorruptionSource::OnTheFly { manifest, seed },
            kind,
            s,
        )?;
        let sub = dir.join(kind.name()).join(s.to_string());
        std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        for (i, im) in images.iter().enumerate() {
            write_ppm(export_path(dir, kind, s, i), im)?;
        }
        Ok(())
    })
    .into_iter()
    .collect()
}

/// Accuracy matrices `[model][kind][severity]` over the given cells. Each
/// cell is corrupted once and shared by all models; cells run on
/// `threads` workers.
pub fn corruption_matrices(
    models: &[&Model<f32>],
    dataset: &Dataset,
    source: CorruptionSource<'_>,
    kinds: &[CorruptionKind],
    severities: &[u8],
    threads: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if dataset.is_empty() {
        return Err(invalid("corruption evaluation of an empty dataset"));
    }
    let cells: Vec<(usize, usize)> = (0..kinds.len())
        .flat_map(|k| (0..severities.len()).map(move |s| (k, s)))
        .collect();
    let results = par::map(&cells, threads, |&(k, s)| -> Result<Vec<f64>> {
        let images = corrupted_images(dataset, source, kinds[k], severities[s])?;
        models
            .iter()
            .map(|m| accuracy_of(&predict(m, &images)?, dataset.labels()))
            .collect()
    });
    let mut out = vec![vec![vec![0.0; severities.len()]; kinds.len()]; models.len()];
    for (&(k, s), r) in cells.iter().zip(results) {
        for (m, acc) in r?.into_iter().enumerate() {
            out[m][k][s] = acc;
        }
    }
    Ok(out)
}

/// The full 19 x 5 matrix for one model.
pub fn corruption_matrix(
    model: &Model<f32>,
    dataset: &Dataset,
    source: CorruptionSource<'_>,
) -> Result<Vec<Vec<f64>>> {
    Ok(corruption_matrices(
        &[model],
        dataset,
        source,
        &CorruptionKind::ALL,
        &SEVERITIES,
        par::threads(),
    )?
    .remove(0))
}

/// Mean over the five severities of each corruption.
pub fn per_corruption_average(matrix: &[Vec<f64>]) -> Result<Vec<f64>> {
    if matrix.len() != NUM_CORRUPTIONS || matrix.iter().any(|r| r.len() != SEVERITIES.len()) {
        let cols: Vec<usize> = matrix.iter().map(Vec::len).collect();
        return Err(invalid(format!(
            "expected a {NUM_CORRUPTIONS}x5 matrix, got rows of lengths {cols:?}"
        )));
    }
    Ok(matrix
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect())
}

/// Mean of the per-corruption averages, every corruption weighted equally.
pub fn overall_average(per_corruption: &[f64]) -> Result<f64> {
    if per_corruption.len() != NUM_CORRUPTIONS {
        return Err(invalid(format!(
            "expected {NUM_CORRUPTIONS} per-corruption values, got {}",
            per_corruption.len()
        )));
    }
    Ok(per_corruption.iter().sum::<f64>() / NUM_CORRUPTIONS as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustResult {
    pub attack: AttackConfig,
    /// Accuracy on the attacked copies.
    pub accuracy: f64,
    /// Mean attack objective: confidence of the true (or target) class.
    pub objective: f64,
}

/// Accuracy under PGD. Sample `i` uses random-start stream `(seed, i)`.
pub fn robust_accuracy(
    model: &Model<f32>,
    dataset: &Dataset,
    cfg: &AttackConfig,
) -> Result<RobustResult> {
    if dataset.is_empty() {
        return Err(invalid("robust accuracy of an empty dataset"));
    }
    let mut preds = Vec::with_capacity(dataset.len());
    let mut objective = 0.0;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for (c, idx) in indices.chunks(EVAL_BATCH).enumerate() {
        let (x, y) = dataset.batch::<f32>(idx)?;
        let adv = pgd_traced(model, &x, &y, cfg, (c * EVAL_BATCH) as u64, false)?.adversarial;
        let logits = model.logits(&adv)?;
        preds.extend(logits.data().chunks(model.num_classes()).map(argmax));
        objective += attack_objective(model, &adv, &y, cfg.target)?
            .iter()
            .sum::<f64>();
    }
    Ok(RobustResult {
        attack: *cfg,
        accuracy: accuracy_of(&preds, dataset.labels())?,
        objective: objective / dataset.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionRow {
    pub kind: String,
    /// Accuracy at severities 1..=5.
    pub accuracy: Vec<f64>,
    /// Mean of `accuracy`.
    pub average: f64,
}

/// Everything measured for one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format_version: u32,
    pub model_id: String,
    pub model_kind: ModelKind,
    pub dataset_id: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub num_classes: usize,
    pub clean_acc: f64,
    /// Mean of the per-corruption averages.
    pub overall_avg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust: Option<RobustResult>,
    pub corruption: Vec<CorruptionRow>,
}

/// Identifies what a report was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub model_id: String,
    pub model_kind: ModelKind,
    pub dataset_id: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub num_classes: usize,
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl EvalReport {
    pub fn new(
        meta: ReportMeta,
        clean_acc: f64,
        matrix: &[Vec<f64>],
        robust: Option<RobustResult>,
    ) -> Result<Self> {
        let per = per_corruption_average(matrix)?;
        let report = Self {
            format_version: REPORT_VERSION,
            model_id: meta.model_id,
            model_kind: meta.model_kind,
            dataset_id: meta.dataset_id,
            manifest_hash: meta.manifest_hash,
            seed: meta.seed,
            num_classes: meta.num_classes,
            clean_acc,
            overall_avg: overall_average(&per)?,
            robust,
            corruption: CorruptionKind::ALL
                .iter()
                .zip(matrix)
                .zip(&per)
                .map(|((k, row), &average)| CorruptionRow {
                    kind: k.name().to_string(),
                    accuracy: row.clone(),
                    average,
                })
                .collect(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.corruption.iter().map(|r| r.accuracy.clone()).collect()
    }

    pub fn per_corruption(&self) -> Vec<f64> {
        self.corruption.iter().map(|r| r.average).collect()
    }

    /// Checks ranges, row order, and that the stored averages match a
    /// recomputation from the matrix within 1e-9.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != REPORT_VERSION {
            return Err(invalid(format!(
                "report format version {}, expected {REPORT_VERSION}",
                self.format_version
            )));
        }
        if self.corruption.len() != NUM_CORRUPTIONS {
            return Err(invalid(format!(
                "report has {} corruption rows",
                self.corruption.len()
            )));
        }
        for (row, kind) in self.corruption.iter().zip(CorruptionKind::ALL) {
            if row.kind != kind.name() {
                return Err(invalid(format!(
                    "corruption row `{}` where `{}` was expected",
                    row.kind,
                    kind.name()
                )));
            }
        }
        let matrix = self.matrix();
        let per = per_corruption_average(&matrix)?;
        let overall = overall_average(&per)?;
        let mut values = vec![self.clean_acc, self.overall_avg];
        values.extend(matrix.iter().flatten());
        values.extend(&per);
        if let Some(r) = &self.robust {
            values.extend([r.accuracy, r.objective]);
        }
        if values.iter().any(|&v| !in_unit(v)) {
            return Err(invalid("report value outside [0, 1]"));
        }
        for (row, p) in self.corruption.iter().zip(&per) {
            if (row.average - p).abs() > 1e-9 {
                return Err(invalid(format!(
                    "stored average of `{}` is {}, matrix gives {p}",
                    row.kind, row.average
                )));
            }
        }
        if (self.overall_avg - overall).abs() > 1e-9 {
            return Err(invalid(format!(
                "stored overall average {} but matrix gives {overall}",
                self.overall_avg
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(format!("serializing report: {e}")))
    }

    /// Parses and validates a report.
    pub fn from_toml(text: &str) -> Result<Self> {
        let r: EvalReport =
            toml::from_str(text).map_err(|e| invalid(format!("parsing report: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| CoreError::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

/// Writes the report to `path` (TOML) with a fixed-width table and a CSV
/// next to it (`.txt`, `.csv`).
pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = report.to_toml()?;
    std::fs::write(path, text).map_err(io_err(path))?;
    let cols = [(report.model_id.as_str(), report)];
    let txt = path.with_extension("txt");
    std::fs::write(&txt, comparison_table(&cols)?).map_err(io_err(&txt))?;
    let csv = path.with_extension("csv");
    std::fs::write(&csv, comparison_csv(&cols)?).map_err(io_err(&csv))
}

struct Line {
    group: &'static str,
    label: String,
    values: Vec<f64>,
}

fn lines(columns: &[(&str, &EvalReport)]) -> Result<Vec<Line>> {
    let Some((_, first)) = columns.first() else {
        return Err(invalid("no reports to tabulate"));
    };
    if let Some((name, r)) = columns
        .iter()
        .find(|(_, r)| r.num_classes != first.num_classes)
    {
        return Err(invalid(format!(
            "report `{name}` has {} classes, the first has {}",
            r.num_classes, first.num_classes
        )));
    }
    for (_, r) in columns {
        r.validate()?;
    }
    let mut out = vec![Line {
        group: "",
        label: "Natural Samples".into(),
        values: columns.iter().map(|(_, r)| r.clean_acc).collect(),
    }];
    for (i, kind) in CorruptionKind::ALL.iter().enumerate() {
        out.push(Line {
            group: kind.family().name(),
            label: kind.title().into(),
            values: columns
                .iter()
                .map(|(_, r)| r.corruption[i].average)
                .collect(),
        });
    }
    out.push(Line {
        group: "",
        label: format!("Average of {NUM_CORRUPTIONS} Corruptions"),
        values: columns.iter().map(|(_, r)| r.overall_avg).collect(),
    });
    if columns.iter().all(|(_, r)| r.robust.is_some()) {
        out.push(Line {
            group: "",
            label: "PGD Robust".into(),
            values: columns
                .iter()
                .map(|(_, r)| r.robust.as_ref().map_or(0.0, |x| x.accuracy))
                .collect(),
        });
    }
    Ok(out)
}

/// Side-by-side accuracy table grouped by corruption family. The best cell
/// of each row is starred; later columns show their difference from the
/// first in percentage points.
pub fn comparison_table(columns: &[(&str, &EvalReport)]) -> Result<String> {
    let rows = lines(columns)?;
    let label_w = 28;
    let col_w = columns
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max(18);
    let mut s = String::new();
    let _ = write!(s, "{:<8} {:<label_w$}", "", "");
    for (name, _) in columns {
        let _ = write!(s, " | {name:>col_w$}");
    }
    s.push('\n');
    let rule = "-".repeat(8 + 1 + label_w + columns.len() * (col_w + 3));
    let mut last_group = "?";
    for line in &rows {
        if line.group != last_group {
            s.push_str(&rule);
            s.push('\n');
        }
        let group = if line.group != last_group {
            line.group
        } else {
            ""
        };
        last_group = line.group;
        let best = line
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let _ = write!(s, "{group:<8} {:<label_w$}", line.label);
        for (i, &v) in line.values.iter().enumerate() {
            let star = if v == best { "*" } else { " " };
            let cell = if i == 0 {
                format!("{:.2}%{star}", 100.0 * v)
            } else {
                format!(
                    "{:.2}%{star} ({:+.2})",
                    100.0 * v,
                    100.0 * (v - line.values[0])
                )
            };
            let _ = write!(s, " | {cell:>col_w$}");
        }
        s.push('\n');
    }
    s.push_str(&rule);
    s.push('\n');
    Ok(s)
}

/// CSV form of [`comparison_table`]: accuracies in percent, one column per
/// report, then the difference of each later column from the first.
pub fn comparison_csv(columns: &[(&str, &EvalReport)]) -> Result<String> {
    let rows = lines(columns)?;
    let mut s = String::from("group,row");
    for (name, _) in columns {
        let _ = write!(s, ",{name}");
    }
    for (name, _) in &columns[1..] {
        let _ = write!(s, ",delta_{name}");
    }
    s.push('\n');
    for line in &rows {
        let _ = write!(s, "{},{}", line.group, line.label);
        for v in &line.values {
            let _ = write!(s, ",{:.4}", 100.0 * v);
        }
        for v in &line.values[1..] {
            let _ = write!(s, ",{:.4}", 100.0 * (v - line.values[0]));
        }
        s.push('\n');
    }
    Ok(s)
}

/// Families in table order with their member kinds.
pub fn families() -> Vec<(Family, Vec<CorruptionKind>)> {
    let mut out: Vec<(Family, Vec<CorruptionKind>)> = Vec::new();
    for k in CorruptionKind::ALL {
        match out.last_mut() {
            Some((f, ks)) if *f == k.family() => ks.push(k),
            _ => out.push((k.family(), vec![k])),
        }
    }
    out
}
