//! Confusion matrices, aggregate metrics, report artifacts, and
//! checkpoint-driven prediction over directories and single recordings.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::dataset::{scan_dataset, RepairPolicy};
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::preprocess::{apply_normalizer, segment, Normalizer, Window};
use crate::tensor::NumericArray;

/// K x K tally of (true class, predicted class) pairs; rows are true
/// classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::DegenerateInput("confusion matrix needs at least one class".into()));
        }
        let k = class_names.len();
        Ok(ConfusionMatrix { counts: vec![0; k * k], class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.num_classes() + predicted]
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) -> Result<()> {
        let k = self.num_classes();
        if true_class >= k || predicted >= k {
            return Err(Error::UnknownClass(format!(
                "label pair ({true_class}, {predicted}) out of range for {k} classes"
            )));
        }
        self.counts[true_class * k + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        let k = self.num_classes();
        (0..k).map(|i| self.counts[i * k + i]).sum()
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        let k = self.num_classes();
        self.counts[true_class * k..(true_class + 1) * k].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        let k = self.num_classes();
        (0..k).map(|i| self.counts[i * k + predicted]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

/// Builds a confusion matrix from parallel label lists.
pub fn confusion(
    predicted: &[usize],
    truth: &[usize],
    class_names: Vec<String>,
) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} predictions vs {} labels", predicted.len(), truth.len()),
        ));
    }
    let mut cm = ConfusionMatrix::new(class_names)?;
    for (&p, &t) in predicted.iter().zip(truth) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// How per-class metrics aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Class metrics weighted by support, making aggregate recall equal
    /// accuracy for single-label problems.
    #[default]
    Weighted,
    /// Unweighted mean over classes; zero-support classes contribute 0.
    Macro,
    /// Metrics of the pooled counts.
    Micro,
}

impl Averaging {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Averaging::Weighted),
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            other => Err(Error::InvalidConfig(format!(
                "unknown averaging {other:?} (use weighted, macro, or micro)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Averaging::Weighted => "weighted",
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        }
    }
}

/// Per-class precision/recall/F1 plus support.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Aggregate metrics in `[0, 1]` under the tagged averaging mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    pub per_class: Vec<ClassMetrics>,
}

/// Computes the aggregate report from a confusion matrix.
pub fn metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::DegenerateInput("confusion matrix has no observations".into()));
    }
    let k = cm.num_classes();
    let mut per_class = Vec::with_capacity(k);
    for i in 0..k {
        let tp = cm.count(i, i) as f64;
        let col = cm.col_sum(i) as f64;
        let row = cm.row_sum(i) as f64;
        let precision = if col > 0.0 { tp / col } else { 0.0 };
        let recall = if row > 0.0 { tp / row } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics { precision, recall, f1, support: cm.row_sum(i) });
    }
    let accuracy = cm.accuracy();
    let (precision, recall, f1) = match averaging {
        Averaging::Weighted => {
            let weight = |f: &dyn Fn(&ClassMetrics) -> f64| {
                per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
            };
            (weight(&|c| c.precision), weight(&|c| c.recall), weight(&|c| c.f1))
        }
        Averaging::Macro => {
            let mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
                per_class.iter().map(f).sum::<f64>() / k as f64
            };
            (mean(&|c| c.precision), mean(&|c| c.recall), mean(&|c| c.f1))
        }
        Averaging::Micro => {
            let tp = cm.trace() as f64;
            let fp: f64 = (0..k).map(|i| cm.col_sum(i) as f64 - cm.count(i, i) as f64).sum();
            let fn_: f64 = (0..k).map(|i| cm.row_sum(i) as f64 - cm.count(i, i) as f64).sum();
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f)
        }
    };
    Ok(MetricsReport { accuracy, precision, recall, f1, averaging, per_class })
}

/// Confusion matrix paired with its metrics.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Normalizes a raw `[W, C]` window and runs the network. Returns the
/// predicted class (argmax, ties to the lowest index) and the probability
/// vector.
pub fn predict(
    model: &ModelConfig,
    params: &ModelParams,
    normalizer: &Normalizer,
    window: &Window,
) -> Result<(usize, NumericArray)> {
    let normalized = apply_normalizer(window, normalizer)?;
    let pass = forward(model, params, &normalized.to_input())?;
    Ok((argmax(pass.probabilities.data()), pass.probabilities))
}

/// Prediction over windows that are already normalized (the in-memory
/// training representation).
pub fn predict_normalized(
    model: &ModelConfig,
    params: &ModelParams,
    window: &Window,
) -> Result<(usize, NumericArray)> {
    let pass = forward(model, params, &window.to_input())?;
    Ok((argmax(pass.probabilities.data()), pass.probabilities))
}

/// Whether a directory evaluation scores each window or one majority vote
/// per recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    #[default]
    PerWindow,
    /// One decision per recording: the label predicted for the most
    /// windows, ties to the lowest class index.
    TrialMajority,
}

/// Windows, normalizes, and scores every recording under `data_dir`
/// against a loaded checkpoint. Activity names must be a subset of the
/// checkpoint's classes.
pub fn evaluate_directory(
    ckpt: &Checkpoint,
    data_dir: &Path,
    policy: RepairPolicy,
    averaging: Averaging,
    mode: EvalMode,
) -> Result<EvalReport> {
    let manifest = scan_dataset(data_dir)?;
    for name in &manifest.class_names {
        if !ckpt.class_names.contains(name) {
            return Err(Error::UnknownClass(name.clone()));
        }
    }
    let recordings = manifest.load_recordings(policy)?;
    let per_recording: Vec<(Vec<usize>, usize)> = recordings
        .par_iter()
        .map(|rec| -> Result<(Vec<usize>, usize)> {
            let label = ckpt
                .class_names
                .iter()
                .position(|c| c == &rec.activity)
                .ok_or_else(|| Error::UnknownClass(rec.activity.clone()))?;
            let windows = segment(rec, ckpt.model.input_len, ckpt.stride, label)?;
            let preds = windows
                .iter()
                .map(|w| predict(&ckpt.model, &ckpt.params, &ckpt.normalizer, w).map(|(c, _)| c))
                .collect::<Result<Vec<usize>>>()?;
            Ok((preds, label))
        })
        .collect::<Result<_>>()?;

    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (preds, label) in per_recording {
        match mode {
            EvalMode::PerWindow => {
                truth.extend(std::iter::repeat_n(label, preds.len()));
                predicted.extend(preds);
            }
            EvalMode::TrialMajority => {
                if let Some(vote) = majority_label(&preds, ckpt.class_names.len()) {
                    predicted.push(vote);
                    truth.push(label);
                }
            }
        }
    }
    if predicted.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no recording under {} is at least {} samples long",
            data_dir.display(),
            ckpt.model.input_len
        )));
    }
    let cm = confusion(&predicted, &truth, ckpt.class_names.clone())?;
    let report = metrics(&cm, averaging)?;
    Ok(EvalReport { confusion: cm, metrics: report })
}

/// Most frequent label; ties resolve to the lowest class index. `None` for
/// an empty slice.
pub fn majority_label(labels: &[usize], num_classes: usize) -> Option<usize> {
    if labels.is_empty() {
        return None;
    }
    let mut tally = vec![0usize; num_classes];
    for &l in labels {
        tally[l] += 1;
    }
    let mut best = 0;
    for (i, &c) in tally.iter().enumerate().skip(1) {
        if c > tally[best] {
            best = i;
        }
    }
    Some(best)
}

fn csv_escape(name: &str) -> String {
    if name.contains(',') || name.contains('"') {
        format!("\"{}\"", name.replace('"', "\"\""))
    } else {
        name.to_string()
    }
}

/// Writes `confusion.csv`, `metrics.csv`, and `confusion.txt` under
/// `out_dir` and returns the written paths.
pub fn render_report(
    cm: &ConfusionMatrix,
    report: &MetricsReport,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if cm.class_names.is_empty() {
        return Err(Error::DegenerateInput("no class names to render".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let k = cm.num_classes();

    let confusion_path = out_dir.join("confusion.csv");
    {
        let mut body = String::from("true\\pred");
        for name in &cm.class_names {
            body.push(',');
            body.push_str(&csv_escape(name));
        }
        body.push('\n');
        for i in 0..k {
            body.push_str(&csv_escape(&cm.class_names[i]));
            for j in 0..k {
                body.push_str(&format!(",{}", cm.count(i, j)));
            }
            body.push('\n');
        }
        fs::write(&confusion_path, body).map_err(|e| Error::io(&confusion_path, e))?;
    }

    let metrics_path = out_dir.join("metrics.csv");
    {
        let mut body = String::from("name,value\n");
        body.push_str(&format!("averaging,{}\n", report.averaging.as_str()));
        body.push_str(&format!("accuracy,{}\n", report.accuracy));
        body.push_str(&format!("precision,{}\n", report.precision));
        body.push_str(&format!("recall,{}\n", report.recall));
        body.push_str(&format!("f1,{}\n", report.f1));
        for (name, c) in cm.class_names.iter().zip(&report.per_class) {
            let esc = csv_escape(name);
            body.push_str(&format!("precision_{esc},{}\n", c.precision));
            body.push_str(&format!("recall_{esc},{}\n", c.recall));
            body.push_str(&format!("f1_{esc},{}\n", c.f1));
            body.push_str(&format!("support_{esc},{}\n", c.support));
        }
        fs::write(&metrics_path, body).map_err(|e| Error::io(&metrics_path, e))?;
    }

    let heat_path = out_dir.join("confusion.txt");
    {
        let ramp: &[u8] = b" .:-=+*#%@";
        let max = cm.counts.iter().copied().max().unwrap_or(0).max(1);
        let label_width = cm.class_names.iter().map(String::len).max().unwrap_or(0).max(4);
        let mut body = String::new();
        body.push_str(&format!(
            "{:label_width$} | predicted ->\n",
            "true",
            label_width = label_width
        ));
        for i in 0..k {
            body.push_str(&format!("{:label_width$} | ", cm.class_names[i], label_width = label_width));
            for j in 0..k {
                let c = cm.count(i, j);
                let idx = if c == 0 {
                    0
                } else {
                    let scaled = (c as f64 / max as f64 * (ramp.len() - 1) as f64).ceil() as usize;
                    scaled.clamp(1, ramp.len() - 1)
                };
                body.push(ramp[idx] as char);
            }
            body.push('\n');
        }
        body.push_str(&format!(
            "scale: blank=0, '{}'=max ({max}); accuracy {:.4}\n",
            ramp[ramp.len() - 1] as char,
            report.accuracy
        ));
        fs::write(&heat_path, body).map_err(|e| Error::io(&heat_path, e))?;
    }

    Ok(vec![confusion_path, metrics_path, heat_path])
}

/// Parses a `confusion.csv` written by [`render_report`].
pub fn parse_confusion_csv(path: &Path) -> Result<ConfusionMatrix> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines();
    let header = lines.next().ok_or_else(|| Error::DegenerateInput("empty confusion csv".into()))?;
    let names: Vec<String> = split_csv(header).into_iter().skip(1).collect();
    if names.is_empty() {
        return Err(Error::DegenerateInput("confusion csv has no classes".into()));
    }
    let mut cm = ConfusionMatrix::new(names.clone())?;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_csv(line);
        if cells.len() != names.len() + 1 {
            return Err(Error::DegenerateInput(format!(
                "row {} has {} cells, expected {}",
                i + 1,
                cells.len(),
                names.len() + 1
            )));
        }
        if i >= names.len() {
            return Err(Error::DegenerateInput("more rows than classes".into()));
        }
        for (j, cell) in cells.iter().skip(1).enumerate() {
            let count: u64 = cell.parse().map_err(|_| {
                Error::DegenerateInput(format!("bad count {cell:?} at row {}", i + 1))
            })?;
            cm.counts[i * names.len() + j] = count;
        }
    }
    Ok(cm)
}

fn split_csv(line: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if in_quotes && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => {
                cells.push(std::mem::take(&mut cur));
            }
            _ => cur.push(c),
        }
    }
    cells.push(cur);
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn confusion_hand_tally() {
        let cm = confusion(&[0, 1], &[1, 1], names(2)).unwrap();
        assert_eq!(cm.count(1, 0), 1);
        assert_eq!(cm.count(1, 1), 1);
        assert_eq!(cm.count(0, 0), 0);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn confusion_rejects_out_of_range() {
        assert!(matches!(
            confusion(&[2], &[0], names(2)),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], names(3)).unwrap();
        assert_eq!(cm.trace(), 4);
        let m = metrics(&cm, Averaging::Weighted).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn metrics_hand_arithmetic() {
        // [[3,1],[2,4]]: accuracy 0.7, weighted recall 0.7, weighted
        // precision (4*(3/5) + 6*(4/5)) / 10 = 0.72
        let mut cm = ConfusionMatrix::new(names(2)).unwrap();
        for (t, p, n) in [(0, 0, 3), (0, 1, 1), (1, 0, 2), (1, 1, 4)] {
            for _ in 0..n {
                cm.record(t, p).unwrap();
            }
        }
        let m = metrics(&cm, Averaging::Weighted).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-15);
        assert!((m.recall - 0.7).abs() < 1e-15);
        assert!((m.precision - 0.72).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_is_degenerate() {
        let cm = ConfusionMatrix::new(names(2)).unwrap();
        assert!(matches!(metrics(&cm, Averaging::Weighted), Err(Error::DegenerateInput(_))));
        assert!(matches!(ConfusionMatrix::new(vec![]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn per_class_metrics_stay_in_unit_interval() {
        let cm = confusion(&[0, 0, 1, 2, 2, 0], &[0, 1, 1, 2, 0, 2], names(3)).unwrap();
        let m = metrics(&cm, Averaging::Macro).unwrap();
        for c in &m.per_class {
            for v in [c.precision, c.recall, c.f1] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(c.f1 <= c.precision.max(c.recall) + 1e-15);
        }
    }

    #[test]
    fn majority_vote_breaks_ties_low() {
        assert_eq!(majority_label(&[2, 1, 1, 2], 3), Some(1));
        assert_eq!(majority_label(&[0, 1, 1], 2), Some(1));
        assert_eq!(majority_label(&[], 2), None);
    }

    #[test]
    fn report_files_round_trip() {
        let cm = confusion(&[0, 1, 1, 0, 1], &[0, 1, 0, 0, 1], names(2)).unwrap();
        let m = metrics(&cm, Averaging::Weighted).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = render_report(&cm, &m, dir.path()).unwrap();
        assert_eq!(files.len(), 3);

        let confusion_body = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(confusion_body.lines().count(), 3); // header + 2 rows

        let parsed = parse_confusion_csv(&files[0]).unwrap();
        assert_eq!(parsed, cm);

        let metrics_body = fs::read_to_string(&files[1]).unwrap();
        assert!(metrics_body.starts_with("name,value\n"));
        assert!(metrics_body.contains(&format!("accuracy,{}", m.accuracy)));

        let heat = fs::read_to_string(&files[2]).unwrap();
        assert!(heat.lines().count() >= 3);
    }

    #[test]
    fn csv_quoting_round_trips() {
        let tricky = vec!["a,b".to_string(), "plain".to_string()];
        let cm = confusion(&[0, 1], &[0, 1], tricky).unwrap();
        let m = metrics(&cm, Averaging::Weighted).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = render_report(&cm, &m, dir.path()).unwrap();
        let parsed = parse_confusion_csv(&files[0]).unwrap();
        assert_eq!(parsed, cm);
    }
}
