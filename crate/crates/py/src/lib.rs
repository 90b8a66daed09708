//! Python bindings: configuration, training on in-memory windows, single
//! window prediction, checkpoint IO, and the evaluation helpers.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use har_core::checkpoint::{load_checkpoint, quantize_params, save_checkpoint, Checkpoint};
use har_core::dataset::{scan_dataset, TimeSeriesRecording};
use har_core::error::Error;
use har_core::eval::{self, Averaging};
use har_core::model::{self, ModelConfig};
use har_core::optim::OptimizerKind;
use har_core::preprocess::{
    apply_normalizer, fit_normalizer_at, one_hot as core_one_hot, segment as core_segment, split,
    Window, WindowedDataset,
};
use har_core::tensor::{self, NumericArray};
use har_core::train::{train, TrainConfig};

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Io { .. } | Error::CorruptCheckpoint { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rows_to_array(rows: &[Vec<f64>]) -> PyResult<NumericArray> {
    NumericArray::matrix(rows).map_err(to_py_err)
}

fn rows_to_window(rows: &[Vec<f64>], label: usize) -> PyResult<Window> {
    Ok(Window { data: rows_to_array(rows)?, label, subject: String::new() })
}

/// Model geometry plus the windowing stride.
#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
    stride: usize,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (window_len=200, channels=9, num_classes=20, *,
        conv1_kernel=60, conv1_channels=60, pool_window=20, pool_stride=2,
        conv2_kernel=6, conv2_channels=60, fc_units=1000, l2_lambda=1e-4,
        stride=100))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        window_len: usize,
        channels: usize,
        num_classes: usize,
        conv1_kernel: usize,
        conv1_channels: usize,
        pool_window: usize,
        pool_stride: usize,
        conv2_kernel: usize,
        conv2_channels: usize,
        fc_units: usize,
        l2_lambda: f64,
        stride: usize,
    ) -> PyResult<Self> {
        let inner = ModelConfig {
            input_len: window_len,
            channels,
            num_classes,
            conv1_kernel,
            conv1_channels,
            pool_window,
            pool_stride,
            conv2_kernel,
            conv2_channels,
            fc_units,
            l2_lambda,
        };
        inner.validate().map_err(to_py_err)?;
        Ok(PyModelConfig { inner, stride })
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(window_len={}, channels={}, num_classes={}, stride={})",
            self.inner.input_len, self.inner.channels, self.inner.num_classes, self.stride
        )
    }
}

/// Output shape of every stage for the given configuration.
#[pyfunction]
fn shape_trace(config: &PyModelConfig) -> PyResult<Vec<(String, Vec<usize>)>> {
    model::shape_trace(&config.inner).map_err(to_py_err)
}

/// A trained classifier bundle: geometry, class names, normalization
/// statistics, and parameters.
#[pyclass(name = "Model")]
struct PyModel {
    ckpt: Checkpoint,
    history: Vec<(usize, f64, f64, f64, f64)>,
}

#[pymethods]
impl PyModel {
    /// Class index and probability vector for one `[window_len][channels]`
    /// list of rows.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<(usize, Vec<f64>)> {
        let window = rows_to_window(&rows, 0)?;
        let (class, probs) =
            eval::predict(&self.ckpt.model, &self.ckpt.params, &self.ckpt.normalizer, &window)
                .map_err(to_py_err)?;
        Ok((class, probs.data().to_vec()))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(
            &path,
            &self.ckpt.model,
            self.ckpt.stride,
            &self.ckpt.class_names,
            &self.ckpt.normalizer,
            &self.ckpt.params,
        )
        .map_err(to_py_err)
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.ckpt.class_names.clone()
    }

    /// Per-epoch `(epoch, train_loss, train_acc, test_loss, test_acc)`.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.history.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(classes={}, window_len={}, channels={})",
            self.ckpt.class_names.len(),
            self.ckpt.model.input_len,
            self.ckpt.model.channels
        )
    }
}

/// Trains on labeled `(rows, label)` windows and returns the fitted model.
#[pyfunction]
#[pyo3(signature = (windows, config, *, epochs=200, batch_size=32,
    learning_rate=1e-3, optimizer="adam", split_ratio=0.7, seed=42,
    class_names=None))]
#[allow(clippy::too_many_arguments)]
fn train_windows(
    windows: Vec<(Vec<Vec<f64>>, usize)>,
    config: &PyModelConfig,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    optimizer: &str,
    split_ratio: f64,
    seed: u64,
    class_names: Option<Vec<String>>,
) -> PyResult<PyModel> {
    let num_classes = config.inner.num_classes;
    let class_names = class_names
        .unwrap_or_else(|| (0..num_classes).map(|i| format!("class_{i}")).collect());
    if class_names.len() != num_classes {
        return Err(PyValueError::new_err(format!(
            "{} class names for a {num_classes}-class model",
            class_names.len()
        )));
    }
    let mut windows: Vec<Window> = windows
        .iter()
        .map(|(rows, label)| rows_to_window(rows, *label))
        .collect::<PyResult<_>>()?;
    let (train_indices, test_indices) =
        split(windows.len(), split_ratio, seed).map_err(to_py_err)?;
    let normalizer = fit_normalizer_at(&windows, &train_indices).map_err(to_py_err)?;
    for w in &mut windows {
        *w = apply_normalizer(w, &normalizer).map_err(to_py_err)?;
    }
    let dataset =
        WindowedDataset { windows, num_classes, normalizer, train_indices, test_indices };
    let train_config = TrainConfig {
        batch_size,
        epochs,
        learning_rate,
        optimizer: OptimizerKind::parse(optimizer).map_err(to_py_err)?,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &config.inner, &train_config).map_err(to_py_err)?;
    let history = outcome
        .history
        .records
        .iter()
        .map(|r| (r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc))
        .collect();
    Ok(PyModel {
        ckpt: Checkpoint {
            model: config.inner.clone(),
            stride: config.stride,
            class_names,
            normalizer: dataset.normalizer,
            params: quantize_params(&outcome.best_params),
        },
        history,
    })
}

/// Loads a checkpoint written by `Model.save` or the `har` CLI.
#[pyfunction]
fn load(path: PathBuf) -> PyResult<PyModel> {
    let ckpt = load_checkpoint(&path).map_err(to_py_err)?;
    Ok(PyModel { ckpt, history: Vec::new() })
}

/// One-hot vector for `label` over `num_classes`.
#[pyfunction]
fn one_hot(label: usize, num_classes: usize) -> PyResult<Vec<f64>> {
    Ok(core_one_hot(label, num_classes).map_err(to_py_err)?.values().data().to_vec())
}

/// Numerically stable softmax of a vector.
#[pyfunction]
fn softmax(values: Vec<f64>) -> PyResult<Vec<f64>> {
    let out = tensor::softmax(&NumericArray::vector(&values)).map_err(to_py_err)?;
    Ok(out.data().to_vec())
}

/// Slices `[T][C]` rows into `[window_len][C]` windows at the given stride.
#[pyfunction]
fn segment(rows: Vec<Vec<f64>>, window_len: usize, stride: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let recording = TimeSeriesRecording {
        samples: rows_to_array(&rows)?,
        subject: String::new(),
        activity: String::new(),
        source_path: PathBuf::new(),
    };
    let windows = core_segment(&recording, window_len, stride, 0).map_err(to_py_err)?;
    Ok(windows
        .iter()
        .map(|w| (0..w.window_len()).map(|t| w.data.row(t).to_vec()).collect())
        .collect())
}

/// Confusion matrix (rows = true class) from parallel label lists.
#[pyfunction]
fn confusion_matrix(
    predicted: Vec<usize>,
    truth: Vec<usize>,
    num_classes: usize,
) -> PyResult<Vec<Vec<u64>>> {
    let names: Vec<String> = (0..num_classes).map(|i| format!("class_{i}")).collect();
    let cm = eval::confusion(&predicted, &truth, names).map_err(to_py_err)?;
    Ok((0..num_classes)
        .map(|i| (0..num_classes).map(|j| cm.count(i, j)).collect())
        .collect())
}

/// Accuracy/precision/recall/F1 of a confusion matrix under `averaging`
/// (weighted, macro, or micro).
#[pyfunction]
#[pyo3(signature = (counts, averaging="weighted"))]
fn metrics(counts: Vec<Vec<u64>>, averaging: &str) -> PyResult<HashMap<String, f64>> {
    let k = counts.len();
    let names: Vec<String> = (0..k).map(|i| format!("class_{i}")).collect();
    let mut cm = eval::ConfusionMatrix::new(names).map_err(to_py_err)?;
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(PyValueError::new_err("confusion matrix must be square"));
        }
        for (j, &n) in row.iter().enumerate() {
            for _ in 0..n {
                cm.record(i, j).map_err(to_py_err)?;
            }
        }
    }
    let report = eval::metrics(&cm, Averaging::parse(averaging).map_err(to_py_err)?)
        .map_err(to_py_err)?;
    Ok(HashMap::from([
        ("accuracy".to_string(), report.accuracy),
        ("precision".to_string(), report.precision),
        ("recall".to_string(), report.recall),
        ("f1".to_string(), report.f1),
    ]))
}

/// Lists `(path, subject, activity)` for every recording under a dataset
/// tree.
#[pyfunction]
#[pyo3(name = "scan_dataset")]
fn scan_dataset_py(root: PathBuf) -> PyResult<Vec<(String, String, String)>> {
    let manifest = scan_dataset(&root).map_err(to_py_err)?;
    Ok(manifest
        .entries
        .iter()
        .map(|e| (e.path.display().to_string(), e.subject.clone(), e.activity.clone()))
        .collect())
}

#[pymodule]
fn har_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(shape_trace, m)?)?;
    m.add_function(wrap_pyfunction!(train_windows, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(one_hot, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(scan_dataset_py, m)?)?;
    Ok(())
}
