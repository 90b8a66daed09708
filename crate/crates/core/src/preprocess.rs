//! Windowing, normalization, class targets, and the train/test split.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::dataset::TimeSeriesRecording;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::NumericArray;

/// Magic of the binary windowed-dataset export.
pub const WINDOWS_MAGIC: &[u8; 4] = b"HARW";
/// Current version of the windowed-dataset export format.
pub const WINDOWS_VERSION: u32 = 1;

const STD_FLOOR: f64 = 1e-8;

/// One fixed-length slice of a recording.
#[derive(Debug, Clone)]
pub struct Window {
    /// Row-major `[W, C]` sample matrix.
    pub data: NumericArray,
    /// Class index in `0..num_classes`.
    pub label: usize,
    pub subject: String,
}

impl Window {
    pub fn window_len(&self) -> usize {
        self.data.rows()
    }

    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    /// Transpose into the `[C, W]` layout the network consumes.
    pub fn to_input(&self) -> NumericArray {
        let (w, c) = (self.data.rows(), self.data.cols());
        let mut out = vec![0.0; w * c];
        for t in 0..w {
            let row = self.data.row(t);
            for (ch, &v) in row.iter().enumerate() {
                out[ch * w + t] = v;
            }
        }
        NumericArray::from_vec_unchecked(&[c, w], out)
    }
}

/// Per-channel z-score statistics fit on the training partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    /// Always >= 1e-8.
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Identity transform for `c` channels.
    pub fn identity(c: usize) -> Self {
        Normalizer { mean: vec![0.0; c], std: vec![1.0; c] }
    }
}

/// Labeled windows with normalization statistics and a train/test split.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub windows: Vec<Window>,
    pub num_classes: usize,
    pub normalizer: Normalizer,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl WindowedDataset {
    /// Validates the split invariants: disjoint, covering, in range.
    pub fn validate(&self) -> Result<()> {
        let n = self.windows.len();
        let mut seen = vec![false; n];
        for &i in self.train_indices.iter().chain(&self.test_indices) {
            if i >= n {
                return Err(Error::InvalidConfig(format!("split index {i} out of range {n}")));
            }
            if seen[i] {
                return Err(Error::InvalidConfig(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidConfig("split does not cover all windows".into()));
        }
        for w in &self.windows {
            if w.label >= self.num_classes {
                return Err(Error::UnknownClass(format!(
                    "label {} out of range for {} classes",
                    w.label, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn train_windows(&self) -> impl Iterator<Item = &Window> {
        self.train_indices.iter().map(|&i| &self.windows[i])
    }

    pub fn test_windows(&self) -> impl Iterator<Item = &Window> {
        self.test_indices.iter().map(|&i| &self.windows[i])
    }
}

/// Cuts `recording` into `[window_len, C]` windows at offsets
/// `0, stride, 2*stride, ...`; recordings shorter than one window yield
/// an empty list.
pub fn segment(
    recording: &TimeSeriesRecording,
    window_len: usize,
    stride: usize,
    label: usize,
) -> Result<Vec<Window>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::InvalidConfig("segment: window_len and stride must be >= 1".into()));
    }
    let t = recording.num_samples();
    let c = recording.num_channels();
    if t < window_len {
        return Ok(Vec::new());
    }
    let count = (t - window_len) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut data = Vec::with_capacity(window_len * c);
        for row in start..start + window_len {
            data.extend_from_slice(recording.samples.row(row));
        }
        out.push(Window {
            data: NumericArray::from_vec(&[window_len, c], data)?,
            label,
            subject: recording.subject.clone(),
        });
    }
    Ok(out)
}

/// Two-pass per-channel mean and population standard deviation over the
/// windows selected by `indices`, with the deviation floored at 1e-8.
pub fn fit_normalizer_at(windows: &[Window], indices: &[usize]) -> Result<Normalizer> {
    let first = indices.first().map(|&i| &windows[i]).ok_or(Error::EmptyTrainingSet)?;
    let c = first.channels();
    let mut count = 0u64;
    let mut sum = vec![0.0f64; c];
    for &i in indices {
        let w = &windows[i];
        if w.channels() != c {
            return Err(Error::shape(
                "fit_normalizer",
                format!("window {i} has {} channels, expected {c}", w.channels()),
            ));
        }
        for t in 0..w.window_len() {
            for (ch, &v) in w.data.row(t).iter().enumerate() {
                sum[ch] += v;
            }
        }
        count += (w.window_len()) as u64;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; c];
    for &i in indices {
        let w = &windows[i];
        for t in 0..w.window_len() {
            for (ch, &v) in w.data.row(t).iter().enumerate() {
                let d = v - mean[ch];
                sq[ch] += d * d;
            }
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(Normalizer { mean, std })
}

/// [`fit_normalizer_at`] over every given window.
pub fn fit_normalizer(windows: &[Window]) -> Result<Normalizer> {
    let all: Vec<usize> = (0..windows.len()).collect();
    fit_normalizer_at(windows, &all)
}

/// Returns a copy of `window` with each entry z-scored per channel.
pub fn apply_normalizer(window: &Window, normalizer: &Normalizer) -> Result<Window> {
    if window.channels() != normalizer.channels() {
        return Err(Error::shape(
            "apply_normalizer",
            format!("window has {} channels, normalizer {}", window.channels(), normalizer.channels()),
        ));
    }
    let (w, c) = (window.window_len(), window.channels());
    let mut data = Vec::with_capacity(w * c);
    for t in 0..w {
        for (ch, &v) in window.data.row(t).iter().enumerate() {
            data.push((v - normalizer.mean[ch]) / normalizer.std[ch]);
        }
    }
    Ok(Window {
        data: NumericArray::from_vec(&[w, c], data)?,
        label: window.label,
        subject: window.subject.clone(),
    })
}

/// Seeded shuffle of `0..n`; the first `round(ratio * n)` indices are the
/// training partition, the rest the test partition.
pub fn split(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptyDataset("cannot split zero windows".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, "split");
    indices.shuffle(&mut rng);
    let train_len = ((ratio * n as f64).round() as usize).min(n);
    let test = indices.split_off(train_len);
    Ok((indices, test))
}

/// A class-label vector with exactly one entry set to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTarget {
    values: NumericArray,
    label: usize,
}

impl OneHotTarget {
    pub fn label(&self) -> usize {
        self.label
    }

    pub fn values(&self) -> &NumericArray {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One-hot encoding of `label` over `num_classes` classes.
pub fn one_hot(label: usize, num_classes: usize) -> Result<OneHotTarget> {
    if label >= num_classes {
        return Err(Error::UnknownClass(format!(
            "label {label} out of range for {num_classes} classes"
        )));
    }
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    Ok(OneHotTarget { values: NumericArray::from_vec(&[num_classes], v)?, label })
}

/// Segments, splits, fits the normalizer on the training partition only,
/// and normalizes every window.
pub fn prepare(
    recordings: &[TimeSeriesRecording],
    labels: &[usize],
    num_classes: usize,
    window_len: usize,
    stride: usize,
    ratio: f64,
    seed: u64,
) -> Result<WindowedDataset> {
    if recordings.len() != labels.len() {
        return Err(Error::shape(
            "prepare",
            format!("{} recordings vs {} labels", recordings.len(), labels.len()),
        ));
    }
    let mut windows = Vec::new();
    for (rec, &label) in recordings.iter().zip(labels) {
        windows.extend(segment(rec, window_len, stride, label)?);
    }
    if windows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no recording is at least {window_len} samples long"
        )));
    }
    let (train_indices, test_indices) = split(windows.len(), ratio, seed)?;
    let normalizer = fit_normalizer_at(&windows, &train_indices)?;
    for w in &mut windows {
        *w = apply_normalizer(w, &normalizer)?;
    }
    let ds = WindowedDataset { windows, num_classes, normalizer, train_indices, test_indices };
    ds.validate()?;
    Ok(ds)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes windows to the binary `HARW` format (see the repository docs
/// for the byte-exact layout). Normalization state and the split are not
/// part of the format.
pub fn write_windows(
    windows: &[Window],
    num_classes: usize,
    path: &Path,
) -> Result<()> {
    let first = windows.first().ok_or_else(|| Error::EmptyDataset("no windows to export".into()))?;
    let (w, c) = (first.window_len(), first.channels());
    let mut body = Vec::with_capacity(24 + windows.len() * (w * c * 4 + 4));
    body.extend_from_slice(WINDOWS_MAGIC);
    put_u32(&mut body, WINDOWS_VERSION);
    put_u32(&mut body, windows.len() as u32);
    put_u32(&mut body, w as u32);
    put_u32(&mut body, c as u32);
    put_u32(&mut body, num_classes as u32);
    for win in windows {
        if win.window_len() != w || win.channels() != c {
            return Err(Error::shape("write_windows", "windows have mixed shapes"));
        }
        for &v in win.data.data() {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
        put_u32(&mut body, win.label as u32);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&body).map_err(|e| Error::io(path, e))
}

/// Reads a `HARW` file back; subjects are not stored and come back empty.
pub fn read_windows(path: &Path) -> Result<(Vec<Window>, usize)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 24 {
        return Err(corrupt("file shorter than the header"));
    }
    if &bytes[0..4] != WINDOWS_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    if u32_at(4) != WINDOWS_VERSION {
        return Err(corrupt("unsupported version"));
    }
    let count = u32_at(8) as usize;
    let w = u32_at(12) as usize;
    let c = u32_at(16) as usize;
    let num_classes = u32_at(20) as usize;
    let per_window = w * c * 4 + 4;
    if bytes.len() != 24 + count * per_window {
        return Err(corrupt("truncated or oversized payload"));
    }
    let mut windows = Vec::with_capacity(count);
    let mut off = 24;
    for _ in 0..count {
        let mut data = Vec::with_capacity(w * c);
        for _ in 0..w * c {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(corrupt("non-finite sample"));
            }
            data.push(f64::from(v));
            off += 4;
        }
        let label = u32_at(off) as usize;
        off += 4;
        if label >= num_classes {
            return Err(corrupt("label out of range"));
        }
        windows.push(Window {
            data: NumericArray::from_vec(&[w, c], data)?,
            label,
            subject: String::new(),
        });
    }
    Ok((windows, num_classes))
}
