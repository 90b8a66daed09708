//! Checkpoint serialization.
//!
//! Layout: magic `HARN`, format version (u32 LE), metadata length (u32 LE),
//! a UTF-8 `key = value` metadata block (model geometry, windowing stride,
//! class names, normalizer statistics as decimal text), then every
//! parameter array as little-endian 32-bit floats in the fixed parameter
//! order. Parameters are stored at 32-bit precision; the reproducibility
//! contract is defined over the loaded values.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::preprocess::Normalizer;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HARN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reproduce predictions: geometry, windowing stride,
/// class names, normalization statistics, and parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Window stride used when segmenting recordings.
    pub stride: usize,
    pub class_names: Vec<String>,
    pub normalizer: Normalizer,
    pub params: ModelParams,
}

/// Parameters after a round trip through 32-bit storage. Predictions from a
/// saved checkpoint are bitwise identical to predictions from this value.
pub fn quantize_params(params: &ModelParams) -> ModelParams {
    let mut out = params.clone();
    for (_, a) in out.named_mut() {
        for v in a.data_mut() {
            *v = f64::from(*v as f32);
        }
    }
    out
}

fn join_decimal(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes a checkpoint. Parameters are truncated to 32-bit floats.
pub fn save_checkpoint(
    path: &Path,
    model: &ModelConfig,
    stride: usize,
    class_names: &[String],
    normalizer: &Normalizer,
    params: &ModelParams,
) -> Result<()> {
    params.check_shapes(model, "save_checkpoint")?;
    if class_names.len() != model.num_classes {
        return Err(Error::InvalidConfig(format!(
            "{} class names for a {}-class model",
            class_names.len(),
            model.num_classes
        )));
    }
    if normalizer.channels() != model.channels {
        return Err(Error::InvalidConfig(format!(
            "normalizer has {} channels, model {}",
            normalizer.channels(),
            model.channels
        )));
    }
    let mut meta = String::new();
    for (key, value) in [
        ("input_len", model.input_len),
        ("channels", model.channels),
        ("num_classes", model.num_classes),
        ("conv1_kernel", model.conv1_kernel),
        ("conv1_channels", model.conv1_channels),
        ("pool_window", model.pool_window),
        ("pool_stride", model.pool_stride),
        ("conv2_kernel", model.conv2_kernel),
        ("conv2_channels", model.conv2_channels),
        ("fc_units", model.fc_units),
        ("stride", stride),
    ] {
        meta.push_str(&format!("{key} = {value}\n"));
    }
    meta.push_str(&format!("l2_lambda = {}\n", model.l2_lambda));
    for name in class_names {
        meta.push_str(&format!("class = {name}\n"));
    }
    meta.push_str(&format!("mean = {}\n", join_decimal(&normalizer.mean)));
    meta.push_str(&format!("std = {}\n", join_decimal(&normalizer.std)));

    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    bytes.extend_from_slice(meta.as_bytes());
    for (_, array) in params.named() {
        for &v in array.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Meta {
    values: HashMap<String, String>,
    classes: Vec<String>,
}

fn parse_meta(text: &str, path: &Path) -> Result<Meta> {
    let mut values = HashMap::new();
    let mut classes = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason: format!("metadata line without '=': {line:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key == "class" {
            classes.push(value.to_string());
        } else {
            values.insert(key.to_string(), value.to_string());
        }
    }
    Ok(Meta { values, classes })
}

impl Meta {
    fn usize(&self, key: &str, path: &Path) -> Result<usize> {
        self.values
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::CorruptCheckpoint {
                path: path.to_path_buf(),
                reason: format!("missing or invalid {key}"),
            })
    }

    fn floats(&self, key: &str, path: &Path) -> Result<Vec<f64>> {
        let raw = self.values.get(key).ok_or_else(|| Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason: format!("missing {key}"),
        })?;
        raw.split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| Error::CorruptCheckpoint {
                    path: path.to_path_buf(),
                    reason: format!("invalid float {v:?} in {key}"),
                })
            })
            .collect()
    }
}

/// Reads a checkpoint back; any structural damage is a `CorruptCheckpoint`.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let corrupt = |reason: String| Error::CorruptCheckpoint { path: path.to_path_buf(), reason };
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(corrupt("file shorter than the header".into()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + meta_len {
        return Err(corrupt("truncated metadata".into()));
    }
    let meta_text = std::str::from_utf8(&bytes[12..12 + meta_len])
        .map_err(|_| corrupt("metadata is not UTF-8".into()))?;
    let meta = parse_meta(meta_text, path)?;

    let l2_lambda = meta
        .values
        .get("l2_lambda")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| corrupt("missing or invalid l2_lambda".into()))?;
    let model = ModelConfig {
        input_len: meta.usize("input_len", path)?,
        channels: meta.usize("channels", path)?,
        num_classes: meta.usize("num_classes", path)?,
        conv1_kernel: meta.usize("conv1_kernel", path)?,
        conv1_channels: meta.usize("conv1_channels", path)?,
        pool_window: meta.usize("pool_window", path)?,
        pool_stride: meta.usize("pool_stride", path)?,
        conv2_kernel: meta.usize("conv2_kernel", path)?,
        conv2_channels: meta.usize("conv2_channels", path)?,
        fc_units: meta.usize("fc_units", path)?,
        l2_lambda,
    };
    model.validate().map_err(|e| corrupt(format!("inconsistent geometry: {e}")))?;
    let stride = meta.usize("stride", path)?;
    if stride == 0 {
        return Err(corrupt("stride must be >= 1".into()));
    }
    if meta.classes.len() != model.num_classes {
        return Err(corrupt(format!(
            "{} class names for a {}-class model",
            meta.classes.len(),
            model.num_classes
        )));
    }
    let mean = meta.floats("mean", path)?;
    let std = meta.floats("std", path)?;
    if mean.len() != model.channels || std.len() != model.channels {
        return Err(corrupt("normalizer does not match the channel count".into()));
    }
    if std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(corrupt("normalizer std entries must be positive".into()));
    }
    let normalizer = Normalizer { mean, std };

    let mut params =
        ModelParams::zeros(&model).map_err(|e| corrupt(format!("invalid geometry: {e}")))?;
    let mut off = 12 + meta_len;
    for (name, array) in params.named_mut() {
        for v in array.data_mut() {
            if off + 4 > bytes.len() {
                return Err(Error::CorruptCheckpoint {
                    path: path.to_path_buf(),
                    reason: format!("truncated while reading {name}"),
                });
            }
            let raw = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !raw.is_finite() {
                return Err(Error::CorruptCheckpoint {
                    path: path.to_path_buf(),
                    reason: format!("non-finite value in {name}"),
                });
            }
            *v = f64::from(raw);
            off += 4;
        }
    }
    if off != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok(Checkpoint { model, stride, class_names: meta.classes, normalizer, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::tensor::NumericArray;

    fn fixture() -> (ModelConfig, Vec<String>, Normalizer, ModelParams) {
        let model = ModelConfig {
            input_len: 40,
            channels: 2,
            num_classes: 3,
            conv1_kernel: 8,
            conv1_channels: 4,
            pool_window: 4,
            pool_stride: 2,
            conv2_kernel: 3,
            conv2_channels: 4,
            fc_units: 16,
            l2_lambda: 1e-4,
        };
        let classes = vec!["jump".to_string(), "run".to_string(), "sit".to_string()];
        let normalizer = Normalizer { mean: vec![0.25, -1.5], std: vec![2.0, 1e-8] };
        let params = init_params(&model, 99).unwrap();
        (model, classes, normalizer, params)
    }

    #[test]
    fn round_trip_restores_everything() {
        let (model, classes, normalizer, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.harn");
        save_checkpoint(&path, &model, 7, &classes, &normalizer, &params).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.model, model);
        assert_eq!(ckpt.stride, 7);
        assert_eq!(ckpt.class_names, classes);
        assert_eq!(ckpt.normalizer, normalizer);
        assert_eq!(ckpt.params, quantize_params(&params));
    }

    #[test]
    fn round_trip_predictions_are_bitwise_identical() {
        use crate::model::forward;
        let (model, classes, normalizer, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.harn");
        save_checkpoint(&path, &model, 1, &classes, &normalizer, &params).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();

        let input = NumericArray::from_vec(
            &[2, 40],
            (0..80).map(|i| ((i * 37) % 19) as f64 * 0.1 - 0.9).collect(),
        )
        .unwrap();
        let from_quantized = forward(&model, &quantize_params(&params), &input).unwrap();
        let from_loaded = forward(&model, &ckpt.params, &input).unwrap();
        assert_eq!(from_quantized.logits().data(), from_loaded.logits().data());

        // and a second load cycle changes nothing
        let path2 = dir.path().join("model2.harn");
        save_checkpoint(&path2, &ckpt.model, 1, &ckpt.class_names, &ckpt.normalizer, &ckpt.params)
            .unwrap();
        let again = load_checkpoint(&path2).unwrap();
        assert_eq!(again.params, ckpt.params);
    }

    #[test]
    fn twenty_class_names_round_trip_in_order() {
        let (mut model, _, _, _) = fixture();
        model.num_classes = 20;
        let params = init_params(&model, 1).unwrap();
        let names: Vec<String> = [
            "bowing", "clapping", "elbowing", "front kicking", "hammering", "handshaking",
            "heading", "hugging", "jumping", "kneeing", "pulling", "punching", "pushing",
            "running", "seating", "side kicking", "slapping", "standing", "walking", "waving",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let normalizer = Normalizer::identity(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.harn");
        save_checkpoint(&path, &model, 100, &names, &normalizer, &params).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.class_names, names);
    }

    #[test]
    fn truncation_is_detected() {
        let (model, classes, normalizer, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.harn");
        save_checkpoint(&path, &model, 1, &classes, &normalizer, &params).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10, 3] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint { .. })),
                "cut at {cut} not detected"
            );
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes_are_detected() {
        let (model, classes, normalizer, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.harn");
        save_checkpoint(&path, &model, 1, &classes, &normalizer, &params).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        fs::write(&path, &wrong).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint { .. })));

        let mut padded = bytes;
        padded.extend_from_slice(&[0, 1, 2]);
        fs::write(&path, &padded).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint { .. })));
    }
}
