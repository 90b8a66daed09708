//! Discovery, parsing, and labeling of raw motion-capture recordings.
//!
//! The expected tree is `root/<subject>/{normal,aggressive}/<activity>.txt`
//! (the published Vicon layout), but any `root/<subject>/.../<activity>.txt`
//! nesting works: the subject is the first directory under the root and the
//! activity is the normalized file stem.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::tensor::NumericArray;

/// How rows containing missing or non-finite values are repaired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RepairPolicy {
    /// Replace each bad value with the previous row's value in the same
    /// channel; rows with no previous value are dropped. Motion-capture
    /// dropout is transient, so this is the default.
    #[default]
    HoldLastValue,
    /// Drop the whole row.
    DropRow,
}

impl RepairPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hold-last" | "hold-last-value" => Ok(RepairPolicy::HoldLastValue),
            "drop-row" => Ok(RepairPolicy::DropRow),
            other => Err(Error::InvalidConfig(format!(
                "unknown repair policy {other:?} (use hold-last or drop-row)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RepairPolicy::HoldLastValue => "hold-last",
            RepairPolicy::DropRow => "drop-row",
        }
    }
}

/// One recording file found by [`scan_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub subject: String,
    pub activity: String,
}

/// Deterministic listing of a dataset tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    /// All recognized recordings, sorted by path.
    pub entries: Vec<ManifestEntry>,
    /// Distinct activity names, sorted ascending, duplicate-free.
    pub class_names: Vec<String>,
}

/// One activity trial: a `[T, C]` sample matrix plus its labels.
#[derive(Debug, Clone)]
pub struct TimeSeriesRecording {
    /// Row-major `[T, C]` matrix; finite after repair.
    pub samples: NumericArray,
    pub subject: String,
    pub activity: String,
    pub source_path: PathBuf,
}

impl TimeSeriesRecording {
    pub fn num_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn num_channels(&self) -> usize {
        self.samples.cols()
    }
}

/// Lowercase the stem, drop digits, fold whitespace/underscore runs into
/// single spaces: "Front_kicking1" -> "front kicking".
pub fn normalize_activity(stem: &str) -> String {
    let lowered: String = stem
        .chars()
        .filter(|c| !c.is_ascii_digit())
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c == '_' {
                ' '
            } else {
                c
            }
        })
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Walks `root_dir` and lists every `.txt` recording under a subject
/// directory. Two scans of the same tree yield identical manifests.
pub fn scan_dataset(root_dir: &Path) -> Result<DatasetManifest> {
    if !root_dir.is_dir() {
        return Err(Error::io(
            root_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut entries = Vec::new();
    for item in WalkDir::new(root_dir).follow_links(true).sort_by_file_name() {
        let item = item.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root_dir.to_path_buf());
            Error::io(path, e.into_io_error().unwrap_or_else(|| std::io::ErrorKind::Other.into()))
        })?;
        if !item.file_type().is_file() {
            continue;
        }
        let path = item.path();
        let is_txt = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
        if !is_txt {
            continue;
        }
        let rel = path.strip_prefix(root_dir).expect("walked path is under root");
        let mut components = rel.components();
        let subject = match components.next() {
            Some(c) => c.as_os_str().to_string_lossy().into_owned(),
            None => continue,
        };
        // files directly under the root have no subject directory
        if components.next().is_none() {
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
        let activity = normalize_activity(&stem);
        if activity.is_empty() {
            continue;
        }
        entries.push(ManifestEntry { path: path.to_path_buf(), subject, activity });
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no recognized recording files under {}",
            root_dir.display()
        )));
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let mut class_names: Vec<String> = entries.iter().map(|e| e.activity.clone()).collect();
    class_names.sort();
    class_names.dedup();
    Ok(DatasetManifest { entries, class_names })
}

impl DatasetManifest {
    /// Position of `activity` in the sorted class list.
    pub fn class_index(&self, activity: &str) -> Result<usize> {
        class_index(&self.class_names, activity)
    }

    /// Parse every listed recording, in manifest order. Files parse
    /// concurrently; the result order is deterministic.
    pub fn load_recordings(&self, policy: RepairPolicy) -> Result<Vec<TimeSeriesRecording>> {
        self.entries
            .par_iter()
            .map(|entry| {
                let samples = parse_samples(&entry.path, policy)?;
                Ok(TimeSeriesRecording {
                    samples,
                    subject: entry.subject.clone(),
                    activity: entry.activity.clone(),
                    source_path: entry.path.clone(),
                })
            })
            .collect()
    }

    /// Manifest dump: `path,subject,activity,class_index` CSV.
    pub fn write_csv(&self, out: &Path) -> Result<()> {
        let mut body = String::from("path,subject,activity,class_index\n");
        for e in &self.entries {
            let idx = self.class_index(&e.activity)?;
            body.push_str(&format!("{},{},{},{}\n", e.path.display(), e.subject, e.activity, idx));
        }
        let mut f = fs::File::create(out).map_err(|e| Error::io(out, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(out, e))
    }
}

/// Position of `activity` in a sorted class-name list.
pub fn class_index(class_names: &[String], activity: &str) -> Result<usize> {
    class_names
        .binary_search_by(|c| c.as_str().cmp(activity))
        .map_err(|_| Error::UnknownClass(activity.to_string()))
}

/// Parse one recording file into a `[T, C]` matrix under `policy`.
///
/// Lines split on commas and/or whitespace. The channel count is fixed by
/// the first line whose every token parses as a finite float; later lines
/// with a different token count are malformed, and bad values (non-numeric
/// or non-finite tokens) are repaired per `policy`.
pub fn parse_samples(file: &Path, policy: RepairPolicy) -> Result<NumericArray> {
    let handle = fs::File::open(file).map_err(|e| Error::io(file, e))?;
    let reader = BufReader::new(handle);

    let mut channels: Option<usize> = None;
    let mut rows: Vec<f64> = Vec::new();
    let mut row_count = 0usize;
    let mut parsed_line: Vec<Option<f64>> = Vec::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(file, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        parsed_line.clear();
        for token in trimmed.split(|c: char| c == ',' || c.is_whitespace()) {
            if token.is_empty() {
                continue;
            }
            match token.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed_line.push(Some(v)),
                _ => parsed_line.push(None),
            }
        }
        if parsed_line.is_empty() {
            continue;
        }
        match channels {
            None => {
                // leading lines with bad values cannot fix C; skip them
                if parsed_line.iter().all(Option::is_some) {
                    channels = Some(parsed_line.len());
                } else {
                    continue;
                }
            }
            Some(c) => {
                if parsed_line.len() != c {
                    return Err(Error::MalformedRecording {
                        path: file.to_path_buf(),
                        reason: format!(
                            "line {}: expected {} columns, found {}",
                            line_no + 1,
                            c,
                            parsed_line.len()
                        ),
                    });
                }
            }
        }
        let c = channels.expect("set above");
        let has_bad = parsed_line.iter().any(Option::is_none);
        if has_bad {
            match policy {
                RepairPolicy::DropRow => continue,
                RepairPolicy::HoldLastValue => {
                    if row_count == 0 {
                        continue; // nothing to hold yet
                    }
                    let prev_start = (row_count - 1) * c;
                    for (i, v) in parsed_line.iter().enumerate() {
                        let value = v.unwrap_or(rows[prev_start + i]);
                        rows.push(value);
                    }
                    row_count += 1;
                }
            }
        } else {
            rows.extend(parsed_line.iter().map(|v| v.expect("checked")));
            row_count += 1;
        }
    }

    let c = match channels {
        Some(c) if row_count > 0 => c,
        _ => {
            return Err(Error::MalformedRecording {
                path: file.to_path_buf(),
                reason: "no parseable rows".into(),
            })
        }
    };
    NumericArray::from_vec(&[row_count, c], rows)
}

/// [`parse_samples`] plus subject/activity labels derived from the path:
/// the activity is the normalized stem and the subject is the parent
/// directory (or grandparent when the parent is a normal/aggressive
/// grouping folder).
pub fn parse_recording(file: &Path, policy: RepairPolicy) -> Result<TimeSeriesRecording> {
    let samples = parse_samples(file, policy)?;
    let stem = file.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    let activity = normalize_activity(&stem);
    let mut subject_dir = file.parent();
    if let Some(dir) = subject_dir {
        let name = dir.file_name().map(|s| s.to_string_lossy().to_lowercase());
        if matches!(name.as_deref(), Some("normal") | Some("aggressive")) {
            subject_dir = dir.parent();
        }
    }
    let subject = subject_dir
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TimeSeriesRecording { samples, subject, activity, source_path: file.to_path_buf() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_file(path: &Path, body: &str) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, body).unwrap();
    }

    #[test]
    fn normalizes_activity_names() {
        assert_eq!(normalize_activity("Front_kicking1"), "front kicking");
        assert_eq!(normalize_activity("BOWING"), "bowing");
        assert_eq!(normalize_activity("side  kicking"), "side kicking");
        assert_eq!(normalize_activity("elbowing2"), "elbowing");
    }

    #[test]
    fn scan_fixture_tree() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for (subject, activity) in [
            ("sub1", "walking"),
            ("sub1", "running"),
            ("sub1", "jumping"),
            ("sub2", "walking"),
            ("sub2", "running"),
            ("sub2", "jumping"),
        ] {
            write_file(&root.join(subject).join("normal").join(format!("{activity}.txt")), "1 2\n");
        }
        let manifest = scan_dataset(root).unwrap();
        assert_eq!(manifest.entries.len(), 6);
        assert_eq!(manifest.class_names, vec!["jumping", "running", "walking"]);
        assert!(manifest.entries.windows(2).all(|w| w[0].path < w[1].path));
        assert_eq!(manifest.entries[0].subject, "sub1");
    }

    #[test]
    fn scan_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for s in ["s3", "s1", "s2"] {
            for a in ["waving", "bowing"] {
                write_file(&root.join(s).join(format!("{a}.txt")), "0.5\n");
            }
        }
        let a = scan_dataset(root).unwrap();
        let b = scan_dataset(root).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scan_empty_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn scan_missing_dir_fails_with_io() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(scan_dataset(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn scan_full_layout_tree() {
        // the published tree shape: 10 subjects x (10 normal + 10 aggressive)
        let normal = [
            "Bowing", "Clapping", "Handshaking", "Hugging", "Jumping", "Running", "Seating",
            "Standing", "Walking", "Waving",
        ];
        let aggressive = [
            "Elbowing", "Frontkicking", "Hamering", "Headering", "Kneeing", "Pulling", "Punching",
            "Pushing", "Sidekicking", "Slapping",
        ];
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for s in 1..=10 {
            for a in normal {
                write_file(&root.join(format!("sub{s}")).join("normal").join(format!("{a}.txt")), "1 2 3\n");
            }
            for a in aggressive {
                write_file(
                    &root.join(format!("sub{s}")).join("aggressive").join(format!("{a}.txt")),
                    "1 2 3\n",
                );
            }
        }
        let manifest = scan_dataset(root).unwrap();
        assert_eq!(manifest.entries.len(), 200);
        assert_eq!(manifest.class_names.len(), 20);
        assert_eq!(manifest.class_index("bowing").unwrap(), 0);
    }

    #[test]
    fn class_index_is_identity_over_class_names() {
        let names: Vec<String> =
            ["jump", "run", "sit"].iter().map(|s| s.to_string()).collect();
        for (i, n) in names.iter().enumerate() {
            assert_eq!(class_index(&names, n).unwrap(), i);
        }
        assert_eq!(class_index(&names, "run").unwrap(), 1);
        assert!(matches!(class_index(&names, "fly"), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn parse_plain_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        write_file(&f, "1.0,2.0,3.0\n4,5,6\n");
        let m = parse_samples(&f, RepairPolicy::HoldLastValue).unwrap();
        assert_eq!(m.shape(), &[2, 3]);
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn parse_whitespace_separated() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        write_file(&f, "  1.5\t-2.5  3e1 \n\n7 8 9\n");
        let m = parse_samples(&f, RepairPolicy::DropRow).unwrap();
        assert_eq!(m.shape(), &[2, 3]);
        assert_eq!(m.data(), &[1.5, -2.5, 30.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn parse_empty_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        write_file(&f, "");
        assert!(matches!(
            parse_samples(&f, RepairPolicy::HoldLastValue),
            Err(Error::MalformedRecording { .. })
        ));
    }

    #[test]
    fn parse_nan_drop_row() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        write_file(&f, "1,2,NaN\n4,5,6\n");
        let m = parse_samples(&f, RepairPolicy::DropRow).unwrap();
        assert_eq!(m.shape(), &[1, 3]);
        assert_eq!(m.data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn parse_nan_hold_last() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        write_file(&f, "1,2,3\n4,NaN,6\n7,8,inf\n");
        let m = parse_samples(&f, RepairPolicy::HoldLastValue).unwrap();
        assert_eq!(m.shape(), &[3, 3]);
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0, 2.0, 6.0, 7.0, 8.0, 6.0]);
        assert!(m.is_finite());
    }

    #[test]
    fn parse_column_count_mismatch_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        write_file(&f, "1,2,3\n4,5\n");
        match parse_samples(&f, RepairPolicy::HoldLastValue) {
            Err(Error::MalformedRecording { reason, .. }) => {
                assert!(reason.contains("line 2"), "reason: {reason}");
            }
            other => panic!("expected MalformedRecording, got {other:?}"),
        }
    }

    #[test]
    fn parse_recording_labels_from_path() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("sub4").join("aggressive").join("Punching1.txt");
        write_file(&f, "1 2\n3 4\n");
        let rec = parse_recording(&f, RepairPolicy::HoldLastValue).unwrap();
        assert_eq!(rec.activity, "punching");
        assert_eq!(rec.subject, "sub4");
        assert_eq!(rec.num_samples(), 2);
        assert_eq!(rec.num_channels(), 2);
    }

    #[test]
    fn manifest_csv_round_trip_shape() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_file(&root.join("s1").join("walk.txt"), "1\n");
        write_file(&root.join("s1").join("run.txt"), "1\n");
        let manifest = scan_dataset(root).unwrap();
        let csv = dir.path().join("manifest.csv");
        manifest.write_csv(&csv).unwrap();
        let body = fs::read_to_string(&csv).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines[0], "path,subject,activity,class_index");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",s1,run,0"));
        assert!(lines[2].ends_with(",s1,walk,1"));
    }
}
