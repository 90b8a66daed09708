//! Shared fixtures: synthetic dataset trees with separable per-activity
//! signal patterns.

use std::fs;
use std::path::Path;

/// Writes `root/<subject>/normal/<activity>.txt` recordings: `t_len` rows
/// of `channels` columns, with a distinct frequency/offset per activity so
/// a classifier can separate them.
pub fn write_tree(
    root: &Path,
    subjects: &[&str],
    activities: &[&str],
    t_len: usize,
    channels: usize,
) {
    for (s_idx, subject) in subjects.iter().enumerate() {
        for (a_idx, activity) in activities.iter().enumerate() {
            let dir = root.join(subject).join("normal");
            fs::create_dir_all(&dir).unwrap();
            let mut body = String::new();
            let mut state = (a_idx as u64 + 1) * 92821 + s_idx as u64 * 68111 + 17;
            let mut jitter = move || {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            };
            for t in 0..t_len {
                let mut row = Vec::with_capacity(channels);
                for ch in 0..channels {
                    let phase = ch as f64 * 0.9;
                    let freq = (a_idx + 1) as f64 / 10.0;
                    let v = (t as f64 * freq + phase).sin() * 0.7
                        + a_idx as f64 * 0.5
                        + jitter() * 0.05;
                    row.push(format!("{v:.6}"));
                }
                body.push_str(&row.join(" "));
                body.push('\n');
            }
            fs::write(dir.join(format!("{activity}.txt")), body).unwrap();
        }
    }
}
