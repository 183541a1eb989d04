//! Artifact writers and readers.
//!
//! Every file is plain text with deterministic formatting: floats use
//! Rust's shortest round-trip representation, iteration orders are fixed,
//! so identical inputs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::esmda::MisfitRow;
use crate::nei::subsets::SubsetId;
use crate::nei::{Envelope, Observation, SelectionEntry, SubsetSelection};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Envelope CSV: one row per (well block, step), all steps of the first
/// block first. Observation columns are filled for history steps and left
/// empty beyond the history horizon (or when no observation applies).
pub fn write_envelope_csv(
    path: &Path,
    labels: &[String],
    envelope: &Envelope,
    n_steps: usize,
    obs: Option<(&Observation, usize)>,
) -> Result<()> {
    debug_assert_eq!(envelope.n_cols(), labels.len() * n_steps);
    let mut text = String::from("well,step,lower,upper,d_obs,band_lower,band_upper\n");
    for (w, label) in labels.iter().enumerate() {
        for s in 0..n_steps {
            let c = w * n_steps + s;
            let _ = write!(
                text,
                "{label},{s},{},{},",
                envelope.lower[c], envelope.upper[c]
            );
            match obs {
                Some((o, n_history)) if s < n_history => {
                    let oc = w * n_history + s;
                    let _ = writeln!(
                        text,
                        "{},{},{}",
                        o.d_obs()[oc],
                        o.band_lower()[oc],
                        o.band_upper()[oc]
                    );
                }
                _ => text.push_str(",,\n"),
            }
        }
    }
    write_text(path, &text)
}

/// Observation CSV: per (well block, history step) the clean truth signal,
/// the noisy observed value, its noise scale, and the observation band.
pub fn write_observation_csv(
    path: &Path,
    labels: &[String],
    truth_row: &[f64],
    obs: &Observation,
    n_history: usize,
) -> Result<()> {
    debug_assert_eq!(obs.n_cols(), labels.len() * n_history);
    let mut text = String::from("well,step,truth,d_obs,noise_scale,band_lower,band_upper\n");
    for (w, label) in labels.iter().enumerate() {
        for s in 0..n_history {
            let c = w * n_history + s;
            let _ = writeln!(
                text,
                "{label},{s},{},{},{},{},{}",
                truth_row[c],
                obs.d_obs()[c],
                obs.noise_scale()[c],
                obs.band_lower()[c],
                obs.band_upper()[c]
            );
        }
    }
    write_text(path, &text)
}

/// Long-format response CSV: realization, well, step, value.
pub fn write_responses_csv(
    path: &Path,
    labels: &[String],
    row_ids: &[usize],
    rows: &[Vec<f64>],
    n_steps: usize,
) -> Result<()> {
    debug_assert_eq!(row_ids.len(), rows.len());
    let mut text = String::from("realization,well,step,value\n");
    for (id, row) in row_ids.iter().zip(rows) {
        debug_assert_eq!(row.len(), labels.len() * n_steps);
        for (w, label) in labels.iter().enumerate() {
            for s in 0..n_steps {
                let _ = writeln!(text, "{id},{label},{s},{}", row[w * n_steps + s]);
            }
        }
    }
    write_text(path, &text)
}

/// Selection dump: commented header (sigma, k_max, coverage) and one line
/// per selected subset: `size,members separated by spaces,loss`.
pub fn write_selection(
    path: &Path,
    selection: &SubsetSelection,
    coverage: f64,
) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# sigma = {}", selection.sigma);
    let _ = writeln!(text, "# k_max = {}", selection.k_max);
    let _ = writeln!(text, "# coverage = {coverage}");
    text.push_str("# columns: size, members, loss\n");
    for e in &selection.entries {
        let members = e
            .subset
            .members()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(text, "{},{members},{}", e.subset.size(), e.loss);
    }
    write_text(path, &text)
}

/// Reads a selection dump back; returns the selection and the recorded
/// coverage.
pub fn read_selection(path: &Path) -> Result<(SubsetSelection, f64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut sigma = None;
    let mut k_max = None;
    let mut coverage = None;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            for (key, slot) in [("sigma =", &mut sigma), ("coverage =", &mut coverage)] {
                if let Some(v) = rest.strip_prefix(key) {
                    *slot = Some(
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| bad(idx + 1, format!("bad {key} value: {e}")))?,
                    );
                }
            }
            if let Some(v) = rest.strip_prefix("k_max =") {
                k_max = Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| bad(idx + 1, format!("bad k_max value: {e}")))?,
                );
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(bad(idx + 1, format!("expected 3 fields, got {}", parts.len())));
        }
        let size: usize = parts[0]
            .trim()
            .parse()
            .map_err(|e| bad(idx + 1, format!("bad size: {e}")))?;
        let members = parts[1]
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<u32>, _>>()
            .map_err(|e| bad(idx + 1, format!("bad member index: {e}")))?;
        if members.len() != size {
            return Err(bad(
                idx + 1,
                format!("size {size} does not match {} members", members.len()),
            ));
        }
        let loss: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|e| bad(idx + 1, format!("bad loss: {e}")))?;
        let subset =
            SubsetId::new(members).map_err(|e| bad(idx + 1, format!("bad subset: {e}")))?;
        entries.push(SelectionEntry { subset, loss });
    }
    let sigma = sigma.ok_or_else(|| bad(0, "missing '# sigma =' header".into()))?;
    let k_max = k_max.ok_or_else(|| bad(0, "missing '# k_max =' header".into()))?;
    let coverage = coverage.ok_or_else(|| bad(0, "missing '# coverage =' header".into()))?;
    Ok((
        SubsetSelection {
            sigma,
            k_max,
            entries,
        },
        coverage,
    ))
}

/// Misfit trace CSV: iteration, ensemble mean, min, max.
pub fn write_misfit_csv(path: &Path, rows: &[MisfitRow]) -> Result<()> {
    let mut text = String::from("iteration,mean,min,max\n");
    for r in rows {
        let _ = writeln!(text, "{},{},{},{}", r.iteration, r.mean, r.min, r.max);
    }
    write_text(path, &text)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
    write_text(path, &format!("{text}\n"))
}
