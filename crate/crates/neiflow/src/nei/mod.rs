//! Inference under distribution uncertainty via subset expectations.
//!
//! Every subset of prior realizations (size 1..=k_max) is one candidate
//! sample distribution; its expectation is the unweighted mean of its
//! members' simulated responses. The envelope over all subset expectations
//! quantifies prior distribution uncertainty; thresholding a noise-scaled
//! loss against the observation selects the posterior family, whose
//! envelope quantifies posterior uncertainty.
//!
//! The engine streams subsets (enumerate, evaluate, discard) and never
//! materializes all expectations: at full scale that would be millions of
//! rows times thousands of columns.

pub mod subsets;

use rayon::prelude::*;

use crate::error::{Error, Result};
use subsets::{
    count_subsets, cursor_at, partition_ranges, unrank_combination, walk_range, SubsetId,
};

/// Simulated responses of an ensemble, one row per realization.
///
/// Row layout is well-major: the full time series of the first observed
/// well, then the next, so column `w * n_steps + s` is (well w, step s).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEnsemble {
    n_wells: usize,
    n_steps: usize,
    n_rows: usize,
    data: Vec<f64>,
}

impl ResponseEnsemble {
    pub fn new(n_wells: usize, n_steps: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_cols = n_wells
            .checked_mul(n_steps)
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::invalid("response ensemble needs wells and steps"))?;
        if rows.is_empty() {
            return Err(Error::invalid("response ensemble needs at least one row"));
        }
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {n_cols}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} contains non-finite value {v}")));
            }
            data.extend_from_slice(row);
        }
        Ok(ResponseEnsemble {
            n_wells,
            n_steps,
            n_rows: rows.len(),
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_wells(&self) -> usize {
        self.n_wells
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_cols(&self) -> usize {
        self.n_wells * self.n_steps
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.data[i * c..(i + 1) * c]
    }
}

/// Observed data with per-column noise scale and the derived observation
/// band `d_obs -+ band_width * noise_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    d_obs: Vec<f64>,
    noise_scale: Vec<f64>,
    band_lower: Vec<f64>,
    band_upper: Vec<f64>,
    /// 1 / s_c for the loss: s_c = noise_scale_c when positive, otherwise
    /// the RMS of d_obs over all columns, floored at 1e-12.
    inv_loss_scale: Vec<f64>,
}

impl Observation {
    pub fn new(d_obs: Vec<f64>, noise_scale: Vec<f64>, band_width: f64) -> Result<Self> {
        if d_obs.is_empty() || d_obs.len() != noise_scale.len() {
            return Err(Error::invalid(format!(
                "observation has {} values and {} noise scales",
                d_obs.len(),
                noise_scale.len()
            )));
        }
        if let Some(v) = d_obs.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("observed value {v} is not finite")));
        }
        if let Some(s) = noise_scale.iter().find(|&&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("noise scale must be nonnegative, got {s}")));
        }
        if !(band_width >= 0.0 && band_width.is_finite()) {
            return Err(Error::invalid(format!("band width must be nonnegative, got {band_width}")));
        }
        let n = d_obs.len();
        let rms = (d_obs.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let fallback = rms.max(1e-12);
        let inv_loss_scale = noise_scale
            .iter()
            .map(|&s| 1.0 / if s > 0.0 { s } else { fallback })
            .collect();
        let band_lower = d_obs
            .iter()
            .zip(&noise_scale)
            .map(|(d, s)| d - band_width * s)
            .collect();
        let band_upper = d_obs
            .iter()
            .zip(&noise_scale)
            .map(|(d, s)| d + band_width * s)
            .collect();
        Ok(Observation {
            d_obs,
            noise_scale,
            band_lower,
            band_upper,
            inv_loss_scale,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.d_obs.len()
    }

    pub fn d_obs(&self) -> &[f64] {
        &self.d_obs
    }

    pub fn noise_scale(&self) -> &[f64] {
        &self.noise_scale
    }

    pub fn band_lower(&self) -> &[f64] {
        &self.band_lower
    }

    pub fn band_upper(&self) -> &[f64] {
        &self.band_upper
    }
}

/// Per-column upper and lower expectation bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Envelope {
    pub fn n_cols(&self) -> usize {
        self.lower.len()
    }

    /// True when `other` lies within this envelope at every column.
    pub fn contains_envelope(&self, other: &Envelope) -> bool {
        self.lower.len() == other.lower.len()
            && self
                .lower
                .iter()
                .zip(&other.lower)
                .all(|(outer, inner)| outer <= inner)
            && self
                .upper
                .iter()
                .zip(&other.upper)
                .all(|(outer, inner)| outer >= inner)
    }
}

/// Unweighted column-wise mean of the subset's member rows, summed in
/// ascending member order (the order is part of the determinism contract).
pub fn subset_expectation(responses: &ResponseEnsemble, subset: &[u32]) -> Vec<f64> {
    let n_cols = responses.n_cols();
    let mut acc = vec![0.0f64; n_cols];
    for &m in subset {
        let row = responses.row(m as usize);
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let k = subset.len() as f64;
    for a in &mut acc {
        *a /= k;
    }
    acc
}

/// Envelope over all subset expectations of size 1..=k_max. Expectations are
/// convex combinations of rows, so this equals the per-column min/max over
/// single rows; `k_max` is validated but does not change the result.
pub fn prior_envelope(responses: &ResponseEnsemble, k_max: usize) -> Result<Envelope> {
    if k_max == 0 || k_max > responses.n_rows() {
        return Err(Error::invalid(format!(
            "k_max must lie in [1, {}], got {k_max}",
            responses.n_rows()
        )));
    }
    let n_cols = responses.n_cols();
    let mut lower = responses.row(0).to_vec();
    let mut upper = lower.clone();
    for i in 1..responses.n_rows() {
        let row = responses.row(i);
        for c in 0..n_cols {
            lower[c] = lower[c].min(row[c]);
            upper[c] = upper[c].max(row[c]);
        }
    }
    Ok(Envelope { lower, upper })
}

/// Fraction of columns where the observation band intersects the envelope
/// and the observed value itself lies inside the envelope.
pub fn coverage_check(envelope: &Envelope, obs: &Observation) -> f64 {
    let n = envelope.n_cols();
    debug_assert_eq!(n, obs.n_cols());
    let mut covered = 0usize;
    for c in 0..n {
        let band_meets = obs.band_lower[c] <= envelope.upper[c]
            && envelope.lower[c] <= obs.band_upper[c];
        let obs_inside = envelope.lower[c] <= obs.d_obs[c] && obs.d_obs[c] <= envelope.upper[c];
        if band_meets && obs_inside {
            covered += 1;
        }
    }
    covered as f64 / n as f64
}

/// Noise-scaled root-mean-square misfit between an expectation vector and
/// the observation.
pub fn loss(expectation: &[f64], obs: &Observation) -> f64 {
    debug_assert_eq!(expectation.len(), obs.n_cols());
    let mut sum_sq = 0.0;
    for (c, e) in expectation.iter().enumerate() {
        let d = (e - obs.d_obs[c]) * obs.inv_loss_scale[c];
        sum_sq += d * d;
    }
    (sum_sq / expectation.len() as f64).sqrt()
}

/// Strided column positions used for loss evaluation: every `stride`-th
/// time step within each well block.
fn strided_columns(n_wells: usize, n_steps: usize, stride: usize) -> Vec<usize> {
    let mut cols = Vec::new();
    for w in 0..n_wells {
        let base = w * n_steps;
        let mut s = 0;
        while s < n_steps {
            cols.push(base + s);
            s += stride;
        }
    }
    cols
}

/// Shared scratch for streaming evaluation over one partition.
struct LossScratch<'a> {
    responses: &'a ResponseEnsemble,
    obs: &'a Observation,
    cols: &'a [usize],
    acc: Vec<f64>,
}

impl<'a> LossScratch<'a> {
    fn new(responses: &'a ResponseEnsemble, obs: &'a Observation, cols: &'a [usize]) -> Self {
        LossScratch {
            responses,
            obs,
            cols,
            acc: vec![0.0; cols.len()],
        }
    }

    /// Loss of one subset over the strided columns. With stride 1 this is
    /// bit-identical to `loss(subset_expectation(..), obs)`: same member
    /// summation order, same column order.
    fn subset_loss(&mut self, members: &[u32]) -> f64 {
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        for &m in members {
            let row = self.responses.row(m as usize);
            for (a, &c) in self.acc.iter_mut().zip(self.cols) {
                *a += row[c];
            }
        }
        let k = members.len() as f64;
        let mut sum_sq = 0.0;
        for (a, &c) in self.acc.iter().zip(self.cols) {
            let e = a / k;
            let d = (e - self.obs.d_obs[c]) * self.obs.inv_loss_scale[c];
            sum_sq += d * d;
        }
        (sum_sq / self.cols.len() as f64).sqrt()
    }
}

/// One retained subset and its loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEntry {
    pub subset: SubsetId,
    pub loss: f64,
}

/// The posterior family: all subsets whose loss fell strictly below sigma,
/// sorted by ascending loss (ties: smaller size first, then lexicographic).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSelection {
    pub sigma: f64,
    pub k_max: usize,
    pub entries: Vec<SelectionEntry>,
}

impl SubsetSelection {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct member indices across all selected subsets, ascending.
    pub fn union(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self
            .entries
            .iter()
            .flat_map(|e| e.subset.members().iter().map(|&m| m as usize))
            .collect();
        u.sort_unstable();
        u.dedup();
        u
    }
}

fn sort_entries(entries: &mut [SelectionEntry]) {
    entries.sort_unstable_by(|a, b| {
        a.loss
            .total_cmp(&b.loss)
            .then_with(|| a.subset.size().cmp(&b.subset.size()))
            .then_with(|| a.subset.members().cmp(b.subset.members()))
    });
}

/// Tuning knobs for the streaming selection scan.
#[derive(Debug, Clone, Copy)]
pub struct SelectOpts {
    /// Evaluate the loss on every `stride`-th time step only (>= 1).
    /// Envelopes are always computed on all columns.
    pub stride: usize,
}

impl Default for SelectOpts {
    fn default() -> Self {
        SelectOpts { stride: 1 }
    }
}

fn validate_inference_inputs(
    responses: &ResponseEnsemble,
    obs: &Observation,
    k_max: usize,
    stride: usize,
) -> Result<()> {
    if obs.n_cols() != responses.n_cols() {
        return Err(Error::invalid(format!(
            "observation has {} columns, responses have {}",
            obs.n_cols(),
            responses.n_cols()
        )));
    }
    if k_max == 0 || k_max > responses.n_rows() {
        return Err(Error::invalid(format!(
            "k_max must lie in [1, {}], got {k_max}",
            responses.n_rows()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    Ok(())
}

/// Streams every subset of size 1..=k_max, evaluating expectation and loss
/// on the fly, and retains exactly those with loss < sigma. The result is
/// independent of how the stream is partitioned across threads.
pub fn select_posterior(
    responses: &ResponseEnsemble,
    obs: &Observation,
    sigma: f64,
    k_max: usize,
    opts: SelectOpts,
) -> Result<SubsetSelection> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    validate_inference_inputs(responses, obs, k_max, opts.stride)?;
    let n = responses.n_rows();
    let cols = strided_columns(responses.n_wells(), responses.n_steps(), opts.stride);
    let parts = (rayon::current_num_threads() * 8).max(1);
    let ranges = partition_ranges(n, k_max, parts)?;
    let mut entries: Vec<SelectionEntry> = ranges
        .into_par_iter()
        .map(|(start, end)| {
            let mut scratch = LossScratch::new(responses, obs, &cols);
            let mut local = Vec::new();
            walk_range(n, k_max, start, end, |_, members| {
                let l = scratch.subset_loss(members);
                if l < sigma {
                    local.push(SelectionEntry {
                        subset: SubsetId::from_sorted(members.to_vec()),
                        loss: l,
                    });
                }
            })
            .expect("partition ranges are in bounds");
            local
        })
        .reduce(Vec::new, |mut a, mut b| {
            a.append(&mut b);
            a
        });
    sort_entries(&mut entries);
    Ok(SubsetSelection {
        sigma,
        k_max,
        entries,
    })
}

/// Envelope over the selected subsets' expectation vectors.
pub fn posterior_envelope(
    responses: &ResponseEnsemble,
    selection: &SubsetSelection,
) -> Result<Envelope> {
    if selection.is_empty() {
        return Err(Error::EmptyPosterior {
            sigma: selection.sigma,
        });
    }
    let n_cols = responses.n_cols();
    let mut lower = vec![f64::INFINITY; n_cols];
    let mut upper = vec![f64::NEG_INFINITY; n_cols];
    for entry in &selection.entries {
        let e = subset_expectation(responses, entry.subset.members());
        for c in 0..n_cols {
            lower[c] = lower[c].min(e[c]);
            upper[c] = upper[c].max(e[c]);
        }
    }
    Ok(Envelope { lower, upper })
}

/// Knobs for the automatic threshold search.
#[derive(Debug, Clone, Copy)]
pub struct AutoSigmaOpts {
    /// Required fraction of columns covered by the posterior envelope.
    pub coverage_target: f64,
    /// Loss evaluation stride, as in [`SelectOpts`].
    pub stride: usize,
    /// Number of geometric grid points spanning the observed loss range.
    pub grid_points: usize,
}

impl Default for AutoSigmaOpts {
    fn default() -> Self {
        AutoSigmaOpts {
            coverage_target: 0.95,
            stride: 1,
            grid_points: 64,
        }
    }
}

/// Result of the automatic threshold search.
#[derive(Debug, Clone)]
pub struct AutoSigmaResult {
    pub sigma: f64,
    pub coverage: f64,
    pub selection: SubsetSelection,
}

/// Finds the smallest sigma on a geometric grid over the observed loss
/// range whose posterior selection is nonempty and whose envelope covers
/// the observation at >= `coverage_target` of the columns.
///
/// All subset losses are evaluated once (in parallel); the grid scan then
/// grows the selection incrementally in loss order, computing each included
/// subset's expectation exactly once. Coverage is monotone in sigma, so the
/// first passing grid point is the smallest one.
pub fn auto_sigma(
    responses: &ResponseEnsemble,
    obs: &Observation,
    k_max: usize,
    opts: AutoSigmaOpts,
) -> Result<AutoSigmaResult> {
    if !(opts.coverage_target > 0.0 && opts.coverage_target <= 1.0) {
        return Err(Error::invalid(format!(
            "coverage target must lie in (0, 1], got {}",
            opts.coverage_target
        )));
    }
    if opts.grid_points < 2 {
        return Err(Error::invalid("threshold grid needs at least two points"));
    }
    validate_inference_inputs(responses, obs, k_max, opts.stride)?;
    let n = responses.n_rows();
    let total = count_subsets(n, k_max)?;
    let total_usize = usize::try_from(total).map_err(|_| Error::CountOverflow { n, k_max })?;

    let cols = strided_columns(responses.n_wells(), responses.n_steps(), opts.stride);
    let parts = (rayon::current_num_threads() * 8).max(1);
    let ranges = partition_ranges(n, k_max, parts)?;
    let mut losses: Vec<(u64, f64)> = Vec::with_capacity(total_usize);
    ranges
        .into_par_iter()
        .map(|(start, end)| {
            let mut scratch = LossScratch::new(responses, obs, &cols);
            let mut local = Vec::with_capacity((end - start) as usize);
            walk_range(n, k_max, start, end, |pos, members| {
                local.push((pos as u64, scratch.subset_loss(members)));
            })
            .expect("partition ranges are in bounds");
            local
        })
        .collect::<Vec<_>>()
        .into_iter()
        .for_each(|mut v| losses.append(&mut v));
    losses.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let lo = losses[0].1;
    let hi = losses[losses.len() - 1].1;
    let candidates: Vec<f64> = if hi <= 0.0 {
        // Every subset matches the observation exactly; any threshold works.
        vec![1e-12]
    } else {
        let lo_eff = lo.max(hi * 1e-12);
        let m = opts.grid_points;
        let ratio = hi / lo_eff;
        let mut g: Vec<f64> = (0..m)
            .map(|i| lo_eff * ratio.powf(i as f64 / (m - 1) as f64))
            .collect();
        // One candidate just above the largest loss, so the full selection
        // (posterior envelope = prior envelope) is always reachable.
        g.push(hi * (1.0 + 1e-9));
        g
    };

    let n_cols = responses.n_cols();
    let mut env_lower = vec![f64::INFINITY; n_cols];
    let mut env_upper = vec![f64::NEG_INFINITY; n_cols];
    let mut included: Vec<SelectionEntry> = Vec::new();
    let mut ptr = 0usize;
    let mut members: Vec<u32> = Vec::with_capacity(k_max);
    let mut last_coverage = 0.0;
    let mut last_sigma = candidates[0];

    for &sigma in &candidates {
        while ptr < losses.len() && losses[ptr].1 < sigma {
            let (pos, l) = losses[ptr];
            let cursor = cursor_at(n, k_max, pos as u128)?;
            unrank_combination(n, cursor.size, cursor.rank, &mut members);
            let e = subset_expectation(responses, &members);
            for c in 0..n_cols {
                env_lower[c] = env_lower[c].min(e[c]);
                env_upper[c] = env_upper[c].max(e[c]);
            }
            included.push(SelectionEntry {
                subset: SubsetId::from_sorted(members.clone()),
                loss: l,
            });
            ptr += 1;
        }
        last_sigma = sigma;
        if included.is_empty() {
            continue;
        }
        let envelope = Envelope {
            lower: env_lower.clone(),
            upper: env_upper.clone(),
        };
        last_coverage = coverage_check(&envelope, obs);
        if last_coverage >= opts.coverage_target {
            return Ok(AutoSigmaResult {
                sigma,
                coverage: last_coverage,
                selection: SubsetSelection {
                    sigma,
                    k_max,
                    entries: included,
                },
            });
        }
    }
    Err(Error::SigmaSearch {
        best_sigma: last_sigma,
        best_coverage: last_coverage,
        target: opts.coverage_target,
    })
}

/// Posterior prediction over an extended horizon.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Distinct realization indices the selected subsets draw on.
    pub union: Vec<usize>,
    /// Per selected subset (same order as the selection), the expectation
    /// over the full horizon.
    pub expectations: Vec<Vec<f64>>,
    /// Envelope over those expectations.
    pub envelope: Envelope,
}

/// Recomputes each selected subset's expectation from responses simulated
/// over the full (history + extension) horizon for the union members only.
///
/// `union_responses` must hold one row per entry of `selection.union()`, in
/// that order. Member sums use the same ascending order as the history
/// phase, so with an unextended horizon the expectations are bit-identical
/// to the history ones.
pub fn predict(
    selection: &SubsetSelection,
    union_responses: &ResponseEnsemble,
) -> Result<Prediction> {
    if selection.is_empty() {
        return Err(Error::EmptyPosterior {
            sigma: selection.sigma,
        });
    }
    let union = selection.union();
    if union_responses.n_rows() != union.len() {
        return Err(Error::invalid(format!(
            "union responses have {} rows for {} union members",
            union_responses.n_rows(),
            union.len()
        )));
    }
    let n_cols = union_responses.n_cols();
    let mut expectations = Vec::with_capacity(selection.len());
    let mut env_lower = vec![f64::INFINITY; n_cols];
    let mut env_upper = vec![f64::NEG_INFINITY; n_cols];
    let mut mapped: Vec<u32> = Vec::new();
    for entry in &selection.entries {
        mapped.clear();
        for &m in entry.subset.members() {
            let pos = union
                .binary_search(&(m as usize))
                .expect("member is in the union by construction");
            mapped.push(pos as u32);
        }
        let e = subset_expectation(union_responses, &mapped);
        for c in 0..n_cols {
            env_lower[c] = env_lower[c].min(e[c]);
            env_upper[c] = env_upper[c].max(e[c]);
        }
        expectations.push(e);
    }
    Ok(Prediction {
        union,
        expectations,
        envelope: Envelope {
            lower: env_lower,
            upper: env_upper,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_ensemble(values: &[f64]) -> ResponseEnsemble {
        ResponseEnsemble::new(1, 1, values.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    fn scalar_obs(d: f64, noise: f64) -> Observation {
        Observation::new(vec![d], vec![noise], 2.0).unwrap()
    }

    #[test]
    fn expectation_examples() {
        let r = ResponseEnsemble::new(1, 2, vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(subset_expectation(&r, &[0]), vec![1.0, 2.0]);
        assert_eq!(subset_expectation(&r, &[0, 1]), vec![2.0, 3.0]);
    }

    #[test]
    fn expectation_stays_in_row_hull() {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| {
                (0..5)
                    .map(|c| ((i * 31 + c * 17) % 13) as f64 - 6.0)
                    .collect()
            })
            .collect();
        let r = ResponseEnsemble::new(1, 5, rows.clone()).unwrap();
        let env = prior_envelope(&r, 7).unwrap();
        for id in subsets::enumerate_subsets(7, 7).unwrap() {
            let e = subset_expectation(&r, id.members());
            for (c, v) in e.iter().enumerate() {
                assert!(env.lower[c] <= *v && *v <= env.upper[c]);
            }
        }
    }

    #[test]
    fn prior_envelope_examples() {
        let r = scalar_ensemble(&[1.0, 2.0, 4.0]);
        let env = prior_envelope(&r, 3).unwrap();
        assert_eq!(env.lower, vec![1.0]);
        assert_eq!(env.upper, vec![4.0]);
        assert_eq!(env, prior_envelope(&r, 1).unwrap());

        let single = scalar_ensemble(&[2.5]);
        let env = prior_envelope(&single, 1).unwrap();
        assert_eq!(env.lower, env.upper);
        assert!(prior_envelope(&r, 0).is_err());
        assert!(prior_envelope(&r, 4).is_err());
    }

    #[test]
    fn coverage_examples() {
        let env = Envelope {
            lower: vec![0.0, 0.0, 0.0, 0.0],
            upper: vec![1.0, 1.0, 1.0, 1.0],
        };
        let inside = Observation::new(vec![0.5; 4], vec![0.1; 4], 2.0).unwrap();
        assert_eq!(coverage_check(&env, &inside), 1.0);
        let above = Observation::new(vec![2.0; 4], vec![0.1; 4], 2.0).unwrap();
        assert_eq!(coverage_check(&env, &above), 0.0);
        let half = Observation::new(vec![0.5, 0.5, 3.0, 3.0], vec![0.1; 4], 2.0).unwrap();
        assert_eq!(coverage_check(&env, &half), 0.5);
    }

    #[test]
    fn loss_examples() {
        let obs = Observation::new(vec![2.0, 3.0], vec![0.5, 0.25], 2.0).unwrap();
        assert_eq!(loss(&[2.0, 3.0], &obs), 0.0);
        // E - d = 2 s in both columns -> loss 2.
        assert!((loss(&[3.0, 3.5], &obs) - 2.0).abs() <= 1e-15);
        // Joint rescaling leaves the loss unchanged.
        let scaled = Observation::new(vec![20.0, 30.0], vec![5.0, 2.5], 2.0).unwrap();
        assert!((loss(&[30.0, 35.0], &scaled) - 2.0).abs() <= 1e-15);
    }

    #[test]
    fn loss_zero_noise_falls_back_to_observation_rms() {
        // Columns with zero noise scale divide by rms(d_obs) = 5.
        let obs = Observation::new(vec![3.0, -4.0, 5.0], vec![0.0, 0.0, 0.0], 2.0).unwrap();
        let rms = (50.0f64 / 3.0).sqrt();
        let e = [3.0 + rms, -4.0, 5.0];
        assert!((loss(&e, &obs) - (1.0f64 / 3.0).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn select_posterior_scalar_oracle() {
        let r = scalar_ensemble(&[1.0, 2.0, 4.0]);
        let obs = scalar_obs(2.4, 1.0);
        let sel = select_posterior(&r, &obs, 0.2, 3, SelectOpts::default()).unwrap();
        assert_eq!(sel.len(), 2);
        assert_eq!(sel.entries[0].subset.members(), &[0, 1, 2]);
        assert!((sel.entries[0].loss - (2.4 - 7.0 / 3.0)).abs() <= 1e-14);
        assert_eq!(sel.entries[1].subset.members(), &[0, 2]);
        assert!((sel.entries[1].loss - 0.1).abs() <= 1e-14);
        assert_eq!(sel.union(), vec![0, 1, 2]);

        let env = posterior_envelope(&r, &sel).unwrap();
        assert!((env.lower[0] - 7.0 / 3.0).abs() <= 1e-14);
        assert!((env.upper[0] - 2.5).abs() <= 1e-14);
    }

    #[test]
    fn sigma_extremes() {
        let r = scalar_ensemble(&[1.0, 2.0, 4.0]);
        let obs = scalar_obs(2.4, 1.0);
        let all = select_posterior(&r, &obs, f64::MAX, 3, SelectOpts::default()).unwrap();
        assert_eq!(all.len() as u128, count_subsets(3, 3).unwrap());
        let none = select_posterior(&r, &obs, 1e-9, 3, SelectOpts::default()).unwrap();
        assert!(none.is_empty());
        assert!(posterior_envelope(&r, &none).is_err());
    }

    #[test]
    fn selection_nesting_in_sigma() {
        let rows: Vec<f64> = vec![0.4, 1.1, 1.9, 2.5, 3.2, 4.8];
        let r = scalar_ensemble(&rows);
        let obs = scalar_obs(2.0, 0.5);
        let mut previous: Option<SubsetSelection> = None;
        for sigma in [0.05, 0.2, 0.8, 2.0, 10.0] {
            let sel = select_posterior(&r, &obs, sigma, 4, SelectOpts::default()).unwrap();
            if let Some(prev) = &previous {
                let ids: std::collections::HashSet<_> =
                    sel.entries.iter().map(|e| e.subset.clone()).collect();
                assert!(prev.entries.iter().all(|e| ids.contains(&e.subset)));
                if !prev.is_empty() && !sel.is_empty() {
                    let outer = posterior_envelope(&r, &sel).unwrap();
                    let inner = posterior_envelope(&r, prev).unwrap();
                    assert!(outer.contains_envelope(&inner));
                }
            }
            previous = Some(sel);
        }
    }

    #[test]
    fn strided_loss_uses_decimated_steps() {
        // 1 well, 4 steps; stride 2 sees steps 0 and 2 only.
        let r = ResponseEnsemble::new(
            1,
            4,
            vec![vec![1.0, 9.0, 1.0, 9.0], vec![1.0, -9.0, 1.0, -9.0]],
        )
        .unwrap();
        let obs = Observation::new(vec![1.0; 4], vec![1.0; 4], 2.0).unwrap();
        let sel = select_posterior(&r, &obs, 0.5, 1, SelectOpts { stride: 2 }).unwrap();
        // Both singletons match exactly on steps {0, 2}.
        assert_eq!(sel.len(), 2);
        assert_eq!(sel.entries[0].loss, 0.0);
        let unstrided = select_posterior(&r, &obs, 0.5, 1, SelectOpts::default()).unwrap();
        assert!(unstrided.is_empty());
    }

    #[test]
    fn auto_sigma_exact_match_realization() {
        let r = scalar_ensemble(&[1.0, 2.0, 4.0]);
        // d_obs equals row 1 exactly, zero noise.
        let obs = Observation::new(vec![2.0], vec![0.0], 2.0).unwrap();
        let res = auto_sigma(&r, &obs, 3, AutoSigmaOpts::default()).unwrap();
        assert_eq!(res.coverage, 1.0);
        assert!(res
            .selection
            .entries
            .iter()
            .any(|e| e.subset.members() == [1]));
        // The winning threshold is the smallest grid point.
        assert!(res.sigma <= 1e-9, "sigma {}", res.sigma);
    }

    #[test]
    fn auto_sigma_is_monotone_in_target() {
        let rows: Vec<f64> = vec![0.4, 1.1, 1.9, 2.5, 3.2, 4.8, 2.2, 0.9];
        let r = scalar_ensemble(&rows);
        let obs = scalar_obs(2.1, 0.05);
        let mut last_sigma = 0.0;
        for target in [0.2, 0.5, 0.9, 1.0] {
            let res = auto_sigma(
                &r,
                &obs,
                3,
                AutoSigmaOpts {
                    coverage_target: target,
                    ..AutoSigmaOpts::default()
                },
            )
            .unwrap();
            assert!(res.sigma >= last_sigma);
            assert!(res.coverage >= target);
            last_sigma = res.sigma;
        }
    }

    #[test]
    fn auto_sigma_selection_matches_direct_selection() {
        let rows: Vec<f64> = vec![0.4, 1.1, 1.9, 2.5, 3.2];
        let r = scalar_ensemble(&rows);
        let obs = scalar_obs(2.0, 0.3);
        let res = auto_sigma(&r, &obs, 2, AutoSigmaOpts::default()).unwrap();
        let direct = select_posterior(&r, &obs, res.sigma, 2, SelectOpts::default()).unwrap();
        assert_eq!(res.selection.entries, direct.entries);
    }

    #[test]
    fn auto_sigma_reports_best_on_failure() {
        // Observation far outside the span of any expectation: no sigma can
        // reach full coverage of a band that never meets the envelope.
        let r = scalar_ensemble(&[1.0, 1.1]);
        let obs = Observation::new(vec![100.0], vec![0.001], 2.0).unwrap();
        match auto_sigma(&r, &obs, 2, AutoSigmaOpts::default()) {
            Err(Error::SigmaSearch {
                best_coverage,
                target,
                ..
            }) => {
                assert_eq!(best_coverage, 0.0);
                assert_eq!(target, 0.95);
            }
            other => panic!("expected threshold search failure, got {other:?}"),
        }
    }

    #[test]
    fn predict_scalar_example() {
        let r = scalar_ensemble(&[1.0, 2.0, 4.0]);
        let obs = scalar_obs(2.4, 1.0);
        let sel = select_posterior(&r, &obs, 0.2, 3, SelectOpts::default()).unwrap();
        assert_eq!(sel.union(), vec![0, 1, 2]);
        // Extended horizon: history column plus one prediction column.
        let extended = ResponseEnsemble::new(
            1,
            2,
            vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![4.0, 40.0]],
        )
        .unwrap();
        let pred = predict(&sel, &extended).unwrap();
        assert_eq!(pred.union, vec![0, 1, 2]);
        assert_eq!(pred.expectations.len(), 2);
        assert_eq!(pred.expectations[0], vec![7.0 / 3.0, 70.0 / 3.0]);
        assert_eq!(pred.expectations[1], vec![2.5, 25.0]);
        assert_eq!(pred.envelope.lower, vec![7.0 / 3.0, 70.0 / 3.0]);
        assert_eq!(pred.envelope.upper, vec![2.5, 25.0]);
    }

    #[test]
    fn predict_with_unextended_horizon_reproduces_history_expectations() {
        let r = scalar_ensemble(&[1.0, 2.0, 4.0]);
        let obs = scalar_obs(2.4, 1.0);
        let sel = select_posterior(&r, &obs, 0.2, 3, SelectOpts::default()).unwrap();
        let union_rows: Vec<Vec<f64>> = sel.union().iter().map(|&i| r.row(i).to_vec()).collect();
        let union_r = ResponseEnsemble::new(1, 1, union_rows).unwrap();
        let pred = predict(&sel, &union_r).unwrap();
        for (entry, e) in sel.entries.iter().zip(&pred.expectations) {
            assert_eq!(e, &subset_expectation(&r, entry.subset.members()));
        }
        let env = posterior_envelope(&r, &sel).unwrap();
        assert_eq!(pred.envelope, env);
    }

    #[test]
    fn selection_is_partition_invariant() {
        // Forcing different rayon pool sizes is heavyweight; instead check
        // the single-partition walk against the parallel path.
        let rows: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let r = scalar_ensemble(&rows);
        let obs = scalar_obs(0.4, 0.25);
        let parallel = select_posterior(&r, &obs, 1.3, 3, SelectOpts::default()).unwrap();

        let cols = strided_columns(1, 1, 1);
        let mut scratch = LossScratch::new(&r, &obs, &cols);
        let mut serial = Vec::new();
        walk_range(10, 3, 0, count_subsets(10, 3).unwrap(), |_, members| {
            let l = scratch.subset_loss(members);
            if l < 1.3 {
                serial.push(SelectionEntry {
                    subset: SubsetId::from_sorted(members.to_vec()),
                    loss: l,
                });
            }
        })
        .unwrap();
        sort_entries(&mut serial);
        assert_eq!(parallel.entries, serial);
    }
}
