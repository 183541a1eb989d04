//! Ensemble smoother with multiple data assimilation, the baseline the
//! subset-expectation method is compared against.
//!
//! Updates operate on the log-transformed permeability h = log2(10 k), the
//! near-Gaussian variable; the exponential back-transform keeps
//! permeability positive without constraints.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nei::{loss, Observation};

/// Assimilation schedule. The inflation factors must satisfy
/// sum(1/alpha_i) = 1 so the staged updates compose to one full Bayesian
/// update in the linear-Gaussian limit.
#[derive(Debug, Clone)]
pub struct EsmdaConfig {
    pub inflation: Vec<f64>,
    /// Seed for the observation perturbations (one fresh stream per round).
    pub seed: u64,
}

impl EsmdaConfig {
    /// The common default schedule: `n` rounds with alpha_i = n uniformly.
    pub fn uniform(n_assimilations: usize, seed: u64) -> Result<Self> {
        let config = EsmdaConfig {
            inflation: vec![n_assimilations as f64; n_assimilations],
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn n_assimilations(&self) -> usize {
        self.inflation.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inflation.is_empty() {
            return Err(Error::invalid("assimilation schedule needs at least one round"));
        }
        if let Some(a) = self.inflation.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::invalid(format!(
                "inflation factors must be positive, got {a}"
            )));
        }
        let total: f64 = self.inflation.iter().map(|a| 1.0 / a).sum();
        if (total - 1.0).abs() >= 1e-12 {
            return Err(Error::invalid(format!(
                "inflation factors must satisfy sum(1/alpha) = 1, got {total}"
            )));
        }
        Ok(())
    }
}

/// Observation perturbations for one assimilation round: member-major,
/// per-column std = noise_scale. Zero-noise columns get zero perturbation.
pub fn draw_perturbations(
    obs: &Observation,
    n_members: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    (0..n_members)
        .map(|_| {
            obs.noise_scale()
                .iter()
                .map(|&s| s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// One smoother update in anomaly form.
///
/// With anomaly matrices A_m, A_d (columns = member deviations from the
/// ensemble mean, scaled by 1/sqrt(N-1)) the update is
///
/// ```text
/// m_j += A_m A_d^T (A_d A_d^T + alpha C_e)^{-1} (d_obs + sqrt(alpha) e_j - d_j)
/// ```
///
/// factoring only the n_d x n_d data-space matrix; the n_m x n_d cross
/// covariance is never materialized. C_e is diagonal with the observation's
/// per-column noise variance. A singular factorization is retried once with
/// a jitter of 1e-10 times the mean diagonal added to the diagonal.
pub fn esmda_update(
    params: &mut [Vec<f64>],
    responses: &[Vec<f64>],
    obs: &Observation,
    alpha: f64,
    perturbations: &[Vec<f64>],
) -> Result<()> {
    let n = params.len();
    if n < 2 {
        return Err(Error::invalid("assimilation needs at least two members"));
    }
    if responses.len() != n || perturbations.len() != n {
        return Err(Error::invalid(format!(
            "{n} members but {} response rows and {} perturbation rows",
            responses.len(),
            perturbations.len()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let n_m = params[0].len();
    let n_d = obs.n_cols();
    if n_m == 0 {
        return Err(Error::invalid("members have no parameters"));
    }
    for (j, row) in params.iter().enumerate() {
        if row.len() != n_m {
            return Err(Error::invalid(format!(
                "member {j} has {} parameters, expected {n_m}",
                row.len()
            )));
        }
    }
    for (j, row) in responses.iter().enumerate() {
        if row.len() != n_d {
            return Err(Error::invalid(format!(
                "response row {j} has {} columns, expected {n_d}",
                row.len()
            )));
        }
    }
    for (j, row) in perturbations.iter().enumerate() {
        if row.len() != n_d {
            return Err(Error::invalid(format!(
                "perturbation row {j} has {} columns, expected {n_d}",
                row.len()
            )));
        }
    }

    let scale = 1.0 / ((n - 1) as f64).sqrt();
    let mut mean_m = vec![0.0f64; n_m];
    for row in params.iter() {
        for (a, v) in mean_m.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean_m.iter_mut().for_each(|a| *a /= n as f64);
    let mut mean_d = vec![0.0f64; n_d];
    for row in responses {
        for (a, v) in mean_d.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean_d.iter_mut().for_each(|a| *a /= n as f64);

    let a_m = DMatrix::from_fn(n_m, n, |p, j| (params[j][p] - mean_m[p]) * scale);
    let a_d = DMatrix::from_fn(n_d, n, |c, j| (responses[j][c] - mean_d[c]) * scale);

    let mut c = &a_d * a_d.transpose();
    for (i, &s) in obs.noise_scale().iter().enumerate() {
        c[(i, i)] += alpha * s * s;
    }
    let chol = match c.clone().cholesky() {
        Some(ch) => ch,
        None => {
            let jitter = 1e-10 * c.diagonal().mean();
            for i in 0..n_d {
                c[(i, i)] += jitter;
            }
            c.cholesky().ok_or_else(|| {
                Error::Assimilation(format!(
                    "data covariance is singular after jitter {jitter:.3e}"
                ))
            })?
        }
    };

    let sqrt_alpha = alpha.sqrt();
    let innov = DMatrix::from_fn(n_d, n, |c, j| {
        obs.d_obs()[c] + sqrt_alpha * perturbations[j][c] - responses[j][c]
    });
    let x = chol.solve(&innov);
    let delta = &a_m * (a_d.transpose() * x);
    for (j, row) in params.iter_mut().enumerate() {
        for (p, v) in row.iter_mut().enumerate() {
            *v += delta[(p, j)];
        }
    }
    Ok(())
}

/// Per-round ensemble misfit statistics. The misfit of one member is the
/// noise-scaled RMS distance of its history response to the observation,
/// the same metric the subset loss uses.
#[derive(Debug, Clone, PartialEq)]
pub struct MisfitRow {
    pub iteration: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Outcome of a full assimilation chain.
#[derive(Debug, Clone)]
pub struct EsmdaRun {
    /// Updated ensemble in h-space, one row per member.
    pub posterior_h: Vec<Vec<f64>>,
    /// Misfit per round: row 0 is the prior ensemble, row i the ensemble
    /// after i updates.
    pub misfit: Vec<MisfitRow>,
    /// Forward simulations performed: (rounds + 1) * ensemble size.
    pub forward_runs: usize,
    /// Full-horizon responses of the final ensemble, reusable for
    /// prediction without further forward runs.
    pub final_responses: Vec<Vec<f64>>,
}

/// Runs the full chain: simulate, record misfit, update, repeat; one last
/// simulation of the updated ensemble closes the loop.
///
/// `forward(j, h)` simulates member j over the full horizon and returns its
/// response row; `history_cols` maps observation columns into that row (for
/// an unextended horizon this is the identity). Member simulations within a
/// round run in parallel; failures abort with member and round attached.
pub fn run_esmda<F>(
    prior_h: &[Vec<f64>],
    obs: &Observation,
    history_cols: &[usize],
    config: &EsmdaConfig,
    forward: F,
) -> Result<EsmdaRun>
where
    F: Fn(usize, &[f64]) -> Result<Vec<f64>> + Sync,
{
    config.validate()?;
    let n = prior_h.len();
    if n < 2 {
        return Err(Error::invalid("assimilation needs at least two members"));
    }
    if history_cols.len() != obs.n_cols() {
        return Err(Error::invalid(format!(
            "{} history columns for an observation with {} columns",
            history_cols.len(),
            obs.n_cols()
        )));
    }
    let mut members: Vec<Vec<f64>> = prior_h.to_vec();
    let mut misfit = Vec::with_capacity(config.n_assimilations() + 1);
    let mut forward_runs = 0usize;
    let mut responses: Vec<Vec<f64>> = Vec::new();
    let mut hist = vec![0.0f64; history_cols.len()];

    for round in 0..=config.n_assimilations() {
        responses = members
            .par_iter()
            .enumerate()
            .map(|(j, h)| forward(j, h).map_err(|e| e.at_realization(j)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_step(round))?;
        forward_runs += n;

        let mut history_rows = Vec::with_capacity(n);
        let mut mean = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for row in &responses {
            for (h, &c) in hist.iter_mut().zip(history_cols) {
                *h = *row.get(c).ok_or_else(|| {
                    Error::invalid(format!(
                        "history column {c} outside response row of length {}",
                        row.len()
                    ))
                })?;
            }
            let l = loss(&hist, obs);
            mean += l;
            min = min.min(l);
            max = max.max(l);
            history_rows.push(hist.clone());
        }
        mean /= n as f64;
        misfit.push(MisfitRow {
            iteration: round,
            mean,
            min,
            max,
        });

        if round < config.n_assimilations() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(round as u64);
            let perturbations = draw_perturbations(obs, n, &mut rng);
            esmda_update(
                &mut members,
                &history_rows,
                obs,
                config.inflation[round],
                &perturbations,
            )
            .map_err(|e| e.at_step(round))?;
        }
    }
    Ok(EsmdaRun {
        posterior_h: members,
        misfit,
        forward_runs,
        final_responses: responses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs1(d: f64, noise: f64) -> Observation {
        Observation::new(vec![d], vec![noise], 2.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(EsmdaConfig::uniform(1, 0).is_ok());
        assert!(EsmdaConfig::uniform(6, 0).is_ok());
        assert!(EsmdaConfig::uniform(0, 0).is_err());
        let bad = EsmdaConfig {
            inflation: vec![2.0, 3.0],
            seed: 0,
        };
        assert!(bad.validate().is_err());
        let ok = EsmdaConfig {
            inflation: vec![2.0, 4.0, 4.0],
            seed: 0,
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn hand_kalman_step() {
        // Identity forward, members {0, 2}, d_obs = 2, unit noise, alpha = 1,
        // zero perturbations: covariances 2, gain 2/3, update {4/3, 2}.
        let mut params = vec![vec![0.0], vec![2.0]];
        let responses = vec![vec![0.0], vec![2.0]];
        let obs = obs1(2.0, 1.0);
        let e = vec![vec![0.0], vec![0.0]];
        esmda_update(&mut params, &responses, &obs, 1.0, &e).unwrap();
        assert!((params[0][0] - 4.0 / 3.0).abs() <= 1e-14);
        assert!((params[1][0] - 2.0).abs() <= 1e-14);
    }

    #[test]
    fn huge_alpha_means_vanishing_update() {
        let mut params = vec![vec![0.0], vec![2.0]];
        let responses = vec![vec![0.0], vec![2.0]];
        let obs = obs1(2.0, 1.0);
        let e = vec![vec![0.0], vec![0.0]];
        esmda_update(&mut params, &responses, &obs, 1e9, &e).unwrap();
        assert!((params[0][0] - 0.0).abs() <= 1e-7);
        assert!((params[1][0] - 2.0).abs() <= 1e-7);
    }

    #[test]
    fn identical_responses_leave_members_untouched() {
        let mut params = vec![vec![1.0, 5.0], vec![3.0, -2.0], vec![0.5, 0.0]];
        let before = params.clone();
        let responses = vec![vec![7.0]; 3];
        let obs = obs1(2.0, 1.0);
        let e = vec![vec![0.3], vec![-0.1], vec![0.2]];
        esmda_update(&mut params, &responses, &obs, 1.0, &e).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn single_step_matches_direct_kalman_oracle() {
        // Linear forward d = G m, one assimilation with alpha = 1, shared
        // perturbations: must match the textbook gain formula to 1e-10.
        let g = [[1.0, 0.5, -0.25], [0.0, 2.0, 1.0]];
        let apply_g = |m: &[f64]| -> Vec<f64> {
            g.iter()
                .map(|row| row.iter().zip(m).map(|(a, b)| a * b).sum())
                .collect()
        };
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let members: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let responses: Vec<Vec<f64>> = members.iter().map(|m| apply_g(m)).collect();
        let obs = Observation::new(vec![1.5, -0.4], vec![0.5, 0.8], 2.0).unwrap();
        let perturbations = draw_perturbations(&obs, n, &mut rng);

        let mut updated = members.clone();
        esmda_update(&mut updated, &responses, &obs, 1.0, &perturbations).unwrap();

        // Direct formula with materialized covariances and a plain inverse.
        let nm = 3;
        let nd = 2;
        let mean = |rows: &[Vec<f64>], dim: usize| -> Vec<f64> {
            let mut m = vec![0.0; dim];
            for r in rows {
                for (a, v) in m.iter_mut().zip(r) {
                    *a += v;
                }
            }
            m.iter_mut().for_each(|a| *a /= rows.len() as f64);
            m
        };
        let m_bar = mean(&members, nm);
        let d_bar = mean(&responses, nd);
        let mut c_md = DMatrix::zeros(nm, nd);
        let mut c_dd = DMatrix::zeros(nd, nd);
        for j in 0..n {
            for p in 0..nm {
                for c in 0..nd {
                    c_md[(p, c)] += (members[j][p] - m_bar[p]) * (responses[j][c] - d_bar[c]);
                }
            }
            for a in 0..nd {
                for b in 0..nd {
                    c_dd[(a, b)] += (responses[j][a] - d_bar[a]) * (responses[j][b] - d_bar[b]);
                }
            }
        }
        c_md /= (n - 1) as f64;
        c_dd /= (n - 1) as f64;
        for (i, &s) in obs.noise_scale().iter().enumerate() {
            c_dd[(i, i)] += s * s;
        }
        let gain = c_md * c_dd.try_inverse().unwrap();
        for j in 0..n {
            let innov: Vec<f64> = (0..nd)
                .map(|c| obs.d_obs()[c] + perturbations[j][c] - responses[j][c])
                .collect();
            for p in 0..nm {
                let delta: f64 = (0..nd).map(|c| gain[(p, c)] * innov[c]).sum();
                let direct = members[j][p] + delta;
                assert!(
                    (updated[j][p] - direct).abs() <= 1e-10,
                    "member {j} param {p}: {} vs {direct}",
                    updated[j][p]
                );
            }
        }
    }

    #[test]
    fn chain_counts_runs_and_reduces_misfit() {
        // Identity forward in two dimensions; the chain must log
        // (rounds + 1) * N runs and pull the ensemble toward the data.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prior: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                (0..2)
                    .map(|_| 5.0 + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let obs = Observation::new(vec![0.0, 1.0], vec![0.2, 0.2], 2.0).unwrap();
        let config = EsmdaConfig::uniform(3, 11).unwrap();
        let run = run_esmda(&prior, &obs, &[0, 1], &config, |_, h| Ok(h.to_vec())).unwrap();
        assert_eq!(run.forward_runs, 24);
        assert_eq!(run.misfit.len(), 4);
        assert_eq!(run.misfit[0].iteration, 0);
        assert_eq!(run.misfit[3].iteration, 3);
        assert!(run.misfit[3].mean < run.misfit[0].mean);
        assert!(run.misfit.iter().all(|m| m.min <= m.mean && m.mean <= m.max));
        assert_eq!(run.final_responses, run.posterior_h);
    }

    #[test]
    fn chain_is_seed_deterministic() {
        let prior: Vec<Vec<f64>> = vec![vec![4.0], vec![6.0], vec![5.5]];
        let obs = obs1(5.0, 0.3);
        let forward = |_: usize, h: &[f64]| Ok(h.to_vec());
        let a = run_esmda(&prior, &obs, &[0], &EsmdaConfig::uniform(2, 9).unwrap(), forward)
            .unwrap();
        let b = run_esmda(&prior, &obs, &[0], &EsmdaConfig::uniform(2, 9).unwrap(), forward)
            .unwrap();
        assert_eq!(a.posterior_h, b.posterior_h);
        let c = run_esmda(&prior, &obs, &[0], &EsmdaConfig::uniform(2, 10).unwrap(), forward)
            .unwrap();
        assert_ne!(a.posterior_h, c.posterior_h);
    }

    #[test]
    fn forward_failure_reports_member_and_round() {
        let prior: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0]];
        let obs = obs1(1.5, 0.1);
        let config = EsmdaConfig::uniform(1, 0).unwrap();
        let err = run_esmda(&prior, &obs, &[0], &config, |j, h| {
            if j == 1 {
                Err(Error::Generation("boom".into()))
            } else {
                Ok(h.to_vec())
            }
        })
        .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("step 0"), "{text}");
        let chain = format!("{err:?}");
        assert!(chain.contains("index: 1"), "{chain}");
    }
}
