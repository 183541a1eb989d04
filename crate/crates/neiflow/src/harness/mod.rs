//! Configuration-driven experiment runner.
//!
//! A case file describes the full pipeline: prior acquisition, ensemble
//! forward runs over the history window, the coverage gate, threshold
//! selection, posterior envelopes, prediction on the union of selected
//! subsets, and the optional smoother baseline. Each stage exports plain
//! CSV/JSON artifacts; given identical config and seeds the files are
//! byte-identical across runs (timings.json, which reports wall-clock
//! seconds, is the one informational exception).

pub mod config;
pub mod export;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::esmda::{run_esmda, EsmdaConfig};
use crate::grid::{write_field, RockRealization};
use crate::nei::subsets::count_subsets;
use crate::nei::{
    auto_sigma, coverage_check, posterior_envelope, predict, prior_envelope, select_posterior,
    AutoSigmaOpts, Envelope, Observation, ResponseEnsemble, SelectOpts,
};
use crate::priors::{h_to_perm, load_realizations, perm_to_h, Ensemble, FieldSampler, Provenance};
use crate::single_phase::{SinglePhaseModel, TimeGrid};
use crate::two_phase::{TwoPhaseModel, TwoPhaseState};
use config::{CaseConfig, ObservedPhase, RockSourceKind};

/// Which part of the pipeline an invocation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Sample the prior ensemble and write the field files plus manifest.
    GeneratePriors,
    /// Forward-simulate the ensemble history and the synthetic observation.
    Simulate,
    /// Full inference: gate, selection, envelopes, prediction.
    Nei,
    /// Smoother baseline only.
    Esmda,
    /// Re-load a written selection and run the prediction phase.
    Predict,
    /// Inference plus the baseline when configured.
    Run,
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::GeneratePriors => "generate-priors",
        Stage::Simulate => "simulate",
        Stage::Nei => "nei",
        Stage::Esmda => "esmda",
        Stage::Predict => "predict",
        Stage::Run => "run",
    }
}

/// Output directory plus command-line overrides.
#[derive(Debug, Clone)]
pub struct RunOpts {
    pub out_dir: PathBuf,
    /// Replaces all config seeds deterministically: priors = s,
    /// noise = s + 1, assimilation = s + 2.
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub stride: Option<usize>,
}

impl RunOpts {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOpts {
            out_dir: out_dir.into(),
            seed: None,
            workers: None,
            stride: None,
        }
    }
}

/// Simulates the truth realization's response and perturbs it with
/// independent Gaussian noise of std = relative_std * |column value|,
/// recording the per-column scale. Zero noise reproduces the truth exactly.
pub fn make_synthetic_obs(
    truth_row: &[f64],
    relative_std: f64,
    band_width: f64,
    seed: u64,
) -> Result<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_scale: Vec<f64> = truth_row.iter().map(|v| relative_std * v.abs()).collect();
    let d_obs: Vec<f64> = truth_row
        .iter()
        .zip(&noise_scale)
        .map(|(v, s)| v + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Observation::new(d_obs, noise_scale, band_width)
}

/// The forward model built from a config: grid, fluid, wells, and the
/// mapping from simulated rates to observed response rows.
pub struct Physics {
    kind: ForwardKind,
    observed: Vec<usize>,
    labels: Vec<String>,
    dt: f64,
}

enum ForwardKind {
    Single { model: SinglePhaseModel, p0: f64 },
    Two {
        model: TwoPhaseModel,
        init: TwoPhaseState,
        phase: ObservedPhase,
    },
}

impl Physics {
    pub fn from_config(config: &CaseConfig) -> Result<Self> {
        let grid = config.to_grid()?;
        let observed = config.observed_wells();
        let observed_names: Vec<&str> = observed
            .iter()
            .map(|&i| config.wells[i].name.as_str())
            .collect();
        let solver = config.solver_opts();
        let implicit = config.solver.implicit_wells;
        let (kind, labels) = if config.is_two_phase() {
            let model = TwoPhaseModel::new(
                grid.clone(),
                config.two_fluid()?,
                config.two_phase_wells(&grid)?,
            )?
            .with_implicit_wells(implicit)
            .with_solver(solver);
            let init = config.initial_two_phase_state(grid.n_cells())?;
            let phase = config.noise.observed_phase;
            let labels: Vec<String> = match phase {
                ObservedPhase::Total | ObservedPhase::Water => {
                    observed_names.iter().map(|n| n.to_string()).collect()
                }
                ObservedPhase::Both => observed_names
                    .iter()
                    .map(|n| format!("{n}-total"))
                    .chain(observed_names.iter().map(|n| format!("{n}-water")))
                    .collect(),
            };
            (ForwardKind::Two { model, init, phase }, labels)
        } else {
            let model = SinglePhaseModel::new(
                grid.clone(),
                config.single_fluid()?,
                config.single_wells(&grid)?,
            )?
            .with_implicit_wells(implicit)
            .with_solver(solver);
            (
                ForwardKind::Single {
                    model,
                    p0: config.initial_pressure_pa(),
                },
                observed_names.iter().map(|n| n.to_string()).collect(),
            )
        };
        Ok(Physics {
            kind,
            observed,
            labels,
            dt: config.time.dt,
        })
    }

    /// Observed response blocks per realization (wells, possibly doubled
    /// when both phase rates are observed).
    pub fn n_blocks(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Simulates one realization for `n_steps` steps and returns the flat
    /// observed-response row, well-major.
    pub fn simulate_row(&self, rock: &RockRealization, n_steps: usize) -> Result<Vec<f64>> {
        let tg = TimeGrid::new(self.dt, n_steps)?;
        match &self.kind {
            ForwardKind::Single { model, p0 } => {
                let (rates, _) = model.simulate_uniform(rock, &tg, *p0)?;
                Ok(rates.flatten_wells(&self.observed))
            }
            ForwardKind::Two { model, init, phase } => {
                let (resp, _, _) = model.simulate(rock, &tg, init)?;
                Ok(match phase {
                    ObservedPhase::Total => resp.total.flatten_wells(&self.observed),
                    ObservedPhase::Water => resp.water.flatten_wells(&self.observed),
                    ObservedPhase::Both => {
                        let mut row = resp.total.flatten_wells(&self.observed);
                        row.extend(resp.water.flatten_wells(&self.observed));
                        row
                    }
                })
            }
        }
    }
}

/// Prior ensemble plus the held-out truth realization (when available).
pub struct RockSet {
    pub ensemble: Ensemble,
    pub truth: Option<RockRealization>,
}

/// Builds the rock ensemble from the configured source. For generated
/// ensembles, sampler streams 0..n are the priors and stream n is the
/// held-out truth, so priors and truth come from one population.
pub fn acquire_rock(config: &CaseConfig, seed: u64) -> Result<RockSet> {
    let grid = config.to_grid()?;
    match config.rock.source {
        RockSourceKind::Generate => {
            let gen = config.rock.generate.as_ref().expect("validated");
            let spec = config.variogram_spec()?;
            let sampler = FieldSampler::with_method(&grid, &spec, config.sampling_method())?;
            let porosity = config.rock.porosity;
            let n = gen.n_realizations as u64;
            let mut fields: Vec<RockRealization> = (0..=n)
                .into_par_iter()
                .map(|i| h_to_perm(&sampler.sample_at(seed, i), porosity))
                .collect::<Result<Vec<_>>>()?;
            let truth = fields.pop().expect("n + 1 fields were sampled");
            let ensemble = Ensemble::new(fields, Provenance::Generated { seed, spec })?;
            Ok(RockSet {
                ensemble,
                truth: Some(truth),
            })
        }
        RockSourceKind::Ingest => {
            let manifest = config.manifest_path()?;
            let (ensemble, truth) = load_realizations(&manifest, &grid, config.rock.porosity)?;
            Ok(RockSet { ensemble, truth })
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeedsUsed {
    pub priors: u64,
    pub noise: u64,
    pub esmda: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeiSummary {
    pub k_max: usize,
    pub subsets_evaluated: u64,
    pub sigma: f64,
    /// "fixed", "auto", or "loaded" (predict stage).
    pub sigma_mode: String,
    pub coverage_target: f64,
    pub prior_coverage: f64,
    pub posterior_coverage: f64,
    pub n_selected: usize,
    pub union_size: usize,
    pub forward_runs_prediction: usize,
    /// History runs + prediction runs; the complete forward cost of the
    /// inference arm.
    pub forward_runs_total: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EsmdaSummary {
    pub n_assimilations: usize,
    pub forward_runs: usize,
    pub prior_mean_misfit: f64,
    pub posterior_mean_misfit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub case: String,
    pub stage: String,
    pub fluid: String,
    pub grid: [usize; 3],
    pub n_cells: usize,
    pub n_realizations: usize,
    pub observed_blocks: usize,
    pub history_steps: usize,
    pub prediction_steps: usize,
    pub stride: usize,
    pub noise_relative_std: f64,
    pub seeds: SeedsUsed,
    pub forward_runs_history: usize,
    pub nei: Option<NeiSummary>,
    pub esmda: Option<EsmdaSummary>,
}

#[derive(Debug, Clone, Serialize)]
struct TimingEntry {
    stage: String,
    seconds: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub out_dir: PathBuf,
}

/// Runs one stage of the pipeline, writing artifacts into the output
/// directory. With `workers` set, all parallel work runs on a dedicated
/// pool of that size.
pub fn run_case(config: &CaseConfig, stage: Stage, opts: &RunOpts) -> Result<RunOutcome> {
    match opts.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            pool.install(|| run_case_inner(config, stage, opts))
        }
        None => run_case_inner(config, stage, opts),
    }
}

fn push_timing(timings: &mut Vec<TimingEntry>, name: &str, since: Instant) {
    timings.push(TimingEntry {
        stage: name.to_string(),
        seconds: since.elapsed().as_secs_f64(),
    });
}

fn export_fields(out: &Path, config: &CaseConfig, rock: &RockSet) -> Result<()> {
    let dir = out.join("fields");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let [nx, ny, nz] = config.grid.dims;
    let mut manifest = String::from("# permeability realizations (mD)\n");
    if let Some(truth) = &rock.truth {
        write_field(&dir.join("truth.txt"), "perm", (nx, ny, nz), &truth.perm_md)?;
        manifest.push_str("truth: truth.txt\n");
    }
    for (i, r) in rock.ensemble.realizations.iter().enumerate() {
        let name = format!("r{i:03}.txt");
        write_field(&dir.join(&name), "perm", (nx, ny, nz), &r.perm_md)?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

fn run_case_inner(config: &CaseConfig, stage: Stage, opts: &RunOpts) -> Result<RunOutcome> {
    let seeds = match opts.seed {
        Some(s) => SeedsUsed {
            priors: s,
            noise: s.wrapping_add(1),
            esmda: s.wrapping_add(2),
        },
        None => SeedsUsed {
            priors: config.seeds.priors,
            noise: config.seeds.noise,
            esmda: config.seeds.esmda,
        },
    };
    let stride = opts.stride.unwrap_or(config.nei.stride);
    let out = opts.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut timings: Vec<TimingEntry> = Vec::new();
    let t_total = Instant::now();

    let t = Instant::now();
    let rock = acquire_rock(config, seeds.priors)?;
    push_timing(&mut timings, "rock_acquisition", t);
    let n = rock.ensemble.len();

    let mut summary = RunSummary {
        case: config.case.name.clone(),
        stage: stage_name(stage).to_string(),
        fluid: if config.is_two_phase() { "two" } else { "single" }.to_string(),
        grid: config.grid.dims,
        n_cells: config.grid.dims.iter().product(),
        n_realizations: n,
        observed_blocks: 0,
        history_steps: config.time.history_steps,
        prediction_steps: config.time.prediction_steps,
        stride,
        noise_relative_std: config.noise.relative_std,
        seeds,
        forward_runs_history: 0,
        nei: None,
        esmda: None,
    };

    if stage == Stage::GeneratePriors {
        if config.rock.source == RockSourceKind::Ingest {
            return Err(Error::Config(
                "generate-priors applies to generated rock (rock.source = \"generate\")".into(),
            ));
        }
        export_fields(out, config, &rock)?;
        export::write_json(&out.join("summary.json"), &summary)?;
        push_timing(&mut timings, "total", t_total);
        export::write_json(&out.join("timings.json"), &timings)?;
        return Ok(RunOutcome {
            summary,
            out_dir: out.to_path_buf(),
        });
    }

    // The remaining stages share the history simulations and observation.
    if config.nei.k_max > n {
        return Err(Error::Config(format!(
            "nei.k_max = {} exceeds the {n} available realizations",
            config.nei.k_max
        )));
    }
    let physics = Physics::from_config(config)?;
    let n_hist = config.time.history_steps;
    let n_total = n_hist + config.time.prediction_steps;
    let n_blocks = physics.n_blocks();
    summary.observed_blocks = n_blocks;

    let t = Instant::now();
    let history_rows: Vec<Vec<f64>> = rock
        .ensemble
        .realizations
        .par_iter()
        .enumerate()
        .map(|(i, r)| physics.simulate_row(r, n_hist).map_err(|e| e.at_realization(i)))
        .collect::<Result<_>>()?;
    let truth = rock.truth.as_ref().ok_or_else(|| {
        Error::Config(
            "this stage needs a truth realization: add a 'truth:' line to the manifest".into(),
        )
    })?;
    let truth_row = physics.simulate_row(truth, n_hist)?;
    push_timing(&mut timings, "history_simulation", t);
    summary.forward_runs_history = n;

    let obs = make_synthetic_obs(
        &truth_row,
        config.noise.relative_std,
        config.nei.band_width,
        seeds.noise,
    )?;
    export::write_observation_csv(
        &out.join("observation.csv"),
        physics.labels(),
        &truth_row,
        &obs,
        n_hist,
    )?;
    if matches!(stage, Stage::Simulate | Stage::Nei | Stage::Run) {
        let ids: Vec<usize> = (0..n).collect();
        export::write_responses_csv(
            &out.join("responses_prior.csv"),
            physics.labels(),
            &ids,
            &history_rows,
            n_hist,
        )?;
    }
    let responses = ResponseEnsemble::new(n_blocks, n_hist, history_rows)?;

    if matches!(stage, Stage::Nei | Stage::Run) {
        let t = Instant::now();
        let k_max = config.nei.k_max;
        let prior_env = prior_envelope(&responses, k_max)?;
        let prior_coverage = coverage_check(&prior_env, &obs);
        export::write_envelope_csv(
            &out.join("prior_envelope.csv"),
            physics.labels(),
            &prior_env,
            n_hist,
            Some((&obs, n_hist)),
        )?;
        if prior_coverage < config.nei.coverage_target {
            return Err(Error::CoverageGate {
                achieved: prior_coverage,
                required: config.nei.coverage_target,
            });
        }
        let (sigma_mode, selection) = match config.nei.sigma {
            Some(sigma) => {
                let sel = select_posterior(&responses, &obs, sigma, k_max, SelectOpts { stride })?;
                if sel.is_empty() {
                    return Err(Error::EmptyPosterior { sigma });
                }
                ("fixed", sel)
            }
            None => {
                let res = auto_sigma(
                    &responses,
                    &obs,
                    k_max,
                    AutoSigmaOpts {
                        coverage_target: config.nei.coverage_target,
                        stride,
                        grid_points: config.nei.grid_points,
                    },
                )?;
                ("auto", res.selection)
            }
        };
        let post_env = posterior_envelope(&responses, &selection)?;
        let posterior_coverage = coverage_check(&post_env, &obs);
        export::write_envelope_csv(
            &out.join("posterior_envelope.csv"),
            physics.labels(),
            &post_env,
            n_hist,
            Some((&obs, n_hist)),
        )?;
        export::write_selection(&out.join("selection.txt"), &selection, posterior_coverage)?;
        push_timing(&mut timings, "inference", t);

        let union = selection.union();
        let mut forward_runs_prediction = 0;
        if config.time.prediction_steps > 0 {
            let t = Instant::now();
            let union_rows: Vec<Vec<f64>> = union
                .par_iter()
                .map(|&i| {
                    physics
                        .simulate_row(&rock.ensemble.realizations[i], n_total)
                        .map_err(|e| e.at_realization(i))
                })
                .collect::<Result<_>>()?;
            forward_runs_prediction = union.len();
            export::write_responses_csv(
                &out.join("responses_posterior.csv"),
                physics.labels(),
                &union,
                &union_rows,
                n_total,
            )?;
            let union_responses = ResponseEnsemble::new(n_blocks, n_total, union_rows)?;
            let prediction = predict(&selection, &union_responses)?;
            export::write_envelope_csv(
                &out.join("prediction_envelope.csv"),
                physics.labels(),
                &prediction.envelope,
                n_total,
                Some((&obs, n_hist)),
            )?;
            push_timing(&mut timings, "prediction", t);
        }
        summary.nei = Some(NeiSummary {
            k_max,
            subsets_evaluated: u64::try_from(count_subsets(n, k_max)?)
                .map_err(|_| Error::CountOverflow { n, k_max })?,
            sigma: selection.sigma,
            sigma_mode: sigma_mode.to_string(),
            coverage_target: config.nei.coverage_target,
            prior_coverage,
            posterior_coverage,
            n_selected: selection.len(),
            union_size: union.len(),
            forward_runs_prediction,
            forward_runs_total: n + forward_runs_prediction,
        });
    }

    if stage == Stage::Predict {
        let t = Instant::now();
        let (selection, _) = export::read_selection(&out.join("selection.txt"))?;
        if selection.is_empty() {
            return Err(Error::EmptyPosterior {
                sigma: selection.sigma,
            });
        }
        let union = selection.union();
        if union.iter().any(|&m| m >= n) {
            return Err(Error::Config(format!(
                "selection references realization {} but only {n} exist",
                union.last().expect("nonempty union")
            )));
        }
        let prior_env = prior_envelope(&responses, selection.k_max.min(n))?;
        let prior_coverage = coverage_check(&prior_env, &obs);
        let union_rows: Vec<Vec<f64>> = union
            .par_iter()
            .map(|&i| {
                physics
                    .simulate_row(&rock.ensemble.realizations[i], n_total)
                    .map_err(|e| e.at_realization(i))
            })
            .collect::<Result<_>>()?;
        export::write_responses_csv(
            &out.join("responses_posterior.csv"),
            physics.labels(),
            &union,
            &union_rows,
            n_total,
        )?;
        let union_responses = ResponseEnsemble::new(n_blocks, n_total, union_rows)?;
        let prediction = predict(&selection, &union_responses)?;
        export::write_envelope_csv(
            &out.join("prediction_envelope.csv"),
            physics.labels(),
            &prediction.envelope,
            n_total,
            Some((&obs, n_hist)),
        )?;
        // Coverage of the history part of the predicted envelope.
        let mut lower = Vec::with_capacity(n_blocks * n_hist);
        let mut upper = Vec::with_capacity(n_blocks * n_hist);
        for w in 0..n_blocks {
            for s in 0..n_hist {
                lower.push(prediction.envelope.lower[w * n_total + s]);
                upper.push(prediction.envelope.upper[w * n_total + s]);
            }
        }
        let posterior_coverage = coverage_check(&Envelope { lower, upper }, &obs);
        push_timing(&mut timings, "prediction", t);
        summary.nei = Some(NeiSummary {
            k_max: selection.k_max,
            subsets_evaluated: u64::try_from(count_subsets(n, selection.k_max)?)
                .map_err(|_| Error::CountOverflow {
                    n,
                    k_max: selection.k_max,
                })?,
            sigma: selection.sigma,
            sigma_mode: "loaded".to_string(),
            coverage_target: config.nei.coverage_target,
            prior_coverage,
            posterior_coverage,
            n_selected: selection.len(),
            union_size: union.len(),
            forward_runs_prediction: union.len(),
            forward_runs_total: n + union.len(),
        });
    }

    if stage == Stage::Esmda || (stage == Stage::Run && config.esmda.is_some()) {
        let block = config
            .esmda
            .as_ref()
            .ok_or_else(|| Error::Config("no [esmda] block in the config".into()))?;
        let t = Instant::now();
        let porosity = config.rock.porosity;
        let prior_h: Vec<Vec<f64>> = rock
            .ensemble
            .realizations
            .iter()
            .map(|r| r.perm_md.iter().map(|&k| perm_to_h(k)).collect())
            .collect();
        let history_cols: Vec<usize> = (0..n_blocks)
            .flat_map(|w| (0..n_hist).map(move |s| w * n_total + s))
            .collect();
        let econfig = EsmdaConfig::uniform(block.n_assimilations, seeds.esmda)?;
        let physics_ref = &physics;
        let run = run_esmda(&prior_h, &obs, &history_cols, &econfig, move |_, h| {
            let member_rock = h_to_perm(h, porosity)?;
            physics_ref.simulate_row(&member_rock, n_total)
        })?;
        export::write_misfit_csv(&out.join("esmda_misfit.csv"), &run.misfit)?;
        let ids: Vec<usize> = (0..n).collect();
        export::write_responses_csv(
            &out.join("responses_esmda.csv"),
            physics.labels(),
            &ids,
            &run.final_responses,
            n_total,
        )?;
        push_timing(&mut timings, "esmda", t);
        summary.esmda = Some(EsmdaSummary {
            n_assimilations: block.n_assimilations,
            forward_runs: run.forward_runs,
            prior_mean_misfit: run.misfit[0].mean,
            posterior_mean_misfit: run.misfit.last().expect("misfit trace nonempty").mean,
        });
    }

    export::write_json(&out.join("summary.json"), &summary)?;
    push_timing(&mut timings, "total", t_total);
    export::write_json(&out.join("timings.json"), &timings)?;
    Ok(RunOutcome {
        summary,
        out_dir: out.to_path_buf(),
    })
}
