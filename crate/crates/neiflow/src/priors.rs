//! Prior permeability ensembles: stationary Gaussian log-permeability
//! fields sampled from a variogram model, the h = log2(10 k) transform, and
//! ingestion of externally generated realization sets.
//!
//! Sampling is exact (covariance factorization), not sequential: dense
//! Cholesky up to [`DENSE_CELL_LIMIT`] cells, circulant embedding with FFTs
//! above. Each realization draws from its own counter-derived RNG stream,
//! so members are independent, order-insensitive, and reproducible from
//! `(seed, index)` alone.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{read_field, Grid, RockRealization};

/// Largest cell count handled by dense covariance factorization.
pub const DENSE_CELL_LIMIT: usize = 4000;

/// Relative tolerance for clamping small negative circulant eigenvalues.
const EIGEN_CLAMP_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariogramModel {
    Spherical,
    Exponential,
    Gaussian,
}

/// Stationary covariance model for the log-permeability field h.
///
/// `range` is the practical range per axis: the spherical model reaches
/// zero there, the exponential and gaussian models decay to 5% of the sill.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramSpec {
    pub model: VariogramModel,
    pub range: [f64; 3],
    pub sill: f64,
    pub mean_h: f64,
}

impl VariogramSpec {
    pub fn new(model: VariogramModel, range: [f64; 3], sill: f64, mean_h: f64) -> Result<Self> {
        if range.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::invalid(format!("variogram ranges must be positive, got {range:?}")));
        }
        if !(sill >= 0.0 && sill.is_finite()) {
            return Err(Error::invalid(format!("sill must be nonnegative, got {sill}")));
        }
        if !mean_h.is_finite() {
            return Err(Error::invalid("mean of h must be finite"));
        }
        Ok(VariogramSpec {
            model,
            range,
            sill,
            mean_h,
        })
    }

    /// Covariance of h between two points separated by `lag` meters.
    pub fn covariance(&self, lag: [f64; 3]) -> f64 {
        let rho = lag
            .iter()
            .zip(&self.range)
            .map(|(l, r)| (l / r) * (l / r))
            .sum::<f64>()
            .sqrt();
        let corr = match self.model {
            VariogramModel::Spherical => {
                if rho < 1.0 {
                    1.0 - 1.5 * rho + 0.5 * rho * rho * rho
                } else {
                    0.0
                }
            }
            VariogramModel::Exponential => (-3.0 * rho).exp(),
            VariogramModel::Gaussian => (-3.0 * rho * rho).exp(),
        };
        self.sill * corr
    }
}

/// Converts an h = log2(10 k) field to a rock realization with constant
/// porosity; k = 2^h / 10 millidarcy.
pub fn h_to_perm(h_field: &[f64], porosity: f64) -> Result<RockRealization> {
    let perm: Vec<f64> = h_field.iter().map(|&h| h.exp2() / 10.0).collect();
    RockRealization::with_uniform_porosity(perm, porosity)
}

/// Inverse of [`h_to_perm`] for one value: h = log2(10 k).
pub fn perm_to_h(k_md: f64) -> f64 {
    (10.0 * k_md).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMethod {
    /// Dense below [`DENSE_CELL_LIMIT`] cells, circulant embedding above.
    Auto,
    Dense,
    Circulant,
}

/// A prepared sampler for h-fields on one grid. Construction factorizes the
/// covariance once; each draw is then cheap and independent.
pub enum FieldSampler {
    /// Degenerate sill = 0: every field equals the mean.
    Constant { n_cells: usize, mean_h: f64 },
    Dense(DenseSampler),
    Circulant(CirculantSampler),
}

impl FieldSampler {
    pub fn new(grid: &Grid, spec: &VariogramSpec) -> Result<Self> {
        Self::with_method(grid, spec, SamplingMethod::Auto)
    }

    pub fn with_method(grid: &Grid, spec: &VariogramSpec, method: SamplingMethod) -> Result<Self> {
        if spec.sill == 0.0 {
            return Ok(FieldSampler::Constant {
                n_cells: grid.n_cells(),
                mean_h: spec.mean_h,
            });
        }
        let dense = match method {
            SamplingMethod::Auto => grid.n_cells() <= DENSE_CELL_LIMIT,
            SamplingMethod::Dense => true,
            SamplingMethod::Circulant => false,
        };
        if dense {
            Ok(FieldSampler::Dense(DenseSampler::new(grid, spec)?))
        } else {
            Ok(FieldSampler::Circulant(CirculantSampler::new(grid, spec)?))
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            FieldSampler::Constant { n_cells, .. } => *n_cells,
            FieldSampler::Dense(s) => s.n_cells,
            FieldSampler::Circulant(s) => s.n_cells(),
        }
    }

    /// Draws realization `index` of the stream family defined by `seed`.
    /// Distinct indices use independent RNG streams, so any subset of
    /// indices can be drawn in any order with identical results.
    pub fn sample_at(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        match self {
            FieldSampler::Constant { n_cells, mean_h } => vec![*mean_h; *n_cells],
            FieldSampler::Dense(s) => s.sample(&mut rng),
            FieldSampler::Circulant(s) => s.sample(&mut rng),
        }
    }
}

/// Sampler backed by a dense Cholesky factor of the covariance matrix.
pub struct DenseSampler {
    n_cells: usize,
    mean_h: f64,
    l_factor: DMatrix<f64>,
}

impl DenseSampler {
    fn new(grid: &Grid, spec: &VariogramSpec) -> Result<Self> {
        let n = grid.n_cells();
        let centers: Vec<[f64; 3]> = (0..n).map(|i| grid.cell_center(i)).collect();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let lag = [
                    centers[i][0] - centers[j][0],
                    centers[i][1] - centers[j][1],
                    centers[i][2] - centers[j][2],
                ];
                let c = spec.covariance(lag);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        // The model covariance can be numerically semidefinite; retry with a
        // small nugget before giving up.
        for nugget_rel in [0.0, 1e-10, 1e-8] {
            let mut m = cov.clone();
            if nugget_rel > 0.0 {
                let nugget = nugget_rel * spec.sill;
                for i in 0..n {
                    m[(i, i)] += nugget;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(DenseSampler {
                    n_cells: n,
                    mean_h: spec.mean_h,
                    l_factor: chol.unpack(),
                });
            }
        }
        Err(Error::Generation(
            "covariance matrix is not positive definite, even with a nugget".into(),
        ))
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.n_cells,
            (0..self.n_cells).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let field = &self.l_factor * z;
        field.iter().map(|v| v + self.mean_h).collect()
    }
}

/// Sampler backed by circulant embedding of the covariance on an enlarged
/// periodic grid, diagonalized by FFT.
pub struct CirculantSampler {
    grid_dims: (usize, usize, usize),
    embed_dims: (usize, usize, usize),
    mean_h: f64,
    /// sqrt(eigenvalue / total embedding size) per spectral coefficient.
    spectral_scale: Vec<f64>,
    fft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    fft_z: Arc<dyn Fft<f64>>,
}

impl CirculantSampler {
    fn new(grid: &Grid, spec: &VariogramSpec) -> Result<Self> {
        let (nx, ny, nz) = grid.dims();
        let (dx, dy, dz) = grid.spacing();
        // Doubling the padding per retry smooths the wrapped-lag kernel
        // until the embedding turns nonnegative definite.
        for pad in [2usize, 4, 8] {
            let embed = (
                (nx * pad).max(2),
                if ny > 1 { (ny * pad).max(2) } else { 1 },
                if nz > 1 { (nz * pad).max(2) } else { 1 },
            );
            let (mx, my, mz) = embed;
            let total = mx * my * mz;
            let mut kernel = vec![Complex::new(0.0, 0.0); total];
            for iz in 0..mz {
                let lz = iz.min(mz - iz) as f64 * dz;
                for iy in 0..my {
                    let ly = iy.min(my - iy) as f64 * dy;
                    for ix in 0..mx {
                        let lx = ix.min(mx - ix) as f64 * dx;
                        kernel[ix + mx * (iy + my * iz)] =
                            Complex::new(spec.covariance([lx, ly, lz]), 0.0);
                    }
                }
            }
            let mut planner = FftPlanner::new();
            let fwd_x = planner.plan_fft(mx, FftDirection::Forward);
            let fwd_y = planner.plan_fft(my, FftDirection::Forward);
            let fwd_z = planner.plan_fft(mz, FftDirection::Forward);
            fft3(&mut kernel, embed, &fwd_x, &fwd_y, &fwd_z);
            let max_eig = kernel.iter().map(|c| c.re).fold(0.0f64, f64::max);
            let min_eig = kernel.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
            if min_eig < -EIGEN_CLAMP_REL * max_eig {
                continue;
            }
            let spectral_scale = kernel
                .iter()
                .map(|c| (c.re.max(0.0) / total as f64).sqrt())
                .collect();
            let inv_x = planner.plan_fft(mx, FftDirection::Inverse);
            let inv_y = planner.plan_fft(my, FftDirection::Inverse);
            let inv_z = planner.plan_fft(mz, FftDirection::Inverse);
            return Ok(CirculantSampler {
                grid_dims: (nx, ny, nz),
                embed_dims: embed,
                mean_h: spec.mean_h,
                spectral_scale,
                fft_x: inv_x,
                fft_y: inv_y,
                fft_z: inv_z,
            });
        }
        Err(Error::Generation(
            "circulant embedding stayed indefinite up to 8x padding".into(),
        ))
    }

    fn n_cells(&self) -> usize {
        let (nx, ny, nz) = self.grid_dims;
        nx * ny * nz
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (mx, my, mz) = self.embed_dims;
        let total = mx * my * mz;
        let mut data = Vec::with_capacity(total);
        for &scale in &self.spectral_scale {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            data.push(Complex::new(a * scale, b * scale));
        }
        fft3(&mut data, self.embed_dims, &self.fft_x, &self.fft_y, &self.fft_z);
        let (nx, ny, nz) = self.grid_dims;
        let mut field = Vec::with_capacity(self.n_cells());
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    field.push(data[ix + mx * (iy + my * iz)].re + self.mean_h);
                }
            }
        }
        field
    }
}

/// In-place 3D FFT, one axis at a time.
fn fft3(
    data: &mut [Complex<f64>],
    dims: (usize, usize, usize),
    fft_x: &Arc<dyn Fft<f64>>,
    fft_y: &Arc<dyn Fft<f64>>,
    fft_z: &Arc<dyn Fft<f64>>,
) {
    let (mx, my, mz) = dims;
    debug_assert_eq!(data.len(), mx * my * mz);
    for row in data.chunks_exact_mut(mx) {
        fft_x.process(row);
    }
    if my > 1 {
        let mut buf = vec![Complex::new(0.0, 0.0); my];
        for iz in 0..mz {
            for ix in 0..mx {
                for iy in 0..my {
                    buf[iy] = data[ix + mx * (iy + my * iz)];
                }
                fft_y.process(&mut buf);
                for iy in 0..my {
                    data[ix + mx * (iy + my * iz)] = buf[iy];
                }
            }
        }
    }
    if mz > 1 {
        let mut buf = vec![Complex::new(0.0, 0.0); mz];
        for iy in 0..my {
            for ix in 0..mx {
                for iz in 0..mz {
                    buf[iz] = data[ix + mx * (iy + my * iz)];
                }
                fft_z.process(&mut buf);
                for iz in 0..mz {
                    data[ix + mx * (iy + my * iz)] = buf[iz];
                }
            }
        }
    }
}

/// Draws `count` independent h-fields; realization i comes from RNG stream
/// i of `seed`.
pub fn sample_gaussian_field(
    grid: &Grid,
    spec: &VariogramSpec,
    seed: u64,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::invalid("at least one realization is required"));
    }
    let sampler = FieldSampler::new(grid, spec)?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| sampler.sample_at(seed, i))
        .collect())
}

/// Where an ensemble came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Generated { seed: u64, spec: VariogramSpec },
    Ingested { manifest: PathBuf },
}

/// A set of prior rock realizations on one grid.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub realizations: Vec<RockRealization>,
    pub provenance: Provenance,
}

impl Ensemble {
    pub fn new(realizations: Vec<RockRealization>, provenance: Provenance) -> Result<Self> {
        if realizations.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one realization"));
        }
        let n = realizations[0].n_cells();
        if realizations.iter().any(|r| r.n_cells() != n) {
            return Err(Error::invalid("all realizations must share one grid shape"));
        }
        Ok(Ensemble {
            realizations,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }
}

/// Generates a prior ensemble of `count` permeability realizations with
/// constant porosity.
pub fn generate_ensemble(
    grid: &Grid,
    spec: &VariogramSpec,
    seed: u64,
    count: usize,
    porosity: f64,
) -> Result<Ensemble> {
    let fields = sample_gaussian_field(grid, spec, seed, count)?;
    let realizations = fields
        .iter()
        .map(|h| h_to_perm(h, porosity))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(
        realizations,
        Provenance::Generated { seed, spec: *spec },
    )
}

/// Loads an ensemble from a manifest file: one member permeability-field
/// filename per line (relative to the manifest), `#` comments and blank
/// lines ignored, and at most one `truth: <file>` entry naming a held-out
/// ground-truth realization returned separately.
pub fn load_realizations(
    manifest: &Path,
    grid: &Grid,
    porosity: f64,
) -> Result<(Ensemble, Option<RockRealization>)> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let ingestion = |line: usize, message: String| Error::Ingestion {
        path: manifest.to_path_buf(),
        line,
        message,
    };
    let mut members = Vec::new();
    let mut truth_entry: Option<(usize, String)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix("truth:") {
            if truth_entry.is_some() {
                return Err(ingestion(idx + 1, "more than one truth entry".into()));
            }
            truth_entry = Some((idx + 1, name.trim().to_string()));
        } else {
            members.push((idx + 1, line.to_string()));
        }
    }
    if members.is_empty() {
        return Err(ingestion(text.lines().count().max(1), "no member files listed".into()));
    }
    let load_one = |line: usize, name: &str| -> Result<RockRealization> {
        let path = base.join(name);
        let field = read_field(&path)?;
        if field.dims != grid.dims() {
            return Err(ingestion(
                line,
                format!(
                    "{name}: field is {:?}, expected {:?}",
                    field.dims,
                    grid.dims()
                ),
            ));
        }
        if let Some(bad) = field.values.iter().position(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::Ingestion {
                path,
                line: bad + 2,
                message: format!("permeability must be positive, got {}", field.values[bad]),
            });
        }
        RockRealization::with_uniform_porosity(field.values, porosity)
    };
    let realizations = members
        .iter()
        .map(|(line, name)| load_one(*line, name))
        .collect::<Result<Vec<_>>>()?;
    let truth = truth_entry
        .map(|(line, name)| load_one(line, &name))
        .transpose()?;
    let ensemble = Ensemble::new(
        realizations,
        Provenance::Ingested {
            manifest: manifest.to_path_buf(),
        },
    )?;
    Ok((ensemble, truth))
}
