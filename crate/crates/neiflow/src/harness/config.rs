//! Declarative case configuration.
//!
//! One TOML file describes a full experiment: grid, rock source, fluid,
//! wells, time stepping, inference settings, and the optional smoother
//! baseline. Values use the units common in the application domain
//! (permeability in mD inside field files, pressures in MPa, productivity
//! index in m3/s/MPa, compressibility in 1/Pa, viscosity in Pa*s, lengths
//! in m, times in s); conversion to strict SI happens once, when the
//! domain objects are built.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::priors::{SamplingMethod, VariogramModel, VariogramSpec};
use crate::single_phase::{SinglePhaseFluid, SolverOpts, TimeGrid, Well};
use crate::two_phase::{PiGeometry, TwoPhaseFluid, TwoPhaseState, TwoPhaseWell};
use crate::units::{mpa_to_pa, pi_per_mpa_to_per_pa};

/// Default Peaceman effective radius (m) for two-phase producers.
pub const DEFAULT_PEACEMAN_R_EQ: f64 = 13.29;
/// Default wellbore radius (m) for two-phase producers.
pub const DEFAULT_PEACEMAN_R_W: f64 = 0.1;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub case: CaseBlock,
    pub grid: GridBlock,
    pub rock: RockBlock,
    pub fluid: FluidBlock,
    #[serde(default)]
    pub init: InitBlock,
    pub wells: Vec<WellBlock>,
    pub time: TimeBlock,
    pub nei: NeiBlock,
    pub esmda: Option<EsmdaBlock>,
    #[serde(default)]
    pub noise: NoiseBlock,
    #[serde(default)]
    pub seeds: SeedsBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    /// Directory the config file was loaded from; relative paths inside the
    /// config (the ingest manifest) resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseBlock {
    pub name: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dims: [usize; 3],
    /// Cell size (dx, dy, dz) in meters.
    pub spacing: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RockSourceKind {
    Generate,
    Ingest,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RockBlock {
    /// Uniform porosity applied to every realization.
    pub porosity: f64,
    pub source: RockSourceKind,
    pub generate: Option<GenerateBlock>,
    pub ingest: Option<IngestBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramKind {
    Spherical,
    Exponential,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Auto,
    Dense,
    Circulant,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateBlock {
    pub n_realizations: usize,
    /// Mean of the Gaussian field in h units, h = log2(10 k[mD]).
    pub mean_log_perm: f64,
    pub variogram: VariogramKind,
    /// Practical correlation ranges (m) along x, y, z.
    pub range: [f64; 3],
    pub sill: f64,
    #[serde(default)]
    pub method: SamplerKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestBlock {
    /// Manifest of per-realization field files, resolved against the
    /// config file's directory when relative.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidBlock {
    pub single: Option<SingleFluidBlock>,
    pub two: Option<TwoFluidBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleFluidBlock {
    /// Pa*s
    pub viscosity: f64,
    /// 1/Pa
    pub total_compressibility: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoFluidBlock {
    /// Pa*s
    pub water_viscosity: f64,
    /// Pa*s
    pub oil_viscosity: f64,
    /// 1/Pa
    pub water_compressibility: f64,
    /// 1/Pa
    pub oil_compressibility: f64,
    /// 1/Pa
    #[serde(default)]
    pub rock_compressibility: f64,
    pub irreducible_water_saturation: f64,
    #[serde(default = "default_beta")]
    pub brooks_corey_beta: f64,
    /// Defaults to the irreducible water saturation.
    pub initial_water_saturation: Option<f64>,
}

fn default_beta() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBlock {
    /// Initial reservoir pressure, MPa.
    #[serde(default = "default_init_pressure")]
    pub pressure: f64,
}

fn default_init_pressure() -> f64 {
    30.0
}

impl Default for InitBlock {
    fn default() -> Self {
        InitBlock {
            pressure: default_init_pressure(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellKind {
    Producer,
    Injector,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellBlock {
    pub name: String,
    pub kind: WellKind,
    /// 1-based (i, j, k) cell indices.
    pub cell: [usize; 3],
    /// Productivity index, m3/s/MPa (single-phase producers).
    pub pi: Option<f64>,
    /// Geometric well index in SI (two-phase producers); overrides the
    /// Peaceman radial formula when set.
    pub pi_geometric: Option<f64>,
    /// Peaceman effective radius, m (two-phase producers).
    pub peaceman_r_eq: Option<f64>,
    /// Wellbore radius, m (two-phase producers).
    pub peaceman_r_w: Option<f64>,
    /// Bottom-hole pressure, MPa (producers).
    pub bhp: Option<f64>,
    /// Injection rate, m3/s (injectors).
    pub rate: Option<f64>,
    /// Whether the well's rate series enters the observed data; defaults to
    /// true for producers, false for injectors.
    pub observed: Option<bool>,
}

impl WellBlock {
    pub fn is_observed(&self) -> bool {
        self.observed.unwrap_or(self.kind == WellKind::Producer)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    /// Time step, seconds.
    pub dt: f64,
    pub history_steps: usize,
    #[serde(default)]
    pub prediction_steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeiBlock {
    pub k_max: usize,
    /// Fixed loss threshold; when absent the threshold search runs.
    pub sigma: Option<f64>,
    #[serde(default = "default_coverage_target")]
    pub coverage_target: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Observation band half-width in units of the per-column noise scale.
    #[serde(default = "default_band_width")]
    pub band_width: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_coverage_target() -> f64 {
    0.95
}

fn default_stride() -> usize {
    1
}

fn default_band_width() -> f64 {
    2.0
}

fn default_grid_points() -> usize {
    64
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsmdaBlock {
    pub n_assimilations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObservedPhase {
    #[default]
    Total,
    Water,
    Both,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    /// Noise std as a fraction of each observed column's magnitude.
    #[serde(default = "default_relative_std")]
    pub relative_std: f64,
    /// Which producer rate series form the observed data (two-phase only).
    #[serde(default)]
    pub observed_phase: ObservedPhase,
}

fn default_relative_std() -> f64 {
    0.05
}

impl Default for NoiseBlock {
    fn default() -> Self {
        NoiseBlock {
            relative_std: default_relative_std(),
            observed_phase: ObservedPhase::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsBlock {
    #[serde(default = "default_priors_seed")]
    pub priors: u64,
    #[serde(default = "default_noise_seed")]
    pub noise: u64,
    #[serde(default = "default_esmda_seed")]
    pub esmda: u64,
}

fn default_priors_seed() -> u64 {
    2024
}

fn default_noise_seed() -> u64 {
    77
}

fn default_esmda_seed() -> u64 {
    9
}

impl Default for SeedsBlock {
    fn default() -> Self {
        SeedsBlock {
            priors: default_priors_seed(),
            noise: default_noise_seed(),
            esmda: default_esmda_seed(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_iter_factor")]
    pub max_iter_factor: usize,
    /// Couple well sources implicitly (adds the well index to the matrix
    /// diagonal). Needed for stiff or incompressible configurations.
    #[serde(default)]
    pub implicit_wells: bool,
}

fn default_rel_tol() -> f64 {
    1e-10
}

fn default_max_iter_factor() -> usize {
    10
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            rel_tol: default_rel_tol(),
            max_iter_factor: default_max_iter_factor(),
            implicit_wells: false,
        }
    }
}

impl CaseConfig {
    /// Parses and validates a config file. Relative paths inside the config
    /// later resolve against the file's directory.
    pub fn load(path: &Path) -> Result<CaseConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: CaseConfig = toml::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        config.base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        config.validate()?;
        Ok(config)
    }

    /// Parses a config from a string (for tests and embedding); relative
    /// manifest paths resolve against `base_dir`.
    pub fn from_str_with_base(text: &str, base_dir: &Path) -> Result<CaseConfig> {
        let mut config: CaseConfig =
            toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn is_two_phase(&self) -> bool {
        self.fluid.two.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.case.name.is_empty()
            || !self
                .case
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(config_err(format!(
                "case name must be nonempty alphanumeric/-/_, got {:?}",
                self.case.name
            )));
        }
        if self.grid.dims.contains(&0) {
            return Err(config_err("grid dims must all be at least 1"));
        }
        if self.grid.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(config_err("grid spacing must be positive"));
        }
        if !(self.rock.porosity > 0.0 && self.rock.porosity <= 1.0) {
            return Err(config_err(format!(
                "porosity must lie in (0, 1], got {}",
                self.rock.porosity
            )));
        }
        match self.rock.source {
            RockSourceKind::Generate => {
                let gen = self
                    .rock
                    .generate
                    .as_ref()
                    .ok_or_else(|| config_err("rock.source = \"generate\" needs a [rock.generate] table"))?;
                if self.rock.ingest.is_some() {
                    return Err(config_err("rock source is generate, remove [rock.ingest]"));
                }
                if gen.n_realizations == 0 {
                    return Err(config_err("rock.generate.n_realizations must be at least 1"));
                }
                if self.nei.k_max > gen.n_realizations {
                    return Err(config_err(format!(
                        "nei.k_max = {} exceeds the {} generated realizations",
                        self.nei.k_max, gen.n_realizations
                    )));
                }
                // Range/sill validity is enforced by the variogram spec.
                self.variogram_spec()?;
            }
            RockSourceKind::Ingest => {
                if self.rock.ingest.is_none() {
                    return Err(config_err("rock.source = \"ingest\" needs a [rock.ingest] table"));
                }
                if self.rock.generate.is_some() {
                    return Err(config_err("rock source is ingest, remove [rock.generate]"));
                }
            }
        }
        match (&self.fluid.single, &self.fluid.two) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(config_err(
                    "exactly one of [fluid.single] or [fluid.two] must be present",
                ))
            }
        }
        if self.wells.is_empty() {
            return Err(config_err("at least one well is required"));
        }
        let mut names = std::collections::HashSet::new();
        for w in &self.wells {
            if w.name.is_empty()
                || !w
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(config_err(format!(
                    "well name must be nonempty alphanumeric/-/_, got {:?}",
                    w.name
                )));
            }
            if !names.insert(&w.name) {
                return Err(config_err(format!("duplicate well name {:?}", w.name)));
            }
            for (axis, (&c, &d)) in w.cell.iter().zip(&self.grid.dims).enumerate() {
                if c == 0 || c > d {
                    return Err(config_err(format!(
                        "well {:?} cell index {c} on axis {axis} outside 1..={d}",
                        w.name
                    )));
                }
            }
            match w.kind {
                WellKind::Producer => {
                    if w.bhp.is_none() {
                        return Err(config_err(format!("producer {:?} needs bhp", w.name)));
                    }
                    if w.rate.is_some() {
                        return Err(config_err(format!(
                            "producer {:?} must not set rate",
                            w.name
                        )));
                    }
                    if self.fluid.single.is_some() {
                        if w.pi.is_none() {
                            return Err(config_err(format!("producer {:?} needs pi", w.name)));
                        }
                        if w.pi_geometric.is_some()
                            || w.peaceman_r_eq.is_some()
                            || w.peaceman_r_w.is_some()
                        {
                            return Err(config_err(format!(
                                "producer {:?}: peaceman/pi_geometric apply to two-phase cases",
                                w.name
                            )));
                        }
                    } else {
                        if w.pi.is_some() {
                            return Err(config_err(format!(
                                "producer {:?}: two-phase producers use pi_geometric or the \
                                 Peaceman radii, not pi",
                                w.name
                            )));
                        }
                        if w.pi_geometric.is_some()
                            && (w.peaceman_r_eq.is_some() || w.peaceman_r_w.is_some())
                        {
                            return Err(config_err(format!(
                                "producer {:?}: pi_geometric and Peaceman radii are exclusive",
                                w.name
                            )));
                        }
                    }
                }
                WellKind::Injector => {
                    if w.rate.is_none() {
                        return Err(config_err(format!("injector {:?} needs rate", w.name)));
                    }
                    if w.pi.is_some()
                        || w.bhp.is_some()
                        || w.pi_geometric.is_some()
                        || w.peaceman_r_eq.is_some()
                        || w.peaceman_r_w.is_some()
                    {
                        return Err(config_err(format!(
                            "injector {:?} takes only a rate",
                            w.name
                        )));
                    }
                }
            }
        }
        if !self.wells.iter().any(|w| w.is_observed()) {
            return Err(config_err("no well is observed"));
        }
        if !(self.time.dt > 0.0 && self.time.dt.is_finite()) {
            return Err(config_err("time.dt must be positive"));
        }
        if self.time.history_steps == 0 {
            return Err(config_err("time.history_steps must be at least 1"));
        }
        if self.nei.k_max == 0 {
            return Err(config_err("nei.k_max must be at least 1"));
        }
        if let Some(s) = self.nei.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config_err(format!("nei.sigma must be positive, got {s}")));
            }
        }
        if !(self.nei.coverage_target > 0.0 && self.nei.coverage_target <= 1.0) {
            return Err(config_err("nei.coverage_target must lie in (0, 1]"));
        }
        if self.nei.stride == 0 {
            return Err(config_err("nei.stride must be at least 1"));
        }
        if !(self.nei.band_width >= 0.0 && self.nei.band_width.is_finite()) {
            return Err(config_err("nei.band_width must be nonnegative"));
        }
        if self.nei.grid_points < 2 {
            return Err(config_err("nei.grid_points must be at least 2"));
        }
        if let Some(e) = &self.esmda {
            if e.n_assimilations == 0 {
                return Err(config_err("esmda.n_assimilations must be at least 1"));
            }
        }
        if !(self.noise.relative_std >= 0.0 && self.noise.relative_std.is_finite()) {
            return Err(config_err("noise.relative_std must be nonnegative"));
        }
        if self.fluid.single.is_some() && self.noise.observed_phase != ObservedPhase::Total {
            return Err(config_err(
                "noise.observed_phase applies to two-phase cases only",
            ));
        }
        if let Some(two) = &self.fluid.two {
            if let Some(s0) = two.initial_water_saturation {
                if !(s0 >= two.irreducible_water_saturation && s0 <= 1.0) {
                    return Err(config_err(format!(
                        "initial_water_saturation {s0} outside [{}, 1]",
                        two.irreducible_water_saturation
                    )));
                }
            }
        }
        if !(self.solver.rel_tol > 0.0 && self.solver.rel_tol < 1.0) {
            return Err(config_err("solver.rel_tol must lie in (0, 1)"));
        }
        if self.solver.max_iter_factor == 0 {
            return Err(config_err("solver.max_iter_factor must be at least 1"));
        }
        if !(self.init.pressure.is_finite()) {
            return Err(config_err("init.pressure must be finite"));
        }
        Ok(())
    }

    pub fn to_grid(&self) -> Result<Grid> {
        let [nx, ny, nz] = self.grid.dims;
        let [dx, dy, dz] = self.grid.spacing;
        Grid::new((nx, ny, nz), (dx, dy, dz))
    }

    pub fn variogram_spec(&self) -> Result<VariogramSpec> {
        let gen = self
            .rock
            .generate
            .as_ref()
            .ok_or_else(|| config_err("no [rock.generate] table"))?;
        let model = match gen.variogram {
            VariogramKind::Spherical => VariogramModel::Spherical,
            VariogramKind::Exponential => VariogramModel::Exponential,
            VariogramKind::Gaussian => VariogramModel::Gaussian,
        };
        VariogramSpec::new(model, gen.range, gen.sill, gen.mean_log_perm)
    }

    pub fn sampling_method(&self) -> SamplingMethod {
        match self.rock.generate.as_ref().map(|g| g.method).unwrap_or_default() {
            SamplerKind::Auto => SamplingMethod::Auto,
            SamplerKind::Dense => SamplingMethod::Dense,
            SamplerKind::Circulant => SamplingMethod::Circulant,
        }
    }

    /// Absolute path of the ingest manifest.
    pub fn manifest_path(&self) -> Result<PathBuf> {
        let ingest = self
            .rock
            .ingest
            .as_ref()
            .ok_or_else(|| config_err("no [rock.ingest] table"))?;
        Ok(if ingest.manifest.is_absolute() {
            ingest.manifest.clone()
        } else {
            self.base_dir.join(&ingest.manifest)
        })
    }

    pub fn initial_pressure_pa(&self) -> f64 {
        mpa_to_pa(self.init.pressure)
    }

    pub fn single_fluid(&self) -> Result<SinglePhaseFluid> {
        let f = self
            .fluid
            .single
            .as_ref()
            .ok_or_else(|| config_err("no [fluid.single] table"))?;
        SinglePhaseFluid::new(f.viscosity, f.total_compressibility)
    }

    pub fn two_fluid(&self) -> Result<TwoPhaseFluid> {
        let f = self
            .fluid
            .two
            .as_ref()
            .ok_or_else(|| config_err("no [fluid.two] table"))?;
        TwoPhaseFluid::new(
            f.water_viscosity,
            f.oil_viscosity,
            f.water_compressibility,
            f.oil_compressibility,
            f.rock_compressibility,
            f.irreducible_water_saturation,
            f.brooks_corey_beta,
        )
    }

    pub fn initial_two_phase_state(&self, n_cells: usize) -> Result<TwoPhaseState> {
        let f = self
            .fluid
            .two
            .as_ref()
            .ok_or_else(|| config_err("no [fluid.two] table"))?;
        let s0 = f
            .initial_water_saturation
            .unwrap_or(f.irreducible_water_saturation);
        Ok(TwoPhaseState::uniform(
            n_cells,
            self.initial_pressure_pa(),
            s0,
        ))
    }

    fn well_cell(&self, grid: &Grid, w: &WellBlock) -> usize {
        let [i, j, k] = w.cell;
        grid.cell_index(i - 1, j - 1, k - 1)
    }

    pub fn single_wells(&self, grid: &Grid) -> Result<Vec<Well>> {
        self.wells
            .iter()
            .map(|w| {
                let cell = self.well_cell(grid, w);
                match w.kind {
                    WellKind::Producer => Well::bhp_producer(
                        cell,
                        pi_per_mpa_to_per_pa(w.pi.expect("validated")),
                        mpa_to_pa(w.bhp.expect("validated")),
                    ),
                    WellKind::Injector => Well::rate_injector(cell, w.rate.expect("validated")),
                }
            })
            .collect()
    }

    pub fn two_phase_wells(&self, grid: &Grid) -> Result<Vec<TwoPhaseWell>> {
        self.wells
            .iter()
            .map(|w| {
                let cell = self.well_cell(grid, w);
                match w.kind {
                    WellKind::Producer => {
                        let geometry = if let Some(pi_geo) = w.pi_geometric {
                            PiGeometry::Explicit(pi_geo)
                        } else {
                            PiGeometry::PeacemanRadial {
                                r_eq: w.peaceman_r_eq.unwrap_or(DEFAULT_PEACEMAN_R_EQ),
                                r_w: w.peaceman_r_w.unwrap_or(DEFAULT_PEACEMAN_R_W),
                            }
                        };
                        TwoPhaseWell::bhp_producer(
                            cell,
                            geometry,
                            mpa_to_pa(w.bhp.expect("validated")),
                        )
                    }
                    WellKind::Injector => {
                        TwoPhaseWell::water_injector(cell, w.rate.expect("validated"))
                    }
                }
            })
            .collect()
    }

    /// Indices (into the wells list) of the wells whose rates are observed.
    pub fn observed_wells(&self) -> Vec<usize> {
        self.wells
            .iter()
            .enumerate()
            .filter(|(_, w)| w.is_observed())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn solver_opts(&self) -> SolverOpts {
        SolverOpts {
            rel_tol: self.solver.rel_tol,
            max_iter_factor: self.solver.max_iter_factor,
        }
    }

    pub fn history_timegrid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.dt, self.time.history_steps)
    }

    pub fn full_timegrid(&self) -> Result<TimeGrid> {
        TimeGrid::new(
            self.time.dt,
            self.time.history_steps + self.time.prediction_steps,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [case]
        name = "demo"

        [grid]
        dims = [4, 4, 1]
        spacing = [10.0, 10.0, 10.0]

        [rock]
        porosity = 0.1
        source = "generate"

        [rock.generate]
        n_realizations = 8
        mean_log_perm = 10.0
        variogram = "spherical"
        range = [30.0, 30.0, 10.0]
        sill = 1.0

        [fluid.single]
        viscosity = 0.002
        total_compressibility = 5.0e-8

        [[wells]]
        name = "P1"
        kind = "producer"
        cell = [1, 1, 1]
        pi = 1.175e-5
        bhp = 20.0

        [time]
        dt = 1.0e5
        history_steps = 10

        [nei]
        k_max = 2
    "#;

    #[test]
    fn minimal_single_phase_config_parses_with_defaults() {
        let c = CaseConfig::from_str_with_base(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(c.case.name, "demo");
        assert_eq!(c.init.pressure, 30.0);
        assert_eq!(c.nei.coverage_target, 0.95);
        assert_eq!(c.nei.stride, 1);
        assert_eq!(c.nei.band_width, 2.0);
        assert_eq!(c.noise.relative_std, 0.05);
        assert_eq!(c.seeds.priors, 2024);
        assert!(!c.solver.implicit_wells);
        assert!(c.esmda.is_none());
        assert!(!c.is_two_phase());
        assert_eq!(c.observed_wells(), vec![0]);

        let grid = c.to_grid().unwrap();
        assert_eq!(grid.n_cells(), 16);
        let wells = c.single_wells(&grid).unwrap();
        assert_eq!(wells.len(), 1);
        let tg = c.full_timegrid().unwrap();
        assert_eq!(tg.n_steps, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[nei]\n        k_max = 2", "[nei]\n        k_max = 2\n        bogus = 1");
        assert!(CaseConfig::from_str_with_base(&text, Path::new(".")).is_err());
    }

    #[test]
    fn cross_field_checks_fire() {
        // k_max above ensemble size.
        let text = MINIMAL.replace("k_max = 2", "k_max = 9");
        assert!(CaseConfig::from_str_with_base(&text, Path::new(".")).is_err());
        // producer missing pi.
        let text = MINIMAL.replace("pi = 1.175e-5\n", "");
        assert!(CaseConfig::from_str_with_base(&text, Path::new(".")).is_err());
        // well outside the grid.
        let text = MINIMAL.replace("cell = [1, 1, 1]", "cell = [5, 1, 1]");
        assert!(CaseConfig::from_str_with_base(&text, Path::new(".")).is_err());
        // ingest source without a manifest table.
        let text = MINIMAL.replace("source = \"generate\"", "source = \"ingest\"");
        assert!(CaseConfig::from_str_with_base(&text, Path::new(".")).is_err());
    }

    #[test]
    fn two_phase_config_builds_domain_objects() {
        let text = r#"
            [case]
            name = "two"

            [grid]
            dims = [5, 5, 2]
            spacing = [15.0, 15.0, 6.0]

            [rock]
            porosity = 0.2
            source = "generate"

            [rock.generate]
            n_realizations = 4
            mean_log_perm = 10.0
            variogram = "exponential"
            range = [60.0, 60.0, 12.0]
            sill = 0.8

            [fluid.two]
            water_viscosity = 0.001
            oil_viscosity = 0.0018
            water_compressibility = 4.0e-6
            oil_compressibility = 1.0e-4
            irreducible_water_saturation = 0.2

            [[wells]]
            name = "I1"
            kind = "injector"
            cell = [3, 3, 1]
            rate = 0.01

            [[wells]]
            name = "P1"
            kind = "producer"
            cell = [1, 1, 2]
            bhp = 28.0

            [time]
            dt = 1.0e4
            history_steps = 5
            prediction_steps = 3

            [nei]
            k_max = 2

            [esmda]
            n_assimilations = 2

            [solver]
            implicit_wells = true
        "#;
        let c = CaseConfig::from_str_with_base(text, Path::new(".")).unwrap();
        assert!(c.is_two_phase());
        assert_eq!(c.observed_wells(), vec![1]);
        let grid = c.to_grid().unwrap();
        let wells = c.two_phase_wells(&grid).unwrap();
        assert_eq!(wells.len(), 2);
        let state = c.initial_two_phase_state(grid.n_cells()).unwrap();
        assert_eq!(state.s_w[0], 0.2);
        assert_eq!(state.pressure[0], 30.0e6);
        assert_eq!(c.full_timegrid().unwrap().n_steps, 8);
        assert_eq!(c.esmda.as_ref().unwrap().n_assimilations, 2);
        let fluid = c.two_fluid().unwrap();
        assert_eq!(fluid.s_iw, 0.2);
    }

    #[test]
    fn injector_rejects_producer_fields() {
        let text = MINIMAL.replace(
            "kind = \"producer\"",
            "kind = \"injector\"",
        );
        assert!(CaseConfig::from_str_with_base(&text, Path::new(".")).is_err());
    }
}
