//! Two-phase (water/oil) slightly compressible flow with an
//! implicit-pressure, explicit-saturation scheme, Brooks-Corey relative
//! permeability, and first-order upwind mobilities.
//!
//! Per step, pressure solves
//!
//! ```text
//! V phi c_t' (p^{n+1} - p^n) / dt
//!     = sum_j lambda_t^n T_ij (p_j^{n+1} - p_i^{n+1}) - q_t
//! ```
//!
//! with `c_t' = c_r + S_o c_o + S_w c_w` at old saturations and face
//! mobilities taken from the upwind cell (higher old pressure; ties go to
//! the lower cell index). Saturation then updates explicitly:
//!
//! ```text
//! S_w^{n+1} = S_w^n - S_w^n c_w (p^{n+1} - p^n)
//!     + dt / (V phi) * (sum_j lambda_w^n T_ij (p_j^{n+1} - p_i^{n+1}) + Q_w)
//! ```
//!
//! using the same per-face upwind water mobility the pressure step used,
//! then clamps to [S_iw, 1]; clamp events and clamped volume are counted.
//! All units SI, as in the single-phase module.

use crate::error::{Error, Result};
use crate::grid::{face_transmissibility_geometric, Face, Grid, RockRealization};
use crate::linsolve::{solve_spd_warm, SparseSystem, SymmetricPattern};
use crate::single_phase::{ResponseSeries, SolverOpts, TimeGrid};
use crate::units::MILLIDARCY_TO_M2;

/// Water/oil fluid system plus rock compressibility.
#[derive(Debug, Clone, Copy)]
pub struct TwoPhaseFluid {
    pub mu_w: f64,
    pub mu_o: f64,
    pub c_w: f64,
    pub c_o: f64,
    pub c_r: f64,
    /// Irreducible water saturation.
    pub s_iw: f64,
    /// Brooks-Corey pore-size exponent.
    pub beta: f64,
}

impl TwoPhaseFluid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu_w: f64,
        mu_o: f64,
        c_w: f64,
        c_o: f64,
        c_r: f64,
        s_iw: f64,
        beta: f64,
    ) -> Result<Self> {
        for (name, mu) in [("water viscosity", mu_w), ("oil viscosity", mu_o)] {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {mu}")));
            }
        }
        for (name, c) in [
            ("water compressibility", c_w),
            ("oil compressibility", c_o),
            ("rock compressibility", c_r),
        ] {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {c}")));
            }
        }
        if !(0.0..1.0).contains(&s_iw) {
            return Err(Error::invalid(format!(
                "irreducible water saturation must lie in [0, 1), got {s_iw}"
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("pore-size exponent must be positive, got {beta}")));
        }
        Ok(TwoPhaseFluid {
            mu_w,
            mu_o,
            c_w,
            c_o,
            c_r,
            s_iw,
            beta,
        })
    }
}

/// Brooks-Corey relative permeabilities (k_rw, k_ro) at water saturation
/// `s_w`, assuming zero residual oil:
///
/// ```text
/// se   = (S_w - S_iw) / (1 - S_iw)
/// k_rw = se^((2 + 3 beta) / beta)
/// k_ro = ((1 - S_w) / (1 - S_iw))^2 * (1 - se^((2 + beta) / beta))
/// ```
pub fn rel_perm(s_w: f64, s_iw: f64, beta: f64) -> Result<(f64, f64)> {
    if !(s_iw..=1.0).contains(&s_w) {
        return Err(Error::invalid(format!(
            "water saturation {s_w} outside [{s_iw}, 1]"
        )));
    }
    let se = (s_w - s_iw) / (1.0 - s_iw);
    let k_rw = se.powf((2.0 + 3.0 * beta) / beta);
    let so_frac = (1.0 - s_w) / (1.0 - s_iw);
    let k_ro = so_frac * so_frac * (1.0 - se.powf((2.0 + beta) / beta));
    Ok((k_rw.clamp(0.0, 1.0), k_ro.clamp(0.0, 1.0)))
}

/// Upwind donor cell of a face: the side with higher pressure; ties go to
/// the lower cell index.
pub fn upwind_cell(face: &Face, pressure: &[f64]) -> usize {
    if pressure[face.cell_i] >= pressure[face.cell_j] {
        face.cell_i
    } else {
        face.cell_j
    }
}

/// Phase mobilities (lambda_w, lambda_o) at a face, taken from the upwind
/// cell.
pub fn upwind_mobility(
    face: &Face,
    pressure: &[f64],
    s_w: &[f64],
    fluid: &TwoPhaseFluid,
) -> Result<(f64, f64)> {
    let donor = upwind_cell(face, pressure);
    let (k_rw, k_ro) = rel_perm(s_w[donor], fluid.s_iw, fluid.beta)?;
    Ok((k_rw / fluid.mu_w, k_ro / fluid.mu_o))
}

/// Geometric part of a producer's well index. The full per-phase rate is
/// `pi_geo * lambda_alpha(cell) * (p_cell - bhp)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiGeometry {
    /// Directly specified geometric index in m^3.
    Explicit(f64),
    /// Radial inflow equivalent: `2 pi K_cell dz / ln(r_eq / r_w)`.
    PeacemanRadial { r_eq: f64, r_w: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TwoPhaseWellMode {
    BhpProducer { pi_geo: PiGeometry, bhp: f64 },
    WaterInjector { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhaseWell {
    pub cell: usize,
    pub mode: TwoPhaseWellMode,
}

impl TwoPhaseWell {
    pub fn bhp_producer(cell: usize, pi_geo: PiGeometry, bhp: f64) -> Result<Self> {
        match pi_geo {
            PiGeometry::Explicit(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(Error::invalid(format!("geometric well index must be positive, got {v}")));
            }
            PiGeometry::PeacemanRadial { r_eq, r_w } if !(r_eq > r_w && r_w > 0.0) => {
                return Err(Error::invalid(format!(
                    "radial well needs r_eq > r_w > 0, got r_eq = {r_eq}, r_w = {r_w}"
                )));
            }
            _ => {}
        }
        if !bhp.is_finite() {
            return Err(Error::invalid("bottom-hole pressure must be finite"));
        }
        Ok(TwoPhaseWell {
            cell,
            mode: TwoPhaseWellMode::BhpProducer { pi_geo, bhp },
        })
    }

    pub fn water_injector(cell: usize, rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::invalid(format!("injection rate must be nonnegative, got {rate}")));
        }
        Ok(TwoPhaseWell {
            cell,
            mode: TwoPhaseWellMode::WaterInjector { rate },
        })
    }
}

/// Pressure and water saturation fields.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseState {
    pub pressure: Vec<f64>,
    pub s_w: Vec<f64>,
}

impl TwoPhaseState {
    pub fn uniform(n_cells: usize, pressure: f64, s_w: f64) -> Self {
        TwoPhaseState {
            pressure: vec![pressure; n_cells],
            s_w: vec![s_w; n_cells],
        }
    }

    pub fn validate(&self, fluid: &TwoPhaseFluid, n_cells: usize) -> Result<()> {
        if self.pressure.len() != n_cells || self.s_w.len() != n_cells {
            return Err(Error::invalid(format!(
                "state has {} pressures and {} saturations for {n_cells} cells",
                self.pressure.len(),
                self.s_w.len()
            )));
        }
        if let Some(p) = self.pressure.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("pressure must be finite, found {p}")));
        }
        if let Some(s) = self
            .s_w
            .iter()
            .find(|&&s| !(fluid.s_iw..=1.0).contains(&s))
        {
            return Err(Error::invalid(format!(
                "water saturation {s} outside [{}, 1]",
                fluid.s_iw
            )));
        }
        Ok(())
    }
}

/// Rates recorded for both phases; `total` and `water` share layout with
/// [`ResponseSeries`], positive = production.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseResponse {
    pub total: ResponseSeries,
    pub water: ResponseSeries,
}

/// Degeneracy accounting for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClampReport {
    /// Number of cell-steps whose raw saturation left [S_iw, 1].
    pub clamp_events: u64,
    /// Total water volume discarded by clamping, in m^3.
    pub clamped_volume: f64,
    /// Total water volume injected over the run, in m^3.
    pub injected_volume: f64,
    /// Steps whose maximum saturation change exceeded 0.5 before clamping.
    pub cfl_warnings: Vec<usize>,
}

/// Result of one explicit saturation update.
#[derive(Debug, Clone)]
pub struct SaturationStep {
    pub s_w: Vec<f64>,
    pub clamp_events: u64,
    pub clamped_volume: f64,
    /// Largest |dS| over cells, before clamping.
    pub max_change: f64,
}

#[derive(Debug, Clone)]
pub struct TwoPhaseModel {
    pub grid: Grid,
    pub fluid: TwoPhaseFluid,
    pub wells: Vec<TwoPhaseWell>,
    /// Fold producer terms into the pressure matrix. Required for fully
    /// incompressible cases, where the lagged-well matrix is singular.
    pub implicit_wells: bool,
    pub solver: SolverOpts,
}

impl TwoPhaseModel {
    pub fn new(grid: Grid, fluid: TwoPhaseFluid, wells: Vec<TwoPhaseWell>) -> Result<Self> {
        let n = grid.n_cells();
        for (w, well) in wells.iter().enumerate() {
            if well.cell >= n {
                return Err(Error::invalid(format!(
                    "well {w} sits in cell {} but the grid has {n} cells",
                    well.cell
                )));
            }
        }
        Ok(TwoPhaseModel {
            grid,
            fluid,
            wells,
            implicit_wells: false,
            solver: SolverOpts::default(),
        })
    }

    pub fn with_implicit_wells(mut self, implicit: bool) -> Self {
        self.implicit_wells = implicit;
        self
    }

    pub fn with_solver(mut self, solver: SolverOpts) -> Self {
        self.solver = solver;
        self
    }

    /// Alternates pressure and saturation steps over the whole time grid,
    /// recording per-well total and water rates.
    pub fn simulate(
        &self,
        rock: &RockRealization,
        timegrid: &TimeGrid,
        initial: &TwoPhaseState,
    ) -> Result<(TwoPhaseResponse, TwoPhaseState, ClampReport)> {
        initial.validate(&self.fluid, self.grid.n_cells())?;
        let mut sim = TwoPhaseSim::new(self, rock, timegrid.dt)?;
        let mut state = initial.clone();
        let n_wells = self.wells.len();
        let mut total = ResponseSeries::zeros(timegrid.n_steps, n_wells);
        let mut water = ResponseSeries::zeros(timegrid.n_steps, n_wells);
        let mut report = ClampReport::default();
        for step in 0..timegrid.n_steps {
            let p_new = sim.pressure_step(&state).map_err(|e| e.at_step(step))?;
            let p_for_wells = if self.implicit_wells { &p_new } else { &state.pressure };
            let (row_total, row_water) = sim.well_rates(&state.s_w, p_for_wells);
            total.set_row(step, &row_total);
            water.set_row(step, &row_water);
            let sat = sim.saturation_update(&state, &p_new);
            report.clamp_events += sat.clamp_events;
            report.clamped_volume += sat.clamped_volume;
            if sat.max_change > 0.5 {
                report.cfl_warnings.push(step);
            }
            report.injected_volume += timegrid.dt
                * self
                    .wells
                    .iter()
                    .map(|w| match w.mode {
                        TwoPhaseWellMode::WaterInjector { rate } => rate,
                        TwoPhaseWellMode::BhpProducer { .. } => 0.0,
                    })
                    .sum::<f64>();
            state = TwoPhaseState {
                pressure: p_new,
                s_w: sat.s_w,
            };
        }
        Ok((TwoPhaseResponse { total, water }, state, report))
    }
}

/// Per-realization working state: cached geometric transmissibilities,
/// resolved well indices, and the reusable sparse system.
pub struct TwoPhaseSim<'m> {
    model: &'m TwoPhaseModel,
    t_geo: Vec<f64>,
    /// Producers resolved to (well index, cell, pi_geo, bhp).
    producers: Vec<(usize, usize, f64, f64)>,
    /// Injectors resolved to (well index, cell, rate).
    injectors: Vec<(usize, usize, f64)>,
    pore_volume: Vec<f64>,
    sys: SparseSystem,
    dt: f64,
    max_iter: usize,
}

impl<'m> TwoPhaseSim<'m> {
    pub fn new(model: &'m TwoPhaseModel, rock: &RockRealization, dt: f64) -> Result<Self> {
        let grid = &model.grid;
        let n = grid.n_cells();
        if rock.n_cells() != n {
            return Err(Error::invalid(format!(
                "rock has {} cells, grid has {n}",
                rock.n_cells()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let fluid = &model.fluid;
        let incompressible = fluid.c_w == 0.0 && fluid.c_o == 0.0 && fluid.c_r == 0.0;
        let has_producer = model
            .wells
            .iter()
            .any(|w| matches!(w.mode, TwoPhaseWellMode::BhpProducer { .. }));
        if incompressible && !(model.implicit_wells && has_producer) {
            return Err(Error::invalid(
                "a fully incompressible model needs implicit well coupling and at \
                 least one pressure-controlled producer to fix the pressure level",
            ));
        }

        let t_geo: Vec<f64> = grid
            .faces()
            .iter()
            .map(|f| face_transmissibility_geometric(rock, f))
            .collect();
        let (_, _, dz) = grid.spacing();
        let mut producers = Vec::new();
        let mut injectors = Vec::new();
        for (w, well) in model.wells.iter().enumerate() {
            match well.mode {
                TwoPhaseWellMode::BhpProducer { pi_geo, bhp } => {
                    let resolved = match pi_geo {
                        PiGeometry::Explicit(v) => v,
                        PiGeometry::PeacemanRadial { r_eq, r_w } => {
                            let k = rock.perm_md[well.cell] * MILLIDARCY_TO_M2;
                            2.0 * std::f64::consts::PI * k * dz / (r_eq / r_w).ln()
                        }
                    };
                    producers.push((w, well.cell, resolved, bhp));
                }
                TwoPhaseWellMode::WaterInjector { rate } => {
                    injectors.push((w, well.cell, rate));
                }
            }
        }
        let pore_volume: Vec<f64> = rock
            .porosity
            .iter()
            .map(|&phi| grid.cell_volume() * phi)
            .collect();
        let edges: Vec<(usize, usize)> = grid.edges().collect();
        let pattern = SymmetricPattern::from_edges(n, &edges)?;
        let max_iter = model.solver.max_iter_factor.saturating_mul(n).max(1);
        Ok(TwoPhaseSim {
            model,
            t_geo,
            producers,
            injectors,
            pore_volume,
            sys: SparseSystem::new(pattern),
            dt,
            max_iter,
        })
    }

    /// Per-cell phase mobilities at the state's saturations.
    fn cell_mobilities(&self, s_w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let fluid = &self.model.fluid;
        let mut lam_w = Vec::with_capacity(s_w.len());
        let mut lam_o = Vec::with_capacity(s_w.len());
        for &s in s_w {
            let (k_rw, k_ro) = rel_perm(s, fluid.s_iw, fluid.beta)?;
            lam_w.push(k_rw / fluid.mu_w);
            lam_o.push(k_ro / fluid.mu_o);
        }
        Ok((lam_w, lam_o))
    }

    /// Solves for the end-of-step pressure with mobilities frozen at the
    /// given state.
    pub fn pressure_step(&mut self, state: &TwoPhaseState) -> Result<Vec<f64>> {
        let fluid = &self.model.fluid;
        let n = self.pore_volume.len();
        state.validate(fluid, n)?;
        let (lam_w, lam_o) = self.cell_mobilities(&state.s_w)?;
        self.sys.clear();
        for i in 0..n {
            let s_w = state.s_w[i];
            let c_t = fluid.c_r + (1.0 - s_w) * fluid.c_o + s_w * fluid.c_w;
            let accum = self.pore_volume[i] * c_t / self.dt;
            self.sys.add_diag(i, accum);
            self.sys.rhs[i] = accum * state.pressure[i];
        }
        for (e, face) in self.model.grid.faces().iter().enumerate() {
            let donor = upwind_cell(face, &state.pressure);
            let coeff = (lam_w[donor] + lam_o[donor]) * self.t_geo[e];
            self.sys.add_edge(e, -coeff);
            self.sys.add_diag(face.cell_i, coeff);
            self.sys.add_diag(face.cell_j, coeff);
        }
        for &(_, cell, pi_geo, bhp) in &self.producers {
            let pi_total = pi_geo * (lam_w[cell] + lam_o[cell]);
            if self.model.implicit_wells {
                self.sys.add_diag(cell, pi_total);
                self.sys.rhs[cell] += pi_total * bhp;
            } else {
                self.sys.rhs[cell] -= pi_total * (state.pressure[cell] - bhp);
            }
        }
        for &(_, cell, rate) in &self.injectors {
            self.sys.rhs[cell] += rate;
        }
        debug_assert!(self.sys.is_diagonally_dominant(1e-9));
        solve_spd_warm(
            &self.sys,
            Some(&state.pressure),
            self.model.solver.rel_tol,
            self.max_iter,
        )
    }

    /// Explicit saturation update using the same upwind water mobilities the
    /// pressure step used, clamped to [S_iw, 1].
    pub fn saturation_update(&self, state: &TwoPhaseState, new_p: &[f64]) -> SaturationStep {
        let fluid = &self.model.fluid;
        let n = self.pore_volume.len();
        let (lam_w, _) = self
            .cell_mobilities(&state.s_w)
            .expect("state was validated by pressure_step");
        let mut flux_w = vec![0.0; n];
        for (e, face) in self.model.grid.faces().iter().enumerate() {
            let donor = upwind_cell(face, &state.pressure);
            let coeff = lam_w[donor] * self.t_geo[e];
            let f = coeff * (new_p[face.cell_j] - new_p[face.cell_i]);
            flux_w[face.cell_i] += f;
            flux_w[face.cell_j] -= f;
        }
        let implicit = self.model.implicit_wells;
        for &(_, cell, pi_geo, bhp) in &self.producers {
            let p_used = if implicit { new_p[cell] } else { state.pressure[cell] };
            flux_w[cell] -= pi_geo * lam_w[cell] * (p_used - bhp);
        }
        for &(_, cell, rate) in &self.injectors {
            flux_w[cell] += rate;
        }
        let mut s_new = Vec::with_capacity(n);
        let mut clamp_events = 0u64;
        let mut clamped_volume = 0.0;
        let mut max_change: f64 = 0.0;
        for i in 0..n {
            let ds = -state.s_w[i] * fluid.c_w * (new_p[i] - state.pressure[i])
                + self.dt / self.pore_volume[i] * flux_w[i];
            max_change = max_change.max(ds.abs());
            let raw = state.s_w[i] + ds;
            let clamped = raw.clamp(fluid.s_iw, 1.0);
            if raw != clamped {
                clamp_events += 1;
                clamped_volume += self.pore_volume[i] * (raw - clamped).abs();
            }
            s_new.push(clamped);
        }
        SaturationStep {
            s_w: s_new,
            clamp_events,
            clamped_volume,
            max_change,
        }
    }

    /// Per-well (total, water) production rates with mobilities at the given
    /// saturations and well pressures at `p_for_wells` (start-of-step for
    /// explicit coupling, end-of-step for implicit). Injectors report their
    /// prescribed rate, negated.
    pub fn well_rates(&self, s_w: &[f64], p_for_wells: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n_wells = self.model.wells.len();
        let mut total = vec![0.0; n_wells];
        let mut water = vec![0.0; n_wells];
        let (lam_w, lam_o) = self
            .cell_mobilities(s_w)
            .expect("saturations stay in range between steps");
        for &(w, cell, pi_geo, bhp) in &self.producers {
            let drawdown = p_for_wells[cell] - bhp;
            total[w] = pi_geo * (lam_w[cell] + lam_o[cell]) * drawdown;
            water[w] = pi_geo * lam_w[cell] * drawdown;
        }
        for &(w, _, rate) in &self.injectors {
            total[w] = -rate;
            water[w] = -rate;
        }
        (total, water)
    }

    /// Pore volume V_i phi_i per cell.
    pub fn pore_volume(&self) -> &[f64] {
        &self.pore_volume
    }
}
