//! Slightly compressible single-phase flow on a structured grid, integrated
//! implicitly with a finite-volume discretization.
//!
//! Discrete balance for cell i over one step:
//!
//! ```text
//! V_i phi_i c_t (p_i^{n+1} - p_i^n) / dt
//!     = sum_j T_ij (p_j^{n+1} - p_i^{n+1}) - q_i
//! ```
//!
//! where `q_i` is the total well rate in the cell, positive for production.
//! By default well rates are evaluated at the start-of-step pressure
//! (explicit well coupling); `implicit_wells` moves the productivity term
//! onto the matrix diagonal instead.
//!
//! Everything in this module is in SI units: Pa, m, s, Pa.s, 1/Pa, m^3/s,
//! and productivity index in m^3/s/Pa. Configuration-level field units are
//! converted before models are built.

use crate::error::{Error, Result};
use crate::grid::{face_transmissibility, Grid, RockRealization};
use crate::linsolve::{solve_spd_warm, SparseSystem, SymmetricPattern};

/// Single-phase fluid and rock compressibility lumped together.
#[derive(Debug, Clone, Copy)]
pub struct SinglePhaseFluid {
    pub viscosity: f64,
    pub total_compressibility: f64,
}

impl SinglePhaseFluid {
    pub fn new(viscosity: f64, total_compressibility: f64) -> Result<Self> {
        if !(viscosity > 0.0 && viscosity.is_finite()) {
            return Err(Error::invalid(format!("viscosity must be positive, got {viscosity}")));
        }
        if !(total_compressibility > 0.0 && total_compressibility.is_finite()) {
            return Err(Error::invalid(format!(
                "total compressibility must be positive, got {total_compressibility}"
            )));
        }
        Ok(SinglePhaseFluid {
            viscosity,
            total_compressibility,
        })
    }
}

/// How a well is operated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WellMode {
    /// Producer at fixed bottom-hole pressure; rate = pi * (p_cell - bhp).
    BhpProducer { pi: f64, bhp: f64 },
    /// Injector at a fixed volumetric rate (positive = into the reservoir).
    RateInjector { rate: f64 },
}

/// A well completed in one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub cell: usize,
    pub mode: WellMode,
}

impl Well {
    pub fn bhp_producer(cell: usize, pi: f64, bhp: f64) -> Result<Self> {
        if !(pi > 0.0 && pi.is_finite()) {
            return Err(Error::invalid(format!("productivity index must be positive, got {pi}")));
        }
        if !bhp.is_finite() {
            return Err(Error::invalid("bottom-hole pressure must be finite"));
        }
        Ok(Well {
            cell,
            mode: WellMode::BhpProducer { pi, bhp },
        })
    }

    pub fn rate_injector(cell: usize, rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::invalid(format!("injection rate must be nonnegative, got {rate}")));
        }
        Ok(Well {
            cell,
            mode: WellMode::RateInjector { rate },
        })
    }
}

/// Production rate of a pressure-controlled well at the given cell pressure.
/// Positive means fluid leaves the reservoir; a negative value is backflow.
pub fn well_rate(p_cell: f64, well: &Well) -> Result<f64> {
    match well.mode {
        WellMode::BhpProducer { pi, bhp } => Ok(pi * (p_cell - bhp)),
        WellMode::RateInjector { .. } => Err(Error::invalid(
            "rate-controlled well has a prescribed rate, not a pressure-derived one",
        )),
    }
}

/// A uniform time discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid { dt, n_steps })
    }

    pub fn end_time(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

/// Per-step, per-well rates recorded by a simulation. Stored step-major:
/// entry (step, well) at `step * n_wells + well`. Positive = production;
/// rate injectors appear as constant negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSeries {
    n_steps: usize,
    n_wells: usize,
    data: Vec<f64>,
}

impl ResponseSeries {
    pub fn zeros(n_steps: usize, n_wells: usize) -> Self {
        ResponseSeries {
            n_steps,
            n_wells,
            data: vec![0.0; n_steps * n_wells],
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_wells(&self) -> usize {
        self.n_wells
    }

    pub fn get(&self, step: usize, well: usize) -> f64 {
        self.data[step * self.n_wells + well]
    }

    pub fn set(&mut self, step: usize, well: usize, value: f64) {
        self.data[step * self.n_wells + well] = value;
    }

    pub fn row(&self, step: usize) -> &[f64] {
        &self.data[step * self.n_wells..(step + 1) * self.n_wells]
    }

    pub fn set_row(&mut self, step: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.n_wells);
        self.data[step * self.n_wells..(step + 1) * self.n_wells].copy_from_slice(values);
    }

    /// The full series of one well.
    pub fn well_series(&self, well: usize) -> Vec<f64> {
        (0..self.n_steps).map(|s| self.get(s, well)).collect()
    }

    /// Concatenates the series of the listed wells into one flat vector,
    /// well-major: all steps of the first listed well, then the next. This
    /// is the row layout of a response ensemble.
    pub fn flatten_wells(&self, wells: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(wells.len() * self.n_steps);
        for &w in wells {
            for s in 0..self.n_steps {
                out.push(self.get(s, w));
            }
        }
        out
    }
}

/// Tolerances for the inner linear solves.
#[derive(Debug, Clone, Copy)]
pub struct SolverOpts {
    /// Relative residual target, `||b - A x|| <= rel_tol * ||b||`.
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the unknown count.
    pub max_iter_factor: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            rel_tol: 1e-10,
            max_iter_factor: 10,
        }
    }
}

/// A single-phase model: geometry, fluid, wells, and solver settings.
/// Rock enters per realization at simulation time.
#[derive(Debug, Clone)]
pub struct SinglePhaseModel {
    pub grid: Grid,
    pub fluid: SinglePhaseFluid,
    pub wells: Vec<Well>,
    /// Fold BHP-producer terms into the matrix instead of lagging them.
    pub implicit_wells: bool,
    pub solver: SolverOpts,
}

impl SinglePhaseModel {
    pub fn new(grid: Grid, fluid: SinglePhaseFluid, wells: Vec<Well>) -> Result<Self> {
        let n = grid.n_cells();
        for (w, well) in wells.iter().enumerate() {
            if well.cell >= n {
                return Err(Error::invalid(format!(
                    "well {w} sits in cell {} but the grid has {n} cells",
                    well.cell
                )));
            }
        }
        Ok(SinglePhaseModel {
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

    /// Marches `timegrid.n_steps` implicit steps from a uniform or given
    /// initial pressure; returns the recorded well rates and the final
    /// pressure field (for prediction restarts).
    pub fn simulate(
        &self,
        rock: &RockRealization,
        timegrid: &TimeGrid,
        initial_p: &[f64],
    ) -> Result<(ResponseSeries, Vec<f64>)> {
        let mut sim = SinglePhaseSim::new(self, rock, timegrid.dt)?;
        let mut p = initial_p.to_vec();
        if p.len() != self.grid.n_cells() {
            return Err(Error::invalid(format!(
                "initial pressure has {} cells, grid has {}",
                p.len(),
                self.grid.n_cells()
            )));
        }
        let mut rates = ResponseSeries::zeros(timegrid.n_steps, self.wells.len());
        for step in 0..timegrid.n_steps {
            let p_new = sim.step(&p).map_err(|e| e.at_step(step))?;
            let p_for_wells = if self.implicit_wells { &p_new } else { &p };
            rates.set_row(step, &sim.well_rates(p_for_wells));
            p = p_new;
        }
        Ok((rates, p))
    }

    /// [`SinglePhaseModel::simulate`] from a uniform initial pressure.
    pub fn simulate_uniform(
        &self,
        rock: &RockRealization,
        timegrid: &TimeGrid,
        p0: f64,
    ) -> Result<(ResponseSeries, Vec<f64>)> {
        self.simulate(rock, timegrid, &vec![p0; self.grid.n_cells()])
    }
}

/// One realization's assembled system, reused across time steps. The matrix
/// is constant (transmissibilities and accumulation do not depend on
/// pressure), so only the right-hand side changes per step.
pub struct SinglePhaseSim<'m> {
    model: &'m SinglePhaseModel,
    sys: SparseSystem,
    /// V_i phi_i c_t / dt per cell.
    accumulation: Vec<f64>,
    tol: f64,
    max_iter: usize,
}

impl<'m> SinglePhaseSim<'m> {
    pub fn new(model: &'m SinglePhaseModel, rock: &RockRealization, dt: f64) -> Result<Self> {
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
        let edges: Vec<(usize, usize)> = grid.edges().collect();
        let pattern = SymmetricPattern::from_edges(n, &edges)?;
        let mut sys = SparseSystem::new(pattern);

        let volume = grid.cell_volume();
        let c_t = model.fluid.total_compressibility;
        let accumulation: Vec<f64> = rock
            .porosity
            .iter()
            .map(|&phi| volume * phi * c_t / dt)
            .collect();
        for (i, &a) in accumulation.iter().enumerate() {
            sys.add_diag(i, a);
        }
        for (e, face) in grid.faces().iter().enumerate() {
            let t = face_transmissibility(rock, face, model.fluid.viscosity);
            sys.add_edge(e, -t);
            sys.add_diag(face.cell_i, t);
            sys.add_diag(face.cell_j, t);
        }
        if model.implicit_wells {
            for well in &model.wells {
                if let WellMode::BhpProducer { pi, .. } = well.mode {
                    sys.add_diag(well.cell, pi);
                }
            }
        }
        debug_assert!(sys.is_diagonally_dominant(1e-9));

        let max_iter = model.solver.max_iter_factor.saturating_mul(n).max(1);
        Ok(SinglePhaseSim {
            model,
            sys,
            accumulation,
            tol: model.solver.rel_tol,
            max_iter,
        })
    }

    /// Advances one implicit step from `p_n`, returning the new pressure.
    pub fn step(&mut self, p_n: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(p_n.len(), self.accumulation.len());
        for (i, b) in self.sys.rhs.iter_mut().enumerate() {
            *b = self.accumulation[i] * p_n[i];
        }
        for well in &self.model.wells {
            match well.mode {
                WellMode::BhpProducer { pi, bhp } => {
                    if self.model.implicit_wells {
                        self.sys.rhs[well.cell] += pi * bhp;
                    } else {
                        self.sys.rhs[well.cell] -= pi * (p_n[well.cell] - bhp);
                    }
                }
                WellMode::RateInjector { rate } => {
                    self.sys.rhs[well.cell] += rate;
                }
            }
        }
        solve_spd_warm(&self.sys, Some(p_n), self.tol, self.max_iter)
    }

    /// Per-well production rates at the given pressure field. For explicit
    /// well coupling pass the start-of-step pressure (the one the step
    /// actually used); for implicit coupling pass the end-of-step pressure.
    pub fn well_rates(&self, p: &[f64]) -> Vec<f64> {
        self.model
            .wells
            .iter()
            .map(|w| match w.mode {
                WellMode::BhpProducer { pi, bhp } => pi * (p[w.cell] - bhp),
                WellMode::RateInjector { rate } => -rate,
            })
            .collect()
    }

    /// V_i phi_i c_t / dt per cell, as assembled.
    pub fn accumulation(&self) -> &[f64] {
        &self.accumulation
    }
}

/// Relative mass-balance defect of one recorded step: stored-volume change
/// plus net produced volume, normalized by the larger of the two magnitudes.
pub fn mass_balance_residual(
    accumulation: &[f64],
    dt: f64,
    p_old: &[f64],
    p_new: &[f64],
    rates_row: &[f64],
) -> f64 {
    let stored: f64 = accumulation
        .iter()
        .zip(p_new.iter().zip(p_old))
        .map(|(&a, (&pn, &po))| a * dt * (pn - po))
        .sum();
    let produced: f64 = rates_row.iter().sum::<f64>() * dt;
    let scale_stored: f64 = accumulation
        .iter()
        .zip(p_new.iter().zip(p_old))
        .map(|(&a, (&pn, &po))| (a * dt * (pn - po)).abs())
        .sum();
    let scale_rates: f64 = rates_row.iter().map(|q| (q * dt).abs()).sum();
    let scale = scale_stored.max(scale_rates).max(f64::MIN_POSITIVE);
    (stored + produced).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_cell_model(implicit: bool) -> SinglePhaseModel {
        // V = 1000 m^3, phi = 0.1, c_t = 0.01 -> V phi c_t = 1 exactly.
        let grid = Grid::new((1, 1, 1), (10.0, 10.0, 10.0)).unwrap();
        let fluid = SinglePhaseFluid::new(1.0, 0.01).unwrap();
        let well = Well::bhp_producer(0, 0.1, 20.0).unwrap();
        SinglePhaseModel::new(grid, fluid, vec![well])
            .unwrap()
            .with_implicit_wells(implicit)
    }

    #[test]
    fn single_cell_explicit_well_closed_form() {
        // V phi c_t = 1, dt = 1, PI = 0.1, p0 = 21, p_wf = 20:
        // p1 = 21 - 0.1 * (21 - 20) = 20.9.
        let model = single_cell_model(false);
        let rock = RockRealization::with_uniform_porosity(vec![100.0], 0.1).unwrap();
        let tg = TimeGrid::new(1.0, 1).unwrap();
        let (rates, p) = model.simulate_uniform(&rock, &tg, 21.0).unwrap();
        assert!((p[0] - 20.9).abs() <= 1e-12 * 20.9, "p1 = {}", p[0]);
        assert!((rates.get(0, 0) - 0.1).abs() <= 1e-12);
    }

    #[test]
    fn single_cell_implicit_well_closed_form() {
        // (1 + PI) p1 = p0 + PI p_wf -> p1 = 23 / 1.1.
        let model = single_cell_model(true);
        let rock = RockRealization::with_uniform_porosity(vec![100.0], 0.1).unwrap();
        let tg = TimeGrid::new(1.0, 1).unwrap();
        let (rates, p) = model.simulate_uniform(&rock, &tg, 21.0).unwrap();
        let expected = 23.0 / 1.1;
        assert!((p[0] - expected).abs() <= 1e-10 * expected);
        assert!((rates.get(0, 0) - 0.1 * (expected - 20.0)).abs() <= 1e-10);
    }

    #[test]
    fn single_cell_rate_injector() {
        let grid = Grid::new((1, 1, 1), (10.0, 10.0, 10.0)).unwrap();
        let fluid = SinglePhaseFluid::new(1.0, 0.01).unwrap();
        let well = Well::rate_injector(0, 0.1).unwrap();
        let model = SinglePhaseModel::new(grid, fluid, vec![well]).unwrap();
        let rock = RockRealization::with_uniform_porosity(vec![100.0], 0.1).unwrap();
        let tg = TimeGrid::new(1.0, 1).unwrap();
        let (rates, p) = model.simulate_uniform(&rock, &tg, 21.0).unwrap();
        assert!((p[0] - 21.1).abs() <= 1e-12 * 21.1);
        assert_eq!(rates.get(0, 0), -0.1);
    }

    #[test]
    fn uniform_pressure_without_wells_is_bitwise_invariant() {
        let grid = Grid::new((6, 5, 2), (10.0, 10.0, 2.0)).unwrap();
        let fluid = SinglePhaseFluid::new(0.002, 5e-8).unwrap();
        let model = SinglePhaseModel::new(grid, fluid, vec![]).unwrap();
        let perm: Vec<f64> = (0..60).map(|i| 50.0 + (i as f64) * 13.7).collect();
        let rock = RockRealization::with_uniform_porosity(perm, 0.1).unwrap();
        let p0 = 2.0e7;
        let tg = TimeGrid::new(1e5, 25).unwrap();
        let (_, p) = model.simulate_uniform(&rock, &tg, p0).unwrap();
        assert!(p.iter().all(|&pi| pi == p0), "uniform field drifted");
    }

    #[test]
    fn two_equal_cells_stay_symmetric() {
        let grid = Grid::new((2, 1, 1), (10.0, 10.0, 10.0)).unwrap();
        let fluid = SinglePhaseFluid::new(0.002, 5e-8).unwrap();
        let model = SinglePhaseModel::new(grid, fluid, vec![]).unwrap();
        let rock = RockRealization::with_uniform_porosity(vec![200.0, 200.0], 0.2).unwrap();
        let tg = TimeGrid::new(1e4, 10).unwrap();
        let (_, p) = model.simulate_uniform(&rock, &tg, 1.5e7).unwrap();
        assert_eq!(p[0], 1.5e7);
        assert_eq!(p[1], 1.5e7);
    }

    #[test]
    fn drawdown_decays_toward_bhp() {
        let grid = Grid::new((5, 5, 1), (20.0, 20.0, 4.0)).unwrap();
        let fluid = SinglePhaseFluid::new(0.002, 5e-8).unwrap();
        let well = Well::bhp_producer(12, 1.175e-11, 2.0e7).unwrap();
        let model = SinglePhaseModel::new(grid, fluid, vec![well]).unwrap();
        let rock = RockRealization::with_uniform_porosity(vec![300.0; 25], 0.1).unwrap();
        let tg = TimeGrid::new(1e5, 150).unwrap();
        let (rates, p) = model.simulate_uniform(&rock, &tg, 3.0e7).unwrap();
        for s in 1..tg.n_steps {
            assert!(
                rates.get(s, 0) <= rates.get(s - 1, 0) + 1e-15,
                "drawdown rate must decay monotonically"
            );
            assert!(rates.get(s, 0) > 0.0);
        }
        assert!(p.iter().all(|&pi| pi > 2.0e7 && pi < 3.0e7));
    }

    #[test]
    fn per_step_mass_balance_closes() {
        let grid = Grid::new((4, 4, 1), (25.0, 25.0, 5.0)).unwrap();
        let fluid = SinglePhaseFluid::new(0.002, 5e-8).unwrap();
        let wells = vec![
            Well::bhp_producer(0, 1.175e-11, 2.0e7).unwrap(),
            Well::rate_injector(15, 1e-5).unwrap(),
        ];
        let model = SinglePhaseModel::new(grid, fluid, wells)
            .unwrap()
            .with_solver(SolverOpts {
                rel_tol: 1e-12,
                max_iter_factor: 20,
            });
        let perm: Vec<f64> = (0..16).map(|i| 80.0 * (1.0 + 0.3 * (i as f64).sin())).collect();
        let rock = RockRealization::with_uniform_porosity(perm, 0.15).unwrap();
        let dt = 5e4;
        let mut sim = SinglePhaseSim::new(&model, &rock, dt).unwrap();
        let mut p = vec![2.6e7; 16];
        for _ in 0..40 {
            let p_new = sim.step(&p).unwrap();
            let rates = sim.well_rates(&p);
            let defect = mass_balance_residual(sim.accumulation(), dt, &p, &p_new, &rates);
            assert!(defect <= 1e-8, "mass balance defect {defect:e}");
            p = p_new;
        }
    }

    #[test]
    fn well_rate_rejects_rate_mode() {
        let w = Well::rate_injector(0, 1e-4).unwrap();
        assert!(well_rate(1e7, &w).is_err());
        let w = Well::bhp_producer(0, 2e-11, 2.0e7).unwrap();
        assert!((well_rate(2.5e7, &w).unwrap() - 2e-11 * 5e6).abs() < 1e-18);
    }

    #[test]
    fn response_series_layout() {
        let mut r = ResponseSeries::zeros(3, 2);
        for s in 0..3 {
            for w in 0..2 {
                r.set(s, w, (10 * s + w) as f64);
            }
        }
        assert_eq!(r.row(1), &[10.0, 11.0]);
        assert_eq!(r.well_series(1), vec![1.0, 11.0, 21.0]);
        assert_eq!(
            r.flatten_wells(&[1, 0]),
            vec![1.0, 11.0, 21.0, 0.0, 10.0, 20.0]
        );
    }

    #[test]
    fn model_rejects_out_of_range_well() {
        let grid = Grid::new((2, 2, 1), (10.0, 10.0, 10.0)).unwrap();
        let fluid = SinglePhaseFluid::new(0.002, 5e-8).unwrap();
        let well = Well::bhp_producer(4, 1e-11, 2e7).unwrap();
        assert!(SinglePhaseModel::new(grid, fluid, vec![well]).is_err());
    }
}
