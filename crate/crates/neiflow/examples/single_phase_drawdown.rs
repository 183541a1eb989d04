//! Drawdown of a closed 2D reservoir through one corner producer: builds a
//! heterogeneous field by hand, simulates, and prints the rate decline.

use neiflow::grid::{Grid, RockRealization};
use neiflow::single_phase::{SinglePhaseFluid, SinglePhaseModel, TimeGrid, Well};
use neiflow::units::md_to_m2;

fn main() -> neiflow::Result<()> {
    let grid = Grid::new((10, 10, 1), (10.0, 10.0, 10.0))?;

    // A smooth high-permeability streak across an otherwise tight field.
    let perm_md: Vec<f64> = (0..grid.n_cells())
        .map(|c| {
            let (i, j, _) = grid.cell_coords(c);
            if (i as i64 - j as i64).abs() <= 1 {
                20.0
            } else {
                2.0
            }
        })
        .collect();
    let rock = RockRealization::with_uniform_porosity(perm_md, 0.1)?;

    let fluid = SinglePhaseFluid::new(0.002, 5.0e-8)?;
    let pi = 1.175e-5 / 1.0e6; // m3/(s MPa) to m3/(s Pa)
    let producer = Well::bhp_producer(0, pi, 20.0e6)?;
    let model = SinglePhaseModel::new(grid, fluid, vec![producer])?;

    let timegrid = TimeGrid::new(1.0e5, 60)?;
    let (rates, pressure) = model.simulate_uniform(&rock, &timegrid, 30.0e6)?;

    println!("step       rate m3/s");
    for step in (0..timegrid.n_steps).step_by(10) {
        println!("{step:>4}    {:.6e}", rates.get(step, 0));
    }
    let p_min = pressure.iter().cloned().fold(f64::INFINITY, f64::min);
    let p_max = pressure.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "final pressure range {:.3} .. {:.3} MPa",
        p_min / 1.0e6,
        p_max / 1.0e6
    );
    println!(
        "streak permeability {:.3e} m2",
        md_to_m2(20.0)
    );
    Ok(())
}
