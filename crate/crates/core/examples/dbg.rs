// temporary diagnostic: Schur matrix conditioning across grids
use platelet_core::afm::{AfmSolverConfig, AfmSystem};
use platelet_core::geometry::{shape_c1, shape_e1, GeometrySource, PlateletGeometry};
use platelet_core::grid::{GridModel, OuterBc};
use platelet_core::linalg::solve_dense;

fn main() {
    for n in [32usize, 64, 128, 256] {
        let diffusion = 0.1;
        let dt = 0.005 * 32.0 / n as f64;
        let c1 = PlateletGeometry::fit_shape("c1", shape_c1(), 50, 0.9, 100, GeometrySource::RbfModel).unwrap();
        let e1 = PlateletGeometry::fit_shape("e1", shape_e1(), 50, 0.9, 100, GeometrySource::RbfModel).unwrap();
        let grid = GridModel::classify(1.0, 1.0, n, n + 1, OuterBc::periodic_x_neumann_y(), &[&c1, &e1]).unwrap();
        let mut sys = AfmSystem::new(&grid, diffusion, dt, 5.0, AfmSolverConfig::default()).unwrap();
        let records = grid.forcing_records().to_vec();
        let robin = vec![-1.0f64; records.len()];
        let data = vec![0.0f64; records.len()];
        sys.set_robin_data(&robin, &data).unwrap();
        match sys.debug_schur_svals() {
            Some((smax, smin)) => println!(
                "n {n:4}: N_F {:4}  sigma_max {smax:.3e}  sigma_min {smin:.3e}  cond {:.3e}",
                records.len(), smax / smin
            ),
            None => println!("n {n}: no schur"),
        }
    }
}
