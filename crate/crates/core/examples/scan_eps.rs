// temporary diagnostic: t=3 refinement study, two-step BDF bulk scheme
use platelet_core::afm::{AfmSolverConfig, AfmSystem, BoundaryData};
use platelet_core::geometry::{shape_c1, shape_e1, GeometrySource, PlateletGeometry};
use platelet_core::grid::{GridModel, OuterBc, PointClass};
use platelet_core::Vec2;
use std::f64::consts::PI;

fn run(n: usize) -> (GridModel, Vec<f64>) {
    let diffusion = 0.1;
    let dt = 0.005 * 32.0 / n as f64;
    let c1 = PlateletGeometry::fit_shape("c1", shape_c1(), 50, 0.9, 100, GeometrySource::RbfModel).unwrap();
    let e1 = PlateletGeometry::fit_shape("e1", shape_e1(), 50, 0.9, 100, GeometrySource::RbfModel).unwrap();
    let grid = GridModel::classify(1.0, 1.0, n, n + 1, OuterBc::periodic_x_neumann_y(), &[&c1, &e1]).unwrap();
    let cstar = move |p: Vec2, t: f64| (PI * p.x).sin() * (PI * p.y).sin() * (-PI * PI * t).exp();
    let grad = move |p: Vec2, t: f64| PI * (-PI * PI * t).exp() * Vec2::new((PI * p.x).cos() * (PI * p.y).sin(), (PI * p.x).sin() * (PI * p.y).cos());
    let source = move |p: Vec2, t: f64| -0.8 * PI * PI * cstar(p, t);
    let mut sys = AfmSystem::new(&grid, diffusion, dt, 5.0, AfmSolverConfig::default()).unwrap();
    let mut c: Vec<f64> = (0..grid.n_points()).map(|i| cstar(grid.point_at(i), 0.0)).collect();
    let records = grid.forcing_records().to_vec();
    let robin = vec![-1.0f64; records.len()];
    for step in 0..(3.0 / dt).round() as usize {
        let t = step as f64 * dt;
        let data: Vec<f64> = records.iter()
            .map(|r| -diffusion * grad(r.boundary_point, t + dt).dot(&r.normal) + cstar(r.boundary_point, t + dt))
            .collect();
        sys.set_robin_data(&robin, &data).unwrap();
        sys.step(&mut c, t, Some(&source), &BoundaryData::Homogeneous).unwrap();
    }
    (grid, c)
}

fn main() {
    let t0 = std::time::Instant::now();
    let (gref, cref) = run(256);
    eprintln!("ref: {:.0}s", t0.elapsed().as_secs_f64());
    let mut prev: Option<(f64, f64)> = None;
    for n in [32usize, 64, 128] {
        let (g, c) = run(n);
        let ratio = 256 / n;
        let h = g.hx();
        let (mut l2, mut linf) = (0.0, 0.0f64);
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let idx = g.index(i, j);
                if g.class(idx) != PointClass::Fluid { continue; }
                let e = (c[idx] - cref[gref.index(i * ratio, j * ratio)]).abs();
                l2 += e * e;
                linf = linf.max(e);
            }
        }
        let l2 = (h * h * l2).sqrt();
        match prev {
            Some((p2, pf)) => println!("n {n:4}: L2 {l2:.4e} (ord {:.2})  Linf {linf:.4e} (ord {:.2})", (p2/l2).log2(), (pf/linf).log2()),
            None => println!("n {n:4}: L2 {l2:.4e}  Linf {linf:.4e}"),
        }
        prev = Some((l2, linf));
    }
}
