//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! and then asserts on the same condition.

use std::f64::consts::PI;
use std::time::Instant;

use fracsparse::assembly::{
    assemble_full, assemble_stiffness, cell_averages, l2_inner_omega, l2_inner_p0, trace_of, CylinderField, TraceField,
};
use fracsparse::harness::{
    fit_rate, level_mesh, run_decay_study, run_solver_agreement_study, run_state_rate_study,
    variational_inequality_min, StudySpec, DEFAULT_YS,
};
use fracsparse::linsolve::{cg_solve, dense_solve};
use fracsparse::mesh::{build_base, graded_axis, tensor_mesh};
use fracsparse::optimizer::{optimize, sparsity_report, FemSolver, OptimizerSettings};
use fracsparse::problem::{optimal_control_pointwise, proj_interval, ControlField, ProblemConfig};
use fracsparse::spectral::SpectralExpansion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "[{verdict}] criterion {id}: {name} ({detail}; {:.2?})",
        started.elapsed()
    );
}

fn phi1_config(s: f64) -> ProblemConfig {
    ProblemConfig::with_spectral_target(s, 1.0, 0.1, vec![1.0])
}

#[test]
fn criterion_1_state_rate() {
    let started = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for s in [0.3, 0.5, 0.7] {
        let spec = StudySpec {
            cfg: phi1_config(s),
            levels: vec![8, 16, 32, 64],
            ..Default::default()
        };
        let table = run_state_rate_study(&spec).unwrap();
        let slope = table.slope.unwrap();
        let energy: Vec<(f64, f64)> = table
            .rows
            .iter()
            .map(|r| (r.total_cells as f64, r.secondary.unwrap()))
            .collect();
        let energy_slope = fit_rate(&energy).unwrap();
        pass &= (-0.65..=-0.40).contains(&slope);
        detail.push(format!("s={s}: H^s slope {slope:.3}, energy slope {energy_slope:.3}"));
    }
    let detail = format!("band [-0.65, -0.40]; {}", detail.join(", "));
    report(1, "state rate", pass, &detail, started);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_2_exponential_decay() {
    let started = Instant::now();
    let cfg = phi1_config(0.5);
    let forcing = SpectralExpansion::new(1.0, 0.0, vec![1.0]);
    let table = run_decay_study(&cfg, &DEFAULT_YS, &forcing, 32, 192).unwrap();
    let decreasing = table.rows.windows(2).all(|w| w[1].1 < w[0].1);
    let near_pi = (table.slope + PI).abs() <= 0.15 * PI;
    let pass = table.meets_bound() && near_pi && decreasing;
    let detail = format!(
        "slope {:.4}, bound {:.4}, |slope + pi|/pi = {:.3}",
        table.slope,
        0.8 * table.theory_rate,
        (table.slope + PI).abs() / PI
    );
    report(2, "exponential decay", pass, &detail, started);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_3_optimality_system() {
    let started = Instant::now();
    let cfg = phi1_config(0.5);
    let mesh = level_mesh(&cfg, 16).unwrap();
    let kkt_tol = 1e-12;
    let settings = OptimizerSettings {
        kkt_tol,
        cg_tol: 1e-13,
        ..Default::default()
    };
    let triple = optimize(&cfg, &mesh, &settings).unwrap();
    let vi = variational_inequality_min(&triple, &cfg, mesh.base(), 100, 11).unwrap();
    let flags = sparsity_report(&triple, &cfg, mesh.base(), kkt_tol).unwrap();
    let zeros = flags.iter().filter(|f| f.zero_control).count();
    let pass = triple.kkt_residual <= 1e-8 && vi >= -1e-10 && flags.iter().all(|f| f.consistent);
    let detail = format!(
        "kkt {:.2e}, min VI {vi:.2e}, {zeros}/{} zero cells, biconditional {}",
        triple.kkt_residual,
        flags.len(),
        flags.iter().all(|f| f.consistent)
    );
    report(3, "optimality system", pass, &detail, started);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_4_solver_agreement() {
    let started = Instant::now();
    let spec = StudySpec {
        cfg: phi1_config(0.5),
        levels: vec![8, 16, 32, 64],
        ..Default::default()
    };
    let (table, _) = run_solver_agreement_study(&spec).unwrap();
    let errors = table.errors();
    let slope = table.slope.unwrap();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let finest = *errors.last().unwrap();
    let pass = decreasing && (-0.70..=-0.35).contains(&slope) && finest <= 5e-3;
    let errs: Vec<String> = errors.iter().map(|e| format!("{e:.2e}")).collect();
    let detail = format!(
        "slope {slope:.3} (band [-0.70, -0.35]), finest {finest:.2e}, errors [{}]",
        errs.join(", ")
    );
    report(4, "solver agreement", pass, &detail, started);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_5_prox_identity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let cfg = ProblemConfig {
            sigma: rng.gen_range(1e-3..10.0),
            nu: rng.gen_range(1e-3..5.0),
            a_lo: -rng.gen_range(1e-3..5.0),
            b_hi: rng.gen_range(1e-3..5.0),
            ..Default::default()
        };
        let p = rng.gen_range(-20.0..20.0);
        let lambda = proj_interval(-1.0, 1.0, -p / cfg.nu).unwrap();
        let two_stage = proj_interval(cfg.a_lo, cfg.b_hi, -(p + cfg.nu * lambda) / cfg.sigma).unwrap();
        worst = worst.max((optimal_control_pointwise(p, &cfg) - two_stage).abs());
    }
    let pass = worst <= 1e-13;
    report(
        5,
        "prox identity",
        pass,
        &format!("max deviation {worst:.2e} over 10^4 samples"),
        started,
    );
    assert!(pass);
}

/// `∫_K sin(πx) / |K|` in closed form.
fn sine_average(lo: f64, hi: f64) -> f64 {
    ((PI * lo).cos() - (PI * hi).cos()) / (PI * (hi - lo))
}

/// `‖sin(π·) − Π sin(π·)‖_{L²}` with 10-point Gauss per cell.
fn sine_projection_error(cells: usize) -> f64 {
    #[allow(clippy::excessive_precision)]
    const NODES: [(f64, f64); 5] = [
        (0.148_874_338_981_631_2, 0.295_524_224_714_752_9),
        (0.433_395_394_129_247_2, 0.269_266_719_309_996_4),
        (0.679_409_568_299_024_4, 0.219_086_362_515_982_0),
        (0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
        (0.973_906_528_517_171_7, 0.066_671_344_308_688_1),
    ];
    let h = 1.0 / cells as f64;
    let mut sum = 0.0;
    for i in 0..cells {
        let (lo, hi) = (i as f64 * h, (i + 1) as f64 * h);
        let avg = sine_average(lo, hi);
        for &(t, w) in &NODES {
            for t in [t, -t] {
                let x = lo + 0.5 * (t + 1.0) * h;
                sum += 0.5 * h * w * ((PI * x).sin() - avg).powi(2);
            }
        }
    }
    sum.sqrt()
}

/// `(f, Z)` for P1 `f` and P0 `Z` by two-point Gauss on every cell.
fn gauss_pairing(f: &TraceField, z: &ControlField, base: &fracsparse::mesh::BaseMesh) -> f64 {
    let g = 0.5 / 3f64.sqrt();
    base.cells()
        .iter()
        .zip(&z.values)
        .map(|(c, zk)| {
            let (fl, fr) = (f.values[c.nodes[0]], f.values[c.nodes[1]]);
            let at = |t: f64| fl * (1.0 - t) + fr * t;
            0.5 * c.measure * zk * (at(0.5 - g) + at(0.5 + g))
        })
        .sum()
}

#[test]
fn criterion_6_projection_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut orth: f64 = 0.0;
    let mut stable = true;
    for cells in [5usize, 16, 33] {
        let base = build_base(1, 1.0, cells).unwrap();
        for _ in 0..20 {
            let f = TraceField::from_values(&base, (0..=cells).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            let z = ControlField::from_values(&base, (0..cells).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            let pf = cell_averages(&f, &base).unwrap();
            let pairing = l2_inner_p0(&f, &z, &base).unwrap();
            orth = orth.max((gauss_pairing(&f, &z, &base) - pf.inner(&z, &base).unwrap()).abs());
            orth = orth.max((pairing - pf.inner(&z, &base).unwrap()).abs());
            let f_norm = l2_inner_omega(&f, &f, &base).unwrap().sqrt();
            stable &= pf.l2_norm(&base).unwrap() <= f_norm * (1.0 + 1e-14);
        }
    }
    let points: Vec<(f64, f64)> = [8usize, 16, 32, 64, 128]
        .iter()
        .map(|&n| (n as f64, sine_projection_error(n)))
        .collect();
    let slope = fit_rate(&points).unwrap();
    let pass = orth <= 1e-12 && stable && (-1.1..=-0.9).contains(&slope);
    let detail = format!("orthogonality {orth:.2e}, stability {stable}, approximation slope {slope:.4}");
    report(6, "projection suite", pass, &detail, started);
    assert!(pass, "{detail}");
}

/// Anisotropic Q1 Laplacian on all nodes, assembled from the 1D P1 blocks.
fn hand_laplacian(xs: &[f64], ys: &[f64]) -> Vec<Vec<f64>> {
    let nx = xs.len();
    let n = nx * ys.len();
    let mut a = vec![vec![0.0; n]; n];
    for k in 0..ys.len() - 1 {
        let hy = ys[k + 1] - ys[k];
        for i in 0..nx - 1 {
            let hx = xs[i + 1] - xs[i];
            let stiff = |p: usize, q: usize| if p == q { 1.0 } else { -1.0 };
            let mass = |p: usize, q: usize| if p == q { 1.0 / 3.0 } else { 1.0 / 6.0 };
            for (bx, by) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                for (cx, cy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let row = (k + by) * nx + i + bx;
                    let col = (k + cy) * nx + i + cx;
                    a[row][col] += stiff(bx, cx) / hx * mass(by, cy) * hy + mass(bx, cx) * hx * stiff(by, cy) / hy;
                }
            }
        }
    }
    a
}

#[test]
fn criterion_7_assembly_and_cg() {
    let started = Instant::now();
    let cfg = ProblemConfig {
        s: 0.5,
        ..Default::default()
    };
    let base = build_base(1, 1.0, 6).unwrap();
    let axis = graded_axis(5, 2.0, 0.5).unwrap();
    let mesh = tensor_mesh(&base, &axis);
    let xs: Vec<f64> = (0..=6).map(|i| i as f64 / 6.0).collect();
    let oracle = hand_laplacian(&xs, axis.nodes());
    let assembled = assemble_full(&mesh, &cfg).unwrap().to_dense();
    let mut entry_err: f64 = 0.0;
    for (r, o) in assembled.iter().zip(&oracle) {
        for (a, b) in r.iter().zip(o) {
            entry_err = entry_err.max((a - b).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut solve_err: f64 = 0.0;
    let mut largest = 0;
    for (cells, m, s) in [(8, 8, 0.5), (16, 16, 0.3), (32, 32, 0.7), (40, 48, 0.5)] {
        let cfg = ProblemConfig {
            s,
            ..Default::default()
        };
        let mesh = tensor_mesh(&build_base(1, 1.0, cells).unwrap(), &graded_axis(m, 3.0, s).unwrap());
        let a = assemble_stiffness(&mesh, &cfg).unwrap();
        assert!(a.dim() <= 2000);
        largest = largest.max(a.dim());
        let b: Vec<f64> = (0..a.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, rep) = cg_solve(&a, &b, 1e-15, 20 * a.dim()).unwrap();
        assert!(rep.converged || rep.final_residual < 1e-13, "{rep:?}");
        let exact = dense_solve(&a.to_dense(), &b).unwrap();
        let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (u, v) in x.iter().zip(&exact) {
            solve_err = solve_err.max((u - v).abs() / scale);
        }
    }
    let pass = entry_err <= 1e-13 && solve_err <= 1e-10;
    let detail = format!("max entry error {entry_err:.2e}, max CG vs dense {solve_err:.2e} (up to {largest} DOFs)");
    report(7, "assembly and CG oracles", pass, &detail, started);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_8_sparsification_sweep() {
    let started = Instant::now();
    let base_cfg = phi1_config(0.5);
    let mesh = level_mesh(&base_cfg, 16).unwrap();
    let solver = FemSolver::new(&mesh, &base_cfg, 1e-13).unwrap();
    let (p0, _) = solver.adjoint(&CylinderField::zeros(&mesh), true, None).unwrap();
    let p0_avg = cell_averages(&trace_of(&p0, &mesh).unwrap(), mesh.base()).unwrap();
    let threshold = p0_avg.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let settings = OptimizerSettings {
        kkt_tol: 1e-10,
        ..Default::default()
    };
    let mut nus = vec![0.01, 0.05, 0.1, 0.5, 1.0, threshold];
    nus.sort_by(f64::total_cmp);
    let mut supports = Vec::new();
    let mut dead_zone_ok = true;
    for &nu in &nus {
        let cfg = ProblemConfig { nu, ..base_cfg.clone() };
        let triple = optimize(&cfg, &mesh, &settings).unwrap();
        let support = triple.control.support_measure(mesh.base()).unwrap();
        if nu >= threshold {
            dead_zone_ok &= triple.control.values.iter().all(|&z| z == 0.0);
        }
        supports.push(support);
    }
    let monotone = supports.windows(2).all(|w| w[1] <= w[0]);
    let pass = monotone && dead_zone_ok;
    let pairs: Vec<String> = nus
        .iter()
        .zip(&supports)
        .map(|(n, s)| format!("{n:.3}->{s:.3}"))
        .collect();
    let detail = format!("threshold {threshold:.4}, support by nu [{}]", pairs.join(", "));
    report(8, "sparsification sweep", pass, &detail, started);
    assert!(pass, "{detail}");
}
