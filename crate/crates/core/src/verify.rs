//! The built-in acceptance suite. Each check returns one pass/fail line.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{bundled, parse_config, InitialMode, RunConfig};
use crate::error::{Error, Result};
use crate::extrapolation::{build_reference_scale, sneiberg_radius, symmetric_grid, verify_extrapolation, ReportStatus, SneibergInput};
use crate::fields::{CoefficientField, RobinData, SymTensor};
use crate::linalg::weighted_norm;
use crate::mesh::{build_tensor_mesh, classify_boundary, Region};
use crate::poisson::assemble_poisson_operator;
use crate::recombination::{auger_rate, avalanche_rate, srh_rate, RecombinationParams};
use crate::stepper::{run_transient, steady_state, step_gummel_be, MemorySink, NullSink, StepControl, Termination};
use crate::transport::{sg_edge_flux, Carrier};

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2}. {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

fn outcome(id: usize, name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> CriterionResult {
    match body() {
        Ok((passed, detail)) => CriterionResult { id, name, passed, detail },
        Err(e) => CriterionResult {
            id,
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn diode() -> Result<RunConfig> {
    parse_config(bundled::DIODE)
}

fn relative_l2(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    weighted_norm(&diff, weights) / weighted_norm(b, weights)
}

pub fn sneiberg_formula() -> CriterionResult {
    outcome(1, "Sneiberg formula exactness", || {
        let (r, b) = sneiberg_radius(&SneibergInput { theta: 0.5, kappa: 1.0, m0: 1.0, m1: 1.0 })?;
        let err = (r - 1.0 / 36.0).abs();
        Ok((err <= 1e-15 && b == 8.0, format!("radius {r:.17} (|err| {err:.1e}), inverse bound {b}")))
    })
}

pub fn sneiberg_containment() -> CriterionResult {
    outcome(2, "Sneiberg harness containment", || {
        let start = Instant::now();
        let config = parse_config(bundled::SNEIBERG_GOLDEN)?;
        let tau = config.sneiberg.tau;
        let grid = symmetric_grid(tau, config.sneiberg.grid_points);
        let mut pass = true;
        let mut parts = Vec::new();
        let mut kappas = Vec::new();
        for (mesh, a) in config.sneiberg_operators()? {
            let scale = build_reference_scale(&mesh)?;
            let report = verify_extrapolation(&a, &scale, tau, &grid)?;
            pass &= report.status == ReportStatus::Pass;
            kappas.push(report.kappa);
            parts.push(format!(
                "n={} {:?} kappa={:.6} M={:.3} s_bar={:.2e} in-interval={} observed|s|<={}",
                mesh.num_cells(),
                report.status,
                report.kappa,
                report.m0.max(report.m1),
                report.s_bar,
                report.points_in_interval(),
                report.observed_extent.map_or("-".into(), |e| e.to_string()),
            ));
        }
        let drift = kappas
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / w[0])
            .fold(0.0f64, f64::max);
        let secs = start.elapsed().as_secs_f64();
        pass &= secs < 60.0;
        parts.push(format!("kappa refinement change {:.1e} (< 0.2: {})", drift, drift < 0.2));
        parts.push(format!("{secs:.1}s"));
        Ok((pass, parts.join("; ")))
    })
}

pub fn sg_equilibrium() -> CriterionResult {
    outcome(3, "SG equilibrium exactness", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let (pl, pr) = (rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0));
            let mu = rng.random_range(0.1..10.0);
            let h = rng.random_range(1e-3..1.0);
            for carrier in Carrier::BOTH {
                let (ul, ur) = (carrier.boltzmann_factor(pl), carrier.boltzmann_factor(pr));
                let flux = sg_edge_flux(ul, ur, pl - pr, mu, h, carrier);
                worst = worst.max(flux.abs() / ((mu / h) * ul.max(ur)));
            }
        }
        Ok((worst <= 1e-13, format!("max |flux|/((mu/h) max u) = {worst:.2e} (limit 1e-13)")))
    })
}

pub fn equilibrium_stationarity() -> CriterionResult {
    outcome(4, "Equilibrium stationarity", || {
        let config = diode()?;
        let problem = config.build_problem()?;
        let eq = problem.equilibrium_state()?;
        let summary = run_transient(&problem, eq.clone(), &config.time.control, 1.0, &mut NullSink)?;
        let s = &summary.final_state;
        let diff = s
            .u1
            .iter()
            .zip(&eq.u1)
            .chain(s.u2.iter().zip(&eq.u2))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let rel = diff / eq.max_density();
        let ok = summary.reason == Termination::Completed && rel <= 1e-8;
        Ok((ok, format!("{} after {} steps, rel. change {rel:.2e} (limit 1e-8)", summary.reason.as_str(), summary.accepted_steps)))
    })
}

/// Diode relaxing from uniform `u1 = u2 = 1` compared with the stationary solve
/// carrying the same conserved totals.
pub fn transient_vs_stationary() -> CriterionResult {
    outcome(5, "Transient-stationary consistency", || {
        let mut config = diode()?;
        config.time.initial = InitialMode::Uniform;
        let problem = config.build_problem()?;
        let initial = config.initial_state(&problem, Path::new("."))?;
        let t_end = 60.0;
        let control = StepControl {
            dt_max: 2.0,
            tol_step: 1e-5,
            ..config.time.control.clone()
        };
        let summary = run_transient(&problem, initial.clone(), &control, t_end, &mut NullSink)?;
        let steady = steady_state(&problem, &initial, &config.time.steady)?;
        let vol = &problem.mesh.cell_volumes;
        let w: Vec<f64> = vol.iter().chain(vol).copied().collect();
        let a: Vec<f64> = summary.final_state.u1.iter().chain(&summary.final_state.u2).copied().collect();
        let b: Vec<f64> = steady.u1.iter().chain(&steady.u2).copied().collect();
        let rel = relative_l2(&a, &b, &w);
        let rel_phi = relative_l2(&summary.final_state.phi, &steady.phi, vol);
        let ok = summary.reason == Termination::Completed && rel <= 1e-6;
        Ok((
            ok,
            format!(
                "T={t_end}, {} steps: L2 rel diff densities {rel:.2e}, potential {rel_phi:.2e} (limit 1e-6)",
                summary.accepted_steps
            ),
        ))
    })
}

/// `−u'' = π² sin(πx)` with zero Dirichlet data, cell-integrated load.
pub fn poisson_order() -> CriterionResult {
    outcome(6, "Poisson convergence order", || {
        use std::f64::consts::PI;
        let mut errors = Vec::new();
        for n in [32, 64, 128] {
            let mesh = build_tensor_mesh(1, &[(0.0, 1.0)], &[n])?;
            let mesh = classify_boundary(&mesh, &[Region::plane(1, 0, 0.0), Region::plane(1, 0, 1.0)], &[])?;
            let eps = CoefficientField::uniform(&mesh, SymTensor::scalar(1.0))?;
            let sys = assemble_poisson_operator(&mesh, &eps, &RobinData::uniform(&mesh, 0.0, 0.0)?)?;
            let h = mesh.spacing[0];
            let load: Vec<f64> = mesh
                .cell_centers
                .iter()
                .map(|c| {
                    let (a, b) = (c[0] - 0.5 * h, c[0] + 0.5 * h);
                    PI * ((PI * a).cos() - (PI * b).cos())
                })
                .collect();
            let phi = sys.solve(&load)?;
            let exact: Vec<f64> = mesh.cell_centers.iter().map(|c| (PI * c[0]).sin()).collect();
            let diff: Vec<f64> = phi.iter().zip(&exact).map(|(a, b)| a - b).collect();
            errors.push(weighted_norm(&diff, &mesh.cell_volumes));
        }
        let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let ok = orders.iter().all(|&p| p >= 1.9);
        Ok((ok, format!(
            "L2 errors [{}], orders {orders:.3?} (min 1.9)",
            errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
        )))
    })
}

pub fn conservation() -> CriterionResult {
    outcome(7, "Conservation", || {
        let mut config = diode()?;
        config.recombination = RecombinationParams::none();
        config.boundary.carrier_dirichlet = false;
        let problem = config.build_problem()?;
        let n = problem.num_cells();
        let u1: Vec<f64> = (0..n).map(|i| 1.0 + 0.8 * (0.37 * i as f64).sin()).collect();
        let u2: Vec<f64> = (0..n).map(|i| 0.5 + 0.4 * (0.11 * i as f64).cos()).collect();
        let mut state = problem.state_from(0.0, u1, u2)?;
        let start = [problem.total_mass(&state.u1), problem.total_mass(&state.u2)];
        let mut prev = start;
        let mut per_step = 0.0f64;
        for _ in 0..100 {
            state = step_gummel_be(&problem, &state, 0.01)?;
            let now = [problem.total_mass(&state.u1), problem.total_mass(&state.u2)];
            for k in 0..2 {
                per_step = per_step.max((now[k] - prev[k]).abs() / prev[k]);
            }
            prev = now;
        }
        let cumulative = (0..2).map(|k| (prev[k] - start[k]).abs() / start[k]).fold(0.0, f64::max);
        let ok = per_step <= 1e-12 && cumulative <= 1e-10;
        Ok((ok, format!("max per-step drift {per_step:.2e} (1e-12), cumulative {cumulative:.2e} (1e-10)")))
    })
}

pub fn recombination_units() -> CriterionResult {
    outcome(8, "Recombination units", || {
        let p = RecombinationParams {
            auger_c1: 1.0,
            auger_c2: 1.0,
            ..Default::default()
        };
        let srh = srh_rate(2.0, 2.0, &p);
        let auger = auger_rate(2.0, 1.0, &p);
        let aval = avalanche_rate([1.0, 0.0], [0.0, 0.0], [1.0, 0.0], &p);
        let ok = srh == 0.5 && auger == 3.0 && (aval - (-1.0f64).exp()).abs() <= 1e-12;
        Ok((ok, format!("srh {srh}, auger {auger}, avalanche {aval:.15}")))
    })
}

/// Analytic Lipschitz constant of the Avalanche rate on `|j_k| ≤ J`, `|∇φ| ≤ G`.
///
/// With `q = a|j|/|∇φ·j|`, each term `c|j|e^{−q}` has `|∂_j| ≤ c(1 + 4e^{−2}G/a)`
/// and `|∂_{∇φ}| ≤ 4e^{−2}cJ/a`, using `e^{−q}|1−q| ≤ 1` and `e^{−q}q² ≤ 4e^{−2}`.
pub fn avalanche_lipschitz_bound(p: &RecombinationParams, j_max: f64, g_max: f64) -> f64 {
    let peak = 4.0 * (-2.0f64).exp();
    let dj = |a: f64, c: f64| c * (1.0 + peak * g_max / a);
    let dg = |a: f64, c: f64| peak * c * j_max / a;
    let j_part = dj(p.avalanche_a1, p.avalanche_c1).powi(2) + dj(p.avalanche_a2, p.avalanche_c2).powi(2);
    let g_part = dg(p.avalanche_a1, p.avalanche_c1) + dg(p.avalanche_a2, p.avalanche_c2);
    (j_part + g_part * g_part).sqrt()
}

pub fn avalanche_lipschitz() -> CriterionResult {
    outcome(9, "Avalanche Lipschitz property", || {
        let p = RecombinationParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = |rng: &mut ChaCha8Rng| -> [f64; 6] { std::array::from_fn(|_| rng.random_range(-1.0..=1.0)) };
        let rate = |z: &[f64; 6]| avalanche_rate([z[0], z[1]], [z[2], z[3]], [z[4], z[5]], &p);
        let mut ratios = Vec::with_capacity(10_000);
        while ratios.len() < 10_000 {
            let (z, w) = (sample(&mut rng), sample(&mut rng));
            let dist = z.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist > 0.0 {
                ratios.push((rate(&z) - rate(&w)).abs() / dist);
            }
        }
        let estimate = ratios[..100].iter().copied().fold(0.0, f64::max);
        let observed = ratios.iter().copied().fold(0.0, f64::max);
        let exceed = ratios.iter().filter(|&&r| r > 1.5 * estimate).count();
        let bound = avalanche_lipschitz_bound(&p, 2f64.sqrt(), 2f64.sqrt());
        Ok((
            exceed == 0 && observed <= bound,
            format!(
                "box [-1,1]^6: first-100 estimate {estimate:.4}, max ratio {observed:.4} ({:.2}x), {exceed} of 10^4 above 1.5x; analytic bound {bound:.3} respected: {}",
                observed / estimate,
                observed <= bound
            ),
        ))
    })
}

pub fn blow_up() -> CriterionResult {
    outcome(10, "Blow-up handling", || {
        let config = parse_config(bundled::BLOWUP)?;
        let problem = config.build_problem()?;
        let initial = config.initial_state(&problem, Path::new("."))?;
        let u0 = initial.max_density();
        let summary = run_transient(&problem, initial, &config.time.control, config.time.t_end, &mut NullSink)?;
        let limit = 1.1 / u0;
        let ok = matches!(summary.reason, Termination::BlowUp | Termination::DtUnderflow) && summary.reached <= limit;
        Ok((
            ok,
            format!(
                "{} at T = {:.6} (exact 1/u0 = {:.6}, limit {limit:.6}), max u {:.3e}",
                summary.reason.as_str(),
                summary.reached,
                1.0 / u0,
                summary.final_state.max_density()
            ),
        ))
    })
}

pub fn nonnegativity() -> CriterionResult {
    outcome(11, "Nonnegativity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut min_seen = f64::INFINITY;
        let mut steps = Vec::new();
        for _ in 0..10 {
            let mut config = diode()?;
            let amplitude = rng.random_range(0.5..5.0);
            config.doping.bulk = -amplitude;
            config.doping.region[0].value = amplitude;
            config.mesh.counts = vec![rng.random_range(16..=64)];
            config.recombination.intrinsic_density = rng.random_range(0.1..2.0);
            config.recombination.tau1 = rng.random_range(0.1..10.0);
            config.recombination.tau2 = rng.random_range(0.1..10.0);
            config.recombination.auger = rng.random_bool(0.5);
            config.recombination.auger_c1 = rng.random_range(0.0..0.5);
            config.boundary.carrier_dirichlet = rng.random_bool(0.5);
            let problem = config.build_problem()?;
            let n = problem.num_cells();
            let u1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            let u2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            let initial = problem.state_from(0.0, u1, u2)?;
            let control = StepControl {
                max_steps: Some(50),
                ..config.time.control.clone()
            };
            let mut sink = MemorySink::default();
            let summary = run_transient(&problem, initial, &control, 1e6, &mut sink)?;
            steps.push(summary.accepted_steps);
            for s in &sink.states {
                min_seen = s.u1.iter().chain(&s.u2).fold(min_seen, |m, &v| m.min(v));
            }
        }
        let ok = min_seen >= 0.0 && steps.iter().all(|&s| s == 50);
        Ok((ok, format!("min density {min_seen:.3e} over accepted steps {steps:?}")))
    })
}

/// Runs the diode config twice through the `run` command and compares bytes.
pub fn determinism(output_dir: &Path) -> CriterionResult {
    outcome(12, "Determinism", || {
        let config = diode()?;
        let mut listings = Vec::new();
        for name in ["run_a", "run_b"] {
            let dir = output_dir.join(name);
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            crate::cli::run_command(&config, Path::new("."), &dir, None, true)?;
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .map(|entry| {
                    let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    Ok((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), bytes))
                })
                .collect::<Result<_>>()?;
            files.sort();
            listings.push(files);
        }
        let same = listings[0] == listings[1];
        Ok((same && !listings[0].is_empty(), format!("{} files compared, identical: {same}", listings[0].len())))
    })
}

/// All criteria in order; files go under `output_dir` only.
pub fn run_all(output_dir: &Path) -> Vec<CriterionResult> {
    vec![
        sneiberg_formula(),
        sneiberg_containment(),
        sg_equilibrium(),
        equilibrium_stationarity(),
        transient_vs_stationary(),
        poisson_order(),
        conservation(),
        recombination_units(),
        avalanche_lipschitz(),
        blow_up(),
        nonnegativity(),
        determinism(output_dir),
    ]
}
