//! Gummel-decoupled backward Euler for the continuity equations, with
//! step-doubling error control and blow-up detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{doping_load_vector, CoefficientField, DopingProfile, RobinData};
use crate::linalg::{norm_inf, BandedLu};
use crate::mesh::Mesh;
use crate::poisson::{assemble_poisson_operator, solve_equilibrium_potential, solve_potential, EllipticSystem};
use crate::recombination::{total_reaction, CellFields, RecombinationParams};
use crate::transport::{assemble_transport_operator, carrier_currents, potential_gradient, Carrier, CarrierBoundary};

/// Everything that stays fixed during a simulation.
#[derive(Clone, Debug)]
pub struct Problem {
    pub mesh: Mesh,
    pub permittivity: CoefficientField,
    pub mobility: [CoefficientField; 2],
    pub robin: RobinData,
    pub doping: DopingProfile,
    pub carrier_boundary: CarrierBoundary,
    pub recombination: RecombinationParams,
    doping_load: Vec<f64>,
    poisson: EllipticSystem,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub phi: Vec<f64>,
}

impl SimState {
    pub fn density(&self, carrier: Carrier) -> &[f64] {
        match carrier {
            Carrier::Electron => &self.u1,
            Carrier::Hole => &self.u2,
        }
    }

    pub fn max_density(&self) -> f64 {
        norm_inf(&self.u1).max(norm_inf(&self.u2))
    }

    pub fn is_finite(&self) -> bool {
        self.u1.iter().chain(&self.u2).chain(&self.phi).all(|v| v.is_finite())
    }
}

impl Problem {
    pub fn new(
        mesh: Mesh,
        permittivity: CoefficientField,
        mobility: [CoefficientField; 2],
        robin: RobinData,
        doping: DopingProfile,
        carrier_boundary: CarrierBoundary,
        recombination: RecombinationParams,
    ) -> Result<Self> {
        recombination.validate()?;
        for field in mobility.iter().chain([&permittivity]) {
            if field.len() != mesh.num_cells() {
                return Err(Error::InvalidMaterial("coefficient field does not match the mesh".into()));
            }
        }
        let poisson = assemble_poisson_operator(&mesh, &permittivity, &robin)?;
        if !poisson.is_positive_definite() {
            return Err(Error::config(
                "stepper",
                "Poisson operator is not positive definite (no Dirichlet face and no Robin coefficient?)",
            ));
        }
        let doping_load = doping_load_vector(&mesh, &doping)?;
        Ok(Problem {
            mesh,
            permittivity,
            mobility,
            robin,
            doping,
            carrier_boundary,
            recombination,
            doping_load,
            poisson,
        })
    }

    pub fn poisson(&self) -> &EllipticSystem {
        &self.poisson
    }

    pub fn doping_load(&self) -> &[f64] {
        &self.doping_load
    }

    pub fn num_cells(&self) -> usize {
        self.mesh.num_cells()
    }

    fn mobility_of(&self, carrier: Carrier) -> &CoefficientField {
        &self.mobility[carrier.index() - 1]
    }

    /// State with φ re-solved from the densities.
    pub fn state_from(&self, t: f64, u1: Vec<f64>, u2: Vec<f64>) -> Result<SimState> {
        let phi = solve_potential(&self.poisson, &self.doping_load, &u1, &u2)?;
        Ok(SimState { t, u1, u2, phi })
    }

    /// Boltzmann equilibrium `u = n_i e^{±φ}`.
    pub fn equilibrium_state(&self) -> Result<SimState> {
        let ni = self.recombination.intrinsic_density;
        let phi = solve_equilibrium_potential(&self.poisson, &self.doping_load, ni)?;
        let u1 = phi.iter().map(|&p| ni * Carrier::Electron.boltzmann_factor(p)).collect();
        let u2 = phi.iter().map(|&p| ni * Carrier::Hole.boltzmann_factor(p)).collect();
        self.state_from(0.0, u1, u2)
    }

    pub fn currents(&self, state: &SimState, carrier: Carrier) -> Vec<[f64; 2]> {
        carrier_currents(
            &self.mesh,
            self.mobility_of(carrier),
            &state.phi,
            state.density(carrier),
            carrier,
            self.carrier_boundary,
        )
    }

    pub fn cell_fields(&self, state: &SimState) -> CellFields {
        CellFields {
            grad_phi: potential_gradient(&self.mesh, &self.permittivity, &self.robin, &state.phi),
            j1: self.currents(state, Carrier::Electron),
            j2: self.currents(state, Carrier::Hole),
        }
    }

    fn reaction_loads(&self, state: &SimState) -> Result<[Vec<f64>; 2]> {
        // Currents only feed the Avalanche term.
        let fields = if self.recombination.avalanche {
            self.cell_fields(state)
        } else {
            CellFields::zero(self.num_cells())
        };
        total_reaction(&self.mesh, &state.u1, &state.u2, &fields, &self.recombination)
    }

    /// Total carrier content `Σ vol·u_k`.
    pub fn total_mass(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.mesh.cell_volumes).map(|(u, v)| u * v).sum()
    }
}

/// Clamps entries in `[−1e−12·‖u‖∞, 0)` to zero and rejects anything more negative.
fn clamp_negative(u: &mut [f64]) -> Result<()> {
    let tol = 1e-12 * norm_inf(u);
    for (i, v) in u.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -tol {
                return Err(Error::StepFailure(format!("density {v:e} at cell {i} is negative")));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// One backward Euler step with drift-diffusion implicit at `φⁿ` and
/// reactions explicit at `uⁿ`.
pub fn step_gummel_be(problem: &Problem, state: &SimState, dt: f64) -> Result<SimState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepFailure(format!("invalid step size {dt}")));
    }
    let mut current = state.clone();
    clamp_negative(&mut current.u1)?;
    clamp_negative(&mut current.u2)?;
    let loads = problem.reaction_loads(&current)?;
    let vol = &problem.mesh.cell_volumes;
    let mass: Vec<f64> = vol.iter().map(|v| v / dt).collect();
    let mut next = [Vec::new(), Vec::new()];
    for carrier in Carrier::BOTH {
        let k = carrier.index() - 1;
        let transport = assemble_transport_operator(
            &problem.mesh,
            problem.mobility_of(carrier),
            &current.phi,
            carrier,
            problem.carrier_boundary,
        )?;
        let lu = BandedLu::factor(&transport.matrix.add_diagonal(&mass))
            .map_err(|e| Error::StepFailure(format!("carrier {}: {e}", carrier.index())))?;
        let u_old = current.density(carrier);
        let rhs: Vec<f64> = (0..u_old.len()).map(|i| mass[i] * u_old[i] + loads[k][i]).collect();
        let mut u = lu.solve(&rhs);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure(format!("non-finite density for carrier {}", carrier.index())));
        }
        clamp_negative(&mut u)?;
        next[k] = u;
    }
    let [u1, u2] = next;
    let phi = solve_potential(&problem.poisson, &problem.doping_load, &u1, &u2)
        .map_err(|e| Error::StepFailure(e.to_string()))?;
    Ok(SimState {
        t: state.t + dt,
        u1,
        u2,
        phi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub dt: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Growth factor applied after a comfortably accurate step.
    pub safety: f64,
    pub tol_step: f64,
    pub u_max: f64,
    /// Stop after this many accepted steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt: 1e-3,
            dt_min: 1e-12,
            dt_max: 1.0,
            safety: 1.5,
            tol_step: 1e-4,
            u_max: 1e12,
            max_steps: None,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt
            && self.dt <= self.dt_max
            && self.dt_max.is_finite()
            && self.tol_step > 0.0
            && self.safety > 1.0
            && self.u_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "stepper",
                format!(
                    "need 0 < dt_min <= dt <= dt_max, tol_step > 0, safety > 1, u_max > 0; got {self:?}"
                ),
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Completed,
    BlowUp,
    DtUnderflow,
    StepLimit,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::BlowUp => "blow-up",
            Termination::DtUnderflow => "dt-underflow",
            Termination::StepLimit => "step-limit",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransientSummary {
    pub reached: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub reason: Termination,
    pub final_state: SimState,
}

/// Receives the initial state (step 0) and every accepted step.
pub trait SnapshotSink {
    fn record(&mut self, problem: &Problem, state: &SimState, step: usize) -> Result<()>;
}

pub struct NullSink;

impl SnapshotSink for NullSink {
    fn record(&mut self, _: &Problem, _: &SimState, _: usize) -> Result<()> {
        Ok(())
    }
}

/// Keeps every recorded state in memory.
#[derive(Default)]
pub struct MemorySink {
    pub states: Vec<SimState>,
}

impl SnapshotSink for MemorySink {
    fn record(&mut self, _: &Problem, state: &SimState, _: usize) -> Result<()> {
        self.states.push(state.clone());
        Ok(())
    }
}

/// Relative max-norm discrepancy between two states' densities.
pub fn density_discrepancy(a: &SimState, b: &SimState) -> f64 {
    let diff = a
        .u1
        .iter()
        .zip(&b.u1)
        .chain(a.u2.iter().zip(&b.u2))
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / a.max_density().max(b.max_density()).max(f64::MIN_POSITIVE)
}

/// One step of `dt` against two of `dt/2`; returns the finer result and the discrepancy.
pub fn doubled_step(problem: &Problem, state: &SimState, dt: f64) -> Result<(SimState, f64)> {
    let coarse = step_gummel_be(problem, state, dt)?;
    let half = step_gummel_be(problem, state, 0.5 * dt)?;
    let mut fine = step_gummel_be(problem, &half, 0.5 * dt)?;
    fine.t = state.t + dt;
    let err = density_discrepancy(&coarse, &fine);
    Ok((fine, err))
}

pub fn run_transient(
    problem: &Problem,
    initial: SimState,
    control: &StepControl,
    t_end: f64,
    sink: &mut dyn SnapshotSink,
) -> Result<TransientSummary> {
    control.validate()?;
    if initial.u1.iter().chain(&initial.u2).any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::config("stepper", "initial densities must be finite and non-negative"));
    }
    let mut state = initial;
    let mut dt = control.dt;
    let mut accepted = 0;
    let mut rejected = 0;
    sink.record(problem, &state, 0)?;
    let finish_tol = 1e-12 * t_end.abs().max(1.0);
    let reason = loop {
        let remaining = t_end - state.t;
        if remaining <= finish_tol {
            break Termination::Completed;
        }
        if state.max_density() > control.u_max {
            break Termination::BlowUp;
        }
        if dt < control.dt_min {
            break Termination::DtUnderflow;
        }
        if control.max_steps.is_some_and(|m| accepted >= m) {
            break Termination::StepLimit;
        }
        let h = dt.min(remaining);
        match doubled_step(problem, &state, h) {
            Ok((next, err)) if err <= control.tol_step && next.is_finite() => {
                state = next;
                if h == remaining {
                    state.t = t_end;
                }
                accepted += 1;
                sink.record(problem, &state, accepted)?;
                if err < 0.25 * control.tol_step {
                    dt = (h * control.safety).min(control.dt_max).max(dt);
                }
            }
            Ok(_) | Err(Error::StepFailure(_)) => {
                rejected += 1;
                dt = 0.5 * h;
            }
            Err(e) => return Err(e),
        }
    };
    Ok(TransientSummary {
        reached: state.t,
        accepted_steps: accepted,
        rejected_steps: rejected,
        reason,
        final_state: state,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyControl {
    /// Weight kept from the previous iterate; 0 is the plain Gummel map.
    pub damping: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SteadyControl {
    fn default() -> Self {
        SteadyControl {
            damping: 0.0,
            max_iterations: 500,
            tolerance: 1e-10,
        }
    }
}

/// Coefficients `(a, b)` of the Boltzmann kernel `u1 = a e^{φ}`, `u2 = b e^{−φ}`
/// carrying the invariants of `reference`.
fn kernel_coefficients(problem: &Problem, phi: &[f64], reference: &SimState) -> (f64, f64) {
    let vol = &problem.mesh.cell_volumes;
    let e_plus: f64 = phi.iter().zip(vol).map(|(p, v)| v * Carrier::Electron.boltzmann_factor(*p)).sum();
    let e_minus: f64 = phi.iter().zip(vol).map(|(p, v)| v * Carrier::Hole.boltzmann_factor(*p)).sum();
    let n1 = problem.total_mass(&reference.u1);
    let n2 = problem.total_mass(&reference.u2);
    if problem.recombination.has_pair_recombination() {
        // a·E₊ − b·E₋ = Q with a·b = n_i²; pick the root without cancellation.
        let ni = problem.recombination.intrinsic_density;
        let q = n1 - n2;
        let disc = (q * q + 4.0 * e_plus * e_minus * ni * ni).sqrt();
        if q >= 0.0 {
            let a = (q + disc) / (2.0 * e_plus);
            (a, ni * ni / a)
        } else {
            let b = (-q + disc) / (2.0 * e_minus);
            (ni * ni / b, b)
        }
    } else {
        (n1 / e_plus, n2 / e_minus)
    }
}

/// Stationary state by damped Gummel iteration starting from `guess`.
///
/// With carrier contacts each sweep solves `T_k(φ) u_k = reactions(u)`.
/// Without them `T_k(φ)` is singular and the carrier solve is taken in its
/// kernel, fixing the totals conserved by the transient started at `guess`.
pub fn steady_state(problem: &Problem, guess: &SimState, control: &SteadyControl) -> Result<SimState> {
    let rec = &problem.recombination;
    if rec.avalanche {
        return Err(Error::config("stepper", "steady state requires Avalanche to be disabled"));
    }
    if !(0.0..1.0).contains(&control.damping) {
        return Err(Error::config("stepper", format!("damping must lie in [0, 1), got {}", control.damping)));
    }
    let contacts = problem.carrier_boundary.dirichlet_contacts && problem.mesh.dirichlet_faces().next().is_some();
    if !contacts && !rec.pairs_relax_to_mass_action() {
        return Err(Error::config(
            "stepper",
            "zero-flux carriers with net generation have no steady state",
        ));
    }
    let omega = control.damping;
    let mut state = guess.clone();
    let mut history = Vec::new();
    for _ in 0..control.max_iterations {
        let [new1, new2] = if contacts {
            let loads = problem.reaction_loads(&state)?;
            let mut out = [Vec::new(), Vec::new()];
            for carrier in Carrier::BOTH {
                let k = carrier.index() - 1;
                let t = assemble_transport_operator(
                    &problem.mesh,
                    problem.mobility_of(carrier),
                    &state.phi,
                    carrier,
                    problem.carrier_boundary,
                )?;
                out[k] = BandedLu::factor(&t.matrix)?.solve(&loads[k]);
            }
            out
        } else {
            let (a, b) = kernel_coefficients(problem, &state.phi, guess);
            [
                state.phi.iter().map(|&p| a * Carrier::Electron.boltzmann_factor(p)).collect(),
                state.phi.iter().map(|&p| b * Carrier::Hole.boltzmann_factor(p)).collect(),
            ]
        };
        let relax = |new: Vec<f64>, old: &[f64]| -> Vec<f64> {
            new.iter().zip(old).map(|(n, o)| ((1.0 - omega) * n + omega * o).max(0.0)).collect()
        };
        let u1 = relax(new1, &state.u1);
        let u2 = relax(new2, &state.u2);
        let next = problem.state_from(guess.t, u1, u2)?;
        let change = density_discrepancy(&next, &state);
        history.push(change);
        state = next;
        if !change.is_finite() {
            break;
        }
        if change <= control.tolerance {
            return Ok(state);
        }
    }
    Err(Error::SolverFailure {
        module: "stepper",
        message: format!("steady state not reached in {} iterations", control.max_iterations),
        residuals: history,
    })
}
