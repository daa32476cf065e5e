//! Modal state-space models of a placement, LQR design and response metrics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anc::CorrectedModes;
use crate::error::{invalid, Error, Result};
use crate::hankel::LtiSystem;
use crate::linalg;
use crate::spectrum::{self, Psd};
use crate::truth::{self, ModeSet};

/// Retained modes of a (possibly loaded) beam sampled on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBasis {
    pub omega_n: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Mass-normalised shapes, one column per mode, one row per node.
    pub shapes: DMatrix<f64>,
    /// Modal displacements of the initial deformation.
    pub initial: Vec<f64>,
}

impl ModalBasis {
    pub fn from_mode_set(set: &ModeSet, node_x: &[f64], n_modes: usize) -> Result<Self> {
        if n_modes == 0 || n_modes > set.len() {
            return invalid(format!("n_modes = {n_modes} must lie in 1..={}", set.len()));
        }
        let modes = &set.modes()[..n_modes];
        Ok(ModalBasis {
            omega_n: modes.iter().map(|m| m.omega_n()).collect(),
            zeta: modes.iter().map(|m| m.zeta).collect(),
            shapes: DMatrix::from_fn(node_x.len(), n_modes, |r, i| set.shape(i, node_x[r])),
            initial: modes.iter().map(|m| m.amplitude).collect(),
        })
    }

    pub fn from_corrected(cm: &CorrectedModes, node_x: &[f64], n_modes: usize) -> Result<Self> {
        if n_modes == 0 || n_modes > cm.n_modes() {
            return invalid(format!("n_modes = {n_modes} must lie in 1..={}", cm.n_modes()));
        }
        Ok(ModalBasis {
            omega_n: cm.omega_n()[..n_modes].to_vec(),
            zeta: cm.zeta()[..n_modes].to_vec(),
            shapes: cm.shapes_on(node_x, n_modes, false),
            initial: cm.initial_amplitudes()[..n_modes].to_vec(),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.omega_n.len()
    }

    /// Initial state: modal displacements with zero velocity.
    pub fn initial_state(&self) -> DVector<f64> {
        let mut x = DVector::zeros(2 * self.n_modes());
        for (i, &q) in self.initial.iter().enumerate() {
            x[2 * i] = q;
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalLti {
    pub system: LtiSystem,
    /// Continuous-time state matrix before discretisation.
    pub a_continuous: DMatrix<f64>,
    pub b_continuous: DMatrix<f64>,
    pub actuators: Vec<usize>,
    pub sensors: Vec<usize>,
}

/// States ordered (q₁, q̇₁, q₂, q̇₂, …); each mode contributes the block
/// [[0, 1], [−ω², −2ζω]], inputs act on q̇ through φ(x_act) and outputs read
/// q through φ(x_sens). Discretised by zero-order hold.
pub fn build_modal_lti(basis: &ModalBasis, actuators: &[usize], sensors: &[usize], dt: f64) -> Result<ModalLti> {
    let n_nodes = basis.shapes.nrows();
    for &node in actuators.iter().chain(sensors) {
        if node >= n_nodes {
            return Err(Error::IndexOutOfRange { index: node, lo: 0, hi: n_nodes.saturating_sub(1) });
        }
    }
    if actuators.is_empty() || sensors.is_empty() {
        return invalid("need at least one actuator and one sensor");
    }
    let fmax = basis
        .omega_n
        .iter()
        .zip(&basis.zeta)
        .map(|(w, z)| w * (1.0 - z * z).sqrt() / (2.0 * std::f64::consts::PI))
        .fold(0.0, f64::max);
    truth::check_sampling(fmax, dt)?;
    let nm = basis.n_modes();
    let n = 2 * nm;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, actuators.len());
    let mut c = DMatrix::zeros(sensors.len(), n);
    for i in 0..nm {
        let w = basis.omega_n[i];
        a[(2 * i, 2 * i + 1)] = 1.0;
        a[(2 * i + 1, 2 * i)] = -w * w;
        a[(2 * i + 1, 2 * i + 1)] = -2.0 * basis.zeta[i] * w;
        for (j, &node) in actuators.iter().enumerate() {
            b[(2 * i + 1, j)] = basis.shapes[(node, i)];
        }
        for (j, &node) in sensors.iter().enumerate() {
            c[(j, 2 * i)] = basis.shapes[(node, i)];
        }
    }
    let (ad, bd) = zoh(&a, &b, dt)?;
    Ok(ModalLti {
        system: LtiSystem::new(ad, bd, c, dt)?,
        a_continuous: a,
        b_continuous: b,
        actuators: actuators.to_vec(),
        sensors: sensors.to_vec(),
    })
}

/// exp([[A, B], [0, 0]]·dt) = [[A_d, B_d], [0, I]].
pub fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    big.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = big.exp();
    if !e.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub gain: DMatrix<f64>,
    pub riccati: DMatrix<f64>,
    pub iterations: usize,
    pub closed_loop_radius: f64,
}

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 5_000_000;

/// Discrete LQR by Riccati value iteration from P₀ = Q, stopping once
/// ‖P_{k+1} − P_k‖ ≤ 1e−12·‖P_k‖.
pub fn solve_lqr(sys: &LtiSystem, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<LqrSolution> {
    let (n, m) = (sys.n_states(), sys.n_inputs());
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return invalid(format!("Q must be {n}x{n} and R {m}x{m}"));
    }
    if r.clone().cholesky().is_none() {
        return invalid("R must be symmetric positive definite");
    }
    let (a, b) = (&sys.a, &sys.b);
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < RICCATI_MAX_ITER {
        iterations += 1;
        let pa = &p * a;
        let pb = &p * b;
        let s = r + &bt * &pb;
        let chol = s.cholesky().ok_or_else(|| Error::Numerical("R + BᵀPB lost definiteness".into()))?;
        let gain = chol.solve(&(&bt * &pa));
        let mut next = q + &at * &pa - (&at * &pb) * &gain;
        next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergent { iterations, residual: f64::INFINITY });
        }
        let diff = scaled_norm(&(&next - &p));
        let scale = scaled_norm(&p);
        p = next;
        residual = if scale > 0.0 { diff / scale } else { diff };
        if diff <= RICCATI_TOL * scale || diff == 0.0 {
            let s = r + &bt * &p * b;
            let gain = s
                .cholesky()
                .ok_or_else(|| Error::Numerical("R + BᵀPB lost definiteness".into()))?
                .solve(&(&bt * &p * a));
            let closed_loop_radius = linalg::spectral_radius(&(a - b * &gain))?;
            if closed_loop_radius >= 1.0 {
                return Err(Error::Unstable(closed_loop_radius));
            }
            return Ok(LqrSolution { gain, riccati: p, iterations, closed_loop_radius });
        }
    }
    Err(Error::NonConvergent { iterations, residual })
}

// Frobenius norm that does not overflow for entries near f64::MAX.
fn scaled_norm(m: &DMatrix<f64>) -> f64 {
    let big = m.amax();
    if big == 0.0 || !big.is_finite() {
        return big;
    }
    big * m.iter().map(|v| (v / big).powi(2)).sum::<f64>().sqrt()
}

/// Sampled responses; row k is time k·dt, k = 0..=n_steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub dt: f64,
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl Trajectories {
    pub fn n_samples(&self) -> usize {
        self.y.nrows()
    }
    pub fn output(&self, j: usize) -> Vec<f64> {
        self.y.column(j).iter().copied().collect()
    }
    pub fn input(&self, j: usize) -> Vec<f64> {
        self.u.column(j).iter().copied().collect()
    }
}

pub fn simulate_closed_loop(sys: &LtiSystem, gain: Option<&DMatrix<f64>>, x0: &DVector<f64>, horizon: f64) -> Result<Trajectories> {
    if !(horizon > 0.0) {
        return invalid(format!("horizon must be positive, got {horizon}"));
    }
    if x0.len() != sys.n_states() {
        return invalid("initial state has the wrong dimension");
    }
    let steps = (horizon / sys.dt).round() as usize;
    let (p, m) = (sys.n_outputs(), sys.n_inputs());
    let mut y = DMatrix::zeros(steps + 1, p);
    let mut u = DMatrix::zeros(steps + 1, m);
    let closed = gain.map(|k| &sys.a - &sys.b * k);
    let mut x = x0.clone();
    for k in 0..=steps {
        y.row_mut(k).copy_from(&(&sys.c * &x).transpose());
        if let Some(kg) = gain {
            u.row_mut(k).copy_from(&(-(kg * &x)).transpose());
        }
        x = match &closed {
            Some(acl) => acl * &x,
            None => &sys.a * &x,
        };
    }
    Ok(Trajectories { dt: sys.dt, y, u })
}

pub fn psd_variance(signal: &[f64], dt: f64) -> Result<Psd> {
    spectrum::welch_psd(signal, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Settling {
    Settled(f64),
    /// Still outside the band at the end of a record of this length.
    NotSettled(f64),
}

impl Settling {
    pub fn value(&self) -> f64 {
        match *self {
            Settling::Settled(t) => t,
            Settling::NotSettled(_) => f64::INFINITY,
        }
    }

    pub fn display(&self) -> String {
        match *self {
            Settling::Settled(t) => format!("{t:.3}"),
            Settling::NotSettled(h) => format!("> {}", trim_float(h)),
        }
    }
}

fn trim_float(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub overshoot_pct: f64,
    pub settling: Settling,
    pub final_value: f64,
}

/// Overshoot and settling against `final_value`, estimated from the last
/// sample when absent. A final value inside the band counts as zero, and
/// oscillation about zero is measured as the opposite-side swing relative to
/// the initial value.
pub fn step_metrics(signal: &[f64], dt: f64, band: f64, final_value: Option<f64>) -> StepMetrics {
    let n = signal.len();
    let horizon = n.saturating_sub(1) as f64 * dt;
    let peak_abs = signal.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if n == 0 || peak_abs == 0.0 {
        return StepMetrics { overshoot_pct: 0.0, settling: Settling::Settled(0.0), final_value: 0.0 };
    }
    let mut fin = final_value.unwrap_or(signal[n - 1]);
    if fin.abs() <= band * peak_abs {
        fin = 0.0;
    }
    let overshoot_pct = if fin != 0.0 {
        let beyond = signal.iter().map(|&v| (v - fin) * fin.signum()).fold(0.0f64, f64::max);
        100.0 * beyond / fin.abs()
    } else if signal[0] != 0.0 {
        let s0 = signal[0].signum();
        let swing = signal.iter().map(|&v| -s0 * v).fold(0.0f64, f64::max);
        100.0 * swing / signal[0].abs()
    } else {
        0.0
    };
    let tol = band * if fin != 0.0 { fin.abs() } else { peak_abs };
    let settling = match signal.iter().rposition(|&v| (v - fin).abs() > tol) {
        None => Settling::Settled(0.0),
        Some(k) if k + 1 == n => Settling::NotSettled(horizon),
        Some(k) => Settling::Settled((k + 1) as f64 * dt),
    };
    StepMetrics { overshoot_pct, settling, final_value: fin }
}

/// Trapezoidal ∫u² dt.
pub fn control_effort(u: &[f64], dt: f64) -> f64 {
    if u.len() < 2 {
        return 0.0;
    }
    let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
    let inner: f64 = sq[1..sq.len() - 1].iter().sum();
    dt * (inner + 0.5 * (sq[0] + sq[sq.len() - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    /// R = ρ·I.
    pub rho: f64,
    pub horizon_s: f64,
    pub dt: f64,
    pub n_modes: usize,
    pub band: f64,
}

impl Default for ControlSettings {
    fn default() -> Self {
        ControlSettings { rho: 1e-2, horizon_s: 10.0, dt: 1.0 / 4000.0, n_modes: 3, band: 0.02 }
    }
}

impl ControlSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return invalid(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return invalid(format!("control horizon must be positive, got {}", self.horizon_s));
        }
        if !(self.dt > 0.0 && self.dt < self.horizon_s) {
            return invalid(format!("control dt must lie in (0, horizon), got {}", self.dt));
        }
        if !(self.band > 0.0 && self.band < 1.0) {
            return invalid(format!("settling band must lie in (0, 1), got {}", self.band));
        }
        if self.n_modes == 0 {
            return invalid("need at least one retained mode");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub node: usize,
    pub psd_variance: f64,
    pub overshoot_pct: f64,
    pub settling: Settling,
    pub control_effort: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    /// Σ over channels.
    pub psd_variance: f64,
    /// Mean over channels.
    pub overshoot_pct: f64,
    /// Max over channels.
    pub settling: Settling,
    /// Σ over channels.
    pub control_effort: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub nodes: Vec<usize>,
    pub closed_loop: bool,
    pub riccati_iterations: usize,
    pub closed_loop_radius: Option<f64>,
    pub channels: Vec<ChannelMetrics>,
    pub aggregate: AggregateMetrics,
}

/// One configuration: collocated pairs at `nodes` on the beam described by `basis`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCase {
    pub label: String,
    pub nodes: Vec<usize>,
    pub basis: ModalBasis,
    pub closed_loop: bool,
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub report: MetricReport,
    pub trajectories: Trajectories,
    pub psd: Vec<Psd>,
}

pub fn evaluate_case(case: &ControlCase, settings: &ControlSettings) -> Result<CaseOutcome> {
    settings.validate()?;
    let lti = build_modal_lti(&case.basis, &case.nodes, &case.nodes, settings.dt)?;
    let sys = &lti.system;
    let (gain, iterations, radius) = if case.closed_loop {
        let q = sys.c.transpose() * &sys.c;
        let r = DMatrix::identity(sys.n_inputs(), sys.n_inputs()) * settings.rho;
        let sol = solve_lqr(sys, &q, &r)?;
        (Some(sol.gain), sol.iterations, Some(sol.closed_loop_radius))
    } else {
        (None, 0, None)
    };
    let traj = simulate_closed_loop(sys, gain.as_ref(), &case.basis.initial_state(), settings.horizon_s)?;
    let mut channels = Vec::new();
    let mut psds = Vec::new();
    for (j, &node) in case.nodes.iter().enumerate() {
        let y = traj.output(j);
        let psd = psd_variance(&y, sys.dt)?;
        let step = step_metrics(&y, sys.dt, settings.band, Some(0.0));
        channels.push(ChannelMetrics {
            node,
            psd_variance: psd.variance(),
            overshoot_pct: step.overshoot_pct,
            settling: step.settling,
            control_effort: control_effort(&traj.input(j), sys.dt),
        });
        psds.push(psd);
    }
    let aggregate = aggregate(&channels);
    let report = MetricReport {
        label: case.label.clone(),
        nodes: case.nodes.clone(),
        closed_loop: case.closed_loop,
        riccati_iterations: iterations,
        closed_loop_radius: radius,
        channels,
        aggregate,
    };
    Ok(CaseOutcome { report, trajectories: traj, psd: psds })
}

pub fn aggregate(channels: &[ChannelMetrics]) -> AggregateMetrics {
    let n = channels.len().max(1) as f64;
    let settling = channels.iter().map(|c| c.settling).fold(Settling::Settled(0.0), |acc, s| {
        match (acc, s) {
            (Settling::NotSettled(h), _) | (_, Settling::NotSettled(h)) => Settling::NotSettled(h),
            (Settling::Settled(a), Settling::Settled(b)) => Settling::Settled(a.max(b)),
        }
    });
    AggregateMetrics {
        psd_variance: channels.iter().map(|c| c.psd_variance).sum(),
        overshoot_pct: channels.iter().map(|c| c.overshoot_pct).sum::<f64>() / n,
        settling,
        control_effort: channels.iter().map(|c| c.control_effort).sum(),
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub optimal: CaseOutcome,
    pub suboptimal: CaseOutcome,
    pub open_loop: CaseOutcome,
}

/// Evaluate the three cases independently under one set of weights,
/// excitation rule and horizon.
pub fn compare_configs(optimal: &ControlCase, suboptimal: &ControlCase, open_loop: &ControlCase, settings: &ControlSettings) -> Result<Comparison> {
    let cases = [optimal, suboptimal, open_loop];
    let mut out: Vec<CaseOutcome> = cases.par_iter().map(|c| evaluate_case(c, settings)).collect::<Result<_>>()?;
    let open_loop = out.pop().expect("three");
    let suboptimal = out.pop().expect("three");
    let optimal = out.pop().expect("three");
    Ok(Comparison { optimal, suboptimal, open_loop })
}

impl Comparison {
    pub fn reports(&self) -> [&MetricReport; 3] {
        [&self.optimal.report, &self.suboptimal.report, &self.open_loop.report]
    }

    /// Plain-text table: one block of per-channel rows and an aggregate row
    /// per configuration.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>16} {:>14} {:>16} {:>18}",
            "Config", "Channel", "Integrated PSD", "Overshoot (%)", "Settling (s)", "Effort (int u^2 dt)"
        );
        for rep in self.reports() {
            for ch in &rep.channels {
                let _ = writeln!(
                    s,
                    "{:<12} {:>8} {:>16.6e} {:>14.2} {:>16} {:>18.6e}",
                    rep.label,
                    ch.node,
                    ch.psd_variance,
                    ch.overshoot_pct,
                    ch.settling.display(),
                    ch.control_effort
                );
            }
            let a = &rep.aggregate;
            let _ = writeln!(
                s,
                "{:<12} {:>8} {:>16.6e} {:>14.2} {:>16} {:>18.6e}",
                rep.label,
                "all",
                a.psd_variance,
                a.overshoot_pct,
                a.settling.display(),
                a.control_effort
            );
        }
        s
    }
}
