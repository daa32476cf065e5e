//! Iterated placement with the added mass of the placed hardware.

use serde::{Deserialize, Serialize};

use crate::anc::{self, CorrectedModes, CorrectedModesRecord, MassLoad};
use crate::dmd::{self, ContinuousEigen, DmdModel};
use crate::error::{invalid, Result};
use crate::hankel::{self, HankelDepth};
use crate::placement::{self, LandscapePoint, PlacementProblem, PlacementResult};
use crate::truth::{self, ModeSet, SnapshotData};

/// How sampled beam data become a placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSettings {
    /// Decimation applied before the DMD fit.
    pub stride: usize,
    pub stacks: usize,
    pub rank: usize,
    /// Length of the DMD reconstruction fed to the Hankel search, seconds.
    pub horizon_s: f64,
    /// Fixed Hankel depth; chosen from the dominant period when absent.
    pub depth: Option<usize>,
    pub n_sensors: usize,
    pub n_retained: usize,
    /// Candidate nodes; every node except the clamped root when absent.
    pub candidates: Option<Vec<usize>>,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        SurrogateSettings {
            stride: 8,
            stacks: 2,
            rank: 6,
            horizon_s: 1.0,
            depth: None,
            n_sensors: 2,
            n_retained: 6,
            candidates: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateOutcome {
    pub model: DmdModel,
    pub depth: HankelDepth,
    pub placement: PlacementResult,
    pub dmd_data: SnapshotData,
}

/// Decimate, fit DMD, reconstruct every node over the horizon, pick the
/// Hankel depth and run the exhaustive placement search.
pub fn surrogate_placement(data: &SnapshotData, st: &SurrogateSettings) -> Result<SurrogateOutcome> {
    let dmd_data = data.decimate(st.stride)?;
    let model = dmd::fit_dmd(&dmd::build_shifted_snapshots(&dmd_data, st.stacks)?, st.rank)?;
    let steps = (st.horizon_s / dmd_data.dt()).round() as usize;
    if steps < 4 {
        return invalid(format!("placement horizon {} s gives only {steps} samples", st.horizon_s));
    }
    let y = model.reconstruct_nodes(steps)?;
    let n = data.n_nodes();
    let candidates = st.candidates.clone().unwrap_or_else(|| (1..n).collect());
    let depth = match st.depth {
        Some(s) => HankelDepth { s, dominant_freq_hz: f64::NAN, period_s: f64::NAN, clipped: false },
        None => hankel::choose_hankel_depth(&y.select_rows(&candidates), dmd_data.dt())?,
    };
    let problem = PlacementProblem {
        outputs: y,
        candidates,
        n_sensors: st.n_sensors,
        depth: depth.s,
        n_retained: st.n_retained,
        bounds: (1, n.saturating_sub(1)),
    };
    let placement = placement::exhaustive_search(&problem)?;
    Ok(SurrogateOutcome { model, depth, placement, dmd_data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSettings {
    pub n_nodes: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Mass ratio added at every placed node.
    pub pair_mass: f64,
    pub max_iters: usize,
    /// Loaded modes listed in the audit trail.
    pub n_report: usize,
    pub surrogate: SurrogateSettings,
}

impl Default for DesignSettings {
    fn default() -> Self {
        DesignSettings {
            n_nodes: 51,
            dt: 1.0 / 4000.0,
            t_final: 2.0,
            pair_mass: 0.025,
            max_iters: 20,
            n_report: 3,
            surrogate: SurrogateSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignIteration {
    pub index: usize,
    /// Nodes carrying mass while this iteration's data were generated.
    pub loaded_at: Vec<usize>,
    pub placement: Vec<usize>,
    pub cost: f64,
    pub corrected_freqs_hz: Vec<f64>,
    pub dmd_rank: usize,
    pub dmd_eigenvalues: Vec<[f64; 2]>,
    pub dmd_modes: Vec<ContinuousEigen>,
    pub hankel_depth: usize,
    pub landscape: Vec<LandscapePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub history: Vec<DesignIteration>,
    pub converged: bool,
    pub cycle: bool,
    pub final_placement: Vec<usize>,
    pub final_loads: Option<CorrectedModesRecord>,
}

impl DesignResult {
    pub fn unloaded_placement(&self) -> &[usize] {
        &self.history[0].placement
    }
}

/// Modal model of the beam carrying `pair_mass` at each node of `placement`.
pub fn loaded_modes(set: &ModeSet, node_x: &[f64], placement: &[usize], pair_mass: f64, n_keep: usize) -> Result<CorrectedModes> {
    anc::corrected_modes(set, &MassLoad::at_nodes(node_x, placement, pair_mass)?, n_keep)
}

/// Free response of the loaded beam, released from the unloaded initial deformation.
pub fn loaded_snapshots(set: &ModeSet, settings: &DesignSettings, placement: &[usize]) -> Result<(SnapshotData, CorrectedModes)> {
    let node_x = truth::uniform_mesh(settings.n_nodes, set.beam_length())?;
    let cm = loaded_modes(set, &node_x, placement, settings.pair_mass, settings.n_report.min(set.len()))?;
    let n_t = truth::step_count(settings.dt, settings.t_final)?;
    let data = truth::synthesize(&cm.components(&node_x), node_x, settings.dt, n_t)?;
    Ok((data, cm))
}

fn record(index: usize, loaded_at: Vec<usize>, out: &SurrogateOutcome, freqs: Vec<f64>) -> Result<DesignIteration> {
    Ok(DesignIteration {
        index,
        loaded_at,
        placement: out.placement.best_subset.clone(),
        cost: out.placement.best_cost,
        corrected_freqs_hz: freqs,
        dmd_rank: out.model.rank(),
        dmd_eigenvalues: out.model.eigenvalues().iter().map(|z| [z.re, z.im]).collect(),
        dmd_modes: out.model.continuous_modes()?,
        hankel_depth: out.depth.s,
        landscape: out.placement.landscape.clone(),
    })
}

pub fn validate_settings(set: &ModeSet, s: &DesignSettings) -> Result<()> {
    if s.max_iters == 0 {
        return invalid("max_iters must be at least 1");
    }
    if !(s.pair_mass >= 0.0 && s.pair_mass.is_finite()) {
        return invalid(format!("pair mass must be non-negative, got {}", s.pair_mass));
    }
    if s.n_report == 0 || s.n_report > set.len() {
        return invalid(format!("n_report = {} must lie in 1..={}", s.n_report, set.len()));
    }
    truth::check_sampling(set.max_freq_hz(), s.dt)?;
    Ok(())
}

/// Unloaded placement, then repeatedly reload the beam at the latest
/// placement and re-place, until the placement repeats.
pub fn run_design_loop(set: &ModeSet, settings: &DesignSettings) -> Result<DesignResult> {
    validate_settings(set, settings)?;
    let data = truth::simulate(set, settings.n_nodes, settings.dt, settings.t_final)?;
    let first = surrogate_placement(&data, &settings.surrogate)?;
    let unloaded_freqs = set.modes().iter().take(settings.n_report).map(|m| m.freq_hz).collect();
    let mut history = vec![record(0, Vec::new(), &first, unloaded_freqs)?];
    let mut converged = false;
    let mut cycle = false;
    let mut final_loads = None;
    for k in 1..=settings.max_iters {
        let prev = history[k - 1].placement.clone();
        let (data, cm) = loaded_snapshots(set, settings, &prev)?;
        let out = surrogate_placement(&data, &settings.surrogate)?;
        let freqs = cm.damped_freq_hz().into_iter().take(settings.n_report).collect();
        final_loads = Some(cm.to_record(data.node_x()));
        let it = record(k, prev.clone(), &out, freqs)?;
        let placed = it.placement.clone();
        history.push(it);
        if placed == prev {
            converged = true;
            break;
        }
        if history[..k - 1].iter().any(|h| h.placement == placed) {
            cycle = true;
            break;
        }
    }
    let final_placement = history.last().expect("non-empty").placement.clone();
    Ok(DesignResult { history, converged, cycle, final_placement, final_loads })
}

/// Placement chosen from the beam loaded at `placement`.
pub fn loaded_optimum(set: &ModeSet, settings: &DesignSettings, placement: &[usize]) -> Result<PlacementResult> {
    let (data, _) = loaded_snapshots(set, settings, placement)?;
    Ok(surrogate_placement(&data, &settings.surrogate)?.placement)
}
