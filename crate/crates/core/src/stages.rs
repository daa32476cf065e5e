//! Pipeline stages and the files each one writes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::control::{self, CaseOutcome, Comparison, ControlCase, MetricReport, ModalBasis};
use crate::design::{self, DesignResult, SurrogateOutcome};
use crate::dmd::{self, ContinuousEigen, DmdModel, DmdRecord};
use crate::error::{Error, Result};
use crate::hankel::{self, EquivalenceRun};
use crate::placement::{self, PlacementResult};
use crate::spectrum;
use crate::truth::{self, fmt17, ModeSet, SnapshotData};

/// Target share of the singular-value sum carried by the retained rank.
pub const ENERGY_TARGET: f64 = 0.9995;
pub const ENERGY_FLOOR: f64 = 0.99;

#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = std::result::Result<T, StageError>;

fn tag<T>(stage: &'static str, r: Result<T>) -> StageResult<T> {
    r.map_err(|error| StageError { stage, error })
}

/// Output directory; files are written whole, one call per file.
pub struct Bundle {
    dir: PathBuf,
}

impl Bundle {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Bundle { dir: dir.as_ref().to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize)]
struct SnapshotMeta<'a> {
    n_nodes: usize,
    n_t: usize,
    dt: f64,
    t_final: f64,
    beam_length: f64,
    node_x: &'a [f64],
    modes: &'a [truth::ModeSpec],
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(ModeSet, SnapshotData)> {
    let set = cfg.mode_set()?;
    let data = truth::simulate(&set, cfg.n_nodes, cfg.dt, cfg.t_final)?;
    Ok((set, data))
}

pub fn write_simulate(out: &Bundle, cfg: &ExperimentConfig, set: &ModeSet, data: &SnapshotData) -> Result<()> {
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    out.text("snapshots.csv", std::str::from_utf8(&csv).expect("ascii"))?;
    out.json(
        "snapshots_meta.json",
        &SnapshotMeta {
            n_nodes: data.n_nodes(),
            n_t: data.n_t(),
            dt: data.dt(),
            t_final: cfg.t_final,
            beam_length: set.beam_length(),
            node_x: data.node_x(),
            modes: set.modes(),
        },
    )
}

// ---------------------------------------------------------------- identify

pub struct Identification {
    pub dmd_data: SnapshotData,
    pub model: DmdModel,
    pub energy_fraction: f64,
}

pub fn identify(cfg: &ExperimentConfig, data: &SnapshotData) -> Result<Identification> {
    let dmd_data = data.decimate(cfg.dmd.stride)?;
    let model = dmd::fit_dmd(&dmd::build_shifted_snapshots(&dmd_data, cfg.dmd.stacks)?, cfg.dmd.rank)?;
    let energy_fraction = dmd::energy_fraction(model.singular_values(), cfg.dmd.rank)?;
    Ok(Identification { dmd_data, model, energy_fraction })
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifyReport {
    pub dt: f64,
    pub stride: usize,
    pub r: usize,
    pub q: usize,
    pub energy_fraction: f64,
    pub energy_target: f64,
    pub energy_target_met: bool,
    pub energy_floor: f64,
    pub energy_floor_met: bool,
    pub modes: Vec<ContinuousEigen>,
    pub tip_reconstruction_rel_error: f64,
}

/// Index of the positive-frequency eigenvalue of each of the `k` heaviest
/// oscillatory modes, in increasing frequency.
pub fn dominant_mode_indices(model: &DmdModel, k: usize) -> Vec<usize> {
    let lam = model.eigenvalues();
    let mut idx: Vec<usize> = (0..lam.len()).filter(|&i| lam[i].im > 0.0).collect();
    let weight = |i: usize| model.amplitudes()[i].norm() * model.modes().column(i).norm();
    idx.sort_by(|&a, &b| weight(b).partial_cmp(&weight(a)).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(k);
    idx.sort_by(|&a, &b| lam[a].arg().partial_cmp(&lam[b].arg()).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// Real spatial profile of DMD mode `j` over the physical nodes, unit tip.
pub fn dmd_mode_profile(model: &DmdModel, j: usize) -> Vec<f64> {
    let n = model.n_nodes();
    let mut col: DVector<Complex64> = model.modes().column(j).rows(0, n).into_owned();
    crate::linalg::normalize_phase(&mut col);
    let tip = col[n - 1].re;
    col.iter().map(|z| if tip != 0.0 { z.re / tip } else { z.re }).collect()
}

pub fn write_identify(out: &Bundle, cfg: &ExperimentConfig, set: &ModeSet, id: &Identification) -> Result<()> {
    let model = &id.model;
    out.json::<DmdRecord>("dmd_model.json", &model.to_record())?;

    let sv = model.singular_values();
    let total: f64 = sv.iter().sum();
    let mut s = String::from("index,sigma,cumulative_fraction\n");
    let mut acc = 0.0;
    for (i, v) in sv.iter().enumerate() {
        acc += v;
        let _ = writeln!(s, "{},{},{}", i + 1, fmt17(*v), fmt17(acc / total));
    }
    out.text("svd_spectrum.csv", &s)?;

    let n_show = 3.min(set.len());
    let node_x = id.dmd_data.node_x();
    let dom = dominant_mode_indices(model, n_show);
    let profiles: Vec<Vec<f64>> = dom.iter().map(|&j| dmd_mode_profile(model, j)).collect();
    let mut s = String::from("x");
    for i in 0..n_show {
        let _ = write!(s, ",truth_mode{}", i + 1);
    }
    for i in 0..profiles.len() {
        let _ = write!(s, ",dmd_mode{}", i + 1);
    }
    s.push('\n');
    let tip_x = *node_x.last().expect("nodes");
    for (r, &x) in node_x.iter().enumerate() {
        let _ = write!(s, "{}", fmt17(x));
        for i in 0..n_show {
            let _ = write!(s, ",{}", fmt17(set.shape(i, x) / set.shape(i, tip_x)));
        }
        for p in &profiles {
            let _ = write!(s, ",{}", fmt17(p[r]));
        }
        s.push('\n');
    }
    out.text("mode_shapes.csv", &s)?;

    let dd = &id.dmd_data;
    let tip = dd.n_nodes() - 1;
    let truth_tip: Vec<f64> = dd.values().row(tip).iter().copied().collect();
    let steps: Vec<usize> = (0..dd.n_t()).collect();
    let rec = model.reconstruct(&steps, &[tip])?;
    let dmd_tip: Vec<f64> = rec.row(0).iter().copied().collect();
    let mut s = String::from("t,truth,dmd\n");
    for k in 0..dd.n_t() {
        let _ = writeln!(s, "{},{},{}", fmt17(dd.time(k)), fmt17(truth_tip[k]), fmt17(dmd_tip[k]));
    }
    out.text("tip_reconstruction.csv", &s)?;

    let (f, a_truth) = spectrum::amplitude_spectrum(&truth_tip, dd.dt());
    let (_, a_dmd) = spectrum::amplitude_spectrum(&dmd_tip, dd.dt());
    let mut s = String::from("freq_hz,truth_amplitude,dmd_amplitude\n");
    for k in 0..f.len() {
        let _ = writeln!(s, "{},{},{}", fmt17(f[k]), fmt17(a_truth[k]), fmt17(a_dmd[k]));
    }
    out.text("fft_comparison.csv", &s)?;

    let err: f64 = truth_tip.iter().zip(&dmd_tip).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = truth_tip.iter().map(|a| a * a).sum::<f64>().sqrt();
    out.json(
        "identify_report.json",
        &IdentifyReport {
            dt: dd.dt(),
            stride: cfg.dmd.stride,
            r: model.rank(),
            q: model.stacks(),
            energy_fraction: id.energy_fraction,
            energy_target: ENERGY_TARGET,
            energy_target_met: id.energy_fraction >= ENERGY_TARGET,
            energy_floor: ENERGY_FLOOR,
            energy_floor_met: id.energy_fraction >= ENERGY_FLOOR,
            modes: model.continuous_modes()?,
            tip_reconstruction_rel_error: if norm > 0.0 { err / norm } else { 0.0 },
        },
    )
}

// ---------------------------------------------------------------- place

pub fn place(cfg: &ExperimentConfig, data: &SnapshotData) -> Result<SurrogateOutcome> {
    design::surrogate_placement(data, &cfg.surrogate())
}

#[derive(Debug, Clone, Serialize)]
struct PlacementFile<'a> {
    best_subset: &'a [usize],
    best_cost: f64,
    evaluations: usize,
    hankel_depth: usize,
    hankel_cols: usize,
    dominant_freq_hz: f64,
    n_retained: usize,
}

fn placement_file<'a>(cfg: &ExperimentConfig, p: &'a PlacementResult, dominant: f64) -> PlacementFile<'a> {
    PlacementFile {
        best_subset: &p.best_subset,
        best_cost: p.best_cost,
        evaluations: p.evaluations,
        hankel_depth: p.hankel_depth,
        hankel_cols: p.hankel_cols,
        dominant_freq_hz: dominant,
        n_retained: cfg.placement.n_retained,
    }
}

pub fn write_place(out: &Bundle, cfg: &ExperimentConfig, res: &SurrogateOutcome) -> Result<()> {
    out.json("placement.json", &placement_file(cfg, &res.placement, res.depth.dominant_freq_hz))?;
    let mut csv = Vec::new();
    placement::write_landscape_csv(&res.placement.landscape, &mut csv)?;
    out.text("landscape_unloaded.csv", std::str::from_utf8(&csv).expect("ascii"))
}

// ---------------------------------------------------------------- iterate

pub fn iterate(cfg: &ExperimentConfig) -> Result<DesignResult> {
    design::run_design_loop(&cfg.mode_set()?, &cfg.design_settings())
}

#[derive(Debug, Clone, Serialize)]
struct LoopSummary<'a> {
    pair_mass: f64,
    iterations: usize,
    converged: bool,
    cycle: bool,
    unloaded_placement: &'a [usize],
    final_placement: &'a [usize],
    final_cost: f64,
}

#[derive(Debug, Clone, Serialize)]
struct LoopFile<'a> {
    iterations: &'a [design::DesignIteration],
    summary: LoopSummary<'a>,
}

pub fn write_iterate(out: &Bundle, cfg: &ExperimentConfig, res: &DesignResult) -> Result<()> {
    let last = res.history.last().expect("non-empty");
    out.json(
        "design_history.json",
        &LoopFile {
            iterations: &res.history,
            summary: LoopSummary {
                pair_mass: cfg.design.pair_mass,
                iterations: res.history.len() - 1,
                converged: res.converged,
                cycle: res.cycle,
                unloaded_placement: res.unloaded_placement(),
                final_placement: &res.final_placement,
                final_cost: last.cost,
            },
        },
    )?;
    let mut csv = Vec::new();
    placement::write_landscape_csv(&last.landscape, &mut csv)?;
    out.text("landscape_final.csv", std::str::from_utf8(&csv).expect("ascii"))?;
    if let Some(loads) = &res.final_loads {
        out.json("corrected_modes.json", loads)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- evaluate

/// Basis of the beam carrying hardware at `nodes`.
pub fn loaded_basis(cfg: &ExperimentConfig, set: &ModeSet, nodes: &[usize]) -> Result<ModalBasis> {
    let node_x = truth::uniform_mesh(cfg.n_nodes, set.beam_length())?;
    let cm = design::loaded_modes(set, &node_x, nodes, cfg.design.pair_mass, cfg.design.n_report.min(set.len()))?;
    ModalBasis::from_corrected(&cm, &node_x, cfg.control.n_modes)
}

/// Converged (or last) placement against the unloaded optimum, plus the
/// converged placement without control.
pub fn evaluate(cfg: &ExperimentConfig, design: &DesignResult) -> Result<Comparison> {
    let set = cfg.mode_set()?;
    let opt = design.final_placement.clone();
    let sub = design.unloaded_placement().to_vec();
    let case = |label: &str, nodes: &[usize], closed: bool| -> Result<ControlCase> {
        Ok(ControlCase { label: label.into(), nodes: nodes.to_vec(), basis: loaded_basis(cfg, &set, nodes)?, closed_loop: closed })
    };
    control::compare_configs(
        &case("optimal", &opt, true)?,
        &case("suboptimal", &sub, true)?,
        &case("open-loop", &opt, false)?,
        &cfg.control_settings(),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct Orderings {
    pub psd_optimal_below_suboptimal: bool,
    pub psd_suboptimal_below_open_loop: bool,
    pub overshoot_optimal_below_suboptimal: bool,
    pub settling_optimal_below_suboptimal: bool,
    pub effort_optimal_below_suboptimal: bool,
    pub open_loop_effort_zero: bool,
}

pub fn orderings(c: &Comparison) -> Orderings {
    let (o, s, l) = (&c.optimal.report.aggregate, &c.suboptimal.report.aggregate, &c.open_loop.report.aggregate);
    Orderings {
        psd_optimal_below_suboptimal: o.psd_variance < s.psd_variance,
        psd_suboptimal_below_open_loop: s.psd_variance < l.psd_variance,
        overshoot_optimal_below_suboptimal: o.overshoot_pct < s.overshoot_pct,
        settling_optimal_below_suboptimal: o.settling.value() < s.settling.value(),
        effort_optimal_below_suboptimal: o.control_effort < s.control_effort,
        open_loop_effort_zero: l.control_effort == 0.0,
    }
}

#[derive(Debug, Clone, Serialize)]
struct MetricsFile<'a> {
    settings: control::ControlSettings,
    optimal: &'a MetricReport,
    suboptimal: &'a MetricReport,
    open_loop: &'a MetricReport,
    orderings: Orderings,
}

pub fn write_evaluate(out: &Bundle, cfg: &ExperimentConfig, cmp: &Comparison) -> Result<()> {
    out.json(
        "metrics.json",
        &MetricsFile {
            settings: cfg.control_settings(),
            optimal: &cmp.optimal.report,
            suboptimal: &cmp.suboptimal.report,
            open_loop: &cmp.open_loop.report,
            orderings: orderings(cmp),
        },
    )?;
    out.text("table3.txt", &cmp.table())?;

    let cases: [&CaseOutcome; 3] = [&cmp.optimal, &cmp.suboptimal, &cmp.open_loop];
    let mut s = String::from("t");
    for c in cases {
        for n in &c.report.nodes {
            let _ = write!(s, ",{}_y{}", c.report.label, n);
        }
    }
    for c in &cases[..2] {
        for n in &c.report.nodes {
            let _ = write!(s, ",{}_u{}", c.report.label, n);
        }
    }
    s.push('\n');
    let rows = cmp.optimal.trajectories.n_samples();
    let dt = cmp.optimal.trajectories.dt;
    for k in 0..rows {
        let _ = write!(s, "{}", fmt17(k as f64 * dt));
        for c in cases {
            for j in 0..c.report.nodes.len() {
                let _ = write!(s, ",{}", fmt17(c.trajectories.y[(k, j)]));
            }
        }
        for c in &cases[..2] {
            for j in 0..c.report.nodes.len() {
                let _ = write!(s, ",{}", fmt17(c.trajectories.u[(k, j)]));
            }
        }
        s.push('\n');
    }
    out.text("trajectories.csv", &s)?;

    let mut s = String::from("freq_hz");
    for c in cases {
        for n in &c.report.nodes {
            let _ = write!(s, ",{}_psd{}", c.report.label, n);
        }
    }
    s.push('\n');
    let freqs = &cmp.optimal.psd[0].freqs;
    for k in 0..freqs.len() {
        let _ = write!(s, "{}", fmt17(freqs[k]));
        for c in cases {
            for p in &c.psd {
                let _ = write!(s, ",{}", fmt17(p.density[k]));
            }
        }
        s.push('\n');
    }
    out.text("psd.csv", &s)
}

// ---------------------------------------------------------------- gramian

pub fn verify_gramian(cfg: &ExperimentConfig) -> Result<EquivalenceRun> {
    let g = &cfg.gramian;
    hankel::run_equivalence_trials(g.trials, g.max_n, cfg.seed, g.tol)
}

pub fn write_gramian(out: &Bundle, run: &EquivalenceRun) -> Result<()> {
    out.json("gramian_equivalence.json", run)
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone, Serialize)]
struct PipelineReport<'a> {
    energy_fraction: f64,
    energy_target: f64,
    energy_target_met: bool,
    energy_floor_met: bool,
    dmd_modes: Vec<ContinuousEigen>,
    unloaded_placement: &'a [usize],
    unloaded_cost: f64,
    loop_converged: bool,
    loop_cycle: bool,
    loop_iterations: usize,
    final_placement: &'a [usize],
    optimal: &'a control::AggregateMetrics,
    suboptimal: &'a control::AggregateMetrics,
    open_loop: &'a control::AggregateMetrics,
    orderings: Orderings,
}

/// Every stage in order; each stage's files are written as soon as it finishes.
pub fn pipeline(cfg: &ExperimentConfig, out: &Bundle) -> StageResult<()> {
    let (set, data) = tag("simulate", simulate(cfg))?;
    tag("simulate", write_simulate(out, cfg, &set, &data))?;
    let id = tag("identify", identify(cfg, &data))?;
    tag("identify", write_identify(out, cfg, &set, &id))?;
    let placed = tag("place", place(cfg, &data))?;
    tag("place", write_place(out, cfg, &placed))?;
    let loop_res = tag("iterate", iterate(cfg))?;
    tag("iterate", write_iterate(out, cfg, &loop_res))?;
    let cmp = tag("evaluate", evaluate(cfg, &loop_res))?;
    tag("evaluate", write_evaluate(out, cfg, &cmp))?;
    let report = PipelineReport {
        energy_fraction: id.energy_fraction,
        energy_target: ENERGY_TARGET,
        energy_target_met: id.energy_fraction >= ENERGY_TARGET,
        energy_floor_met: id.energy_fraction >= ENERGY_FLOOR,
        dmd_modes: tag("report", id.model.continuous_modes())?,
        unloaded_placement: &placed.placement.best_subset,
        unloaded_cost: placed.placement.best_cost,
        loop_converged: loop_res.converged,
        loop_cycle: loop_res.cycle,
        loop_iterations: loop_res.history.len() - 1,
        final_placement: &loop_res.final_placement,
        optimal: &cmp.optimal.report.aggregate,
        suboptimal: &cmp.suboptimal.report.aggregate,
        open_loop: &cmp.open_loop.report.aggregate,
        orderings: orderings(&cmp),
    };
    tag("report", out.json("report.json", &report))
}
