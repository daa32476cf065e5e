//! Versioned experiment configuration.

use serde::{Deserialize, Serialize};

use crate::control::ControlSettings;
use crate::design::{DesignSettings, SurrogateSettings};
use crate::error::{invalid, Error, Result};
use crate::placement;
use crate::truth::{self, ModeSet, ModeSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmdConfig {
    pub stacks: usize,
    pub rank: usize,
    pub stride: usize,
}

impl Default for DmdConfig {
    fn default() -> Self {
        DmdConfig { stacks: 2, rank: 6, stride: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HankelConfig {
    /// Fixed depth s; `null` picks it from the dominant period.
    pub depth: Option<usize>,
    pub horizon_s: f64,
}

impl Default for HankelConfig {
    fn default() -> Self {
        HankelConfig { depth: None, horizon_s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    pub n_sensors: usize,
    pub n_retained: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig { n_sensors: 2, n_retained: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub pair_mass: f64,
    pub max_iters: usize,
    pub n_report: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { pair_mass: 0.025, max_iters: 20, n_report: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub rho: f64,
    pub horizon_s: f64,
    /// Control sample time; the truth-model step when `null`.
    pub dt: Option<f64>,
    pub n_modes: usize,
    pub band: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { rho: 1e-2, horizon_s: 10.0, dt: None, n_modes: 3, band: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GramianConfig {
    pub trials: usize,
    pub max_n: usize,
    pub tol: f64,
}

impl Default for GramianConfig {
    fn default() -> Self {
        GramianConfig { trials: 100, max_n: 6, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub modes: Vec<ModeSpec>,
    pub beam_length: f64,
    pub n_nodes: usize,
    pub dt: f64,
    pub t_final: f64,
    pub dmd: DmdConfig,
    pub hankel: HankelConfig,
    pub placement: PlacementConfig,
    #[serde(rename = "loop")]
    pub design: LoopConfig,
    pub control: ControlConfig,
    pub gramian: GramianConfig,
    pub output_dir: String,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: SCHEMA_VERSION,
            modes: ModeSet::reference().modes().to_vec(),
            beam_length: 1.0,
            n_nodes: 51,
            dt: 1.0 / 4000.0,
            t_final: 2.0,
            dmd: DmdConfig::default(),
            hankel: HankelConfig::default(),
            placement: PlacementConfig::default(),
            design: LoopConfig::default(),
            control: ControlConfig::default(),
            gramian: GramianConfig::default(),
            output_dir: "out".into(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))
    }

    pub fn mode_set(&self) -> Result<ModeSet> {
        ModeSet::new(self.modes.clone(), self.beam_length)
    }

    pub fn surrogate(&self) -> SurrogateSettings {
        SurrogateSettings {
            stride: self.dmd.stride,
            stacks: self.dmd.stacks,
            rank: self.dmd.rank,
            horizon_s: self.hankel.horizon_s,
            depth: self.hankel.depth,
            n_sensors: self.placement.n_sensors,
            n_retained: self.placement.n_retained,
            candidates: None,
        }
    }

    pub fn design_settings(&self) -> DesignSettings {
        DesignSettings {
            n_nodes: self.n_nodes,
            dt: self.dt,
            t_final: self.t_final,
            pair_mass: self.design.pair_mass,
            max_iters: self.design.max_iters,
            n_report: self.design.n_report,
            surrogate: self.surrogate(),
        }
    }

    pub fn control_settings(&self) -> ControlSettings {
        ControlSettings {
            rho: self.control.rho,
            horizon_s: self.control.horizon_s,
            dt: self.control.dt.unwrap_or(self.dt),
            n_modes: self.control.n_modes,
            band: self.control.band,
        }
    }

    /// Check every downstream precondition that can be decided from the
    /// configuration alone.
    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return invalid(format!("unsupported config version {} (expected {SCHEMA_VERSION})", self.version));
        }
        let set = self.mode_set()?;
        truth::check_sampling(set.max_freq_hz(), self.dt)?;
        let n_t = truth::step_count(self.dt, self.t_final)?;
        if self.n_nodes < 2 {
            return invalid(format!("need at least 2 nodes, got {}", self.n_nodes));
        }
        let n_cand = self.n_nodes - 1;

        let d = &self.dmd;
        if d.stride == 0 || d.stacks == 0 || d.rank == 0 {
            return invalid("dmd stride, stacks and rank must be at least 1");
        }
        let n_dmd = n_t.div_ceil(d.stride);
        if n_dmd < d.stacks + 1 {
            return invalid(format!("{n_dmd} decimated snapshots cannot form {}-stacked pairs", d.stacks));
        }
        let max_rank = (self.n_nodes * d.stacks).min(n_dmd - d.stacks);
        if d.rank > max_rank {
            return invalid(format!("dmd rank {} exceeds the stacked snapshot dimensions ({max_rank})", d.rank));
        }

        let steps = (self.hankel.horizon_s / (self.dt * d.stride as f64)).round() as usize;
        if !(self.hankel.horizon_s > 0.0) || steps < 4 {
            return invalid(format!("placement horizon {} s gives {steps} samples; need at least 4", self.hankel.horizon_s));
        }
        let p = &self.placement;
        if p.n_sensors == 0 || p.n_sensors > n_cand {
            return invalid(format!("n_sensors = {} must lie in 1..={n_cand}", p.n_sensors));
        }
        if p.n_retained == 0 {
            return invalid("n_retained must be at least 1");
        }
        if let Some(s) = self.hankel.depth {
            if s == 0 || 2 * s > steps {
                return invalid(format!("hankel depth {s} needs 1 ≤ s ≤ {}", steps / 2));
            }
            let cols = steps - 2 * s + 1;
            if p.n_retained > (p.n_sensors * s).min(cols) {
                return invalid(format!("n_retained = {} exceeds the subset Hankel rank bound", p.n_retained));
            }
        }
        let count = placement::binomial(n_cand, p.n_sensors);
        if count > placement::SUBSET_BUDGET {
            return Err(Error::BudgetExceeded { count, budget: placement::SUBSET_BUDGET });
        }

        let l = &self.design;
        if !(l.pair_mass >= 0.0 && l.pair_mass.is_finite()) {
            return invalid(format!("pair mass must be non-negative, got {}", l.pair_mass));
        }
        if l.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if l.n_report == 0 || l.n_report > set.len() {
            return invalid(format!("loop n_report = {} must lie in 1..={}", l.n_report, set.len()));
        }

        let c = self.control_settings();
        c.validate()?;
        if c.n_modes > set.len() {
            return invalid(format!("control n_modes = {} exceeds the {} available modes", c.n_modes, set.len()));
        }
        let fmax = set.modes()[c.n_modes - 1].freq_hz;
        truth::check_sampling(fmax, c.dt)?;

        let g = &self.gramian;
        if g.trials == 0 || g.max_n == 0 || !(g.tol > 0.0) {
            return invalid("gramian trials, max_n and tol must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"loop": {"pair_mass": 0.05}, "dmd": {"rank": 4}}"#).unwrap();
        assert_eq!(cfg.design.pair_mass, 0.05);
        assert_eq!(cfg.design.max_iters, 20);
        assert_eq!(cfg.dmd.rank, 4);
        assert_eq!(cfg.dmd.stacks, 2);
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"nodes": 3}"#).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"version": 2}"#).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn nyquist_message_names_the_bound() {
        let cfg = ExperimentConfig { dt: 1e-3, ..Default::default() };
        let err = cfg.validate().unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("Nyquist"));
    }

    #[test]
    fn downstream_preconditions_are_checked() {
        let bad = [
            ExperimentConfig { n_nodes: 1, ..Default::default() },
            ExperimentConfig { t_final: 1e-4, ..Default::default() },
            ExperimentConfig { dmd: DmdConfig { rank: 0, ..Default::default() }, ..Default::default() },
            ExperimentConfig { placement: PlacementConfig { n_sensors: 60, n_retained: 6 }, ..Default::default() },
            ExperimentConfig { hankel: HankelConfig { depth: Some(400), horizon_s: 1.0 }, ..Default::default() },
            ExperimentConfig { design: LoopConfig { pair_mass: -1.0, ..Default::default() }, ..Default::default() },
            ExperimentConfig { design: LoopConfig { max_iters: 0, ..Default::default() }, ..Default::default() },
            ExperimentConfig { control: ControlConfig { rho: 0.0, ..Default::default() }, ..Default::default() },
            ExperimentConfig { placement: PlacementConfig { n_sensors: 5, n_retained: 6 }, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
