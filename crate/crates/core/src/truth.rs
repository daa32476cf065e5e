//! Modal-superposition truth model of a clamped-free beam.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    /// Dimensionless eigenvalue constant λ of the clamped-free shape.
    pub lambda: f64,
    /// Initial modal amplitude in metres.
    pub amplitude: f64,
    /// Damped natural frequency in Hz.
    pub freq_hz: f64,
    pub zeta: f64,
}

impl ModeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return invalid(format!("mode constant must be positive, got {}", self.lambda));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return invalid(format!("mode amplitude must be non-negative, got {}", self.amplitude));
        }
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return invalid(format!("mode frequency must be positive, got {}", self.freq_hz));
        }
        if !(self.zeta >= 0.0 && self.zeta < 1.0) {
            return invalid(format!("damping ratio must lie in [0, 1), got {}", self.zeta));
        }
        Ok(())
    }

    /// Undamped natural frequency in rad/s.
    pub fn omega_n(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.freq_hz / (1.0 - self.zeta * self.zeta).sqrt()
    }

    pub fn omega_d(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.freq_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    modes: Vec<ModeSpec>,
    beam_length: f64,
}

const TABLE_1: [(f64, f64, f64, f64); 10] = [
    (1.8751, 0.800, 3.58, 0.01),
    (4.6941, 0.500, 22.45, 0.03),
    (7.8548, 0.100, 62.85, 0.04),
    (10.9955, 0.020, 122.85, 0.08),
    (14.1372, 0.010, 203.09, 0.08),
    (17.2877, 0.010, 303.38, 0.08),
    (20.4204, 0.005, 423.72, 0.08),
    (23.5619, 0.005, 563.10, 0.10),
    (26.7035, 0.002, 723.27, 0.10),
    (29.8451, 0.001, 903.47, 0.10),
];

impl ModeSet {
    pub fn new(modes: Vec<ModeSpec>, beam_length: f64) -> Result<Self> {
        if modes.is_empty() {
            return invalid("mode set is empty");
        }
        if !(beam_length > 0.0 && beam_length.is_finite()) {
            return invalid(format!("beam length must be positive, got {beam_length}"));
        }
        for m in &modes {
            m.validate()?;
        }
        if modes.windows(2).any(|w| w[1].freq_hz <= w[0].freq_hz) {
            return invalid("mode frequencies must be strictly increasing");
        }
        Ok(ModeSet { modes, beam_length })
    }

    /// The ten-mode reference beam of unit length.
    pub fn reference() -> Self {
        let modes = TABLE_1
            .iter()
            .map(|&(lambda, amplitude, freq_hz, zeta)| ModeSpec { lambda, amplitude, freq_hz, zeta })
            .collect();
        ModeSet { modes, beam_length: 1.0 }
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn beam_length(&self) -> f64 {
        self.beam_length
    }

    pub fn max_freq_hz(&self) -> f64 {
        self.modes.iter().map(|m| m.freq_hz).fold(0.0, f64::max)
    }

    /// Shape of mode `i` at physical position `x`.
    pub fn shape(&self, i: usize, x: f64) -> f64 {
        mode_shape(self.modes[i].lambda, x / self.beam_length)
    }
}

/// Clamped-free beam shape  cosh z − cos z − σ(sinh z − sin z)  at z = λ·x̂,
/// σ = (cosh λ + cos λ)/(sinh λ + sin λ).
///
/// Evaluated as sinh(λ−z) + sin λ cosh z − cos λ sinh z over (sinh λ + sin λ)
/// for the hyperbolic part, which avoids cancelling two e^λ-sized terms.
pub fn mode_shape(lambda: f64, x_norm: f64) -> f64 {
    let z = lambda * x_norm;
    let den = lambda.sinh() + lambda.sin();
    let sigma = (lambda.cosh() + lambda.cos()) / den;
    let hyper = ((lambda - z).sinh() + lambda.sin() * z.cosh() - lambda.cos() * z.sinh()) / den;
    hyper - z.cos() + sigma * z.sin()
}

/// One damped standing wave: `amplitude · shape · e^{-ζω_n t} cos(ω_d t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalComponent {
    pub shape: Vec<f64>,
    pub amplitude: f64,
    pub freq_hz: f64,
    pub zeta: f64,
}

/// Uniform node positions from the clamped root (index 0) to the tip.
pub fn uniform_mesh(n_nodes: usize, beam_length: f64) -> Result<Vec<f64>> {
    if n_nodes < 2 {
        return invalid(format!("need at least 2 nodes, got {n_nodes}"));
    }
    let h = beam_length / (n_nodes - 1) as f64;
    Ok((0..n_nodes).map(|i| if i == n_nodes - 1 { beam_length } else { i as f64 * h }).collect())
}

pub fn components(set: &ModeSet, node_x: &[f64]) -> Vec<ModalComponent> {
    set.modes
        .iter()
        .enumerate()
        .map(|(i, m)| ModalComponent {
            shape: node_x.iter().map(|&x| set.shape(i, x)).collect(),
            amplitude: m.amplitude,
            freq_hz: m.freq_hz,
            zeta: m.zeta,
        })
        .collect()
}

/// Free response of the reference mode set on a uniform mesh.
pub fn simulate(set: &ModeSet, n_nodes: usize, dt: f64, t_final: f64) -> Result<SnapshotData> {
    check_sampling(set.max_freq_hz(), dt)?;
    let node_x = uniform_mesh(n_nodes, set.beam_length)?;
    let n_t = step_count(dt, t_final)?;
    synthesize(&components(set, &node_x), node_x, dt, n_t)
}

pub fn check_sampling(max_freq_hz: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("time step must be positive, got {dt}"));
    }
    let bound = 1.0 / (2.0 * max_freq_hz);
    if dt >= bound {
        return invalid(format!(
            "time step {dt} violates the Nyquist bound: need dt < {bound} for {max_freq_hz} Hz"
        ));
    }
    Ok(())
}

pub fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return invalid(format!("final time must be positive, got {t_final}"));
    }
    let n = (t_final / dt).round() as usize;
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} time steps; need at least 3")));
    }
    Ok(n)
}

pub fn synthesize(comps: &[ModalComponent], node_x: Vec<f64>, dt: f64, n_t: usize) -> Result<SnapshotData> {
    let n = node_x.len();
    let mut values = DMatrix::<f64>::zeros(n, n_t);
    for c in comps {
        if c.shape.len() != n {
            return invalid("component shape length differs from the mesh");
        }
        let wd = 2.0 * std::f64::consts::PI * c.freq_hz;
        let decay = c.zeta * wd / (1.0 - c.zeta * c.zeta).sqrt();
        for k in 0..n_t {
            let t = k as f64 * dt;
            let g = c.amplitude * (-decay * t).exp() * (wd * t).cos();
            if g == 0.0 {
                continue;
            }
            let mut col = values.column_mut(k);
            for (v, s) in col.iter_mut().zip(&c.shape) {
                *v += g * s;
            }
        }
    }
    SnapshotData::new(values, node_x, dt)
}

/// Node-by-time displacement matrix on a uniform time grid starting at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotData {
    values: DMatrix<f64>,
    node_x: Vec<f64>,
    dt: f64,
}

impl SnapshotData {
    pub fn new(values: DMatrix<f64>, node_x: Vec<f64>, dt: f64) -> Result<Self> {
        if values.nrows() != node_x.len() {
            return invalid(format!(
                "{} rows but {} node positions",
                values.nrows(),
                node_x.len()
            ));
        }
        if values.nrows() == 0 {
            return invalid("snapshot matrix has no nodes");
        }
        if values.ncols() < 2 {
            return Err(Error::InsufficientData(format!("{} snapshots", values.ncols())));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return invalid("snapshot matrix contains non-finite values");
        }
        Ok(SnapshotData { values, node_x, dt })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn node_x(&self) -> &[f64] {
        &self.node_x
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.values.ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Every `stride`-th snapshot, starting with the first.
    pub fn decimate(&self, stride: usize) -> Result<SnapshotData> {
        if stride == 0 {
            return invalid("decimation stride must be at least 1");
        }
        let cols: Vec<usize> = (0..self.n_t()).step_by(stride).collect();
        let values = self.values.select_columns(&cols);
        SnapshotData::new(values, self.node_x.clone(), self.dt * stride as f64)
    }

    /// First `n` snapshots.
    pub fn truncate(&self, n: usize) -> Result<SnapshotData> {
        let n = n.min(self.n_t());
        SnapshotData::new(self.values.columns(0, n).into_owned(), self.node_x.clone(), self.dt)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for x in &self.node_x {
            write!(w, ",{}", fmt17(*x))?;
        }
        writeln!(w)?;
        for k in 0..self.n_t() {
            write!(w, "{}", fmt17(self.time(k)))?;
            for v in self.values.column(k).iter() {
                write!(w, ",{}", fmt17(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<SnapshotData> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::InsufficientData("empty CSV".into()))??;
        let mut cells = header.split(',');
        if cells.next().map(str::trim) != Some("t") {
            return invalid("CSV header must start with 't'");
        }
        let node_x = cells.map(parse_cell).collect::<Result<Vec<f64>>>()?;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line.split(',').map(parse_cell).collect::<Result<Vec<f64>>>()?;
            if row.len() != node_x.len() + 1 {
                return invalid(format!("row has {} cells, expected {}", row.len(), node_x.len() + 1));
            }
            times.push(row[0]);
            data.extend_from_slice(&row[1..]);
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData(format!("{} snapshots", times.len())));
        }
        let dt = times[1] - times[0];
        let values = DMatrix::from_column_slice(node_x.len(), times.len(), &data);
        SnapshotData::new(values, node_x, dt)
    }
}

fn parse_cell(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("bad numeric cell {s:?}")))
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_shape(l: f64, x: f64) -> f64 {
        let z = l * x;
        let s = (l.cosh() + l.cos()) / (l.sinh() + l.sin());
        z.cosh() - z.cos() - s * (z.sinh() - z.sin())
    }

    fn integrate_sq(l: f64) -> f64 {
        let n = 20_000;
        let h = 1.0 / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * mode_shape(l, i as f64 * h).powi(2)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn shape_matches_direct_formula_for_low_modes() {
        for &(l, ..) in &TABLE_1[..4] {
            for i in 0..=20 {
                let x = i as f64 / 20.0;
                assert!((mode_shape(l, x) - naive_shape(l, x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_is_clamped_and_tip_is_two() {
        for &(l, ..) in &TABLE_1 {
            assert!(mode_shape(l, 0.0).abs() < 1e-12);
            let h = 1e-6;
            let slope = (mode_shape(l, h) - mode_shape(l, 0.0)) / h;
            assert!(slope.abs() < 1e-3 * l * l, "slope {slope} for λ={l}");
            // tabulated constants carry four decimals; the tip is sensitive to that rounding
            assert!((mode_shape(l, 1.0).abs() - 2.0).abs() < 2e-2, "tip {}", mode_shape(l, 1.0));
        }
    }

    #[test]
    fn shapes_have_unit_mean_square() {
        for &(l, ..) in &TABLE_1 {
            assert!((integrate_sq(l) - 1.0).abs() < 5e-3, "λ={l}: {}", integrate_sq(l));
        }
    }

    #[test]
    fn first_snapshot_is_amplitude_weighted_shapes() {
        let set = ModeSet::reference();
        let data = simulate(&set, 11, 1.0 / 4000.0, 0.01).unwrap();
        for (j, &x) in data.node_x().iter().enumerate() {
            let want: f64 = set.modes().iter().map(|m| m.amplitude * mode_shape(m.lambda, x)).sum();
            assert!((data.values()[(j, 0)] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn nyquist_bound_is_enforced() {
        let set = ModeSet::reference();
        let err = simulate(&set, 11, 1.0 / 1800.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Invalid(ref m) if m.contains("Nyquist")));
        assert!(simulate(&set, 11, 1.0 / 1900.0, 1.0).is_ok());
    }

    #[test]
    fn single_node_is_rejected() {
        assert!(simulate(&ModeSet::reference(), 1, 1e-4, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let data = simulate(&ModeSet::reference(), 6, 1.0 / 4000.0, 0.005).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = SnapshotData::read_csv(&buf[..]).unwrap();
        assert_eq!(back.values(), data.values());
        assert_eq!(back.node_x(), data.node_x());
    }

    #[test]
    fn decimate_keeps_first_snapshot() {
        let data = simulate(&ModeSet::reference(), 5, 1.0 / 4000.0, 0.01).unwrap();
        let d = data.decimate(8).unwrap();
        assert_eq!(d.n_t(), 5);
        assert_eq!(d.values().column(1), data.values().column(8));
        assert!((d.dt() - 1.0 / 500.0).abs() < 1e-18);
    }
}
