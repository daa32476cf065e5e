//! Point-mass correction of the unloaded modal model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::truth::{ModalComponent, ModeSet};

/// Point masses, as ratios to the beam's modal mass, at physical positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassLoad {
    positions: Vec<f64>,
    masses: Vec<f64>,
}

impl MassLoad {
    pub fn new(positions: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if positions.len() != masses.len() {
            return invalid(format!("{} positions but {} masses", positions.len(), masses.len()));
        }
        if let Some(m) = masses.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return invalid(format!("masses must be non-negative, got {m}"));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return invalid("mass positions must be finite");
        }
        Ok(MassLoad { positions, masses })
    }

    pub fn none() -> Self {
        MassLoad { positions: Vec::new(), masses: Vec::new() }
    }

    /// The same mass at each of the given mesh nodes.
    pub fn at_nodes(node_x: &[f64], nodes: &[usize], mass: f64) -> Result<Self> {
        if let Some(&bad) = nodes.iter().find(|&&n| n >= node_x.len()) {
            return Err(Error::IndexOutOfRange { index: bad, lo: 0, hi: node_x.len().saturating_sub(1) });
        }
        MassLoad::new(nodes.iter().map(|&n| node_x[n]).collect(), vec![mass; nodes.len()])
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// I + Σ_j m_j φ(x_j)φ(x_j)ᵀ for shape columns φ(x_j).
pub fn perturbation_matrix(shapes: &DMatrix<f64>, masses: &[f64]) -> Result<DMatrix<f64>> {
    if shapes.ncols() != masses.len() {
        return invalid(format!("{} shape columns but {} masses", shapes.ncols(), masses.len()));
    }
    if let Some(m) = masses.iter().find(|m| !(**m >= 0.0)) {
        return invalid(format!("negative mass {m}"));
    }
    let n = shapes.nrows();
    let mut mp = DMatrix::identity(n, n);
    for (j, &m) in masses.iter().enumerate() {
        let phi = shapes.column(j);
        mp += phi * phi.transpose() * m;
    }
    Ok(mp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedModes {
    set: ModeSet,
    load: MassLoad,
    n_keep: usize,
    mass_matrix: DMatrix<f64>,
    eta: DMatrix<f64>,
    omega: Vec<f64>,
    omega_bar: Vec<f64>,
    ratios: Vec<f64>,
}

/// Solve diag(ω²)η = ω̄² M_p η over every mode of the set.
///
/// Eigenvectors are M_p-orthonormal with a positive diagonal, so the zero
/// load returns η = I. Eigenvalues are paired with the unloaded modes in
/// ascending order; μ_i = (ω_i/ω̄_i)² ≥ 1.
pub fn corrected_modes(set: &ModeSet, load: &MassLoad, n_keep: usize) -> Result<CorrectedModes> {
    let n = set.len();
    if n_keep == 0 || n_keep > n {
        return invalid(format!("n_keep = {n_keep} must lie in 1..={n}"));
    }
    let l = set.beam_length();
    if let Some(p) = load.positions.iter().find(|&&p| p < 0.0 || p > l) {
        return invalid(format!("mass position {p} lies outside [0, {l}]"));
    }
    let shapes = DMatrix::from_fn(n, load.positions.len(), |i, j| set.shape(i, load.positions[j]));
    let mass_matrix = perturbation_matrix(&shapes, &load.masses)?;
    let omega: Vec<f64> = set.modes().iter().map(|m| m.omega_n()).collect();
    if mass_matrix == DMatrix::identity(n, n) {
        // unperturbed pencil is already diagonal
        let eta = DMatrix::identity(n, n);
        let omega_bar = omega.clone();
        let ratios = vec![1.0; n];
        return Ok(CorrectedModes { set: set.clone(), load: load.clone(), n_keep, mass_matrix, eta, omega, omega_bar, ratios });
    }
    let k = DMatrix::from_diagonal(&DVector::from_iterator(n, omega.iter().map(|w| w * w)));

    let chol = mass_matrix
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("perturbed mass matrix is not positive definite".into()))?;
    let lower = chol.l();
    let l_inv = lower
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let s = &l_inv * &k * l_inv.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let z = eig.eigenvectors.select_columns(&order);
    let mut eta = l_inv.transpose() * z;
    for j in 0..n {
        let pivot = if eta[(j, j)] != 0.0 {
            eta[(j, j)]
        } else {
            eta.column(j).iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a })
        };
        if pivot < 0.0 {
            eta.column_mut(j).neg_mut();
        }
    }
    let mut omega_bar = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(n);
    for (i, &j) in order.iter().enumerate() {
        let lam = eig.eigenvalues[j];
        if !(lam > 0.0) {
            return Err(Error::Numerical(format!("non-positive corrected eigenvalue {lam}")));
        }
        let ratio = (lam / (omega[i] * omega[i])).sqrt();
        ratios.push(ratio);
        omega_bar.push(omega[i] * ratio);
    }
    Ok(CorrectedModes { set: set.clone(), load: load.clone(), n_keep, mass_matrix, eta, omega, omega_bar, ratios })
}

impl CorrectedModes {
    pub fn n_modes(&self) -> usize {
        self.omega.len()
    }
    pub fn n_keep(&self) -> usize {
        self.n_keep
    }
    pub fn mode_set(&self) -> &ModeSet {
        &self.set
    }
    pub fn load(&self) -> &MassLoad {
        &self.load
    }
    pub fn eta(&self) -> &DMatrix<f64> {
        &self.eta
    }
    pub fn mass_matrix(&self) -> &DMatrix<f64> {
        &self.mass_matrix
    }
    /// ω̄_i/ω_i for every mode.
    pub fn freq_ratios(&self) -> &[f64] {
        &self.ratios
    }
    /// μ_i = (ω_i/ω̄_i)².
    pub fn mu(&self) -> Vec<f64> {
        self.ratios.iter().map(|r| 1.0 / (r * r)).collect()
    }
    pub fn omega_n(&self) -> &[f64] {
        &self.omega_bar
    }
    pub fn unloaded_omega_n(&self) -> &[f64] {
        &self.omega
    }
    pub fn zeta(&self) -> Vec<f64> {
        self.set.modes().iter().map(|m| m.zeta).collect()
    }
    /// Damped frequencies in Hz; damping ratios are carried over unchanged.
    pub fn damped_freq_hz(&self) -> Vec<f64> {
        self.set.modes().iter().zip(&self.ratios).map(|(m, r)| m.freq_hz * r).collect()
    }

    /// Mass-normalised loaded shape i at position x: Σ_k φ_k(x) η_ki.
    pub fn shape_at(&self, i: usize, x: f64) -> f64 {
        (0..self.n_modes()).map(|k| self.set.shape(k, x) * self.eta[(k, i)]).sum()
    }

    /// Loaded shapes of the first `n` modes on the mesh; with `unit_tip`
    /// each column is divided by its value at the last node.
    pub fn shapes_on(&self, node_x: &[f64], n: usize, unit_tip: bool) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(node_x.len(), n, |r, i| self.shape_at(i, node_x[r]));
        if unit_tip && !node_x.is_empty() {
            for i in 0..n {
                let tip = m[(node_x.len() - 1, i)];
                if tip != 0.0 {
                    m.column_mut(i).scale_mut(1.0 / tip);
                }
            }
        }
        m
    }

    /// Loaded modal coordinates of the unloaded initial deformation,
    /// ηᵀ M_p a.
    pub fn initial_amplitudes(&self) -> Vec<f64> {
        let a = DVector::from_iterator(self.n_modes(), self.set.modes().iter().map(|m| m.amplitude));
        let q = self.eta.transpose() * (&self.mass_matrix * a);
        q.iter().copied().collect()
    }

    /// Free-response components of the loaded beam released from the same
    /// physical deformation as the unloaded one.
    pub fn components(&self, node_x: &[f64]) -> Vec<ModalComponent> {
        let shapes = self.shapes_on(node_x, self.n_modes(), false);
        let amps = self.initial_amplitudes();
        let freqs = self.damped_freq_hz();
        (0..self.n_modes())
            .map(|i| ModalComponent {
                shape: shapes.column(i).iter().copied().collect(),
                amplitude: amps[i],
                freq_hz: freqs[i],
                zeta: self.set.modes()[i].zeta,
            })
            .collect()
    }

    pub fn to_record(&self, node_x: &[f64]) -> CorrectedModesRecord {
        let unloaded: Vec<f64> = self.set.modes().iter().map(|m| m.freq_hz).collect();
        let loaded = self.damped_freq_hz();
        let shapes = self.shapes_on(node_x, self.n_keep, true);
        CorrectedModesRecord {
            positions: self.load.positions.clone(),
            masses: self.load.masses.clone(),
            frequencies: (0..self.n_keep)
                .map(|i| FrequencyRow { mode: i + 1, unloaded_hz: unloaded[i], corrected_hz: loaded[i], ratio: self.ratios[i] })
                .collect(),
            eta: crate::dmd::rows_of(&self.eta),
            node_x: node_x.to_vec(),
            corrected_shapes: (0..self.n_keep).map(|i| shapes.column(i).iter().copied().collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub mode: usize,
    pub unloaded_hz: f64,
    pub corrected_hz: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedModesRecord {
    pub positions: Vec<f64>,
    pub masses: Vec<f64>,
    pub frequencies: Vec<FrequencyRow>,
    pub eta: Vec<Vec<f64>>,
    pub node_x: Vec<f64>,
    /// Unit-tip loaded shapes of the reported modes, one list per mode.
    pub corrected_shapes: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truth;

    #[test]
    fn perturbation_examples() {
        let phi = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert_eq!(perturbation_matrix(&phi, &[1.0]).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0])));
        assert_eq!(perturbation_matrix(&phi, &[0.0]).unwrap(), DMatrix::identity(3, 3));
        assert!(perturbation_matrix(&phi, &[-0.1]).is_err());
    }

    #[test]
    fn zero_load_is_exact_identity() {
        let set = ModeSet::reference();
        let load = MassLoad::new(vec![0.3, 1.0], vec![0.0, 0.0]).unwrap();
        let cm = corrected_modes(&set, &load, 3).unwrap();
        assert_eq!(cm.eta(), &DMatrix::identity(10, 10));
        assert!(cm.freq_ratios().iter().all(|&r| r == 1.0));
        let want: Vec<f64> = set.modes().iter().map(|m| m.freq_hz).collect();
        assert_eq!(cm.damped_freq_hz(), want);
        let node_x = truth::uniform_mesh(11, 1.0).unwrap();
        assert_eq!(cm.components(&node_x), truth::components(&set, &node_x));
    }

    #[test]
    fn root_mass_changes_nothing() {
        let cm = corrected_modes(&ModeSet::reference(), &MassLoad::new(vec![0.0], vec![0.7]).unwrap(), 3).unwrap();
        assert_eq!(cm.mass_matrix(), &DMatrix::identity(10, 10));
    }

    #[test]
    fn tip_mass_lowers_every_frequency() {
        let set = ModeSet::reference();
        let cm = corrected_modes(&set, &MassLoad::new(vec![1.0], vec![0.05]).unwrap(), 3).unwrap();
        assert!(cm.damped_freq_hz()[0] < 3.58);
        assert!(cm.freq_ratios().iter().all(|&r| r < 1.0 && r > 0.0));
        assert!(cm.mu().iter().all(|&m| m >= 1.0));
    }

    #[test]
    fn eta_is_mass_orthonormal_and_solves_the_pencil() {
        let set = ModeSet::reference();
        let load = MassLoad::new(vec![0.5, 0.98], vec![0.03, 0.05]).unwrap();
        let cm = corrected_modes(&set, &load, 3).unwrap();
        let eta = cm.eta();
        let gram = eta.transpose() * cm.mass_matrix() * eta;
        assert!((gram - DMatrix::<f64>::identity(10, 10)).amax() < 1e-10);
        let k = DMatrix::from_diagonal(&DVector::from_iterator(10, cm.unloaded_omega_n().iter().map(|w| w * w)));
        for i in 0..10 {
            let r = &k * eta.column(i) - cm.mass_matrix() * eta.column(i) * cm.omega_n()[i].powi(2);
            assert!(r.norm() < 1e-9 * cm.omega_n()[i].powi(2), "mode {i}: {}", r.norm());
        }
    }

    #[test]
    fn initial_deformation_is_preserved() {
        let set = ModeSet::reference();
        let node_x = truth::uniform_mesh(21, 1.0).unwrap();
        let cm = corrected_modes(&set, &MassLoad::at_nodes(&node_x, &[12, 20], 0.05).unwrap(), 3).unwrap();
        let loaded: Vec<f64> = (0..21).map(|j| cm.components(&node_x).iter().map(|c| c.amplitude * c.shape[j]).sum()).collect();
        for (j, &x) in node_x.iter().enumerate() {
            let want: f64 = (0..10).map(|i| set.modes()[i].amplitude * set.shape(i, x)).sum();
            assert!((loaded[j] - want).abs() < 1e-12, "node {j}");
        }
    }

    #[test]
    fn bad_loads_are_rejected() {
        assert!(MassLoad::new(vec![0.5], vec![]).is_err());
        assert!(MassLoad::new(vec![0.5], vec![-1.0]).is_err());
        let load = MassLoad::new(vec![1.5], vec![0.1]).unwrap();
        assert!(corrected_modes(&ModeSet::reference(), &load, 3).is_err());
        assert!(corrected_modes(&ModeSet::reference(), &MassLoad::none(), 11).is_err());
    }
}
