//! Time-delay dynamic mode decomposition.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::truth::SnapshotData;

/// Stacked snapshot pair X, X' built from `stacks` consecutive time shifts.
#[derive(Debug, Clone)]
pub struct ShiftedSnapshots {
    x: DMatrix<f64>,
    x_prime: DMatrix<f64>,
    stacks: usize,
    n_nodes: usize,
    dt: f64,
}

impl ShiftedSnapshots {
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn x_prime(&self) -> &DMatrix<f64> {
        &self.x_prime
    }
    pub fn stacks(&self) -> usize {
        self.stacks
    }
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
}

pub fn build_shifted_snapshots(data: &SnapshotData, stacks: usize) -> Result<ShiftedSnapshots> {
    if stacks == 0 {
        return invalid("number of stacks must be at least 1");
    }
    let (n, n_t) = (data.n_nodes(), data.n_t());
    if n_t < stacks + 1 {
        return Err(Error::InsufficientData(format!(
            "{n_t} snapshots cannot form {stacks}-stacked pairs; need at least {}",
            stacks + 1
        )));
    }
    let m = n_t - stacks;
    let y = data.values();
    let mut x = DMatrix::zeros(n * stacks, m);
    let mut x_prime = DMatrix::zeros(n * stacks, m);
    for b in 0..stacks {
        x.view_mut((b * n, 0), (n, m)).copy_from(&y.columns(b, m));
        x_prime.view_mut((b * n, 0), (n, m)).copy_from(&y.columns(b + 1, m));
    }
    Ok(ShiftedSnapshots { x, x_prime, stacks, n_nodes: n, dt: data.dt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmdModel {
    dt: f64,
    rank: usize,
    stacks: usize,
    n_nodes: usize,
    singular_values: Vec<f64>,
    u_r: DMatrix<f64>,
    v_r: DMatrix<f64>,
    a_tilde: DMatrix<f64>,
    eigenvalues: Vec<Complex64>,
    modes: DMatrix<Complex64>,
    amplitudes: Vec<Complex64>,
}

/// Continuous-time view of one discrete eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousEigen {
    pub freq_hz: f64,
    pub zeta: f64,
    /// |b|·‖φ‖, the mode's share of the first snapshot.
    pub weight: f64,
}

pub fn discrete_to_continuous(lambda: Complex64, dt: f64) -> Result<(f64, f64)> {
    if lambda.norm() == 0.0 || !lambda.norm().is_finite() {
        return Err(Error::Numerical(format!("eigenvalue {lambda} has no logarithm")));
    }
    let s = lambda.ln() / dt;
    let freq = s.im.abs() / (2.0 * std::f64::consts::PI);
    let zeta = if s.norm() == 0.0 { 0.0 } else { -s.re / s.norm() };
    Ok((freq, zeta))
}

pub fn fit_dmd(snap: &ShiftedSnapshots, rank: usize) -> Result<DmdModel> {
    let (rows, cols) = snap.x.shape();
    if rank == 0 || rank > rows.min(cols) {
        return invalid(format!("rank {rank} must lie in 1..={}", rows.min(cols)));
    }
    let svd = linalg::svd(&snap.x, true, true)?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.first().copied().unwrap_or(0.0);
    let tol = smax * rows.max(cols) as f64 * f64::EPSILON;
    let numerical = sv.iter().filter(|&&s| s > tol).count();
    if rank > numerical {
        return Err(Error::RankDeficient { requested: rank, numerical });
    }
    let u_r = svd.u.as_ref().expect("requested").columns(0, rank).into_owned();
    let v_r = svd.v_t.as_ref().expect("requested").rows(0, rank).transpose();
    let inv_sigma = DMatrix::from_diagonal(&DVector::from_iterator(rank, sv[..rank].iter().map(|s| 1.0 / s)));
    let xp_v_s = &snap.x_prime * &v_r * inv_sigma;
    let a_tilde = u_r.transpose() * &xp_v_s;
    let (lam, w) = linalg::eigen_decomposition(&a_tilde)?;
    let modes = linalg::to_complex(&xp_v_s) * w;
    let x0 = snap.x.column(0).map(|v| Complex64::new(v, 0.0));
    let b = linalg::lstsq_complex(&modes, &x0)?;

    let order = mode_order(&lam, &modes, &b);
    let eigenvalues = order.iter().map(|&i| lam[i]).collect();
    let modes = modes.select_columns(&order);
    let amplitudes = order.iter().map(|&i| b[i]).collect();
    Ok(DmdModel {
        dt: snap.dt,
        rank,
        stacks: snap.stacks,
        n_nodes: snap.n_nodes,
        singular_values: sv,
        u_r,
        v_r,
        a_tilde,
        eigenvalues,
        modes,
        amplitudes,
    })
}

// dominant first; conjugate partners adjacent with the positive-frequency member first
fn mode_order(lam: &[Complex64], modes: &DMatrix<Complex64>, b: &DVector<Complex64>) -> Vec<usize> {
    let r = lam.len();
    let weight: Vec<f64> = (0..r).map(|i| b[i].norm() * modes.column(i).norm()).collect();
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut used = vec![false; r];
    for i in 0..r {
        if used[i] {
            continue;
        }
        used[i] = true;
        let mut g = vec![i];
        if lam[i].im != 0.0 {
            if let Some(p) = (0..r).find(|&p| !used[p] && lam[p] == lam[i].conj()) {
                used[p] = true;
                g.push(p);
            }
        }
        g.sort_by(|&a, &c| lam[c].im.partial_cmp(&lam[a].im).unwrap_or(std::cmp::Ordering::Equal));
        let w = g.iter().map(|&k| weight[k]).fold(0.0, f64::max);
        groups.push((w, g));
    }
    groups.sort_by(|a, c| c.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    groups.into_iter().flat_map(|(_, g)| g).collect()
}

/// Σ_{i≤k} σ_i / Σ σ_i.
pub fn energy_fraction(singular_values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > singular_values.len() {
        return invalid(format!("k = {k} must lie in 1..={}", singular_values.len()));
    }
    let total: f64 = singular_values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all singular values are zero".into()));
    }
    Ok(singular_values[..k].iter().sum::<f64>() / total)
}

impl DmdModel {
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn stacks(&self) -> usize {
        self.stacks
    }
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    /// Full singular spectrum of the stacked snapshot matrix.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }
    pub fn u_r(&self) -> &DMatrix<f64> {
        &self.u_r
    }
    pub fn v_r(&self) -> &DMatrix<f64> {
        &self.v_r
    }
    pub fn a_tilde(&self) -> &DMatrix<f64> {
        &self.a_tilde
    }
    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }
    pub fn modes(&self) -> &DMatrix<Complex64> {
        &self.modes
    }
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// One entry per real eigenvalue or conjugate pair, dominant first.
    pub fn continuous_modes(&self) -> Result<Vec<ContinuousEigen>> {
        let mut out = Vec::new();
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            if lam.im < 0.0 && self.eigenvalues.contains(&lam.conj()) {
                continue;
            }
            let (freq_hz, zeta) = discrete_to_continuous(*lam, self.dt)?;
            let weight = self.amplitudes[i].norm() * self.modes.column(i).norm();
            out.push(ContinuousEigen { freq_hz, zeta, weight });
        }
        Ok(out)
    }

    /// Real part of Σ φ_j λ_j^k b_j for each step offset `k` (0 is the first
    /// stacked snapshot) at the given stacked-row indices.
    pub fn reconstruct(&self, steps: &[usize], rows: &[usize]) -> Result<DMatrix<f64>> {
        let n_rows = self.modes.nrows();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::IndexOutOfRange { index: bad, lo: 0, hi: n_rows - 1 });
        }
        let mut out = DMatrix::zeros(rows.len(), steps.len());
        for (j, (&lam, &b)) in self.eigenvalues.iter().zip(&self.amplitudes).enumerate() {
            let col = self.modes.column(j);
            for (c, &k) in steps.iter().enumerate() {
                let g = lam.powu(k as u32) * b;
                for (r, &row) in rows.iter().enumerate() {
                    out[(r, c)] += (col[row] * g).re;
                }
            }
        }
        Ok(out)
    }

    /// Reconstruction of the first stacked block (the physical nodes) for
    /// steps `0..n_steps`.
    pub fn reconstruct_nodes(&self, n_steps: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.n_nodes, n_steps);
        for (j, (&lam, &b)) in self.eigenvalues.iter().zip(&self.amplitudes).enumerate() {
            let col = self.modes.column(j).rows(0, self.n_nodes).into_owned();
            let mut g = b;
            for k in 0..n_steps {
                for r in 0..self.n_nodes {
                    out[(r, k)] += (col[r] * g).re;
                }
                g *= lam;
            }
        }
        Ok(out)
    }

    pub fn to_record(&self) -> DmdRecord {
        DmdRecord {
            dt: self.dt,
            r: self.rank,
            q: self.stacks,
            n_nodes: self.n_nodes,
            singular_values: self.singular_values.clone(),
            u_r: rows_of(&self.u_r),
            v_r: rows_of(&self.v_r),
            a_tilde: rows_of(&self.a_tilde),
            eigenvalues: self.eigenvalues.iter().map(pair).collect(),
            modes: (0..self.modes.ncols())
                .map(|j| self.modes.column(j).iter().map(pair).collect())
                .collect(),
            amplitudes: self.amplitudes.iter().map(pair).collect(),
        }
    }

    pub fn from_record(rec: &DmdRecord) -> Result<DmdModel> {
        let r = rec.r;
        if rec.eigenvalues.len() != r || rec.amplitudes.len() != r || rec.modes.len() != r {
            return invalid("DMD record arrays disagree with its rank");
        }
        let n_rows = rec.n_nodes * rec.q;
        if rec.modes.iter().any(|c| c.len() != n_rows) {
            return invalid("DMD record mode length disagrees with n_nodes·q");
        }
        let unpair = |p: &[f64; 2]| Complex64::new(p[0], p[1]);
        Ok(DmdModel {
            dt: rec.dt,
            rank: r,
            stacks: rec.q,
            n_nodes: rec.n_nodes,
            singular_values: rec.singular_values.clone(),
            u_r: matrix_of(&rec.u_r)?,
            v_r: matrix_of(&rec.v_r)?,
            a_tilde: matrix_of(&rec.a_tilde)?,
            eigenvalues: rec.eigenvalues.iter().map(unpair).collect(),
            modes: DMatrix::from_fn(n_rows, r, |i, j| unpair(&rec.modes[j][i])),
            amplitudes: rec.amplitudes.iter().map(unpair).collect(),
        })
    }
}

/// Serialized form; complex numbers are `[re, im]` pairs, matrices are row lists
/// and `modes` is a list of columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdRecord {
    pub dt: f64,
    pub r: usize,
    pub q: usize,
    pub n_nodes: usize,
    pub singular_values: Vec<f64>,
    pub u_r: Vec<Vec<f64>>,
    pub v_r: Vec<Vec<f64>>,
    pub a_tilde: Vec<Vec<f64>>,
    pub eigenvalues: Vec<[f64; 2]>,
    pub modes: Vec<Vec<[f64; 2]>>,
    pub amplitudes: Vec<[f64; 2]>,
}

fn pair(z: &Complex64) -> [f64; 2] {
    [z.re, z.im]
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn matrix_of(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return invalid("ragged matrix rows");
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}
