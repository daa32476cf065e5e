//! Exhaustive sensor/actuator subset search on the reciprocal-HSV cost.

use std::io::Write;

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hankel::{self, single_output_hankel};
use crate::linalg;

/// Largest number of subsets a search may enumerate.
pub const SUBSET_BUDGET: u128 = 1_000_000;

/// Singular values at or below this fraction of σ₁ count as zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementProblem {
    /// Output matrix with one row per mesh node.
    pub outputs: DMatrix<f64>,
    pub candidates: Vec<usize>,
    pub n_sensors: usize,
    /// Hankel depth s.
    pub depth: usize,
    /// Number n_r of singular values in the cost.
    pub n_retained: usize,
    /// Inclusive node-index bounds applied to the candidate list.
    pub bounds: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HankelRoute {
    /// Build every subset Hankel explicitly and take its SVD.
    Dense,
    /// Project every candidate Hankel onto the common row space once, then
    /// work with the small triangular factors.
    #[default]
    Compressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub outer: usize,
    pub partner: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub best_subset: Vec<usize>,
    pub best_cost: f64,
    pub landscape: Vec<LandscapePoint>,
    pub evaluations: usize,
    pub hankel_depth: usize,
    pub hankel_cols: usize,
}

/// Σ_{i≤n_r} 1/σ_i, or +∞ when one of those σ is numerically zero.
pub fn placement_cost(sigma: &[f64], n_retained: usize) -> f64 {
    if n_retained == 0 || n_retained > sigma.len() {
        return f64::INFINITY;
    }
    let floor = sigma[0] * SIGMA_FLOOR;
    let head = &sigma[..n_retained];
    if head.iter().any(|&s| !(s > floor) || s == 0.0) {
        return f64::INFINITY;
    }
    head.iter().map(|s| 1.0 / s).sum()
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

impl PlacementProblem {
    /// Candidates inside the bounds, sorted and de-duplicated, after
    /// checking the problem's invariants.
    pub fn admissible_candidates(&self) -> Result<Vec<usize>> {
        let (lo, hi) = self.bounds;
        if lo > hi {
            return invalid(format!("lower bound {lo} exceeds upper bound {hi}"));
        }
        let n_rows = self.outputs.nrows();
        if n_rows == 0 {
            return invalid("output matrix is empty");
        }
        if let Some(&bad) = self.candidates.iter().find(|&&c| c >= n_rows) {
            return Err(Error::IndexOutOfRange { index: bad, lo: 0, hi: n_rows - 1 });
        }
        let cands: Vec<usize> = self
            .candidates
            .iter()
            .copied()
            .filter(|&c| c >= lo && c <= hi)
            .sorted()
            .dedup()
            .collect();
        if self.n_sensors == 0 {
            return invalid("must place at least one sensor");
        }
        if self.n_sensors > cands.len() {
            return invalid(format!(
                "cannot place {} sensors on {} admissible candidates",
                self.n_sensors,
                cands.len()
            ));
        }
        if self.n_retained == 0 {
            return invalid("n_r must be at least 1");
        }
        let cols = hankel::output_hankel_cols(self.outputs.ncols(), self.depth)?;
        let max_rank = (self.n_sensors * self.depth).min(cols);
        if self.n_retained > max_rank {
            return invalid(format!(
                "n_r = {} exceeds the {} singular values of a {}x{} subset Hankel",
                self.n_retained,
                max_rank,
                self.n_sensors * self.depth,
                cols
            ));
        }
        let count = binomial(cands.len(), self.n_sensors);
        if count > SUBSET_BUDGET {
            return Err(Error::BudgetExceeded { count, budget: SUBSET_BUDGET });
        }
        Ok(cands)
    }
}

/// Prepared per-candidate data for repeated subset evaluation.
enum Evaluator<'a> {
    Dense { y: &'a DMatrix<f64>, s: usize },
    Compressed { blocks: Vec<DMatrix<f64>>, index: Vec<usize> },
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a PlacementProblem, cands: &[usize], route: HankelRoute) -> Result<Self> {
        let s = problem.depth;
        match route {
            HankelRoute::Dense => Ok(Evaluator::Dense { y: &problem.outputs, s }),
            HankelRoute::Compressed => {
                let r = hankel::output_hankel_cols(problem.outputs.ncols(), s)?;
                let per: Vec<DMatrix<f64>> = cands
                    .par_iter()
                    .map(|&c| single_output_hankel(&problem.outputs, c, s, r))
                    .collect();
                // common row space of all candidate blocks
                let mut stacked = DMatrix::zeros(per.len() * s, r);
                for (i, h) in per.iter().enumerate() {
                    stacked.view_mut((i * s, 0), (s, r)).copy_from(h);
                }
                let core = if stacked.nrows() > r { stacked.qr().r() } else { stacked };
                let dec = linalg::svd(&core, false, true)?;
                let smax = dec.singular_values.iter().copied().fold(0.0, f64::max);
                let keep = dec.singular_values.iter().filter(|&&v| v > smax * 1e-13).count().max(1);
                let basis = dec.v_t.expect("requested").rows(0, keep).transpose();
                let blocks: Vec<DMatrix<f64>> = per
                    .par_iter()
                    .map(|h| {
                        let m = h * &basis;
                        if m.nrows() > m.ncols() {
                            m.qr().r()
                        } else {
                            m
                        }
                    })
                    .collect();
                let mut index = vec![usize::MAX; problem.outputs.nrows()];
                for (k, &c) in cands.iter().enumerate() {
                    index[c] = k;
                }
                Ok(Evaluator::Compressed { blocks, index })
            }
        }
    }

    fn singular_values(&self, subset: &[usize]) -> Result<Vec<f64>> {
        match self {
            Evaluator::Dense { y, s } => linalg::singular_values(&hankel::build_output_hankel(y, subset, *s)?),
            Evaluator::Compressed { blocks, index } => {
                let parts: Vec<&DMatrix<f64>> = subset.iter().map(|&c| &blocks[index[c]]).collect();
                let rows: usize = parts.iter().map(|b| b.nrows()).sum();
                let cols = parts[0].ncols();
                let mut m = DMatrix::zeros(rows, cols);
                let mut at = 0;
                for b in parts {
                    m.view_mut((at, 0), b.shape()).copy_from(b);
                    at += b.nrows();
                }
                linalg::singular_values(&m)
            }
        }
    }
}

/// Hankel singular values of one subset under the given route.
pub fn subset_singular_values(problem: &PlacementProblem, subset: &[usize], route: HankelRoute) -> Result<Vec<f64>> {
    let cands = problem.admissible_candidates()?;
    if let Some(&bad) = subset.iter().find(|c| !cands.contains(c)) {
        return invalid(format!("node {bad} is not an admissible candidate"));
    }
    Evaluator::new(problem, &cands, route)?.singular_values(subset)
}

pub fn exhaustive_search(problem: &PlacementProblem) -> Result<PlacementResult> {
    exhaustive_search_with(problem, HankelRoute::default())
}

pub fn exhaustive_search_with(problem: &PlacementProblem, route: HankelRoute) -> Result<PlacementResult> {
    let cands = problem.admissible_candidates()?;
    let eval = Evaluator::new(problem, &cands, route)?;
    let subsets: Vec<Vec<usize>> = cands.iter().copied().combinations(problem.n_sensors).collect();
    let costs: Vec<f64> = subsets
        .par_iter()
        .map(|sub| eval.singular_values(sub).map(|sv| placement_cost(&sv, problem.n_retained)))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    let landscape = if problem.n_sensors == 2 { landscape_from_pairs(&cands, &subsets, &costs) } else { Vec::new() };
    Ok(PlacementResult {
        best_subset: subsets[best].clone(),
        best_cost: costs[best],
        landscape,
        evaluations: subsets.len(),
        hankel_depth: problem.depth,
        hankel_cols: hankel::output_hankel_cols(problem.outputs.ncols(), problem.depth)?,
    })
}

fn landscape_from_pairs(cands: &[usize], subsets: &[Vec<usize>], costs: &[f64]) -> Vec<LandscapePoint> {
    let mut out: Vec<LandscapePoint> = cands
        .iter()
        .map(|&c| LandscapePoint { outer: c, partner: usize::MAX, cost: f64::INFINITY })
        .collect();
    let pos = |c: usize| cands.binary_search(&c).expect("candidate");
    // subsets are in lexicographic order, so strict improvement keeps the
    // smallest partner on ties
    let mut pending: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * subsets.len());
    for (sub, &cost) in subsets.iter().zip(costs) {
        pending.push((sub[0], sub[1], cost));
        pending.push((sub[1], sub[0], cost));
    }
    pending.sort_by_key(|&(o, p, _)| (o, p));
    for (o, p, cost) in pending {
        let e = &mut out[pos(o)];
        if e.partner == usize::MAX || cost < e.cost {
            e.partner = p;
            e.cost = cost;
        }
    }
    out
}

pub fn cost_landscape(problem: &PlacementProblem) -> Result<Vec<LandscapePoint>> {
    if problem.n_sensors != 2 {
        return invalid(format!("cost landscape needs pairs, got n_a = {}", problem.n_sensors));
    }
    Ok(exhaustive_search(problem)?.landscape)
}

pub fn write_landscape_csv<W: Write>(points: &[LandscapePoint], mut w: W) -> Result<()> {
    writeln!(w, "outer_index,partner_index,cost")?;
    for p in points {
        writeln!(w, "{},{},{}", p.outer, p.partner, crate::truth::fmt17(p.cost))?;
    }
    Ok(())
}
