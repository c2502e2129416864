//! Optimal transport baselines on SPD point clouds: exact Wasserstein through
//! an assignment / transport solver and entropic Sinkhorn in the log domain.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_affine_invariant_from, inv_sqrt};
use crate::sliced::{DiscrepancyReport, EmpiricalSpdMeasure, Estimator};

/// Default largest `n·m` accepted by [`exact_wasserstein`].
pub const EXACT_SIZE_CAP: usize = 512 * 512;

/// Ground metric used for the pairwise costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundMetric {
    LogEuclidean,
    AffineInvariant,
}

/// Dense `n×m` matrix of `d(X_i, Y_j)^p`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    metric: GroundMetric,
    power: f64,
}

impl CostMatrix {
    /// Wraps raw costs; entries must be finite and nonnegative.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>, metric: GroundMetric, power: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMeasure);
        }
        if entries.len() != rows * cols {
            return Err(Error::SizeMismatch(entries.len(), rows * cols));
        }
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(c) = entries.iter().find(|&&c| c < 0.0) {
            return Err(Error::InvalidParameter(format!("negative cost {c}")));
        }
        Ok(Self {
            rows,
            cols,
            entries,
            metric,
            power,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn metric(&self) -> GroundMetric {
        self.metric
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn median(&self) -> f64 {
        let mut v = self.entries.clone();
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
        *m
    }
}

/// A coupling between uniform marginals and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: DMatrix<f64>,
    pub cost: f64,
}

impl TransportPlan {
    fn from_plan(plan: DMatrix<f64>, cost: &CostMatrix) -> Self {
        let mut total = 0.0;
        for i in 0..cost.rows {
            for (j, c) in cost.row(i).iter().enumerate() {
                total += plan[(i, j)] * c;
            }
        }
        Self { plan, cost: total }
    }

    /// Largest absolute deviation of row and column sums from `1/n`, `1/m`.
    pub fn marginal_violation(&self) -> f64 {
        let (n, m) = self.plan.shape();
        let rv = self
            .plan
            .row_iter()
            .map(|r| (r.sum() - 1.0 / n as f64).abs())
            .fold(0.0, f64::max);
        let cv = self
            .plan
            .column_iter()
            .map(|c| (c.sum() - 1.0 / m as f64).abs())
            .fold(0.0, f64::max);
        rv.max(cv)
    }
}

/// Pairwise ground costs `d(X_i, Y_j)^p`. Log-Euclidean costs reuse the cached
/// matrix logarithms of both measures.
pub fn build_cost_matrix(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    metric: GroundMetric,
    p: f64,
) -> Result<CostMatrix> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("order p must be >= 1, got {p}")));
    }
    let (n, m) = (mu.len(), nu.len());
    let half_p = p / 2.0;
    let raise = move |sq: f64| if half_p == 1.0 { sq } else { sq.powf(half_p) };
    let entries: Vec<f64> = match metric {
        GroundMetric::LogEuclidean => return le_cost_from_rows(mu.log_rows(), nu.log_rows(), p),
        GroundMetric::AffineInvariant => {
            let rows: Vec<Vec<f64>> = mu
                .points()
                .par_iter()
                .map(|x| {
                    let w = inv_sqrt(x);
                    nu.points()
                        .iter()
                        .map(|y| dist_affine_invariant_from(&w, y).map(|d| raise(d * d)))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?;
            rows.into_iter().flatten().collect()
        }
    };
    CostMatrix::from_entries(n, m, entries, metric, p)
}

/// Log-Euclidean costs between row-wise vectorized logs (`n×D` and `m×D`).
pub(crate) fn le_cost_from_rows(xs: &DMatrix<f64>, ys: &DMatrix<f64>, p: f64) -> Result<CostMatrix> {
    let (n, m) = (xs.nrows(), ys.nrows());
    let half_p = p / 2.0;
    let xt = xs.transpose();
    let yt = ys.transpose();
    let big_d = xt.nrows();
    let (xs, ys) = (xt.as_slice(), yt.as_slice());
    let entries: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = &xs[i * big_d..(i + 1) * big_d];
            (0..m).map(move |j| {
                let yj = &ys[j * big_d..(j + 1) * big_d];
                let sq: f64 = xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                if half_p == 1.0 {
                    sq
                } else {
                    sq.powf(half_p)
                }
            })
        })
        .collect();
    CostMatrix::from_entries(n, m, entries, GroundMetric::LogEuclidean, p)
}

/// Exact optimal transport between the uniform marginals, with the default cap.
pub fn exact_wasserstein(cost: &CostMatrix) -> Result<TransportPlan> {
    exact_wasserstein_capped(cost, EXACT_SIZE_CAP)
}

/// Exact optimal transport refusing instances with more than `cap` cost entries.
///
/// Square instances are solved as assignment problems (the plan is a scaled
/// permutation); rectangular ones as integral transportation problems with
/// supplies `m` and demands `n`.
pub fn exact_wasserstein_capped(cost: &CostMatrix, cap: usize) -> Result<TransportPlan> {
    let (n, m) = (cost.rows, cost.cols);
    if n.saturating_mul(m) > cap {
        return Err(Error::InstanceTooLarge { rows: n, cols: m, cap });
    }
    let mut plan = DMatrix::zeros(n, m);
    if n == m {
        let assignment = lapjv(n, &cost.entries);
        let w = 1.0 / n as f64;
        for (i, &j) in assignment.iter().enumerate() {
            plan[(i, j)] = w;
        }
    } else {
        let flow = transport_ssp(n, m, &cost.entries);
        let scale = 1.0 / (n as f64 * m as f64);
        for i in 0..n {
            for j in 0..m {
                plan[(i, j)] = flow[i * m + j] as f64 * scale;
            }
        }
    }
    Ok(TransportPlan::from_plan(plan, cost))
}

/// Jonker–Volgenant shortest augmenting path assignment on a dense square
/// cost matrix. Returns the column assigned to each row.
fn lapjv(n: usize, c: &[f64]) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    if n == 1 {
        return vec![0];
    }
    let cost = |i: usize, j: usize| c[i * n + j];
    let mut rowsol = vec![NONE; n];
    let mut colsol = vec![NONE; n];
    let mut v = vec![0.0; n];
    let mut matches = vec![0usize; n];

    // column reduction
    for j in (0..n).rev() {
        let mut imin = 0;
        let mut min = cost(0, j);
        for i in 1..n {
            if cost(i, j) < min {
                min = cost(i, j);
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            rowsol[imin] = j;
            colsol[j] = imin;
        }
    }

    // reduction transfer
    let mut free = Vec::with_capacity(n);
    for i in 0..n {
        if matches[i] == 0 {
            free.push(i);
        } else if matches[i] == 1 {
            let j1 = rowsol[i];
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 {
                    min = min.min(cost(i, j) - v[j]);
                }
            }
            if min.is_finite() {
                v[j1] -= min;
            }
        }
    }

    // augmenting row reduction, two passes with a work guard
    for _ in 0..2 {
        let pending = std::mem::take(&mut free);
        let mut queue: std::collections::VecDeque<usize> = pending.into();
        let mut budget = 4 * n + 16;
        while let Some(i) = queue.pop_front() {
            if budget == 0 {
                free.push(i);
                continue;
            }
            budget -= 1;
            let mut umin = cost(i, 0) - v[0];
            let mut j1 = 0;
            let mut j2 = NONE;
            let mut usubmin = f64::INFINITY;
            for j in 1..n {
                let h = cost(i, j) - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        umin = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = colsol[j1];
            let strict = umin < usubmin;
            if strict {
                v[j1] -= usubmin - umin;
            } else if i0 != NONE && j2 != NONE {
                j1 = j2;
                i0 = colsol[j2];
            }
            if i0 != NONE {
                rowsol[i0] = NONE;
            }
            rowsol[i] = j1;
            colsol[j1] = i;
            if i0 != NONE {
                if strict {
                    queue.push_front(i0);
                } else {
                    free.push(i0);
                }
            }
        }
    }

    // augmentation
    let mut d = vec![0.0; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for &freerow in &free {
        if rowsol[freerow] != NONE {
            continue;
        }
        for j in 0..n {
            d[j] = cost(freerow, j) - v[j];
            pred[j] = freerow;
            collist[j] = j;
        }
        let (mut low, mut up) = (0usize, 0usize);
        let mut last = 0usize;
        let mut min = 0.0;
        let endofpath;
        'search: loop {
            if up == low {
                last = low;
                min = d[collist[up]];
                up += 1;
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                for &j in &collist[low..up] {
                    if colsol[j] == NONE {
                        endofpath = j;
                        break 'search;
                    }
                }
            }
            let j1 = collist[low];
            low += 1;
            let i = colsol[j1];
            let h = cost(i, j1) - v[j1] - min;
            let mut k = up;
            while k < n {
                let j = collist[k];
                let v2 = cost(i, j) - v[j] - h;
                if v2 < d[j] {
                    pred[j] = i;
                    if v2 <= min {
                        if colsol[j] == NONE {
                            endofpath = j;
                            d[j] = v2;
                            // columns scanned so far get their dual update below
                            break 'search;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                    d[j] = v2;
                }
                k += 1;
            }
        }
        for &j1 in &collist[..last] {
            v[j1] += d[j1] - min;
        }
        let mut j = endofpath;
        loop {
            let i = pred[j];
            colsol[j] = i;
            let next = rowsol[i];
            rowsol[i] = j;
            if i == freerow {
                break;
            }
            j = next;
        }
    }
    rowsol
}

/// Successive shortest paths for the transportation problem with row supplies
/// `m` and column demands `n` (total mass `n·m`), dense Dijkstra with
/// potentials. Returns integral flows, row-major.
fn transport_ssp(n: usize, m: usize, c: &[f64]) -> Vec<u64> {
    let mut flow = vec![0u64; n * m];
    let mut supply = vec![m as u64; n];
    let mut demand = vec![n as u64; m];
    let mut pi_row = vec![0.0; n];
    let mut pi_col: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| c[i * m + j]).fold(f64::INFINITY, f64::min))
        .collect();
    let total_nodes = n + m;
    let mut dist = vec![f64::INFINITY; total_nodes];
    let mut done = vec![false; total_nodes];
    let mut prev = vec![usize::MAX; total_nodes];
    let mut remaining = (n as u64) * (m as u64);

    while remaining > 0 {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        done.iter_mut().for_each(|d| *d = false);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        let pmax = (0..n).filter(|&i| supply[i] > 0).map(|i| pi_row[i]).fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            if supply[i] > 0 {
                dist[i] = pmax - pi_row[i];
            }
        }
        let target;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (k, (&dk, &fin)) in dist.iter().zip(&done).enumerate() {
                if !fin && dk < best {
                    best = dk;
                    u = k;
                }
            }
            debug_assert!(u != usize::MAX, "residual graph disconnected");
            done[u] = true;
            if u >= n && demand[u - n] > 0 {
                target = u;
                break;
            }
            if u < n {
                let i = u;
                for j in 0..m {
                    let node = n + j;
                    if done[node] {
                        continue;
                    }
                    let rc = (c[i * m + j] + pi_row[i] - pi_col[j]).max(0.0);
                    if best + rc < dist[node] {
                        dist[node] = best + rc;
                        prev[node] = i;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if flow[i * m + j] == 0 || done[i] {
                        continue;
                    }
                    let rc = (pi_col[j] - pi_row[i] - c[i * m + j]).max(0.0);
                    if best + rc < dist[i] {
                        dist[i] = best + rc;
                        prev[i] = u;
                    }
                }
            }
        }
        let dt = dist[target];
        for i in 0..n {
            pi_row[i] += dist[i].min(dt);
        }
        for j in 0..m {
            pi_col[j] += dist[n + j].min(dt);
        }

        // bottleneck along the path target <- ... <- source row
        let mut amount = demand[target - n];
        let mut node = target;
        loop {
            let p = prev[node];
            if node >= n {
                // forward edge p(row) -> node(col)
                if prev[p] == usize::MAX {
                    amount = amount.min(supply[p]);
                    break;
                }
                node = p;
            } else {
                // reverse edge p(col) -> node(row)
                amount = amount.min(flow[node * m + (p - n)]);
                node = p;
            }
        }
        let mut node = target;
        loop {
            let p = prev[node];
            if node >= n {
                flow[p * m + (node - n)] += amount;
                if prev[p] == usize::MAX {
                    supply[p] -= amount;
                    break;
                }
            } else {
                flow[node * m + (p - n)] -= amount;
            }
            node = p;
        }
        demand[target - n] -= amount;
        remaining -= amount;
    }
    flow
}

/// Result of a Sinkhorn run.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOutcome {
    pub plan: TransportPlan,
    pub converged: bool,
    pub iterations: usize,
    /// L1 row-marginal violation at the last check.
    pub violation: f64,
}

/// Sinkhorn settings; defaults are `ε = 1`, `10⁵` iterations and threshold `1e-10`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub threshold: f64,
    pub check_every: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            max_iter: 100_000,
            threshold: 1e-10,
            check_every: 10,
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT between uniform marginals, iterated on dual potentials with
/// log-sum-exp updates. A run that hits `max_iter` is returned with
/// `converged = false`; callers decide whether that is an error.
pub fn sinkhorn(cost: &CostMatrix, config: &SinkhornConfig) -> Result<SinkhornOutcome> {
    let eps = config.epsilon;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be positive".into()));
    }
    let (n, m) = (cost.rows, cost.cols);
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let scaled: Vec<f64> = cost.entries.iter().map(|c| c / eps).collect();
    let mut scaled_t = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            scaled_t[j * n + i] = scaled[i * m + j];
        }
    }
    // potentials divided by ε
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let check_every = config.check_every.max(1);
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        for (i, fi) in f.iter_mut().enumerate() {
            let row = &scaled[i * m..(i + 1) * m];
            *fi = log_a - log_sum_exp(g.iter().zip(row).map(|(gj, c)| gj - c));
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let col = &scaled_t[j * n..(j + 1) * n];
            *gj = log_b - log_sum_exp(f.iter().zip(col).map(|(fi, c)| fi - c));
        }
        iterations += 1;
        if iterations % check_every == 0 || iterations == config.max_iter {
            violation = (0..n)
                .map(|i| {
                    let row = &scaled[i * m..(i + 1) * m];
                    let s: f64 = g.iter().zip(row).map(|(gj, c)| (f[i] + gj - c).exp()).sum();
                    (s - 1.0 / n as f64).abs()
                })
                .sum();
            if !violation.is_finite() {
                return Err(Error::NonFinite);
            }
            if violation < config.threshold {
                converged = true;
                break;
            }
        }
    }
    let mut plan = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            plan[(i, j)] = (f[i] + g[j] - scaled[i * m + j]).exp();
        }
    }
    if !converged {
        log::warn!("sinkhorn stopped after {iterations} iterations with violation {violation:e}");
    }
    Ok(SinkhornOutcome {
        plan: TransportPlan::from_plan(plan, cost),
        converged,
        iterations,
        violation,
    })
}

/// Exact Wasserstein `W_p^p` between two measures as a report.
pub fn exact_discrepancy(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    metric: GroundMetric,
    p: f64,
    cap: usize,
) -> Result<DiscrepancyReport> {
    let start = Instant::now();
    let cost = build_cost_matrix(mu, nu, metric, p)?;
    let plan = exact_wasserstein_capped(&cost, cap)?;
    Ok(DiscrepancyReport {
        value: plan.cost.max(0.0),
        estimator: match metric {
            GroundMetric::LogEuclidean => Estimator::LewExact,
            GroundMetric::AffineInvariant => Estimator::AiwExact,
        },
        order_p: p,
        num_projections: None,
        sampler: None,
        seed: None,
        resampled_directions: 0,
        converged: None,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Entropic Log-Euclidean OT cost `⟨γ_ε, C⟩` as a report.
pub fn sinkhorn_discrepancy(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    p: f64,
    config: &SinkhornConfig,
) -> Result<DiscrepancyReport> {
    let start = Instant::now();
    let cost = build_cost_matrix(mu, nu, GroundMetric::LogEuclidean, p)?;
    let out = sinkhorn(&cost, config)?;
    Ok(DiscrepancyReport {
        value: out.plan.cost.max(0.0),
        estimator: Estimator::LeSinkhorn,
        order_p: p,
        num_projections: None,
        sampler: None,
        seed: None,
        resampled_directions: 0,
        converged: Some(out.converged),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}
