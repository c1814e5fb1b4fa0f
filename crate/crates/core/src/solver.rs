//! Penalized negative quasi-likelihood minimization over grouped coefficients.
//!
//! Unpenalized fits use Fisher-scoring IRLS with step halving. Group-penalized
//! fits replace each `||gamma_g||` by its local quadratic approximation
//! around the current iterate, so every outer step is one weighted ridge-type
//! solve. Groups that collapse below a drop threshold are frozen at zero; an
//! active-set scan on the KKT conditions brings back any group whose
//! gradient exceeds its penalty level, starting it from a proximal step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::sync::Arc;

use crate::error::{GacmError, Result};
use crate::family::Family;
use crate::linalg::{spd_solve, weighted_gram};

/// Tuning knobs of the IRLS and LQA loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub irls_tol: f64,
    pub irls_max_iter: usize,
    /// Floor on `||gamma_g||` in the LQA denominator.
    pub lqa_eps: f64,
    /// Groups with norm below `drop_eps * sqrt(group size)` are frozen at zero.
    pub drop_eps: f64,
    pub lqa_tol: f64,
    pub lqa_max_iter: usize,
    pub max_halvings: usize,
    pub kkt_tol: f64,
    pub max_active_rounds: usize,
    /// Block proximal sweeps used to finish active groups that LQA leaves short of stationarity.
    pub polish_max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            irls_tol: 1e-10,
            irls_max_iter: 100,
            lqa_eps: 1e-6,
            drop_eps: 1e-4,
            lqa_tol: 1e-7,
            lqa_max_iter: 200,
            max_halvings: 20,
            kkt_tol: 1e-4,
            max_active_rounds: 20,
            polish_max_sweeps: 2000,
        }
    }
}

/// Logit fits with any |eta| above this are reported as (quasi-)separated.
pub const SEPARATION_ETA: f64 = 50.0;
/// ...as are fits with every |eta| above this (one class, fully saturated).
pub const SATURATED_ETA: f64 = 25.0;

/// Relative slack tolerated when checking that the objective does not increase.
const DESCENT_SLACK: f64 = 1e-12;

/// A fitting problem: design, response, family, fixed offset and column groups.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub z: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub family: Family,
    pub offset: &'a [f64],
    pub groups: &'a [Range<usize>],
}

impl<'a> Problem<'a> {
    pub fn new(
        z: &'a DMatrix<f64>,
        y: &'a [f64],
        family: Family,
        offset: &'a [f64],
        groups: &'a [Range<usize>],
    ) -> Result<Self> {
        let n = z.nrows();
        if y.len() != n || offset.len() != n {
            return Err(GacmError::DimensionMismatch(format!(
                "design has {n} rows, response {} and offset {}",
                y.len(),
                offset.len()
            )));
        }
        let mut next = 0;
        for g in groups {
            if g.start != next || g.end < g.start {
                return Err(GacmError::DimensionMismatch("groups must partition the columns".into()));
            }
            next = g.end;
        }
        if next != z.ncols() {
            return Err(GacmError::DimensionMismatch(format!(
                "groups cover {next} columns, design has {}",
                z.ncols()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| !family.valid_response(v)) {
            return Err(GacmError::InvalidArgument(format!("response value {bad} invalid for {family}")));
        }
        if offset.iter().any(|v| !v.is_finite()) {
            return Err(GacmError::InvalidArgument("offset must be finite".into()));
        }
        Ok(Self {
            z,
            y,
            family,
            offset,
            groups,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn eta(&self, coef: &[f64]) -> Vec<f64> {
        let beta = DVector::from_column_slice(coef);
        let lin = self.z * beta;
        lin.iter().zip(self.offset).map(|(a, o)| a + o).collect()
    }

    /// `sum_i Q(g^{-1}(eta_i), y_i)`.
    pub fn loss(&self, eta: &[f64]) -> f64 {
        eta.iter()
            .zip(self.y)
            .map(|(&e, &y)| self.family.loss_at_eta(e, y))
            .sum()
    }

    /// Gradient of the loss in the coefficients, `Z^T q_1(eta)`.
    pub fn gradient(&self, eta: &[f64]) -> DVector<f64> {
        let q1 = DVector::from_iterator(
            eta.len(),
            eta.iter().zip(self.y).map(|(&e, &y)| self.family.q_derivs(e, y).0),
        );
        self.z.tr_mul(&q1)
    }
}

/// Coefficients aligned to a group partition, with cached group norms.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCoef {
    coef: Vec<f64>,
    groups: Vec<Range<usize>>,
    norms: Vec<f64>,
    offset: Arc<[f64]>,
}

impl GroupCoef {
    pub fn new(coef: Vec<f64>, groups: Vec<Range<usize>>, offset: Arc<[f64]>) -> Self {
        let norms = groups.iter().map(|g| norm(&coef[g.clone()])).collect();
        Self {
            coef,
            groups,
            norms,
            offset,
        }
    }

    pub fn zeros(groups: &[Range<usize>], offset: Arc<[f64]>) -> Self {
        let ncols = groups.last().map_or(0, |g| g.end);
        Self::new(vec![0.0; ncols], groups.to_vec(), offset)
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef
    }
    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }
    pub fn offset(&self) -> &[f64] {
        &self.offset
    }
    pub fn group(&self, g: usize) -> &[f64] {
        &self.coef[self.groups[g].clone()]
    }
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Indices of groups with positive norm.
    pub fn nonzero_groups(&self) -> Vec<usize> {
        (0..self.groups.len()).filter(|&g| self.norms[g] > 0.0).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Convergence diagnostics of a single fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    /// Per group: KKT residual divided by its allowed bound (pass when <= 1).
    pub kkt: Vec<f64>,
    pub jitter_applied: bool,
    pub separation: bool,
    pub grad_max_norm: f64,
}

fn separation_flag(family: Family, eta: &[f64]) -> bool {
    family == Family::BernoulliLogit
        && (eta.iter().any(|e| e.abs() > SEPARATION_ETA) || eta.iter().all(|e| e.abs() > SATURATED_ETA))
}

/// IRLS working quantities: Fisher weights and working response `lin - q1 / w`.
fn working(problem: &Problem, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut w = Vec::with_capacity(eta.len());
    let mut u = Vec::with_capacity(eta.len());
    for ((&e, &y), &o) in eta.iter().zip(problem.y).zip(problem.offset) {
        let (q1, wi) = problem.family.q_derivs(e, y);
        let wi = wi.max(f64::MIN_POSITIVE);
        w.push(wi);
        u.push(e - o - q1 / wi);
    }
    (w, u)
}

fn columns(z: &DMatrix<f64>, groups: &[Range<usize>], which: &[usize]) -> (DMatrix<f64>, Vec<Range<usize>>) {
    let total: usize = which.iter().map(|&g| groups[g].len()).sum();
    let mut out = DMatrix::zeros(z.nrows(), total);
    let mut local = Vec::with_capacity(which.len());
    let mut c = 0;
    for &g in which {
        let r = groups[g].clone();
        let start = c;
        for j in r {
            out.set_column(c, &z.column(j));
            c += 1;
        }
        local.push(start..c);
    }
    (out, local)
}

fn weighted_rhs(z: &DMatrix<f64>, w: &[f64], u: &[f64]) -> DVector<f64> {
    let wu = DVector::from_iterator(w.len(), w.iter().zip(u).map(|(a, b)| a * b));
    z.tr_mul(&wu)
}

/// Minimize the unpenalized loss by Fisher scoring with step halving.
pub fn fit_unpenalized(
    problem: &Problem,
    init: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<(GroupCoef, FitReport)> {
    let p = problem.z.ncols();
    let mut beta = match init {
        Some(b) if b.len() == p => DVector::from_column_slice(b),
        Some(_) => return Err(GacmError::DimensionMismatch("initial coefficients".into())),
        None => DVector::zeros(p),
    };
    let mut eta = problem.eta(beta.as_slice());
    let mut obj = problem.loss(&eta);
    let mut report = FitReport {
        objective: vec![obj],
        ..Default::default()
    };
    for _ in 0..cfg.irls_max_iter {
        report.inner_iterations += 1;
        let (w, u) = working(problem, &eta);
        let gram = weighted_gram(problem.z, &w);
        let rhs = weighted_rhs(problem.z, &w, &u);
        let (target, jit) = spd_solve(gram, &rhs)?;
        report.jitter_applied |= jit;
        let dir = target - &beta;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = &beta + &dir * step;
            let cand_eta = problem.eta(cand.as_slice());
            let cand_obj = problem.loss(&cand_eta);
            if !cand_obj.is_finite() {
                return Err(GacmError::Numerical("non-finite objective in IRLS".into()));
            }
            if cand_obj <= obj + DESCENT_SLACK * obj.abs() {
                accepted = Some((cand, cand_eta, cand_obj));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_eta, cand_obj)) = accepted else {
            report.converged = true;
            break;
        };
        let rel = (obj - cand_obj).abs() / obj.abs().max(1.0);
        beta = cand;
        eta = cand_eta;
        obj = cand_obj;
        report.objective.push(obj);
        if rel < cfg.irls_tol {
            report.converged = true;
            break;
        }
    }
    report.outer_iterations = report.inner_iterations;
    report.separation = separation_flag(problem.family, &eta);
    report.grad_max_norm = problem.gradient(&eta).amax();
    let coef = GroupCoef::new(beta.as_slice().to_vec(), problem.groups.to_vec(), problem.offset.into());
    Ok((coef, report))
}

/// Per-group KKT residuals of a group-lasso solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub residuals: Vec<GroupKkt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupKkt {
    pub group: usize,
    pub zero: bool,
    pub residual: f64,
    pub bound: f64,
}

impl GroupKkt {
    pub fn passed(&self) -> bool {
        self.residual <= self.bound
    }
}

impl KktReport {
    pub fn all_passed(&self) -> bool {
        self.residuals.iter().all(GroupKkt::passed)
    }

    pub fn violations(&self) -> Vec<usize> {
        self.residuals.iter().filter(|r| !r.passed()).map(|r| r.group).collect()
    }
}

fn check_weights(problem: &Problem, lambda: f64, weights: &[f64]) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(GacmError::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if weights.len() != problem.groups.len() {
        return Err(GacmError::DimensionMismatch(format!(
            "{} weights for {} groups",
            weights.len(),
            problem.groups.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(GacmError::InvalidArgument(format!("group weights must be in (0, inf], got {w}")));
    }
    Ok(())
}

/// Optimality certificate: stationarity for nonzero groups, subgradient bound for zero ones.
pub fn kkt_check(
    problem: &Problem,
    lambda: f64,
    weights: &[f64],
    sol: &GroupCoef,
    tol: f64,
) -> Result<KktReport> {
    check_weights(problem, lambda, weights)?;
    if sol.coef().len() != problem.z.ncols() {
        return Err(GacmError::DimensionMismatch("solution length vs design".into()));
    }
    let eta = problem.eta(sol.coef());
    let grad = problem.gradient(&eta);
    let n = problem.n() as f64;
    let mut residuals = Vec::new();
    for (g, r) in problem.groups.iter().enumerate() {
        if weights[g].is_infinite() {
            continue;
        }
        let pen = n * lambda * weights[g];
        let gg = grad.rows(r.start, r.len());
        let nb = sol.norms()[g];
        let (zero, residual, bound) = if nb > 0.0 {
            let coef = &sol.coef()[r.clone()];
            let res = gg
                .iter()
                .zip(coef)
                .map(|(a, b)| {
                    let v = a + pen * b / nb;
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            (false, res, tol * pen)
        } else {
            (true, gg.norm(), pen * (1.0 + tol))
        };
        residuals.push(GroupKkt {
            group: g,
            zero,
            residual,
            bound,
        });
    }
    Ok(KktReport { residuals })
}

/// Smallest `lambda` at which the all-zero coefficient vector is optimal.
pub fn lambda_max(problem: &Problem, weights: &[f64]) -> Result<f64> {
    check_weights(problem, 0.0, weights)?;
    if weights.iter().all(|w| w.is_infinite()) {
        return Err(GacmError::InvalidArgument("every group has infinite weight".into()));
    }
    let grad = problem.gradient(problem.offset);
    let n = problem.n() as f64;
    let mut best: f64 = 0.0;
    for (g, r) in problem.groups.iter().enumerate() {
        if weights[g].is_finite() {
            best = best.max(grad.rows(r.start, r.len()).norm() / (n * weights[g]));
        }
    }
    Ok(best)
}

struct PenalizedState<'p, 'a> {
    problem: &'p Problem<'a>,
    pens: Vec<f64>,
    beta: Vec<f64>,
    eta: Vec<f64>,
    obj: f64,
    active: Vec<usize>,
    report: FitReport,
}

impl PenalizedState<'_, '_> {
    fn penalty(&self, beta: &[f64]) -> f64 {
        self.problem
            .groups
            .iter()
            .enumerate()
            .filter(|(g, _)| self.pens[*g].is_finite() && self.pens[*g] > 0.0)
            .map(|(g, r)| self.pens[g] * norm(&beta[r.clone()]))
            .sum()
    }

    fn objective(&self, beta: &[f64], eta: &[f64]) -> f64 {
        self.problem.loss(eta) + self.penalty(beta)
    }

    fn accepts(&self, cand_obj: f64) -> bool {
        cand_obj <= self.obj + DESCENT_SLACK * self.obj.abs()
    }

    /// Start KKT violators from a damped proximal-gradient step.
    fn add_violators(&mut self, grad: &DVector<f64>, violators: &[usize], cfg: &SolverConfig) -> Result<bool> {
        let (w, _) = working(self.problem, &self.eta);
        let z = self.problem.z;
        let mut dir = vec![0.0; self.beta.len()];
        for &g in violators {
            let r = self.problem.groups[g].clone();
            let mut curv = 0.0;
            for j in r.clone() {
                curv += z.column(j).iter().zip(&w).map(|(a, b)| a * a * b).sum::<f64>();
            }
            if curv <= 0.0 {
                continue;
            }
            let gn = grad.rows(r.start, r.len()).norm();
            let shrink = (1.0 - self.pens[g] / gn) / curv;
            for j in r {
                dir[j] = -shrink * grad[j];
            }
        }
        let mut step = 1.0;
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<f64> = self.beta.iter().zip(&dir).map(|(b, d)| b + step * d).collect();
            let cand_eta = self.problem.eta(&cand);
            let cand_obj = self.objective(&cand, &cand_eta);
            if cand_obj.is_finite() && cand_obj < self.obj {
                self.beta = cand;
                self.eta = cand_eta;
                self.obj = cand_obj;
                self.report.objective.push(cand_obj);
                self.active.extend_from_slice(violators);
                self.active.sort_unstable();
                return Ok(true);
            }
            step *= 0.5;
        }
        Ok(false)
    }

    /// Zero active groups that fail stationarity when doing so does not raise the objective.
    fn prune(&mut self, cfg: &SolverConfig) -> bool {
        let grad = self.problem.gradient(&self.eta);
        let groups = self.problem.groups;
        let mut order: Vec<(f64, usize)> = self
            .active
            .iter()
            .map(|&g| (norm(&self.beta[groups[g].clone()]), g))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pruned = false;
        for (nb, g) in order {
            let r = groups[g].clone();
            let pen = self.pens[g];
            let res = r
                .clone()
                .map(|j| {
                    let v = grad[j] + pen * self.beta[j] / nb;
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            if res <= cfg.kkt_tol * pen {
                continue;
            }
            let mut cand = self.beta.clone();
            cand[r].iter_mut().for_each(|v| *v = 0.0);
            let cand_eta = self.problem.eta(&cand);
            let cand_obj = self.objective(&cand, &cand_eta);
            if self.accepts(cand_obj) {
                self.beta = cand;
                self.eta = cand_eta;
                self.obj = cand_obj;
                self.report.objective.push(cand_obj);
                self.active.retain(|&a| a != g);
                pruned = true;
            }
        }
        pruned
    }

    fn stationarity(&self, grad: &DVector<f64>, g: usize) -> f64 {
        let r = self.problem.groups[g].clone();
        let nb = norm(&self.beta[r.clone()]);
        let pen = self.pens[g];
        r.map(|j| {
            let v = grad[j] + pen * self.beta[j] / nb;
            v * v
        })
        .sum::<f64>()
        .sqrt()
    }

    /// Majorized block proximal-gradient sweeps over the active groups.
    ///
    /// Each block step minimizes a quadratic upper bound of the loss plus the
    /// exact group penalty, so the objective never increases.
    fn polish(&mut self, cfg: &SolverConfig) -> bool {
        let problem = self.problem;
        let groups = problem.groups;
        let z = problem.z;
        let wbar = match problem.family {
            Family::BernoulliLogit => 0.25,
            Family::GaussianIdentity => 1.0,
        };
        let mut lips: Vec<(usize, f64)> = Vec::new();
        let mut changed = false;
        for _ in 0..cfg.polish_max_sweeps {
            let grad = problem.gradient(&self.eta);
            let worst = self
                .active
                .iter()
                .map(|&g| self.stationarity(&grad, g) / (cfg.kkt_tol * self.pens[g]))
                .fold(0.0, f64::max);
            if worst <= 0.5 || self.active.is_empty() {
                break;
            }
            for g in self.active.clone() {
                let r = groups[g].clone();
                let lip = match lips.iter().find(|(a, _)| *a == g) {
                    Some(&(_, l)) => l,
                    None => {
                        let zg = z.columns(r.start, r.len());
                        let l = wbar * zg.tr_mul(&zg).symmetric_eigenvalues().max();
                        lips.push((g, l));
                        l
                    }
                };
                if lip <= 0.0 {
                    continue;
                }
                let q1 = DVector::from_iterator(
                    self.eta.len(),
                    self.eta.iter().zip(problem.y).map(|(&e, &y)| problem.family.q_derivs(e, y).0),
                );
                let zg = z.columns(r.start, r.len());
                let gg = zg.tr_mul(&q1);
                let old = DVector::from_column_slice(&self.beta[r.clone()]);
                let v = &old - gg / lip;
                let vn = v.norm();
                let thr = self.pens[g] / lip;
                let new = if vn > thr { v * (1.0 - thr / vn) } else { DVector::zeros(r.len()) };
                let delta = &new - &old;
                if delta.amax() == 0.0 {
                    continue;
                }
                let de = zg * &delta;
                for (e, d) in self.eta.iter_mut().zip(de.iter()) {
                    *e += d;
                }
                self.beta[r].copy_from_slice(new.as_slice());
                changed = true;
            }
            self.active.retain(|&g| norm(&self.beta[groups[g].clone()]) > 0.0);
        }
        if changed {
            self.obj = self.objective(&self.beta, &self.eta);
            self.report.objective.push(self.obj);
        }
        changed
    }

    fn lqa(&mut self, cfg: &SolverConfig) -> Result<bool> {
        let problem = self.problem;
        let groups = problem.groups;
        let gaussian = problem.family == Family::GaussianIdentity;
        let mut cache: Option<(Vec<usize>, DMatrix<f64>, Vec<Range<usize>>, Option<DMatrix<f64>>)> = None;
        for _ in 0..cfg.lqa_max_iter {
            if self.active.is_empty() {
                return Ok(true);
            }
            self.report.outer_iterations += 1;
            self.report.inner_iterations += 1;
            if cache.as_ref().is_none_or(|c| c.0 != self.active) {
                let (za, local) = columns(problem.z, groups, &self.active);
                cache = Some((self.active.clone(), za, local, None));
            }
            let (_, za, local, gram_cache) = cache.as_mut().expect("cache set above");
            let (w, u) = working(problem, &self.eta);
            let mut gram = if gaussian {
                gram_cache.get_or_insert_with(|| za.tr_mul(za)).clone()
            } else {
                weighted_gram(za, &w)
            };
            let rhs = weighted_rhs(za, &w, &u);
            let mut beta_a = DVector::zeros(za.ncols());
            for (&g, lr) in self.active.iter().zip(local.iter()) {
                let r = groups[g].clone();
                let nb = norm(&self.beta[r.clone()]).max(cfg.lqa_eps);
                let ridge = self.pens[g] / nb;
                for (lc, gc) in lr.clone().zip(r) {
                    gram[(lc, lc)] += ridge;
                    beta_a[lc] = self.beta[gc];
                }
            }
            let (target, jit) = spd_solve(gram, &rhs)?;
            self.report.jitter_applied |= jit;
            let dir = target - &beta_a;

            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=cfg.max_halvings {
                let mut cand = self.beta.clone();
                for (&g, lr) in self.active.iter().zip(local.iter()) {
                    for (lc, gc) in lr.clone().zip(groups[g].clone()) {
                        cand[gc] = beta_a[lc] + step * dir[lc];
                    }
                }
                let cand_eta = problem.eta(&cand);
                let cand_obj = self.objective(&cand, &cand_eta);
                if !cand_obj.is_finite() {
                    return Err(GacmError::Numerical("non-finite penalized objective".into()));
                }
                if self.accepts(cand_obj) {
                    accepted = Some((cand, cand_eta, cand_obj));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, cand_eta, cand_obj)) = accepted else {
                return Ok(true);
            };
            let change = norm(
                &cand
                    .iter()
                    .zip(&self.beta)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            let scale = norm(&self.beta).max(1.0);
            self.beta = cand;
            self.eta = cand_eta;
            self.obj = cand_obj;
            self.report.objective.push(cand_obj);

            let small: Vec<usize> = self
                .active
                .iter()
                .copied()
                .filter(|&g| {
                    let r = groups[g].clone();
                    norm(&self.beta[r.clone()]) < cfg.drop_eps * (r.len() as f64).sqrt()
                })
                .collect();
            if !small.is_empty() {
                let mut cand = self.beta.clone();
                for &g in &small {
                    cand[groups[g].clone()].iter_mut().for_each(|v| *v = 0.0);
                }
                let cand_eta = problem.eta(&cand);
                let cand_obj = self.objective(&cand, &cand_eta);
                if self.accepts(cand_obj) {
                    self.beta = cand;
                    self.eta = cand_eta;
                    self.obj = cand_obj;
                    self.report.objective.push(cand_obj);
                    self.active.retain(|g| !small.contains(g));
                    continue;
                }
            }
            if change <= cfg.lqa_tol * scale {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Minimize `sum Q + n lambda sum_g w_g ||gamma_g||` by LQA with an active-set outer loop.
///
/// Groups with infinite weight are held at zero and never enter the solve.
/// `init` warm-starts the iterate; its support seeds the active set.
pub fn fit_group_penalized(
    problem: &Problem,
    lambda: f64,
    weights: &[f64],
    init: Option<&GroupCoef>,
    cfg: &SolverConfig,
) -> Result<(GroupCoef, FitReport)> {
    check_weights(problem, lambda, weights)?;
    let n = problem.n() as f64;
    let finite: Vec<usize> = (0..weights.len()).filter(|&g| weights[g].is_finite()).collect();

    if lambda == 0.0 {
        // penalty off: plain IRLS on the finite-weight groups
        let (zf, local) = columns(problem.z, problem.groups, &finite);
        let sub = Problem::new(&zf, problem.y, problem.family, problem.offset, &local)?;
        let init_sub: Option<Vec<f64>> = init.map(|c| {
            finite
                .iter()
                .flat_map(|&g| c.coef()[problem.groups[g].clone()].iter().copied())
                .collect()
        });
        let (sol, mut report) = fit_unpenalized(&sub, init_sub.as_deref(), cfg)?;
        let mut full = vec![0.0; problem.z.ncols()];
        for (&g, lr) in finite.iter().zip(&local) {
            for (lc, gc) in lr.clone().zip(problem.groups[g].clone()) {
                full[gc] = sol.coef()[lc];
            }
        }
        let coef = GroupCoef::new(full, problem.groups.to_vec(), problem.offset.into());
        let kkt = kkt_check(problem, 0.0, weights, &coef, cfg.kkt_tol)?;
        report.kkt = kkt.residuals.iter().map(|r| r.residual).collect();
        return Ok((coef, report));
    }

    let pens: Vec<f64> = weights.iter().map(|w| n * lambda * w).collect();
    let mut beta = match init {
        Some(c) if c.coef().len() == problem.z.ncols() => c.coef().to_vec(),
        Some(_) => return Err(GacmError::DimensionMismatch("warm start length".into())),
        None => vec![0.0; problem.z.ncols()],
    };
    for (g, r) in problem.groups.iter().enumerate() {
        if weights[g].is_infinite() {
            beta[r.clone()].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let eta = problem.eta(&beta);
    let active: Vec<usize> = finite
        .iter()
        .copied()
        .filter(|&g| norm(&beta[problem.groups[g].clone()]) > 0.0)
        .collect();
    let mut state = PenalizedState {
        problem,
        pens,
        beta,
        eta,
        obj: 0.0,
        active,
        report: FitReport::default(),
    };
    state.obj = state.objective(&state.beta, &state.eta);
    if !state.obj.is_finite() {
        return Err(GacmError::Numerical("non-finite objective at the starting point".into()));
    }
    state.report.objective.push(state.obj);

    let mut converged = false;
    let mut dirty = false;
    for round in 0..cfg.max_active_rounds {
        let grad = problem.gradient(&state.eta);
        let violators: Vec<usize> = finite
            .iter()
            .copied()
            .filter(|g| !state.active.contains(g))
            .filter(|&g| {
                let r = &problem.groups[g];
                grad.rows(r.start, r.len()).norm() > state.pens[g] * (1.0 + cfg.kkt_tol)
            })
            .collect();
        if violators.is_empty() && round > 0 && !dirty {
            converged = true;
            break;
        }
        let added = !violators.is_empty() && state.add_violators(&grad, &violators, cfg)?;
        if state.active.is_empty() {
            converged = violators.is_empty();
            break;
        }
        if round > 0 && !added && !dirty {
            log::debug!("KKT violators could not be started with descent; stopping active-set loop");
            break;
        }
        let lqa_ok = state.lqa(cfg)?;
        if !lqa_ok {
            log::debug!("LQA hit its iteration limit at lambda = {lambda}");
        }
        dirty = state.prune(cfg);
        dirty |= state.polish(cfg);
    }

    let coef = GroupCoef::new(state.beta, problem.groups.to_vec(), problem.offset.into());
    let kkt = kkt_check(problem, lambda, weights, &coef, cfg.kkt_tol)?;
    let mut report = state.report;
    report.converged = converged;
    report.kkt = kkt
        .residuals
        .iter()
        .map(|r| if r.bound > 0.0 { r.residual / r.bound } else { r.residual })
        .collect();
    report.separation = separation_flag(problem.family, &state.eta);
    report.grad_max_norm = problem.gradient(&state.eta).amax();
    Ok((coef, report))
}

/// Value of the penalized objective at `coef`.
pub fn penalized_objective(problem: &Problem, lambda: f64, weights: &[f64], coef: &[f64]) -> f64 {
    let eta = problem.eta(coef);
    let n = problem.n() as f64;
    let pen: f64 = problem
        .groups
        .iter()
        .enumerate()
        .filter(|(g, _)| weights[*g].is_finite())
        .map(|(g, r)| n * lambda * weights[g] * norm(&coef[r.clone()]))
        .sum();
    problem.loss(&eta) + pen
}
