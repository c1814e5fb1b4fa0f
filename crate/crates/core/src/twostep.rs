//! Refit on the selected interaction columns, then re-estimate one covariate's
//! coefficient functions with the others held at plug-in values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::basis::CovariateBasis;
use crate::design::{build_group_design, build_step2_design, fit_bases, Dataset, GroupLayout};
use crate::error::{GacmError, Result};
use crate::family::Family;
use crate::solver::{fit_unpenalized, FitReport, GroupCoef, Problem, SolverConfig};

/// Source of intercepts `alpha_{l0}` and components `alpha_{lk}` for every interaction column.
pub trait AdditiveCoefficients {
    /// `None` when the source cannot supply this column.
    fn intercept(&self, group: usize) -> Option<f64>;
    fn component(&self, group: usize, k: usize, x: f64) -> Option<f64>;
    /// Columns whose coefficient function may be nonzero.
    fn support(&self) -> Vec<usize>;
}

/// `N^ini = floor(c n^{1.01/(2q+1)})`.
pub fn knot_count_initial(n: usize, q: usize, c: f64) -> usize {
    assert!(n >= 2, "need at least two observations");
    (c * (n as f64).powf(1.01 / (2 * q + 1) as f64)).floor() as usize
}

/// Candidate second-step knot counts `floor(n^{1/(2q+1)}) ..= floor(2 n^{1/(2q+1)})`.
pub fn knot_range_step2(n: usize, q: usize) -> std::ops::RangeInclusive<usize> {
    let r = (n as f64).powf(1.0 / (2 * q + 1) as f64);
    (r.floor() as usize)..=((2.0 * r).floor() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoStepConfig {
    pub q: usize,
    pub c: f64,
    pub family: Family,
    pub solver: SolverConfig,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        Self {
            q: 4,
            c: 2.0,
            family: Family::BernoulliLogit,
            solver: SolverConfig::default(),
        }
    }
}

/// Unpenalized refit on the selected columns with undersmoothed bases.
#[derive(Debug, Clone)]
pub struct InitialFit {
    pub selected: Vec<usize>,
    pub n_interior: usize,
    pub bases: Vec<CovariateBasis>,
    pub layout: GroupLayout,
    pub coef: GroupCoef,
    pub eta: Vec<f64>,
    pub report: FitReport,
}

impl InitialFit {
    fn slot(&self, group: usize) -> Option<usize> {
        self.selected.iter().position(|&g| g == group)
    }

    /// `alpha^ini_{lk}(x)`, zero for unselected columns.
    pub fn curve(&self, group: usize, k: usize, x: f64) -> Result<f64> {
        let Some(j) = self.slot(group) else {
            return Ok(0.0);
        };
        let b = self.bases[k].eval(x)?;
        let r = self.layout.block_range(j, k);
        Ok(b.iter().zip(&self.coef.coef()[r]).map(|(u, v)| u * v).sum())
    }
}

impl AdditiveCoefficients for InitialFit {
    fn intercept(&self, group: usize) -> Option<f64> {
        Some(match self.slot(group) {
            Some(j) => self.coef.coef()[self.layout.intercept_col(j).expect("initial fit has intercepts")],
            None => 0.0,
        })
    }

    fn component(&self, group: usize, k: usize, x: f64) -> Option<f64> {
        if k >= self.bases.len() {
            return None;
        }
        self.curve(group, k, x.clamp(0.0, 1.0)).ok()
    }

    fn support(&self) -> Vec<usize> {
        self.selected.clone()
    }
}

fn check_selected(ds: &Dataset, selected: &[usize]) -> Result<()> {
    if selected.is_empty() {
        return Err(GacmError::NothingSelected);
    }
    if let Some(&g) = selected.iter().find(|&&g| g >= ds.p()) {
        return Err(GacmError::DimensionMismatch(format!("selected column {g} >= p = {}", ds.p())));
    }
    Ok(())
}

/// Refit `sum Q` on the selected columns with `N^ini` interior knots.
pub fn fit_initial(ds: &Dataset, selected: &[usize], cfg: &TwoStepConfig) -> Result<InitialFit> {
    check_selected(ds, selected)?;
    let n_interior = knot_count_initial(ds.n(), cfg.q, cfg.c);
    let bases = fit_bases(ds, n_interior, cfg.q)?;
    let design = build_group_design(ds, &bases, selected)?;
    let groups = design.group_ranges();
    let offset = vec![0.0; ds.n()];
    let problem = Problem::new(&design.z, ds.y(), cfg.family, &offset, &groups)?;
    let (coef, report) = fit_unpenalized(&problem, None, &cfg.solver)?;
    let eta = problem.eta(coef.coef());
    Ok(InitialFit {
        selected: selected.to_vec(),
        n_interior,
        bases,
        layout: design.layout,
        coef,
        eta,
        report,
    })
}

/// Second-step (or oracle) fit of covariate `k`'s coefficient functions.
#[derive(Debug, Clone)]
pub struct StepTwoFit {
    pub k: usize,
    pub n_interior: usize,
    pub basis: CovariateBasis,
    pub selected: Vec<usize>,
    /// One block of width `J^S - 1` per selected column.
    pub coef: GroupCoef,
    pub intercepts: Vec<f64>,
    pub offset: Vec<f64>,
    pub intercept_offset: Vec<f64>,
    /// Step-2 design, rows `B^S(X_ik) T_il`.
    pub z: DMatrix<f64>,
    /// Fitted linear predictor of the step-2 model.
    pub eta: Vec<f64>,
    /// `L^S` at the optimum.
    pub loss: f64,
    pub report: FitReport,
}

impl StepTwoFit {
    pub fn block(&self, group: usize) -> Option<Range<usize>> {
        let j = self.selected.iter().position(|&g| g == group)?;
        let w = self.basis.width();
        Some(j * w..(j + 1) * w)
    }

    /// `alpha^S_{lk}(x)` for a selected column.
    pub fn curve(&self, group: usize, x: f64) -> Result<f64> {
        let r = self
            .block(group)
            .ok_or_else(|| GacmError::InvalidArgument(format!("column {group} was not selected")))?;
        let b = self.basis.eval(x)?;
        Ok(b.iter().zip(&self.coef.coef()[r]).map(|(u, v)| u * v).sum())
    }

    pub fn curve_on(&self, group: usize, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&x| self.curve(group, x)).collect()
    }

    /// `BIC(N^S) = 2 L^S + d (N^S + q) log n`.
    pub fn bic(&self, d: usize) -> f64 {
        let q = match &self.basis {
            CovariateBasis::Spline(cb) => cb.knots().order(),
            CovariateBasis::Linear { .. } => 0,
        };
        let n = self.eta.len() as f64;
        2.0 * self.loss + (d * (self.n_interior + q)) as f64 * n.ln()
    }
}

fn missing(what: &str, group: usize) -> GacmError {
    GacmError::InvalidArgument(format!("coefficient source has no {what} for column {group}"))
}

/// Offsets of the step-2 fit (`skip = Some(k)`) or of the intercept pass (`skip = None`).
fn plug_in_offset(
    ds: &Dataset,
    selected: &[usize],
    src: &dyn AdditiveCoefficients,
    skip: Option<usize>,
) -> Result<Vec<f64>> {
    let n = ds.n();
    let mut off = vec![0.0; n];
    let mut groups: Vec<usize> = selected.to_vec();
    for g in src.support() {
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    for &g in &groups {
        let inside = selected.contains(&g);
        let t = ds.t_col(g);
        let with_intercept = !inside || skip.is_some();
        let a0 = if with_intercept {
            src.intercept(g).ok_or_else(|| missing("intercept", g))?
        } else {
            0.0
        };
        for (i, o) in off.iter_mut().enumerate() {
            if t[i] == 0.0 {
                continue;
            }
            let mut a = a0;
            for k in 0..ds.d() {
                if inside && skip == Some(k) {
                    continue;
                }
                a += src.component(g, k, ds.x_col(k)[i]).ok_or_else(|| missing("component", g))?;
            }
            *o += a * t[i];
        }
    }
    Ok(off)
}

/// Shared body of the feasible and oracle second-step estimators.
pub fn fit_step_two(
    ds: &Dataset,
    selected: &[usize],
    src: &dyn AdditiveCoefficients,
    k: usize,
    n_interior: usize,
    cfg: &TwoStepConfig,
) -> Result<StepTwoFit> {
    check_selected(ds, selected)?;
    if k >= ds.d() {
        return Err(GacmError::InvalidArgument(format!("covariate {k} >= d = {}", ds.d())));
    }
    let basis = CovariateBasis::fit(ds.x_col(k), n_interior, cfg.q, ds.linear_flags()[k]).map_err(|e| match e {
        GacmError::DegenerateCovariate { .. } => GacmError::DegenerateCovariate {
            column: ds.x_names()[k].clone(),
        },
        other => other,
    })?;
    let design = build_step2_design(ds, selected, k, &basis)?;
    let groups = design.group_ranges();
    let offset = plug_in_offset(ds, selected, src, Some(k))?;
    let problem = Problem::new(&design.z, ds.y(), cfg.family, &offset, &groups)?;
    let (coef, report) = fit_unpenalized(&problem, None, &cfg.solver)?;
    let eta = problem.eta(coef.coef());
    let loss = problem.loss(&eta);

    let intercept_offset = plug_in_offset(ds, selected, src, None)?;
    let tz = DMatrix::from_fn(ds.n(), selected.len(), |i, j| ds.t_col(selected[j])[i]);
    let tgroups: Vec<Range<usize>> = (0..selected.len()).map(|j| j..j + 1).collect();
    let tproblem = Problem::new(&tz, ds.y(), cfg.family, &intercept_offset, &tgroups)?;
    let (icoef, _) = fit_unpenalized(&tproblem, None, &cfg.solver)?;

    Ok(StepTwoFit {
        k,
        n_interior,
        basis,
        selected: selected.to_vec(),
        coef,
        intercepts: icoef.coef().to_vec(),
        offset,
        intercept_offset,
        z: design.z,
        eta,
        loss,
        report,
    })
}

/// Two-step estimator of covariate `k`'s functions with initial-fit plug-ins.
pub fn fit_second_step(
    ds: &Dataset,
    init: &InitialFit,
    k: usize,
    n_interior: usize,
    cfg: &TwoStepConfig,
) -> Result<StepTwoFit> {
    fit_step_two(ds, &init.selected, init, k, n_interior, cfg)
}

/// Oracle estimator: the same fit with true functions as plug-ins.
pub fn fit_oracle(
    ds: &Dataset,
    selected: &[usize],
    truth: &dyn AdditiveCoefficients,
    k: usize,
    n_interior: usize,
    cfg: &TwoStepConfig,
) -> Result<StepTwoFit> {
    fit_step_two(ds, selected, truth, k, n_interior, cfg)
}

/// BIC choice of `N^S` over the candidate range; ties keep the smaller count.
pub fn choose_knots_bic(
    ds: &Dataset,
    init: &InitialFit,
    k: usize,
    cfg: &TwoStepConfig,
) -> Result<(usize, Vec<(usize, f64)>)> {
    let range = knot_range_step2(ds.n(), cfg.q);
    let candidates: Vec<usize> = range.collect();
    if candidates.len() == 1 {
        return Ok((candidates[0], Vec::new()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for n_s in candidates {
        let fit = fit_second_step(ds, init, k, n_s, cfg)?;
        let bic = fit.bic(ds.d());
        scores.push((n_s, bic));
        if best.is_none_or(|(_, b)| bic < b) {
            best = Some((n_s, bic));
        }
    }
    Ok((best.expect("range is nonempty").0, scores))
}
