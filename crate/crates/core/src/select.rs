//! Group lasso, adaptive weights and adaptive group lasso, each tuned by EBIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::sync::Arc;

use crate::design::{build_design, fit_bases, Dataset, GroupedDesign};
use crate::error::{GacmError, Result};
use crate::family::Family;
use crate::solver::{fit_group_penalized, lambda_max, FitReport, GroupCoef, Problem, SolverConfig};

/// `N = floor(c n^{1/(2q+1)})`.
pub fn knot_count_stage1(n: usize, q: usize, c: f64) -> usize {
    assert!(n >= 2, "need at least two observations");
    (c * (n as f64).powf(1.0 / (2 * q + 1) as f64)).floor() as usize
}

/// `size` log-spaced values from `lambda_max` down to `lambda_max * floor_ratio`.
pub fn lambda_grid(lambda_max: f64, size: usize, floor_ratio: f64) -> Vec<f64> {
    match size {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => (0..size)
            .map(|k| lambda_max * floor_ratio.powf(k as f64 / (size - 1) as f64))
            .collect(),
    }
}

/// `ln C(p, s)` through log-gamma.
pub fn ln_binomial(p: usize, s: usize) -> f64 {
    assert!(s <= p);
    if s == 0 || s == p {
        return 0.0;
    }
    ln_gamma(p as f64 + 1.0) - ln_gamma(s as f64 + 1.0) - ln_gamma((p - s) as f64 + 1.0)
}

/// Model-size part of EBIC: `s* df log n + 2 nu ln C(p, s*)`.
pub fn ebic_penalty(s_star: usize, group_df: f64, n: usize, p: usize, nu: f64) -> f64 {
    s_star as f64 * group_df * (n as f64).ln() + 2.0 * nu * ln_binomial(p, s_star)
}

/// `2 sum Q + s* (1 + d J) log n + 2 nu ln C(p, s*)`; `group_df` is `1 + d J`.
pub fn ebic(loss_sum: f64, s_star: usize, group_df: f64, n: usize, p: usize, nu: f64) -> f64 {
    2.0 * loss_sum + ebic_penalty(s_star, group_df, n, p, nu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    /// Spline order (4 = cubic).
    pub q: usize,
    pub c: f64,
    pub nu: f64,
    pub grid_size: usize,
    pub grid_floor_ratio: f64,
    pub warm_start: bool,
    /// Stop a path once the EBIC size penalty alone exceeds the best EBIC seen.
    pub early_stop: bool,
    /// Stop a path once more than this many groups are selected.
    pub dfmax: Option<usize>,
    pub family: Family,
    pub solver: SolverConfig,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            q: 4,
            c: 2.0,
            nu: 0.5,
            grid_size: 50,
            grid_floor_ratio: 1e-3,
            warm_start: true,
            early_stop: true,
            dfmax: None,
            family: Family::BernoulliLogit,
            solver: SolverConfig::default(),
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(GacmError::InvalidArgument("spline order q must be >= 1".into()));
        }
        if !(self.c > 0.0) {
            return Err(GacmError::InvalidArgument("knot constant c must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(GacmError::InvalidArgument(format!("nu must be in [0, 1], got {}", self.nu)));
        }
        if self.grid_size == 0 {
            return Err(GacmError::InvalidArgument("grid_size must be >= 1".into()));
        }
        if !(self.grid_floor_ratio > 0.0 && self.grid_floor_ratio < 1.0) {
            return Err(GacmError::InvalidArgument("grid_floor_ratio must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// EBIC bookkeeping shared by every point of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbicContext {
    pub n: usize,
    pub p: usize,
    pub nu: f64,
    pub group_df: f64,
}

impl EbicContext {
    pub fn value(&self, loss_sum: f64, s_star: usize) -> f64 {
        ebic(loss_sum, s_star, self.group_df, self.n, self.p, self.nu)
    }
    pub fn penalty(&self, s_star: usize) -> f64 {
        ebic_penalty(s_star, self.group_df, self.n, self.p, self.nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathOptions {
    pub warm_start: bool,
    pub early_stop: bool,
    pub dfmax: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub coef: GroupCoef,
    /// Indices of nonzero groups (positions in the design's group list).
    pub selected: Vec<usize>,
    pub loss: f64,
    pub ebic: f64,
    pub s_star: usize,
    pub eta: Vec<f64>,
    pub report: FitReport,
}

fn path_point(
    problem: &Problem,
    ctx: &EbicContext,
    lambda: f64,
    coef: GroupCoef,
    report: FitReport,
) -> PathPoint {
    let eta = problem.eta(coef.coef());
    let loss = problem.loss(&eta);
    let selected = coef.nonzero_groups();
    let s_star = selected.len();
    PathPoint {
        lambda,
        ebic: ctx.value(loss, s_star),
        coef,
        selected,
        loss,
        s_star,
        eta,
        report,
    }
}

/// Fit the penalized objective along a descending `lambdas` grid.
pub fn group_lasso_path(
    problem: &Problem,
    lambdas: &[f64],
    weights: &[f64],
    ctx: &EbicContext,
    opts: PathOptions,
    cfg: &SolverConfig,
) -> Result<Vec<PathPoint>> {
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(GacmError::InvalidArgument("lambda grid must be descending".into()));
    }
    let annotate = |lambda: f64| move |e: GacmError| GacmError::AtLambda {
        lambda,
        source: Box::new(e),
    };
    if !opts.warm_start {
        let fits: Vec<Result<PathPoint>> = lambdas
            .par_iter()
            .map(|&lam| {
                let (coef, rep) = fit_group_penalized(problem, lam, weights, None, cfg).map_err(annotate(lam))?;
                Ok(path_point(problem, ctx, lam, coef, rep))
            })
            .collect();
        return fits.into_iter().collect();
    }
    let mut out: Vec<PathPoint> = Vec::with_capacity(lambdas.len());
    let mut best = f64::INFINITY;
    for &lam in lambdas {
        let init = out.last().map(|pt| &pt.coef);
        let (coef, rep) = fit_group_penalized(problem, lam, weights, init, cfg).map_err(annotate(lam))?;
        let pt = path_point(problem, ctx, lam, coef, rep);
        best = best.min(pt.ebic);
        let s = pt.s_star;
        out.push(pt);
        if opts.early_stop && ctx.penalty(s) >= best {
            log::debug!("path stopped at lambda = {lam}: size penalty exceeds best EBIC");
            break;
        }
        if opts.dfmax.is_some_and(|m| s > m) {
            log::debug!("path stopped at lambda = {lam}: {s} groups exceed dfmax");
            break;
        }
    }
    Ok(out)
}

/// Index of the minimum-EBIC point, ties resolved toward the larger lambda.
pub fn choose_ebic(path: &[PathPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, pt) in path.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                let cur = &path[b];
                if pt.ebic < cur.ebic || (pt.ebic == cur.ebic && pt.lambda > cur.lambda) {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// `w_l = 1 / ||gamma_l||`, or infinity for a zero group.
pub fn adaptive_weights(stage1: &GroupCoef) -> Vec<f64> {
    stage1
        .norms()
        .iter()
        .map(|&nrm| if nrm > 0.0 { 1.0 / nrm } else { f64::INFINITY })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub config: SelectConfig,
    pub n_interior: usize,
    pub design: Arc<GroupedDesign>,
    pub stage1_path: Vec<PathPoint>,
    pub stage1_choice: usize,
    pub weights: Vec<f64>,
    pub stage2_path: Vec<PathPoint>,
    pub stage2_choice: Option<usize>,
    /// Selected interaction columns (indices into `T`).
    pub selected: Vec<usize>,
    pub empty: bool,
}

impl SelectionResult {
    pub fn stage1(&self) -> &PathPoint {
        &self.stage1_path[self.stage1_choice]
    }

    pub fn stage2(&self) -> Option<&PathPoint> {
        self.stage2_choice.map(|i| &self.stage2_path[i])
    }

    /// Linear predictor of the final adaptive fit, or of the zero model when nothing survives.
    pub fn final_eta(&self) -> Vec<f64> {
        match self.stage2() {
            Some(pt) => pt.eta.clone(),
            None => vec![0.0; self.design.z.nrows()],
        }
    }

    pub fn stage1_selected(&self) -> Vec<usize> {
        self.stage1().selected.iter().map(|&g| self.design.groups[g]).collect()
    }
}

/// Full pipeline: GL path, EBIC pick, adaptive weights, AGL path, EBIC pick.
pub fn select_model(ds: &Dataset, cfg: &SelectConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    let n = ds.n();
    let n_interior = knot_count_stage1(n, cfg.q, cfg.c);
    let bases = fit_bases(ds, n_interior, cfg.q)?;
    let design = Arc::new(build_design(ds, &bases)?);
    let groups = design.group_ranges();
    let offset = vec![0.0; n];
    let problem = Problem::new(&design.z, ds.y(), cfg.family, &offset, &groups)?;
    let ctx = EbicContext {
        n,
        p: ds.p(),
        nu: cfg.nu,
        group_df: 1.0 + bases.iter().map(|b| b.raw_dim() as f64).sum::<f64>(),
    };
    let opts = PathOptions {
        warm_start: cfg.warm_start,
        early_stop: cfg.early_stop,
        dfmax: cfg.dfmax,
    };

    let ones = vec![1.0; ds.p()];
    let lmax1 = lambda_max(&problem, &ones)?;
    let grid1 = lambda_grid(lmax1, cfg.grid_size, cfg.grid_floor_ratio);
    let stage1_path = group_lasso_path(&problem, &grid1, &ones, &ctx, opts, &cfg.solver)?;
    let stage1_choice = choose_ebic(&stage1_path).expect("grid is nonempty");
    let weights = adaptive_weights(&stage1_path[stage1_choice].coef);

    let (stage2_path, stage2_choice) = if weights.iter().all(|w| w.is_infinite()) {
        (Vec::new(), None)
    } else {
        let lmax2 = lambda_max(&problem, &weights)?;
        let grid2 = lambda_grid(lmax2, cfg.grid_size, cfg.grid_floor_ratio);
        let path = group_lasso_path(&problem, &grid2, &weights, &ctx, opts, &cfg.solver)?;
        let choice = choose_ebic(&path);
        (path, choice)
    };
    let selected: Vec<usize> = stage2_choice
        .map(|i| stage2_path[i].selected.iter().map(|&g| design.groups[g]).collect())
        .unwrap_or_default();
    if selected.is_empty() {
        log::info!("no interaction column selected");
    }
    Ok(SelectionResult {
        config: cfg.clone(),
        n_interior,
        design,
        stage1_path,
        stage1_choice,
        weights,
        stage2_path,
        stage2_choice,
        empty: selected.is_empty(),
        selected,
    })
}
