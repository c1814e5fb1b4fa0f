//! Simultaneous confidence bands for second-step coefficient curves.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::design::Dataset;
use crate::error::{GacmError, Result};
use crate::family::Family;
use crate::linalg::{spd_factor, weighted_gram};
use crate::rng::stream_rng;
use crate::twostep::{choose_knots_bic, fit_initial, fit_second_step, StepTwoFit, TwoStepConfig};

/// `Q_L(alpha) = {2 log(L+1)}^{1/2} d_L(alpha)`.
pub fn scb_threshold(l: usize, alpha: f64) -> Result<f64> {
    if l < 1 {
        return Err(GacmError::InvalidArgument("band grid needs L >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GacmError::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let a = 2.0 * ((l + 1) as f64).ln();
    let inner = (-0.5 * (1.0 - alpha).ln()).ln() + 0.5 * (((l + 1) as f64).ln().ln() + (4.0 * PI).ln());
    let d = 1.0 - inner / a;
    Ok(a.sqrt() * d)
}

/// `L + 1` equally spaced points `(j + 1) / (L + 2)`, strictly inside `(0, 1)`.
pub fn band_grid(l: usize) -> Vec<f64> {
    (0..=l).map(|j| (j + 1) as f64 / (l + 2) as f64).collect()
}

/// Plug-in `sigma_{n1}(x)` for column `group` at every grid point.
///
/// Uses Fisher weights at the fitted step-2 predictor.
pub fn sigma_plugin(fit: &StepTwoFit, family: Family, group: usize, grid: &[f64]) -> Result<Vec<f64>> {
    let block = fit
        .block(group)
        .ok_or_else(|| GacmError::InvalidArgument(format!("column {group} was not selected")))?;
    let w: Vec<f64> = fit.eta.iter().map(|&e| {
        let mu = family.mean(e);
        let d = family.mean_deriv(e);
        d * d / family.variance(mu)
    }).collect();
    let info = weighted_gram(&fit.z, &w);
    let (chol, jit) = spd_factor(info)?;
    if jit {
        log::debug!("jitter applied to plug-in information matrix");
    }
    let dim = fit.z.ncols();
    grid.iter()
        .map(|&x| {
            let b = fit.basis.eval(x)?;
            let mut v = DVector::zeros(dim);
            for (c, bv) in block.clone().zip(&b) {
                v[c] = *bv;
            }
            let s = chol.solve(&v);
            Ok(v.dot(&s).max(0.0).sqrt())
        })
        .collect()
}

/// Bootstrap replicate curves and resample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub seed: u64,
    pub requested: usize,
    pub failed: usize,
    /// Curve keys `(column, covariate)`.
    pub keys: Vec<(usize, usize)>,
    /// `counts[j][i]`: copies of row `i` in surviving replicate `j`.
    pub counts: Vec<Vec<u32>>,
    /// `curves[c][j][g]`: curve `c`, surviving replicate `j`, grid point `g`.
    pub curves: Vec<Vec<Vec<f64>>>,
}

impl BootstrapRun {
    pub fn survivors(&self) -> usize {
        self.counts.len()
    }
}

type Replicate = (Vec<u32>, Vec<Vec<f64>>);

fn separated(flag: bool, what: &str) -> Result<()> {
    if flag {
        Err(GacmError::Numerical(format!("{what} fit is separated; its curves diverge")))
    } else {
        Ok(())
    }
}

fn one_replicate(
    ds: &Dataset,
    selected: &[usize],
    knots: &[(usize, usize)],
    grid: &[f64],
    cfg: &TwoStepConfig,
    seed: u64,
    j: usize,
) -> Result<Replicate> {
    let n = ds.n();
    let mut rng = stream_rng(seed, j as u64);
    let mut counts = vec![0u32; n];
    let rows: Vec<usize> = (0..n)
        .map(|_| {
            let i = rng.random_range(0..n);
            counts[i] += 1;
            i
        })
        .collect();
    let boot = ds.resample(&rows);
    let init = fit_initial(&boot, selected, cfg)?;
    separated(init.report.separation, "initial")?;
    let mut curves = Vec::new();
    for &(k, n_s) in knots {
        let fit = fit_second_step(&boot, &init, k, n_s, cfg)?;
        separated(fit.report.separation, "step-two")?;
        for &g in selected {
            curves.push(fit.curve_on(g, grid)?);
        }
    }
    Ok((counts, curves))
}

/// Nonparametric bootstrap of the two-step curves with `Î₁` and `N^S` held fixed.
///
/// `knots` lists `(k, N^S_k)` for each target covariate. Replicate `j` draws
/// from the stream `(seed, j)`, so results do not depend on scheduling.
pub fn bootstrap_curves(
    ds: &Dataset,
    selected: &[usize],
    knots: &[(usize, usize)],
    grid: &[f64],
    b: usize,
    seed: u64,
    cfg: &TwoStepConfig,
) -> Result<BootstrapRun> {
    if b < 2 {
        return Err(GacmError::InvalidArgument("bootstrap needs B >= 2".into()));
    }
    let reps: Vec<Option<Replicate>> = (0..b)
        .into_par_iter()
        .map(|j| match one_replicate(ds, selected, knots, grid, cfg, seed, j) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("bootstrap replicate {j} dropped: {e}");
                None
            }
        })
        .collect();
    let failed = reps.iter().filter(|r| r.is_none()).count();
    if failed * 10 > b || b - failed < 2 {
        return Err(GacmError::BootstrapFailures { failed, total: b });
    }
    let keys: Vec<(usize, usize)> = knots
        .iter()
        .flat_map(|&(k, _)| selected.iter().map(move |&g| (g, k)))
        .collect();
    let mut counts = Vec::with_capacity(b - failed);
    let mut curves = vec![Vec::with_capacity(b - failed); keys.len()];
    for (cnt, cv) in reps.into_iter().flatten() {
        counts.push(cnt);
        for (slot, c) in curves.iter_mut().zip(cv) {
            slot.push(c);
        }
    }
    Ok(BootstrapRun {
        seed,
        requested: b,
        failed,
        keys,
        counts,
        curves,
    })
}

/// Replicate mean, accumulated as deviations from the first row.
fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let b = rows.len() as f64;
    let first = &rows[0];
    let mut acc = vec![0.0; first.len()];
    for r in &rows[1..] {
        for ((a, v), f) in acc.iter_mut().zip(r).zip(first) {
            *a += v - f;
        }
    }
    first.iter().zip(acc).map(|(f, a)| f + a / b).collect()
}

/// Sample standard deviation across replicates, divisor `B - 1`.
pub fn sd_unsmoothed(replicates: &[Vec<f64>]) -> Result<Vec<f64>> {
    if replicates.len() < 2 {
        return Err(GacmError::InvalidArgument("need at least two replicates".into()));
    }
    let mean = column_means(replicates);
    let b = replicates.len() as f64;
    let mut ss = vec![0.0; mean.len()];
    for r in replicates {
        for ((s, v), m) in ss.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    Ok(ss.into_iter().map(|s| (s / (b - 1.0)).sqrt()).collect())
}

/// Smoothed center (replicate mean) and delta-method SD `{sum_i cov_i^2}^{1/2}`.
pub fn sd_smoothed(replicates: &[Vec<f64>], counts: &[Vec<u32>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if replicates.len() < 2 {
        return Err(GacmError::InvalidArgument("need at least two replicates".into()));
    }
    if counts.len() != replicates.len() {
        return Err(GacmError::DimensionMismatch("count rows vs replicates".into()));
    }
    let b = replicates.len();
    let g = replicates[0].len();
    let n = counts[0].len();
    let center = column_means(replicates);
    let cbar: Vec<f64> = (0..n)
        .map(|i| counts.iter().map(|c| f64::from(c[i])).sum::<f64>() / b as f64)
        .collect();
    let cdev = DMatrix::from_fn(n, b, |i, j| f64::from(counts[j][i]) - cbar[i]);
    let adev = DMatrix::from_fn(b, g, |j, x| replicates[j][x] - center[x]);
    let cov = (cdev * adev) / b as f64;
    let sd = (0..g).map(|x| cov.column(x).norm()).collect();
    Ok((center, sd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub sd: Vec<f64>,
    pub alpha: f64,
    pub threshold: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Band {
    /// Truth inside `[lower, upper]` at every grid point.
    pub fn covers(&self, truth: &[f64]) -> bool {
        truth.len() == self.grid.len()
            && truth
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| lo <= t && t <= hi)
    }
}

/// `center +- sd Q_L(alpha)` with `L = grid.len() - 1`.
pub fn build_band(grid: &[f64], center: &[f64], sd: &[f64], alpha: f64) -> Result<Band> {
    if center.len() != grid.len() || sd.len() != grid.len() {
        return Err(GacmError::DimensionMismatch(format!(
            "grid {}, center {}, sd {}",
            grid.len(),
            center.len(),
            sd.len()
        )));
    }
    if sd.iter().any(|s| !(*s >= 0.0)) {
        return Err(GacmError::InvalidArgument("standard deviations must be >= 0".into()));
    }
    let threshold = scb_threshold(grid.len() - 1, alpha)?;
    let lower = center.iter().zip(sd).map(|(c, s)| c - s * threshold).collect();
    let upper = center.iter().zip(sd).map(|(c, s)| c + s * threshold).collect();
    Ok(Band {
        grid: grid.to_vec(),
        center: center.to_vec(),
        sd: sd.to_vec(),
        alpha,
        threshold,
        lower,
        upper,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScbConfig {
    pub alpha: f64,
    pub boot: usize,
    /// `L`: bands use `L + 1` grid points.
    pub grid: usize,
    /// Target covariates (0-based); empty means all.
    pub covariates: Vec<usize>,
    pub twostep: TwoStepConfig,
}

impl Default for ScbConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            boot: 200,
            grid: 20,
            covariates: Vec::new(),
            twostep: TwoStepConfig::default(),
        }
    }
}

/// Bands for one `(column, covariate)` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBands {
    pub group: usize,
    pub k: usize,
    pub n_interior: usize,
    pub estimate: Vec<f64>,
    pub plugin_sd: Vec<f64>,
    pub unsmoothed: Band,
    pub smoothed: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScbResult {
    pub grid: Vec<f64>,
    pub curves: Vec<CurveBands>,
    pub boot_requested: usize,
    pub boot_failed: usize,
}

/// Two-step fits, bootstrap and both bands for every selected column and target covariate.
pub fn confidence_bands(ds: &Dataset, selected: &[usize], cfg: &ScbConfig, seed: u64) -> Result<ScbResult> {
    if selected.is_empty() {
        return Err(GacmError::NothingSelected);
    }
    let ks: Vec<usize> = if cfg.covariates.is_empty() {
        (0..ds.d()).collect()
    } else {
        cfg.covariates.clone()
    };
    if let Some(&k) = ks.iter().find(|&&k| k >= ds.d()) {
        return Err(GacmError::InvalidArgument(format!("covariate {k} >= d = {}", ds.d())));
    }
    let local = ds.restrict_t(selected);
    let lsel: Vec<usize> = (0..selected.len()).collect();
    let tcfg = &cfg.twostep;
    let grid = band_grid(cfg.grid);
    let init = fit_initial(&local, &lsel, tcfg)?;
    separated(init.report.separation, "initial")?;
    let mut knots = Vec::with_capacity(ks.len());
    let mut fits = Vec::with_capacity(ks.len());
    for &k in &ks {
        let (n_s, _) = choose_knots_bic(&local, &init, k, tcfg)?;
        knots.push((k, n_s));
        let fit = fit_second_step(&local, &init, k, n_s, tcfg)?;
        separated(fit.report.separation, "step-two")?;
        fits.push(fit);
    }
    let run = bootstrap_curves(&local, &lsel, &knots, &grid, cfg.boot, seed, tcfg)?;
    let mut curves = Vec::with_capacity(run.keys.len());
    for (c, &(lg, k)) in run.keys.iter().enumerate() {
        let pos = ks.iter().position(|&kk| kk == k).expect("key covariate is a target");
        let fit = &fits[pos];
        let estimate = fit.curve_on(lg, &grid)?;
        let plugin_sd = sigma_plugin(fit, tcfg.family, lg, &grid)?;
        let sd_u = sd_unsmoothed(&run.curves[c])?;
        let (center_s, sd_s) = sd_smoothed(&run.curves[c], &run.counts)?;
        curves.push(CurveBands {
            group: selected[lg],
            k,
            n_interior: knots[pos].1,
            unsmoothed: build_band(&grid, &estimate, &sd_u, cfg.alpha)?,
            smoothed: build_band(&grid, &center_s, &sd_s, cfg.alpha)?,
            estimate,
            plugin_sd,
        });
    }
    Ok(ScbResult {
        grid,
        curves,
        boot_requested: run.requested,
        boot_failed: run.failed,
    })
}
