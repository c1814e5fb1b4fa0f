//! Synthetic GACM data, selection metrics, the per-SNP screening baseline and
//! the replicated benchmark.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bands::{confidence_bands, ScbConfig};
use crate::design::Dataset;
use crate::error::{GacmError, Result};
use crate::family::Family;
use crate::rng::{child_seed, stream_rng};
use crate::select::{select_model, SelectConfig};
use crate::solver::{fit_unpenalized, Problem, SolverConfig};
use crate::twostep::AdditiveCoefficients;

/// Closed-form coefficient curves on `[0, 1]`, each with zero mean under U(0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Curve {
    Zero,
    /// `amp cos(2 pi x)`
    Cos { amp: f64 },
    /// `amp sin(2 pi x)`
    Sin { amp: f64 },
    /// `amp {sin(2 pi x) + cos(2 pi x)}`
    SinPlusCos { amp: f64 },
    /// `slope (x - 1/2)`
    Linear { slope: f64 },
    /// `amp {(2x - 1)^2 - 1/3}`
    Quadratic { amp: f64 },
}

impl Curve {
    pub fn eval(&self, x: f64) -> f64 {
        let w = 2.0 * PI * x;
        match *self {
            Curve::Zero => 0.0,
            Curve::Cos { amp } => amp * w.cos(),
            Curve::Sin { amp } => amp * w.sin(),
            Curve::SinPlusCos { amp } => amp * (w.sin() + w.cos()),
            Curve::Linear { slope } => slope * (x - 0.5),
            Curve::Quadratic { amp } => amp * ((2.0 * x - 1.0).powi(2) - 1.0 / 3.0),
        }
    }
}

/// True model behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    /// Interaction columns with nonzero coefficient functions.
    pub signal: Vec<usize>,
    /// Intercepts `alpha_{l0}`, aligned with `signal`.
    pub intercepts: Vec<f64>,
    /// `curves[j][k]` is `alpha_{l k}` for `l = signal[j]`.
    pub curves: Vec<Vec<Curve>>,
    pub seed: u64,
    pub snp: SnpConfig,
}

impl TruthSpec {
    pub fn s(&self) -> usize {
        self.signal.len()
    }

    fn slot(&self, group: usize) -> Option<usize> {
        self.signal.iter().position(|&g| g == group)
    }

    /// `alpha_l(x) = alpha_{l0} + sum_k alpha_{lk}(x_k)`.
    pub fn coefficient(&self, group: usize, x: &[f64]) -> f64 {
        match self.slot(group) {
            Some(j) => self.intercepts[j] + self.curves[j].iter().zip(x).map(|(c, &v)| c.eval(v)).sum::<f64>(),
            None => 0.0,
        }
    }

    pub fn eta(&self, ds: &Dataset) -> Vec<f64> {
        let mut xi = vec![0.0; ds.d()];
        (0..ds.n())
            .map(|i| {
                for (k, v) in xi.iter_mut().enumerate() {
                    *v = ds.x_col(k)[i];
                }
                self.signal
                    .iter()
                    .map(|&g| self.coefficient(g, &xi) * ds.t_col(g)[i])
                    .sum()
            })
            .collect()
    }

    pub fn mean(&self, ds: &Dataset) -> Vec<f64> {
        self.eta(ds).into_iter().map(|e| self.family.mean(e)).collect()
    }
}

impl AdditiveCoefficients for TruthSpec {
    fn intercept(&self, group: usize) -> Option<f64> {
        (group < self.p).then(|| self.slot(group).map_or(0.0, |j| self.intercepts[j]))
    }

    fn component(&self, group: usize, k: usize, x: f64) -> Option<f64> {
        if group >= self.p || k >= self.d {
            return None;
        }
        Some(self.slot(group).map_or(0.0, |j| self.curves[j][k].eval(x)))
    }

    fn support(&self) -> Vec<usize> {
        self.signal.clone()
    }
}

/// Genotype generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnpConfig {
    pub maf: f64,
    pub block_rho: f64,
    pub block_size: usize,
}

impl Default for SnpConfig {
    fn default() -> Self {
        Self {
            maf: 0.3,
            block_rho: 0.3,
            block_size: 10,
        }
    }
}

/// Genotypes coded `minor allele count - 1`, column-major (`p` columns of length `n`).
///
/// Each block of `block_size` columns thresholds an equicorrelated Gaussian
/// vector at the Hardy-Weinberg genotype quantiles.
pub fn gen_snps(n: usize, p: usize, cfg: &SnpConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(cfg.maf > 0.0 && cfg.maf <= 0.5) {
        return Err(GacmError::InvalidArgument(format!("maf must be in (0, 0.5], got {}", cfg.maf)));
    }
    if !(0.0..1.0).contains(&cfg.block_rho) {
        return Err(GacmError::InvalidArgument(format!("block_rho must be in [0, 1), got {}", cfg.block_rho)));
    }
    if cfg.block_size == 0 {
        return Err(GacmError::InvalidArgument("block_size must be positive".into()));
    }
    let std = Normal::standard();
    let q = 1.0 - cfg.maf;
    let cut0 = std.inverse_cdf(q * q);
    let cut1 = std.inverse_cdf(1.0 - cfg.maf * cfg.maf);
    let shared = cfg.block_rho.sqrt();
    let own = (1.0 - cfg.block_rho).sqrt();
    let mut rng = stream_rng(seed, 1);
    let mut cols = vec![vec![0.0; n]; p];
    for start in (0..p).step_by(cfg.block_size) {
        let end = (start + cfg.block_size).min(p);
        for i in 0..n {
            let f: f64 = rng.sample(StandardNormal);
            for col in &mut cols[start..end] {
                let e: f64 = rng.sample(StandardNormal);
                let z = shared * f + own * e;
                col[i] = if z < cut0 {
                    -1.0
                } else if z < cut1 {
                    0.0
                } else {
                    1.0
                };
            }
        }
    }
    Ok(cols)
}

/// Simulation settings for the logistic interaction design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleConfig {
    pub n: usize,
    pub p: usize,
    pub snp: SnpConfig,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self {
            n: 300,
            p: 200,
            snp: SnpConfig::default(),
        }
    }
}

/// Truth of the logistic interaction design with signal in the first four interaction columns.
pub fn example1_truth(n: usize, p: usize, seed: u64, snp: SnpConfig) -> TruthSpec {
    let a11 = Curve::Cos { amp: 4.0 };
    let a12 = Curve::Quadratic { amp: 5.0 };
    TruthSpec {
        family: Family::BernoulliLogit,
        n,
        p,
        d: 2,
        signal: vec![0, 1, 2, 3],
        intercepts: vec![0.5; 4],
        curves: vec![
            vec![a11, a12],
            vec![Curve::Linear { slope: 6.0 }, Curve::SinPlusCos { amp: 4.0 }],
            vec![Curve::Sin { amp: 4.0 }, Curve::Linear { slope: 6.0 }],
            vec![a11, a12],
        ],
        seed,
        snp,
    }
}

pub fn gen_example1(n: usize, p: usize, seed: u64) -> Result<(Dataset, TruthSpec)> {
    gen_example1_with(
        &ExampleConfig {
            n,
            p,
            ..Default::default()
        },
        seed,
    )
}

pub fn gen_example1_with(cfg: &ExampleConfig, seed: u64) -> Result<(Dataset, TruthSpec)> {
    if cfg.p < 4 {
        return Err(GacmError::InvalidArgument("example 1 needs p >= 4".into()));
    }
    if cfg.n < 2 {
        return Err(GacmError::InvalidArgument("example 1 needs n >= 2".into()));
    }
    let truth = example1_truth(cfg.n, cfg.p, seed, cfg.snp);
    let mut xrng = stream_rng(seed, 0);
    let x: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..cfg.n).map(|_| xrng.random::<f64>()).collect())
        .collect();
    let t = gen_snps(cfg.n, cfg.p, &cfg.snp, seed)?;
    let placeholder = Dataset::new(vec![0.0; cfg.n], x.clone(), t.clone())?;
    let mu = truth.mean(&placeholder);
    let mut yrng = stream_rng(seed, 2);
    let y = mu
        .iter()
        .map(|&m| {
            let b = Bernoulli::new(m).expect("mean lies in (0, 1)");
            f64::from(u8::from(b.sample(&mut yrng)))
        })
        .collect();
    Ok((Dataset::new(y, x, t)?, truth))
}


/// Selection quality of one fitted model against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub correct: bool,
    pub over: bool,
    pub incorrect: bool,
    pub tp: usize,
    pub fp: usize,
    pub mr: f64,
}

/// Compare a selected set of interaction columns and fitted means with the truth.
pub fn metrics(selected: &[usize], truth: &TruthSpec, mu_hat: &[f64], mu: &[f64]) -> Result<SelectionMetrics> {
    if mu_hat.len() != mu.len() || mu.is_empty() {
        return Err(GacmError::DimensionMismatch(format!(
            "fitted means {} vs true means {}",
            mu_hat.len(),
            mu.len()
        )));
    }
    let mut sel = selected.to_vec();
    sel.sort_unstable();
    sel.dedup();
    let tp = sel.iter().filter(|g| truth.signal.contains(g)).count();
    let fp = sel.len() - tp;
    let incorrect = tp < truth.s();
    let correct = !incorrect && fp == 0;
    let mr = mu_hat.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / mu.len() as f64;
    Ok(SelectionMetrics {
        correct,
        over: !incorrect && fp > 0,
        incorrect,
        tp,
        fp,
        mr,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x - ma, y - mb);
        sab += u * v;
        saa += u * u;
        sbb += v * v;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Effective number of independent tests among `cols`, `1 + M^{-1} sum_{j != k} (1 - r_jk^2)`.
///
/// Constant columns count as uncorrelated with everything.
pub fn m_eff(cols: &[Vec<f64>]) -> f64 {
    let m = cols.len();
    if m == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for j in 0..m {
        for k in j + 1..m {
            let r = pearson(&cols[j], &cols[k]);
            sum += 2.0 * (1.0 - r * r);
        }
    }
    1.0 + sum / m as f64
}

/// Outcome of the per-column likelihood-ratio screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub selected: Vec<usize>,
    pub p_values: Vec<f64>,
    pub m_eff: f64,
    pub threshold: f64,
    /// Linear predictor of the joint logistic refit on the selected columns.
    pub eta: Vec<f64>,
}

fn logistic_fit(y: &[f64], cols: &[&[f64]], solver: &SolverConfig) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let mut z = DMatrix::from_element(n, cols.len() + 1, 1.0);
    for (j, c) in cols.iter().enumerate() {
        z.set_column(j + 1, &DVector::from_column_slice(c));
    }
    let offset = vec![0.0; n];
    let groups = [0..z.ncols()];
    let problem = Problem::new(&z, y, Family::BernoulliLogit, &offset, &groups)?;
    let (coef, _) = fit_unpenalized(&problem, None, solver)?;
    let eta = problem.eta(coef.coef());
    Ok((problem.loss(&eta), eta))
}

/// Per-column logistic models with main effects and `X_k T_l` interactions,
/// tested against the `X`-only model on `d + 1` degrees of freedom at level `alpha0 / M_eff`.
pub fn screening_baseline(ds: &Dataset, family: Family, alpha0: f64, solver: &SolverConfig) -> Result<ScreeningResult> {
    if family != Family::BernoulliLogit {
        return Err(GacmError::Unsupported(format!("screening needs the logit family, got {family}")));
    }
    if ds.d() == 0 {
        return Err(GacmError::InvalidArgument("screening needs at least one covariate".into()));
    }
    if !(alpha0 > 0.0 && alpha0 < 1.0) {
        return Err(GacmError::InvalidArgument(format!("alpha0 must be in (0, 1), got {alpha0}")));
    }
    let d = ds.d();
    let n = ds.n();
    let xs: Vec<&[f64]> = (0..d).map(|k| ds.x_col(k)).collect();
    let (null_loss, null_eta) = logistic_fit(ds.y(), &xs, solver)?;
    let chi = ChiSquared::new((d + 1) as f64).expect("positive degrees of freedom");
    let inter = |l: usize| -> Vec<Vec<f64>> {
        let t = ds.t_col(l);
        (0..d).map(|k| (0..n).map(|i| ds.x_col(k)[i] * t[i]).collect()).collect()
    };
    let p_values: Vec<f64> = (0..ds.p())
        .into_par_iter()
        .map(|l| {
            let prods = inter(l);
            let mut cols = xs.clone();
            cols.push(ds.t_col(l));
            cols.extend(prods.iter().map(|c| c.as_slice()));
            match logistic_fit(ds.y(), &cols, solver) {
                Ok((loss, _)) => {
                    let lrt = (2.0 * (null_loss - loss)).max(0.0);
                    chi.sf(lrt)
                }
                Err(e) => {
                    log::warn!("screening fit for column {l} failed: {e}");
                    1.0
                }
            }
        })
        .collect();
    let t_cols: Vec<Vec<f64>> = (0..ds.p()).map(|l| ds.t_col(l).to_vec()).collect();
    let m = m_eff(&t_cols);
    let threshold = alpha0 / m;
    let selected: Vec<usize> = (0..ds.p()).filter(|&l| p_values[l] < threshold).collect();
    let eta = if selected.is_empty() {
        null_eta
    } else {
        let prods: Vec<Vec<Vec<f64>>> = selected.iter().map(|&l| inter(l)).collect();
        let mut cols = xs.clone();
        for (&l, pr) in selected.iter().zip(&prods) {
            cols.push(ds.t_col(l));
            cols.extend(pr.iter().map(|c| c.as_slice()));
        }
        logistic_fit(ds.y(), &cols, solver)?.1
    };
    Ok(ScreeningResult {
        selected,
        p_values,
        m_eff: m,
        threshold,
        eta,
    })
}

/// Columns the bands are built for in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSupport {
    /// The adaptive-group-lasso selection.
    #[default]
    Selected,
    /// The true signal columns, skipping selection.
    Truth,
}

/// Replicated benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub reps: usize,
    pub seed: u64,
    pub example: ExampleConfig,
    pub select: SelectConfig,
    pub screening: bool,
    pub alpha0: f64,
    pub bands: bool,
    pub band_support: BandSupport,
    pub scb: ScbConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            reps: 100,
            seed: 0,
            example: ExampleConfig::default(),
            select: SelectConfig::default(),
            screening: true,
            alpha0: 0.05,
            bands: true,
            band_support: BandSupport::Selected,
            scb: ScbConfig {
                covariates: vec![0],
                ..ScbConfig::default()
            },
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(GacmError::InvalidArgument("reps must be >= 1".into()));
        }
        self.select.validate()
    }
}

/// Band outcome for one true signal curve in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCoverage {
    pub group: usize,
    pub k: usize,
    pub unsmoothed: bool,
    pub smoothed: bool,
    pub sd_median_unsmoothed: f64,
    pub sd_mean_unsmoothed: f64,
    pub sd_median_smoothed: f64,
    pub sd_mean_smoothed: f64,
}

/// Everything recorded about one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub agl_selected: Vec<usize>,
    pub gl_selected: Vec<usize>,
    pub agl: Option<SelectionMetrics>,
    pub gl: Option<SelectionMetrics>,
    pub screening_selected: Vec<usize>,
    pub screening: Option<SelectionMetrics>,
    pub bands_error: Option<String>,
    pub coverage: Vec<CurveCoverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub method: String,
    pub reps: usize,
    pub c: f64,
    pub o: f64,
    pub i: f64,
    pub tp: f64,
    pub fp: f64,
    pub mr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub curve: String,
    pub group: usize,
    pub k: usize,
    /// Replications in which bands were built for the curve's column.
    pub eligible: usize,
    /// Empty when no replication is eligible.
    pub cov_unsmoothed: Option<f64>,
    pub sd_median_unsmoothed: Option<f64>,
    pub sd_mean_unsmoothed: Option<f64>,
    pub cov_smoothed: Option<f64>,
    pub sd_median_smoothed: Option<f64>,
    pub sd_mean_smoothed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub records: Vec<RepRecord>,
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn means(fit: &[f64], family: Family) -> Vec<f64> {
    fit.iter().map(|&e| family.mean(e)).collect()
}

fn run_rep(cfg: &BenchConfig, rep: usize) -> RepRecord {
    let seed = child_seed(cfg.seed, rep as u64);
    let mut rec = RepRecord {
        rep,
        seed,
        error: None,
        agl_selected: Vec::new(),
        gl_selected: Vec::new(),
        agl: None,
        gl: None,
        screening_selected: Vec::new(),
        screening: None,
        bands_error: None,
        coverage: Vec::new(),
    };
    if let Err(e) = fill_rep(cfg, seed, &mut rec) {
        log::warn!("replication {rep} failed: {e}");
        rec.error = Some(e.to_string());
    }
    rec
}

fn fill_rep(cfg: &BenchConfig, seed: u64, rec: &mut RepRecord) -> Result<()> {
    let (ds, truth) = gen_example1_with(&cfg.example, seed)?;
    let mu = truth.mean(&ds);
    let fam = truth.family;
    let sel = select_model(&ds, &SelectConfig { family: fam, ..cfg.select.clone() })?;
    rec.gl_selected = sel.stage1_selected();
    rec.gl = Some(metrics(&rec.gl_selected, &truth, &means(&sel.stage1().eta, fam), &mu)?);
    rec.agl_selected = sel.selected.clone();
    rec.agl = Some(metrics(&rec.agl_selected, &truth, &means(&sel.final_eta(), fam), &mu)?);
    if cfg.screening {
        let scr = screening_baseline(&ds, fam, cfg.alpha0, &cfg.select.solver)?;
        rec.screening = Some(metrics(&scr.selected, &truth, &means(&scr.eta, fam), &mu)?);
        rec.screening_selected = scr.selected;
    }
    let support = match cfg.band_support {
        BandSupport::Selected => &sel.selected,
        BandSupport::Truth => &truth.signal,
    };
    if cfg.bands && !support.is_empty() {
        let mut scb = cfg.scb.clone();
        scb.twostep.family = fam;
        match confidence_bands(&ds, support, &scb, child_seed(seed, 1)) {
            Ok(res) => {
                for cb in res.curves.iter().filter(|cb| truth.signal.contains(&cb.group)) {
                    let t: Vec<f64> = res
                        .grid
                        .iter()
                        .map(|&x| truth.component(cb.group, cb.k, x).expect("group and covariate in range"))
                        .collect();
                    rec.coverage.push(CurveCoverage {
                        group: cb.group,
                        k: cb.k,
                        unsmoothed: cb.unsmoothed.covers(&t),
                        smoothed: cb.smoothed.covers(&t),
                        sd_median_unsmoothed: median(&cb.unsmoothed.sd),
                        sd_mean_unsmoothed: mean(&cb.unsmoothed.sd),
                        sd_median_smoothed: median(&cb.smoothed.sd),
                        sd_mean_smoothed: mean(&cb.smoothed.sd),
                    });
                }
            }
            Err(e) => {
                log::warn!("bands failed: {e}");
                rec.bands_error = Some(e.to_string());
            }
        }
    }
    Ok(())
}

fn table1_row(method: &str, ms: &[SelectionMetrics]) -> Table1Row {
    let r = ms.len().max(1) as f64;
    let frac = |f: fn(&SelectionMetrics) -> bool| ms.iter().filter(|m| f(m)).count() as f64 / r;
    Table1Row {
        method: method.into(),
        reps: ms.len(),
        c: frac(|m| m.correct),
        o: frac(|m| m.over),
        i: frac(|m| m.incorrect),
        tp: ms.iter().map(|m| m.tp as f64).sum::<f64>() / r,
        fp: ms.iter().map(|m| m.fp as f64).sum::<f64>() / r,
        mr: ms.iter().map(|m| m.mr).sum::<f64>() / r,
    }
}

/// Summary tables from a per-replication log; failed replications are skipped.
pub fn aggregate(records: &[RepRecord], truth: &TruthSpec, covariates: &[usize]) -> (Vec<Table1Row>, Vec<Table2Row>) {
    let ok: Vec<&RepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mut t1 = vec![
        table1_row("AGL", &ok.iter().filter_map(|r| r.agl).collect::<Vec<_>>()),
        table1_row("GL", &ok.iter().filter_map(|r| r.gl).collect::<Vec<_>>()),
    ];
    let scr: Vec<SelectionMetrics> = ok.iter().filter_map(|r| r.screening).collect();
    if !scr.is_empty() {
        t1.push(table1_row("Screening", &scr));
    }
    let mut t2 = Vec::new();
    for &k in covariates {
        for &g in &truth.signal {
            let cs: Vec<&CurveCoverage> = ok
                .iter()
                .flat_map(|r| r.coverage.iter())
                .filter(|c| c.group == g && c.k == k)
                .collect();
            let e = cs.len();
            let avg = |f: fn(&CurveCoverage) -> f64| {
                (e > 0).then(|| cs.iter().map(|c| f(c)).sum::<f64>() / e as f64)
            };
            t2.push(Table2Row {
                curve: format!("alpha_{}{}", g + 1, k + 1),
                group: g,
                k,
                eligible: e,
                cov_unsmoothed: avg(|c| f64::from(u8::from(c.unsmoothed))),
                sd_median_unsmoothed: avg(|c| c.sd_median_unsmoothed),
                sd_mean_unsmoothed: avg(|c| c.sd_mean_unsmoothed),
                cov_smoothed: avg(|c| f64::from(u8::from(c.smoothed))),
                sd_median_smoothed: avg(|c| c.sd_median_smoothed),
                sd_mean_smoothed: avg(|c| c.sd_mean_smoothed),
            });
        }
    }
    (t1, t2)
}

/// Run all replications (in parallel, deterministic per seed) and summarize them.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let records: Vec<RepRecord> = (0..cfg.reps).into_par_iter().map(|r| run_rep(cfg, r)).collect();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed == cfg.reps {
        return Err(GacmError::Numerical(format!("all {failed} replications failed")));
    }
    let truth = example1_truth(cfg.example.n, cfg.example.p, cfg.seed, cfg.example.snp);
    let covariates = if cfg.scb.covariates.is_empty() {
        (0..truth.d).collect()
    } else {
        cfg.scb.covariates.clone()
    };
    let (table1, table2) = aggregate(&records, &truth, &covariates);
    Ok(BenchResult {
        config: cfg.clone(),
        records,
        table1,
        table2,
    })
}
