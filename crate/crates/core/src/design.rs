//! Datasets and grouped spline design matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::basis::CovariateBasis;
use crate::error::{GacmError, Result};

/// Affine map of one covariate column onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleParams {
    pub min: f64,
    pub max: f64,
}

impl RescaleParams {
    pub const IDENTITY: RescaleParams = RescaleParams { min: 0.0, max: 1.0 };

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

/// Min-max rescale each column onto `[0, 1]`.
pub fn rescale(
    columns: &[Vec<f64>],
    names: &[String],
) -> Result<(Vec<Vec<f64>>, Vec<RescaleParams>)> {
    let mut out = Vec::with_capacity(columns.len());
    let mut params = Vec::with_capacity(columns.len());
    for (k, col) in columns.iter().enumerate() {
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(GacmError::DegenerateCovariate {
                column: names.get(k).cloned().unwrap_or_else(|| format!("x{}", k + 1)),
            });
        }
        let p = RescaleParams { min, max };
        out.push(col.iter().map(|&v| p.forward(v).clamp(0.0, 1.0)).collect());
        params.push(p);
    }
    Ok((out, params))
}

/// Response, continuous covariates on `[0, 1]` and interaction covariates,
/// all stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
    rescale: Vec<RescaleParams>,
    x_names: Vec<String>,
    t_names: Vec<String>,
    linear: Vec<bool>,
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

impl Dataset {
    /// Assemble a dataset whose covariates already lie in `[0, 1]`.
    pub fn new(y: Vec<f64>, x: Vec<Vec<f64>>, t: Vec<Vec<f64>>) -> Result<Self> {
        let d = x.len();
        let p = t.len();
        Self::with_names(y, x, t, default_names("x", d), default_names("t", p))
    }

    pub fn with_names(
        y: Vec<f64>,
        x: Vec<Vec<f64>>,
        t: Vec<Vec<f64>>,
        x_names: Vec<String>,
        t_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(GacmError::InvalidArgument(format!("need at least 2 rows, got {n}")));
        }
        if x_names.len() != x.len() || t_names.len() != t.len() {
            return Err(GacmError::DimensionMismatch("column names vs columns".into()));
        }
        for (name, col) in x_names.iter().zip(&x).chain(t_names.iter().zip(&t)) {
            if col.len() != n {
                return Err(GacmError::DimensionMismatch(format!(
                    "column `{name}` has {} rows, expected {n}",
                    col.len()
                )));
            }
            if let Some(bad) = col.iter().find(|v| !v.is_finite()) {
                return Err(GacmError::Input(format!("column `{name}` holds non-finite value {bad}")));
            }
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(GacmError::Input(format!("response holds non-finite value {bad}")));
        }
        for (name, col) in x_names.iter().zip(&x) {
            if let Some(&bad) = col.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(GacmError::Input(format!(
                    "covariate `{name}` value {bad} is outside [0, 1]; rescale first"
                )));
            }
        }
        let d = x.len();
        Ok(Self {
            y,
            x,
            t,
            rescale: vec![RescaleParams::IDENTITY; d],
            x_names,
            t_names,
            linear: vec![false; d],
        })
    }

    /// Assemble a dataset from covariates on their original scale, rescaling each to `[0, 1]`.
    pub fn from_raw(
        y: Vec<f64>,
        x_raw: Vec<Vec<f64>>,
        t: Vec<Vec<f64>>,
        x_names: Vec<String>,
        t_names: Vec<String>,
    ) -> Result<Self> {
        let (x, params) = rescale(&x_raw, &x_names)?;
        let mut ds = Self::with_names(y, x, t, x_names, t_names)?;
        ds.rescale = params;
        Ok(ds)
    }

    /// Mark covariates that enter linearly instead of through splines.
    pub fn with_linear(mut self, linear: Vec<bool>) -> Result<Self> {
        if linear.len() != self.d() {
            return Err(GacmError::DimensionMismatch("linear flags vs covariates".into()));
        }
        self.linear = linear;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn d(&self) -> usize {
        self.x.len()
    }
    pub fn p(&self) -> usize {
        self.t.len()
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn x_col(&self, k: usize) -> &[f64] {
        &self.x[k]
    }
    pub fn t_col(&self, l: usize) -> &[f64] {
        &self.t[l]
    }
    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }
    pub fn t_names(&self) -> &[String] {
        &self.t_names
    }
    pub fn rescale_params(&self) -> &[RescaleParams] {
        &self.rescale
    }
    pub fn linear_flags(&self) -> &[bool] {
        &self.linear
    }

    /// Bootstrap-style row selection (indices may repeat).
    pub fn resample(&self, rows: &[usize]) -> Dataset {
        let pick = |col: &Vec<f64>| rows.iter().map(|&i| col[i]).collect::<Vec<_>>();
        Dataset {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            x: self.x.iter().map(pick).collect(),
            t: self.t.iter().map(pick).collect(),
            rescale: self.rescale.clone(),
            x_names: self.x_names.clone(),
            t_names: self.t_names.clone(),
            linear: self.linear.clone(),
        }
    }

    /// Keep only the listed interaction columns, in the given order.
    pub fn restrict_t(&self, groups: &[usize]) -> Dataset {
        Dataset {
            y: self.y.clone(),
            x: self.x.clone(),
            t: groups.iter().map(|&g| self.t[g].clone()).collect(),
            rescale: self.rescale.clone(),
            x_names: self.x_names.clone(),
            t_names: groups.iter().map(|&g| self.t_names[g].clone()).collect(),
            linear: self.linear.clone(),
        }
    }
}

/// Fit one basis per covariate with `n_interior` quantile knots of order `order`.
pub fn fit_bases(ds: &Dataset, n_interior: usize, order: usize) -> Result<Vec<CovariateBasis>> {
    (0..ds.d())
        .map(|k| {
            CovariateBasis::fit(ds.x_col(k), n_interior, order, ds.linear_flags()[k]).map_err(|e| {
                match e {
                    GacmError::DegenerateCovariate { .. } => GacmError::DegenerateCovariate {
                        column: ds.x_names()[k].clone(),
                    },
                    other => other,
                }
            })
        })
        .collect()
}

/// Column layout shared by every group: optional intercept, then one block per covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    n_groups: usize,
    intercept: bool,
    widths: Vec<usize>,
}

impl GroupLayout {
    pub fn new(n_groups: usize, intercept: bool, widths: Vec<usize>) -> Self {
        Self {
            n_groups,
            intercept,
            widths,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }
    pub fn has_intercept(&self) -> bool {
        self.intercept
    }
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn group_len(&self) -> usize {
        usize::from(self.intercept) + self.widths.iter().sum::<usize>()
    }

    pub fn n_cols(&self) -> usize {
        self.n_groups * self.group_len()
    }

    pub fn group_range(&self, g: usize) -> Range<usize> {
        let len = self.group_len();
        g * len..(g + 1) * len
    }

    pub fn group_ranges(&self) -> Vec<Range<usize>> {
        (0..self.n_groups).map(|g| self.group_range(g)).collect()
    }

    pub fn intercept_col(&self, g: usize) -> Option<usize> {
        self.intercept.then(|| g * self.group_len())
    }

    /// Columns of covariate block `block` inside group `g`.
    pub fn block_range(&self, g: usize, block: usize) -> Range<usize> {
        let start = g * self.group_len()
            + usize::from(self.intercept)
            + self.widths[..block].iter().sum::<usize>();
        start..start + self.widths[block]
    }
}

/// Dense grouped design `Z` with its layout and the bases that generated it.
#[derive(Debug, Clone)]
pub struct GroupedDesign {
    pub z: DMatrix<f64>,
    pub layout: GroupLayout,
    /// Bases for the covariate blocks, in block order.
    pub bases: Vec<CovariateBasis>,
    /// Covariate index of each block.
    pub covariates: Vec<usize>,
    /// Interaction column (index into `T`) of each group.
    pub groups: Vec<usize>,
}

impl GroupedDesign {
    pub fn group_ranges(&self) -> Vec<Range<usize>> {
        self.layout.group_ranges()
    }
}

fn assemble(
    ds: &Dataset,
    bases: &[CovariateBasis],
    covariates: &[usize],
    groups: &[usize],
    intercept: bool,
) -> Result<GroupedDesign> {
    if bases.len() != covariates.len() {
        return Err(GacmError::DimensionMismatch(format!(
            "{} bases for {} covariate blocks",
            bases.len(),
            covariates.len()
        )));
    }
    if let Some(&k) = covariates.iter().find(|&&k| k >= ds.d()) {
        return Err(GacmError::DimensionMismatch(format!("covariate index {k} >= d = {}", ds.d())));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= ds.p()) {
        return Err(GacmError::DimensionMismatch(format!("group index {g} >= p = {}", ds.p())));
    }
    let layout = GroupLayout::new(
        groups.len(),
        intercept,
        bases.iter().map(CovariateBasis::width).collect(),
    );
    let n = ds.n();
    let mut z = DMatrix::zeros(n, layout.n_cols());
    let widths = layout.widths().to_vec();
    let mut row_basis: Vec<Vec<f64>> = widths.iter().map(|&w| vec![0.0; w]).collect();
    let mut scratch: Vec<Vec<f64>> = bases.iter().map(|b| vec![0.0; b.scratch_len()]).collect();
    for i in 0..n {
        for (b, basis) in bases.iter().enumerate() {
            basis.eval_into(ds.x_col(covariates[b])[i], &mut scratch[b], &mut row_basis[b])?;
        }
        for (gi, &g) in groups.iter().enumerate() {
            let tv = ds.t_col(g)[i];
            if tv == 0.0 {
                continue;
            }
            if let Some(c) = layout.intercept_col(gi) {
                z[(i, c)] = tv;
            }
            for (b, vals) in row_basis.iter().enumerate() {
                let r = layout.block_range(gi, b);
                for (c, v) in r.zip(vals) {
                    z[(i, c)] = v * tv;
                }
            }
        }
    }
    Ok(GroupedDesign {
        z,
        layout,
        bases: bases.to_vec(),
        covariates: covariates.to_vec(),
        groups: groups.to_vec(),
    })
}

/// Full selection-stage design: every interaction column, intercept plus all covariates.
pub fn build_design(ds: &Dataset, bases: &[CovariateBasis]) -> Result<GroupedDesign> {
    let groups: Vec<usize> = (0..ds.p()).collect();
    build_group_design(ds, bases, &groups)
}

/// Selection-stage design restricted to the listed interaction columns.
pub fn build_group_design(
    ds: &Dataset,
    bases: &[CovariateBasis],
    groups: &[usize],
) -> Result<GroupedDesign> {
    if bases.len() != ds.d() {
        return Err(GacmError::DimensionMismatch(format!(
            "{} bases for {} covariates",
            bases.len(),
            ds.d()
        )));
    }
    let covariates: Vec<usize> = (0..ds.d()).collect();
    assemble(ds, bases, &covariates, groups, true)
}

/// Second-step design: one intercept-free block in covariate `k` per selected group.
pub fn build_step2_design(
    ds: &Dataset,
    selected: &[usize],
    k: usize,
    basis: &CovariateBasis,
) -> Result<GroupedDesign> {
    if selected.is_empty() {
        return Err(GacmError::NothingSelected);
    }
    assemble(ds, std::slice::from_ref(basis), &[k], selected, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{fit_centering, KnotVector};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ds(n: usize, d: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..d).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let t = (0..p)
            .map(|_| (0..n).map(|_| rng.random_range(-1i32..=1) as f64).collect())
            .collect();
        let y = (0..n).map(|_| rng.random::<f64>()).collect();
        Dataset::new(y, x, t).unwrap()
    }

    #[test]
    fn rescale_examples() {
        let names = vec!["a".to_string()];
        let (cols, params) = rescale(&[vec![2.0, 4.0, 6.0]], &names).unwrap();
        assert_eq!(cols[0], vec![0.0, 0.5, 1.0]);
        let (cols, _) = rescale(&[vec![0.0, 0.3, 1.0]], &names).unwrap();
        assert_eq!(cols[0], vec![0.0, 0.3, 1.0]);
        for (u, v) in cols[0].iter().zip([0.0, 0.3, 1.0]) {
            assert_abs_diff_eq!(params[0].inverse(params[0].forward(v)), v, epsilon = 1e-12);
            let _ = u;
        }
        let orig = [2.0, 4.0, 6.0];
        let (c, p) = rescale(&[orig.to_vec()], &names).unwrap();
        for (u, v) in c[0].iter().zip(orig) {
            assert_abs_diff_eq!(p[0].inverse(*u), v, epsilon = 1e-12);
        }
        let err = rescale(&[vec![1.0, 1.0]], &["bmi".to_string()]).unwrap_err();
        assert_eq!(err, GacmError::DegenerateCovariate { column: "bmi".into() });
    }

    #[test]
    fn layout_partitions_columns() {
        let layout = GroupLayout::new(3, true, vec![6, 6]);
        assert_eq!(layout.group_len(), 13);
        assert_eq!(layout.n_cols(), 39);
        let mut next = 0;
        for g in 0..3 {
            let r = layout.group_range(g);
            assert_eq!(r.start, next);
            assert_eq!(layout.intercept_col(g), Some(r.start));
            assert_eq!(layout.block_range(g, 0).start, r.start + 1);
            assert_eq!(layout.block_range(g, 1).end, r.end);
            next = r.end;
        }
        assert_eq!(next, 39);
    }

    #[test]
    fn gam_special_case() {
        let mut ds = random_ds(40, 1, 1, 1);
        ds.t[0] = vec![1.0; 40];
        let bases = fit_bases(&ds, 2, 4).unwrap();
        let gd = build_design(&ds, &bases).unwrap();
        assert_eq!(gd.z.ncols(), 1 + 5);
        for i in 0..40 {
            assert_eq!(gd.z[(i, 0)], 1.0);
            let row = bases[0].eval(ds.x_col(0)[i]).unwrap();
            for j in 0..5 {
                assert_eq!(gd.z[(i, 1 + j)], row[j]);
            }
        }
        for j in 1..6 {
            let mean = gd.z.column(j).sum() / 40.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn zero_interaction_zeroes_block() {
        let ds = random_ds(60, 2, 3, 2);
        let bases = fit_bases(&ds, 1, 3).unwrap();
        let gd = build_design(&ds, &bases).unwrap();
        for i in 0..60 {
            for g in 0..3 {
                let tv = ds.t_col(g)[i];
                for c in gd.layout.group_range(g) {
                    if tv == 0.0 {
                        assert_eq!(gd.z[(i, c)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn hand_computed_entries() {
        // q = 2, one interior knot at 0.5: hats on {0, 0.5, 1}
        let x = vec![0.25, 0.5, 1.0];
        let kv = KnotVector::new(2, vec![0.5]).unwrap();
        let cb = fit_centering(&kv, &x).unwrap();
        // raw rows: (0.5,0.5,0), (0,1,0), (0,0,1); mean(b1)=1/6, mean(b2)=1/2, mean(b3)=1/3
        let r2 = 0.5 / (1.0 / 6.0);
        let r3 = (1.0 / 3.0) / (1.0 / 6.0);
        let ds = Dataset::new(vec![0.0, 1.0, 0.0], vec![x.clone()], vec![vec![2.0, -1.0, 0.0]]).unwrap();
        let gd = build_design(&ds, &[CovariateBasis::Spline(cb)]).unwrap();
        let raw = [[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let tv = [2.0, -1.0, 0.0];
        for i in 0..3 {
            assert_abs_diff_eq!(gd.z[(i, 0)], tv[i]);
            assert_abs_diff_eq!(gd.z[(i, 1)], (raw[i][1] - r2 * raw[i][0]) * tv[i], epsilon = 1e-14);
            assert_abs_diff_eq!(gd.z[(i, 2)], (raw[i][2] - r3 * raw[i][0]) * tv[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn design_matches_rowwise_reconstruction() {
        let ds = random_ds(50, 2, 4, 3);
        let bases = fit_bases(&ds, 3, 4).unwrap();
        let gd = build_design(&ds, &bases).unwrap();
        for i in 0..50 {
            let rows: Vec<Vec<f64>> = (0..2).map(|k| bases[k].eval(ds.x_col(k)[i]).unwrap()).collect();
            for g in 0..4 {
                let tv = ds.t_col(g)[i];
                assert_eq!(gd.z[(i, gd.layout.intercept_col(g).unwrap())], tv);
                for k in 0..2 {
                    for (c, v) in gd.layout.block_range(g, k).zip(&rows[k]) {
                        assert_eq!(gd.z[(i, c)], v * tv);
                    }
                }
            }
        }
    }

    #[test]
    fn step2_design_shapes() {
        let ds = random_ds(80, 2, 6, 4);
        let bases = fit_bases(&ds, 3, 4).unwrap();
        let gd = build_step2_design(&ds, &[0, 2, 3, 5], 1, &bases[1]).unwrap();
        assert_eq!(gd.z.ncols(), 24);
        assert!(!gd.layout.has_intercept());
        assert!(matches!(
            build_step2_design(&ds, &[], 0, &bases[0]),
            Err(GacmError::NothingSelected)
        ));

        let mut ds1 = random_ds(30, 1, 1, 5);
        ds1.t[0] = vec![1.0; 30];
        let b = fit_bases(&ds1, 1, 4).unwrap();
        let gd1 = build_step2_design(&ds1, &[0], 0, &b[0]).unwrap();
        for i in 0..30 {
            let row = b[0].eval(ds1.x_col(0)[i]).unwrap();
            for j in 0..4 {
                assert_eq!(gd1.z[(i, j)], row[j]);
            }
        }
    }

    #[test]
    fn linear_covariates_use_one_centered_column() {
        let ds = random_ds(30, 2, 2, 6).with_linear(vec![false, true]).unwrap();
        let bases = fit_bases(&ds, 2, 4).unwrap();
        assert_eq!(bases[1].width(), 1);
        let gd = build_design(&ds, &bases).unwrap();
        assert_eq!(gd.layout.group_len(), 1 + 5 + 1);
        let mean: f64 = ds.x_col(1).iter().sum::<f64>() / 30.0;
        let c = gd.layout.block_range(0, 1).start;
        for i in 0..30 {
            assert_abs_diff_eq!(gd.z[(i, c)], (ds.x_col(1)[i] - mean) * ds.t_col(0)[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_unscaled_covariates() {
        let err = Dataset::new(vec![0.0, 1.0], vec![vec![0.0, 2.0]], vec![vec![1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, GacmError::Input(_)));
    }
}
