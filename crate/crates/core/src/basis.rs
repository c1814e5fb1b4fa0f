//! Knot placement and B-spline evaluation on the unit interval.
//!
//! Raw B-splines are evaluated with the triangular Cox–de Boor scheme. The
//! centered system subtracts a multiple of the first raw function from every
//! other one so that each centered function has sample mean zero on the data
//! it was fitted to; the first centered function vanishes identically and is
//! therefore dropped, leaving `J - 1` columns per covariate.

use serde::{Deserialize, Serialize};

use crate::error::{GacmError, Result};

/// Order `q` spline knots on `[0, 1]`: both boundaries carry multiplicity `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    order: usize,
    interior: Vec<f64>,
    /// Interior knot count asked for before tied quantiles were collapsed.
    requested_interior: usize,
}

impl KnotVector {
    /// Build a knot vector from explicit interior knots.
    pub fn new(order: usize, interior: Vec<f64>) -> Result<Self> {
        if order < 2 {
            return Err(GacmError::InvalidArgument(format!(
                "spline order must be at least 2, got {order}"
            )));
        }
        for (i, &k) in interior.iter().enumerate() {
            if !(k > 0.0 && k < 1.0) {
                return Err(GacmError::InvalidArgument(format!(
                    "interior knot {k} is not inside (0, 1)"
                )));
            }
            if i > 0 && interior[i - 1] >= k {
                return Err(GacmError::InvalidArgument(
                    "interior knots must be strictly increasing".into(),
                ));
            }
        }
        let requested_interior = interior.len();
        Ok(Self {
            order,
            interior,
            requested_interior,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn requested_interior(&self) -> usize {
        self.requested_interior
    }

    /// True when quantile ties forced fewer interior knots than requested.
    pub fn was_reduced(&self) -> bool {
        self.requested_interior != self.interior.len()
    }

    /// Number of raw basis functions, `J = N + q`.
    pub fn n_basis(&self) -> usize {
        self.interior.len() + self.order
    }

    /// The full non-decreasing knot sequence of length `N + 2q`.
    pub fn full_knots(&self) -> Vec<f64> {
        let q = self.order;
        let mut t = Vec::with_capacity(self.interior.len() + 2 * q);
        t.extend(std::iter::repeat_n(0.0, q));
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat_n(1.0, q));
        t
    }

    /// Evaluate all `J` raw B-splines at `x` into `out`.
    pub fn eval_raw_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&x) {
            return Err(GacmError::Domain { value: x });
        }
        let j_n = self.n_basis();
        debug_assert_eq!(out.len(), j_n);
        out.iter_mut().for_each(|v| *v = 0.0);

        let degree = self.order - 1;
        let t = self.full_knots();
        // span s with t[s] <= x < t[s+1], clamped so x = 1 uses the last piece
        let span = if x >= 1.0 {
            j_n - 1
        } else {
            let pos = self.interior.partition_point(|&k| k <= x);
            degree + pos
        };

        let mut vals = vec![0.0; self.order];
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        vals[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = vals[r] / denom;
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        out[span - degree..=span].copy_from_slice(&vals);
        Ok(())
    }

    pub fn eval_raw(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_basis()];
        self.eval_raw_into(x, &mut out)?;
        Ok(out)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Place `n_interior` knots at the `j / (N + 1)` sample quantiles of `column`.
///
/// Tied quantiles (and quantiles landing on the boundary) are collapsed, in
/// which case the returned vector has fewer interior knots than requested and
/// reports so through [`KnotVector::was_reduced`].
pub fn make_knots(column: &[f64], n_interior: usize, order: usize) -> Result<KnotVector> {
    if order < 2 {
        return Err(GacmError::InvalidArgument(format!(
            "spline order must be at least 2, got {order}"
        )));
    }
    if column.is_empty() {
        return Err(GacmError::InvalidArgument("empty covariate column".into()));
    }
    if let Some(&bad) = column.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(GacmError::Domain { value: bad });
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(GacmError::DegenerateCovariate {
            column: "<knot placement>".into(),
        });
    }

    let mut interior: Vec<f64> = Vec::with_capacity(n_interior);
    for j in 1..=n_interior {
        let qv = quantile_sorted(&sorted, j as f64 / (n_interior + 1) as f64);
        if qv > 0.0 && qv < 1.0 && interior.last().is_none_or(|&last| qv > last) {
            interior.push(qv);
        }
    }
    if interior.len() < n_interior {
        log::warn!(
            "tied quantiles: reduced interior knots from {} to {}",
            n_interior,
            interior.len()
        );
    }
    let mut kv = KnotVector::new(order, interior)?;
    kv.requested_interior = n_interior;
    Ok(kv)
}

/// Raw B-splines recentered to have sample mean zero on the fitting column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredBasis {
    knots: KnotVector,
    scale: f64,
    centering_ratios: Vec<f64>,
}

impl CenteredBasis {
    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn centering_ratios(&self) -> &[f64] {
        &self.centering_ratios
    }

    /// Number of active centered functions, `J - 1`.
    pub fn width(&self) -> usize {
        self.knots.n_basis() - 1
    }

    /// Evaluate the active centered functions (`j = 2..J`) at `x` into `out`.
    ///
    /// `scratch` must hold `J` values.
    pub fn eval_into(&self, x: f64, scratch: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.knots.eval_raw_into(x, scratch)?;
        let b1 = scratch[0];
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.scale * (scratch[j + 1] - self.centering_ratios[j + 1] * b1);
        }
        Ok(())
    }

    pub fn eval_centered(&self, x: f64) -> Result<Vec<f64>> {
        let mut scratch = vec![0.0; self.knots.n_basis()];
        let mut out = vec![0.0; self.width()];
        self.eval_into(x, &mut scratch, &mut out)?;
        Ok(out)
    }
}

/// Estimate the centering ratios `mean(b_j) / mean(b_1)` on `column`.
pub fn fit_centering(knots: &KnotVector, column: &[f64]) -> Result<CenteredBasis> {
    let j_n = knots.n_basis();
    let mut sums = vec![0.0; j_n];
    let mut buf = vec![0.0; j_n];
    for &x in column {
        knots.eval_raw_into(x, &mut buf)?;
        for (s, b) in sums.iter_mut().zip(&buf) {
            *s += b;
        }
    }
    if sums[0] <= 0.0 {
        return Err(GacmError::Centering);
    }
    let centering_ratios = sums.iter().map(|s| s / sums[0]).collect();
    let n_int = knots.n_interior();
    let scale = if n_int == 0 { 1.0 } else { (n_int as f64).sqrt() };
    Ok(CenteredBasis {
        knots: knots.clone(),
        scale,
        centering_ratios,
    })
}

/// How one continuous covariate enters every coefficient function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateBasis {
    Spline(CenteredBasis),
    /// Discrete covariates enter linearly through a single centered column.
    Linear { mean: f64 },
}

impl CovariateBasis {
    pub fn width(&self) -> usize {
        match self {
            CovariateBasis::Spline(cb) => cb.width(),
            CovariateBasis::Linear { .. } => 1,
        }
    }

    /// Raw basis dimension used for degrees-of-freedom counts (`J`, or 1 if linear).
    pub fn raw_dim(&self) -> usize {
        match self {
            CovariateBasis::Spline(cb) => cb.knots().n_basis(),
            CovariateBasis::Linear { .. } => 1,
        }
    }

    pub fn scratch_len(&self) -> usize {
        match self {
            CovariateBasis::Spline(cb) => cb.knots().n_basis(),
            CovariateBasis::Linear { .. } => 0,
        }
    }

    pub fn eval_into(&self, x: f64, scratch: &mut [f64], out: &mut [f64]) -> Result<()> {
        match self {
            CovariateBasis::Spline(cb) => cb.eval_into(x, scratch, out),
            CovariateBasis::Linear { mean } => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(GacmError::Domain { value: x });
                }
                out[0] = x - mean;
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let mut scratch = vec![0.0; self.scratch_len()];
        let mut out = vec![0.0; self.width()];
        self.eval_into(x, &mut scratch, &mut out)?;
        Ok(out)
    }

    /// Fit a spline basis (quantile knots + centering) or a linear one on `column`.
    pub fn fit(column: &[f64], n_interior: usize, order: usize, linear: bool) -> Result<Self> {
        if linear {
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            return Ok(CovariateBasis::Linear { mean });
        }
        let kv = make_knots(column, n_interior, order)?;
        Ok(CovariateBasis::Spline(fit_centering(&kv, column)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// B-spline value from the divided-difference definition
    /// `b_j(x) = (t_{j+q} - t_j) [t_j..t_{j+q}] (. - x)_+^{q-1}`,
    /// with derivatives standing in for coincident knots.
    fn divided_difference_bspline(t: &[f64], j: usize, q: usize, x: f64) -> f64 {
        let deg = q - 1;
        let deriv = |s: f64, r: usize| -> f64 {
            let base = s - x;
            if base <= 0.0 {
                return 0.0;
            }
            let mut coef = 1.0;
            for m in 0..r {
                coef *= (deg - m) as f64;
            }
            coef * base.powi((deg - r) as i32)
        };
        let pts = &t[j..=j + q];
        let m = pts.len();
        // table[i] holds [pts_i .. pts_{i+r}] f for the current r
        let mut table: Vec<f64> = pts.iter().map(|&s| deriv(s, 0)).collect();
        let mut fact = 1.0;
        for r in 1..m {
            fact *= r as f64;
            for i in 0..m - r {
                table[i] = if pts[i + r] == pts[i] {
                    deriv(pts[i], r) / fact
                } else {
                    (table[i + 1] - table[i]) / (pts[i + r] - pts[i])
                };
            }
        }
        (pts[q] - pts[0]) * table[0]
    }

    fn uniform_column(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn no_interior_knots_gives_order_many_functions() {
        let kv = make_knots(&uniform_column(50, 1), 0, 4).unwrap();
        assert_eq!(kv.n_basis(), 4);
        assert_eq!(kv.full_knots(), vec![0., 0., 0., 0., 1., 1., 1., 1.]);
    }

    #[test]
    fn quantile_knots_on_uniform_sample() {
        let col = uniform_column(300, 7);
        let kv = make_knots(&col, 3, 4).unwrap();
        assert_eq!(kv.n_basis(), 7);
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        for (i, &k) in kv.interior().iter().enumerate() {
            let p = (i + 1) as f64 / 4.0;
            assert_abs_diff_eq!(k, quantile_sorted(&sorted, p), epsilon = 1e-15);
            assert!((k - p).abs() < 0.1, "knot {k} far from {p}");
        }
    }

    #[test]
    fn ties_reduce_interior_knots() {
        let mut col = vec![0.5; 40];
        col.push(0.0);
        col.push(1.0);
        let kv = make_knots(&col, 3, 4).unwrap();
        assert_eq!(kv.n_interior(), 1);
        assert!(kv.was_reduced());
        assert_eq!(kv.requested_interior(), 3);
    }

    #[test]
    fn constant_column_rejected() {
        let err = make_knots(&[0.3; 10], 2, 4).unwrap_err();
        assert!(matches!(err, GacmError::DegenerateCovariate { .. }));
    }

    #[test]
    fn linear_hats_by_hand() {
        let kv = KnotVector::new(2, vec![0.5]).unwrap();
        let b = kv.eval_raw(0.25).unwrap();
        assert_eq!(b.len(), 3);
        assert_abs_diff_eq!(b[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn endpoints() {
        let kv = KnotVector::new(4, vec![0.2, 0.5, 0.7]).unwrap();
        let b0 = kv.eval_raw(0.0).unwrap();
        assert_eq!(b0[0], 1.0);
        assert!(b0[1..].iter().all(|&v| v == 0.0));
        let b1 = kv.eval_raw(1.0).unwrap();
        assert_abs_diff_eq!(b1[kv.n_basis() - 1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn outside_domain_is_an_error() {
        let kv = KnotVector::new(3, vec![0.5]).unwrap();
        assert!(matches!(kv.eval_raw(1.5), Err(GacmError::Domain { .. })));
        assert!(matches!(kv.eval_raw(-0.1), Err(GacmError::Domain { .. })));
    }

    #[test]
    fn agrees_with_divided_difference_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for q in [2usize, 3, 4] {
            for interior in [vec![], vec![0.4], vec![0.2, 0.45, 0.8]] {
                let kv = KnotVector::new(q, interior).unwrap();
                let t = kv.full_knots();
                for _ in 0..200 {
                    let x: f64 = rng.random_range(0.001..0.999);
                    let fast = kv.eval_raw(x).unwrap();
                    for (j, &v) in fast.iter().enumerate() {
                        let slow = divided_difference_bspline(&t, j, q, x);
                        assert!(
                            (v - slow).abs() < 1e-8,
                            "q={q} j={j} x={x}: {v} vs {slow}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn centered_functions_have_zero_sample_mean() {
        let col = uniform_column(400, 3);
        let kv = make_knots(&col, 3, 4).unwrap();
        let cb = fit_centering(&kv, &col).unwrap();
        assert_eq!(cb.width(), 6);
        assert_abs_diff_eq!(cb.scale(), 3f64.sqrt(), epsilon = 1e-15);
        let mut means = vec![0.0; cb.width()];
        for &x in &col {
            for (m, v) in means.iter_mut().zip(cb.eval_centered(x).unwrap()) {
                *m += v / col.len() as f64;
            }
        }
        assert!(means.iter().all(|m| m.abs() < 1e-9), "{means:?}");
    }

    #[test]
    fn first_centered_function_vanishes() {
        let col = uniform_column(100, 5);
        let kv = make_knots(&col, 2, 3).unwrap();
        let cb = fit_centering(&kv, &col).unwrap();
        assert_eq!(cb.centering_ratios()[0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x: f64 = rng.random();
            let b = kv.eval_raw(x).unwrap();
            assert_eq!(b[0] - cb.centering_ratios()[0] * b[0], 0.0);
        }
    }

    #[test]
    fn centering_term_vanishes_where_first_raw_is_zero() {
        let col = uniform_column(200, 8);
        let kv = make_knots(&col, 3, 4).unwrap();
        let cb = fit_centering(&kv, &col).unwrap();
        let x = 0.9;
        let raw = kv.eval_raw(x).unwrap();
        assert_eq!(raw[0], 0.0);
        let c = cb.eval_centered(x).unwrap();
        for j in 1..raw.len() {
            assert_abs_diff_eq!(c[j - 1], 3f64.sqrt() * raw[j], epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_interior_knots_use_unit_scale() {
        let col = uniform_column(60, 2);
        let kv = make_knots(&col, 0, 4).unwrap();
        let cb = fit_centering(&kv, &col).unwrap();
        assert_eq!(cb.scale(), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn partition_of_unity_and_local_support(
            x in 0.0f64..=1.0,
            q in 2usize..=4,
            knots in proptest::collection::btree_set(1u32..999, 0..5),
        ) {
            let interior: Vec<f64> = knots.into_iter().map(|k| k as f64 / 1000.0).collect();
            let kv = KnotVector::new(q, interior).unwrap();
            let b = kv.eval_raw(x).unwrap();
            let sum: f64 = b.iter().sum();
            proptest::prop_assert!((sum - 1.0).abs() < 1e-12);
            proptest::prop_assert!(b.iter().all(|&v| v >= -1e-15));
            proptest::prop_assert!(b.iter().filter(|&&v| v != 0.0).count() <= q);
        }
    }
}
