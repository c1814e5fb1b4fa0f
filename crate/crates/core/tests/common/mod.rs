#![allow(dead_code)]

use gacm::design::{build_design, fit_bases, Dataset, GroupedDesign};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gaussian toy: `n` rows, one uniform covariate, `p` Gaussian interaction
/// columns, cubic splines without interior knots; signal in the first two columns.
pub fn gaussian_toy(n: usize, p: usize, seed: u64) -> (Dataset, GroupedDesign) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let t: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let s = 0.8 * t[0][i] + (2.0 * std::f64::consts::PI * x[i]).sin() * t[1][i];
            s + 0.5 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let ds = Dataset::new(y, vec![x], t).unwrap();
    let bases = fit_bases(&ds, 0, 4).unwrap();
    let design = build_design(&ds, &bases).unwrap();
    (ds, design)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Proximal gradient (ISTA) for `0.5 ||y - Z b||^2 + n lambda sum_g w_g ||b_g||`.
pub fn ista_group_lasso(
    z: &DMatrix<f64>,
    y: &[f64],
    groups: &[std::ops::Range<usize>],
    lambda: f64,
    weights: &[f64],
    max_iter: usize,
) -> Vec<f64> {
    let n = z.nrows() as f64;
    let gram = z.transpose() * z;
    let lip = SymmetricEigen::new(gram.clone()).eigenvalues.max();
    let step = 1.0 / lip;
    let zty = z.tr_mul(&DVector::from_column_slice(y));
    let mut b = DVector::<f64>::zeros(z.ncols());
    for _ in 0..max_iter {
        let grad = &gram * &b - &zty;
        let mut next = &b - grad * step;
        for (g, r) in groups.iter().enumerate() {
            let thr = step * n * lambda * weights[g];
            let blk: Vec<f64> = next.rows(r.start, r.len()).iter().copied().collect();
            let nb = norm(&blk);
            let scale = if nb > thr { 1.0 - thr / nb } else { 0.0 };
            for j in r.clone() {
                next[j] *= scale;
            }
        }
        let diff = (&next - &b).amax();
        b = next;
        if diff < 1e-14 {
            break;
        }
    }
    b.as_slice().to_vec()
}
