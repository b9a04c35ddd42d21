//! Canonical correlation analysis between two feature sets and fusion by
//! summed canonical variates.
//!
//! With `S^{-1/2}` taken by symmetric eigendecomposition,
//! `G1 = Srr^{-1/2} Srz Szz^{-1} Szr Srr^{-1/2}` has eigenpairs
//! `(lambda_i^2, u_i)`. Each partner direction is taken as
//! `v_i = T^T u_i / lambda_i` with `T = Srr^{-1/2} Srz Szz^{-1/2}`, which
//! makes `v_i` the matching eigenvector of
//! `G2 = Szz^{-1/2} Szr Srr^{-1} Srz Szz^{-1/2}` and fixes its sign so the
//! pair correlates positively. Projections are `alpha_i = Srr^{-1/2} u_i`
//! and `beta_i = Szz^{-1/2} v_i`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const CCA_FORMAT: &str = "envsound-cca/1";

/// Eigenvalues `lambda^2` at or below this are treated as zero.
pub const RETAIN_THRESHOLD: f64 = 1e-8;

/// Diagonal loading added to each within-branch covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ridge {
    /// `scale * trace(S) / dim`, per branch.
    Auto { scale: f64 },
    Fixed(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Auto { scale: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcaConfig {
    pub ridge: Ridge,
    /// Pairs to keep; `None` keeps every pair with `lambda^2 > 1e-8`.
    pub d: Option<usize>,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self {
            ridge: Ridge::default(),
            d: None,
        }
    }
}

impl CcaConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self.ridge {
            Ridge::Auto { scale } if !(scale >= 0.0) || !scale.is_finite() => {
                v.push(format!("fusion.ridge scale must be >= 0, got {scale}"))
            }
            Ridge::Fixed(r) if !(r >= 0.0) || !r.is_finite() => {
                v.push(format!("fusion.ridge must be >= 0, got {r}"))
            }
            _ => {}
        }
        if self.d == Some(0) {
            v.push("fusion.d must be >= 1".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    pub s_rr: DMatrix<f64>,
    pub s_zz: DMatrix<f64>,
    pub s_rz: DMatrix<f64>,
    pub mean_r: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub ridge_r: f64,
    pub ridge_z: f64,
}

fn centered(m: &FeatureMatrix) -> (DMatrix<f64>, Vec<f64>) {
    let mut x = DMatrix::from_row_slice(m.rows, m.cols, &m.values);
    let means: Vec<f64> = (0..m.cols).map(|j| x.column(j).sum() / m.rows as f64).collect();
    for (j, mu) in means.iter().enumerate() {
        x.column_mut(j).add_scalar_mut(-mu);
    }
    (x, means)
}

fn ridge_for(ridge: Ridge, s: &DMatrix<f64>) -> f64 {
    match ridge {
        Ridge::Fixed(r) => r,
        Ridge::Auto { scale } => scale * s.trace() / s.nrows().max(1) as f64,
    }
}

/// Column-centered covariance blocks, `X^T Y / (n - 1)`, with ridge on the
/// diagonal of the within-branch blocks.
pub fn covariances(r: &FeatureMatrix, z: &FeatureMatrix, ridge: Ridge) -> Result<Covariances> {
    r.check_aligned(z)?;
    if r.rows < 2 {
        return Err(Error::Degenerate(format!("CCA needs at least 2 samples, got {}", r.rows)));
    }
    if r.cols == 0 || z.cols == 0 {
        return Err(Error::Shape("CCA needs at least one feature per branch".into()));
    }
    if r.values.iter().chain(&z.values).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("features contain non-finite values".into()));
    }
    let (xr, mean_r) = centered(r);
    let (xz, mean_z) = centered(z);
    let denom = (r.rows - 1) as f64;
    let mut s_rr = xr.transpose() * &xr / denom;
    let mut s_zz = xz.transpose() * &xz / denom;
    let s_rz = xr.transpose() * &xz / denom;
    let (ridge_r, ridge_z) = (ridge_for(ridge, &s_rr), ridge_for(ridge, &s_zz));
    for i in 0..s_rr.nrows() {
        s_rr[(i, i)] += ridge_r;
    }
    for i in 0..s_zz.nrows() {
        s_zz[(i, i)] += ridge_z;
    }
    Ok(Covariances {
        s_rr,
        s_zz,
        s_rz,
        mean_r,
        mean_z,
        ridge_r,
        ridge_z,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenpairs sorted by eigenvalue, largest first.
fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(&idx.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (values, vectors)
}

/// `S^{-1/2}` and `S^{-1}` of a symmetric positive-definite matrix.
fn inverse_roots(s: &DMatrix<f64>, branch: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(symmetrize(s));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "{branch} covariance is not positive definite (smallest eigenvalue {min:e}); use a larger ridge"
        )));
    }
    let v = &eig.eigenvectors;
    let inv_sqrt = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.powf(-0.5)));
    let inv = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| 1.0 / l));
    Ok((
        v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose(),
        v * DMatrix::from_diagonal(&inv) * v.transpose(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaFusionModel {
    pub format: String,
    pub dim_r: usize,
    pub dim_z: usize,
    pub d: usize,
    /// `lambda_1 >= ... >= lambda_d > 0`.
    pub correlations: Vec<f64>,
    /// `[dim_r, d]`, row-major; column `i` is `alpha_i`.
    pub w_r: Vec<f64>,
    /// `[dim_z, d]`, row-major; column `i` is `beta_i`.
    pub w_z: Vec<f64>,
    pub mean_r: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub ridge_r: f64,
    pub ridge_z: f64,
    /// Full eigenvalue spectra of G1 and G2, largest first.
    pub g1_spectrum: Vec<f64>,
    pub g2_spectrum: Vec<f64>,
}

/// Fit CCA on aligned feature sets.
pub fn fit_cca(r: &FeatureMatrix, z: &FeatureMatrix, cfg: &CcaConfig) -> Result<CcaFusionModel> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let cov = covariances(r, z, cfg.ridge)?;
    let (rr_isqrt, rr_inv) = inverse_roots(&cov.s_rr, "waveform-branch")?;
    let (zz_isqrt, zz_inv) = inverse_roots(&cov.s_zz, "spectrogram-branch")?;
    let s_zr = cov.s_rz.transpose();
    let g1 = &rr_isqrt * &cov.s_rz * &zz_inv * &s_zr * &rr_isqrt;
    let g2 = &zz_isqrt * &s_zr * &rr_inv * &cov.s_rz * &zz_isqrt;
    let (l1, u) = sorted_eigen(&g1);
    let (l2, _) = sorted_eigen(&g2);
    if l1.iter().chain(&l2).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite canonical correlations; use a larger ridge".into()));
    }
    let max_pairs = r.cols.min(z.cols);
    let available = l1.iter().take(max_pairs).take_while(|&&l| l > RETAIN_THRESHOLD).count();
    let d = cfg.d.map_or(available, |d| d.min(available));
    if d == 0 {
        return Err(Error::Degenerate("no canonical pair has non-zero correlation".into()));
    }
    let t = &rr_isqrt * &cov.s_rz * &zz_isqrt;
    let mut w_r = DMatrix::zeros(r.cols, d);
    let mut w_z = DMatrix::zeros(z.cols, d);
    let mut correlations = Vec::with_capacity(d);
    for i in 0..d {
        let lambda = l1[i].sqrt();
        let ui = u.column(i).into_owned();
        let mut alpha = &rr_isqrt * &ui;
        let mut vi = t.transpose() * &ui / lambda;
        vi /= vi.norm();
        let mut beta = &zz_isqrt * &vi;
        // Canonical sign: the largest-magnitude entry of alpha is positive.
        let pivot = alpha.iamax();
        if alpha[pivot] < 0.0 {
            alpha.neg_mut();
            beta.neg_mut();
        }
        w_r.set_column(i, &alpha);
        w_z.set_column(i, &beta);
        correlations.push(lambda);
    }
    let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    Ok(CcaFusionModel {
        format: CCA_FORMAT.into(),
        dim_r: r.cols,
        dim_z: z.cols,
        d,
        correlations,
        w_r: row_major(&w_r),
        w_z: row_major(&w_z),
        mean_r: cov.mean_r,
        mean_z: cov.mean_z,
        ridge_r: cov.ridge_r,
        ridge_z: cov.ridge_z,
        g1_spectrum: l1,
        g2_spectrum: l2,
    })
}

fn project(x: &FeatureMatrix, mean: &[f64], w: &[f64], d: usize) -> FeatureMatrix {
    let mut out = vec![0.0; x.rows * d];
    for n in 0..x.rows {
        let row = x.row(n);
        let o = &mut out[n * d..(n + 1) * d];
        for (j, (v, m)) in row.iter().zip(mean).enumerate() {
            let c = v - m;
            for (oi, wi) in o.iter_mut().zip(&w[j * d..(j + 1) * d]) {
                *oi += c * wi;
            }
        }
    }
    FeatureMatrix {
        values: out,
        rows: x.rows,
        cols: d,
        sample_ids: x.sample_ids.clone(),
        branch: None,
    }
}

/// `(A, B)`: centered inputs projected on the canonical directions.
pub fn canonical_variates(
    model: &CcaFusionModel,
    r: &FeatureMatrix,
    z: &FeatureMatrix,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if r.cols != model.dim_r || z.cols != model.dim_z {
        return Err(Error::Shape(format!(
            "CCA was fitted on {}+{} features, got {}+{}",
            model.dim_r, model.dim_z, r.cols, z.cols
        )));
    }
    r.check_aligned(z)?;
    Ok((
        project(r, &model.mean_r, &model.w_r, model.d),
        project(z, &model.mean_z, &model.w_z, model.d),
    ))
}

/// Summed canonical variates `A + B`, one `d`-vector per sample.
pub fn fuse(model: &CcaFusionModel, r: &FeatureMatrix, z: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (mut a, b) = canonical_variates(model, r, z)?;
    a.values.iter_mut().zip(&b.values).for_each(|(x, y)| *x += y);
    Ok(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaReport {
    pub format: String,
    pub d: usize,
    pub ridge_r: f64,
    pub ridge_z: f64,
    pub correlations: Vec<f64>,
    pub n_fit_samples: usize,
    pub dim_r: usize,
    pub dim_z: usize,
}

impl CcaFusionModel {
    pub fn report(&self, n_fit_samples: usize) -> CcaReport {
        CcaReport {
            format: CCA_FORMAT.into(),
            d: self.d,
            ridge_r: self.ridge_r,
            ridge_z: self.ridge_z,
            correlations: self.correlations.clone(),
            n_fit_samples,
            dim_r: self.dim_r,
            dim_z: self.dim_z,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fm(rows: usize, cols: usize, values: Vec<f64>) -> FeatureMatrix {
        FeatureMatrix::new(values, rows, cols, (0..rows).map(|i| format!("s{i}")).collect()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FeatureMatrix {
        fm(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Shared latent signal plus branch noise.
    fn correlated(rng: &mut ChaCha8Rng, n: usize, dr: usize, dz: usize) -> (FeatureMatrix, FeatureMatrix) {
        let latent = random(rng, n, 2);
        let mix = |rng: &mut ChaCha8Rng, d: usize| {
            let w: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vals = (0..n)
                .flat_map(|i| {
                    let l = latent.row(i).to_vec();
                    let w = w.clone();
                    (0..d).map(move |j| l[0] * w[j] + l[1] * w[d + j])
                })
                .map(|v| v + 0.5 * rng.random_range(-1.0..1.0))
                .collect::<Vec<_>>();
            fm(n, d, vals)
        };
        let r = mix(rng, dr);
        let z = mix(rng, dz);
        (r, z)
    }

    /// Cholesky whitening + SVD of the whitened cross-covariance.
    fn oracle(r: &FeatureMatrix, z: &FeatureMatrix, ridge: Ridge) -> Vec<f64> {
        let c = covariances(r, z, ridge).unwrap();
        let lr = c.s_rr.clone().cholesky().unwrap().l();
        let lz = c.s_zz.clone().cholesky().unwrap().l();
        let lr_inv = lr.try_inverse().unwrap();
        let lz_inv = lz.try_inverse().unwrap();
        let m = lr_inv * &c.s_rz * lz_inv.transpose();
        let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    #[test]
    fn two_sample_variance() {
        let r = fm(2, 1, vec![1.0, -1.0]);
        let c = covariances(&r, &r, Ridge::Fixed(0.5)).unwrap();
        assert_eq!(c.s_rr[(0, 0)], 2.5);
        assert_eq!(c.s_rz[(0, 0)], 2.0);
    }

    #[test]
    fn identical_inputs_share_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random(&mut rng, 50, 8);
        let c = covariances(&r, &r, Ridge::Fixed(0.01)).unwrap();
        assert_eq!(c.s_rr, c.s_zz);
        let diff = &c.s_rr - DMatrix::identity(8, 8) * 0.01 - &c.s_rz;
        assert!(diff.amax() < 1e-15);
        assert!((&c.s_rr - c.s_rr.transpose()).amax() < 1e-12);
        let min = SymmetricEigen::new(c.s_rr.clone()).eigenvalues.min();
        assert!(min >= 0.01);
    }

    #[test]
    fn auto_ridge_is_scaled_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random(&mut rng, 40, 4);
        let plain = covariances(&r, &r, Ridge::Fixed(0.0)).unwrap();
        let auto = covariances(&r, &r, Ridge::default()).unwrap();
        assert!((auto.ridge_r - 1e-4 * plain.s_rr.trace() / 4.0).abs() < 1e-18);
    }

    #[test]
    fn misaligned_and_tiny_inputs() {
        let a = fm(2, 1, vec![1.0, 2.0]);
        let mut b = a.clone();
        b.sample_ids[1] = "other".into();
        assert_eq!(covariances(&a, &b, Ridge::Fixed(0.0)).unwrap_err().category(), "alignment");
        let one = fm(1, 1, vec![1.0]);
        assert_eq!(covariances(&one, &one, Ridge::Fixed(0.0)).unwrap_err().category(), "degenerate");
    }

    #[test]
    fn self_correlation_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random(&mut rng, 200, 6);
        let m = fit_cca(&r, &r, &CcaConfig { ridge: Ridge::Fixed(1e-6), d: None }).unwrap();
        assert_eq!(m.d, 6);
        assert!(m.correlations.iter().all(|l| (l - 1.0).abs() < 1e-4));
        let fused = fuse(&m, &r, &r).unwrap();
        let (a, _) = canonical_variates(&m, &r, &r).unwrap();
        for (f, x) in fused.values.iter().zip(&a.values) {
            assert!((f - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_matches_whitened_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let (r, z) = correlated(&mut rng, 200, 3, 3);
            let m = fit_cca(&r, &z, &CcaConfig::default()).unwrap();
            let o = oracle(&r, &z, Ridge::default());
            for (a, b) in m.correlations.iter().zip(&o) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn variates_are_canonical_on_training_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (r, z) = correlated(&mut rng, 300, 5, 4);
        let m = fit_cca(&r, &z, &CcaConfig { ridge: Ridge::Fixed(0.0), d: None }).unwrap();
        assert!(m.d <= 4);
        let (a, b) = canonical_variates(&m, &r, &z).unwrap();
        let col = |f: &FeatureMatrix, j: usize| (0..f.rows).map(|i| f.values[i * f.cols + j]).collect::<Vec<_>>();
        let corr = |x: &[f64], y: &[f64]| {
            let n = x.len() as f64;
            let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
            let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        };
        for i in 0..m.d {
            assert!((corr(&col(&a, i), &col(&b, i)) - m.correlations[i]).abs() < 1e-6);
            for j in 0..i {
                assert!(corr(&col(&a, i), &col(&a, j)).abs() < 1e-6);
            }
        }
        assert!(m.correlations.windows(2).all(|w| w[0] >= w[1]));
        let means = fm(1, 5, m.mean_r.clone());
        let zmeans = FeatureMatrix { sample_ids: means.sample_ids.clone(), ..fm(1, 4, m.mean_z.clone()) };
        let (a0, _) = canonical_variates(&m, &means, &zmeans).unwrap();
        assert!(a0.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn column_permutation_keeps_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = random(&mut rng, 100, 4);
        let perm = [2, 0, 3, 1];
        let z = fm(100, 4, (0..100).flat_map(|i| perm.iter().map(move |&j| (i, j))).map(|(i, j)| r.values[i * 4 + j]).collect());
        let cfg = CcaConfig { ridge: Ridge::Fixed(1e-6), d: None };
        let a = fit_cca(&r, &r, &cfg).unwrap();
        let b = fit_cca(&r, &z, &cfg).unwrap();
        for (x, y) in a.g1_spectrum.iter().zip(&b.g1_spectrum) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_errors_and_requested_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (r, z) = correlated(&mut rng, 100, 3, 2);
        let m = fit_cca(&r, &z, &CcaConfig { d: Some(1), ..CcaConfig::default() }).unwrap();
        assert_eq!(m.d, 1);
        assert_eq!(fuse(&m, &r, &z).unwrap().cols, 1);
        assert_eq!(fuse(&m, &z, &r).unwrap_err().category(), "shape");
        let bad = fit_cca(&r, &z, &CcaConfig { ridge: Ridge::Fixed(-1.0), d: Some(0) }).unwrap_err();
        let Error::Config(v) = bad else { panic!() };
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn singular_covariance_without_ridge_is_numerical() {
        let r = fm(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let err = fit_cca(&r, &r, &CcaConfig { ridge: Ridge::Fixed(0.0), d: None }).unwrap_err();
        assert_eq!(err.category(), "numerical");
        assert!(err.to_string().contains("ridge"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn spectrum_properties(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (r, z) = correlated(&mut rng, 80, 4, 3);
            let m = fit_cca(&r, &z, &CcaConfig::default()).unwrap();
            prop_assert!(m.correlations.iter().all(|&l| l > 0.0 && l <= 1.0 + 1e-8));
            // G1 and G2 share their non-zero spectrum.
            for (a, b) in m.g1_spectrum.iter().zip(&m.g2_spectrum).take(3) {
                prop_assert!((a - b).abs() < 1e-8);
            }
            prop_assert_eq!(&m, &fit_cca(&r, &z, &CcaConfig::default()).unwrap());
            // invertible map on R's columns, ridge scaled to match
            let a: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 2.0 } else { rng.random_range(-0.3..0.3) }).collect();
            let mapped: Vec<f64> = (0..80)
                .flat_map(|n| {
                    let row = r.row(n).to_vec();
                    let a = a.clone();
                    (0..4).map(move |j| (0..4).map(|k| row[k] * a[k * 4 + j]).sum::<f64>())
                })
                .collect();
            let r2 = FeatureMatrix { values: mapped, ..r.clone() };
            let exact = CcaConfig { ridge: Ridge::Fixed(0.0), d: None };
            let m1 = fit_cca(&r, &z, &exact).unwrap();
            let m2 = fit_cca(&r2, &z, &exact).unwrap();
            for (x, y) in m1.correlations.iter().zip(&m2.correlations) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
