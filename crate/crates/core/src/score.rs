//! Empirical score of a dataset and its moments.
//!
//! For a dataset `{x_i}` and diffusion time `t` the Gibbs weights are
//! `w_i(x) ∝ exp(-|x - x_i|^2 / 2t)`, the posterior mean is
//! `m_t(x) = Σ w_i x_i` and the score is `-(x - m_t(x)) / t`. All weights are
//! computed in log space with one max shift per query, so nothing underflows
//! to 0/0 even in high dimension at small `t`.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{check_time, Error, Result};
use crate::linalg::Matrix;

/// Effective sample size below which the CLT covariance is flagged.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 5.0;

/// A weighted atom set, optionally with log prior weights per atom. The
/// empirical measure uses no prior; quadrature oracles pass node weights.
#[derive(Clone, Copy)]
pub(crate) struct Atoms<'a> {
    pub points: &'a [f64],
    pub sq_norms: &'a [f64],
    pub log_prior: Option<&'a [f64]>,
    pub d: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PosteriorStats {
    /// `log Σ_i prior_i exp(-|x - x_i|^2 / 2t)`.
    pub log_normalizer: f64,
    /// `Σ_i w_i |x_i - m|^2`; zero unless requested.
    pub trace_cov: f64,
    pub sum_w2: f64,
}

impl<'a> Atoms<'a> {
    pub fn of(ds: &'a Dataset) -> Self {
        Atoms { points: ds.points(), sq_norms: ds.sq_norms(), log_prior: None, d: ds.dim() }
    }

    pub fn len(&self) -> usize {
        self.sq_norms.len()
    }

    /// Writes `-|x - x_i|^2 / 2t (+ log prior_i)` into `out`, returns the max.
    pub fn log_kernel(&self, t: f64, x: &[f64], out: &mut Vec<f64>) -> f64 {
        let d = self.d;
        let x_sq: f64 = x.iter().map(|v| v * v).sum();
        let inv = -0.5 / t;
        out.clear();
        out.reserve(self.len());
        let mut max = f64::NEG_INFINITY;
        for (i, p) in self.points.chunks_exact(d).enumerate() {
            let dot: f64 = p.iter().zip(x).map(|(a, b)| a * b).sum();
            let dist2 = (x_sq - 2.0 * dot + self.sq_norms[i]).max(0.0);
            let mut a = inv * dist2;
            if let Some(lp) = self.log_prior {
                a += lp[i];
            }
            max = max.max(a);
            out.push(a);
        }
        max
    }

    /// Posterior mean into `mean`; on return `w` holds normalized weights.
    pub fn posterior(
        &self,
        t: f64,
        x: &[f64],
        w: &mut Vec<f64>,
        mean: &mut [f64],
        want_trace: bool,
    ) -> PosteriorStats {
        let d = self.d;
        let max = self.log_kernel(t, x, w);
        let mut sum = 0.0;
        for a in w.iter_mut() {
            *a = (*a - max).exp();
            sum += *a;
        }
        let inv_sum = 1.0 / sum;
        mean.iter_mut().for_each(|m| *m = 0.0);
        let mut sum_w2 = 0.0;
        for (wi, p) in w.iter_mut().zip(self.points.chunks_exact(d)) {
            *wi *= inv_sum;
            sum_w2 += *wi * *wi;
            if *wi == 0.0 {
                continue;
            }
            for (m, &c) in mean.iter_mut().zip(p) {
                *m += *wi * c;
            }
        }
        let trace_cov = if want_trace { self.trace_cov(w, mean) } else { 0.0 };
        PosteriorStats { log_normalizer: max + sum.ln(), trace_cov, sum_w2 }
    }

    /// `Σ_j Σ_i w_i (x_ij - m_j)^2`, summed per coordinate in the same order
    /// as the diagonal of [`Atoms::weighted_cov`].
    pub fn trace_cov(&self, w: &[f64], mean: &[f64]) -> f64 {
        let mut diag = vec![0.0; self.d];
        self.cov_diag_into(w, mean, &mut diag);
        diag.iter().sum()
    }

    fn cov_diag_into(&self, w: &[f64], mean: &[f64], diag: &mut [f64]) {
        for (&wi, p) in w.iter().zip(self.points.chunks_exact(self.d)) {
            if wi == 0.0 {
                continue;
            }
            for j in 0..self.d {
                let dj = p[j] - mean[j];
                diag[j] += (wi * dj) * dj;
            }
        }
    }

    /// `Σ_i c_i (x_i - m)(x_i - m)^T` for arbitrary non-negative coefficients.
    pub fn weighted_outer(&self, c: &[f64], mean: &[f64]) -> Matrix {
        let d = self.d;
        let mut cov = Matrix::zeros(d, d);
        let mut dev = vec![0.0; d];
        for (&ci, p) in c.iter().zip(self.points.chunks_exact(d)) {
            if ci == 0.0 {
                continue;
            }
            for j in 0..d {
                dev[j] = p[j] - mean[j];
            }
            for i in 0..d {
                let wd = ci * dev[i];
                for j in i..d {
                    cov.data[i * d + j] += wd * dev[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov.data[i * d + j] = cov.data[j * d + i];
            }
        }
        cov
    }
}

/// Normalized Gibbs weights at `(t, x)`.
#[derive(Clone, Debug, Serialize)]
pub struct SoftmaxWeights {
    /// Unnormalized log weights `-|x - x_i|^2 / 2t`.
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
    /// `log Σ_i exp(log_weights_i)`.
    pub log_normalizer: f64,
}

impl SoftmaxWeights {
    /// `1 / Σ w_i^2`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

fn check_query(ds: &Dataset, t: f64, x: &[f64]) -> Result<()> {
    check_time(t)?;
    if x.len() != ds.dim() {
        return Err(Error::Config(format!(
            "query point has dimension {}, dataset has {}",
            x.len(),
            ds.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("query point has non-finite coordinates".into()));
    }
    Ok(())
}

pub fn weights(ds: &Dataset, t: f64, x: &[f64]) -> Result<SoftmaxWeights> {
    check_query(ds, t, x)?;
    let atoms = Atoms::of(ds);
    let mut log_weights = Vec::new();
    let max = atoms.log_kernel(t, x, &mut log_weights);
    let mut weights: Vec<f64> = log_weights.iter().map(|a| (a - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(SoftmaxWeights { log_weights, weights, log_normalizer: max + sum.ln() })
}

/// Posterior mean `m^N_t(x) = Σ_i w_i x_i`.
pub fn m_emp(ds: &Dataset, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_query(ds, t, x)?;
    let mut mean = vec![0.0; ds.dim()];
    Atoms::of(ds).posterior(t, x, &mut Vec::new(), &mut mean, false);
    Ok(mean)
}

/// Empirical score `-(x - m^N_t(x)) / t`.
pub fn score_emp(ds: &Dataset, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let m = m_emp(ds, t, x)?;
    Ok(x.iter().zip(&m).map(|(xi, mi)| -(xi - mi) / t).collect())
}

/// Posterior covariance `Σ_i w_i (x_i - m)(x_i - m)^T`.
pub fn weighted_cov(ds: &Dataset, t: f64, x: &[f64]) -> Result<Matrix> {
    check_query(ds, t, x)?;
    let atoms = Atoms::of(ds);
    let mut w = Vec::new();
    let mut mean = vec![0.0; ds.dim()];
    atoms.posterior(t, x, &mut w, &mut mean, false);
    Ok(atoms.weighted_outer(&w, &mean))
}

/// `∇s = -I/t + Cov/t^2`.
pub fn score_jacobian_emp(ds: &Dataset, t: f64, x: &[f64]) -> Result<Matrix> {
    let mut jac = weighted_cov(ds, t, x)?;
    let d = ds.dim();
    for i in 0..d {
        for j in 0..d {
            let c = jac[(i, j)] / (t * t);
            jac[(i, j)] = if i == j { -1.0 / t + c } else { c };
        }
    }
    Ok(jac)
}

/// Trace of [`score_jacobian_emp`], evaluated without forming the matrix.
pub fn score_divergence_emp(ds: &Dataset, t: f64, x: &[f64]) -> Result<f64> {
    check_query(ds, t, x)?;
    let mut out = vec![0.0; ds.dim()];
    Ok(score_and_divergence(&Atoms::of(ds), t, x, &mut Vec::new(), &mut out))
}

/// Score into `score_out` and divergence as return value, for hot loops.
pub(crate) fn score_and_divergence(
    atoms: &Atoms<'_>,
    t: f64,
    x: &[f64],
    scratch: &mut Vec<f64>,
    score_out: &mut [f64],
) -> f64 {
    let d = atoms.d;
    let mut mean = [0.0f64; 8];
    let mut heap;
    let mean: &mut [f64] = if d <= 8 {
        &mut mean[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap
    };
    atoms.posterior(t, x, scratch, mean, false);
    let mut diag = vec![0.0; d];
    atoms.cov_diag_into(scratch, mean, &mut diag);
    for j in 0..d {
        score_out[j] = -(x[j] - mean[j]) / t;
    }
    // same expression and order as the Jacobian diagonal followed by trace()
    let mut div = 0.0;
    for &c in diag.iter() {
        div += -1.0 / t + c / (t * t);
    }
    div
}

/// Score only, for hot loops.
pub(crate) fn score_into(
    atoms: &Atoms<'_>,
    t: f64,
    x: &[f64],
    scratch: &mut Vec<f64>,
    score_out: &mut [f64],
) {
    atoms.posterior(t, x, scratch, score_out, false);
    for j in 0..atoms.d {
        score_out[j] = -(x[j] - score_out[j]) / t;
    }
}

/// `log p^N_t(x)` for the Gaussian KDE `(1/N) Σ G_t(x - x_i)`.
pub fn log_kde(ds: &Dataset, t: f64, x: &[f64]) -> Result<f64> {
    let w = weights(ds, t, x)?;
    let d = ds.dim() as f64;
    Ok(w.log_normalizer - (ds.len() as f64).ln() - 0.5 * d * (2.0 * std::f64::consts::PI * t).ln())
}

/// Plug-in estimate of the CLT covariance of `m^N_t(x)`.
#[derive(Clone, Debug, Serialize)]
pub struct LocalCovariance {
    pub sigma: Matrix,
    pub t: f64,
    pub x: Vec<f64>,
    pub n_points: usize,
    pub effective_samples: f64,
    /// Effective sample size below [`MIN_EFFECTIVE_SAMPLES`].
    pub low_effective_samples: bool,
}

/// `Σ̂ = [(1/N) Σ_i (x_i - m)(x_i - m)^T e^{-|x - x_i|^2/t}] / [(1/N) Σ_i e^{-|x - x_i|^2/2t}]^2`,
/// which equals `N Σ_i w_i^2 (x_i - m)(x_i - m)^T` in terms of the
/// normalized Gibbs weights.
pub fn local_sigma(ds: &Dataset, t: f64, x: &[f64]) -> Result<LocalCovariance> {
    check_query(ds, t, x)?;
    let atoms = Atoms::of(ds);
    let mut w = Vec::new();
    let mut mean = vec![0.0; ds.dim()];
    let stats = atoms.posterior(t, x, &mut w, &mut mean, false);
    let n = ds.len() as f64;
    let c: Vec<f64> = w.iter().map(|wi| n * wi * wi).collect();
    let sigma = atoms.weighted_outer(&c, &mean);
    let ess = 1.0 / stats.sum_w2;
    Ok(LocalCovariance {
        sigma,
        t,
        x: x.to_vec(),
        n_points: ds.len(),
        effective_samples: ess,
        low_effective_samples: ess < MIN_EFFECTIVE_SAMPLES,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_ds(seed: u64, n: usize, d: usize) -> Dataset {
        let mut r = rng::stream(seed);
        Dataset::new((0..n * d).map(|_| r.random_range(-1.0..1.0)).collect(), d).unwrap()
    }

    #[test]
    fn single_point_weights_and_mean() {
        let ds = Dataset::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let w = weights(&ds, 0.1, &[5.0, 5.0]).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        assert_eq!(m_emp(&ds, 1e-4, &[2.0, 1.0]).unwrap(), vec![0.3, -0.7]);
        let s = score_emp(&ds, 0.5, &[1.3, 0.3]).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-15 && (s[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn equidistant_points_split_evenly() {
        let ds = Dataset::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let w = weights(&ds, 0.3, &[0.0]).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert_eq!(score_emp(&ds, 0.3, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn small_time_concentrates_on_nearest() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let w = weights(&ds, 1e-6, &[0.1]).unwrap();
        assert!((w.weights[0] - 1.0).abs() < 1e-12);
        assert!(w.weights[1] < 1e-10 && w.weights[2] < 1e-10);
    }

    #[test]
    fn large_time_gives_arithmetic_mean() {
        let ds = random_ds(3, 50, 3);
        let m = m_emp(&ds, 1e8 * 4.0, &[0.2, 0.1, -0.3]).unwrap();
        let mean = ds.mean();
        for (a, b) in m.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-8);
        }
        let cov = weighted_cov(&ds, 1e8 * 4.0, &[0.0; 3]).unwrap();
        let mut sample = Matrix::zeros(3, 3);
        for p in ds.rows() {
            for i in 0..3 {
                for j in 0..3 {
                    sample[(i, j)] += (p[i] - mean[i]) * (p[j] - mean[j]) / 50.0;
                }
            }
        }
        assert!(cov.max_abs_diff(&sample) < 1e-8);
    }

    #[test]
    fn stable_in_high_dimension_at_small_time() {
        let ds = random_ds(5, 40, 784);
        let x: Vec<f64> = ds.point(0).iter().map(|v| v + 3.0).collect();
        let s = score_emp(&ds, 1e-3, &x).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        let div = score_divergence_emp(&ds, 1e-3, &x).unwrap();
        assert!(div.is_finite());
        let w = weights(&ds, 1e-3, &x).unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_symmetric_atoms_have_unit_covariance() {
        let ds = Dataset::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(weighted_cov(&ds, 0.7, &[0.0]).unwrap().data, vec![1.0]);
    }

    #[test]
    fn single_point_jacobian_is_minus_identity_over_t() {
        let ds = Dataset::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let j = score_jacobian_emp(&ds, 0.25, &[0.0, 0.0, 0.0]).unwrap();
        let mut expected = Matrix::identity(3);
        expected.scale(-4.0);
        assert_eq!(j, expected);
        assert_eq!(score_divergence_emp(&ds, 0.25, &[0.0; 3]).unwrap(), -12.0);
        assert!(cov_is_zero(&weighted_cov(&ds, 0.25, &[1.0, 1.0, 1.0]).unwrap()));
    }

    fn cov_is_zero(m: &Matrix) -> bool {
        m.data.iter().all(|&v| v == 0.0)
    }

    #[test]
    fn divergence_is_trace_bitwise() {
        let mut r = rng::stream(9);
        for trial in 0..50 {
            let ds = random_ds(100 + trial, 30, 1 + (trial as usize % 6));
            let x: Vec<f64> = (0..ds.dim()).map(|_| r.random_range(-1.5..1.5)).collect();
            let t = r.random_range(0.01..1.0);
            let j = score_jacobian_emp(&ds, t, &x).unwrap();
            assert_eq!(score_divergence_emp(&ds, t, &x).unwrap().to_bits(), j.trace().to_bits());
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let ds = random_ds(17, 25, 2);
        let t = 0.3;
        let x = [0.21, -0.37];
        let jac = score_jacobian_emp(&ds, t, &x).unwrap();
        let h = 1e-5;
        let mut fd = Matrix::zeros(2, 2);
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let sp = score_emp(&ds, t, &xp).unwrap();
            let sm = score_emp(&ds, t, &xm).unwrap();
            for i in 0..2 {
                fd[(i, j)] = (sp[i] - sm[i]) / (2.0 * h);
            }
        }
        let mut diff = fd.clone();
        diff.data.iter_mut().zip(&jac.data).for_each(|(a, b)| *a -= b);
        assert!(diff.frobenius() / jac.frobenius() < 1e-5);
        assert!(jac.asymmetry() < 1e-12);
    }

    #[test]
    fn score_is_gradient_of_log_kde() {
        let ds = random_ds(23, 40, 3);
        let t = 0.2;
        let x = [0.1, 0.4, -0.2];
        let s = score_emp(&ds, t, &x).unwrap();
        let h = 1e-5;
        let mut err = 0.0;
        let mut norm = 0.0;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let g = (log_kde(&ds, t, &xp).unwrap() - log_kde(&ds, t, &xm).unwrap()) / (2.0 * h);
            err += (g - s[j]).powi(2);
            norm += s[j] * s[j];
        }
        assert!((err / norm).sqrt() < 1e-5);
    }

    #[test]
    fn local_sigma_single_point_is_zero() {
        let ds = Dataset::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let ls = local_sigma(&ds, 0.1, &[0.0, 0.0]).unwrap();
        assert!(cov_is_zero(&ls.sigma));
        assert!(ls.low_effective_samples);
    }

    /// Closed-form CLT covariance for the measure (δ_{-a} + δ_{+a}) / 2.
    fn two_atom_sigma(a: f64, t: f64, x: f64) -> f64 {
        let ep = (-(x - a).powi(2) / (2.0 * t)).exp();
        let em = (-(x + a).powi(2) / (2.0 * t)).exp();
        let m = a * (ep - em) / (ep + em);
        let num = 0.5 * (a - m).powi(2) * ep * ep + 0.5 * (-a - m).powi(2) * em * em;
        num / (0.5 * (ep + em)).powi(2)
    }

    #[test]
    fn local_sigma_matches_two_atom_formula() {
        let a = 0.8;
        let ds = Dataset::from_rows(&[vec![-a], vec![a]]).unwrap();
        for &(t, x) in &[(0.5, 0.0), (0.3, 0.2), (0.1, -0.15), (1.0, 1.3)] {
            let got = local_sigma(&ds, t, &[x]).unwrap().sigma[(0, 0)];
            let want = two_atom_sigma(a, t, x);
            assert!((got - want).abs() < 1e-12 * want.max(1.0), "t={t} x={x}: {got} vs {want}");
        }
        assert!((two_atom_sigma(a, 0.5, 0.0) - a * a).abs() < 1e-15);
    }

    #[test]
    fn local_sigma_aligns_with_line_data() {
        let mut r = rng::stream(31);
        let rows: Vec<Vec<f64>> = (0..2000).map(|_| vec![r.random_range(-1.0..1.0), 0.0]).collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        let ls = local_sigma(&ds, 1e-3, &[0.1, 0.0]).unwrap();
        let eig = crate::linalg::jacobi_eigen(&ls.sigma).unwrap();
        let v = eig.vectors.col(0);
        let angle = v[1].abs().atan2(v[0].abs());
        assert!(angle < 1e-2);
    }

    #[test]
    fn rejects_non_positive_time() {
        let ds = random_ds(1, 3, 2);
        assert!(matches!(score_emp(&ds, 0.0, &[0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(score_jacobian_emp(&ds, -1.0, &[0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(m_emp(&ds, 1.0, &[0.0]), Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weights_are_a_distribution(seed in 0u64..1000, t in 1e-4f64..10.0, d in 1usize..6) {
            let ds = random_ds(seed, 20, d);
            let x: Vec<f64> = (0..d).map(|j| (j as f64 * 0.37).sin()).collect();
            let w = weights(&ds, t, &x).unwrap();
            prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.weights.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn translation_equivariance(seed in 0u64..1000, t in 1e-3f64..2.0, c in -5.0f64..5.0) {
            let ds = random_ds(seed, 15, 3);
            let shift = [c, -0.5 * c, 0.25 * c];
            let moved = ds.map_points(|p, q| for j in 0..3 { q[j] = p[j] + shift[j] }).unwrap();
            let x = [0.3, -0.2, 0.1];
            let xs = [x[0] + shift[0], x[1] + shift[1], x[2] + shift[2]];
            let m = m_emp(&ds, t, &x).unwrap();
            let ms = m_emp(&moved, t, &xs).unwrap();
            for j in 0..3 {
                prop_assert!((ms[j] - m[j] - shift[j]).abs() < 1e-12 * (1.0 + c.abs()) * 10.0);
            }
            let s = score_emp(&ds, t, &x).unwrap();
            let ss = score_emp(&moved, t, &xs).unwrap();
            for j in 0..3 {
                prop_assert!((s[j] - ss[j]).abs() < 1e-9 * (1.0 + s[j].abs()) / t.min(1.0));
            }
        }

        #[test]
        fn nearest_neighbor_limit(seed in 0u64..5000) {
            let ds = random_ds(seed, 12, 2);
            let mut r = rng::stream(seed ^ 0xabc);
            let x = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            let mut d2: Vec<(f64, usize)> = ds.rows().enumerate()
                .map(|(i, p)| ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2), i)).collect();
            d2.sort_by(|a, b| a.0.total_cmp(&b.0));
            prop_assume!(d2[1].0 - d2[0].0 > 1e-3);
            let m = m_emp(&ds, 1e-6, &x).unwrap();
            let nn = ds.point(d2[0].1);
            prop_assert!(((m[0] - nn[0]).powi(2) + (m[1] - nn[1]).powi(2)).sqrt() < 1e-10);
        }

        #[test]
        fn jacobian_symmetric_and_sigma_psd(seed in 0u64..1000, t in 1e-3f64..1.0) {
            let ds = random_ds(seed, 30, 4);
            let x = [0.1, 0.2, -0.3, 0.05];
            prop_assert!(score_jacobian_emp(&ds, t, &x).unwrap().asymmetry() < 1e-12 / t.min(1.0));
            let ls = local_sigma(&ds, t, &x).unwrap();
            prop_assert!(ls.sigma.asymmetry() < 1e-12);
            let e = crate::linalg::jacobi_eigen(&ls.sigma).unwrap();
            let norm = ls.sigma.frobenius();
            prop_assert!(*e.values.last().unwrap() >= -1e-10 * norm);
        }
    }
}
