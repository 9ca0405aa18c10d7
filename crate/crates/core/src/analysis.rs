//! Quantitative experiments: local PCA and intrinsic dimension, the
//! bias–variance split of the mollified estimator, KL estimates through the
//! probability flow, effective dataset size and memorization.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TargetSpec};
use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, Matrix};
use crate::mollify::MollifySpec;
use crate::sampler::{flow_log_density_with, FlowConfig, MollifiedField, SampleBatch, ScoreField, EmpiricalField, Workspace};
use crate::score::{self, Atoms};
use crate::{par, rng};

#[derive(Clone, Debug, Serialize)]
pub struct PcaReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: Matrix,
    pub t: f64,
    pub x: Vec<f64>,
    pub effective_samples: f64,
    pub low_effective_samples: bool,
}

impl PcaReport {
    pub fn top_direction(&self) -> Vec<f64> {
        self.eigenvectors.col(0)
    }
}

/// Eigendecomposition of the local covariance `Σ̂(t, x)`.
pub fn local_pca(ds: &Dataset, t: f64, x: &[f64]) -> Result<PcaReport> {
    let lc = score::local_sigma(ds, t, x)?;
    if lc.low_effective_samples {
        log::warn!("local covariance at t = {t} rests on {:.2} effective samples", lc.effective_samples);
    }
    let eig = jacobi_eigen(&lc.sigma)?;
    Ok(PcaReport {
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        t,
        x: x.to_vec(),
        effective_samples: lc.effective_samples,
        low_effective_samples: lc.low_effective_samples,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DimensionFit {
    pub t_values: Vec<f64>,
    /// `log λ₁` per time, averaged over the query points.
    pub log_lambda: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// `2 (1 - slope)`.
    pub k_hat: f64,
    /// Times at which some query had fewer than the minimum effective samples.
    pub low_effective_times: Vec<f64>,
}

/// Least-squares slope of `log λ₁(t)` against `log t` at one query point.
pub fn intrinsic_dim(ds: &Dataset, x: &[f64], t_values: &[f64]) -> Result<DimensionFit> {
    intrinsic_dim_multi(ds, &[x.to_vec()], t_values)
}

/// As [`intrinsic_dim`] with `log λ₁` averaged over several query points
/// before the fit.
pub fn intrinsic_dim_multi(ds: &Dataset, queries: &[Vec<f64>], t_values: &[f64]) -> Result<DimensionFit> {
    if t_values.len() < 4 {
        return Err(Error::Config(format!("need at least 4 times for a slope fit, got {}", t_values.len())));
    }
    if queries.is_empty() {
        return Err(Error::Config("no query points".into()));
    }
    let lo = t_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t_values.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || (hi / lo).log10() < 1.5 - 1e-9 {
        return Err(Error::Config(format!("times must be positive and span 1.5 decades, got [{lo}, {hi}]")));
    }
    let cells: Vec<Result<(f64, bool)>> = par::map_indices(t_values.len() * queries.len(), |idx| {
        let (ti, qi) = (idx / queries.len(), idx % queries.len());
        let lc = score::local_sigma(ds, t_values[ti], &queries[qi])?;
        let eig = jacobi_eigen(&lc.sigma)?;
        let top = eig.values[0];
        if !(top > 0.0) {
            return Err(Error::Numerical(format!("top local eigenvalue {top} at t = {}", t_values[ti])));
        }
        Ok((top.ln(), lc.low_effective_samples))
    });
    let mut log_lambda = vec![0.0; t_values.len()];
    let mut low = vec![false; t_values.len()];
    for (idx, c) in cells.into_iter().enumerate() {
        let (l, flag) = c?;
        log_lambda[idx / queries.len()] += l / queries.len() as f64;
        low[idx / queries.len()] |= flag;
    }
    let low_effective_times: Vec<f64> = t_values.iter().zip(&low).filter(|(_, f)| **f).map(|(t, _)| *t).collect();
    if !low_effective_times.is_empty() {
        log::warn!("low effective sample size at t = {low_effective_times:?}");
    }
    let lt: Vec<f64> = t_values.iter().map(|t| t.ln()).collect();
    let (slope, intercept) = least_squares(&lt, &log_lambda);
    Ok(DimensionFit {
        t_values: t_values.to_vec(),
        log_lambda,
        slope,
        intercept,
        k_hat: 2.0 * (1.0 - slope),
        low_effective_times,
    })
}

/// Ordinary least squares `y ≈ a x + b`; returns `(a, b)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct KlReport {
    pub kl_estimate: f64,
    pub std_error: f64,
    /// Evaluation points that contributed.
    pub q: usize,
    /// Points whose flow trajectory escaped.
    pub dropped: usize,
    pub t_cutoff: f64,
    pub score_label: String,
}

/// Plug-in estimate of `KL(p_{t} || q_{t})` at the cutoff time, where `q` is
/// the density the probability flow of `field` assigns.
pub fn kl_estimate(target: &TargetSpec, field: &dyn ScoreField, flow: &FlowConfig, q: usize, seed: u64) -> Result<KlReport> {
    if q < 2 {
        return Err(Error::Config(format!("need at least 2 evaluation points, got {q}")));
    }
    if !target.capabilities().smoothed_log_density {
        return Err(Error::Capability(format!("{} has no smoothed log-density", target.name())));
    }
    if field.dim() != target.dim() {
        return Err(Error::Config(format!("field dimension {} differs from target {}", field.dim(), target.dim())));
    }
    let pts = evaluation_points(target, flow.t_cutoff, q, seed)?;
    let d = target.dim();
    let terms = par::map_indices(q, |j| -> Result<Option<f64>> {
        let x = &pts[j * d..(j + 1) * d];
        let lp = target.smoothed_log_density(flow.t_cutoff, x)?;
        match flow_log_density_with(field, flow, x, &mut Workspace::default()) {
            Ok(lq) => Ok(Some(lp - lq)),
            Err(Error::FlowEscape { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut kept = Vec::with_capacity(q);
    for t in terms {
        if let Some(v) = t? {
            kept.push(v);
        }
    }
    let dropped = q - kept.len();
    if dropped * 100 > q {
        log::warn!("{dropped} of {q} flow trajectories escaped; the KL estimate is biased");
    }
    if kept.len() < 2 {
        return Err(Error::Numerical(format!("only {} of {q} flow evaluations stayed bounded", kept.len())));
    }
    let (kl, se) = mean_and_stderr(&kept);
    Ok(KlReport { kl_estimate: kl, std_error: se, q: kept.len(), dropped, t_cutoff: flow.t_cutoff, score_label: field.label() })
}

/// `X_0 + sqrt(t) ξ` with `X_0` drawn from the target.
fn evaluation_points(target: &TargetSpec, t: f64, q: usize, seed: u64) -> Result<Vec<f64>> {
    let base = target.sample(q, rng::derive_seed(seed, "kl_points", &[]))?;
    let mut r = rng::derived_stream(seed, "kl_noise", &[]);
    let mut pts = base.points().to_vec();
    let sd = t.sqrt();
    let mut xi = vec![0.0; pts.len()];
    rng::fill_normal(&mut r, &mut xi);
    pts.iter_mut().zip(&xi).for_each(|(p, z)| *p += sd * z);
    Ok(pts)
}

/// One row of a KL sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "t_N")]
    pub t_cutoff: f64,
    pub h: f64,
    pub kl: f64,
    pub stderr: f64,
    pub label: String,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "t_N,h,kl,stderr,label").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.t_cutoff, r.h, r.kl, r.stderr, r.label).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Shared settings of the effective-size search.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeffConfig {
    pub n: usize,
    pub h: f64,
    #[serde(default = "default_neff_mc")]
    pub mc_samples: usize,
    pub flow: FlowConfig,
    pub q: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Upper end of the search bracket as a multiple of `n`.
    #[serde(default = "default_bracket")]
    pub bracket: f64,
}

fn default_neff_mc() -> usize {
    crate::mollify::SAMPLING_MC_SAMPLES
}

fn default_bracket() -> f64 {
    256.0
}

#[derive(Clone, Debug, Serialize)]
pub struct NeffPoint {
    pub n: usize,
    pub kl: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NeffReport {
    pub n: usize,
    pub h: f64,
    pub t_cutoff: f64,
    pub n_eff: usize,
    pub ratio: f64,
    pub kl_mollified: f64,
    pub kl_mollified_std_error: f64,
    /// Every dataset size at which the empirical KL was evaluated.
    pub evaluations: Vec<NeffPoint>,
    /// No crossing inside the bracket; `n_eff` is the bracket edge.
    pub at_bracket_edge: bool,
}

/// Neighbour ratio of the three-point smoothing in `log N'`.
const SMOOTHING_RATIO: f64 = 1.25;
/// Bisection stops once the bracket is this narrow (as a ratio).
const BISECTION_RATIO: f64 = 1.05;

/// Smallest dataset size whose empirical-score KL does not exceed the
/// mollified-score KL at size `n`.
///
/// All evaluations share the KL evaluation points; replicate `r` at every
/// size draws its dataset from the same derived seed.
pub fn n_eff(target: &TargetSpec, cfg: &NeffConfig) -> Result<NeffReport> {
    if cfg.replicates == 0 || cfg.n == 0 {
        return Err(Error::Config("n and replicates must be positive".into()));
    }
    if !(cfg.bracket > 1.0) {
        return Err(Error::Config(format!("bracket must exceed 1, got {}", cfg.bracket)));
    }
    let kl_seed = rng::derive_seed(cfg.seed, "neff_kl", &[]);
    let dataset = |n: usize, r: usize| target.sample(n, rng::derive_seed(cfg.seed, "neff_dataset", &[r as u64]));

    let spec = MollifySpec::fixed(cfg.h).with_samples(cfg.mc_samples);
    let mut moll = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let ds = dataset(cfg.n, r)?;
        let field = MollifiedField::frozen(&ds, &spec, rng::derive_seed(cfg.seed, "neff_mollify", &[r as u64]))?;
        moll.push(kl_estimate(target, &field, &cfg.flow, cfg.q, kl_seed)?);
    }
    let (kl_m, se_m) = replicate_mean(&moll);
    log::info!("mollified KL at N = {}: {kl_m:.4} ± {se_m:.4}", cfg.n);

    let mut cache: BTreeMap<usize, NeffPoint> = BTreeMap::new();
    let mut emp = |n: usize| -> Result<f64> {
        if let Some(p) = cache.get(&n) {
            return Ok(p.kl);
        }
        let mut reps = Vec::with_capacity(cfg.replicates);
        for r in 0..cfg.replicates {
            let ds = dataset(n, r)?;
            reps.push(kl_estimate(target, &EmpiricalField::new(&ds), &cfg.flow, cfg.q, kl_seed)?);
        }
        let (kl, se) = replicate_mean(&reps);
        log::debug!("empirical KL at N' = {n}: {kl:.4} ± {se:.4}");
        cache.insert(n, NeffPoint { n, kl, std_error: se });
        Ok(kl)
    };
    let n0 = cfg.n as f64;
    let size = |log_n: f64| (log_n.exp().round() as usize).max(1);
    let mut smoothed = |log_n: f64| -> Result<f64> {
        let lr = SMOOTHING_RATIO.ln();
        let lo = size((log_n - lr).max(n0.ln()));
        Ok((emp(lo)? + emp(size(log_n))? + emp(size(log_n + lr))?) / 3.0)
    };

    let (mut lo, mut hi) = (n0.ln(), (n0 * cfg.bracket).ln());
    let mut edge = false;
    let n_eff = if smoothed(lo)? <= kl_m {
        cfg.n
    } else {
        while hi - lo > BISECTION_RATIO.ln() {
            let mid = 0.5 * (lo + hi);
            if smoothed(mid)? <= kl_m {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if hi >= (n0 * cfg.bracket).ln() - 1e-12 && smoothed(hi)? > kl_m {
            log::warn!("no crossing below N' = {}; reporting the bracket edge", size(hi));
            edge = true;
        }
        size(hi)
    };
    Ok(NeffReport {
        n: cfg.n,
        h: cfg.h,
        t_cutoff: cfg.flow.t_cutoff,
        n_eff,
        ratio: n_eff as f64 / n0,
        kl_mollified: kl_m,
        kl_mollified_std_error: se_m,
        evaluations: cache.into_values().collect(),
        at_bracket_edge: edge,
    })
}

/// Mean over replicates and the standard error of that mean.
pub fn replicate_mean(reports: &[KlReport]) -> (f64, f64) {
    let r = reports.len() as f64;
    let kl = reports.iter().map(|k| k.kl_estimate).sum::<f64>() / r;
    let se = reports.iter().map(|k| k.std_error * k.std_error).sum::<f64>().sqrt() / r;
    (kl, se)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasVarianceConfig {
    pub n: usize,
    pub t: f64,
    pub h: f64,
    pub x: Vec<f64>,
    pub replicates: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasVarianceReport {
    /// `(1/R) Σ_r |m̃^{N,r} - m̃|²`.
    pub v_hat: f64,
    pub v_std_error: f64,
    /// `|m̃ - m|²`.
    pub b_hat: f64,
    /// Standard error of `b_hat` from the spread of the kernel draws.
    pub b_std_error: f64,
    pub replicates: usize,
    pub mc_samples: usize,
    pub n: usize,
    pub t: f64,
    pub h: f64,
}

/// Variance and squared bias of the mollified posterior mean at `x`.
///
/// Every replicate and the oracle average over the same frozen kernel draws.
pub fn bias_variance(target: &TargetSpec, cfg: &BiasVarianceConfig) -> Result<BiasVarianceReport> {
    if !target.capabilities().oracle_m {
        return Err(Error::Capability(format!("{} has no posterior-mean oracle", target.name())));
    }
    let d = target.dim();
    if cfg.x.len() != d {
        return Err(Error::Config(format!("query has dimension {}, target has {d}", cfg.x.len())));
    }
    if cfg.replicates < 2 || cfg.mc_samples == 0 || cfg.n == 0 {
        return Err(Error::Config("need n ≥ 1, mc_samples ≥ 1 and at least 2 replicates".into()));
    }
    crate::error::check_time(cfg.t)?;
    if !(cfg.h >= 0.0 && cfg.h.is_finite()) {
        return Err(Error::Config(format!("bandwidth must be non-negative, got {}", cfg.h)));
    }
    let m = cfg.mc_samples;
    let mut r = rng::derived_stream(cfg.seed, "bias_variance_kernel", &[]);
    let z = rng::normal_vec(&mut r, m * d);
    let sh = cfg.h.sqrt();
    let queries: Vec<f64> = (0..m * d).map(|i| cfg.x[i % d] + sh * z[i]).collect();

    let oracle_draws: Vec<Vec<f64>> = par::map_indices(m, |j| target.oracle_m(cfg.t, &queries[j * d..(j + 1) * d]))
        .into_iter()
        .collect::<Result<_>>()?;
    let oracle_bar: Vec<f64> = (0..d).map(|k| oracle_draws.iter().map(|v| v[k]).sum::<f64>() / m as f64).collect();
    let m_true = target.oracle_m(cfg.t, &cfg.x)?;
    let delta: Vec<f64> = oracle_bar.iter().zip(&m_true).map(|(a, b)| a - b).collect();
    let b_hat: f64 = delta.iter().map(|v| v * v).sum();
    // delta method for |mean|², plus the chi-square floor at zero bias
    let var_k: Vec<f64> = (0..d)
        .map(|k| oracle_draws.iter().map(|v| (v[k] - oracle_bar[k]).powi(2)).sum::<f64>() / (m as f64 - 1.0).max(1.0) / m as f64)
        .collect();
    let b_std_error = (delta.iter().zip(&var_k).map(|(a, v)| 4.0 * a * a * v + 2.0 * v * v).sum::<f64>()).sqrt();

    let sq_errs: Vec<Result<f64>> = par::map_indices(cfg.replicates, |rep| {
        let ds = target.sample(cfg.n, rng::derive_seed(cfg.seed, "bias_variance_dataset", &[rep as u64]))?;
        let atoms = Atoms::of(&ds);
        let mut w = Vec::new();
        let mut mean = vec![0.0; d];
        let mut acc = vec![0.0; d];
        for j in 0..m {
            atoms.posterior(cfg.t, &queries[j * d..(j + 1) * d], &mut w, &mut mean, false);
            acc.iter_mut().zip(&mean).for_each(|(a, b)| *a += b);
        }
        Ok(acc.iter().zip(&oracle_bar).map(|(a, o)| (a / m as f64 - o).powi(2)).sum())
    });
    let sq_errs: Vec<f64> = sq_errs.into_iter().collect::<Result<_>>()?;
    let (v_hat, v_std_error) = mean_and_stderr(&sq_errs);
    Ok(BiasVarianceReport {
        v_hat,
        v_std_error,
        b_hat,
        b_std_error,
        replicates: cfg.replicates,
        mc_samples: m,
        n: cfg.n,
        t: cfg.t,
        h: cfg.h,
    })
}

/// Default cutoff on the nearest / second-nearest distance ratio.
pub const MEMORIZATION_THRESHOLD: f64 = 1.0 / 3.0;

/// Indices and squared distances of the two nearest training points; ties
/// go to the lower index.
pub fn two_nearest(train: &Dataset, x: &[f64]) -> ((usize, f64), (usize, f64)) {
    let mut first = (usize::MAX, f64::INFINITY);
    let mut second = (usize::MAX, f64::INFINITY);
    for (i, p) in train.rows().enumerate() {
        let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < first.1 {
            second = first;
            first = (i, d2);
        } else if d2 < second.1 {
            second = (i, d2);
        }
    }
    (first, second)
}

/// Fraction of generated points whose nearest training point is closer than
/// `threshold` times the second nearest.
pub fn memorization_ratio(batch: &SampleBatch, train: &Dataset, threshold: f64) -> Result<f64> {
    memorized_fraction(&batch.points, batch.d, train, threshold)
}

pub fn memorized_fraction(points: &[f64], d: usize, train: &Dataset, threshold: f64) -> Result<f64> {
    if train.len() < 2 {
        return Err(Error::Domain("memorization needs at least two training points".into()));
    }
    if d != train.dim() || points.is_empty() || points.len() % d != 0 {
        return Err(Error::Config(format!("samples of dimension {d} do not match training dimension {}", train.dim())));
    }
    let n = points.len() / d;
    let hits = par::map_indices(n, |i| {
        let ((_, d1), (_, d2)) = two_nearest(train, &points[i * d..(i + 1) * d]);
        // compare squared distances to avoid the square roots
        d1 < threshold * threshold * d2
    });
    Ok(hits.iter().filter(|h| **h).count() as f64 / n as f64)
}

/// Fraction of generated points within `radius` of some training point.
pub fn proximity_fraction(points: &[f64], d: usize, train: &Dataset, radius: f64) -> Result<f64> {
    if d != train.dim() || points.is_empty() || points.len() % d != 0 {
        return Err(Error::Config("sample dimension does not match the training set".into()));
    }
    let n = points.len() / d;
    let near = par::map_indices(n, |i| two_nearest(train, &points[i * d..(i + 1) * d]).0 .1 <= radius * radius);
    Ok(near.iter().filter(|h| **h).count() as f64 / n as f64)
}

/// Mean distance of generated points to the target's support.
pub fn mean_support_distance(points: &[f64], d: usize, target: &TargetSpec) -> Result<f64> {
    let n = points.len() / d;
    let mut total = 0.0;
    for p in points.chunks_exact(d) {
        total += target.support_distance(p)?;
    }
    Ok(total / n as f64)
}
