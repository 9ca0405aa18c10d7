use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::quadrature::{midpoint_nodes, QuadratureConfig};
use super::Dataset;
use crate::error::{check_time, Error, Result};
use crate::rng;
use crate::score::Atoms;

const THETA_MIN: f64 = PI;
const THETA_MAX: f64 = 4.0 * PI;

/// Distribution of each active coordinate of a linear-subspace target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubspaceProfile {
    Uniform { half_width: f64 },
    Gaussian { std: f64 },
}

/// Analytic target distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Standard normal in `R^d`.
    GaussianIso { d: usize },
    /// `(θ cos θ, θ sin θ)` with `θ ~ U[π, 4π]`.
    #[serde(rename = "swiss_roll_2d")]
    SwissRoll2d,
    /// Uniform on the sphere of the given radius in `R^d`.
    Hypersphere { d: usize, radius: f64 },
    /// Equal-weight mixture of two atoms.
    TwoPoint { x1: Vec<f64>, x2: Vec<f64> },
    /// The first `k` coordinates are i.i.d. draws from `profile`, the
    /// remaining `d - k` are zero.
    LinearSubspace { k: usize, d: usize, profile: SubspaceProfile },
}

/// Which oracles a target provides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub oracle_m: bool,
    pub smoothed_log_density: bool,
    pub true_score: bool,
}

/// Posterior mean and trace of the posterior covariance of `X_0` given
/// `X_t = x`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub trace_cov: f64,
}

impl TargetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::GaussianIso { .. } => "gaussian_iso",
            TargetSpec::SwissRoll2d => "swiss_roll_2d",
            TargetSpec::Hypersphere { .. } => "hypersphere",
            TargetSpec::TwoPoint { .. } => "two_point",
            TargetSpec::LinearSubspace { .. } => "linear_subspace",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            TargetSpec::GaussianIso { d } if *d < 1 => bad("gaussian_iso needs d >= 1".into()),
            TargetSpec::Hypersphere { d, radius } => {
                if *d < 2 {
                    bad(format!("hypersphere needs d >= 2, got {d}"))
                } else if !(radius.is_finite() && *radius > 0.0) {
                    bad(format!("hypersphere radius must be positive, got {radius}"))
                } else {
                    Ok(())
                }
            }
            TargetSpec::TwoPoint { x1, x2 } => {
                if x1.is_empty() || x1.len() != x2.len() {
                    bad("two_point atoms must be non-empty and of equal dimension".into())
                } else if x1.iter().chain(x2).any(|v| !v.is_finite()) {
                    bad("two_point atoms must be finite".into())
                } else {
                    Ok(())
                }
            }
            TargetSpec::LinearSubspace { k, d, profile } => {
                if *k < 1 || k > d {
                    return bad(format!("linear_subspace needs 1 <= k <= d, got k={k}, d={d}"));
                }
                let scale = match profile {
                    SubspaceProfile::Uniform { half_width } => *half_width,
                    SubspaceProfile::Gaussian { std } => *std,
                };
                if !(scale.is_finite() && scale > 0.0) {
                    return bad(format!("linear_subspace profile scale must be positive, got {scale}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::GaussianIso { d } | TargetSpec::Hypersphere { d, .. } => *d,
            TargetSpec::LinearSubspace { d, .. } => *d,
            TargetSpec::SwissRoll2d => 2,
            TargetSpec::TwoPoint { x1, .. } => x1.len(),
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            TargetSpec::GaussianIso { d } => *d,
            TargetSpec::SwissRoll2d => 1,
            TargetSpec::Hypersphere { d, .. } => d - 1,
            TargetSpec::TwoPoint { .. } => 0,
            TargetSpec::LinearSubspace { k, .. } => *k,
        }
    }

    /// Every target ships all three oracles; the flags exist so that callers
    /// can treat loaded datasets and targets uniformly.
    pub fn capabilities(&self) -> Capabilities {
        Capabilities { oracle_m: true, smoothed_log_density: true, true_score: true }
    }

    /// `n` i.i.d. draws, reproducible for a fixed seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        if n < 1 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let d = self.dim();
        let mut r = rng::derived_stream(seed, "sample_target", &[]);
        let mut pts = vec![0.0; n * d];
        for p in pts.chunks_exact_mut(d) {
            match self {
                TargetSpec::GaussianIso { .. } => rng::fill_normal(&mut r, p),
                TargetSpec::SwissRoll2d => {
                    let th = r.random_range(THETA_MIN..THETA_MAX);
                    p[0] = th * th.cos();
                    p[1] = th * th.sin();
                }
                TargetSpec::Hypersphere { radius, .. } => loop {
                    rng::fill_normal(&mut r, p);
                    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        p.iter_mut().for_each(|v| *v *= radius / norm);
                        break;
                    }
                },
                TargetSpec::TwoPoint { x1, x2 } => {
                    p.copy_from_slice(if r.random_bool(0.5) { x2 } else { x1 });
                }
                TargetSpec::LinearSubspace { k, profile, .. } => {
                    for v in &mut p[..*k] {
                        *v = match profile {
                            SubspaceProfile::Uniform { half_width } => r.random_range(-half_width..*half_width),
                            SubspaceProfile::Gaussian { std } => std * r.sample::<f64, _>(StandardNormal),
                        };
                    }
                }
            }
        }
        let mut ds = Dataset::new(pts, d)?.with_name(self.name());
        if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(self) {
            ds.generator_params = map;
        }
        ds.intrinsic_dim = Some(self.intrinsic_dim());
        ds.seed = Some(seed);
        Ok(ds)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        self.validate()?;
        if x.len() != self.dim() {
            return Err(Error::Config(format!(
                "point has dimension {}, target {} has {}",
                x.len(),
                self.name(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("point has non-finite coordinates".into()));
        }
        Ok(())
    }

    /// `E[X_0 | X_t = x]` under this target.
    pub fn oracle_m(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.oracle_m_with(t, x, &QuadratureConfig::default())
    }

    pub fn oracle_m_with(&self, t: f64, x: &[f64], q: &QuadratureConfig) -> Result<Vec<f64>> {
        if let TargetSpec::GaussianIso { .. } = self {
            self.check_point(x)?;
            check_time(t)?;
            return Ok(x.iter().map(|v| v / (1.0 + t)).collect());
        }
        Ok(self.posterior(t, x, q)?.mean)
    }

    /// `-(x - m_t(x)) / t`.
    pub fn true_score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.oracle_m(t, x)?;
        Ok(x.iter().zip(&m).map(|(a, b)| -(a - b) / t).collect())
    }

    pub fn posterior(&self, t: f64, x: &[f64], q: &QuadratureConfig) -> Result<Posterior> {
        self.check_point(x)?;
        check_time(t)?;
        Ok(match self {
            TargetSpec::GaussianIso { d } => Posterior {
                mean: x.iter().map(|v| v / (1.0 + t)).collect(),
                trace_cov: *d as f64 * t / (1.0 + t),
            },
            TargetSpec::TwoPoint { x1, x2 } => {
                let pts = [x1.as_slice(), x2].concat();
                let norms = [sq(x1), sq(x2)];
                let atoms = Atoms { points: &pts, sq_norms: &norms, log_prior: None, d: x.len() };
                let mut mean = vec![0.0; x.len()];
                let s = atoms.posterior(t, x, &mut Vec::new(), &mut mean, true);
                Posterior { mean, trace_cov: s.trace_cov }
            }
            TargetSpec::SwissRoll2d => {
                let rule = swiss_roll_rule(t, x, q);
                let mut mean = vec![0.0; 2];
                let s = rule.atoms().posterior(t, x, &mut Vec::new(), &mut mean, true);
                Posterior { mean, trace_cov: s.trace_cov }
            }
            TargetSpec::Hypersphere { d, radius } => sphere_posterior(*d, *radius, t, x, q),
            TargetSpec::LinearSubspace { k, profile, .. } => {
                let mut mean = vec![0.0; x.len()];
                let mut trace_cov = 0.0;
                for j in 0..*k {
                    let (m, v) = match profile {
                        SubspaceProfile::Gaussian { std } => {
                            let s2 = std * std;
                            (x[j] * s2 / (s2 + t), s2 * t / (s2 + t))
                        }
                        SubspaceProfile::Uniform { half_width } => {
                            let rule = interval_rule(*half_width, t, x[j], q);
                            let mut m = [0.0];
                            let s = rule.atoms().posterior(t, &x[j..j + 1], &mut Vec::new(), &mut m, true);
                            (m[0], s.trace_cov)
                        }
                    };
                    mean[j] = m;
                    trace_cov += v;
                }
                Posterior { mean, trace_cov }
            }
        })
    }

    /// `log (G_t ⋆ p)(x)`. At `t = 0` singular targets return `-inf` off
    /// their support.
    pub fn smoothed_log_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.smoothed_log_density_with(t, x, &QuadratureConfig::default())
    }

    pub fn smoothed_log_density_with(&self, t: f64, x: &[f64], q: &QuadratureConfig) -> Result<f64> {
        self.check_point(x)?;
        if t == 0.0 {
            return self.unsmoothed_log_density(x);
        }
        check_time(t)?;
        let d = x.len() as f64;
        let log_gauss_norm = -0.5 * d * (2.0 * PI * t).ln();
        Ok(match self {
            TargetSpec::GaussianIso { .. } => {
                let v = 1.0 + t;
                -0.5 * d * (2.0 * PI * v).ln() - 0.5 * sq(x) / v
            }
            TargetSpec::TwoPoint { x1, x2 } => {
                let a = -0.5 * dist2(x, x1) / t;
                let b = -0.5 * dist2(x, x2) / t;
                log_gauss_norm + log_add_exp(a, b) - 2f64.ln()
            }
            TargetSpec::SwissRoll2d => {
                let rule = swiss_roll_rule(t, x, q);
                let mut w = Vec::new();
                let mut m = [0.0; 2];
                log_gauss_norm + rule.atoms().posterior(t, x, &mut w, &mut m, false).log_normalizer
            }
            TargetSpec::Hypersphere { d, radius } => sphere_log_density(*d, *radius, t, x, q),
            TargetSpec::LinearSubspace { k, profile, .. } => {
                let mut total = 0.0;
                for (j, &xj) in x.iter().enumerate() {
                    total += if j >= *k {
                        -0.5 * (2.0 * PI * t).ln() - 0.5 * xj * xj / t
                    } else {
                        match profile {
                            SubspaceProfile::Gaussian { std } => {
                                let v = std * std + t;
                                -0.5 * (2.0 * PI * v).ln() - 0.5 * xj * xj / v
                            }
                            SubspaceProfile::Uniform { half_width } => {
                                let rule = interval_rule(*half_width, t, xj, q);
                                let mut m = [0.0];
                                let s = rule.atoms().posterior(t, &[xj], &mut Vec::new(), &mut m, false);
                                -0.5 * (2.0 * PI * t).ln() + s.log_normalizer
                            }
                        }
                    };
                }
                total
            }
        })
    }

    /// Euclidean distance from `x` to the support of the target (zero for
    /// full-support targets).
    pub fn support_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(match self {
            TargetSpec::GaussianIso { .. } => 0.0,
            TargetSpec::TwoPoint { x1, x2 } => dist2(x, x1).min(dist2(x, x2)).sqrt(),
            TargetSpec::SwissRoll2d => swiss_roll_distance(x),
            TargetSpec::Hypersphere { radius, .. } => (sq(x).sqrt() - radius).abs(),
            TargetSpec::LinearSubspace { k, profile, .. } => {
                let along: f64 = match profile {
                    SubspaceProfile::Uniform { half_width } => {
                        x[..*k].iter().map(|v| (v.abs() - half_width).max(0.0).powi(2)).sum()
                    }
                    SubspaceProfile::Gaussian { .. } => 0.0,
                };
                (along + sq(&x[*k..])).sqrt()
            }
        })
    }

    /// Unit tangent of a one-dimensional support at the projection of `x`.
    pub fn curve_tangent(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        match self {
            TargetSpec::SwissRoll2d => {
                let th = swiss_roll_projection(x);
                let (s, c) = th.sin_cos();
                let g = [c - th * s, s + th * c];
                let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
                Ok(vec![g[0] / n, g[1] / n])
            }
            TargetSpec::LinearSubspace { k: 1, d, .. } => {
                let mut e = vec![0.0; *d];
                e[0] = 1.0;
                Ok(e)
            }
            _ => Err(Error::Capability(format!("{} is not a curve", self.name()))),
        }
    }

    /// Point of a one-dimensional support at a parameter in `[0, 1]`.
    pub fn curve_point(&self, u: f64) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            TargetSpec::SwissRoll2d => Ok(swiss_roll_point(THETA_MIN + u * (THETA_MAX - THETA_MIN)).to_vec()),
            TargetSpec::LinearSubspace { k: 1, d, profile: SubspaceProfile::Uniform { half_width } } => {
                let mut p = vec![0.0; *d];
                p[0] = half_width * (2.0 * u - 1.0);
                Ok(p)
            }
            _ => Err(Error::Capability(format!("{} has no bounded curve parametrization", self.name()))),
        }
    }

    fn unsmoothed_log_density(&self, x: &[f64]) -> Result<f64> {
        const ON_SUPPORT: f64 = 1e-12;
        let on = match self {
            TargetSpec::GaussianIso { d } => {
                return Ok(-0.5 * *d as f64 * (2.0 * PI).ln() - 0.5 * sq(x));
            }
            TargetSpec::TwoPoint { x1, x2 } => dist2(x, x1).min(dist2(x, x2)).sqrt() <= ON_SUPPORT,
            TargetSpec::SwissRoll2d => swiss_roll_distance(x) <= ON_SUPPORT,
            TargetSpec::Hypersphere { radius, .. } => (sq(x).sqrt() - radius).abs() <= ON_SUPPORT * radius,
            TargetSpec::LinearSubspace { k, profile, .. } => {
                let inside = match profile {
                    SubspaceProfile::Uniform { half_width } => x[..*k].iter().all(|v| v.abs() <= *half_width),
                    SubspaceProfile::Gaussian { .. } => true,
                };
                inside && x[*k..].iter().all(|v| v.abs() <= ON_SUPPORT)
            }
        };
        if on {
            Err(Error::Domain(format!("{} has no Lebesgue density on its support at t = 0", self.name())))
        } else {
            Ok(f64::NEG_INFINITY)
        }
    }
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Quadrature nodes stored as atoms with log prior weights.
struct Rule {
    points: Vec<f64>,
    sq_norms: Vec<f64>,
    log_prior: Vec<f64>,
    d: usize,
}

impl Rule {
    fn new(points: Vec<f64>, log_prior: Vec<f64>, d: usize) -> Self {
        let sq_norms = points.chunks_exact(d).map(sq).collect();
        Rule { points, sq_norms, log_prior, d }
    }

    fn atoms(&self) -> Atoms<'_> {
        Atoms { points: &self.points, sq_norms: &self.sq_norms, log_prior: Some(&self.log_prior), d: self.d }
    }
}

fn swiss_roll_point(th: f64) -> [f64; 2] {
    [th * th.cos(), th * th.sin()]
}

/// Nearest curve parameter by a coarse scan followed by Newton steps on
/// the squared distance.
fn swiss_roll_projection(x: &[f64]) -> f64 {
    let n = 4000;
    let h = (THETA_MAX - THETA_MIN) / n as f64;
    let mut best = (f64::INFINITY, THETA_MIN);
    for i in 0..=n {
        let th = THETA_MIN + i as f64 * h;
        let d = dist2(x, &swiss_roll_point(th));
        if d < best.0 {
            best = (d, th);
        }
    }
    let mut th = best.1;
    for _ in 0..20 {
        let (s, c) = th.sin_cos();
        let g = [c - th * s, s + th * c];
        let gg = [-2.0 * s - th * c, 2.0 * c - th * s];
        let r = [th * c - x[0], th * s - x[1]];
        let f1 = r[0] * g[0] + r[1] * g[1];
        let f2 = g[0] * g[0] + g[1] * g[1] + r[0] * gg[0] + r[1] * gg[1];
        if f2 <= 0.0 {
            break;
        }
        let next = (th - f1 / f2).clamp(THETA_MIN, THETA_MAX);
        if (next - th).abs() < 1e-15 {
            break;
        }
        th = next;
    }
    th
}

/// Euclidean distance from `x` to the swiss-roll curve.
pub(crate) fn swiss_roll_distance(x: &[f64]) -> f64 {
    dist2(x, &swiss_roll_point(swiss_roll_projection(x))).sqrt()
}

fn swiss_roll_rule(t: f64, x: &[f64], q: &QuadratureConfig) -> Rule {
    let th0 = swiss_roll_projection(x);
    // arc length per unit θ is sqrt(1 + θ^2)
    let half = q.refine_window * t.sqrt() / (1.0 + th0 * th0).sqrt();
    let (ths, ws) = midpoint_nodes(
        THETA_MIN,
        THETA_MAX,
        q.curve_nodes.max(1),
        Some((th0 - half, th0 + half)),
        q.refine_factor,
    );
    let span = THETA_MAX - THETA_MIN;
    let points = ths.iter().flat_map(|&th| swiss_roll_point(th)).collect();
    let log_prior = ws.iter().map(|w| (w / span).ln()).collect();
    Rule::new(points, log_prior, 2)
}

/// Uniform density on `[-a, a]` in one dimension.
fn interval_rule(a: f64, t: f64, x: f64, q: &QuadratureConfig) -> Rule {
    let c = x.clamp(-a, a);
    let half = q.refine_window * t.sqrt();
    let (nodes, ws) = midpoint_nodes(-a, a, q.curve_nodes.max(1), Some((c - half, c + half)), q.refine_factor);
    let log_prior = ws.iter().map(|w| (w / (2.0 * a)).ln()).collect();
    Rule::new(nodes, log_prior, 1)
}

/// Log weights of the polar angle between `x` and a sphere point under the
/// posterior: `r R cos φ / t + (d - 2) log sin φ + log dφ`.
fn sphere_angle_log_weights(d: usize, radius: f64, t: f64, r: f64, q: &QuadratureConfig) -> (Vec<f64>, Vec<f64>) {
    let window = q.refine_window * t.sqrt() / radius;
    let (phi, ws) = midpoint_nodes(0.0, PI, q.angular_nodes.max(1), Some((0.0, window)), q.refine_factor);
    let k = r * radius / t;
    let logs = phi
        .iter()
        .zip(&ws)
        .map(|(&p, &w)| k * p.cos() + (d as f64 - 2.0) * p.sin().ln() + w.ln())
        .collect();
    (phi, logs)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// `log Γ(d/2) - log √π - log Γ((d-1)/2)`, the normaliser of the polar angle
/// density `sin^{d-2} φ` on `[0, π]`.
fn angle_normalizer(d: usize) -> f64 {
    ln_gamma(d as f64 / 2.0) - 0.5 * PI.ln() - ln_gamma((d as f64 - 1.0) / 2.0)
}

fn sphere_log_density(d: usize, radius: f64, t: f64, x: &[f64], q: &QuadratureConfig) -> f64 {
    let r = sq(x).sqrt();
    let (_, logs) = sphere_angle_log_weights(d, radius, t, r, q);
    // subtract rR/t inside the exponent to keep the sum bounded
    -0.5 * d as f64 * (2.0 * PI * t).ln() + angle_normalizer(d) - (r - radius).powi(2) / (2.0 * t)
        + log_sum_exp(&logs.iter().map(|a| a - r * radius / t).collect::<Vec<_>>())
}

fn sphere_posterior(d: usize, radius: f64, t: f64, x: &[f64], q: &QuadratureConfig) -> Posterior {
    let r = sq(x).sqrt();
    if r == 0.0 {
        return Posterior { mean: vec![0.0; d], trace_cov: radius * radius };
    }
    let (phi, logs) = sphere_angle_log_weights(d, radius, t, r, q);
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (p, a) in phi.iter().zip(&logs) {
        let w = (a - m).exp();
        num += w * p.cos();
        den += w;
    }
    let scale = radius * num / den / r;
    let mean: Vec<f64> = x.iter().map(|v| v * scale).collect();
    let trace_cov = (radius * radius - sq(&mean)).max(0.0);
    Posterior { mean, trace_cov }
}
