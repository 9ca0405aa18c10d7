//! Reverse-time SDE sampling and probability-flow log densities for any
//! score field.
//!
//! Diffusion time `t` runs from `0` (data) to `T` (noise). The forward process
//! is `dX = dB`, so `X_T ≈ N(0, T I)` once `T` dominates the data scale.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, QuadratureConfig, TargetSpec};
use crate::error::{Error, Result};
use crate::mollify::{resolve_bandwidth, Mollifier, MollifySpec};
use crate::score::{self, Atoms};
use crate::{par, rng};

/// Reusable buffers for one thread of evaluations.
#[derive(Default)]
pub struct Workspace {
    pub(crate) weights: Vec<f64>,
}

/// A time-dependent vector field `s(t, x)` with its divergence.
///
/// `key` selects the randomness of stochastic backends (fresh kernel draws
/// per SDE step); deterministic backends ignore it.
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;
    fn label(&self) -> String;
    fn score(&self, t: f64, x: &[f64], key: u64, ws: &mut Workspace, out: &mut [f64]) -> Result<()>;
    /// Writes the score into `out` and returns the divergence.
    fn score_div(&self, t: f64, x: &[f64], key: u64, ws: &mut Workspace, out: &mut [f64]) -> Result<f64>;
}

/// Empirical score of a dataset.
pub struct EmpiricalField<'a> {
    atoms: Atoms<'a>,
}

impl<'a> EmpiricalField<'a> {
    pub fn new(ds: &'a Dataset) -> Self {
        EmpiricalField { atoms: Atoms::of(ds) }
    }
}

impl ScoreField for EmpiricalField<'_> {
    fn dim(&self) -> usize {
        self.atoms.d
    }
    fn label(&self) -> String {
        "empirical".into()
    }
    fn score(&self, t: f64, x: &[f64], _key: u64, ws: &mut Workspace, out: &mut [f64]) -> Result<()> {
        score::score_into(&self.atoms, t, x, &mut ws.weights, out);
        Ok(())
    }
    fn score_div(&self, t: f64, x: &[f64], _key: u64, ws: &mut Workspace, out: &mut [f64]) -> Result<f64> {
        Ok(score::score_and_divergence(&self.atoms, t, x, &mut ws.weights, out))
    }
}

/// Mollified empirical score. With `fresh` kernel draws every call derives
/// its own draws from `key`; `frozen` fixes one set at construction.
pub struct MollifiedField<'a> {
    ds: &'a Dataset,
    spec: MollifySpec,
    frozen: Option<Mollifier<'a>>,
}

impl<'a> MollifiedField<'a> {
    pub fn fresh(ds: &'a Dataset, spec: &MollifySpec) -> Result<Self> {
        spec.validate()?;
        Ok(MollifiedField { ds, spec: *spec, frozen: None })
    }

    pub fn frozen(ds: &'a Dataset, spec: &MollifySpec, seed: u64) -> Result<Self> {
        Ok(MollifiedField { ds, spec: *spec, frozen: Some(Mollifier::new(ds, spec, seed)?) })
    }

    fn with<T>(&self, key: u64, f: impl FnOnce(&Mollifier<'_>) -> T) -> Result<T> {
        match &self.frozen {
            Some(m) => Ok(f(m)),
            None => Ok(f(&Mollifier::new(self.ds, &self.spec, key)?)),
        }
    }
}

impl ScoreField for MollifiedField<'_> {
    fn dim(&self) -> usize {
        self.ds.dim()
    }
    fn label(&self) -> String {
        match self.spec.bandwidth {
            crate::mollify::Bandwidth::Fixed { h } => format!("mollified(h={h})"),
            crate::mollify::Bandwidth::Schedule { c, beta } => format!("mollified(h={c}*t^{beta})"),
        }
    }
    fn score(&self, t: f64, x: &[f64], key: u64, ws: &mut Workspace, out: &mut [f64]) -> Result<()> {
        let h = resolve_bandwidth(&self.spec, t)?;
        self.with(key, |m| m.score_into(t, h, x, &mut ws.weights, out))
    }
    fn score_div(&self, t: f64, x: &[f64], key: u64, ws: &mut Workspace, out: &mut [f64]) -> Result<f64> {
        let h = resolve_bandwidth(&self.spec, t)?;
        self.with(key, |m| m.score_div_into(t, h, x, &mut ws.weights, out))
    }
}

/// True score of an analytic target.
pub struct AnalyticField {
    pub target: TargetSpec,
    pub quadrature: QuadratureConfig,
}

impl AnalyticField {
    pub fn new(target: TargetSpec) -> Result<Self> {
        target.validate()?;
        Ok(AnalyticField { target, quadrature: QuadratureConfig::default() })
    }
}

impl ScoreField for AnalyticField {
    fn dim(&self) -> usize {
        self.target.dim()
    }
    fn label(&self) -> String {
        format!("analytic({})", self.target.name())
    }
    fn score(&self, t: f64, x: &[f64], key: u64, ws: &mut Workspace, out: &mut [f64]) -> Result<()> {
        self.score_div(t, x, key, ws, out).map(|_| ())
    }
    fn score_div(&self, t: f64, x: &[f64], _key: u64, _ws: &mut Workspace, out: &mut [f64]) -> Result<f64> {
        let post = self.target.posterior(t, x, &self.quadrature)?;
        for k in 0..x.len() {
            out[k] = -(x[k] - post.mean[k]) / t;
        }
        Ok(-(x.len() as f64) / t + post.trace_cov / (t * t))
    }
}

/// `s = 0`: pure Brownian motion in reverse time.
pub struct ZeroField {
    pub d: usize,
}

impl ScoreField for ZeroField {
    fn dim(&self) -> usize {
        self.d
    }
    fn label(&self) -> String {
        "zero".into()
    }
    fn score(&self, _t: f64, _x: &[f64], _key: u64, _ws: &mut Workspace, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }
    fn score_div(&self, _t: f64, _x: &[f64], _key: u64, _ws: &mut Workspace, out: &mut [f64]) -> Result<f64> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(0.0)
    }
}

/// Diffusion-time nodes between the cutoff and the final time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeGrid {
    /// Constant step; the step touching the cutoff is shortened.
    Uniform { dt: f64 },
    /// Nodes `t_cutoff · rho^j`, capped at the final time.
    Geometric { rho: f64 },
}

impl TimeGrid {
    /// Ascending nodes from `t_lo` to `t_hi` inclusive.
    pub fn nodes(&self, t_lo: f64, t_hi: f64) -> Result<Vec<f64>> {
        if !(t_lo.is_finite() && t_lo > 0.0 && t_hi > t_lo && t_hi.is_finite()) {
            return Err(Error::Config(format!("need 0 < t_cutoff < t_final, got {t_lo} and {t_hi}")));
        }
        match *self {
            TimeGrid::Uniform { dt } => {
                if !(dt.is_finite() && dt > 0.0) {
                    return Err(Error::Config(format!("time step must be positive, got {dt}")));
                }
                let steps = ((t_hi - t_lo) / dt - 1e-9).ceil().max(1.0) as usize;
                // count down from the final time so that every step but the
                // last has exactly dt
                let mut v: Vec<f64> = (0..steps).map(|k| t_hi - k as f64 * dt).collect();
                v.push(t_lo);
                v.reverse();
                Ok(v)
            }
            TimeGrid::Geometric { rho } => {
                if !(rho.is_finite() && rho > 1.0) {
                    return Err(Error::Config(format!("geometric ratio must exceed 1, got {rho}")));
                }
                let mut v = vec![t_lo];
                loop {
                    let next = v.last().unwrap() * rho;
                    if next >= t_hi * (1.0 - 1e-12) {
                        break;
                    }
                    v.push(next);
                }
                v.push(t_hi);
                Ok(v)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub t_final: f64,
    pub t_cutoff: f64,
    pub time_grid: TimeGrid,
    pub n_samples: usize,
    pub seed: u64,
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        self.time_grid.nodes(self.t_cutoff, self.t_final)?;
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Generated points with the configuration that produced them.
#[derive(Clone, Debug, Serialize)]
pub struct SampleBatch {
    #[serde(skip)]
    pub points: Vec<f64>,
    pub d: usize,
    pub config: SdeConfig,
    pub score_label: String,
    /// Trajectories dropped because they produced non-finite values.
    pub rejected: usize,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        Ok(Dataset::new(self.points.clone(), self.d)?.with_name(self.score_label.clone()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        let header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for p in self.rows() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json { path: path.into(), source: e })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Euler–Maruyama on the reverse SDE `dY = s(T - τ, Y) dτ + dB_τ` from
/// `Y_0 ~ N(0, T I)` until the diffusion time reaches the cutoff.
pub fn reverse_sde(field: &dyn ScoreField, cfg: &SdeConfig) -> Result<SampleBatch> {
    cfg.validate()?;
    let nodes = cfg.time_grid.nodes(cfg.t_cutoff, cfg.t_final)?;
    let d = field.dim();
    let steps = nodes.len() - 1;
    let outcomes = par::map_indices(cfg.n_samples, |traj| -> Result<Option<Vec<f64>>> {
        let mut r = rng::derived_stream(cfg.seed, "trajectory", &[traj as u64]);
        let mut y = rng::normal_vec(&mut r, d);
        let sd = cfg.t_final.sqrt();
        y.iter_mut().for_each(|v| *v *= sd);
        let mut s = vec![0.0; d];
        let mut xi = vec![0.0; d];
        let mut ws = Workspace::default();
        for (step, k) in (1..=steps).rev().enumerate() {
            let t = nodes[k];
            let dtau = nodes[k] - nodes[k - 1];
            let key = rng::derive_seed(cfg.seed, "mollify", &[step as u64, traj as u64]);
            field.score(t, &y, key, &mut ws, &mut s)?;
            rng::fill_normal(&mut r, &mut xi);
            let sq = dtau.sqrt();
            for j in 0..d {
                y[j] += s[j] * dtau + sq * xi[j];
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Ok(None);
            }
        }
        Ok(Some(y))
    });
    let mut points = Vec::with_capacity(cfg.n_samples * d);
    let mut rejected = 0;
    for o in outcomes {
        match o? {
            Some(y) => points.extend(y),
            None => rejected += 1,
        }
    }
    if rejected > 0 {
        log::warn!("{rejected} of {} trajectories produced non-finite values and were dropped", cfg.n_samples);
    }
    Ok(SampleBatch { points, d, config: cfg.clone(), score_label: field.label(), rejected })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub t_cutoff: f64,
    pub t_final: f64,
    pub time_grid: TimeGrid,
    /// Escape radius; defaults to `10 sqrt(T d) sqrt(T / t_cutoff)`. Near an
    /// atom the empirical flow stretches offsets by `sqrt(t / t_cutoff)`, so
    /// bounded trajectories can end well outside `sqrt(T d)`.
    #[serde(default)]
    pub r_max: Option<f64>,
}

/// `log q_{t_cutoff}(x)` for the density transported by the probability-flow
/// ODE `dx/dt = -s(t, x)/2` from the terminal Gaussian `N(0, T I)`.
///
/// Heun steps forward in diffusion time with the divergence integral
/// accumulated by the trapezoidal rule on the same stage points.
pub fn flow_log_density(field: &dyn ScoreField, cfg: &FlowConfig, x: &[f64]) -> Result<f64> {
    flow_log_density_with(field, cfg, x, &mut Workspace::default())
}

pub fn flow_log_density_with(field: &dyn ScoreField, cfg: &FlowConfig, x: &[f64], ws: &mut Workspace) -> Result<f64> {
    let d = field.dim();
    if x.len() != d {
        return Err(Error::Config(format!("point has dimension {}, field has {d}", x.len())));
    }
    let nodes = cfg.time_grid.nodes(cfg.t_cutoff, cfg.t_final)?;
    let r_max = cfg.r_max.unwrap_or(10.0 * (cfg.t_final * d as f64).sqrt() * (cfg.t_final / cfg.t_cutoff).sqrt().max(1.0));
    let mut y = x.to_vec();
    let mut pred = vec![0.0; d];
    let mut s0 = vec![0.0; d];
    let mut s1 = vec![0.0; d];
    let mut acc = 0.0;
    let mut div0 = field.score_div(nodes[0], &y, 0, ws, &mut s0)?;
    for k in 0..nodes.len() - 1 {
        let (ta, tb) = (nodes[k], nodes[k + 1]);
        let dt = tb - ta;
        for j in 0..d {
            pred[j] = y[j] - 0.5 * dt * s0[j];
        }
        let div1 = field.score_div(tb, &pred, 0, ws, &mut s1)?;
        for j in 0..d {
            y[j] -= 0.25 * dt * (s0[j] + s1[j]);
        }
        acc += 0.25 * dt * (div0 + div1);
        let r2: f64 = y.iter().map(|v| v * v).sum();
        if !r2.is_finite() || r2 > r_max * r_max {
            return Err(Error::FlowEscape { t: tb, r_max });
        }
        if !acc.is_finite() {
            return Err(Error::Numerical(format!("divergence integral is not finite at t = {tb}")));
        }
        if k + 2 < nodes.len() {
            div0 = field.score_div(tb, &y, 0, ws, &mut s0)?;
        }
    }
    let t = cfg.t_final;
    let r2: f64 = y.iter().map(|v| v * v).sum();
    let log_terminal = -0.5 * d as f64 * (2.0 * PI * t).ln() - 0.5 * r2 / t;
    Ok(log_terminal - acc)
}
