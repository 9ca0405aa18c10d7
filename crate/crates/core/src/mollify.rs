//! Gaussian mollification of the empirical score.
//!
//! The mollified mean is `(G_h ⋆ m^N_t)(x) = E_z[m^N_t(x + √h z)]`, estimated
//! either by Monte Carlo over a frozen set of standard normal draws or by the
//! time-shift approximation `m^N_{t+h}(x)`.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_time, Error, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::score::Atoms;

/// Kernel draws per evaluation inside sampling loops.
pub const SAMPLING_MC_SAMPLES: usize = 64;
/// Kernel draws per evaluation for density and KL estimates.
pub const DENSITY_MC_SAMPLES: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bandwidth {
    Fixed { h: f64 },
    /// `h(t) = c t^beta`.
    Schedule { c: f64, beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifyMode {
    MonteCarlo,
    TimeShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifySpec {
    pub bandwidth: Bandwidth,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default = "default_true")]
    pub antithetic: bool,
    #[serde(default = "default_mode")]
    pub mode: MollifyMode,
}

fn default_mc() -> usize {
    SAMPLING_MC_SAMPLES
}
fn default_true() -> bool {
    true
}
fn default_mode() -> MollifyMode {
    MollifyMode::MonteCarlo
}

impl MollifySpec {
    pub fn fixed(h: f64) -> Self {
        MollifySpec {
            bandwidth: Bandwidth::Fixed { h },
            mc_samples: SAMPLING_MC_SAMPLES,
            antithetic: true,
            mode: MollifyMode::MonteCarlo,
        }
    }

    pub fn time_shift(h: f64) -> Self {
        MollifySpec { mode: MollifyMode::TimeShift, ..MollifySpec::fixed(h) }
    }

    pub fn with_samples(mut self, m: usize) -> Self {
        self.mc_samples = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            Bandwidth::Fixed { h } if !(h.is_finite() && h > 0.0) => {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
            Bandwidth::Schedule { c, beta } if !(c.is_finite() && c > 0.0 && beta > 0.0 && beta < 1.0) => {
                return Err(Error::Config(format!("schedule needs c > 0 and 0 < beta < 1, got c={c}, beta={beta}")));
            }
            _ => {}
        }
        if self.mode == MollifyMode::MonteCarlo {
            if self.mc_samples == 0 {
                return Err(Error::Config("mc_samples must be at least 1".into()));
            }
            if self.antithetic && self.mc_samples % 2 == 1 {
                return Err(Error::Config(format!("antithetic sampling needs an even mc_samples, got {}", self.mc_samples)));
            }
        }
        Ok(())
    }
}

pub fn resolve_bandwidth(spec: &MollifySpec, t: f64) -> Result<f64> {
    spec.validate()?;
    check_time(t)?;
    Ok(match spec.bandwidth {
        Bandwidth::Fixed { h } => h,
        Bandwidth::Schedule { c, beta } => c * t.powf(beta),
    })
}

/// Standard normal kernel draws, `mc_samples x d`, row-major. With
/// antithetic sampling the second half mirrors the first.
pub fn kernel_noise(spec: &MollifySpec, d: usize, seed: u64) -> Vec<f64> {
    let m = spec.mc_samples;
    let mut r = rng::derived_stream(seed, "mollify", &[]);
    let mut z = vec![0.0; m * d];
    if spec.antithetic {
        let half = m / 2 * d;
        rng::fill_normal(&mut r, &mut z[..half]);
        for i in 0..half {
            z[half + i] = -z[i];
        }
    } else {
        rng::fill_normal(&mut r, &mut z);
    }
    z
}

/// Mollified field over a dataset with the kernel draws frozen at
/// construction, so repeated evaluations define one deterministic smooth
/// field.
pub struct Mollifier<'a> {
    atoms: Atoms<'a>,
    spec: MollifySpec,
    noise: Vec<f64>,
}

impl<'a> Mollifier<'a> {
    pub fn new(ds: &'a Dataset, spec: &MollifySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let noise = match spec.mode {
            MollifyMode::MonteCarlo => kernel_noise(spec, ds.dim(), seed),
            MollifyMode::TimeShift => Vec::new(),
        };
        Ok(Mollifier { atoms: Atoms::of(ds), spec: *spec, noise })
    }

    pub fn dim(&self) -> usize {
        self.atoms.d
    }

    fn check(&self, t: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.atoms.d {
            return Err(Error::Config(format!("query has dimension {}, dataset has {}", x.len(), self.atoms.d)));
        }
        resolve_bandwidth(&self.spec, t)
    }

    /// Mollified mean into `mean`; returns the mean posterior-covariance
    /// trace when `want_trace`.
    pub(crate) fn mean_into(
        &self,
        t: f64,
        h: f64,
        x: &[f64],
        scratch: &mut Vec<f64>,
        mean: &mut [f64],
        want_trace: bool,
    ) -> f64 {
        let d = self.atoms.d;
        match self.spec.mode {
            MollifyMode::TimeShift => {
                self.atoms.posterior(t + h, x, scratch, mean, want_trace).trace_cov
            }
            MollifyMode::MonteCarlo => {
                let sh = h.sqrt();
                let mut y = vec![0.0; d];
                let mut mj = vec![0.0; d];
                mean.iter_mut().for_each(|v| *v = 0.0);
                let mut trace = 0.0;
                for z in self.noise.chunks_exact(d) {
                    for k in 0..d {
                        y[k] = x[k] + sh * z[k];
                    }
                    trace += self.atoms.posterior(t, &y, scratch, &mut mj, want_trace).trace_cov;
                    for k in 0..d {
                        mean[k] += mj[k];
                    }
                }
                let m = self.spec.mc_samples as f64;
                mean.iter_mut().for_each(|v| *v /= m);
                trace / m
            }
        }
    }

    /// Score into `out` and the divergence as return value.
    pub(crate) fn score_div_into(&self, t: f64, h: f64, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) -> f64 {
        let trace = self.mean_into(t, h, x, scratch, out, true);
        for k in 0..self.atoms.d {
            out[k] = -(x[k] - out[k]) / t;
        }
        let d = self.atoms.d as f64;
        match self.spec.mode {
            MollifyMode::TimeShift => -d / t + trace / (t * (t + h)),
            MollifyMode::MonteCarlo => -d / t + trace / (t * t),
        }
    }

    pub(crate) fn score_into(&self, t: f64, h: f64, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        self.mean_into(t, h, x, scratch, out, false);
        for k in 0..self.atoms.d {
            out[k] = -(x[k] - out[k]) / t;
        }
    }

    pub fn mean(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.check(t, x)?;
        let mut m = vec![0.0; x.len()];
        self.mean_into(t, h, x, &mut Vec::new(), &mut m, false);
        Ok(m)
    }

    pub fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.check(t, x)?;
        let mut s = vec![0.0; x.len()];
        self.score_into(t, h, x, &mut Vec::new(), &mut s);
        Ok(s)
    }

    pub fn divergence(&self, t: f64, x: &[f64]) -> Result<f64> {
        let h = self.check(t, x)?;
        let mut s = vec![0.0; x.len()];
        Ok(self.score_div_into(t, h, x, &mut Vec::new(), &mut s))
    }

    /// Jacobian of the mollified score.
    pub fn jacobian(&self, t: f64, x: &[f64]) -> Result<Matrix> {
        let h = self.check(t, x)?;
        let d = self.atoms.d;
        let mut w = Vec::new();
        let mut mj = vec![0.0; d];
        let (cov, scale) = match self.spec.mode {
            MollifyMode::TimeShift => {
                self.atoms.posterior(t + h, x, &mut w, &mut mj, false);
                (self.atoms.weighted_outer(&w, &mj), 1.0 / (t * (t + h)))
            }
            MollifyMode::MonteCarlo => {
                let sh = h.sqrt();
                let mut acc = Matrix::zeros(d, d);
                let mut y = vec![0.0; d];
                for z in self.noise.chunks_exact(d) {
                    for k in 0..d {
                        y[k] = x[k] + sh * z[k];
                    }
                    self.atoms.posterior(t, &y, &mut w, &mut mj, false);
                    let c = self.atoms.weighted_outer(&w, &mj);
                    acc.data.iter_mut().zip(&c.data).for_each(|(a, b)| *a += b);
                }
                acc.scale(1.0 / self.spec.mc_samples as f64);
                (acc, 1.0 / (t * t))
            }
        };
        let mut jac = cov;
        jac.scale(scale);
        for i in 0..d {
            jac[(i, i)] -= 1.0 / t;
        }
        Ok(jac)
    }
}

fn check_query(ds: &Dataset, t: f64, x: &[f64]) -> Result<()> {
    check_time(t)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("query point has non-finite coordinates".into()));
    }
    if x.len() != ds.dim() {
        return Err(Error::Config(format!("query has dimension {}, dataset has {}", x.len(), ds.dim())));
    }
    Ok(())
}

/// `(G_h ⋆ m^N_t)(x)`; the kernel draws are a function of `seed` only.
pub fn m_mollified(ds: &Dataset, t: f64, x: &[f64], spec: &MollifySpec, seed: u64) -> Result<Vec<f64>> {
    check_query(ds, t, x)?;
    Mollifier::new(ds, spec, seed)?.mean(t, x)
}

pub fn score_mollified(ds: &Dataset, t: f64, x: &[f64], spec: &MollifySpec, seed: u64) -> Result<Vec<f64>> {
    check_query(ds, t, x)?;
    Mollifier::new(ds, spec, seed)?.score(t, x)
}

pub fn divergence_mollified(ds: &Dataset, t: f64, x: &[f64], spec: &MollifySpec, seed: u64) -> Result<f64> {
    check_query(ds, t, x)?;
    Mollifier::new(ds, spec, seed)?.divergence(t, x)
}

pub fn jacobian_mollified(ds: &Dataset, t: f64, x: &[f64], spec: &MollifySpec, seed: u64) -> Result<Matrix> {
    check_query(ds, t, x)?;
    Mollifier::new(ds, spec, seed)?.jacobian(t, x)
}
