//! Experiment configuration: a JSON object with a `command` discriminator,
//! the shared keys `seed`, `out` and `threads`, and command-specific keys.

use mollescore::sampler::FlowConfig;
use mollescore::ledkde::GridKernel;
use mollescore::mollify::{Bandwidth, MollifyMode, SAMPLING_MC_SAMPLES};
use mollescore::{MollifySpec, TargetSpec, TimeGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

pub const DEFAULT_OUT: &str = "mollescore-out";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Flag values that take precedence over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Experiment {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub command: Command,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum Command {
    GenData(GenData),
    Sample(Sample),
    KlSweep(KlSweep),
    Neff(Neff),
    Covariance(Covariance),
    DimEstimate(DimEstimate),
    Biasvar(Biasvar),
    Memorize(Memorize),
    Ledkde(Ledkde),
    SpectralCheck(SpectralCheck),
}

pub const COMMANDS: [&str; 10] = [
    "gen-data",
    "sample",
    "kl-sweep",
    "neff",
    "covariance",
    "dim-estimate",
    "biasvar",
    "memorize",
    "ledkde",
    "spectral-check",
];

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Sample(_) => "sample",
            Command::KlSweep(_) => "kl-sweep",
            Command::Neff(_) => "neff",
            Command::Covariance(_) => "covariance",
            Command::DimEstimate(_) => "dim-estimate",
            Command::Biasvar(_) => "biasvar",
            Command::Memorize(_) => "memorize",
            Command::Ledkde(_) => "ledkde",
            Command::SpectralCheck(_) => "spectral-check",
        }
    }
}

pub fn load(path: &Path, cli_command: &str, ov: Overrides) -> Result<Experiment, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse(value, cli_command, ov)
}

pub fn parse(value: Value, cli_command: &str, ov: Overrides) -> Result<Experiment, ConfigError> {
    let Value::Object(mut map) = value else {
        return err("config must be a JSON object");
    };
    match map.remove("command") {
        None => return err("config has no `command` key"),
        Some(Value::String(c)) if c == cli_command => {}
        Some(Value::String(c)) => return err(format!("config is for `{c}` but `{cli_command}` was requested")),
        Some(other) => return err(format!("`command` must be a string, got {other}")),
    }
    let seed = match (ov.seed, map.remove("seed")) {
        (Some(s), _) => s,
        (None, None) => 0,
        (None, Some(v)) => v.as_u64().ok_or_else(|| ConfigError(format!("`seed` must be a non-negative integer, got {v}")))?,
    };
    let out = match (ov.out, map.remove("out")) {
        (Some(o), _) => o,
        (None, None) => PathBuf::from(DEFAULT_OUT),
        (None, Some(Value::String(s))) => PathBuf::from(s),
        (None, Some(v)) => return err(format!("`out` must be a string, got {v}")),
    };
    let threads = match (ov.threads, map.remove("threads")) {
        (Some(t), _) => Some(t),
        (None, None) | (None, Some(Value::Null)) => None,
        (None, Some(v)) => Some(v.as_u64().ok_or_else(|| ConfigError(format!("`threads` must be a positive integer, got {v}")))? as usize),
    };
    if threads == Some(0) {
        return err("`threads` must be positive");
    }
    let command = match cli_command {
        "gen-data" => Command::GenData(body(map)?),
        "sample" => Command::Sample(body(map)?),
        "kl-sweep" => Command::KlSweep(body(map)?),
        "neff" => Command::Neff(body(map)?),
        "covariance" => Command::Covariance(body(map)?),
        "dim-estimate" => Command::DimEstimate(body(map)?),
        "biasvar" => Command::Biasvar(body(map)?),
        "memorize" => Command::Memorize(body(map)?),
        "ledkde" => Command::Ledkde(body(map)?),
        "spectral-check" => Command::SpectralCheck(body(map)?),
        other => return err(format!("unknown command `{other}`")),
    };
    Ok(Experiment { seed, out, threads, command })
}

fn body<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T, ConfigError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| ConfigError(e.to_string()))
}

fn default_t_final() -> f64 {
    15.0
}
fn default_mc() -> usize {
    SAMPLING_MC_SAMPLES
}
fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_rho() -> TimeGrid {
    TimeGrid::Geometric { rho: 1.05 }
}
fn default_threshold() -> f64 {
    mollescore::analysis::MEMORIZATION_THRESHOLD
}

/// Where the training points come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        target: TargetSpec,
        n: usize,
    },
    Csv {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        filter_label: Option<u8>,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

impl DataSource {
    pub fn target(&self) -> Option<&TargetSpec> {
        match self {
            DataSource::Synthetic { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            DataSource::Synthetic { target, n } => {
                target.validate().map_err(|e| ConfigError(e.to_string()))?;
                if *n == 0 {
                    return err("synthetic dataset size must be positive");
                }
            }
            DataSource::Csv { path } => exists(path)?,
            DataSource::Idx { images, labels, .. } => {
                exists(images)?;
                if let Some(l) = labels {
                    exists(l)?;
                }
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        match self {
            DataSource::Synthetic { target, n } => format!("{n} points from {}", target.name()),
            DataSource::Csv { path } => format!("CSV {}", path.display()),
            DataSource::Idx { images, filter_label, limit, .. } => format!(
                "IDX {} (label {}, limit {})",
                images.display(),
                filter_label.map_or("any".into(), |l| l.to_string()),
                limit.map_or("none".into(), |l| l.to_string())
            ),
        }
    }
}

fn exists(p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        err(format!("{} does not exist", p.display()))
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        err(format!("`{name}` must be positive, got {v}"))
    }
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        err(format!("`{name}` must not be empty"))
    } else {
        Ok(())
    }
}

/// Score field used for generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Empirical,
    /// Either `h` or `schedule` sets the bandwidth.
    Mollified {
        #[serde(default)]
        h: Option<f64>,
        #[serde(default)]
        schedule: Option<Schedule>,
        #[serde(default = "default_mc")]
        mc_samples: usize,
        #[serde(default = "default_true")]
        antithetic: bool,
        #[serde(default)]
        time_shift: bool,
        /// Draw the kernel noise once instead of at every step.
        #[serde(default)]
        frozen: bool,
    },
    /// Exact score of the synthetic target.
    Analytic,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub c: f64,
    pub beta: f64,
}

impl FieldSpec {
    pub fn mollify_spec(&self) -> Result<Option<MollifySpec>, ConfigError> {
        let FieldSpec::Mollified { h, schedule, mc_samples, antithetic, time_shift, .. } = self else {
            return Ok(None);
        };
        let bandwidth = match (h, schedule) {
            (Some(h), None) => Bandwidth::Fixed { h: *h },
            (None, Some(s)) => Bandwidth::Schedule { c: s.c, beta: s.beta },
            _ => return err("a mollified field needs exactly one of `h` and `schedule`"),
        };
        let spec = MollifySpec {
            bandwidth,
            mc_samples: *mc_samples,
            antithetic: *antithetic,
            mode: if *time_shift { MollifyMode::TimeShift } else { MollifyMode::MonteCarlo },
        };
        spec.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(Some(spec))
    }

    pub fn validate(&self, data: &DataSource) -> Result<(), ConfigError> {
        if matches!(self, FieldSpec::Analytic) && data.target().is_none() {
            return err("the analytic field needs a synthetic data source");
        }
        self.mollify_spec().map(|_| ())
    }
}

/// Reverse-SDE settings shared by `sample` and `memorize`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSettings {
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    pub t_cutoff: f64,
    pub time_grid: TimeGrid,
    pub n_samples: usize,
}

impl SdeSettings {
    fn validate(&self) -> Result<(), ConfigError> {
        self.time_grid.nodes(self.t_cutoff, self.t_final).map_err(|e| ConfigError(e.to_string()))?;
        if self.n_samples == 0 {
            return err("`n_samples` must be positive");
        }
        Ok(())
    }
}

/// Probability-flow settings shared by `kl-sweep` and `neff`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSettings {
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_rho")]
    pub time_grid: TimeGrid,
    #[serde(default)]
    pub r_max: Option<f64>,
}

impl FlowSettings {
    pub fn at(&self, t_cutoff: f64) -> FlowConfig {
        FlowConfig { t_cutoff, t_final: self.t_final, time_grid: self.time_grid, r_max: self.r_max }
    }

    fn validate(&self, cutoffs: &[f64]) -> Result<(), ConfigError> {
        for &t in cutoffs {
            self.time_grid.nodes(t, self.t_final).map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenData {
    pub data: DataSource,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub data: DataSource,
    pub fields: Vec<FieldSpec>,
    pub sde: SdeSettings,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlSweep {
    pub target: TargetSpec,
    pub n: usize,
    pub t_cutoffs: Vec<f64>,
    /// Bandwidths; `0` selects the empirical score.
    pub h: Vec<f64>,
    #[serde(default)]
    pub flow: Option<FlowSettings>,
    pub q: usize,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Neff {
    pub target: TargetSpec,
    pub n: usize,
    pub t_cutoff: f64,
    pub h: Vec<f64>,
    #[serde(default)]
    pub flow: Option<FlowSettings>,
    pub q: usize,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default)]
    pub bracket: Option<f64>,
}

/// Query point: explicit coordinates or a training point by index.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Query {
    Point { x: Vec<f64> },
    DataPoint { index: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Covariance {
    pub data: DataSource,
    pub t: Vec<f64>,
    pub query: Query,
    /// Image height and width; enables eigenvector heatmaps.
    #[serde(default)]
    pub image_shape: Option<[usize; 2]>,
    /// Leading and trailing eigenvectors to draw per time.
    #[serde(default = "default_five")]
    pub eigenvectors: usize,
}

fn default_five() -> usize {
    5
}

/// Query points of a dimension fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Queries {
    /// Evenly spaced training points.
    DataPoints { count: usize },
    Points { x: Vec<Vec<f64>> },
    /// Evenly spaced points on the target curve.
    Curve { count: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimEstimate {
    pub data: DataSource,
    pub t: Vec<f64>,
    pub queries: Queries,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Biasvar {
    pub target: TargetSpec,
    pub n: Vec<usize>,
    pub h: Vec<f64>,
    pub t: f64,
    pub x: Vec<f64>,
    pub replicates: usize,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Memorize {
    pub data: DataSource,
    pub fields: Vec<FieldSpec>,
    pub sde: SdeSettings,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Coordinates of generated samples below this value are set to zero.
    #[serde(default)]
    pub clamp_below: Option<f64>,
    /// Also report the fraction of samples within this distance of a
    /// training point.
    #[serde(default)]
    pub proximity_radius: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ledkde {
    pub data: DataSource,
    pub grid: GridSettings,
    /// Kernel of the plain KDE (the `L` kernel).
    pub kde_kernel: GridKernel,
    /// Kernel of the log-space smoothing (the `K` kernel).
    pub smoothing_kernel: GridKernel,
    #[serde(default)]
    pub eps: Option<f64>,
    /// Compare both estimates against the target density smoothed to this
    /// time (synthetic data only).
    #[serde(default)]
    pub reference_t: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralCheck {
    pub data: DataSource,
    pub t: f64,
    #[serde(default)]
    pub h: f64,
    #[serde(default)]
    pub kmax: Option<usize>,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    /// Evaluation points along the first axis of the cube.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Monte-Carlo kernel draws of the reference mollified score.
    #[serde(default = "default_reference_mc")]
    pub reference_mc_samples: usize,
}

fn default_half_width() -> f64 {
    0.5
}
fn default_points() -> usize {
    101
}
fn default_reference_mc() -> usize {
    100_000
}

impl Command {
    /// Checks that need no computation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            Command::GenData(c) => c.data.validate(),
            Command::Sample(c) => {
                c.data.validate()?;
                nonempty("fields", &c.fields)?;
                c.fields.iter().try_for_each(|f| f.validate(&c.data))?;
                c.sde.validate()
            }
            Command::KlSweep(c) => {
                target_ok(&c.target)?;
                nonempty("t_cutoffs", &c.t_cutoffs)?;
                nonempty("h", &c.h)?;
                if c.h.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
                    return err("every `h` must be finite and non-negative");
                }
                counts(c.n, c.q, c.replicates)?;
                c.flow.clone().unwrap_or_else(default_flow).validate(&c.t_cutoffs)
            }
            Command::Neff(c) => {
                target_ok(&c.target)?;
                nonempty("h", &c.h)?;
                c.h.iter().try_for_each(|&h| positive("h", h))?;
                counts(c.n, c.q, c.replicates)?;
                c.flow.clone().unwrap_or_else(default_flow).validate(&[c.t_cutoff])
            }
            Command::Covariance(c) => {
                c.data.validate()?;
                nonempty("t", &c.t)?;
                c.t.iter().try_for_each(|&t| positive("t", t))
            }
            Command::DimEstimate(c) => {
                c.data.validate()?;
                if c.t.len() < 4 {
                    return err("`t` needs at least 4 times");
                }
                c.t.iter().try_for_each(|&t| positive("t", t))?;
                if matches!(c.queries, Queries::Curve { .. }) && c.data.target().is_none() {
                    return err("curve queries need a synthetic data source");
                }
                Ok(())
            }
            Command::Biasvar(c) => {
                target_ok(&c.target)?;
                nonempty("n", &c.n)?;
                nonempty("h", &c.h)?;
                positive("t", c.t)?;
                c.h.iter().try_for_each(|&h| positive("h", h))?;
                if c.x.len() != c.target.dim() {
                    return err(format!("`x` has {} coordinates, the target has {}", c.x.len(), c.target.dim()));
                }
                if c.replicates < 2 {
                    return err("`replicates` must be at least 2");
                }
                Ok(())
            }
            Command::Memorize(c) => {
                c.data.validate()?;
                nonempty("fields", &c.fields)?;
                c.fields.iter().try_for_each(|f| f.validate(&c.data))?;
                positive("threshold", c.threshold)?;
                if let Some(r) = c.proximity_radius {
                    positive("proximity_radius", r)?;
                }
                c.sde.validate()
            }
            Command::Ledkde(c) => {
                c.data.validate()?;
                if let Some(t) = c.reference_t {
                    positive("reference_t", t)?;
                    if c.data.target().is_none() {
                        return err("`reference_t` needs a synthetic data source");
                    }
                }
                if c.grid.lo.len() != c.grid.cells.len() || c.grid.hi.len() != c.grid.cells.len() {
                    return err("grid `lo`, `hi` and `cells` must have equal lengths");
                }
                Ok(())
            }
            Command::SpectralCheck(c) => {
                c.data.validate()?;
                positive("t", c.t)?;
                positive("half_width", c.half_width)?;
                if !(c.h.is_finite() && c.h >= 0.0) {
                    return err("`h` must be non-negative");
                }
                if c.points < 2 {
                    return err("`points` must be at least 2");
                }
                Ok(())
            }
        }
    }
}

pub fn default_flow() -> FlowSettings {
    FlowSettings { t_final: default_t_final(), time_grid: default_rho(), r_max: None }
}

fn target_ok(t: &TargetSpec) -> Result<(), ConfigError> {
    t.validate().map_err(|e| ConfigError(e.to_string()))?;
    if !t.capabilities().smoothed_log_density && !t.capabilities().oracle_m {
        return err(format!("{} provides no oracle", t.name()));
    }
    Ok(())
}

fn counts(n: usize, q: usize, replicates: usize) -> Result<(), ConfigError> {
    if n == 0 || replicates == 0 {
        return err("`n` and `replicates` must be positive");
    }
    if q < 2 {
        return err("`q` must be at least 2");
    }
    Ok(())
}
