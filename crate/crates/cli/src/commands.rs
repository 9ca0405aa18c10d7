//! Command execution: each command writes `results.csv`, `summary.json` and
//! its SVG figures into the output directory.

use crate::config::*;
use crate::svg::{Plot, PALETTE};
use mollescore::analysis::{self, BiasVarianceConfig, NeffConfig, SweepRow};
use mollescore::dataset::{load_dataset, load_idx, save_dataset};
use mollescore::ledkde::{self, Grid};
use mollescore::mollify::Mollifier;
use mollescore::rng::derive_seed;
use mollescore::sampler::{self, AnalyticField, EmpiricalField, MollifiedField};
use mollescore::{score, spectral, Dataset, Error, MollifySpec, SampleBatch, ScoreField, SdeConfig};
use serde::Serialize;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Numerical(_) | Error::FlowEscape { .. }) => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Out {
    dir: PathBuf,
}

impl Out {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e }.into())
    }

    fn json(&self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Json { path: self.path(name), source: e })?;
        s.push('\n');
        self.text(name, &s)
    }

    fn svg(&self, name: &str, plot: &Plot) -> Result<()> {
        self.text(name, &plot.render())
    }
}

/// Comma-separated table built in memory.
struct Table {
    text: String,
}

impl Table {
    fn new(header: &[String]) -> Self {
        Table { text: header.join(",") + "\n" }
    }

    fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn coord_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn run(exp: &Experiment) -> Result<()> {
    exp.command.validate()?;
    std::fs::create_dir_all(&exp.out).map_err(|e| Error::Io { path: exp.out.clone(), source: e })?;
    let out = Out { dir: exp.out.clone() };
    let seed = exp.seed;
    log::info!("{} with seed {seed} into {}", exp.command.name(), exp.out.display());
    let summary = match &exp.command {
        Command::GenData(c) => gen_data(c, seed, &out)?,
        Command::Sample(c) => sample(c, seed, &out)?,
        Command::KlSweep(c) => kl_sweep(c, seed, &out)?,
        Command::Neff(c) => neff(c, seed, &out)?,
        Command::Covariance(c) => covariance(c, seed, &out)?,
        Command::DimEstimate(c) => dim_estimate(c, seed, &out)?,
        Command::Biasvar(c) => biasvar(c, seed, &out)?,
        Command::Memorize(c) => memorize(c, seed, &out)?,
        Command::Ledkde(c) => ledkde_cmd(c, seed, &out)?,
        Command::SpectralCheck(c) => spectral_check(c, seed, &out)?,
    };
    let summary = json!({
        "command": exp.command.name(),
        "seed": seed,
        "config": &exp.command,
        "results": summary,
    });
    out.json("summary.json", &summary)
}

/// Human-readable execution plan for `--dry-run`.
pub fn plan(exp: &Experiment) -> Result<String> {
    exp.command.validate()?;
    let mut s = String::new();
    let _ = writeln!(s, "command: {}", exp.command.name());
    let _ = writeln!(s, "seed: {}", exp.seed);
    let _ = writeln!(s, "output: {}", exp.out.display());
    let _ = writeln!(s, "threads: {}", exp.threads.map_or("default".into(), |t| t.to_string()));
    let steps = |sde: &SdeSettings| sde.time_grid.nodes(sde.t_cutoff, sde.t_final).map(|v| v.len() - 1).unwrap_or(0);
    let line = match &exp.command {
        Command::GenData(c) => format!("write {} to results.csv", c.data.describe()),
        Command::Sample(c) => format!(
            "data: {}; reverse SDE for {} field(s) x {} samples, {} steps from t = {} to {}",
            c.data.describe(),
            c.fields.len(),
            c.sde.n_samples,
            steps(&c.sde),
            c.sde.t_final,
            c.sde.t_cutoff
        ),
        Command::KlSweep(c) => format!(
            "KL at {} cutoff(s) x {} bandwidth(s) x {} replicate(s), {} flow evaluations each",
            c.t_cutoffs.len(),
            c.h.len(),
            c.replicates,
            c.q
        ),
        Command::Neff(c) => format!("effective size search at N = {} for {} bandwidth(s), t_N = {}", c.n, c.h.len(), c.t_cutoff),
        Command::Covariance(c) => format!("data: {}; local PCA at {} time(s)", c.data.describe(), c.t.len()),
        Command::DimEstimate(c) => format!("data: {}; dimension fit over {} time(s)", c.data.describe(), c.t.len()),
        Command::Biasvar(c) => format!(
            "bias and variance at {} size(s) x {} bandwidth(s), {} replicates",
            c.n.len(),
            c.h.len(),
            c.replicates
        ),
        Command::Memorize(c) => format!(
            "data: {}; {} field(s) x {} samples, {} steps, threshold {}",
            c.data.describe(),
            c.fields.len(),
            c.sde.n_samples,
            steps(&c.sde),
            c.threshold
        ),
        Command::Ledkde(c) => format!("data: {}; KDE and LED-KDE on {:?} cells", c.data.describe(), c.grid.cells),
        Command::SpectralCheck(c) => format!("data: {}; spectral score at t = {}, h = {}, {} points", c.data.describe(), c.t, c.h, c.points),
    };
    let _ = writeln!(s, "plan: {line}");
    let cfg = serde_json::to_string_pretty(&exp.command).unwrap_or_default();
    let _ = writeln!(s, "config: {cfg}");
    Ok(s)
}

fn load_data(src: &DataSource, seed: u64) -> Result<Dataset> {
    let ds = match src {
        DataSource::Synthetic { target, n } => target.sample(*n, derive_seed(seed, "dataset", &[]))?,
        DataSource::Csv { path } => load_dataset(path)?,
        DataSource::Idx { images, labels, filter_label, limit, normalize } => {
            load_idx(images, labels.as_deref(), *filter_label, *limit, *normalize)?
        }
    };
    log::info!("loaded {} points in dimension {}", ds.len(), ds.dim());
    Ok(ds)
}

fn pairs(points: &[f64], d: usize) -> Vec<(f64, f64)> {
    points.chunks(d).map(|p| (p[0], if d > 1 { p[1] } else { 0.0 })).collect()
}

fn scatter_overlay(title: &str, train: &Dataset, samples: Option<&[f64]>) -> Plot {
    let d = train.dim();
    let mut p = Plot::new(title, "x0", if d > 1 { "x1" } else { "" }).equal_aspect();
    if let Some(s) = samples {
        p.scatter(pairs(s, d), PALETTE[0], 1.2, Some("samples"));
    }
    p.scatter(pairs(train.points(), d), PALETTE[1], 2.5, Some("training"));
    p
}

fn gen_data(c: &GenData, seed: u64, out: &Out) -> Result<Value> {
    let ds = load_data(&c.data, seed)?;
    save_dataset(&ds, &out.path("results.csv"))?;
    if ds.dim() <= 3 {
        out.svg("data.svg", &scatter_overlay(&ds.name, &ds, None))?;
    }
    Ok(json!({ "n": ds.len(), "d": ds.dim(), "name": ds.name, "intrinsic_dim": ds.intrinsic_dim }))
}

fn build_field<'a>(
    spec: &FieldSpec,
    ds: &'a Dataset,
    data: &DataSource,
    seed: u64,
    index: usize,
) -> Result<Box<dyn ScoreField + 'a>> {
    Ok(match spec {
        FieldSpec::Empirical => Box::new(EmpiricalField::new(ds)),
        FieldSpec::Analytic => {
            let target = data.target().ok_or_else(|| CliError::Config("analytic field needs a synthetic target".into()))?;
            Box::new(AnalyticField::new(target.clone())?)
        }
        FieldSpec::Mollified { frozen, .. } => {
            let ms = spec.mollify_spec()?.expect("mollified field has a spec");
            if *frozen {
                Box::new(MollifiedField::frozen(ds, &ms, derive_seed(seed, "field", &[index as u64]))?)
            } else {
                Box::new(MollifiedField::fresh(ds, &ms)?)
            }
        }
    })
}

/// Runs the reverse SDE for every field; all fields share the Brownian
/// increments.
fn generate(ds: &Dataset, data: &DataSource, fields: &[FieldSpec], sde: &SdeSettings, seed: u64) -> Result<Vec<SampleBatch>> {
    let cfg = SdeConfig {
        t_final: sde.t_final,
        t_cutoff: sde.t_cutoff,
        time_grid: sde.time_grid,
        n_samples: sde.n_samples,
        seed: derive_seed(seed, "sde", &[]),
    };
    fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let field = build_field(f, ds, data, seed, i)?;
            log::info!("sampling with {}", field.label());
            let batch = sampler::reverse_sde(field.as_ref(), &cfg)?;
            if batch.rejected > 0 {
                log::warn!("{}: {} trajectories rejected", batch.score_label, batch.rejected);
            }
            Ok(batch)
        })
        .collect()
}

fn samples_table(batches: &[SampleBatch], d: usize) -> Table {
    let mut h = header(&["field", "label"]);
    h.extend(coord_header("x", d));
    let mut t = Table::new(&h);
    for (i, b) in batches.iter().enumerate() {
        for p in b.rows() {
            let mut row = vec![i.to_string(), b.score_label.clone()];
            row.extend(p.iter().map(|v| format!("{v:.16e}")));
            t.row(&row);
        }
    }
    t
}

fn sample(c: &Sample, seed: u64, out: &Out) -> Result<Value> {
    let ds = load_data(&c.data, seed)?;
    let batches = generate(&ds, &c.data, &c.fields, &c.sde, seed)?;
    out.text("results.csv", &samples_table(&batches, ds.dim()).text)?;
    let mut rows = Vec::new();
    for (i, b) in batches.iter().enumerate() {
        let memorized = analysis::memorization_ratio(b, &ds, analysis::MEMORIZATION_THRESHOLD)?;
        rows.push(json!({ "field": i, "batch": b, "memorized_fraction": memorized }));
        if ds.dim() <= 3 {
            out.svg(&format!("samples_{i}.svg"), &scatter_overlay(&b.score_label, &ds, Some(&b.points)))?;
        }
    }
    Ok(json!({ "training_points": ds.len(), "batches": rows }))
}

fn kl_sweep(c: &KlSweep, seed: u64, out: &Out) -> Result<Value> {
    let flow = c.flow.clone().unwrap_or_else(default_flow);
    let eval_seed = derive_seed(seed, "kl_eval", &[]);
    let datasets = (0..c.replicates)
        .map(|r| c.target.sample(c.n, derive_seed(seed, "kl_dataset", &[r as u64])))
        .collect::<mollescore::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &t in &c.t_cutoffs {
        for &h in &c.h {
            let mut reports = Vec::new();
            for (r, ds) in datasets.iter().enumerate() {
                let field: Box<dyn ScoreField> = if h == 0.0 {
                    Box::new(EmpiricalField::new(ds))
                } else {
                    let spec = MollifySpec::fixed(h).with_samples(c.mc_samples);
                    Box::new(MollifiedField::frozen(ds, &spec, derive_seed(seed, "kl_mollify", &[r as u64]))?)
                };
                reports.push(analysis::kl_estimate(&c.target, field.as_ref(), &flow.at(t), c.q, eval_seed)?);
            }
            let (kl, stderr) = analysis::replicate_mean(&reports);
            let label = reports[0].score_label.clone();
            log::info!("t_N = {t}, {label}: KL {kl:.4} ± {stderr:.4}");
            rows.push(SweepRow { t_cutoff: t, h, kl, stderr, label });
        }
    }
    analysis::write_sweep_csv(&out.path("results.csv"), &rows)?;

    let mut best = Vec::new();
    let mut plot = Plot::new("KL against bandwidth", "h", "KL");
    for (i, &t) in c.t_cutoffs.iter().enumerate() {
        let group: Vec<&SweepRow> = rows.iter().filter(|r| r.t_cutoff == t).collect();
        let arg = group.iter().fold(group[0], |a, r| if r.kl < a.kl { r } else { a });
        best.push(json!({ "t_N": t, "h": arg.h, "kl": arg.kl, "stderr": arg.stderr }));
        plot.line(group.iter().map(|r| (r.h, r.kl)).collect(), PALETTE[i % PALETTE.len()], Some(&format!("t_N = {t}")));
    }
    out.svg("kl_sweep.svg", &plot)?;
    Ok(json!({ "rows": rows, "best_h": best }))
}

fn neff(c: &Neff, seed: u64, out: &Out) -> Result<Value> {
    let flow = c.flow.clone().unwrap_or_else(default_flow);
    let mut table = Table::new(&header(&["h", "n", "n_eff", "ratio", "kl_mollified", "kl_mollified_stderr", "at_bracket_edge"]));
    let mut evals = Table::new(&header(&["h", "n", "kl", "stderr"]));
    let mut plot = Plot::new("empirical-score KL against dataset size", "N", "KL").log_x();
    let mut reports = Vec::new();
    for (i, &h) in c.h.iter().enumerate() {
        let mut cfg = NeffConfig {
            n: c.n,
            h,
            mc_samples: c.mc_samples,
            flow: flow.at(c.t_cutoff),
            q: c.q,
            replicates: c.replicates,
            seed: derive_seed(seed, "neff", &[]),
            bracket: 256.0,
        };
        if let Some(b) = c.bracket {
            cfg.bracket = b;
        }
        let rep = analysis::n_eff(&c.target, &cfg)?;
        log::info!("h = {h}: N_eff = {} (ratio {:.2})", rep.n_eff, rep.ratio);
        table.row(&[
            num(h),
            rep.n.to_string(),
            rep.n_eff.to_string(),
            num(rep.ratio),
            num(rep.kl_mollified),
            num(rep.kl_mollified_std_error),
            rep.at_bracket_edge.to_string(),
        ]);
        let mut pts: Vec<(f64, f64)> = rep.evaluations.iter().map(|e| (e.n as f64, e.kl)).collect();
        for e in &rep.evaluations {
            evals.row(&[num(h), e.n.to_string(), num(e.kl), num(e.std_error)]);
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = PALETTE[i % PALETTE.len()];
        let (lo, hi) = (pts.first().map_or(1.0, |p| p.0), pts.last().map_or(1.0, |p| p.0));
        plot.line(pts, color, Some(&format!("empirical, h = {h}")));
        plot.segments(vec![((lo, rep.kl_mollified), (hi, rep.kl_mollified))], color);
        reports.push(rep);
    }
    out.text("results.csv", &table.text)?;
    out.text("evaluations.csv", &evals.text)?;
    out.svg("neff.svg", &plot)?;
    Ok(json!({ "reports": reports }))
}

fn query_point(q: &Query, ds: &Dataset) -> Result<Vec<f64>> {
    match q {
        Query::Point { x } if x.len() == ds.dim() => Ok(x.clone()),
        Query::Point { x } => Err(CliError::Config(format!("query has {} coordinates, data has {}", x.len(), ds.dim()))),
        Query::DataPoint { index } if *index < ds.len() => Ok(ds.point(*index).to_vec()),
        Query::DataPoint { index } => Err(CliError::Config(format!("query index {index} exceeds {} points", ds.len()))),
    }
}

/// Eigenvector as an image; `values[col * rows + r]` with the top image row
/// drawn at the top.
fn image_heatmap(title: &str, v: &[f64], shape: [usize; 2]) -> Plot {
    let [rows, cols] = shape;
    let mut vals = vec![0.0; rows * cols];
    for r in 0..rows {
        for col in 0..cols {
            vals[col * rows + (rows - 1 - r)] = v[r * cols + col];
        }
    }
    let mut p = Plot::new(title, "", "").equal_aspect();
    p.heatmap((0.0, cols as f64), (0.0, rows as f64), cols, rows, vals);
    p
}

fn covariance(c: &Covariance, seed: u64, out: &Out) -> Result<Value> {
    let ds = load_data(&c.data, seed)?;
    let x = query_point(&c.query, &ds)?;
    if let Some([r, col]) = c.image_shape {
        if r * col != ds.dim() {
            return Err(CliError::Config(format!("image shape {r}x{col} does not match dimension {}", ds.dim())));
        }
    }
    let mut table = Table::new(&header(&["t", "rank", "eigenvalue"]));
    let mut plot = Plot::new("local covariance spectrum", "rank", "eigenvalue").log_y();
    let mut per_t = Vec::new();
    for (ti, &t) in c.t.iter().enumerate() {
        let rep = analysis::local_pca(&ds, t, &x)?;
        for (k, &l) in rep.eigenvalues.iter().enumerate() {
            table.row(&[num(t), k.to_string(), num(l)]);
        }
        plot.line(
            rep.eigenvalues.iter().enumerate().map(|(k, &l)| (k as f64, l)).collect(),
            PALETTE[ti % PALETTE.len()],
            Some(&format!("t = {t}")),
        );
        if let Some(shape) = c.image_shape {
            let d = ds.dim();
            let k = c.eigenvectors.min(d);
            for j in 0..k {
                out.svg(&format!("eigvec_t{ti}_top{j}.svg"), &image_heatmap(&format!("t = {t}, rank {j}"), &rep.eigenvectors.col(j), shape))?;
                let b = d - 1 - j;
                out.svg(&format!("eigvec_t{ti}_bottom{j}.svg"), &image_heatmap(&format!("t = {t}, rank {b}"), &rep.eigenvectors.col(b), shape))?;
            }
        }
        per_t.push(json!({
            "t": t,
            "effective_samples": rep.effective_samples,
            "low_effective_samples": rep.low_effective_samples,
            "leading_eigenvalues": &rep.eigenvalues[..rep.eigenvalues.len().min(10)],
        }));
    }
    out.text("results.csv", &table.text)?;
    out.svg("spectrum.svg", &plot)?;
    Ok(json!({ "x": x, "times": per_t }))
}

fn dim_estimate(c: &DimEstimate, seed: u64, out: &Out) -> Result<Value> {
    let ds = load_data(&c.data, seed)?;
    let queries: Vec<Vec<f64>> = match &c.queries {
        Queries::DataPoints { count } => {
            let n = (*count).clamp(1, ds.len());
            (0..n).map(|i| ds.point(i * ds.len() / n).to_vec()).collect()
        }
        Queries::Points { x } => {
            if x.iter().any(|p| p.len() != ds.dim()) {
                return Err(CliError::Config(format!("every query needs {} coordinates", ds.dim())));
            }
            x.clone()
        }
        Queries::Curve { count } => {
            let target = c.data.target().expect("validated");
            let n = (*count).max(1);
            (0..n)
                .map(|i| target.curve_point((i as f64 + 0.5) / n as f64))
                .collect::<mollescore::Result<_>>()?
        }
    };
    let fit = analysis::intrinsic_dim_multi(&ds, &queries, &c.t)?;
    let mut table = Table::new(&header(&["t", "log_lambda"]));
    for (t, l) in fit.t_values.iter().zip(&fit.log_lambda) {
        table.row(&[num(*t), num(*l)]);
    }
    out.text("results.csv", &table.text)?;
    let pts: Vec<(f64, f64)> = fit.t_values.iter().map(|t| t.ln()).zip(fit.log_lambda.iter().copied()).collect();
    let (a, b) = (pts[0].0, pts[pts.len() - 1].0);
    let mut plot = Plot::new(&format!("slope {:.3}", fit.slope), "ln t", "ln lambda_1");
    plot.scatter(pts, PALETTE[0], 3.0, Some("mean over queries"));
    plot.segments(vec![((a, fit.intercept + fit.slope * a), (b, fit.intercept + fit.slope * b))], PALETTE[1]);
    out.svg("dimension.svg", &plot)?;
    Ok(json!({ "queries": queries.len(), "fit": fit }))
}

fn biasvar(c: &Biasvar, seed: u64, out: &Out) -> Result<Value> {
    let mut table = Table::new(&header(&["n", "h", "v_hat", "v_std_error", "b_hat", "b_std_error"]));
    let mut vplot = Plot::new("variance of the mollified posterior mean", "h", "variance").log_x().log_y();
    let mut bplot = Plot::new("squared bias of the mollified posterior mean", "h", "bias^2").log_x().log_y();
    let mut reports = Vec::new();
    for (i, &n) in c.n.iter().enumerate() {
        let (mut vs, mut bs) = (Vec::new(), Vec::new());
        for &h in &c.h {
            let cfg = BiasVarianceConfig {
                n,
                t: c.t,
                h,
                x: c.x.clone(),
                replicates: c.replicates,
                mc_samples: c.mc_samples,
                seed: derive_seed(seed, "biasvar", &[]),
            };
            let r = analysis::bias_variance(&c.target, &cfg)?;
            table.row(&[n.to_string(), num(h), num(r.v_hat), num(r.v_std_error), num(r.b_hat), num(r.b_std_error)]);
            vs.push((h, r.v_hat));
            bs.push((h, r.b_hat));
            reports.push(r);
        }
        let color = PALETTE[i % PALETTE.len()];
        vplot.line(vs, color, Some(&format!("N = {n}")));
        bplot.line(bs, color, Some(&format!("N = {n}")));
    }
    out.text("results.csv", &table.text)?;
    out.svg("variance.svg", &vplot)?;
    out.svg("bias.svg", &bplot)?;
    Ok(json!({ "reports": reports }))
}

fn memorize(c: &Memorize, seed: u64, out: &Out) -> Result<Value> {
    let ds = load_data(&c.data, seed)?;
    let d = ds.dim();
    let mut batches = generate(&ds, &c.data, &c.fields, &c.sde, seed)?;
    if let Some(floor) = c.clamp_below {
        for b in &mut batches {
            b.points.iter_mut().filter(|v| **v < floor).for_each(|v| *v = 0.0);
        }
    }
    out.text("samples.csv", &samples_table(&batches, d).text)?;
    let mut table = Table::new(&header(&[
        "field",
        "label",
        "memorized_fraction",
        "proximity_fraction",
        "mean_support_distance",
        "samples",
        "rejected",
    ]));
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for (i, b) in batches.iter().enumerate() {
        let mem = analysis::memorized_fraction(&b.points, d, &ds, c.threshold)?;
        let prox = c.proximity_radius.map(|r| analysis::proximity_fraction(&b.points, d, &ds, r)).transpose()?;
        let support = match c.data.target() {
            Some(t) => match analysis::mean_support_distance(&b.points, d, t) {
                Ok(v) => Some(v),
                Err(Error::Capability(_)) => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        log::info!("{}: memorized {mem:.3}", b.score_label);
        table.row(&[
            i.to_string(),
            b.score_label.clone(),
            num(mem),
            opt(prox),
            opt(support),
            b.len().to_string(),
            b.rejected.to_string(),
        ]);
        rows.push(json!({
            "field": i,
            "label": b.score_label,
            "memorized_fraction": mem,
            "proximity_fraction": prox,
            "mean_support_distance": support,
            "samples": b.len(),
            "rejected": b.rejected,
        }));
        ratios.push((i as f64, mem));
        if d <= 3 {
            out.svg(&format!("samples_{i}.svg"), &scatter_overlay(&b.score_label, &ds, Some(&b.points)))?;
        }
    }
    out.text("results.csv", &table.text)?;
    let mut plot = Plot::new("memorized fraction per field", "field", "fraction");
    plot.line(ratios, PALETTE[0], None);
    out.svg("memorization.svg", &plot)?;
    Ok(json!({ "threshold": c.threshold, "clamp_below": c.clamp_below, "fields": rows }))
}

fn density_plot(title: &str, f: &ledkde::DensityField, ds: &Dataset) -> Plot {
    let g = &f.grid;
    let mut p = Plot::new(title, "x0", "x1").equal_aspect();
    p.heatmap((g.lo[0], g.hi[0]), (g.lo[1], g.hi[1]), g.cells[0], g.cells[1], f.values.clone());
    p.scatter(pairs(ds.points(), 2), PALETTE[1], 1.5, Some("data"));
    p
}

fn ledkde_cmd(c: &Ledkde, seed: u64, out: &Out) -> Result<Value> {
    let ds = load_data(&c.data, seed)?;
    let grid = Grid::new(c.grid.lo.clone(), c.grid.hi.clone(), c.grid.cells.clone())?;
    let eps = c.eps.unwrap_or(ledkde::DEFAULT_EPS);
    let mut plain = ledkde::kde(&ds, &c.kde_kernel, &grid)?;
    plain.normalize()?;
    let led = ledkde::ledkde(&ds, &c.smoothing_kernel, &c.kde_kernel, &grid, eps)?;
    let reference = match c.reference_t {
        Some(t) => {
            let target = c.data.target().expect("validated");
            let vals = (0..grid.len())
                .map(|k| target.smoothed_log_density(t, &grid.center(k)).map(f64::exp))
                .collect::<mollescore::Result<Vec<_>>>()?;
            let mut f = ledkde::DensityField::new(grid.clone(), vals)?;
            f.normalize()?;
            Some(f)
        }
        None => None,
    };

    let mut h = coord_header("x", grid.dims());
    h.extend(header(&["kde", "ledkde"]));
    if reference.is_some() {
        h.push("reference".into());
    }
    let mut table = Table::new(&h);
    for k in 0..grid.len() {
        let mut row: Vec<String> = grid.center(k).into_iter().map(num).collect();
        row.push(num(plain.values[k]));
        row.push(num(led.values[k]));
        if let Some(r) = &reference {
            row.push(num(r.values[k]));
        }
        table.row(&row);
    }
    out.text("results.csv", &table.text)?;

    let floor = 1e-6 * led.values.iter().copied().fold(0.0, f64::max);
    let mut summary = json!({
        "cells": grid.len(),
        "kde_local_maxima": plain.local_maxima(1e-6 * plain.values.iter().copied().fold(0.0, f64::max)),
        "ledkde_local_maxima": led.local_maxima(floor),
        "l2_kde_ledkde": plain.l2_distance(&led)?,
        "ledkde_normalizer": led.normalizer,
    });
    if let Some(r) = &reference {
        summary["l2_kde_reference"] = json!(plain.l2_distance(r)?);
        summary["l2_ledkde_reference"] = json!(led.l2_distance(r)?);
    }

    if grid.dims() == 2 {
        out.svg("kde.svg", &density_plot("KDE", &plain, &ds))?;
        out.svg("ledkde.svg", &density_plot("LED-KDE", &led, &ds))?;
        if let Some(r) = &reference {
            out.svg("reference.svg", &density_plot("reference", r, &ds))?;
        }
    } else {
        let xs = grid.axis_centers(0);
        let mut p = Plot::new("density", "x0", "density");
        p.line(xs.iter().copied().zip(plain.values.iter().copied()).collect(), PALETTE[0], Some("KDE"));
        p.line(xs.iter().copied().zip(led.values.iter().copied()).collect(), PALETTE[1], Some("LED-KDE"));
        if let Some(r) = &reference {
            p.line(xs.iter().copied().zip(r.values.iter().copied()).collect(), PALETTE[2], Some("reference"));
        }
        out.svg("density.svg", &p)?;
    }
    Ok(summary)
}

fn spectral_check(c: &SpectralCheck, seed: u64, out: &Out) -> Result<Value> {
    let raw = load_data(&c.data, seed)?;
    let (ds, transform) = spectral::rescale(&raw, c.half_width)?;
    let d = ds.dim();
    let kmax = c.kmax.unwrap_or_else(|| spectral::default_kmax(c.t));
    let coeffs = spectral::fit_coeffs(&ds, kmax)?;
    coeffs.write_csv(&out.path("coefficients.csv"))?;
    let moll = if c.h > 0.0 {
        let spec = MollifySpec::fixed(c.h).with_samples(c.reference_mc_samples);
        Some(Mollifier::new(&ds, &spec, derive_seed(seed, "spectral_reference", &[]))?)
    } else {
        None
    };

    let mut h = vec!["u".to_string()];
    h.extend(coord_header("spectral_", d));
    h.extend(coord_header("reference_", d));
    let mut table = Table::new(&h);
    let (mut num2, mut den2) = (0.0, 0.0);
    let (mut sp, mut rf) = (Vec::new(), Vec::new());
    for i in 0..c.points {
        let u = -c.half_width + 2.0 * c.half_width * i as f64 / (c.points - 1) as f64;
        let mut x = vec![0.0; d];
        x[0] = u;
        let a = spectral::spectral_score(&coeffs, c.t, &x, c.h)?;
        let b = match &moll {
            Some(m) => m.score(c.t, &x)?,
            None => score::score_emp(&ds, c.t, &x)?,
        };
        num2 += a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        den2 += b.iter().map(|q| q * q).sum::<f64>();
        let mut row = vec![num(u)];
        row.extend(a.iter().copied().map(num));
        row.extend(b.iter().copied().map(num));
        table.row(&row);
        sp.push((u, a[0]));
        rf.push((u, b[0]));
    }
    out.text("results.csv", &table.text)?;
    let rel_l2 = (num2 / den2).sqrt();
    log::info!("relative L2 between spectral and reference scores: {rel_l2:.4}");
    let mut plot = Plot::new(&format!("score at t = {}, h = {}", c.t, c.h), "u", "score_0");
    plot.line(sp, PALETTE[0], Some("spectral"));
    plot.line(rf, PALETTE[1], Some(if c.h > 0.0 { "Monte-Carlo mollified" } else { "empirical" }));
    out.svg("score.svg", &plot)?;
    Ok(json!({
        "kmax": kmax,
        "rel_l2": rel_l2,
        "transform": { "center": transform.center, "scale": transform.scale },
        "reference": if c.h > 0.0 { "monte_carlo_mollified" } else { "empirical" },
    }))
}
