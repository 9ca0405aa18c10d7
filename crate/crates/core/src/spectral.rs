//! Cosine-series heat semigroup on `[-1, 1]^d` (`d ≤ 3`).
//!
//! With `f_k(x) = Π_j cos(π k_j x_j)` and `c_k = ⟨p_0, f_k⟩` the smoothed
//! density is `p_t = Σ_k w_k e^{-π² |k|² t / 2} c_k f_k`, `w_k = Π_j (1/2 if
//! k_j = 0 else 1)`. Mollifying the score with `G_h` is approximated by
//! attenuating every frequency by a further `e^{-π² |k|² h / 2}`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::sampler::{ScoreField, Workspace};

pub const MAX_DIM: usize = 3;
pub const MAX_KMAX: usize = 256;
pub const DENSITY_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffSource {
    Empirical { n: usize },
    Analytic { nodes_per_axis: usize },
}

/// Dense tensor of cosine coefficients, index `k_0` slowest.
#[derive(Clone, Debug)]
pub struct SpectralCoeffs {
    pub d: usize,
    pub kmax: usize,
    pub coeffs: Vec<f64>,
    pub source: CoeffSource,
}

/// Per-axis frequency cap `ceil(4 / sqrt(t))`, at most [`MAX_KMAX`].
pub fn default_kmax(t: f64) -> usize {
    ((4.0 / t.sqrt()).ceil() as usize).clamp(1, MAX_KMAX)
}

/// `y = (x - center) * scale`, mapping data into a sub-cube of `[-1, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeTransform {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl CubeTransform {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(v, c)| (v - c) * self.scale).collect()
    }
}

/// Affinely maps `ds` into `[-half_width, half_width]^d` with one isotropic
/// scale, centering the bounding box.
pub fn rescale(ds: &Dataset, half_width: f64) -> Result<(Dataset, CubeTransform)> {
    if !(half_width > 0.0 && half_width <= 1.0) {
        return Err(Error::Config(format!("half width must be in (0, 1], got {half_width}")));
    }
    let d = ds.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in ds.rows() {
        for j in 0..d {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let span = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).fold(0.0, f64::max);
    let scale = if span > 0.0 { half_width / span } else { 1.0 };
    let tf = CubeTransform { center, scale };
    let out = ds.map_points(|a, b| b.copy_from_slice(&tf.apply(a)))?;
    Ok((out, tf))
}

fn check_dim(d: usize, kmax: usize) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::Config(format!("spectral basis supports 1 to {MAX_DIM} dimensions, got {d}")));
    }
    if kmax == 0 || kmax > MAX_KMAX {
        return Err(Error::Config(format!("kmax must be in 1..={MAX_KMAX}, got {kmax}")));
    }
    Ok(())
}

/// `cos(π k x)` for `k = 0..=kmax` by the Chebyshev recurrence.
fn cos_table(x: f64, kmax: usize, out: &mut [f64]) {
    let c = (PI * x).cos();
    out[0] = 1.0;
    if kmax >= 1 {
        out[1] = c;
    }
    for k in 2..=kmax {
        out[k] = 2.0 * c * out[k - 1] - out[k - 2];
    }
}

/// `d/dx cos(π k x) = -π k sin(π k x)` for `k = 0..=kmax`.
fn dcos_table(x: f64, kmax: usize, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate().take(kmax + 1) {
        *o = -PI * k as f64 * (PI * k as f64 * x).sin();
    }
}

/// `d²/dx² cos(π k x) = -(π k)² cos(π k x)`.
fn d2cos_table(cos: &[f64], out: &mut [f64]) {
    for (k, (o, c)) in out.iter_mut().zip(cos).enumerate() {
        *o = -(PI * k as f64).powi(2) * c;
    }
}

fn for_each_index(d: usize, kmax: usize, mut f: impl FnMut(usize, &[usize])) {
    let m = kmax + 1;
    let total = m.pow(d as u32);
    let mut k = vec![0usize; d];
    for flat in 0..total {
        let mut rem = flat;
        for j in (0..d).rev() {
            k[j] = rem % m;
            rem /= m;
        }
        f(flat, &k);
    }
}

/// Empirical coefficients `(1/N) Σ_i f_k(x_i)`.
pub fn fit_coeffs(ds: &Dataset, kmax: usize) -> Result<SpectralCoeffs> {
    let d = ds.dim();
    check_dim(d, kmax)?;
    if let Some(i) = ds.rows().position(|p| p.iter().any(|v| v.abs() > 1.0)) {
        return Err(Error::Domain(format!("point {i} lies outside [-1, 1]^{d}; rescale first")));
    }
    let m = kmax + 1;
    let mut coeffs = vec![0.0; m.pow(d as u32)];
    let mut tab = vec![0.0; d * m];
    let n = ds.len() as f64;
    for p in ds.rows() {
        for j in 0..d {
            cos_table(p[j], kmax, &mut tab[j * m..(j + 1) * m]);
        }
        accumulate(&mut coeffs, &tab, d, m, 1.0 / n);
    }
    Ok(SpectralCoeffs { d, kmax, coeffs, source: CoeffSource::Empirical { n: ds.len() } })
}

/// `coeffs[k] += w Π_j tab[j][k_j]`, unrolled by dimension.
fn accumulate(coeffs: &mut [f64], tab: &[f64], d: usize, m: usize, w: f64) {
    match d {
        1 => coeffs.iter_mut().zip(tab).for_each(|(c, a)| *c += w * a),
        2 => {
            for a in 0..m {
                let wa = w * tab[a];
                let row = &mut coeffs[a * m..(a + 1) * m];
                row.iter_mut().zip(&tab[m..2 * m]).for_each(|(c, b)| *c += wa * b);
            }
        }
        _ => {
            for a in 0..m {
                for b in 0..m {
                    let wab = w * tab[a] * tab[m + b];
                    let row = &mut coeffs[(a * m + b) * m..(a * m + b + 1) * m];
                    row.iter_mut().zip(&tab[2 * m..3 * m]).for_each(|(c, e)| *c += wab * e);
                }
            }
        }
    }
}

/// Coefficients of a density on the cube by the tensor midpoint rule.
pub fn fit_coeffs_density(d: usize, kmax: usize, nodes_per_axis: usize, density: impl Fn(&[f64]) -> f64) -> Result<SpectralCoeffs> {
    check_dim(d, kmax)?;
    if nodes_per_axis < 2 * kmax + 2 {
        return Err(Error::Config(format!("{nodes_per_axis} nodes per axis cannot resolve frequency {kmax}")));
    }
    let m = kmax + 1;
    let h = 2.0 / nodes_per_axis as f64;
    let nodes: Vec<f64> = (0..nodes_per_axis).map(|i| -1.0 + (i as f64 + 0.5) * h).collect();
    let tables: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&x| {
            let mut t = vec![0.0; m];
            cos_table(x, kmax, &mut t);
            t
        })
        .collect();
    let mut coeffs = vec![0.0; m.pow(d as u32)];
    let mut tab = vec![0.0; d * m];
    let mut x = vec![0.0; d];
    let cell = h.powi(d as i32);
    for_each_index(d, nodes_per_axis - 1, |_, idx| {
        for j in 0..d {
            x[j] = nodes[idx[j]];
            tab[j * m..(j + 1) * m].copy_from_slice(&tables[idx[j]]);
        }
        let w = density(&x) * cell;
        if w != 0.0 {
            accumulate(&mut coeffs, &tab, d, m, w);
        }
    });
    Ok(SpectralCoeffs { d, kmax, coeffs, source: CoeffSource::Analytic { nodes_per_axis } })
}

/// Per-axis multiplier `w_k e^{-π² k² s / 2}` of a one-dimensional factor.
fn axis_weights(kmax: usize, s: f64) -> Vec<f64> {
    (0..=kmax)
        .map(|k| {
            let w = if k == 0 { 0.5 } else { 1.0 };
            w * (-0.5 * PI * PI * (k * k) as f64 * s).exp()
        })
        .collect()
}

/// Value, gradient and Hessian diagonal of one series at a point.
struct SeriesEval {
    value: f64,
    grad: [f64; MAX_DIM],
    lap_diag: [f64; MAX_DIM],
}

impl SpectralCoeffs {
    pub fn get(&self, k: &[usize]) -> f64 {
        let m = self.kmax + 1;
        self.coeffs[k.iter().fold(0, |acc, &kj| acc * m + kj)]
    }

    /// Coefficients multiplied by `e^{-π² |k|² h / 2}`.
    pub fn attenuated(&self, h: f64) -> SpectralCoeffs {
        let aw: Vec<f64> = (0..=self.kmax).map(|k| (-0.5 * PI * PI * (k * k) as f64 * h).exp()).collect();
        let mut out = self.clone();
        for_each_index(self.d, self.kmax, |flat, k| {
            out.coeffs[flat] *= k.iter().map(|&kj| aw[kj]).product::<f64>();
        });
        out
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Config(format!("point has dimension {}, basis has {}", x.len(), self.d)));
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() >= 1.0) {
            return Err(Error::Domain(format!("{x:?} is outside the open cube")));
        }
        Ok(())
    }

    /// Sums the series at smoothing time `s`; `derivs` adds the gradient and
    /// the Hessian diagonal.
    fn eval(&self, s: f64, x: &[f64], derivs: bool) -> SeriesEval {
        let d = self.d;
        let m = self.kmax + 1;
        let w = axis_weights(self.kmax, s);
        // per axis: weighted cos, d/dx and d²/dx² tables
        let mut f = vec![0.0; d * m];
        let mut g = vec![0.0; d * m];
        let mut q = vec![0.0; d * m];
        for j in 0..d {
            let axis = j * m..(j + 1) * m;
            cos_table(x[j], self.kmax, &mut f[axis.clone()]);
            if derivs {
                dcos_table(x[j], self.kmax, &mut g[axis.clone()]);
                d2cos_table(&f[axis.clone()], &mut q[axis.clone()]);
            }
            for k in 0..m {
                f[j * m + k] *= w[k];
                g[j * m + k] *= w[k];
                q[j * m + k] *= w[k];
            }
        }
        let mut out = SeriesEval { value: 0.0, grad: [0.0; MAX_DIM], lap_diag: [0.0; MAX_DIM] };
        for_each_index(d, self.kmax, |flat, k| {
            let c = self.coeffs[flat];
            if c == 0.0 {
                return;
            }
            let mut prod = c;
            for j in 0..d {
                prod *= f[j * m + k[j]];
            }
            out.value += prod;
            if derivs {
                for a in 0..d {
                    let mut gp = c;
                    let mut qp = c;
                    for j in 0..d {
                        let i = j * m + k[j];
                        if j == a {
                            gp *= g[i];
                            qp *= q[i];
                        } else {
                            gp *= f[i];
                            qp *= f[i];
                        }
                    }
                    out.grad[a] += gp;
                    out.lap_diag[a] += qp;
                }
            }
        });
        out
    }

    /// Reconstructed smoothed density `p_t(x)`.
    pub fn density(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.eval(t, x, false).value)
    }

    /// `∇p_t(x)`.
    pub fn density_gradient(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.eval(t, x, true).grad[..self.d].to_vec())
    }

    fn denominator(&self, t: f64, x: &[f64]) -> Result<SeriesEval> {
        let base = self.eval(t, x, true);
        if !(base.value > DENSITY_FLOOR) {
            return Err(Error::Numerical(format!(
                "reconstructed density {} at {x:?} is below the floor {DENSITY_FLOOR}",
                base.value
            )));
        }
        Ok(base)
    }

    /// `∇p_{t+h}(x) / p_t(x)`, the frequency-cutoff form of the mollified
    /// score; `h = 0` gives the score of the reconstruction.
    pub fn score(&self, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
        self.score_div(t, x, h).map(|(s, _)| s)
    }

    /// Score and its divergence `Σ_a [∂²_a p_{t+h} / p_t - ∂_a p_{t+h} ∂_a p_t / p_t²]`.
    pub fn score_div(&self, t: f64, x: &[f64], h: f64) -> Result<(Vec<f64>, f64)> {
        self.check_point(x)?;
        if !(h >= 0.0 && h.is_finite()) || !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("need t > 0 and h ≥ 0, got t = {t}, h = {h}")));
        }
        let base = self.denominator(t, x)?;
        let top = if h == 0.0 { self.eval(t, x, true) } else { self.eval(t + h, x, true) };
        let p = base.value;
        let mut s = vec![0.0; self.d];
        let mut div = 0.0;
        for a in 0..self.d {
            s[a] = top.grad[a] / p;
            div += top.lap_diag[a] / p - top.grad[a] * base.grad[a] / (p * p);
        }
        Ok((s, div))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        let header: Vec<String> = (0..self.d).map(|j| format!("k{j}")).collect();
        writeln!(w, "{},coeff", header.join(",")).map_err(io)?;
        let mut res = Ok(());
        for_each_index(self.d, self.kmax, |flat, k| {
            if res.is_ok() {
                let idx: Vec<String> = k.iter().map(|v| v.to_string()).collect();
                res = writeln!(w, "{},{:.16e}", idx.join(","), self.coeffs[flat]);
            }
        });
        res.map_err(io)?;
        w.flush().map_err(io)
    }
}

/// Free function form of [`SpectralCoeffs::score`].
pub fn spectral_score(coeffs: &SpectralCoeffs, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    coeffs.score(t, x, h)
}

/// Spectral score with a fixed extra smoothing `h` as a sampler backend.
pub struct SpectralField {
    pub coeffs: SpectralCoeffs,
    pub h: f64,
}

impl ScoreField for SpectralField {
    fn dim(&self) -> usize {
        self.coeffs.d
    }
    fn label(&self) -> String {
        format!("spectral(kmax={},h={})", self.coeffs.kmax, self.h)
    }
    fn score(&self, t: f64, x: &[f64], _key: u64, _ws: &mut Workspace, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.coeffs.score(t, x, self.h)?);
        Ok(())
    }
    fn score_div(&self, t: f64, x: &[f64], _key: u64, _ws: &mut Workspace, out: &mut [f64]) -> Result<f64> {
        let (s, div) = self.coeffs.score_div(t, x, self.h)?;
        out.copy_from_slice(&s);
        Ok(div)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SubspaceProfile, TargetSpec};
    use crate::score::score_emp;

    fn uniform_analytic(d: usize, kmax: usize) -> SpectralCoeffs {
        fit_coeffs_density(d, kmax, 4 * kmax + 4, |_| 0.5f64.powi(d as i32)).unwrap()
    }

    #[test]
    fn uniform_density_coefficients() {
        for d in 1..=2 {
            let c = uniform_analytic(d, 6);
            assert!((c.coeffs[0] - 1.0).abs() < 1e-12);
            assert!(c.coeffs[1..].iter().all(|v| v.abs() < 1e-12), "{:?}", c.coeffs);
            let x = vec![0.3; d];
            assert!((c.density(0.05, &x).unwrap() - 0.5f64.powi(d as i32)).abs() < 1e-12);
            assert!(c.score(0.05, &x, 0.2).unwrap().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn single_point_coefficients_are_one() {
        let ds = Dataset::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let c = fit_coeffs(&ds, 5).unwrap();
        assert!(c.coeffs.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert_eq!(c.get(&[2, 3]), 1.0);
    }

    #[test]
    fn empirical_uniform_reconstruction() {
        let ds = TargetSpec::LinearSubspace { k: 1, d: 1, profile: SubspaceProfile::Uniform { half_width: 1.0 } }
            .sample(100_000, 12)
            .unwrap();
        let c = fit_coeffs(&ds, 40).unwrap();
        let worst = (0..=180)
            .map(|i| -0.9 + 0.01 * i as f64)
            .map(|x| (c.density(0.05, &[x]).unwrap() - 0.5).abs())
            .fold(0.0, f64::max);
        assert!(worst < 2e-2, "{worst}");
    }

    #[test]
    fn one_atom_matches_kernel_score() {
        let t = 0.1;
        let ds = Dataset::from_rows(&[vec![0.0]]).unwrap();
        let c = fit_coeffs(&ds, default_kmax(t)).unwrap();
        for i in 0..=20 {
            let x = -0.5 + 0.05 * i as f64;
            let s = c.score(t, &[x], 0.0).unwrap()[0];
            let want = score_emp(&ds, t, &[x]).unwrap()[0];
            assert!((s - want).abs() < 1e-3, "x={x}: {s} vs {want}");
        }
        let ds2 = Dataset::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let c2 = fit_coeffs(&ds2, default_kmax(t)).unwrap();
        let s = c2.score(t, &[0.2, -0.3], 0.0).unwrap();
        let want = score_emp(&ds2, t, &[0.2, -0.3]).unwrap();
        assert!((s[0] - want[0]).abs() < 1e-3 && (s[1] - want[1]).abs() < 1e-3);
    }

    #[test]
    fn mollification_is_attenuation() {
        let ds = TargetSpec::SwissRoll2d.sample(30, 3).unwrap();
        let (ds, _) = rescale(&ds, 0.5).unwrap();
        let c = fit_coeffs(&ds, 30).unwrap();
        let (t, h, x) = (0.02, 0.05, [0.1, -0.2]);
        let s = c.score(t, &x, h).unwrap();
        let g = c.attenuated(h).density_gradient(t, &x).unwrap();
        let p = c.density(t, &x).unwrap();
        for a in 0..2 {
            assert!((s[a] - g[a] / p).abs() <= 1e-12 * s[a].abs().max(1.0));
        }
        let k = [3, 4];
        let want = c.get(&k) * (-0.5 * PI * PI * 25.0 * h).exp();
        assert!((c.attenuated(h).get(&k) - want).abs() < 1e-15);
    }

    #[test]
    fn reflecting_boundary() {
        let ds = Dataset::from_rows(&[vec![0.45], vec![-0.2], vec![0.3]]).unwrap();
        let c = fit_coeffs(&ds, default_kmax(0.01)).unwrap();
        let interior = (0..100)
            .map(|i| c.density_gradient(0.01, &[-0.99 + 0.02 * i as f64]).unwrap()[0].abs())
            .fold(0.0, f64::max);
        for x in [-1.0 + 1e-3, 1.0 - 1e-3] {
            let g = c.density_gradient(0.01, &[x]).unwrap()[0];
            assert!(g.abs() < 1e-2 * interior, "{x}: {g} vs {interior}");
        }
    }

    #[test]
    fn divergence_matches_finite_differences() {
        let ds = TargetSpec::SwissRoll2d.sample(20, 5).unwrap();
        let (ds, _) = rescale(&ds, 0.5).unwrap();
        let c = fit_coeffs(&ds, 40).unwrap();
        let (t, h, x) = (0.03, 0.02, [0.05, 0.1]);
        let (_, div) = c.score_div(t, &x, h).unwrap();
        let e = 1e-5;
        let mut fd = 0.0;
        for a in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[a] += e;
            xm[a] -= e;
            fd += (c.score(t, &xp, h).unwrap()[a] - c.score(t, &xm, h).unwrap()[a]) / (2.0 * e);
        }
        assert!((fd - div).abs() < 1e-5 * div.abs().max(1.0), "{fd} vs {div}");
    }

    #[test]
    fn domain_checks() {
        let ds = Dataset::from_rows(&[vec![1.5]]).unwrap();
        assert!(matches!(fit_coeffs(&ds, 4), Err(Error::Domain(_))));
        let ds = Dataset::from_rows(&[vec![0.0]]).unwrap();
        let c = fit_coeffs(&ds, 64).unwrap();
        assert!(matches!(c.score(1e-3, &[0.9], 0.0), Err(Error::Numerical(_))));
        assert!(matches!(c.score(0.1, &[1.0], 0.0), Err(Error::Domain(_))));
        let d4 = Dataset::new(vec![0.0; 4], 4).unwrap();
        assert!(fit_coeffs(&d4, 4).is_err());
    }

    #[test]
    fn rescale_fits_half_cube() {
        let ds = TargetSpec::SwissRoll2d.sample(200, 1).unwrap();
        let (r, tf) = rescale(&ds, 0.5).unwrap();
        let m = r.points().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((m - 0.5).abs() < 1e-12);
        assert_eq!(tf.apply(ds.point(3)), r.point(3).to_vec());
        assert_eq!(default_kmax(0.05), 18);
        assert_eq!(default_kmax(1e-9), MAX_KMAX);
    }

    #[test]
    fn coefficient_dump() {
        let ds = Dataset::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let c = fit_coeffs(&ds, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        c.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.starts_with("k0,k1,coeff\n0,0,"));
    }
}
