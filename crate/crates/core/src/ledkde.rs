//! Grid density estimators in one and two dimensions: the Gaussian or ball
//! KDE, kernel smoothing in log space, and their composition
//! `exp(K ⋆ log(L ⋆ q)) / Z`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;

/// Floor added before taking logs.
pub const DEFAULT_EPS: f64 = 1e-10;
/// Gaussian stencils are truncated at this many standard deviations.
pub const STENCIL_SIGMAS: f64 = 6.0;
const MIN_CELLS: usize = 8;

/// Axis-aligned uniform grid with cell-centred nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let d = lo.len();
        if !(1..=2).contains(&d) || hi.len() != d || cells.len() != d {
            return Err(Error::Config("grids must be 1D or 2D with matching bounds and cell counts".into()));
        }
        for a in 0..d {
            if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
                return Err(Error::Config(format!("axis {a}: need lo < hi, got [{}, {}]", lo[a], hi[a])));
            }
            if cells[a] < MIN_CELLS {
                return Err(Error::Config(format!("axis {a}: need at least {MIN_CELLS} cells, got {}", cells[a])));
            }
        }
        Ok(Grid { lo, hi, cells })
    }

    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Grid::new(vec![lo, lo], vec![hi, hi], vec![n, n])
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dims()).map(|a| self.width(a)).product()
    }

    pub fn axis_centers(&self, axis: usize) -> Vec<f64> {
        let h = self.width(axis);
        (0..self.cells[axis]).map(|i| self.lo[axis] + (i as f64 + 0.5) * h).collect()
    }

    /// Centre of the cell with flat index `k` (axis 0 is the slow index).
    pub fn center(&self, k: usize) -> Vec<f64> {
        if self.dims() == 1 {
            vec![self.lo[0] + (k as f64 + 0.5) * self.width(0)]
        } else {
            let (i, j) = (k / self.cells[1], k % self.cells[1]);
            vec![self.lo[0] + (i as f64 + 0.5) * self.width(0), self.lo[1] + (j as f64 + 0.5) * self.width(1)]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridKernel {
    Gaussian { var: f64 },
    /// Uniform on the ball of the given radius.
    Ball { radius: f64 },
    /// Identity stencil; as a KDE kernel it gives the histogram.
    Delta,
}

impl GridKernel {
    fn validate(&self, grid: &Grid) -> Result<()> {
        match *self {
            GridKernel::Gaussian { var } if !(var.is_finite() && var > 0.0) => {
                Err(Error::Config(format!("gaussian kernel variance must be positive, got {var}")))
            }
            GridKernel::Ball { radius } => {
                let wmax = (0..grid.dims()).map(|a| grid.width(a)).fold(0.0, f64::max);
                if !(radius.is_finite() && radius >= wmax) {
                    Err(Error::Config(format!("ball radius {radius} is below the cell width {wmax}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Non-negative values on a grid.
#[derive(Clone, Debug, Serialize)]
pub struct DensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub normalized: bool,
    /// Factor the raw values were divided by during normalization.
    pub normalizer: f64,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!("{} values for a grid of {} cells", values.len(), grid.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("density values must be finite and non-negative".into()));
        }
        Ok(DensityField { grid, values, normalized: false, normalizer: 1.0 })
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Divides by the midpoint Riemann sum.
    pub fn normalize(&mut self) -> Result<()> {
        let z = self.mass();
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Numerical(format!("cannot normalize a field of mass {z}")));
        }
        self.values.iter_mut().for_each(|v| *v /= z);
        self.normalizer *= z;
        self.normalized = true;
        Ok(())
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.cells.get(1).copied().unwrap_or(1) + j]
    }

    /// `sqrt(Σ (a - b)^2 · cell volume)`.
    pub fn l2_distance(&self, other: &DensityField) -> Result<f64> {
        self.same_grid(other)?;
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((s * self.grid.cell_volume()).sqrt())
    }

    pub fn sup_distance(&self, other: &DensityField) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    fn same_grid(&self, other: &DensityField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Config("fields live on different grids".into()));
        }
        Ok(())
    }

    /// Number of strict local maxima over the 4- (2D) or 2-neighbourhood (1D),
    /// ignoring cells at the floor value `min_value`.
    pub fn local_maxima(&self, min_value: f64) -> usize {
        let g = &self.grid;
        let n0 = g.cells[0];
        let n1 = g.cells.get(1).copied().unwrap_or(1);
        let mut count = 0;
        for i in 0..n0 {
            for j in 0..n1 {
                let v = self.values[i * n1 + j];
                if v <= min_value {
                    continue;
                }
                let mut nb = Vec::with_capacity(4);
                if i > 0 {
                    nb.push(self.values[(i - 1) * n1 + j]);
                }
                if i + 1 < n0 {
                    nb.push(self.values[(i + 1) * n1 + j]);
                }
                if n1 > 1 {
                    if j > 0 {
                        nb.push(self.values[i * n1 + j - 1]);
                    }
                    if j + 1 < n1 {
                        nb.push(self.values[i * n1 + j + 1]);
                    }
                }
                if nb.iter().all(|&w| v > w) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Central-difference gradient of `log value` at an interior cell.
    pub fn log_gradient(&self, i: usize, j: usize) -> Vec<f64> {
        let g = &self.grid;
        if g.dims() == 1 {
            let h = g.width(0);
            return vec![(self.values[i + 1].ln() - self.values[i - 1].ln()) / (2.0 * h)];
        }
        let (h0, h1) = (g.width(0), g.width(1));
        vec![
            (self.value(i + 1, j).ln() - self.value(i - 1, j).ln()) / (2.0 * h0),
            (self.value(i, j + 1).ln() - self.value(i, j - 1).ln()) / (2.0 * h1),
        ]
    }

    /// CSV of `x0[,x1],value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        let header = if self.grid.dims() == 1 { "x0,value" } else { "x0,x1,value" };
        writeln!(w, "{header}").map_err(io)?;
        for (k, v) in self.values.iter().enumerate() {
            let c = self.grid.center(k);
            let coords: Vec<String> = c.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(w, "{},{v:.16e}", coords.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn check_dims(ds: &Dataset, grid: &Grid) -> Result<()> {
    if ds.dim() != grid.dims() {
        return Err(Error::Config(format!("dataset dimension {} does not match grid dimension {}", ds.dim(), grid.dims())));
    }
    Ok(())
}

/// `(1/N) Σ_i L(c - x_i)` at every cell centre `c`, evaluated exactly.
pub fn kde(ds: &Dataset, kernel: &GridKernel, grid: &Grid) -> Result<DensityField> {
    check_dims(ds, grid)?;
    kernel.validate(grid)?;
    let n = ds.len() as f64;
    let dg = grid.dims();
    let n0 = grid.cells[0];
    let n1 = if dg == 2 { grid.cells[1] } else { 1 };
    let c0 = grid.axis_centers(0);
    let c1 = if dg == 2 { grid.axis_centers(1) } else { vec![0.0] };
    let values = match *kernel {
        GridKernel::Gaussian { var } => {
            // separable: exp(-(a^2 + b^2)/2v) = exp(-a^2/2v) exp(-b^2/2v)
            let norm = (2.0 * std::f64::consts::PI * var).powf(-(dg as f64) / 2.0) / n;
            let fac = |centers: &[f64], coord: f64| -> Vec<f64> {
                centers.iter().map(|c| (-(c - coord).powi(2) / (2.0 * var)).exp()).collect()
            };
            let f0: Vec<Vec<f64>> = ds.rows().map(|p| fac(&c0, p[0])).collect();
            let f1: Vec<Vec<f64>> =
                if dg == 2 { ds.rows().map(|p| fac(&c1, p[1])).collect() } else { vec![vec![1.0]; ds.len()] };
            let rows = par::map_indices(n0, |i| {
                let mut row = vec![0.0; n1];
                for (a, b) in f0.iter().zip(&f1) {
                    let ai = a[i];
                    if ai == 0.0 {
                        continue;
                    }
                    for (r, &bj) in row.iter_mut().zip(b) {
                        *r += ai * bj;
                    }
                }
                row.iter_mut().for_each(|r| *r *= norm);
                row
            });
            rows.concat()
        }
        GridKernel::Ball { radius } => {
            let vol = if dg == 1 { 2.0 * radius } else { std::f64::consts::PI * radius * radius };
            let r2 = radius * radius;
            let rows = par::map_indices(n0, |i| {
                (0..n1)
                    .map(|j| {
                        let inside = ds
                            .rows()
                            .filter(|p| {
                                let mut d2 = (c0[i] - p[0]).powi(2);
                                if dg == 2 {
                                    d2 += (c1[j] - p[1]).powi(2);
                                }
                                d2 <= r2
                            })
                            .count();
                        inside as f64 / (n * vol)
                    })
                    .collect::<Vec<f64>>()
            });
            rows.concat()
        }
        GridKernel::Delta => {
            let mut counts = vec![0.0; grid.len()];
            let per = 1.0 / (n * grid.cell_volume());
            for p in ds.rows() {
                let i = ((p[0] - grid.lo[0]) / grid.width(0)).floor();
                let j = if dg == 2 { ((p[1] - grid.lo[1]) / grid.width(1)).floor() } else { 0.0 };
                if i >= 0.0 && (i as usize) < n0 && j >= 0.0 && (j as usize) < n1 {
                    counts[i as usize * n1 + j as usize] += per;
                }
            }
            counts
        }
    };
    DensityField::new(grid.clone(), values)
}

/// Symmetric 1D stencil of a truncated, renormalized Gaussian.
fn gaussian_stencil(var: f64, h: f64) -> Vec<f64> {
    let half = (STENCIL_SIGMAS * var.sqrt() / h).ceil() as usize;
    let mut w: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let x = (k as f64 - half as f64) * h;
            (-x * x / (2.0 * var)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// 1D convolution of each line of `data` along one axis, reading `pad`
/// outside the grid. `stride`/`len` describe the axis, `lines` enumerates
/// the starting offsets of the lines.
fn convolve_axis(data: &[f64], n0: usize, n1: usize, axis: usize, stencil: &[f64], pad: f64) -> Vec<f64> {
    let half = (stencil.len() / 2) as isize;
    let (len, stride) = if axis == 0 { (n0, n1) } else { (n1, 1) };
    let lines = if axis == 0 { n1 } else { n0 };
    let line_start = |l: usize| if axis == 0 { l } else { l * n1 };
    let out_lines = par::map_indices(lines, |l| {
        let base = line_start(l);
        (0..len)
            .map(|i| {
                let mut acc = 0.0;
                for (k, &w) in stencil.iter().enumerate() {
                    let src = i as isize + k as isize - half;
                    let v = if src < 0 || src >= len as isize { pad } else { data[base + src as usize * stride] };
                    acc += w * v;
                }
                acc
            })
            .collect::<Vec<f64>>()
    });
    let mut out = vec![0.0; data.len()];
    for (l, line) in out_lines.into_iter().enumerate() {
        let base = line_start(l);
        for (i, v) in line.into_iter().enumerate() {
            out[base + i * stride] = v;
        }
    }
    out
}

/// Offsets and weights of the discrete ball stencil.
fn ball_stencil(grid: &Grid, radius: f64) -> Vec<(isize, isize, f64)> {
    let h0 = grid.width(0);
    let r0 = (radius / h0).floor() as isize;
    let mut pts = Vec::new();
    if grid.dims() == 1 {
        for a in -r0..=r0 {
            pts.push((a, 0, 1.0));
        }
    } else {
        let h1 = grid.width(1);
        let r1 = (radius / h1).floor() as isize;
        for a in -r0..=r0 {
            for b in -r1..=r1 {
                let (x, y) = (a as f64 * h0, b as f64 * h1);
                if x * x + y * y <= radius * radius * (1.0 + 1e-12) {
                    pts.push((a, b, 1.0));
                }
            }
        }
    }
    let w = 1.0 / pts.len() as f64;
    pts.iter_mut().for_each(|p| p.2 = w);
    pts
}

/// `exp(K ⋆ log(q + eps))`, renormalized. Cells outside the grid read
/// `log(eps)`.
pub fn leks(field: &DensityField, kernel: &GridKernel, eps: f64) -> Result<DensityField> {
    let grid = &field.grid;
    kernel.validate(grid)?;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("log floor must be positive, got {eps}")));
    }
    let n0 = grid.cells[0];
    let n1 = if grid.dims() == 2 { grid.cells[1] } else { 1 };
    let pad = eps.ln();
    let logs: Vec<f64> = field.values.iter().map(|v| (v + eps).ln()).collect();
    let smoothed = match *kernel {
        GridKernel::Delta => logs,
        GridKernel::Gaussian { var } => {
            let mut cur = logs;
            for axis in 0..grid.dims() {
                let st = gaussian_stencil(var, grid.width(axis));
                if st.len() / 2 >= grid.cells[axis] {
                    return Err(Error::Config(format!(
                        "gaussian stencil half-width {} exceeds the {} cells of axis {axis}",
                        st.len() / 2,
                        grid.cells[axis]
                    )));
                }
                cur = convolve_axis(&cur, n0, n1, axis, &st, pad);
            }
            cur
        }
        GridKernel::Ball { radius } => {
            let st = ball_stencil(grid, radius);
            let reach = st.iter().map(|p| p.0.unsigned_abs()).max().unwrap_or(0);
            if reach >= n0 {
                return Err(Error::Config(format!("ball stencil of reach {reach} exceeds the grid")));
            }
            let rows = par::map_indices(n0, |i| {
                (0..n1)
                    .map(|j| {
                        let mut acc = 0.0;
                        for &(a, b, w) in &st {
                            let (si, sj) = (i as isize + a, j as isize + b);
                            let inside = si >= 0 && si < n0 as isize && sj >= 0 && sj < n1 as isize;
                            acc += w * if inside { logs[si as usize * n1 + sj as usize] } else { pad };
                        }
                        acc
                    })
                    .collect::<Vec<f64>>()
            });
            rows.concat()
        }
    };
    let mut out = DensityField::new(grid.clone(), smoothed.into_iter().map(f64::exp).collect())?;
    out.normalize()?;
    Ok(out)
}

/// `leks(kde(ds, L), K, eps)`.
pub fn ledkde(ds: &Dataset, k: &GridKernel, l: &GridKernel, grid: &Grid, eps: f64) -> Result<DensityField> {
    leks(&kde(ds, l, grid)?, k, eps)
}
