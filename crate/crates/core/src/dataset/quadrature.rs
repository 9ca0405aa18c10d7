use serde::{Deserialize, Serialize};

/// Resolution of the deterministic quadratures behind the curve, sphere and
/// subspace oracles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Nodes along a curve or a bounded interval.
    pub curve_nodes: usize,
    /// Polar-angle nodes for rotationally invariant targets.
    pub angular_nodes: usize,
    /// Half-width of the locally refined window, in units of `sqrt(t)`.
    pub refine_window: f64,
    /// Subdivisions per node inside the refined window.
    pub refine_factor: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { curve_nodes: 20_000, angular_nodes: 10_000, refine_window: 5.0, refine_factor: 2 }
    }
}

/// Midpoint nodes on `[lo, hi]` with weights summing to `hi - lo`. Cells whose
/// centers fall in `[fine_lo, fine_hi]` are split into `factor` sub-cells.
pub(crate) fn midpoint_nodes(
    lo: f64,
    hi: f64,
    n: usize,
    fine: Option<(f64, f64)>,
    factor: usize,
) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / n as f64;
    let mut nodes = Vec::with_capacity(n + n / 8);
    let mut weights = Vec::with_capacity(n + n / 8);
    for i in 0..n {
        let a = lo + i as f64 * h;
        let c = a + 0.5 * h;
        match fine {
            Some((flo, fhi)) if factor > 1 && c >= flo && c <= fhi => {
                let sub = h / factor as f64;
                for j in 0..factor {
                    nodes.push(a + (j as f64 + 0.5) * sub);
                    weights.push(sub);
                }
            }
            _ => {
                nodes.push(c);
                weights.push(h);
            }
        }
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refined_nodes_keep_total_weight() {
        let (x, w) = midpoint_nodes(0.0, 1.0, 10, Some((0.3, 0.5)), 4);
        assert_eq!(x.len(), 10 + 2 * 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let m: f64 = x.iter().zip(&w).map(|(a, b)| a * a * b).sum();
        assert!((m - 1.0 / 3.0).abs() < 1e-3);
    }
}
