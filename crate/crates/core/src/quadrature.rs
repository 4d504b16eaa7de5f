//! Gauss–Legendre rules, composite radial grids on `[0, 1]` and graded
//! integration for integrands that peak at one end.

use std::f64::consts::PI;

use crate::{Error, Result};

/// Nodes per panel of a composite grid.
pub const PANEL_ORDER: usize = 8;

/// Smallest grid accepted by the classical routines.
pub const MIN_GRID: usize = 64;

/// `m`-point Gauss–Legendre nodes and weights on `[−1, 1]`, nodes increasing.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "a Gauss rule needs at least one node");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        // Chebyshev-like initial guess, refined by Newton on P_m.
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_m(x), P_m'(x))` by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=m {
        let j = j as f64;
        let p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Barycentric weights for interpolation on `nodes`.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(j, xj)| {
            let prod: f64 = nodes
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != j)
                .map(|(_, xk)| xj - xk)
                .product();
            1.0 / prod
        })
        .collect()
}

/// Value at `x` of the polynomial through `(nodes, values)`.
pub fn barycentric_eval(nodes: &[f64], bary: &[f64], values: &[f64], x: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((xj, wj), fj) in nodes.iter().zip(bary).zip(values) {
        let d = x - xj;
        if d == 0.0 {
            return *fj;
        }
        let t = wj / d;
        num += t * fj;
        den += t;
    }
    num / den
}

/// Differentiation matrix of the interpolant on `nodes`, row-major.
pub fn differentiation_matrix(nodes: &[f64], bary: &[f64]) -> Vec<Vec<f64>> {
    let m = nodes.len();
    let mut d = vec![vec![0.0; m]; m];
    for i in 0..m {
        let mut diag = 0.0;
        for j in 0..m {
            if i != j {
                d[i][j] = bary[j] / bary[i] / (nodes[i] - nodes[j]);
                diag -= d[i][j];
            }
        }
        d[i][i] = diag;
    }
    d
}

/// Composite Gauss–Legendre rule on `[0, 1]` with equal panels of
/// [`PANEL_ORDER`] nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panels: usize,
    // Reference rule on [-1, 1].
    ref_nodes: Vec<f64>,
    ref_weights: Vec<f64>,
    bary: Vec<f64>,
    diff: Vec<Vec<f64>>,
}

impl RadialGrid {
    /// At least `resolution` nodes, rounded up to whole panels.
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < MIN_GRID {
            return Err(Error::GridTooCoarse {
                got: resolution,
                min: MIN_GRID,
            });
        }
        let panels = resolution.div_ceil(PANEL_ORDER);
        let (ref_nodes, ref_weights) = gauss_legendre(PANEL_ORDER);
        Ok(Self::build(panels, ref_nodes, ref_weights))
    }

    fn build(panels: usize, ref_nodes: Vec<f64>, ref_weights: Vec<f64>) -> Self {
        let h = 1.0 / panels as f64;
        let mut nodes = Vec::with_capacity(panels * PANEL_ORDER);
        let mut weights = Vec::with_capacity(panels * PANEL_ORDER);
        for p in 0..panels {
            let a = p as f64 * h;
            for (x, w) in ref_nodes.iter().zip(&ref_weights) {
                nodes.push(a + 0.5 * h * (x + 1.0));
                weights.push(0.5 * h * w);
            }
        }
        let bary = barycentric_weights(&ref_nodes);
        let diff = differentiation_matrix(&ref_nodes, &bary);
        Self {
            nodes,
            weights,
            panels,
            ref_nodes,
            ref_weights,
            bary,
            diff,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn panel_width(&self) -> f64 {
        1.0 / self.panels as f64
    }

    pub fn panel_of(&self, j: usize) -> usize {
        j / PANEL_ORDER
    }

    pub fn panel_bounds(&self, p: usize) -> (f64, f64) {
        let h = self.panel_width();
        (p as f64 * h, (p + 1) as f64 * h)
    }

    /// Reference Gauss rule on `[−1, 1]` used inside each panel.
    pub fn reference_rule(&self) -> (&[f64], &[f64]) {
        (&self.ref_nodes, &self.ref_weights)
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Panelwise polynomial interpolant of `values` at `x ∈ [0, 1]`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let p = ((x * self.panels as f64) as usize).min(self.panels - 1);
        self.interpolate_in(p, values, x)
    }

    /// The interpolant of panel `p`, evaluated at `x` (extrapolating if `x`
    /// lies outside the panel).
    pub fn interpolate_in(&self, p: usize, values: &[f64], x: f64) -> f64 {
        let (a, b) = self.panel_bounds(p);
        let t = (2.0 * x - a - b) / (b - a);
        let slice = &values[p * PANEL_ORDER..(p + 1) * PANEL_ORDER];
        barycentric_eval(&self.ref_nodes, &self.bary, slice, t)
    }

    /// Lagrange basis of panel `p` evaluated at `x`.
    pub fn lagrange_basis(&self, p: usize, x: f64) -> [f64; PANEL_ORDER] {
        let (a, b) = self.panel_bounds(p);
        let t = (2.0 * x - a - b) / (b - a);
        let mut out = [0.0; PANEL_ORDER];
        if let Some(j) = self.ref_nodes.iter().position(|xj| *xj == t) {
            out[j] = 1.0;
            return out;
        }
        let mut den = 0.0;
        for j in 0..PANEL_ORDER {
            out[j] = self.bary[j] / (t - self.ref_nodes[j]);
            den += out[j];
        }
        out.iter_mut().for_each(|v| *v /= den);
        out
    }

    /// The same rule with half as many panels, used for error estimates.
    pub fn coarsened(&self) -> Self {
        Self::with_panels((self.panels / 2).max(1))
    }

    fn with_panels(panels: usize) -> Self {
        let (ref_nodes, ref_weights) = gauss_legendre(PANEL_ORDER);
        Self::build(panels, ref_nodes, ref_weights)
    }

    /// Derivative of the panelwise interpolant at every node.
    pub fn differentiate(&self, values: &[f64]) -> Vec<f64> {
        let scale = 2.0 / self.panel_width();
        let mut out = vec![0.0; values.len()];
        for p in 0..self.panels {
            let base = p * PANEL_ORDER;
            for i in 0..PANEL_ORDER {
                out[base + i] = scale * (0..PANEL_ORDER).map(|j| self.diff[i][j] * values[base + j]).sum::<f64>();
            }
        }
        out
    }
}

/// Where an integrand concentrates on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cluster {
    Left,
    Right,
}

/// `∫_a^b f` with `PANEL_ORDER`-point Gauss panels whose widths shrink
/// geometrically (ratio ½) toward the clustered end over `levels` panels;
/// the last panel reaches the end itself.
pub fn graded_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cluster: Cluster, levels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (nodes, weights) = gauss_legendre(PANEL_ORDER);
    let panel = |lo: f64, hi: f64| -> f64 {
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        nodes.iter().zip(&weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
    };
    let len = b - a;
    let mut total = 0.0;
    // Distances from the clustered end: len, len/2, ..., len/2^levels, 0.
    let mut outer = len;
    for _ in 0..levels {
        let inner = 0.5 * outer;
        total += match cluster {
            Cluster::Left => panel(a + inner, a + outer),
            Cluster::Right => panel(b - outer, b - inner),
        };
        outer = inner;
    }
    total
        + match cluster {
            Cluster::Left => panel(a, a + outer),
            Cluster::Right => panel(b - outer, b),
        }
}
