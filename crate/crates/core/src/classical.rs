//! The commutative construction on two glued unit disks: radial Fourier
//! modes sampled on a composite Gauss grid, the integral operators
//!
//! * `T₁⁽ⁿ⁾f(r) = 2rⁿ ∫₀¹ ρⁿ f(ρ) dρ`
//! * `T₂⁽ⁿ⁾f(r) = −2 ∫_r¹ (r/ρ)ⁿ f(ρ) dρ`
//! * `T₃⁽ⁿ⁾f(r) = 2 ∫₀^r (ρ/r)ⁿ f(ρ) dρ`
//!
//! and the mode equations `½((uₙ⁺)′ − (n/r)uₙ⁺) = p_{n+1}⁺`,
//! `½((uₙ⁻)′ + (n/r)uₙ⁻) = p_{n−1}⁻`.
//!
//! A classical element reuses [`FourierElement`] with the site index `k`
//! standing for the grid node.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::hilbert::{FourierElement, GluedElement, Scalar};
use crate::quadrature::{gauss_legendre, graded_integral, Cluster, RadialGrid, PANEL_ORDER};
use crate::weights::Sign;
use crate::{Error, Result};

pub type ClassicalElement = FourierElement<f64>;

/// Profiles whose value at the smallest node exceeds this multiple of their
/// size on `[½, 1]` are treated as singular at the origin.
pub const REGULARITY_THRESHOLD: f64 = 100.0;

/// Levels of geometric grading for the inner HS integrals.
const HS_LEVELS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiffMethod {
    /// Three-point differences on interior nodes; endpoints skipped.
    FiniteDifference,
    /// Derivative of the 8-node panel interpolant at every node.
    PanelSpectral,
}

fn derivative(grid: &RadialGrid, u: &[f64], method: DiffMethod) -> Vec<Option<f64>> {
    match method {
        DiffMethod::PanelSpectral => grid.differentiate(u).into_iter().map(Some).collect(),
        DiffMethod::FiniteDifference => {
            let x = grid.nodes();
            (0..u.len())
                .map(|i| {
                    if i == 0 || i + 1 == u.len() {
                        return None;
                    }
                    let (h1, h2) = (x[i] - x[i - 1], x[i + 1] - x[i]);
                    Some(
                        -h2 / (h1 * (h1 + h2)) * u[i - 1]
                            + (h2 - h1) / (h1 * h2) * u[i]
                            + h1 / (h2 * (h1 + h2)) * u[i + 1],
                    )
                })
                .collect()
        }
    }
}

/// `max_j |½(u′ ∓ (n/r)u)(r_j) − p(r_j)|` over the nodes the method covers,
/// with `−` for `sign = Plus`.
pub fn dbar_residual(grid: &RadialGrid, u: &[f64], p: &[f64], n: usize, sign: Sign, method: DiffMethod) -> Result<f64> {
    if grid.len() < crate::quadrature::MIN_GRID {
        return Err(Error::GridTooCoarse {
            got: grid.len(),
            min: crate::quadrature::MIN_GRID,
        });
    }
    if u.len() != grid.len() || p.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "profiles of length {} and {} on a grid of {}",
            u.len(),
            p.len(),
            grid.len()
        )));
    }
    let s = match sign {
        Sign::Plus => -1.0,
        Sign::Minus => 1.0,
    };
    let du = derivative(grid, u, method);
    Ok(grid
        .nodes()
        .iter()
        .enumerate()
        .filter_map(|(j, r)| du[j].map(|d| (0.5 * (d + s * n as f64 / r * u[j]) - p[j]).abs()))
        .fold(0.0, f64::max))
}

/// `∂̄` of one disk copy in modes: plus `m ≥ 1` from `u_{m−1}⁺`, plus `0`
/// from `u₁⁻`, minus `m ≥ 1` from `u_{m+1}⁻`. The image of `u_N⁺` is not
/// stored.
pub fn apply_dbar(grid: &RadialGrid, u: &ClassicalElement, method: DiffMethod) -> Vec<(Sign, usize, Vec<Option<f64>>)> {
    let n_max = u.n_max();
    let r = grid.nodes();
    let mode = |src: &[f64], n: usize, s: f64| -> Vec<Option<f64>> {
        derivative(grid, src, method)
            .into_iter()
            .enumerate()
            .map(|(j, d)| d.map(|d| 0.5 * (d + s * n as f64 / r[j] * src[j])))
            .collect()
    };
    let mut out = Vec::with_capacity(2 * n_max + 1);
    out.push((Sign::Plus, 0, mode(u.minus(1), 1, 1.0)));
    for m in 1..=n_max {
        out.push((Sign::Plus, m, mode(u.plus(m - 1), m - 1, -1.0)));
    }
    for m in 1..n_max {
        out.push((Sign::Minus, m, mode(u.minus(m + 1), m + 1, 1.0)));
    }
    out
}

/// Worst `|∂̄x − rhs|` over both copies and every stored output mode
/// (minus mode `N` is skipped: nothing in the truncation feeds it).
pub fn classical_dq_residual(
    grid: &RadialGrid,
    x: &GluedElement<f64>,
    rhs: &GluedElement<f64>,
    method: DiffMethod,
) -> Result<f64> {
    if x.k_max() + 1 != grid.len() || rhs.k_max() + 1 != grid.len() {
        return Err(Error::ShapeMismatch("samples do not match the grid".into()));
    }
    let mut worst: f64 = 0.0;
    for (copy, target) in [(&x.f, &rhs.f), (&x.g, &rhs.g)] {
        for (sign, m, values) in apply_dbar(grid, copy, method) {
            let want = target.mode(sign, m).expect("same shape");
            for (v, p) in values.iter().zip(want) {
                if let Some(v) = v {
                    worst = worst.max((v - p).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// `max |uₙ⁺(1) − vₙ⁻(1)|, |uₙ⁻(1) − vₙ⁺(1)|, |u₀⁺(1) − v₀⁺(1)|`, with the
/// values at `r = 1` read from the last panel's interpolant.
pub fn classical_gluing_residual(grid: &RadialGrid, x: &GluedElement<f64>) -> f64 {
    let at_one = |v: &[f64]| grid.interpolate(v, 1.0);
    let mut worst = (at_one(x.f.plus(0)) - at_one(x.g.plus(0))).abs();
    for n in 1..=x.n_max() {
        worst = worst
            .max((at_one(x.f.plus(n)) - at_one(x.g.minus(n))).abs())
            .max((at_one(x.f.minus(n)) - at_one(x.g.plus(n))).abs());
    }
    worst
}

/// Quadrature matrices of the three operators for one mode; `T₁`, `T₃`
/// are absent for `n = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalT {
    pub n: usize,
    pub t1: Option<DMatrix<f64>>,
    pub t2: DMatrix<f64>,
    pub t3: Option<DMatrix<f64>>,
}

/// Weights on the nodes of panel `p` for `∫_lo^hi g(ρ) f(ρ) dρ`, `f`
/// replaced by its panel interpolant.
fn partial_panel(grid: &RadialGrid, p: usize, lo: f64, hi: f64, g: impl Fn(f64) -> f64) -> [f64; PANEL_ORDER] {
    let mut out = [0.0; PANEL_ORDER];
    if hi <= lo {
        return out;
    }
    let (x, w) = gauss_legendre(PANEL_ORDER);
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    for (xq, wq) in x.iter().zip(&w) {
        let rho = mid + half * xq;
        let scale = wq * half * g(rho);
        for (o, l) in out.iter_mut().zip(grid.lagrange_basis(p, rho)) {
            *o += scale * l;
        }
    }
    out
}

/// The χ cutoffs split the panel containing `r`: the part on the kernel's
/// side is integrated against the panel interpolant, whole panels use the
/// grid rule.
pub fn build_classical_t(n: usize, grid: &RadialGrid) -> ClassicalT {
    let d = grid.len();
    let (r, w) = (grid.nodes(), grid.weights());
    let nf = n as i32;
    let mut t2 = DMatrix::zeros(d, d);
    for j in 0..d {
        let p = grid.panel_of(j);
        let (_, b) = grid.panel_bounds(p);
        let part = partial_panel(grid, p, r[j], b, |rho| (r[j] / rho).powi(nf));
        for (i, v) in part.iter().enumerate() {
            t2[(j, p * PANEL_ORDER + i)] = -2.0 * v;
        }
        for l in (p + 1) * PANEL_ORDER..d {
            t2[(j, l)] = -2.0 * w[l] * (r[j] / r[l]).powi(nf);
        }
    }
    if n == 0 {
        return ClassicalT {
            n,
            t1: None,
            t2,
            t3: None,
        };
    }
    let t1 = DMatrix::from_fn(d, d, |j, l| 2.0 * r[j].powi(nf) * r[l].powi(nf) * w[l]);
    let mut t3 = DMatrix::zeros(d, d);
    for j in 0..d {
        let p = grid.panel_of(j);
        let (a, _) = grid.panel_bounds(p);
        for l in 0..p * PANEL_ORDER {
            t3[(j, l)] = 2.0 * w[l] * (r[l] / r[j]).powi(nf);
        }
        let part = partial_panel(grid, p, a, r[j], |rho| (rho / r[j]).powi(nf));
        for (i, v) in part.iter().enumerate() {
            t3[(j, p * PANEL_ORDER + i)] = 2.0 * v;
        }
    }
    ClassicalT {
        n,
        t1: Some(t1),
        t2,
        t3: Some(t3),
    }
}

/// Classical `Q(p, q) = (u, v)`:
/// `uₙ⁺ = T₂⁽ⁿ⁾p_{n+1}⁺ + T₁⁽ⁿ⁾q_{n−1}⁻`, `uₙ⁻ = T₃⁽ⁿ⁾p_{n−1}⁻`, `u₀⁺ = T₂⁽⁰⁾p₁⁺`,
/// where `p₀⁻`, `q₀⁻` are read as `p₀⁺`, `q₀⁺`; `v` exchanges `p` and `q`.
pub fn solve_and_glue(grid: &RadialGrid, rhs: &GluedElement<f64>) -> Result<GluedElement<f64>> {
    if rhs.k_max() + 1 != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "rhs has {} samples, grid has {} nodes",
            rhs.k_max() + 1,
            grid.len()
        )));
    }
    let n_max = rhs.n_max();
    let ops: Vec<ClassicalT> = (0..=n_max).into_par_iter().map(|n| build_classical_t(n, grid)).collect();
    let apply = |m: &DMatrix<f64>, f: &[f64]| -> Vec<f64> { (m * DVector::from_column_slice(f)).as_slice().to_vec() };
    fn lower_minus(e: &ClassicalElement, m: usize) -> &[f64] {
        if m == 0 {
            e.plus(0)
        } else {
            e.minus(m)
        }
    }
    let half = |p: &ClassicalElement, q: &ClassicalElement| -> ClassicalElement {
        let mut x = FourierElement::zeros(n_max, p.k_max());
        for (n, op) in ops.iter().enumerate() {
            let mut plus = if n < n_max {
                apply(&op.t2, p.plus(n + 1))
            } else {
                vec![0.0; grid.len()]
            };
            if let (Some(t1), Some(t3)) = (&op.t1, &op.t3) {
                let extra = apply(t1, lower_minus(q, n - 1));
                plus.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
                x.minus_mut(n).copy_from_slice(&apply(t3, lower_minus(p, n - 1)));
            }
            x.plus_mut(n).copy_from_slice(&plus);
        }
        x
    };
    GluedElement::new(half(&rhs.f, &rhs.g), half(&rhs.g, &rhs.f))
}

/// A right-hand side given by smooth functions on the disk: every stored
/// mode `m ≤ N−1` of both copies is `ρᵐ Σ_j a_j cos(ω_j ρ + φ_j)`, the
/// shape of the `m`-th Fourier coefficient of a smooth function.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothRhs {
    pub n_max: usize,
    // terms[copy][slot] with slot 2n for plus n, 2n−1 for minus n.
    terms: Vec<Vec<Vec<[f64; 3]>>>,
}

impl SmoothRhs {
    pub fn random(n_max: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * 0.5 * (f64::sample(&mut rng) + 1.0);
        let terms = (0..2)
            .map(|_| {
                (0..2 * n_max + 1)
                    .map(|slot| {
                        let n = slot.div_ceil(2);
                        if n >= n_max {
                            return Vec::new();
                        }
                        (0..4).map(|_| [draw(-0.25, 0.25), draw(0.0, 12.0), draw(0.0, 6.3)]).collect()
                    })
                    .collect()
            })
            .collect();
        Self { n_max, terms }
    }

    pub fn eval(&self, copy: usize, sign: Sign, n: usize, rho: f64) -> f64 {
        let slot = match sign {
            Sign::Plus => 2 * n,
            Sign::Minus => 2 * n - 1,
        };
        rho.powi(n as i32) * self.terms[copy][slot].iter().map(|[a, w, phi]| a * (w * rho + phi).cos()).sum::<f64>()
    }

    pub fn sample(&self, grid: &RadialGrid) -> GluedElement<f64> {
        let k_max = grid.len() - 1;
        let mut out = GluedElement::zeros(self.n_max, k_max);
        for (c, copy) in [&mut out.f, &mut out.g].into_iter().enumerate() {
            for n in 0..=self.n_max {
                for (slot, r) in copy.plus_mut(n).iter_mut().zip(grid.nodes()) {
                    *slot = self.eval(c, Sign::Plus, n, *r);
                }
                if n >= 1 {
                    for (slot, r) in copy.minus_mut(n).iter_mut().zip(grid.nodes()) {
                        *slot = self.eval(c, Sign::Minus, n, *r);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub nodes: usize,
    pub dq_spectral: f64,
    pub dq_finite_difference: f64,
    pub gluing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub n_max: usize,
    pub seed: u64,
    pub rows: Vec<ConvergenceRow>,
    /// `log₂` of successive spectral residual ratios.
    pub observed_orders: Vec<f64>,
    /// Residuals at or below this count as converged.
    pub floor: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `DQ = I` and the gluing conditions on one smooth seeded right-hand
/// side over successively refined grids.
pub fn convergence_study(n_max: usize, seed: u64, resolutions: &[usize], tolerance: f64) -> Result<ConvergenceStudy> {
    let rhs = SmoothRhs::random(n_max, seed);
    let rows = resolutions
        .iter()
        .map(|&nodes| -> Result<ConvergenceRow> {
            let grid = RadialGrid::new(nodes)?;
            let p = rhs.sample(&grid);
            let x = solve_and_glue(&grid, &p)?;
            Ok(ConvergenceRow {
                nodes: grid.len(),
                dq_spectral: classical_dq_residual(&grid, &x, &p, DiffMethod::PanelSpectral)?,
                dq_finite_difference: classical_dq_residual(&grid, &x, &p, DiffMethod::FiniteDifference)?,
                gluing: classical_gluing_residual(&grid, &x),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let floor = 1e-10;
    let observed_orders = rows
        .windows(2)
        .map(|w| (w[0].dq_spectral / w[1].dq_spectral).log2())
        .collect();
    let halving = rows
        .windows(2)
        .all(|w| w[1].dq_spectral <= floor || w[1].dq_spectral <= 0.5 * w[0].dq_spectral);
    let last = rows.last().ok_or_else(|| Error::InvalidTruncation("no grids given".into()))?;
    let pass = halving && last.dq_spectral <= tolerance && last.gluing <= 1e-8;
    Ok(ConvergenceStudy {
        n_max,
        seed,
        rows,
        observed_orders,
        floor,
        tolerance,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassicalHsRow {
    pub n: usize,
    pub which: crate::parametrix::Which,
    pub hs_sq: f64,
    /// Difference from the same quadrature with half the outer panels.
    pub error: f64,
    /// `1/(n(n+1))` for `T₁`, `1/n` for `T₂`, `T₃`; none for `T₂⁽⁰⁾`.
    pub bound: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalHsTable {
    pub rows: Vec<ClassicalHsRow>,
    pub max_error: f64,
    pub pass: bool,
}

/// `‖T‖²_HS = ∫∫ |k(r, ρ)|² ρ dρ dμ(r)` with `dμ(r) = r dr/(1+r²)²`; outer
/// integral on the grid, inner integral graded toward the kernel's peak.
fn hs_sq(which: crate::parametrix::Which, n: usize, grid: &RadialGrid) -> f64 {
    use crate::parametrix::Which;
    let nf = n as i32;
    let integrand = |r: f64| {
        let outer = 4.0 * r / (1.0 + r * r).powi(2);
        let inner = match which {
            Which::T1 => r.powi(2 * nf) * graded_integral(|p| p.powi(2 * nf - 1), 0.0, 1.0, Cluster::Right, HS_LEVELS),
            Which::T2 => graded_integral(|p| (r / p).powi(2 * nf) / p, r, 1.0, Cluster::Left, HS_LEVELS),
            Which::T3 => graded_integral(|p| (p / r).powi(2 * nf - 1) / r, 0.0, r, Cluster::Right, HS_LEVELS),
        };
        outer * inner
    };
    // The first panel is graded too: T₂⁽⁰⁾ has an r ln r endpoint.
    let first = graded_integral(integrand, 0.0, grid.panel_width(), Cluster::Left, HS_LEVELS);
    first
        + grid.nodes()[PANEL_ORDER..]
            .par_iter()
            .zip(&grid.weights()[PANEL_ORDER..])
            .map(|(&r, &w)| w * integrand(r))
            .sum::<f64>()
}

pub fn classical_hs_norms(n_range: RangeInclusive<usize>, grid: &RadialGrid, tolerance: f64) -> Result<ClassicalHsTable> {
    use crate::parametrix::Which;
    if *n_range.end() > 64 {
        return Err(Error::InvalidTruncation(format!("classical HS modes go up to 64, got {}", n_range.end())));
    }
    let coarse = grid.coarsened();
    let jobs: Vec<(usize, Which)> = n_range
        .flat_map(|n| {
            let list: &[Which] = if n == 0 { &[Which::T2] } else { &Which::ALL };
            list.iter().map(move |w| (n, *w))
        })
        .collect();
    let rows: Vec<ClassicalHsRow> = jobs
        .into_par_iter()
        .map(|(n, which)| {
            let fine = hs_sq(which, n, grid);
            let error = (fine - hs_sq(which, n, &coarse)).abs();
            let bound = match (which, n) {
                (_, 0) => None,
                (Which::T1, _) => Some(1.0 / (n * (n + 1)) as f64),
                _ => Some(1.0 / n as f64),
            };
            let pass = fine.is_finite() && error <= tolerance && bound.is_none_or(|b| fine <= b + error);
            ClassicalHsRow {
                n,
                which,
                hs_sq: fine,
                error,
                bound,
                pass,
            }
        })
        .collect();
    Ok(ClassicalHsTable {
        max_error: rows.iter().map(|r| r.error).fold(0.0, f64::max),
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelCandidate {
    /// `"r^n"` for the plus solution, `"r^-n"` for the minus one.
    pub label: String,
    pub sign: char,
    pub dbar_residual: f64,
    pub value_at_min_node: f64,
    pub regular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalModeKernel {
    pub n: usize,
    pub candidates: Vec<KernelCandidate>,
    /// Nullity of the gluing conditions on the regular candidates of both copies.
    pub nullity: usize,
    /// The same count if the regularity filter were dropped.
    pub nullity_without_regularity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalKernelReport {
    pub nodes: usize,
    pub modes: Vec<ClassicalModeKernel>,
    pub dimension: usize,
    pub constant_dbar_residual: f64,
    pub constant_gluing_residual: f64,
    pub pass: bool,
}

/// Rejects profiles that blow up toward the origin.
pub fn is_regular(grid: &RadialGrid, profile: &[f64]) -> bool {
    let scale = grid
        .nodes()
        .iter()
        .zip(profile)
        .filter(|(r, _)| **r >= 0.5)
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    profile[0].abs() <= REGULARITY_THRESHOLD * scale
}

fn nullity(m: DMatrix<f64>, unknowns: usize) -> usize {
    if unknowns == 0 {
        return 0;
    }
    let rows = m.nrows().max(unknowns);
    let mut square = DMatrix::zeros(rows, unknowns);
    square.view_mut((0, 0), (m.nrows(), unknowns)).copy_from(&m);
    let sv = square.singular_values();
    sv.iter().filter(|s| **s <= 1e-8).count()
}

/// Homogeneous solutions mode by mode (`rⁿ` and `r⁻ⁿ` on each copy),
/// filtered by regularity at the origin, then by the gluing conditions.
pub fn classical_kernel_check(grid: &RadialGrid, n_check: usize) -> Result<ClassicalKernelReport> {
    let zero = vec![0.0; grid.len()];
    let modes = (0..=n_check)
        .into_par_iter()
        .map(|n| -> Result<ClassicalModeKernel> {
            let nf = n as i32;
            let plus: Vec<f64> = grid.nodes().iter().map(|r| r.powi(nf)).collect();
            let mut candidates = vec![KernelCandidate {
                label: format!("r^{n}"),
                sign: '+',
                dbar_residual: dbar_residual(grid, &plus, &zero, n, Sign::Plus, DiffMethod::PanelSpectral)?,
                value_at_min_node: plus[0],
                regular: is_regular(grid, &plus),
            }];
            let minus: Vec<f64> = grid.nodes().iter().map(|r| r.powi(-nf)).collect();
            if n >= 1 {
                candidates.push(KernelCandidate {
                    label: format!("r^-{n}"),
                    sign: '-',
                    dbar_residual: dbar_residual(grid, &minus, &zero, n, Sign::Minus, DiffMethod::PanelSpectral)?,
                    value_at_min_node: minus[0],
                    regular: is_regular(grid, &minus),
                });
            }
            // Unknowns: coefficients of each candidate on copy u, then on copy v.
            let at_one = |v: &[f64]| grid.interpolate(v, 1.0);
            let count = |keep: &dyn Fn(&KernelCandidate) -> bool| -> usize {
                let kept: Vec<char> = candidates.iter().filter(|c| keep(c)).map(|c| c.sign).collect();
                let index = |copy: usize, sign: char| kept.iter().position(|s| *s == sign).map(|i| copy * kept.len() + i);
                let unknowns = 2 * kept.len();
                let value = |sign: char| if sign == '+' { at_one(&plus) } else { at_one(&minus) };
                let mut rows: Vec<Vec<f64>> = Vec::new();
                let mut pair = |(cu, su): (usize, char), (cv, sv): (usize, char)| {
                    let mut row = vec![0.0; unknowns];
                    if let Some(i) = index(cu, su) {
                        row[i] += value(su);
                    }
                    if let Some(i) = index(cv, sv) {
                        row[i] -= value(sv);
                    }
                    rows.push(row);
                };
                if n == 0 {
                    pair((0, '+'), (1, '+'));
                } else {
                    pair((0, '+'), (1, '-'));
                    pair((0, '-'), (1, '+'));
                }
                let m = DMatrix::from_fn(rows.len(), unknowns, |i, j| rows[i][j]);
                nullity(m, unknowns)
            };
            Ok(ClassicalModeKernel {
                n,
                nullity: count(&|c| c.regular),
                nullity_without_regularity: count(&|_| true),
                candidates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dimension = modes.iter().map(|m| m.nullity).sum();

    let mut constant = GluedElement::zeros(n_check, grid.len() - 1);
    constant.f.plus_mut(0).fill(1.0);
    constant.g.plus_mut(0).fill(1.0);
    let constant_dbar_residual = classical_dq_residual(grid, &constant, &GluedElement::zeros(n_check, grid.len() - 1), DiffMethod::PanelSpectral)?;
    let constant_gluing_residual = classical_gluing_residual(grid, &constant);
    Ok(ClassicalKernelReport {
        nodes: grid.len(),
        pass: dimension == 1 && constant_dbar_residual <= 1e-10 && constant_gluing_residual <= 1e-12,
        modes,
        dimension,
        constant_dbar_residual,
        constant_gluing_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parametrix::Which;
    use proptest::prelude::*;

    fn grid(n: usize) -> RadialGrid {
        RadialGrid::new(n).unwrap()
    }

    fn apply(m: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
        (m * DVector::from_column_slice(f)).as_slice().to_vec()
    }

    #[test]
    fn power_profile_is_in_plus_kernel() {
        let g = grid(128);
        let zero = vec![0.0; g.len()];
        for n in 0..5 {
            let u: Vec<f64> = g.nodes().iter().map(|r| r.powi(n as i32)).collect();
            let fd = dbar_residual(&g, &u, &zero, n, Sign::Plus, DiffMethod::FiniteDifference).unwrap();
            let sp = dbar_residual(&g, &u, &zero, n, Sign::Plus, DiffMethod::PanelSpectral).unwrap();
            assert!(fd < 1e-3, "n={n}: {fd}");
            assert!(sp < 1e-12, "n={n}: {sp}");
        }
        assert_eq!(dbar_residual(&g, &zero, &zero, 2, Sign::Minus, DiffMethod::FiniteDifference).unwrap(), 0.0);
    }

    #[test]
    fn singular_profile_fails_regularity() {
        let g = grid(64);
        let u: Vec<f64> = g.nodes().iter().map(|r| 1.0 / r).collect();
        assert!(!is_regular(&g, &u));
        let v: Vec<f64> = g.nodes().iter().map(|r| r * r).collect();
        assert!(is_regular(&g, &v));
    }

    #[test]
    fn coarse_grid_rejected() {
        assert!(matches!(RadialGrid::new(48), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn t1_of_one_is_r() {
        let g = grid(64);
        let t = build_classical_t(1, &g);
        let out = apply(t.t1.as_ref().unwrap(), &vec![1.0; g.len()]);
        for (v, r) in out.iter().zip(g.nodes()) {
            assert!((v - r).abs() < 1e-14);
        }
    }

    #[test]
    fn cutoffs_vanish_across_the_panel_diagonal() {
        let g = grid(64);
        let t = build_classical_t(2, &g);
        let t3 = t.t3.unwrap();
        for j in 0..g.len() {
            let p = g.panel_of(j);
            for l in 0..g.len() {
                if g.panel_of(l) < p {
                    assert_eq!(t.t2[(j, l)], 0.0);
                }
                if g.panel_of(l) > p {
                    assert_eq!(t3[(j, l)], 0.0);
                }
            }
        }
    }

    #[test]
    fn operators_match_antiderivatives() {
        // f(ρ) = ρ²: T₂⁽¹⁾f = −2r(1−r²)/2, T₃⁽¹⁾f = 2r³/3... from ∫ρ³/r.
        let g = grid(64);
        let f: Vec<f64> = g.nodes().iter().map(|r| r * r).collect();
        let t = build_classical_t(1, &g);
        let t2 = apply(&t.t2, &f);
        let t3 = apply(t.t3.as_ref().unwrap(), &f);
        for (j, r) in g.nodes().iter().enumerate() {
            assert!((t2[j] + r * (1.0 - r * r)).abs() < 1e-14);
            assert!((t3[j] - r.powi(3) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rho_source_gives_r_squared_minus_one() {
        let g = grid(64);
        let mut rhs = GluedElement::zeros(2, g.len() - 1);
        rhs.f.plus_mut(1).copy_from_slice(g.nodes());
        let x = solve_and_glue(&g, &rhs).unwrap();
        for (v, r) in x.f.plus(0).iter().zip(g.nodes()) {
            assert!((v - (r * r - 1.0)).abs() < 1e-14);
        }
        assert!(x.g.plus(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_rhs_zero_solution() {
        let g = grid(64);
        let x = solve_and_glue(&g, &GluedElement::zeros(3, g.len() - 1)).unwrap();
        assert!(x.max_abs() == 0.0);
    }

    #[test]
    fn smooth_rhs_solved_and_glued() {
        let g = grid(512);
        let rhs = SmoothRhs::random(4, 11).sample(&g);
        let x = solve_and_glue(&g, &rhs).unwrap();
        assert!(classical_dq_residual(&g, &x, &rhs, DiffMethod::PanelSpectral).unwrap() < 1e-6);
        assert!(classical_gluing_residual(&g, &x) < 1e-8);
    }

    #[test]
    fn finite_differences_converge_at_second_order() {
        let rhs = SmoothRhs::random(3, 2);
        let residual = |nodes| {
            let g = grid(nodes);
            let p = rhs.sample(&g);
            let x = solve_and_glue(&g, &p).unwrap();
            classical_dq_residual(&g, &x, &p, DiffMethod::FiniteDifference).unwrap()
        };
        let (coarse, fine) = (residual(128), residual(256));
        assert!(fine < 0.4 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn convergence_study_passes() {
        let study = convergence_study(4, 7, &[64, 128, 256, 512], 1e-6).unwrap();
        assert!(study.pass, "{study:?}");
    }

    #[test]
    fn hs_table_for_small_modes() {
        let g = grid(256);
        let table = classical_hs_norms(0..=4, &g, 1e-6).unwrap();
        assert!(table.pass, "{table:?}");
        let t1 = table.rows.iter().find(|r| r.n == 3 && r.which == Which::T1).unwrap();
        assert!((t1.bound.unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert!(table.rows.iter().any(|r| r.n == 0 && r.bound.is_none()));
    }

    #[test]
    fn hs_matches_closed_forms() {
        // ‖T₃⁽ⁿ⁾‖² = (4/(2n)) ∫₀¹ r/(1+r²)² dr = 1/n · ½ = 1/(2n).
        // ‖T₁⁽ⁿ⁾‖² = (2/n) ∫₀¹ r^{2n+1}/(1+r²)² dr, and for n = 1 that is
        // 2·(ln 2 − ½)/2 = ln 2 − ½.
        let g = grid(256);
        for n in 1..=4 {
            let got = hs_sq(Which::T3, n, &g);
            assert!((got - 1.0 / (2.0 * n as f64)).abs() < 1e-12, "n={n}: {got}");
        }
        let t1 = hs_sq(Which::T1, 1, &g);
        assert!((t1 - (2f64.ln() - 0.5)).abs() < 1e-12);
        // T₂⁽⁰⁾: ∫₀¹ 4r ln(1/r)/(1+r²)² dr = ln 2.
        let t20 = hs_sq(Which::T2, 0, &g);
        assert!((t20 - 2f64.ln()).abs() < 1e-9, "{t20}");
    }

    #[test]
    fn kernel_is_the_constant_pair() {
        let report = classical_kernel_check(&grid(128), 6).unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.dimension, 1);
        for m in &report.modes[1..] {
            assert_eq!(m.nullity, 0);
            assert_eq!(m.nullity_without_regularity, 2);
            assert!(!m.candidates[1].regular);
        }
    }

    #[test]
    fn one_sided_power_breaks_gluing() {
        let g = grid(64);
        let mut x = GluedElement::zeros(3, g.len() - 1);
        for (v, r) in x.f.plus_mut(2).iter_mut().zip(g.nodes()) {
            *v = r * r;
        }
        assert!((classical_gluing_residual(&g, &x) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn q_output_glues(seed in any::<u64>()) {
            let g = grid(128);
            let rhs = SmoothRhs::random(3, seed).sample(&g);
            let x = solve_and_glue(&g, &rhs).unwrap();
            prop_assert!(classical_gluing_residual(&g, &x) < 1e-8);
        }
    }
}
