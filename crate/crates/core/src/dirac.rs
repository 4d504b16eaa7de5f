//! The glued Dirac-type operator `D(f, g) = (δf, δg)` at truncation, where
//!
//! `δf = −Σ_{n≥0} U^{n+1} Ā⁽ⁿ⁾fₙ⁺ + Σ_{n≥1} A⁽ⁿ⁻¹⁾fₙ⁻ (U*)^{n−1}`.
//!
//! In coefficients: plus mode `m ≥ 1` of `δf` is `−Ā⁽ᵐ⁻¹⁾f_{m−1}⁺`, plus mode
//! `0` is `A⁽⁰⁾f₁⁻`, and minus mode `m ≥ 1` is `A⁽ᵐ⁾f_{m+1}⁻`. The term
//! `Ā⁽ᴺ⁾f_N⁺` lands in mode `N+1`, which is not stored; its norm is reported
//! as leakage.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::hilbert::{check_gluing, norm, FourierElement, GluedElement, GluingReport, Scalar};
use crate::jacobi::{build_a, build_abar, ModeOperator};
use crate::weights::{tail_profile, Sign, WeightFamily};
use crate::{Error, Result, TruncationSpec};

#[derive(Debug, Clone)]
pub struct GluedDirac {
    family: Arc<dyn WeightFamily>,
    trunc: TruncationSpec,
    // abar[n] = Ā⁽ⁿ⁾ for n ∈ [0, N]; the last one only feeds the leakage.
    abar: Vec<ModeOperator>,
    // a[n] = A⁽ⁿ⁾ for n ∈ [0, N−1].
    a: Vec<ModeOperator>,
}

/// `δf` together with what the truncation did to it.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaOutput<S> {
    pub value: FourierElement<S>,
    /// `Σ_i |M(k,i) f(i)|` for every output coefficient.
    pub magnitudes: FourierElement<f64>,
    /// `‖Ā⁽ᴺ⁾f_N⁺‖_{a⁽ᴺ⁺¹⁾}` over rows `k < K_max`, the part of `δf` beyond
    /// the stored modes.
    pub leakage: f64,
}

impl GluedDirac {
    pub fn new(family: Arc<dyn WeightFamily>, trunc: TruncationSpec) -> Result<Self> {
        trunc.check()?;
        let (n_max, k_max) = (trunc.n_max, trunc.k_max);
        let abar = (0..=n_max)
            .into_par_iter()
            .map(|n| build_abar(family.as_ref(), n, k_max))
            .collect::<Result<Vec<_>>>()?;
        let a = (0..n_max)
            .into_par_iter()
            .map(|n| build_a(family.as_ref(), n, k_max))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { family, trunc, abar, a })
    }

    pub fn family(&self) -> &dyn WeightFamily {
        self.family.as_ref()
    }

    pub fn family_arc(&self) -> Arc<dyn WeightFamily> {
        Arc::clone(&self.family)
    }

    pub fn trunc(&self) -> &TruncationSpec {
        &self.trunc
    }

    pub fn abar(&self, n: usize) -> &ModeOperator {
        &self.abar[n]
    }

    pub fn a(&self, n: usize) -> &ModeOperator {
        &self.a[n]
    }

    fn check_shape<S: Scalar>(&self, x: &FourierElement<S>) -> Result<()> {
        if x.n_max() == self.trunc.n_max && x.k_max() == self.trunc.k_max {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "element has (N, K) = ({}, {}), operator expects ({}, {})",
                x.n_max(),
                x.k_max(),
                self.trunc.n_max,
                self.trunc.k_max
            )))
        }
    }

    pub fn apply_delta_detailed<S: Scalar>(&self, x: &FourierElement<S>) -> Result<DeltaOutput<S>> {
        self.check_shape(x)?;
        let (n_max, k_max) = (self.trunc.n_max, self.trunc.k_max);
        let mut value = FourierElement::zeros(n_max, k_max);
        let mut magnitudes = FourierElement::zeros(n_max, k_max);

        value.plus_mut(0).copy_from_slice(&self.a[0].apply(x.minus(1))?);
        magnitudes.plus_mut(0).copy_from_slice(&self.a[0].row_magnitudes(x.minus(1))?);
        for m in 1..=n_max {
            let op = &self.abar[m - 1];
            let out: Vec<S> = op.apply(x.plus(m - 1))?.into_iter().map(|v| -v).collect();
            value.plus_mut(m).copy_from_slice(&out);
            magnitudes.plus_mut(m).copy_from_slice(&op.row_magnitudes(x.plus(m - 1))?);
        }
        for m in 1..n_max {
            let op = &self.a[m];
            value.minus_mut(m).copy_from_slice(&op.apply(x.minus(m + 1))?);
            magnitudes.minus_mut(m).copy_from_slice(&op.row_magnitudes(x.minus(m + 1))?);
        }

        let spill = self.abar[n_max].apply(x.plus(n_max))?;
        let leakage = spill[..k_max]
            .iter()
            .enumerate()
            .map(|(k, v)| self.family.inv_a(n_max + 1, k) * v.abs().powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(DeltaOutput {
            value,
            magnitudes,
            leakage,
        })
    }

    pub fn apply_delta<S: Scalar>(&self, x: &FourierElement<S>) -> Result<FourierElement<S>> {
        Ok(self.apply_delta_detailed(x)?.value)
    }

    pub fn apply_d<S: Scalar>(&self, x: &GluedElement<S>) -> Result<GluedElement<S>> {
        GluedElement::new(self.apply_delta(&x.f)?, self.apply_delta(&x.g)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainReport {
    pub pass: bool,
    /// `‖δf‖`, `‖δg‖`.
    pub delta_norms: [f64; 2],
    pub gluing: Option<GluingReport>,
    /// Set when a boundary trace failed its Cauchy check.
    pub trace_failure: Option<String>,
}

/// Truncated proxy for `dom(D)`: finite `‖δf‖`, `‖δg‖` over interior rows,
/// converged boundary traces, and the mirror gluing condition.
pub fn in_domain<S: Scalar>(op: &GluedDirac, x: &GluedElement<S>) -> Result<DomainReport> {
    let interior = |copy: &FourierElement<S>| -> Result<FourierElement<S>> {
        let mut out = op.apply_delta(copy)?;
        let k_max = out.k_max();
        for n in 1..=out.n_max() {
            out.plus_mut(n)[k_max] = S::zero();
        }
        Ok(out)
    };
    let df = interior(&x.f)?;
    let dg = interior(&x.g)?;
    let delta_norms = [norm(&df, op.family())?, norm(&dg, op.family())?];
    let finite = delta_norms.iter().all(|v| v.is_finite());
    let (gluing, trace_failure) = match check_gluing(x, op.trunc()) {
        Ok(report) => (Some(report), None),
        Err(e @ Error::TraceNotConverged { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let pass = finite && gluing.is_some_and(|g| g.pass);
    Ok(DomainReport {
        pass,
        delta_norms,
        gluing,
        trace_failure,
    })
}

/// The kernel basis: both copies carry `x₀⁺(k) = ∏_{i≥k} c₊⁽⁰⁾(i)`
/// (so `x₀⁺(∞) = 1`), every other coefficient zero.
pub fn kernel_d(op: &GluedDirac) -> Result<Vec<GluedElement<f64>>> {
    let (n_max, k_max) = (op.trunc.n_max, op.trunc.k_max);
    let profile = tail_profile(op.family(), Sign::Plus, 0, k_max, op.trunc())?;
    let mut f = FourierElement::zeros(n_max, k_max);
    f.plus_mut(0).copy_from_slice(&profile);
    Ok(vec![GluedElement::new(f.clone(), f)?])
}

/// Worst componentwise residual `|δx(k)| / Σ|terms|` of `D x` over interior
/// rows (Ā's row `K_max` excluded).
pub fn interior_residual<S: Scalar>(op: &GluedDirac, x: &GluedElement<S>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for copy in [&x.f, &x.g] {
        let out = op.apply_delta_detailed(copy)?;
        for (sign, n, v) in out.value.modes() {
            let mags = out.magnitudes.mode(sign, n).expect("same shape");
            let rows = if sign == Sign::Plus && n >= 1 { v.len() - 1 } else { v.len() };
            for k in 0..rows {
                if mags[k] > 0.0 {
                    worst = worst.max(v[k].abs() / mags[k]);
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockNullity {
    /// Coefficient sequences coupled in this block, e.g. `"f1+ g1-"`.
    pub label: String,
    pub unknowns: usize,
    pub equations: usize,
    pub nullity: usize,
    pub smallest_singular_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOracle {
    pub n_max: usize,
    pub k_max: usize,
    pub threshold: f64,
    pub blocks: Vec<BlockNullity>,
    pub dimension: usize,
    /// Unit vectors spanning the numerical nullspace.
    pub null_vectors: Vec<GluedElement<f64>>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Slot layout of the oracle's unknown vector: `(copy, sign, n)` sequences of
/// length `K+1`, plus modes `0..=N` then minus modes `1..=N`, copy `f` first.
struct Layout {
    n_max: usize,
    sites: usize,
}

impl Layout {
    fn slots_per_copy(&self) -> usize {
        2 * self.n_max + 1
    }

    fn slot(&self, copy: usize, sign: Sign, n: usize) -> usize {
        let inner = match sign {
            Sign::Plus => n,
            Sign::Minus => self.n_max + n,
        };
        copy * self.slots_per_copy() + inner
    }

    fn index(&self, copy: usize, sign: Sign, n: usize, k: usize) -> usize {
        self.slot(copy, sign, n) * self.sites + k
    }

    fn unknowns(&self) -> usize {
        2 * self.slots_per_copy() * self.sites
    }

    fn describe(&self, slot: usize) -> (usize, Sign, usize) {
        let copy = slot / self.slots_per_copy();
        let inner = slot % self.slots_per_copy();
        if inner <= self.n_max {
            (copy, Sign::Plus, inner)
        } else {
            (copy, Sign::Minus, inner - self.n_max)
        }
    }
}

/// Dense nullspace of the homogeneous glued system at `(n_max, k_max)`:
/// `Ā⁽ⁿ⁾xₙ⁺ = 0` on rows `k < K`, `A⁽ⁿ⁻¹⁾xₙ⁻ = 0` on all rows, the same for
/// `y`, and the gluing conditions imposed at `k = K`.
///
/// Rows are equilibrated, the system is split into its decoupled blocks,
/// and each block is handed to a full SVD; singular values below
/// `threshold` count toward the nullity.
pub fn dense_kernel_oracle(
    family: &dyn WeightFamily,
    n_max: usize,
    k_max: usize,
    threshold: f64,
) -> Result<KernelOracle> {
    let layout = Layout {
        n_max,
        sites: k_max + 1,
    };
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for copy in 0..2 {
        for n in 0..=n_max {
            let abar = build_abar(family, n, k_max)?;
            for k in 0..k_max {
                rows.push(vec![
                    (layout.index(copy, Sign::Plus, n, k), abar.entry(k, k)),
                    (layout.index(copy, Sign::Plus, n, k + 1), abar.entry(k, k + 1)),
                ]);
            }
        }
        for n in 1..=n_max {
            let a = build_a(family, n - 1, k_max)?;
            for k in 0..=k_max {
                let mut row = vec![(layout.index(copy, Sign::Minus, n, k), a.entry(k, k))];
                if k > 0 {
                    row.push((layout.index(copy, Sign::Minus, n, k - 1), a.entry(k, k - 1)));
                }
                rows.push(row);
            }
        }
    }
    let glue = |a: (usize, Sign, usize), b: (usize, Sign, usize)| {
        vec![
            (layout.index(a.0, a.1, a.2, k_max), 1.0),
            (layout.index(b.0, b.1, b.2, k_max), -1.0),
        ]
    };
    rows.push(glue((0, Sign::Plus, 0), (1, Sign::Plus, 0)));
    for n in 1..=n_max {
        rows.push(glue((0, Sign::Plus, n), (1, Sign::Minus, n)));
        rows.push(glue((0, Sign::Minus, n), (1, Sign::Plus, n)));
    }
    for row in &mut rows {
        let scale = row.iter().fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::WeightOverflow {
                which: "b",
                n: n_max,
                k: k_max,
            });
        }
        row.iter_mut().for_each(|(_, v)| *v /= scale);
    }

    let mut uf = UnionFind::new(layout.unknowns());
    for row in &rows {
        for w in row.windows(2) {
            uf.union(w[0].0, w[1].0);
        }
    }
    let mut blocks: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
    let mut block_of_root = std::collections::BTreeMap::new();
    for u in 0..layout.unknowns() {
        let root = uf.find(u);
        let id = *block_of_root.entry(root).or_insert_with(|| {
            blocks.push((root, Vec::new(), Vec::new()));
            blocks.len() - 1
        });
        blocks[id].1.push(u);
    }
    for (r, row) in rows.iter().enumerate() {
        let root = uf.find(row[0].0);
        blocks[block_of_root[&root]].2.push(r);
    }

    let solved: Vec<(BlockNullity, Vec<DVector<f64>>, Vec<usize>)> = blocks
        .into_par_iter()
        .map(|(_, unknowns, row_ids)| {
            let cols = unknowns.len();
            let dim = cols.max(row_ids.len());
            let position: std::collections::HashMap<usize, usize> =
                unknowns.iter().enumerate().map(|(i, &u)| (u, i)).collect();
            let mut m = DMatrix::zeros(dim, cols);
            for (i, &r) in row_ids.iter().enumerate() {
                for &(u, v) in &rows[r] {
                    m[(i, position[&u])] += v;
                }
            }
            let svd = m.svd(false, true);
            let v_t = svd.v_t.expect("requested V");
            let null: Vec<DVector<f64>> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] < threshold)
                .map(|i| v_t.row(i).transpose())
                .collect();
            let mut slots: Vec<usize> = unknowns.iter().map(|u| u / layout.sites).collect();
            slots.dedup();
            let label = slots
                .iter()
                .map(|&s| {
                    let (copy, sign, n) = layout.describe(s);
                    format!("{}{}{}", if copy == 0 { 'f' } else { 'g' }, n, sign.symbol())
                })
                .collect::<Vec<_>>()
                .join(" ");
            let block = BlockNullity {
                label,
                unknowns: cols,
                equations: row_ids.len(),
                nullity: null.len(),
                smallest_singular_value: svd.singular_values.min(),
            };
            (block, null, unknowns)
        })
        .collect();

    let mut out_blocks = Vec::new();
    let mut null_vectors = Vec::new();
    for (block, null, unknowns) in solved {
        for v in null {
            let mut x = GluedElement::zeros(n_max, k_max);
            for (i, &u) in unknowns.iter().enumerate() {
                let (copy, sign, n) = layout.describe(u / layout.sites);
                let k = u % layout.sites;
                let target = if copy == 0 { &mut x.f } else { &mut x.g };
                match sign {
                    Sign::Plus => target.plus_mut(n)[k] = v[i],
                    Sign::Minus => target.minus_mut(n)[k] = v[i],
                }
            }
            null_vectors.push(x);
        }
        out_blocks.push(block);
    }
    Ok(KernelOracle {
        n_max,
        k_max,
        threshold,
        dimension: null_vectors.len(),
        blocks: out_blocks,
        null_vectors,
    })
}

fn flatten(x: &GluedElement<f64>) -> DVector<f64> {
    let data: Vec<f64> = [&x.f, &x.g]
        .into_iter()
        .flat_map(|c| c.modes().flat_map(|(_, _, v)| v.iter().copied()).collect::<Vec<_>>())
        .collect();
    DVector::from_vec(data)
}

/// `1 − |cos θ|` between two glued elements viewed as flat vectors.
pub fn direction_gap(a: &GluedElement<f64>, b: &GluedElement<f64>) -> f64 {
    let (va, vb) = (flatten(a), flatten(b));
    let denom = va.norm() * vb.norm();
    if denom == 0.0 {
        return 1.0;
    }
    1.0 - (va.dot(&vb) / denom).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport {
    pub formula_dimension: usize,
    pub formula_residual: f64,
    pub formula_in_domain: bool,
    pub oracle_n_max: usize,
    pub oracle_k_max: usize,
    pub oracle_dimension: usize,
    /// `1 − |cos θ|` between the oracle's null vector and the formula basis
    /// at the oracle's truncation.
    pub oracle_direction_gap: Option<f64>,
    /// Nullity of every block other than the mode-0 one (should all be 0).
    pub higher_mode_nullity: usize,
    pub blocks: Vec<BlockNullity>,
    pub pass: bool,
}

/// Formula kernel at the operator's truncation, cross-checked by the dense
/// oracle at `(min(N, oracle_n_max), min(K, oracle_k_max))`.
pub fn kernel_report(op: &GluedDirac, oracle_n_max: usize, oracle_k_max: usize, tol: f64) -> Result<KernelReport> {
    let basis = kernel_d(op)?;
    let formula_residual = basis.iter().map(|b| interior_residual(op, b)).try_fold(0.0_f64, |m, r| r.map(|r| m.max(r)))?;
    let formula_in_domain = basis.iter().map(|b| in_domain(op, b).map(|r| r.pass)).try_fold(true, |acc, r| r.map(|p| acc && p))?;

    let small = TruncationSpec::with_sizes(op.trunc.n_max.min(oracle_n_max), op.trunc.k_max.min(oracle_k_max));
    let small_op = GluedDirac::new(op.family_arc(), TruncationSpec { k_tail: op.trunc.k_tail, ..small })?;
    let oracle = dense_kernel_oracle(op.family(), small.n_max, small.k_max, 1e-10)?;
    let oracle_direction_gap = match (oracle.null_vectors.as_slice(), kernel_d(&small_op)?.first()) {
        ([v], Some(b)) => Some(direction_gap(v, b)),
        _ => None,
    };
    let higher_mode_nullity = oracle
        .blocks
        .iter()
        .filter(|b| !b.label.contains("f0+"))
        .map(|b| b.nullity)
        .sum();
    let pass = basis.len() == 1
        && formula_residual <= tol
        && formula_in_domain
        && oracle.dimension == 1
        && higher_mode_nullity == 0
        && oracle_direction_gap.is_some_and(|g| g <= tol);
    Ok(KernelReport {
        formula_dimension: basis.len(),
        formula_residual,
        formula_in_domain,
        oracle_n_max: small.n_max,
        oracle_k_max: small.k_max,
        oracle_dimension: oracle.dimension,
        oracle_direction_gap,
        higher_mode_nullity,
        blocks: oracle.blocks,
        pass,
    })
}
