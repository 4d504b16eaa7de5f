//! Truncated elements of `H₁` (one disk) and `H = H₁ ⊕ H₁` (the glued sphere).
//!
//! An element of `H₁` is a formal series `Σ_{n≥0} Uⁿ fₙ⁺(K) + Σ_{n≥1} fₙ⁻(K)(U*)ⁿ`;
//! at truncation it is stored as the coefficient sequences `fₙ±(k)` for
//! `n ≤ N_max`, `k ≤ K_max`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::weights::{s_value, Sign, WeightFamily};
use crate::{Error, Result, TruncationSpec};

/// Coefficient field: `f64` or `Complex64`.
pub trait Scalar:
    Copy
    + Default
    + PartialEq
    + Send
    + Sync
    + fmt::Debug
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn zero() -> Self {
        Self::default()
    }
    fn abs(self) -> f64;
    fn from_real(x: f64) -> Self;
    fn to_parts(self) -> (f64, f64);
    /// `None` when `im ≠ 0` for a real field.
    fn from_parts(re: f64, im: f64) -> Option<Self>;
    /// Uniform on `[−1, 1]` (each part, for complex).
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn to_parts(self) -> (f64, f64) {
        (self, 0.0)
    }
    fn from_parts(re: f64, im: f64) -> Option<Self> {
        (im == 0.0).then_some(re)
    }
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random_range(-1.0..=1.0)
    }
}

impl Scalar for Complex64 {
    fn abs(self) -> f64 {
        self.norm()
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn to_parts(self) -> (f64, f64) {
        (self.re, self.im)
    }
    fn from_parts(re: f64, im: f64) -> Option<Self> {
        Some(Complex64::new(re, im))
    }
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Complex64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
    }
}

/// Coefficients `fₙ⁺(k)` (`0 ≤ n ≤ N_max`) and `fₙ⁻(k)` (`1 ≤ n ≤ N_max`).
#[derive(Debug, Clone, PartialEq)]
pub struct FourierElement<S = f64> {
    k_max: usize,
    plus: Vec<Vec<S>>,
    // minus[n - 1] holds fₙ⁻.
    minus: Vec<Vec<S>>,
}

/// One stored coefficient in columnar form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    pub n: usize,
    pub sign: char,
    pub k: usize,
    pub re: f64,
    pub im: f64,
}

impl<S: Scalar> FourierElement<S> {
    pub fn zeros(n_max: usize, k_max: usize) -> Self {
        Self {
            k_max,
            plus: vec![vec![S::zero(); k_max + 1]; n_max + 1],
            minus: vec![vec![S::zero(); k_max + 1]; n_max],
        }
    }

    /// `plus` holds modes `0..=N`, `minus` holds modes `1..=N`.
    pub fn from_modes(plus: Vec<Vec<S>>, minus: Vec<Vec<S>>) -> Result<Self> {
        if plus.is_empty() || minus.len() + 1 != plus.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} plus modes and {} minus modes",
                plus.len(),
                minus.len()
            )));
        }
        let len = plus[0].len();
        if len == 0 || plus.iter().chain(&minus).any(|v| v.len() != len) {
            return Err(Error::ShapeMismatch("mode vectors differ in length".into()));
        }
        Ok(Self {
            k_max: len - 1,
            plus,
            minus,
        })
    }

    pub fn n_max(&self) -> usize {
        self.plus.len() - 1
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_max() == other.n_max() && self.k_max == other.k_max
    }

    pub fn plus(&self, n: usize) -> &[S] {
        &self.plus[n]
    }

    pub fn plus_mut(&mut self, n: usize) -> &mut [S] {
        &mut self.plus[n]
    }

    /// # Panics
    /// If `n == 0`; there is no minus part in mode zero.
    pub fn minus(&self, n: usize) -> &[S] {
        assert!(n >= 1, "minus modes start at n = 1");
        &self.minus[n - 1]
    }

    pub fn minus_mut(&mut self, n: usize) -> &mut [S] {
        assert!(n >= 1, "minus modes start at n = 1");
        &mut self.minus[n - 1]
    }

    /// The stored sequence for `(sign, n)`, if it exists.
    pub fn mode(&self, sign: Sign, n: usize) -> Option<&[S]> {
        match sign {
            Sign::Plus => self.plus.get(n).map(Vec::as_slice),
            Sign::Minus => n.checked_sub(1).and_then(|i| self.minus.get(i)).map(Vec::as_slice),
        }
    }

    /// `(sign, n, sequence)` for every stored mode.
    pub fn modes(&self) -> impl Iterator<Item = (Sign, usize, &[S])> {
        let plus = self.plus.iter().enumerate().map(|(n, v)| (Sign::Plus, n, v.as_slice()));
        let minus = self
            .minus
            .iter()
            .enumerate()
            .map(|(i, v)| (Sign::Minus, i + 1, v.as_slice()));
        plus.chain(minus)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "(N, K) = ({}, {}) vs ({}, {})",
                self.n_max(),
                self.k_max,
                other.n_max(),
                other.k_max
            )))
        }
    }

    fn zip_apply(&mut self, other: &Self, op: impl Fn(&mut S, S)) -> Result<()> {
        self.check_shape(other)?;
        for (mine, theirs) in self.plus.iter_mut().chain(self.minus.iter_mut()).zip(other.plus.iter().chain(&other.minus)) {
            for (a, &b) in mine.iter_mut().zip(theirs) {
                op(a, b);
            }
        }
        Ok(())
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        self.zip_apply(other, |a, b| *a += alpha * b)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.zip_apply(other, |a, b| *a -= b)?;
        Ok(out)
    }

    pub fn scale(&mut self, alpha: S) {
        for v in self.plus.iter_mut().chain(self.minus.iter_mut()) {
            v.iter_mut().for_each(|x| *x = alpha * *x);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.modes()
            .flat_map(|(_, _, v)| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.modes().all(|(_, _, v)| v.iter().all(|x| *x == S::zero()))
    }

    /// Columnar form: one record per stored coefficient, plus modes first.
    pub fn records(&self) -> Vec<CoefficientRecord> {
        self.modes()
            .flat_map(|(sign, n, v)| {
                v.iter().enumerate().map(move |(k, x)| {
                    let (re, im) = x.to_parts();
                    CoefficientRecord {
                        n,
                        sign: sign.symbol(),
                        k,
                        re,
                        im,
                    }
                })
            })
            .collect()
    }

    /// Inverse of [`records`](Self::records); absent coefficients are zero.
    pub fn from_records(
        n_max: usize,
        k_max: usize,
        records: impl IntoIterator<Item = CoefficientRecord>,
    ) -> Result<Self> {
        let mut out = Self::zeros(n_max, k_max);
        for r in records {
            let value = S::from_parts(r.re, r.im)
                .ok_or_else(|| Error::ShapeMismatch(format!("complex value in real element at n={}, k={}", r.n, r.k)))?;
            let slot = match r.sign {
                '+' if r.n <= n_max && r.k <= k_max => &mut out.plus[r.n][r.k],
                '-' if (1..=n_max).contains(&r.n) && r.k <= k_max => &mut out.minus[r.n - 1][r.k],
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "record ({}, {}, {}) outside N={n_max}, K={k_max}",
                        r.n, r.sign, r.k
                    )))
                }
            };
            *slot = value;
        }
        Ok(out)
    }
}

/// A vector of `H = H₁ ⊕ H₁`: one element per disk copy.
#[derive(Debug, Clone, PartialEq)]
pub struct GluedElement<S = f64> {
    pub f: FourierElement<S>,
    pub g: FourierElement<S>,
}

impl<S: Scalar> GluedElement<S> {
    pub fn new(f: FourierElement<S>, g: FourierElement<S>) -> Result<Self> {
        f.check_shape(&g)?;
        Ok(Self { f, g })
    }

    pub fn zeros(n_max: usize, k_max: usize) -> Self {
        Self {
            f: FourierElement::zeros(n_max, k_max),
            g: FourierElement::zeros(n_max, k_max),
        }
    }

    pub fn n_max(&self) -> usize {
        self.f.n_max()
    }

    pub fn k_max(&self) -> usize {
        self.f.k_max()
    }

    pub fn copy(&self, index: usize) -> &FourierElement<S> {
        match index {
            0 => &self.f,
            _ => &self.g,
        }
    }

    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        self.f.axpy(alpha, &other.f)?;
        self.g.axpy(alpha, &other.g)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            f: self.f.difference(&other.f)?,
            g: self.g.difference(&other.g)?,
        })
    }

    pub fn scale(&mut self, alpha: S) {
        self.f.scale(alpha);
        self.g.scale(alpha);
    }

    pub fn max_abs(&self) -> f64 {
        self.f.max_abs().max(self.g.max_abs())
    }

    pub fn swapped(&self) -> Self {
        Self {
            f: self.g.clone(),
            g: self.f.clone(),
        }
    }
}

/// `‖f‖_{H₁} = √(Σ_{n,k} |fₙ±(k)|² / a⁽ⁿ⁾(k))`.
pub fn norm<S: Scalar>(x: &FourierElement<S>, family: &dyn WeightFamily) -> Result<f64> {
    let mut total = 0.0;
    for (_, n, v) in x.modes() {
        for (k, c) in v.iter().enumerate() {
            let w = family.inv_a(n, k);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::IndexMismatch { n, k });
            }
            total += w * c.abs().powi(2);
        }
    }
    Ok(total.sqrt())
}

/// `‖(f, g)‖_H = √(‖f‖² + ‖g‖²)`.
pub fn glued_norm<S: Scalar>(x: &GluedElement<S>, family: &dyn WeightFamily) -> Result<f64> {
    Ok(norm(&x.f, family)?.hypot(norm(&x.g, family)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry<S> {
    pub value: S,
    /// `|f(K) − f(K − Δ)|`.
    pub gap: f64,
    pub converged: bool,
}

/// Estimates of `fₙ±(∞) = lim_k fₙ±(k)` for one disk copy.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace<S = f64> {
    pub lag: usize,
    pub plus: Vec<TraceEntry<S>>,
    /// `minus[n - 1]` is the limit of `fₙ⁻`.
    pub minus: Vec<TraceEntry<S>>,
}

impl<S: Scalar> BoundaryTrace<S> {
    pub fn entry(&self, sign: Sign, n: usize) -> &TraceEntry<S> {
        match sign {
            Sign::Plus => &self.plus[n],
            Sign::Minus => &self.minus[n - 1],
        }
    }

    pub fn all_converged(&self) -> bool {
        self.plus.iter().chain(&self.minus).all(|e| e.converged)
    }
}

/// `f(∞) ≈ f(K_max)`, accepted when `|f(K_max) − f(K_max − Δ)| ≤ tol · max(1, |f(K_max)|)`.
pub fn boundary_trace<S: Scalar>(x: &FourierElement<S>, trunc: &TruncationSpec) -> BoundaryTrace<S> {
    let k = x.k_max();
    let lag = trunc.trace_lag().min(k / 2).max(1);
    let entry = |v: &[S]| {
        let value = v[k];
        let gap = (value - v[k - lag]).abs();
        TraceEntry {
            value,
            gap,
            converged: gap <= trunc.tol_trace * value.abs().max(1.0),
        }
    };
    BoundaryTrace {
        lag,
        plus: x.plus.iter().map(|v| entry(v)).collect(),
        minus: x.minus.iter().map(|v| entry(v)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GluingMismatch {
    pub n: usize,
    /// Which pair of limits was compared, e.g. `"f+ / g-"`.
    pub pair: &'static str,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GluingReport {
    pub pass: bool,
    pub tolerance: f64,
    pub max_residual: f64,
    pub worst: Option<GluingMismatch>,
}

/// The mirror boundary condition: `fₙ⁺(∞) = gₙ⁻(∞)`, `fₙ⁻(∞) = gₙ⁺(∞)` for
/// `n ≥ 1` and `f₀⁺(∞) = g₀⁺(∞)`, each to `tol_trace` absolute.
pub fn check_gluing<S: Scalar>(x: &GluedElement<S>, trunc: &TruncationSpec) -> Result<GluingReport> {
    let traces = [boundary_trace(&x.f, trunc), boundary_trace(&x.g, trunc)];
    for (copy, t) in traces.iter().enumerate() {
        for (sign, n, _) in x.copy(copy).modes() {
            if !t.entry(sign, n).converged {
                return Err(Error::TraceNotConverged {
                    copy,
                    n,
                    sign: sign.symbol(),
                });
            }
        }
    }
    let [tf, tg] = &traces;
    let mut pairs = vec![(0, "f0+ / g0+", (tf.plus[0].value - tg.plus[0].value).abs())];
    for n in 1..=x.n_max() {
        pairs.push((n, "f+ / g-", (tf.plus[n].value - tg.minus[n - 1].value).abs()));
        pairs.push((n, "f- / g+", (tf.minus[n - 1].value - tg.plus[n].value).abs()));
    }
    let worst = pairs
        .into_iter()
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .map(|(n, pair, residual)| GluingMismatch { n, pair, residual });
    let max_residual = worst.map_or(0.0, |w| w.residual);
    Ok(GluingReport {
        pass: max_residual <= trunc.tol_trace,
        tolerance: trunc.tol_trace,
        max_residual,
        worst: worst.filter(|w| w.residual > 0.0),
    })
}

/// Fourier coefficients of a finite matrix `x` on `ℓ²({0..K})`:
/// `xₙ⁺(k) = ⟨e_k, (U*)ⁿ x e_k⟩ = x[k+n, k]` and `xₙ⁻(k) = ⟨e_k, x Uⁿ e_k⟩ = x[k, k+n]`,
/// zero where `k + n > K`.
pub fn series_of_matrix(x: &DMatrix<f64>) -> Result<FourierElement<f64>> {
    let dim = x.nrows();
    if dim == 0 || x.ncols() != dim {
        return Err(Error::ShapeMismatch(format!("{}x{} matrix is not square", x.nrows(), x.ncols())));
    }
    let k_max = dim - 1;
    let n_max = k_max.max(1);
    let mut out = FourierElement::zeros(n_max, k_max);
    for n in 0..=k_max {
        for k in 0..=k_max - n {
            out.plus_mut(n)[k] = x[(k + n, k)];
            if n >= 1 {
                out.minus_mut(n)[k] = x[(k, k + n)];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesContinuityReport {
    /// `‖x_series‖²_{H₁}`.
    pub series_norm_sq: f64,
    pub operator_norm: f64,
    /// `sup_n s(n)` over the modes present.
    pub constant: f64,
    /// `constant · ‖x_series‖ · ‖x‖`.
    pub bound: f64,
    pub holds: bool,
}

/// The continuity estimate `‖x_series‖² ≤ const · ‖x_series‖ · ‖x‖` for a finite matrix.
pub fn series_continuity_check(
    x: &DMatrix<f64>,
    family: &dyn WeightFamily,
    trunc: &TruncationSpec,
) -> Result<SeriesContinuityReport> {
    let series = series_of_matrix(x)?;
    let series_norm = norm(&series, family)?;
    let operator_norm = if x.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        x.clone().singular_values().max()
    };
    let mut constant: f64 = 0.0;
    for n in 0..=series.n_max() {
        constant = constant.max(s_value(family, n, trunc)?.value);
    }
    let series_norm_sq = series_norm * series_norm;
    let bound = constant * series_norm * operator_norm;
    Ok(SeriesContinuityReport {
        series_norm_sq,
        operator_norm,
        constant,
        bound,
        holds: series_norm_sq <= bound * (1.0 + 1e-12),
    })
}
