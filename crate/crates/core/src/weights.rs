//! Weight families `{a⁽ⁿ⁾(k), b⁽ⁿ⁾(k), c±⁽ⁿ⁾(k)}` and their admissibility.
//!
//! A family fixes the weighted spaces `ℓ²_{a⁽ⁿ⁾}` (norm `Σ |f(k)|²/a⁽ⁿ⁾(k)`)
//! and the coefficients of the one-step difference operators. Admissibility
//! asks for three things:
//!
//! * `s(n) = Σ_k 1/a⁽ⁿ⁾(k)` is finite and tends to zero,
//! * `t(n) = Σ_k a⁽ⁿ⁾(k)/b⁽ⁿ⁾(k)²` is bounded in `n`,
//! * every partial product `∏_{k=M}^{N} c±⁽ⁿ⁾(k)` lies in `[κ, 1/κ]`.
//!
//! A finite computation can only sample these conditions; [`validate`]
//! reports what was sampled and where it failed.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, TruncationSpec};

/// Coefficient data of a Dirac-type operator on the quantum disk.
///
/// Only `a`, `b`, `c_plus` and `c_minus` are required. The remaining methods
/// have generic defaults; families with closed forms override them to stay
/// accurate where `a` or `b` alone would overflow.
pub trait WeightFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// The deformation parameter `q`, for families that have one.
    fn deformation(&self) -> Option<f64> {
        None
    }

    fn a(&self, n: usize, k: usize) -> f64;
    fn b(&self, n: usize, k: usize) -> f64;
    fn c_plus(&self, n: usize, k: usize) -> f64;
    fn c_minus(&self, n: usize, k: usize) -> f64;

    fn inv_a(&self, n: usize, k: usize) -> f64 {
        1.0 / self.a(n, k)
    }

    fn inv_b(&self, n: usize, k: usize) -> f64 {
        1.0 / self.b(n, k)
    }

    /// `a⁽ⁿ⁾(k) / b⁽ⁿ⁾(k)²`, the summand of `t(n)`.
    fn a_over_b_sq(&self, n: usize, k: usize) -> f64 {
        let b = self.b(n, k);
        self.a(n, k) / (b * b)
    }

    /// Exact `∏_{i=k}^∞ c₊⁽ⁿ⁾(i)` when known.
    fn closed_tail_plus(&self, _n: usize, _k: usize) -> Option<f64> {
        None
    }

    /// Exact `∏_{j=k}^∞ c₋⁽ⁿ⁾(j)` when known.
    fn closed_tail_minus(&self, _n: usize, _k: usize) -> Option<f64> {
        None
    }

    /// Declared upper bound for `t(n)`, if the family carries one.
    fn t_bound(&self, _n: usize) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn coefficient(self, family: &dyn WeightFamily, n: usize, k: usize) -> f64 {
        match self {
            Sign::Plus => family.c_plus(n, k),
            Sign::Minus => family.c_minus(n, k),
        }
    }

    fn closed_tail(self, family: &dyn WeightFamily, n: usize, k: usize) -> Option<f64> {
        match self {
            Sign::Plus => family.closed_tail_plus(n, k),
            Sign::Minus => family.closed_tail_minus(n, k),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// The q-weight family built from the weighted shift `U_W e_k = w(k) e_{k+1}`
/// with `w²(k) = 1 − q^{k+1}`.
///
/// With `S(k) = w²(k) − w²(k−1) = (1−q)qᵏ`:
///
/// * `c₊⁽ⁿ⁾(k) = w(k)/w(k+n)`
/// * `c₋⁽ⁿ⁾(k) = w(k)w(k+n)/w²(k+n+1)`
/// * `a⁽ⁿ⁾(k) = S(k)^{-1/2} S(k+n)^{-1/2} = 1/((1−q) q^{k+n/2})`
/// * `b⁽ⁿ⁾(k) = a⁽ⁿ⁻¹⁾(k) w(k+n−1)` for `n ≥ 1`.
///
/// At `n = 0` the last formula degenerates (`w(−1) = 0`); we use
/// `b⁽⁰⁾(k) = a⁽⁻¹⁾(k) w(k)` with `a⁽⁻¹⁾` continued from the closed form, which
/// keeps `A⁽⁰⁾` injective and `t(0)` finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QWeight {
    q: f64,
}

impl QWeight {
    pub fn new(q: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::InvalidQ(q));
        }
        Ok(Self { q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `w²(j) = 1 − q^{j+1}`, valid for `j ≥ −1`.
    pub fn w_sq(&self, j: i64) -> f64 {
        1.0 - self.q.powi((j + 1) as i32)
    }

    pub fn w(&self, j: i64) -> f64 {
        self.w_sq(j).sqrt()
    }

    /// `1/a` with the mode index allowed to be `−1`.
    fn inv_a_ext(&self, n: i64, k: usize) -> f64 {
        let q = self.q;
        (1.0 - q) * q.powi(k as i32) * q.powf(n as f64 / 2.0)
    }

    /// Site whose `w` enters `b⁽ⁿ⁾(k)`.
    fn b_site(n: usize, k: usize) -> i64 {
        (k + n.max(1)) as i64 - 1
    }
}

impl WeightFamily for QWeight {
    fn name(&self) -> String {
        format!("q-weight(q={})", self.q)
    }

    fn deformation(&self) -> Option<f64> {
        Some(self.q)
    }

    fn a(&self, n: usize, k: usize) -> f64 {
        1.0 / self.inv_a(n, k)
    }

    fn b(&self, n: usize, k: usize) -> f64 {
        1.0 / self.inv_b(n, k)
    }

    fn c_plus(&self, n: usize, k: usize) -> f64 {
        self.w(k as i64) / self.w((k + n) as i64)
    }

    fn c_minus(&self, n: usize, k: usize) -> f64 {
        self.w(k as i64) * self.w((k + n) as i64) / self.w_sq((k + n + 1) as i64)
    }

    fn inv_a(&self, n: usize, k: usize) -> f64 {
        self.inv_a_ext(n as i64, k)
    }

    fn inv_b(&self, n: usize, k: usize) -> f64 {
        self.inv_a_ext(n as i64 - 1, k) / self.w(Self::b_site(n, k))
    }

    fn a_over_b_sq(&self, n: usize, k: usize) -> f64 {
        let q = self.q;
        (1.0 - q) * q.powi(k as i32) * q.powf(n as f64 / 2.0 - 1.0) / self.w_sq(Self::b_site(n, k))
    }

    // ∏_{i≥k} w(i)/w(i+n) telescopes to w(k)⋯w(k+n−1).
    fn closed_tail_plus(&self, n: usize, k: usize) -> Option<f64> {
        Some((k..k + n).map(|j| self.w(j as i64)).product())
    }

    // ∏_{i≥k} w(i)w(i+n)/w²(i+n+1) telescopes to w(k+n) · w(k)⋯w(k+n).
    fn closed_tail_minus(&self, n: usize, k: usize) -> Option<f64> {
        let run: f64 = (k..=k + n).map(|j| self.w(j as i64)).product();
        Some(self.w((k + n) as i64) * run)
    }

    fn t_bound(&self, n: usize) -> Option<f64> {
        Some(self.q.powf((n as f64 - 2.0) / 2.0) / (1.0 - self.q))
    }
}

/// Separable toy family `a⁽ⁿ⁾(k) = αⁿβᵏ`, `b⁽ⁿ⁾(k) = γⁿδᵏ` with constant `c±`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricFamily {
    pub a_mode: f64,
    pub a_site: f64,
    pub b_mode: f64,
    pub b_site: f64,
    pub c_plus: f64,
    pub c_minus: f64,
}

impl GeometricFamily {
    /// `a ≡ b ≡ c± ≡ 1`; `s(n)` diverges.
    pub fn constant() -> Self {
        Self {
            a_mode: 1.0,
            a_site: 1.0,
            b_mode: 1.0,
            b_site: 1.0,
            c_plus: 1.0,
            c_minus: 1.0,
        }
    }

    /// `a⁽ⁿ⁾(k) = b⁽ⁿ⁾(k) = mⁿ sᵏ` with `c± ≡ 1`.
    pub fn undeformed(mode_ratio: f64, site_ratio: f64) -> Self {
        Self {
            a_mode: mode_ratio,
            a_site: site_ratio,
            b_mode: mode_ratio,
            b_site: site_ratio,
            c_plus: 1.0,
            c_minus: 1.0,
        }
    }

    fn constant_tail(c: f64) -> Option<f64> {
        (c == 1.0).then_some(1.0)
    }
}

impl WeightFamily for GeometricFamily {
    fn name(&self) -> String {
        format!(
            "geometric(a={}^n*{}^k, b={}^n*{}^k, c+={}, c-={})",
            self.a_mode, self.a_site, self.b_mode, self.b_site, self.c_plus, self.c_minus
        )
    }

    fn a(&self, n: usize, k: usize) -> f64 {
        self.a_mode.powi(n as i32) * self.a_site.powi(k as i32)
    }

    fn b(&self, n: usize, k: usize) -> f64 {
        self.b_mode.powi(n as i32) * self.b_site.powi(k as i32)
    }

    fn inv_a(&self, n: usize, k: usize) -> f64 {
        self.a_mode.recip().powi(n as i32) * self.a_site.recip().powi(k as i32)
    }

    fn inv_b(&self, n: usize, k: usize) -> f64 {
        self.b_mode.recip().powi(n as i32) * self.b_site.recip().powi(k as i32)
    }

    fn a_over_b_sq(&self, n: usize, k: usize) -> f64 {
        (self.a_mode / (self.b_mode * self.b_mode)).powi(n as i32)
            * (self.a_site / (self.b_site * self.b_site)).powi(k as i32)
    }

    fn c_plus(&self, _n: usize, _k: usize) -> f64 {
        self.c_plus
    }

    fn c_minus(&self, _n: usize, _k: usize) -> f64 {
        self.c_minus
    }

    fn closed_tail_plus(&self, _n: usize, _k: usize) -> Option<f64> {
        Self::constant_tail(self.c_plus)
    }

    fn closed_tail_minus(&self, _n: usize, _k: usize) -> Option<f64> {
        Self::constant_tail(self.c_minus)
    }
}

/// A truncated infinite sum with a geometric estimate of the neglected tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSum {
    pub n: usize,
    pub value: f64,
    pub tail_estimate: f64,
}

fn stabilized_sum(
    which: &'static str,
    n: usize,
    horizon: usize,
    tol: f64,
    term: impl Fn(usize) -> f64,
) -> Result<TailSum> {
    const OVERFLOW_GUARD: f64 = 1e300;
    let mut value = 0.0;
    let mut prev = f64::NAN;
    let mut last = f64::NAN;
    for k in 0..=horizon {
        let t = term(k);
        if t.is_nan() {
            return Err(Error::IndexMismatch { n, k });
        }
        if t < 0.0 {
            return Err(Error::NonPositiveWeight {
                which,
                n,
                k,
                value: t,
            });
        }
        value += t;
        if value > OVERFLOW_GUARD {
            return Err(Error::DivergentSum {
                which,
                n,
                partial: value,
                terms: k + 1,
            });
        }
        prev = last;
        last = t;
    }
    let tail_estimate = if last == 0.0 {
        0.0
    } else {
        let ratio = last / prev;
        if ratio < 1.0 {
            last * ratio / (1.0 - ratio)
        } else {
            f64::INFINITY
        }
    };
    if !(tail_estimate <= tol * value) {
        return Err(Error::DivergentSum {
            which,
            n,
            partial: value,
            terms: horizon + 1,
        });
    }
    Ok(TailSum {
        n,
        value,
        tail_estimate,
    })
}

fn check_positive(which: &'static str, n: usize, k: usize, value: f64) -> Result<()> {
    if value.is_nan() {
        Err(Error::IndexMismatch { n, k })
    } else if value <= 0.0 {
        Err(Error::NonPositiveWeight { which, n, k, value })
    } else {
        Ok(())
    }
}

/// `s(n) = Σ_k 1/a⁽ⁿ⁾(k)` summed to the tail horizon.
pub fn s_value(family: &dyn WeightFamily, n: usize, trunc: &TruncationSpec) -> Result<TailSum> {
    for k in 0..=trunc.k_max {
        check_positive("a", n, k, family.a(n, k))?;
    }
    stabilized_sum("s", n, trunc.k_tail, trunc.tol_tail, |k| family.inv_a(n, k))
}

/// `t(n) = Σ_k a⁽ⁿ⁾(k)/b⁽ⁿ⁾(k)²` summed to the tail horizon.
pub fn t_value(family: &dyn WeightFamily, n: usize, trunc: &TruncationSpec) -> Result<TailSum> {
    for k in 0..=trunc.k_max {
        check_positive("b", n, k, family.b(n, k))?;
    }
    stabilized_sum("t", n, trunc.k_tail, trunc.tol_tail, |k| family.a_over_b_sq(n, k))
}

/// `∏_{i=k}^{horizon} c±⁽ⁿ⁾(i)`, accepted only if the last factor moved the
/// product by less than `tol` relative.
pub fn truncated_tail_product(
    family: &dyn WeightFamily,
    sign: Sign,
    n: usize,
    k: usize,
    horizon: usize,
    tol: f64,
) -> Result<f64> {
    let end = horizon.max(k + 1);
    let mut product = 1.0;
    let mut before_last = 1.0;
    for i in k..=end {
        before_last = product;
        product *= sign.coefficient(family, n, i);
    }
    let delta = (product - before_last).abs();
    if !(delta <= tol * product.abs()) {
        return Err(Error::TailNotConverged { n, k, delta });
    }
    Ok(product)
}

/// `∏_{i=k}^∞ c±⁽ⁿ⁾(i)`: the closed form when the family has one, otherwise
/// the truncated product at the tail horizon.
pub fn tail_product(
    family: &dyn WeightFamily,
    sign: Sign,
    n: usize,
    k: usize,
    trunc: &TruncationSpec,
) -> Result<f64> {
    match sign.closed_tail(family, n, k) {
        Some(v) => Ok(v),
        None => truncated_tail_product(family, sign, n, k, trunc.k_tail, trunc.tol_tail),
    }
}

/// `k ↦ ∏_{i=k}^∞ c±⁽ⁿ⁾(i)` for `k ∈ [0, k_max]`.
///
/// Only the value at `k_max` comes from [`tail_product`]; the rest follow from
/// `τ(k) = c(k) τ(k+1)`, so the profile satisfies the recursion of the
/// difference operators to rounding.
pub fn tail_profile(
    family: &dyn WeightFamily,
    sign: Sign,
    n: usize,
    k_max: usize,
    trunc: &TruncationSpec,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; k_max + 1];
    out[k_max] = tail_product(family, sign, n, k_max, trunc)?;
    for k in (0..k_max).rev() {
        out[k] = sign.coefficient(family, n, k) * out[k + 1];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: &'static str,
    pub pass: bool,
    pub witness: Option<String>,
}

/// Where the extreme partial product behind κ was found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaWitness {
    pub sign: Sign,
    pub n: usize,
    pub from: usize,
    pub to: usize,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub family: String,
    pub s: Vec<TailSum>,
    pub t: Vec<TailSum>,
    pub t_bounds: Vec<Option<f64>>,
    /// Largest κ ∈ (0, 1] consistent with every sampled partial product.
    pub kappa: f64,
    pub kappa_witness: Option<KappaWitness>,
    /// Worst relative gap between closed-form and truncated tail products.
    pub closed_tail_gap: Option<f64>,
    pub conditions: Vec<Condition>,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn s_of(&self, n: usize) -> Option<f64> {
        self.s.iter().find(|e| e.n == n).map(|e| e.value)
    }

    pub fn t_of(&self, n: usize) -> Option<f64> {
        self.t.iter().find(|e| e.n == n).map(|e| e.value)
    }
}

struct ProductScan {
    min: (f64, usize, usize),
    max: (f64, usize, usize),
    nonpositive: Option<usize>,
}

/// Extremes of `∏_{k=M}^{N} c(k)` over `0 ≤ M ≤ N ≤ k_max`, via log prefix sums.
fn scan_partial_products(c: impl Fn(usize) -> f64, k_max: usize) -> ProductScan {
    let mut prefix = 0.0_f64;
    let mut lo_prefix = (0.0_f64, 0_usize);
    let mut hi_prefix = (0.0_f64, 0_usize);
    let mut scan = ProductScan {
        min: (f64::INFINITY, 0, 0),
        max: (f64::NEG_INFINITY, 0, 0),
        nonpositive: None,
    };
    for k in 0..=k_max {
        let ck = c(k);
        if !(ck > 0.0) {
            scan.nonpositive = Some(k);
            return scan;
        }
        prefix += ck.ln();
        let smallest = prefix - hi_prefix.0;
        if smallest < scan.min.0 {
            scan.min = (smallest, hi_prefix.1, k);
        }
        let largest = prefix - lo_prefix.0;
        if largest > scan.max.0 {
            scan.max = (largest, lo_prefix.1, k);
        }
        if prefix > hi_prefix.0 {
            hi_prefix = (prefix, k + 1);
        }
        if prefix < lo_prefix.0 {
            lo_prefix = (prefix, k + 1);
        }
    }
    scan
}

/// Sample the admissibility conditions over `n ∈ [0, n_max]`, `k ∈ [0, k_max]`.
///
/// Hard failures (a non-positive weight, a sum that never stabilizes) are
/// returned as errors; soft failures show up as failing conditions.
pub fn validate(family: &dyn WeightFamily, trunc: &TruncationSpec) -> Result<AdmissibilityReport> {
    trunc.check()?;
    let modes: Vec<usize> = (0..=trunc.n_max).collect();

    let s = modes
        .par_iter()
        .map(|&n| s_value(family, n, trunc))
        .collect::<Result<Vec<_>>>()?;
    let t = modes
        .par_iter()
        .map(|&n| t_value(family, n, trunc))
        .collect::<Result<Vec<_>>>()?;
    let t_bounds: Vec<Option<f64>> = modes.iter().map(|&n| family.t_bound(n)).collect();

    let mut conditions = Vec::new();

    let s_bad = s
        .windows(2)
        .find(|w| w[1].value > w[0].value * (1.0 + 1e-12))
        .map(|w| format!("s({}) = {} exceeds s({}) = {}", w[1].n, w[1].value, w[0].n, w[0].value));
    conditions.push(Condition {
        name: "s_finite_and_decreasing",
        pass: s_bad.is_none(),
        witness: s_bad,
    });

    let t_bad = t.iter().zip(&t_bounds).find_map(|(entry, bound)| match bound {
        Some(b) if entry.value > b * (1.0 + trunc.tol_identity) => {
            Some(format!("t({}) = {} exceeds declared bound {}", entry.n, entry.value, b))
        }
        _ => None,
    });
    conditions.push(Condition {
        name: "t_bounded",
        pass: t_bad.is_none(),
        witness: t_bad,
    });

    let mut kappa = 1.0_f64;
    let mut kappa_witness = None;
    let mut kappa_bad = None;
    for sign in [Sign::Plus, Sign::Minus] {
        for &n in &modes {
            let scan = scan_partial_products(|k| sign.coefficient(family, n, k), trunc.k_max);
            if let Some(k) = scan.nonpositive {
                kappa_bad.get_or_insert(format!(
                    "c{}({n})({k}) = {} is not positive",
                    sign.symbol(),
                    sign.coefficient(family, n, k)
                ));
                continue;
            }
            let lower = scan.min.0.exp();
            if lower < kappa {
                kappa = lower;
                kappa_witness = Some(KappaWitness {
                    sign,
                    n,
                    from: scan.min.1,
                    to: scan.min.2,
                    product: lower,
                });
            }
            let upper = scan.max.0.exp();
            if 1.0 / upper < kappa {
                kappa = 1.0 / upper;
                kappa_witness = Some(KappaWitness {
                    sign,
                    n,
                    from: scan.max.1,
                    to: scan.max.2,
                    product: upper,
                });
            }
        }
    }
    if kappa_bad.is_some() {
        kappa = 0.0;
    }
    conditions.push(Condition {
        name: "kappa_positive",
        pass: kappa_bad.is_none() && kappa > 0.0,
        witness: kappa_bad,
    });

    let mut gap: Option<f64> = None;
    let mut gap_bad = None;
    for sign in [Sign::Plus, Sign::Minus] {
        for &n in &modes {
            for k in [0, trunc.k_max / 2, trunc.k_max] {
                let Some(closed) = sign.closed_tail(family, n, k) else {
                    continue;
                };
                let truncated = truncated_tail_product(family, sign, n, k, trunc.k_tail, trunc.tol_tail)?;
                let rel = (closed - truncated).abs() / closed.abs().max(f64::MIN_POSITIVE);
                gap = Some(gap.map_or(rel, |g: f64| g.max(rel)));
                if rel > trunc.tol_tail && gap_bad.is_none() {
                    gap_bad = Some(format!(
                        "closed tail c{}({n}) from {k}: {closed} vs truncated {truncated}",
                        sign.symbol()
                    ));
                }
            }
        }
    }
    conditions.push(Condition {
        name: "closed_tails_consistent",
        pass: gap_bad.is_none(),
        witness: gap_bad,
    });

    Ok(AdmissibilityReport {
        family: family.name(),
        s,
        t,
        t_bounds,
        kappa: kappa.clamp(0.0, 1.0),
        kappa_witness,
        closed_tail_gap: gap,
        conditions,
    })
}
