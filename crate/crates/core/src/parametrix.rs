//! The integral operators
//!
//! * `T₁⁽ⁿ⁾f(k) = (∏_{i≥k} c₊⁽ⁿ⁾(i)) Σ_i (1/b⁽ⁿ⁻¹⁾(i)) (∏_{j≥i} c₋⁽ⁿ⁻¹⁾(j)) f(i)`
//! * `T₂⁽ⁿ⁾f(k) = −Σ_{i≥k} (1/b⁽ⁿ⁺¹⁾(i)) (∏_{j=k}^{i−1} c₊⁽ⁿ⁾(j)) f(i)`
//! * `T₃⁽ⁿ⁾f(k) = Σ_{i≤k} (1/b⁽ⁿ⁻¹⁾(i)) (∏_{j=i}^{k−1} c₋⁽ⁿ⁻¹⁾(j)) f(i)`
//!
//! with `T₁⁽ⁿ⁾, T₃⁽ⁿ⁾: ℓ²_{a⁽ⁿ⁻¹⁾} → ℓ²_{a⁽ⁿ⁾}` and `T₂⁽ⁿ⁾: ℓ²_{a⁽ⁿ⁺¹⁾} → ℓ²_{a⁽ⁿ⁾}`,
//! the right inverse `Q` assembled from them, and the rank-one `C` with
//! `QD = I − C`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dirac::{in_domain, kernel_d, GluedDirac};
use crate::hilbert::{FourierElement, GluedElement, Scalar};
use crate::jacobi::{solve_a, upper_sum, ModeOperator, OperatorKind};
use crate::weights::{s_value, t_value, tail_profile, Sign, WeightFamily};
use crate::{Error, Result, TruncationSpec};

/// Gate for `QD = I − C`.
pub const QD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Which {
    T1,
    T2,
    T3,
}

impl Which {
    pub const ALL: [Which; 3] = [Which::T1, Which::T2, Which::T3];

    pub fn label(self) -> &'static str {
        match self {
            Which::T1 => "T1",
            Which::T2 => "T2",
            Which::T3 => "T3",
        }
    }

    /// `(domain, codomain)` weight modes of `Tᵢ⁽ⁿ⁾`.
    pub fn weights(self, n: usize) -> (usize, usize) {
        match self {
            Which::T1 | Which::T3 => (n - 1, n),
            Which::T2 => (n + 1, n),
        }
    }

    fn kind(self) -> OperatorKind {
        match self {
            Which::T1 => OperatorKind::T1,
            Which::T2 => OperatorKind::T2,
            Which::T3 => OperatorKind::T3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParametrixSet {
    family: Arc<dyn WeightFamily>,
    trunc: TruncationSpec,
    // tail_plus[n](k) = ∏_{i≥k} c₊⁽ⁿ⁾(i), n ∈ [0, N].
    tail_plus: Vec<Vec<f64>>,
    // t1_row[n](i) = (1/b⁽ⁿ⁻¹⁾(i)) ∏_{j≥i} c₋⁽ⁿ⁻¹⁾(j), n ∈ [1, N]; index 0 unused.
    t1_row: Vec<Vec<f64>>,
}

impl ParametrixSet {
    pub fn new(family: Arc<dyn WeightFamily>, trunc: TruncationSpec) -> Result<Self> {
        trunc.check()?;
        let (n_max, k_max) = (trunc.n_max, trunc.k_max);
        let fam = family.as_ref();
        let tail_plus = (0..=n_max)
            .into_par_iter()
            .map(|n| tail_profile(fam, Sign::Plus, n, k_max, &trunc))
            .collect::<Result<Vec<_>>>()?;
        let t1_row = (0..=n_max)
            .into_par_iter()
            .map(|n| {
                if n == 0 {
                    return Ok(Vec::new());
                }
                let tail = tail_profile(fam, Sign::Minus, n - 1, k_max, &trunc)?;
                tail.iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let v = fam.inv_b(n - 1, i) * t;
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(Error::WeightOverflow { which: "b", n: n - 1, k: i })
                        }
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            family,
            trunc,
            tail_plus,
            t1_row,
        })
    }

    pub fn family(&self) -> &dyn WeightFamily {
        self.family.as_ref()
    }

    pub fn trunc(&self) -> &TruncationSpec {
        &self.trunc
    }

    /// `τ(k) = ∏_{i≥k} c₊⁽⁰⁾(i)`, the profile of the kernel and of `C`.
    pub fn kernel_profile(&self) -> &[f64] {
        &self.tail_plus[0]
    }

    fn check_mode(&self, which: Which, n: usize) -> Result<()> {
        let ok = match which {
            Which::T1 | Which::T3 => (1..=self.trunc.n_max).contains(&n),
            Which::T2 => n <= self.trunc.n_max,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("{}({n}) outside N_max = {}", which.label(), self.trunc.n_max)))
        }
    }

    pub fn apply_t<S: Scalar>(&self, which: Which, n: usize, f: &[S]) -> Result<Vec<S>> {
        self.check_mode(which, n)?;
        if f.len() != self.trunc.k_max + 1 {
            return Err(Error::ShapeMismatch(format!("vector of length {}", f.len())));
        }
        let fam = self.family();
        Ok(match which {
            Which::T1 => {
                let mut acc = S::zero();
                for (x, w) in f.iter().zip(&self.t1_row[n]) {
                    acc += *x * *w;
                }
                self.tail_plus[n].iter().map(|t| acc * *t).collect()
            }
            Which::T2 => upper_sum(fam, n, f).into_iter().map(|v| -v).collect(),
            Which::T3 => solve_a(fam, n - 1, f),
        })
    }

    /// Dense matrix of `Tᵢ⁽ⁿ⁾` on `k, i ∈ [0, K_max]`.
    pub fn matrix(&self, which: Which, n: usize) -> Result<ModeOperator> {
        self.check_mode(which, n)?;
        let d = self.trunc.k_max + 1;
        let fam = self.family();
        let mut m = DMatrix::zeros(d, d);
        match which {
            Which::T1 => {
                for k in 0..d {
                    for i in 0..d {
                        m[(k, i)] = self.tail_plus[n][k] * self.t1_row[n][i];
                    }
                }
            }
            Which::T2 => {
                for k in 0..d {
                    let mut product = 1.0;
                    for i in k..d {
                        m[(k, i)] = -fam.inv_b(n + 1, i) * product;
                        product *= fam.c_plus(n, i);
                    }
                }
            }
            Which::T3 => {
                for i in 0..d {
                    let mut product = 1.0;
                    for k in i..d {
                        m[(k, i)] = fam.inv_b(n - 1, i) * product;
                        product *= fam.c_minus(n - 1, k);
                    }
                }
            }
        }
        let (dom, cod) = which.weights(n);
        Ok(ModeOperator::dense(n, which.kind(), m, dom, cod))
    }

    /// `‖Tᵢ⁽ⁿ⁾‖²_HS = Σ_k (1/a_cod(k)) Σ_i (a_dom(i)/b_dom(i)²) · (∏ c)²`,
    /// summed over the stored sites.
    pub fn hs_norm_sq(&self, which: Which, n: usize) -> Result<f64> {
        self.check_mode(which, n)?;
        let d = self.trunc.k_max + 1;
        let fam = self.family();
        let (dom, cod) = which.weights(n);
        let mut total = 0.0;
        match which {
            Which::T1 => {
                let tail_minus = tail_profile(fam, Sign::Minus, n - 1, self.trunc.k_max, &self.trunc)?;
                for k in 0..d {
                    let left = fam.inv_a(cod, k) * self.tail_plus[n][k].powi(2);
                    for (i, t) in tail_minus.iter().enumerate() {
                        total += left * fam.a_over_b_sq(dom, i) * t * t;
                    }
                }
            }
            Which::T2 => {
                for k in 0..d {
                    let mut product = 1.0_f64;
                    let mut row = 0.0;
                    for i in k..d {
                        row += fam.a_over_b_sq(dom, i) * product * product;
                        product *= fam.c_plus(n, i);
                    }
                    total += fam.inv_a(cod, k) * row;
                }
            }
            Which::T3 => {
                for k in 0..d {
                    let mut product = 1.0_f64;
                    let mut row = 0.0;
                    for i in (0..=k).rev() {
                        row += fam.a_over_b_sq(dom, i) * product * product;
                        if i > 0 {
                            product *= fam.c_minus(n - 1, i - 1);
                        }
                    }
                    total += fam.inv_a(cod, k) * row;
                }
            }
        }
        Ok(total)
    }
}

/// `Q(p, q) = (x, y)` with
/// `x₀⁺ = T₂⁽⁰⁾p₁⁺`, `xₙ⁺ = T₂⁽ⁿ⁾p_{n+1}⁺ + T₁⁽ⁿ⁾q_{n−1}⁻`, `xₙ⁻ = T₃⁽ⁿ⁾p_{n−1}⁻`,
/// where the mode-0 minus slots `p₀⁻`, `q₀⁻` are read as `p₀⁺`, `q₀⁺`;
/// `y` is the same with `p` and `q` exchanged.
pub fn apply_q<S: Scalar>(pset: &ParametrixSet, rhs: &GluedElement<S>) -> Result<GluedElement<S>> {
    let (n_max, k_max) = (pset.trunc.n_max, pset.trunc.k_max);
    if rhs.n_max() != n_max || rhs.k_max() != k_max {
        return Err(Error::ShapeMismatch(format!(
            "rhs has (N, K) = ({}, {}), parametrix expects ({n_max}, {k_max})",
            rhs.n_max(),
            rhs.k_max()
        )));
    }
    fn lower_minus<S: Scalar>(e: &FourierElement<S>, m: usize) -> &[S] {
        if m == 0 {
            e.plus(0)
        } else {
            e.minus(m)
        }
    }
    let half = |p: &FourierElement<S>, q: &FourierElement<S>| -> Result<FourierElement<S>> {
        let mut x = FourierElement::zeros(n_max, k_max);
        for n in 0..=n_max {
            let mut plus = if n < n_max {
                pset.apply_t(Which::T2, n, p.plus(n + 1))?
            } else {
                vec![S::zero(); k_max + 1]
            };
            if n >= 1 {
                let t1 = pset.apply_t(Which::T1, n, lower_minus(q, n - 1))?;
                plus.iter_mut().zip(t1).for_each(|(a, b)| *a += b);
                let t3 = pset.apply_t(Which::T3, n, lower_minus(p, n - 1))?;
                x.minus_mut(n).copy_from_slice(&t3);
            }
            x.plus_mut(n).copy_from_slice(&plus);
        }
        Ok(x)
    };
    GluedElement::new(half(&rhs.f, &rhs.g)?, half(&rhs.g, &rhs.f)?)
}

/// `C(x, y) = (τ x₀⁺(∞), τ x₀⁺(∞))` in the mode-0 plus slot of both copies,
/// with `τ(k) = ∏_{i≥k} c₊⁽⁰⁾(i)` and `x₀⁺(∞)` read as `x₀⁺(K)/τ(K)`.
pub fn apply_c<S: Scalar>(pset: &ParametrixSet, x: &GluedElement<S>) -> GluedElement<S> {
    let (n_max, k_max) = (x.n_max(), x.k_max());
    let tau = pset.kernel_profile();
    let limit = x.f.plus(0)[k_max] * (1.0 / tau[k_max]);
    let mut f = FourierElement::zeros(n_max, k_max);
    for (slot, t) in f.plus_mut(0).iter_mut().zip(tau) {
        *slot = limit * *t;
    }
    GluedElement { f: f.clone(), g: f }
}

/// Random right-hand side: uniform `[−1, 1]` coefficients in modes `≤ N−1`,
/// sites `≤ K − margin`, zero elsewhere.
pub fn random_rhs<S: Scalar, R: Rng + ?Sized>(trunc: &TruncationSpec, rng: &mut R) -> GluedElement<S> {
    let (n_max, k_max) = (trunc.n_max, trunc.k_max);
    let support = trunc.support_limit();
    let mut out = GluedElement::zeros(n_max, k_max);
    for copy in [&mut out.f, &mut out.g] {
        for n in 0..n_max {
            copy.plus_mut(n)[..=support].iter_mut().for_each(|v| *v = S::sample(rng));
            if n >= 1 {
                copy.minus_mut(n)[..=support].iter_mut().for_each(|v| *v = S::sample(rng));
            }
        }
    }
    out
}

/// The generator used for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleResidual {
    pub index: u64,
    /// Componentwise backward error of `D Q p − p` over interior rows.
    pub dq: f64,
    /// `max |D Q p − p| / max |p|` over interior rows, not gated.
    pub dq_plain: f64,
    /// `max |Q D z − (z − C z)| / max |z|`.
    pub qd: f64,
    pub gluing: f64,
    pub leakage: f64,
    pub in_domain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub samples: usize,
    pub seed: u64,
    pub dq_max: f64,
    pub dq_plain_max: f64,
    pub qd_max: f64,
    pub gluing_max: f64,
    pub leakage_max: f64,
    pub dq_tolerance: f64,
    pub qd_tolerance: f64,
    pub dq_pass: bool,
    pub qd_pass: bool,
    pub domain_pass: bool,
    pub per_sample: Vec<SampleResidual>,
}

impl IdentityReport {
    pub fn pass(&self) -> bool {
        self.dq_pass && self.qd_pass && self.domain_pass
    }
}

/// Rows of `δ`'s output that a finite section cannot reproduce: row `K` of
/// every plus mode `m ≥ 1` (Ā's missing `f(K+1)` term).
fn is_boundary_row(sign: Sign, n: usize, k: usize, k_max: usize) -> bool {
    sign == Sign::Plus && n >= 1 && k == k_max
}

fn dq_residuals(op: &GluedDirac, x: &GluedElement<f64>, rhs: &GluedElement<f64>) -> Result<(f64, f64, f64)> {
    let k_max = op.trunc().k_max;
    let (mut componentwise, mut plain, mut leakage) = (0.0_f64, 0.0_f64, 0.0_f64);
    let scale = rhs.max_abs().max(f64::MIN_POSITIVE);
    for (copy, target) in [(&x.f, &rhs.f), (&x.g, &rhs.g)] {
        let out = op.apply_delta_detailed(copy)?;
        leakage = leakage.max(out.leakage);
        for (sign, n, v) in out.value.modes() {
            let mags = out.magnitudes.mode(sign, n).expect("same shape");
            let want = target.mode(sign, n).expect("same shape");
            for k in 0..=k_max {
                if is_boundary_row(sign, n, k, k_max) {
                    continue;
                }
                let err = (v[k] - want[k]).abs();
                let denom = mags[k] + want[k].abs();
                if denom > 0.0 {
                    componentwise = componentwise.max(err / denom);
                }
                plain = plain.max(err / scale);
            }
        }
    }
    Ok((componentwise, plain, leakage))
}

/// `Q D z − (z − C z)` relative to `max |z|`, with `Ā`'s boundary rows of
/// `D z` zeroed before `Q` is applied.
pub fn qd_residual(pset: &ParametrixSet, op: &GluedDirac, z: &GluedElement<f64>) -> Result<f64> {
    let k_max = op.trunc().k_max;
    let mut dz = op.apply_d(z)?;
    for copy in [&mut dz.f, &mut dz.g] {
        for n in 1..=copy.n_max() {
            copy.plus_mut(n)[k_max] = 0.0;
        }
    }
    let qdz = apply_q(pset, &dz)?;
    let mut target = z.clone();
    target.axpy(-1.0, &apply_c(pset, z))?;
    Ok(qdz.difference(&target)?.max_abs() / z.max_abs().max(f64::MIN_POSITIVE))
}

/// `DQ = I` on random right-hand sides and `QD = I − C` on `Q p + α·kernel`,
/// one deterministic generator per sample.
pub fn verify_identities(pset: &ParametrixSet, op: &GluedDirac, samples: usize, seed: u64) -> Result<IdentityReport> {
    if samples == 0 {
        return Err(Error::InvalidTruncation("at least one sample is required".into()));
    }
    let trunc = *op.trunc();
    let kernel = kernel_d(op)?.remove(0);
    let per_sample = (0..samples as u64)
        .into_par_iter()
        .map(|index| -> Result<SampleResidual> {
            let mut rng = sample_rng(seed, index);
            let rhs: GluedElement<f64> = random_rhs(&trunc, &mut rng);
            let x = apply_q(pset, &rhs)?;
            let (dq, dq_plain, leakage) = dq_residuals(op, &x, &rhs)?;
            let domain = in_domain(op, &x)?;
            let alpha: f64 = f64::sample(&mut rng);
            let mut z = x;
            z.axpy(alpha, &kernel)?;
            let qd = qd_residual(pset, op, &z)?;
            Ok(SampleResidual {
                index,
                dq,
                dq_plain,
                qd,
                gluing: domain.gluing.map_or(f64::INFINITY, |g| g.max_residual),
                leakage,
                in_domain: domain.pass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max = |f: fn(&SampleResidual) -> f64| per_sample.iter().map(f).fold(0.0, f64::max);
    let dq_max = max(|s| s.dq);
    let qd_max = max(|s| s.qd);
    Ok(IdentityReport {
        samples,
        seed,
        dq_max,
        dq_plain_max: max(|s| s.dq_plain),
        qd_max,
        gluing_max: max(|s| s.gluing),
        leakage_max: max(|s| s.leakage),
        dq_tolerance: trunc.tol_identity,
        qd_tolerance: QD_TOLERANCE,
        dq_pass: dq_max <= trunc.tol_identity,
        qd_pass: qd_max <= QD_TOLERANCE,
        domain_pass: per_sample.iter().all(|s| s.in_domain),
        per_sample,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HsRow {
    pub n: usize,
    pub which: Which,
    pub hs: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsTable {
    pub kappa: f64,
    pub rows: Vec<HsRow>,
    /// `‖T₃⁽ⁿ⁾‖_HS` is nonincreasing over the tabulated `n`.
    pub t3_nonincreasing: bool,
    pub pass: bool,
}

impl HsTable {
    pub fn get(&self, which: Which, n: usize) -> Option<&HsRow> {
        self.rows.iter().find(|r| r.which == which && r.n == n)
    }
}

/// HS norms of `T₁⁽ⁿ⁾, T₂⁽ⁿ⁾, T₃⁽ⁿ⁾` for `n ∈ [1, N]` against
/// `√(s(n)t(n−1))/κ²`, `√(s(n)t(n+1))/κ` and `√(s(n)t(n−1))/κ`.
pub fn hs_norms(pset: &ParametrixSet, kappa: f64) -> Result<HsTable> {
    let trunc = pset.trunc;
    let fam = pset.family();
    let rows = (1..=trunc.n_max)
        .into_par_iter()
        .map(|n| -> Result<Vec<HsRow>> {
            let s = s_value(fam, n, &trunc)?.value;
            let t_below = t_value(fam, n - 1, &trunc)?.value;
            let t_above = t_value(fam, n + 1, &trunc)?.value;
            Which::ALL
                .iter()
                .map(|&which| {
                    let hs = pset.hs_norm_sq(which, n)?.sqrt();
                    let bound = match which {
                        Which::T1 => (s * t_below).sqrt() / (kappa * kappa),
                        Which::T2 => (s * t_above).sqrt() / kappa,
                        Which::T3 => (s * t_below).sqrt() / kappa,
                    };
                    Ok(HsRow {
                        n,
                        which,
                        hs,
                        bound,
                        pass: hs <= bound,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let t3: Vec<f64> = rows.iter().filter(|r| r.which == Which::T3).map(|r| r.hs).collect();
    let t3_nonincreasing = t3.windows(2).all(|w| w[1] <= w[0]);
    let pass = t3_nonincreasing && rows.iter().all(|r| r.pass);
    Ok(HsTable {
        kappa,
        rows,
        t3_nonincreasing,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::validate;
    use crate::{GeometricFamily, QWeight};
    use proptest::prelude::*;

    fn setup(q: f64, n_max: usize, k_max: usize) -> (ParametrixSet, GluedDirac) {
        let fam: Arc<dyn WeightFamily> = Arc::new(QWeight::new(q).unwrap());
        let t = TruncationSpec::with_sizes(n_max, k_max);
        (
            ParametrixSet::new(Arc::clone(&fam), t).unwrap(),
            GluedDirac::new(fam, t).unwrap(),
        )
    }

    #[test]
    fn triangular_cutoffs() {
        let (pset, _) = setup(0.5, 3, 12);
        for n in 1..=3 {
            let t2 = pset.matrix(Which::T2, n).unwrap();
            let t3 = pset.matrix(Which::T3, n).unwrap();
            for k in 0..13 {
                for i in 0..13 {
                    if i < k {
                        assert_eq!(t2.entry(k, i), 0.0);
                    }
                    if i > k {
                        assert_eq!(t3.entry(k, i), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn t1_is_rank_one() {
        let (pset, _) = setup(0.25, 2, 20);
        let m = pset.matrix(Which::T1, 1).unwrap().to_dense();
        let sv = m.singular_values();
        let top = sv.max();
        assert_eq!(sv.iter().filter(|s| **s > 1e-12 * top).count(), 1);
    }

    #[test]
    fn t1_hs_is_product_of_profile_norms() {
        let (pset, _) = setup(0.25, 2, 40);
        let fam = pset.family();
        let t = pset.trunc;
        let left: f64 = (0..=40).map(|k| fam.inv_a(1, k) * pset.tail_plus[1][k].powi(2)).sum();
        let tail = tail_profile(fam, Sign::Minus, 0, 40, &t).unwrap();
        let right: f64 = (0..=40).map(|i| fam.a_over_b_sq(0, i) * tail[i].powi(2)).sum();
        let hs = pset.hs_norm_sq(Which::T1, 1).unwrap();
        assert!((hs / (left * right) - 1.0).abs() < 1e-12);
        let entrywise = pset.matrix(Which::T1, 1).unwrap().weighted_hs_sq(fam);
        assert!((hs / entrywise - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_family_t3_is_partial_sum() {
        let fam: Arc<dyn WeightFamily> = Arc::new(GeometricFamily::undeformed(1.0, 1.0));
        let pset = ParametrixSet::new(fam, TruncationSpec::with_sizes(3, 9)).unwrap();
        let f: Vec<f64> = (0..10).map(|k| k as f64 + 1.0).collect();
        let out = pset.apply_t(Which::T3, 2, &f).unwrap();
        let mut acc = 0.0;
        for k in 0..10 {
            acc += f[k];
            assert_eq!(out[k], acc);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let (pset, _) = setup(0.5, 3, 16);
        for which in Which::ALL {
            assert!(pset.apply_t(which, 1, &[0.0; 17]).unwrap().iter().all(|v| *v == 0.0));
        }
        assert!(apply_q(&pset, &GluedElement::<f64>::zeros(3, 16)).unwrap().f.is_zero());
    }

    #[test]
    fn matrices_match_recursions() {
        let (pset, _) = setup(0.5, 3, 16);
        let f: Vec<f64> = (0..17).map(|k| (k as f64 * 0.7).sin()).collect();
        for which in Which::ALL {
            for n in 1..=3 {
                let fast = pset.apply_t(which, n, &f).unwrap();
                let dense = pset.matrix(which, n).unwrap().apply(&f).unwrap();
                for k in 0..17 {
                    assert!((fast[k] - dense[k]).abs() <= 1e-13 * dense[k].abs().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn single_term_trace_through_q() {
        let (pset, _) = setup(0.5, 3, 16);
        let mut rhs = GluedElement::zeros(3, 16);
        rhs.f.plus_mut(1)[3] = 1.0;
        let out = apply_q(&pset, &rhs).unwrap();
        let mut delta = vec![0.0; 17];
        delta[3] = 1.0;
        assert_eq!(out.f.plus(0), pset.apply_t(Which::T2, 0, &delta).unwrap().as_slice());
        assert!(out.g.plus(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn c_vanishes_without_boundary_value() {
        let (pset, _) = setup(0.5, 2, 32);
        let x = GluedElement::<f64>::zeros(2, 32);
        assert!(apply_c(&pset, &x).f.is_zero());
    }

    #[test]
    fn c_fixes_the_kernel() {
        let (pset, op) = setup(0.5, 2, 64);
        let kernel = kernel_d(&op).unwrap().remove(0);
        let ck = apply_c(&pset, &kernel);
        assert!(ck.difference(&kernel).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn q_output_is_in_domain() {
        let (pset, op) = setup(0.5, 4, 128);
        let rhs: GluedElement<f64> = random_rhs(op.trunc(), &mut sample_rng(3, 0));
        let x = apply_q(&pset, &rhs).unwrap();
        let report = in_domain(&op, &x).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.gluing.unwrap().max_residual <= 1e-10);
    }

    #[test]
    fn identities_at_moderate_size() {
        let (pset, op) = setup(0.5, 6, 128);
        let report = verify_identities(&pset, &op, 4, 42).unwrap();
        assert!(report.pass(), "{report:?}");
    }

    #[test]
    fn identities_for_undeformed_toy() {
        let fam: Arc<dyn WeightFamily> = Arc::new(GeometricFamily::undeformed(2.0, 2.0));
        let t = TruncationSpec::with_sizes(4, 64);
        let pset = ParametrixSet::new(Arc::clone(&fam), t).unwrap();
        let op = GluedDirac::new(fam, t).unwrap();
        let report = verify_identities(&pset, &op, 4, 1).unwrap();
        assert!(report.pass(), "{report:?}");
    }

    #[test]
    fn tiny_truncation_breaches() {
        let fam: Arc<dyn WeightFamily> = Arc::new(QWeight::new(0.5).unwrap());
        let t = TruncationSpec {
            margin: 0,
            ..TruncationSpec::with_sizes(3, 8)
        };
        let pset = ParametrixSet::new(Arc::clone(&fam), t).unwrap();
        let op = GluedDirac::new(fam, t).unwrap();
        let report = verify_identities(&pset, &op, 4, 5).unwrap();
        assert!(!report.pass());
    }

    #[test]
    fn hs_bounds_for_half() {
        let (pset, _) = setup(0.5, 20, 256);
        let kappa = validate(pset.family(), &pset.trunc).unwrap().kappa;
        let table = hs_norms(&pset, kappa).unwrap();
        assert!(table.pass, "{:?}", table.rows.iter().filter(|r| !r.pass).collect::<Vec<_>>());
        assert!(table.t3_nonincreasing);
    }

    #[test]
    fn hs_small_q_scales_like_s_times_t() {
        let fam: Arc<dyn WeightFamily> = Arc::new(QWeight::new(0.01).unwrap());
        let t = TruncationSpec::with_sizes(8, 64);
        let pset = ParametrixSet::new(Arc::clone(&fam), t).unwrap();
        let s5 = s_value(fam.as_ref(), 5, &t).unwrap().value;
        assert!((s5 / 0.01f64.powf(2.5) - 1.0).abs() < 0.02);
        let t4 = t_value(fam.as_ref(), 4, &t).unwrap().value;
        let t6 = t_value(fam.as_ref(), 6, &t).unwrap().value;
        let t2 = pset.hs_norm_sq(Which::T2, 5).unwrap().sqrt();
        let t3 = pset.hs_norm_sq(Which::T3, 5).unwrap().sqrt();
        assert!(t2 < 1e-4);
        assert!((t2 / (s5 * t6).sqrt() - 1.0).abs() < 0.05);
        assert!((t3 / (s5 * t4).sqrt() - 1.0).abs() < 0.05);
        for which in Which::ALL {
            assert!(pset.hs_norm_sq(which, 5).unwrap() < 1e-4);
        }
    }

    #[test]
    fn hs_matches_geometric_double_sum() {
        // a = b = 4ⁿ2ᵏ, c ≡ 1: a/b² = 4⁻ⁿ2⁻ᵏ, so
        // ‖T₃⁽ⁿ⁾‖² = Σ_k 4⁻ⁿ2⁻ᵏ Σ_{i≤k} 4^{−(n−1)}2⁻ⁱ.
        let fam: Arc<dyn WeightFamily> = Arc::new(GeometricFamily::undeformed(4.0, 2.0));
        let k_max = 60;
        let pset = ParametrixSet::new(fam, TruncationSpec::with_sizes(4, k_max)).unwrap();
        for n in 1..=3_i32 {
            let mut expected = 0.0;
            for k in 0..=k_max as i32 {
                let inner = 4f64.powi(-(n - 1)) * 2.0 * (1.0 - 2f64.powi(-(k + 1)));
                expected += 4f64.powi(-n) * 2f64.powi(-k) * inner;
            }
            let got = pset.hs_norm_sq(Which::T3, n as usize).unwrap();
            assert!((got / expected - 1.0).abs() < 1e-12, "n={n}: {got} vs {expected}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn c_is_idempotent(seed in any::<u64>()) {
            let (pset, _) = setup(0.5, 3, 48);
            let mut rng = sample_rng(seed, 0);
            let mut x: GluedElement<f64> = GluedElement::zeros(3, 48);
            x.f.plus_mut(0).iter_mut().for_each(|v| *v = f64::sample(&mut rng));
            let once = apply_c(&pset, &x);
            let twice = apply_c(&pset, &once);
            prop_assert!(twice.difference(&once).unwrap().max_abs() <= 1e-12 * once.max_abs().max(1.0));
        }

        #[test]
        fn dq_is_identity_on_random_rhs(seed in any::<u64>(), q in 0.3..0.9_f64) {
            let (pset, op) = setup(q, 4, 96);
            let report = verify_identities(&pset, &op, 2, seed).unwrap();
            prop_assert!(report.dq_pass, "{:?}", report);
            prop_assert!(report.qd_pass, "{:?}", report);
        }
    }
}
