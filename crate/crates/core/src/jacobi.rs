//! One-step difference operators at truncation:
//!
//! * `A⁽ⁿ⁾f(k) = b⁽ⁿ⁾(k)(f(k) − c₋⁽ⁿ⁾(k−1)f(k−1))`, `f(−1) = 0`,
//!   mapping `ℓ²_{a⁽ⁿ⁺¹⁾} → ℓ²_{a⁽ⁿ⁾}`;
//! * `Ā⁽ⁿ⁾f(k) = b⁽ⁿ⁺¹⁾(k)(f(k) − c₊⁽ⁿ⁾(k)f(k+1))`,
//!   mapping `ℓ²_{a⁽ⁿ⁾} → ℓ²_{a⁽ⁿ⁺¹⁾}`.
//!
//! Row `K_max` of `Ā` has no `f(K_max+1)` term.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::hilbert::Scalar;
use crate::weights::{tail_profile, Sign, WeightFamily};
use crate::{Error, Result, TruncationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum OperatorKind {
    A,
    Abar,
    T1,
    T2,
    T3,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entries {
    /// Row `k` is `scale[k]·(f(k) − coupling[k]·f(k±1))`; `−1` below the
    /// diagonal when `lower`, `+1` above otherwise.
    Bidiagonal {
        scale: Vec<f64>,
        coupling: Vec<f64>,
        lower: bool,
    },
    Dense(DMatrix<f64>),
}

/// An operator on the site index `k ∈ [0, K_max]` of a single Fourier mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOperator {
    pub n: usize,
    pub kind: OperatorKind,
    pub k_max: usize,
    pub entries: Entries,
    /// Mode index of the weight on the source space.
    pub domain_weight: usize,
    /// Mode index of the weight on the target space.
    pub codomain_weight: usize,
}

impl ModeOperator {
    pub fn dense(
        n: usize,
        kind: OperatorKind,
        matrix: DMatrix<f64>,
        domain_weight: usize,
        codomain_weight: usize,
    ) -> Self {
        Self {
            n,
            kind,
            k_max: matrix.nrows() - 1,
            entries: Entries::Dense(matrix),
            domain_weight,
            codomain_weight,
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.k_max + 1 {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "vector of length {len} for an operator on K_max = {}",
                self.k_max
            )))
        }
    }

    pub fn apply<S: Scalar>(&self, f: &[S]) -> Result<Vec<S>> {
        self.check_len(f.len())?;
        let k_max = self.k_max;
        Ok(match &self.entries {
            Entries::Bidiagonal { scale, coupling, lower } => (0..=k_max)
                .map(|k| {
                    let neighbor = match (*lower, k) {
                        (true, 0) => S::zero(),
                        (true, _) => f[k - 1] * coupling[k],
                        (false, k) if k == k_max => S::zero(),
                        (false, _) => f[k + 1] * coupling[k],
                    };
                    (f[k] - neighbor) * scale[k]
                })
                .collect(),
            Entries::Dense(m) => (0..=k_max)
                .map(|k| {
                    let mut acc = S::zero();
                    for (i, x) in f.iter().enumerate() {
                        let e = m[(k, i)];
                        if e != 0.0 {
                            acc += *x * e;
                        }
                    }
                    acc
                })
                .collect(),
        })
    }

    /// `Σ_i |M(k,i) f(i)|` per row: the scale against which rounding in
    /// row `k` of `M f` is measured.
    pub fn row_magnitudes<S: Scalar>(&self, f: &[S]) -> Result<Vec<f64>> {
        self.check_len(f.len())?;
        let k_max = self.k_max;
        Ok(match &self.entries {
            Entries::Bidiagonal { scale, coupling, lower } => (0..=k_max)
                .map(|k| {
                    let neighbor = match (*lower, k) {
                        (true, 0) => 0.0,
                        (true, _) => f[k - 1].abs() * coupling[k].abs(),
                        (false, k) if k == k_max => 0.0,
                        (false, _) => f[k + 1].abs() * coupling[k].abs(),
                    };
                    scale[k].abs() * (f[k].abs() + neighbor)
                })
                .collect(),
            Entries::Dense(m) => (0..=k_max)
                .map(|k| f.iter().enumerate().map(|(i, x)| (m[(k, i)] * x.abs()).abs()).sum())
                .collect(),
        })
    }

    pub fn entry(&self, k: usize, i: usize) -> f64 {
        match &self.entries {
            Entries::Dense(m) => m[(k, i)],
            Entries::Bidiagonal { scale, coupling, lower } => {
                if k == i {
                    scale[k]
                } else if (*lower && i + 1 == k) || (!*lower && k + 1 == i) {
                    -scale[k] * coupling[k]
                } else {
                    0.0
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.entries {
            Entries::Dense(m) => m.clone(),
            Entries::Bidiagonal { .. } => {
                let d = self.k_max + 1;
                DMatrix::from_fn(d, d, |k, i| self.entry(k, i))
            }
        }
    }

    /// `Σ_{k,i} (1/a_cod(k)) a_dom(i) |M(k,i)|²`, the Hilbert–Schmidt norm
    /// squared between the weighted spaces.
    pub fn weighted_hs_sq(&self, family: &dyn WeightFamily) -> f64 {
        let d = self.k_max + 1;
        let mut total = 0.0;
        for k in 0..d {
            let wk = family.inv_a(self.codomain_weight, k);
            for i in 0..d {
                let e = self.entry(k, i);
                if e != 0.0 {
                    total += wk * family.a(self.domain_weight, i) * e * e;
                }
            }
        }
        total
    }
}

fn finite(which: &'static str, n: usize, k: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::WeightOverflow { which, n, k })
    }
}

pub fn build_a(family: &dyn WeightFamily, n: usize, k_max: usize) -> Result<ModeOperator> {
    let scale = (0..=k_max)
        .map(|k| finite("b", n, k, family.b(n, k)))
        .collect::<Result<Vec<_>>>()?;
    let coupling = (0..=k_max)
        .map(|k| if k == 0 { 0.0 } else { family.c_minus(n, k - 1) })
        .collect();
    Ok(ModeOperator {
        n,
        kind: OperatorKind::A,
        k_max,
        entries: Entries::Bidiagonal {
            scale,
            coupling,
            lower: true,
        },
        domain_weight: n + 1,
        codomain_weight: n,
    })
}

pub fn build_abar(family: &dyn WeightFamily, n: usize, k_max: usize) -> Result<ModeOperator> {
    let scale = (0..=k_max)
        .map(|k| finite("b", n + 1, k, family.b(n + 1, k)))
        .collect::<Result<Vec<_>>>()?;
    let coupling = (0..=k_max)
        .map(|k| if k == k_max { 0.0 } else { family.c_plus(n, k) })
        .collect();
    Ok(ModeOperator {
        n,
        kind: OperatorKind::Abar,
        k_max,
        entries: Entries::Bidiagonal {
            scale,
            coupling,
            lower: false,
        },
        domain_weight: n,
        codomain_weight: n + 1,
    })
}

/// `f(k) = (∏_{i=0}^{k−1} 1/c₊⁽ⁿ⁾(i)) α`, the kernel of `Ā⁽ⁿ⁾`.
pub fn kernel_abar<S: Scalar>(family: &dyn WeightFamily, n: usize, k_max: usize, alpha: S) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(k_max + 1);
    let mut product = 1.0;
    for k in 0..=k_max {
        if k > 0 {
            product /= family.c_plus(n, k - 1);
        }
        out.push(alpha * finite("c+", n, k, product)?);
    }
    Ok(out)
}

/// The solution of `A⁽ⁿ⁾f = g`:
/// `f(k) = Σ_{i≤k} (1/b⁽ⁿ⁾(i)) (∏_{j=i}^{k−1} c₋⁽ⁿ⁾(j)) g(i)`.
pub fn solve_a<S: Scalar>(family: &dyn WeightFamily, n: usize, g: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(g.len());
    let mut acc = S::zero();
    for (k, &gk) in g.iter().enumerate() {
        if k > 0 {
            acc = acc * family.c_minus(n, k - 1);
        }
        acc += gk * family.inv_b(n, k);
        out.push(acc);
    }
    out
}

/// `R(k) = Σ_{i≥k} (1/b⁽ⁿ⁺¹⁾(i)) (∏_{j=k}^{i−1} c₊⁽ⁿ⁾(j)) g(i)` for `g` supported in `[0, K]`.
pub(crate) fn upper_sum<S: Scalar>(family: &dyn WeightFamily, n: usize, g: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); g.len()];
    let mut acc = S::zero();
    for k in (0..g.len()).rev() {
        acc = acc * family.c_plus(n, k) + g[k] * family.inv_b(n + 1, k);
        out[k] = acc;
    }
    out
}

/// The solution of `Ā⁽ⁿ⁾f = −g` with prescribed `f(∞)`:
/// `f(k) = (∏_{i≥k} c₊⁽ⁿ⁾(i)) f(∞) − Σ_{i≥k} (1/b⁽ⁿ⁺¹⁾(i)) (∏_{j=k}^{i−1} c₊⁽ⁿ⁾(j)) g(i)`.
pub fn solve_abar<S: Scalar>(
    family: &dyn WeightFamily,
    n: usize,
    g: &[S],
    boundary_value: S,
    trunc: &TruncationSpec,
) -> Result<Vec<S>> {
    if g.is_empty() {
        return Err(Error::ShapeMismatch("empty right-hand side".into()));
    }
    let tail = tail_profile(family, Sign::Plus, n, g.len() - 1, trunc)?;
    let sum = upper_sum(family, n, g);
    Ok(tail
        .iter()
        .zip(sum)
        .map(|(&t, r)| boundary_value * t - r)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{s_value, t_value};
    use crate::{GeometricFamily, QWeight};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| f64::sample(&mut rng)).collect()
    }

    fn weighted_norm(family: &dyn WeightFamily, n: usize, f: &[f64]) -> f64 {
        f.iter()
            .enumerate()
            .map(|(k, v)| family.inv_a(n, k) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn unit_family() -> GeometricFamily {
        GeometricFamily::undeformed(1.0, 1.0)
    }

    #[test]
    fn a_telescopes_constants() {
        let op = build_a(&unit_family(), 2, 6).unwrap();
        let out = op.apply(&[1.0; 7]).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn a_of_delta() {
        let fam = QWeight::new(0.25).unwrap();
        let op = build_a(&fam, 1, 5).unwrap();
        let mut delta = vec![0.0; 6];
        delta[0] = 1.0;
        let out = op.apply(&delta).unwrap();
        assert_eq!(out[0], fam.b(1, 0));
        assert!((out[1] + fam.b(1, 1) * fam.c_minus(1, 0)).abs() <= 1e-15 * out[1].abs());
        assert!(out[2..].iter().all(|v| *v == 0.0));
        assert_eq!(op.domain_weight, 2);
        assert_eq!(op.codomain_weight, 1);
    }

    #[test]
    fn zero_in_zero_out() {
        let fam = QWeight::new(0.5).unwrap();
        for op in [build_a(&fam, 3, 9).unwrap(), build_abar(&fam, 3, 9).unwrap()] {
            assert!(op.apply(&[0.0; 10]).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn abar_kills_constants_except_last_row() {
        let op = build_abar(&unit_family(), 0, 5).unwrap();
        let out = op.apply(&[3.0; 6]).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn bidiagonal_shapes() {
        let fam = QWeight::new(0.5).unwrap();
        let a = build_a(&fam, 2, 6).unwrap().to_dense();
        let abar = build_abar(&fam, 2, 6).unwrap().to_dense();
        for k in 0..7 {
            for i in 0..7 {
                if i > k || i + 1 < k {
                    assert_eq!(a[(k, i)], 0.0);
                }
                if i < k || i > k + 1 {
                    assert_eq!(abar[(k, i)], 0.0);
                }
            }
        }
    }

    #[test]
    fn kernel_of_abar_is_annihilated() {
        let fam = QWeight::new(0.5).unwrap();
        let k_max = 200;
        let f = kernel_abar(&fam, 0, k_max, 1.0).unwrap();
        let op = build_abar(&fam, 0, k_max).unwrap();
        let out = op.apply(&f).unwrap();
        let mags = op.row_magnitudes(&f).unwrap();
        for k in 0..k_max {
            assert!(out[k].abs() <= 1e-12 * mags[k].max(1.0), "row {k}");
        }
    }

    #[test]
    fn kernel_with_unit_coupling_is_constant() {
        let f = kernel_abar(&unit_family(), 4, 10, 2.0).unwrap();
        assert!(f.iter().all(|v| *v == 2.0));
    }

    #[test]
    fn kernel_telescopes_for_mode_one() {
        let fam = QWeight::new(0.25).unwrap();
        let f = kernel_abar(&fam, 1, 30, 1.0).unwrap();
        for (k, v) in f.iter().enumerate() {
            let expected = fam.w(k as i64) / fam.w(0);
            assert!((v - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_norm_estimate() {
        let fam = QWeight::new(0.5).unwrap();
        let t = TruncationSpec::with_sizes(4, 400);
        let kappa = crate::weights::validate(&fam, &t).unwrap().kappa;
        let f = kernel_abar(&fam, 3, 400, 1.0).unwrap();
        let lhs = weighted_norm(&fam, 3, &f).powi(2);
        let s = s_value(&fam, 3, &t).unwrap().value;
        assert!(lhs <= s / (kappa * kappa), "{lhs} vs {}", s / (kappa * kappa));
    }

    #[test]
    fn kernel_spans_dense_nullspace() {
        let fam = QWeight::new(0.5).unwrap();
        let k_max = 30;
        let op = build_abar(&fam, 2, k_max).unwrap();
        // Interior rows only, each divided by its b so the system is well scaled.
        let dense = op.to_dense();
        let rows = DMatrix::from_fn(k_max, k_max + 1, |k, i| dense[(k, i)] / fam.b(3, k));
        // Pad to square so the SVD exposes every right singular vector.
        let full = rows.insert_row(k_max, 0.0).svd(false, true);
        let small: Vec<usize> = (0..=k_max).filter(|&i| full.singular_values[i] < 1e-10).collect();
        assert_eq!(small.len(), 1);
        let direction = full.v_t.unwrap().row(small[0]).transpose();
        let formula = kernel_abar(&fam, 2, k_max, 1.0).unwrap();
        let formula = nalgebra::DVector::from_vec(formula).normalize();
        let cos = direction.dot(&formula).abs();
        assert!((1.0 - cos).abs() < 1e-10, "{cos}");
    }

    #[test]
    fn solve_a_of_delta() {
        let fam = QWeight::new(0.5).unwrap();
        let mut g = vec![0.0; 12];
        g[0] = 1.0;
        let f = solve_a(&fam, 2, &g);
        let mut product = 1.0;
        for k in 0..12 {
            let expected = fam.inv_b(2, 0) * product;
            assert!((f[k] - expected).abs() <= 1e-15 * expected.abs());
            product *= fam.c_minus(2, k);
        }
        assert!(solve_a(&fam, 2, &[0.0; 12]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn solve_abar_of_delta() {
        let fam = QWeight::new(0.5).unwrap();
        let t = TruncationSpec::with_sizes(2, 20);
        let mut g = vec![0.0; 21];
        g[5] = 1.0;
        let f = solve_abar(&fam, 0, &g, 0.0, &t).unwrap();
        for k in 0..=20 {
            let expected = if k <= 5 { -fam.inv_b(1, 5) } else { 0.0 };
            assert!((f[k] - expected).abs() <= 1e-15 * fam.inv_b(1, 5));
        }
    }

    #[test]
    fn homogeneous_solve_abar_is_tail_profile() {
        let fam = QWeight::new(0.5).unwrap();
        let t = TruncationSpec::with_sizes(2, 40);
        let f = solve_abar(&fam, 2, &[0.0; 41], 1.5, &t).unwrap();
        let ker = kernel_abar(&fam, 2, 40, 1.0).unwrap();
        let total = crate::weights::tail_product(&fam, Sign::Plus, 2, 0, &t).unwrap();
        for k in 0..=40 {
            assert!((f[k] - 1.5 * total * ker[k]).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn solve_a_round_trip(seed in any::<u64>(), n in 0..6_usize, q in 0.05..0.95_f64) {
            let fam = QWeight::new(q).unwrap();
            let k_max = 60;
            let g = random_vec(k_max + 1, seed);
            let f = solve_a(&fam, n, &g);
            let op = build_a(&fam, n, k_max).unwrap();
            let back = op.apply(&f).unwrap();
            let mags = op.row_magnitudes(&f).unwrap();
            for k in 0..=k_max {
                prop_assert!((back[k] - g[k]).abs() <= 1e-13 * mags[k].max(g[k].abs()));
            }
        }

        #[test]
        fn solve_abar_round_trip(seed in any::<u64>(), n in 0..6_usize, support in 1..50_usize, fin in -1.0..1.0_f64) {
            let fam = QWeight::new(0.5).unwrap();
            let k_max = 60;
            let t = TruncationSpec::with_sizes(6, k_max);
            let mut g = random_vec(k_max + 1, seed);
            g[support..].iter_mut().for_each(|v| *v = 0.0);
            let f = solve_abar(&fam, n, &g, fin, &t).unwrap();
            let op = build_abar(&fam, n, k_max).unwrap();
            let back = op.apply(&f).unwrap();
            let mags = op.row_magnitudes(&f).unwrap();
            for k in 0..k_max {
                prop_assert!((back[k] + g[k]).abs() <= 1e-12 * mags[k].max(g[k].abs()), "row {}", k);
            }
            let limit = f[k_max];
            prop_assert!((limit - fin).abs() <= 1e-12);
        }

        #[test]
        fn solve_a_norm_bound(seed in any::<u64>(), n in 0..8_usize) {
            // A⁽ⁿ⁾ maps mode n+1 to mode n, so the solution lives in ℓ²_{a⁽ⁿ⁺¹⁾}.
            let fam = QWeight::new(0.5).unwrap();
            let k_max = 120;
            let t = TruncationSpec::with_sizes(10, k_max);
            let kappa = crate::weights::validate(&fam, &t).unwrap().kappa;
            let g = random_vec(k_max + 1, seed);
            let f = solve_a(&fam, n, &g);
            let s = s_value(&fam, n + 1, &t).unwrap().value;
            let tn = t_value(&fam, n, &t).unwrap().value;
            let lhs = weighted_norm(&fam, n + 1, &f);
            let rhs = (s * tn).sqrt() / kappa * weighted_norm(&fam, n, &g);
            prop_assert!(lhs <= rhs, "{} > {}", lhs, rhs);
        }
    }
}
