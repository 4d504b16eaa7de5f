//! Compactness evidence for the parametrix: per-mode HS norms against their
//! bounds, top singular values, decay trends and pass/fail summaries.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use crate::jacobi::ModeOperator;
use crate::parametrix::{hs_norms, ParametrixSet, Which};
use crate::weights::{AdmissibilityReport, WeightFamily};
use crate::{Error, Result};

/// Largest singular value of `M: ℓ²_{a_dom} → ℓ²_{a_cod}` by power iteration
/// on `BᵀB`, `B = diag(√(1/a_cod)) M diag(√a_dom)`.
pub fn top_singular_value(m: &ModeOperator, family: &dyn WeightFamily, iterations: usize, tol: f64) -> Result<f64> {
    if iterations == 0 {
        return Err(Error::NoConvergence(0));
    }
    let dense = m.to_dense();
    let (rows, cols) = dense.shape();
    let left: Vec<f64> = (0..rows).map(|k| family.inv_a(m.codomain_weight, k).sqrt()).collect();
    let right: Vec<f64> = (0..cols).map(|i| family.inv_a(m.domain_weight, i).sqrt().recip()).collect();
    let b = nalgebra::DMatrix::from_fn(rows, cols, |k, i| left[k] * dense[(k, i)] * right[i]);
    if b.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let bt = b.transpose();
    let mut v = nalgebra::DVector::from_fn(cols, |i, _| 1.0 + (i as f64 * 0.618).fract());
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let bv = &b * &v;
        let next = bv.norm();
        let mut w = &bt * bv;
        let len = w.norm();
        if len == 0.0 {
            return Ok(next);
        }
        w /= len;
        v = w;
        if (next - sigma).abs() <= tol * next {
            return Ok(next);
        }
        sigma = next;
    }
    Err(Error::NoConvergence(iterations))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub n: usize,
    /// `‖T₁⁽ⁿ⁾‖_HS, ‖T₂⁽ⁿ⁾‖_HS, ‖T₃⁽ⁿ⁾‖_HS`.
    pub hs: [f64; 3],
    pub bounds: [f64; 3],
    pub top_singular: [f64; 3],
    /// `top_singular ≤ hs` in every column.
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTable {
    pub family: String,
    pub kappa: f64,
    pub rows: Vec<DecayRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Verdict {
    Supported,
    NotSupported(String),
    Withheld(String),
}

impl Verdict {
    pub fn is_supported(&self) -> bool {
        matches!(self, Verdict::Supported)
    }
}

/// `‖T₃⁽ⁿ⁺²⁾‖_HS / ‖T₃⁽ⁿ⁾‖_HS` over the table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioTest {
    pub q: Option<f64>,
    pub ratios: Vec<(usize, f64)>,
    pub all_at_most_one: bool,
    /// Median over `n ≥ 5`.
    pub median_tail: Option<f64>,
    pub window: Option<[f64; 2]>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactnessReport {
    pub table: DecayTable,
    pub bounds_hold: bool,
    /// `‖T₃⁽ⁿ⁾‖_HS` nonincreasing over the whole range.
    pub t3_nonincreasing: bool,
    pub decreasing_top_half: bool,
    pub dominance: bool,
    pub ratio_test: RatioTest,
    pub verdict: Verdict,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn ratio_test(rows: &[DecayRow], q: Option<f64>) -> RatioTest {
    let t3 = |n: usize| rows.iter().find(|r| r.n == n).map(|r| r.hs[2]);
    let ratios: Vec<(usize, f64)> = rows
        .iter()
        .filter_map(|r| t3(r.n + 2).map(|next| (r.n, next / r.hs[2])))
        .collect();
    let all_at_most_one = ratios.iter().all(|(_, v)| *v <= 1.0);
    let median_tail = median(ratios.iter().filter(|(n, _)| *n >= 5).map(|(_, v)| *v).collect());
    let window = q.map(|q| [0.5 * q.sqrt(), 2.0 * q.sqrt()]);
    let in_window = match (median_tail, window) {
        (Some(m), Some([lo, hi])) => lo <= m && m <= hi,
        _ => true,
    };
    RatioTest {
        q,
        pass: all_at_most_one && in_window,
        ratios,
        all_at_most_one,
        median_tail,
        window,
    }
}

/// HS norms, bounds and top singular values for `n ∈ n_range`, and the
/// verdict: supported iff every HS norm is under its bound and each column
/// is nonincreasing over the top half of the range.
pub fn compactness_report(
    pset: &ParametrixSet,
    admissibility: &AdmissibilityReport,
    n_range: RangeInclusive<usize>,
) -> Result<CompactnessReport> {
    let family = pset.family();
    if *n_range.start() == 0 || *n_range.end() > pset.trunc().n_max {
        return Err(Error::InvalidTruncation(format!(
            "mode range {}..={} outside 1..={}",
            n_range.start(),
            n_range.end(),
            pset.trunc().n_max
        )));
    }
    let hs = hs_norms(pset, admissibility.kappa)?;
    let rows = n_range
        .clone()
        .into_par_iter()
        .map(|n| -> Result<DecayRow> {
            let mut row = DecayRow {
                n,
                hs: [0.0; 3],
                bounds: [0.0; 3],
                top_singular: [0.0; 3],
                dominated: true,
            };
            for (c, which) in Which::ALL.into_iter().enumerate() {
                let entry = hs.get(which, n).expect("table covers 1..=N");
                row.hs[c] = entry.hs;
                row.bounds[c] = entry.bound;
                row.top_singular[c] = top_singular_value(&pset.matrix(which, n)?, family, 20_000, 1e-12)?;
                row.dominated &= row.top_singular[c] <= entry.hs * (1.0 + 1e-10);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    let bounds_hold = rows.iter().all(|r| (0..3).all(|c| r.hs[c] <= r.bounds[c]));
    let t3_nonincreasing = rows.windows(2).all(|w| w[1].hs[2] <= w[0].hs[2]);
    let top_half = &rows[rows.len() / 2..];
    let decreasing_top_half = (0..3).all(|c| top_half.windows(2).all(|w| w[1].hs[c] <= w[0].hs[c]));
    let dominance = rows.iter().all(|r| r.dominated);
    let ratio_test = ratio_test(&rows, family.deformation());

    let verdict = if !admissibility.passed() {
        let failed: Vec<&str> = admissibility
            .conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name)
            .collect();
        Verdict::Withheld(format!("family fails admissibility: {}", failed.join(", ")))
    } else if !bounds_hold {
        Verdict::NotSupported("an HS norm exceeds its bound".into())
    } else if !decreasing_top_half {
        Verdict::NotSupported("HS norms do not decrease over the top half of the range".into())
    } else {
        Verdict::Supported
    };
    Ok(CompactnessReport {
        table: DecayTable {
            family: family.name(),
            kappa: admissibility.kappa,
            rows,
        },
        bounds_hold,
        t3_nonincreasing,
        decreasing_top_half,
        dominance,
        ratio_test,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Consolidated pass/fail lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn push(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
