use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cutoffs and tolerances for every finite approximation in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationSpec {
    /// Highest Fourier mode kept.
    pub n_max: usize,
    /// Highest site index kept.
    pub k_max: usize,
    /// Horizon for infinite sums and products.
    pub k_tail: usize,
    /// Sites next to `k_max` excluded from identity checks.
    pub margin: usize,
    pub tol_identity: f64,
    pub tol_tail: f64,
    pub tol_trace: f64,
}

impl Default for TruncationSpec {
    fn default() -> Self {
        Self {
            n_max: 16,
            k_max: 512,
            k_tail: 4096,
            margin: 8,
            tol_identity: 1e-10,
            tol_tail: 1e-12,
            tol_trace: 1e-8,
        }
    }
}

impl TruncationSpec {
    pub fn with_sizes(n_max: usize, k_max: usize) -> Self {
        Self {
            n_max,
            k_max,
            k_tail: k_max.max(TruncationSpec::default().k_tail),
            margin: TruncationSpec::default().margin.min(k_max.saturating_sub(1) / 4),
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidTruncation(msg));
        if self.n_max < 1 {
            return fail("n_max must be at least 1".into());
        }
        if self.k_max < 2 {
            return fail("k_max must be at least 2".into());
        }
        if self.k_tail < self.k_max {
            return fail(format!("k_tail {} < k_max {}", self.k_tail, self.k_max));
        }
        if 4 * self.margin >= self.k_max {
            return fail(format!("margin {} must be below k_max/4", self.margin));
        }
        for (name, tol) in [
            ("tol_identity", self.tol_identity),
            ("tol_tail", self.tol_tail),
            ("tol_trace", self.tol_trace),
        ] {
            if !(tol > 0.0 && tol < 1.0) {
                return fail(format!("{name} = {tol} must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Number of stored sites per mode.
    pub fn sites(&self) -> usize {
        self.k_max + 1
    }

    /// Lag used by the two-point Cauchy check of boundary traces.
    pub fn trace_lag(&self) -> usize {
        (self.k_max / 4).max(1)
    }

    /// Largest site index that admissible right-hand sides may occupy.
    pub fn support_limit(&self) -> usize {
        self.k_max - self.margin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let t = TruncationSpec::default();
        t.check().unwrap();
        assert_eq!(t.trace_lag(), 128);
        assert_eq!(t.support_limit(), 504);
    }

    #[test]
    fn rejects_bad_cutoffs() {
        let mut t = TruncationSpec::default();
        t.k_tail = 100;
        assert!(t.check().is_err());
        let mut t = TruncationSpec::default();
        t.margin = 128;
        assert!(t.check().is_err());
        let mut t = TruncationSpec::default();
        t.tol_trace = 1.0;
        assert!(t.check().is_err());
    }

    #[test]
    fn small_sizes_keep_margin_legal() {
        for k in [8, 16, 64, 512] {
            TruncationSpec::with_sizes(4, k).check().unwrap();
        }
    }
}
