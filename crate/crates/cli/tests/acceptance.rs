//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stdout so it shows without `--nocapture`.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use glued_dirac::classical::{classical_hs_norms, classical_kernel_check, convergence_study};
use glued_dirac::dirac::{kernel_report, GluedDirac};
use glued_dirac::parametrix::{hs_norms, verify_identities, ParametrixSet, Which};
use glued_dirac::quadrature::RadialGrid;
use glued_dirac::weights::{s_value, t_value, validate};
use glued_dirac::{QWeight, TruncationSpec, WeightFamily};

const QS: [f64; 4] = [0.1, 0.25, 0.5, 0.9];

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, title, pass, detail }
}

fn q_family(q: f64) -> Arc<dyn WeightFamily> {
    Arc::new(QWeight::new(q).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn closed_forms() -> Outcome {
    let start = Instant::now();
    let trunc = TruncationSpec::default();
    let mut s_err = 0.0_f64;
    let mut t_ratio = 0.0_f64;
    for q in QS {
        let fam = QWeight::new(q).unwrap();
        for n in 0..=20 {
            let exact = q.powf(n as f64 / 2.0);
            let s = s_value(&fam, n, &trunc).unwrap();
            s_err = s_err.max(((s.value - exact).abs() + s.tail_estimate) / exact);
            let t = t_value(&fam, n, &trunc).unwrap();
            let bound = q.powf((n as f64 - 2.0) / 2.0) / (1.0 - q);
            t_ratio = t_ratio.max((t.value + t.tail_estimate) / bound);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        "1",
        "q-weight closed forms s(n) = q^{n/2}, t(n) bound",
        s_err <= 1e-10 && t_ratio <= 1.0 && elapsed < Duration::from_secs(1),
        format!("max rel err of s incl. tail {s_err:.3e}; max t/bound {t_ratio:.6}; {:.3} s", elapsed.as_secs_f64()),
    )
}

/// `∏_{k=0}^{horizon} 1/c±⁽ⁿ⁾(k)` straight from the coefficients.
fn inverse_products(fam: &QWeight, n: usize, horizon: usize) -> (f64, f64) {
    (0..=horizon).fold((1.0, 1.0), |(p, m), k| (p / fam.c_plus(n, k), m / fam.c_minus(n, k)))
}

fn q_run(q: f64, from: usize, to: usize) -> f64 {
    (from..=to).map(|j| 1.0 - q.powi(j as i32)).product()
}

fn product_identities(telescoped: bool) -> Outcome {
    let horizon = TruncationSpec::default().k_tail;
    let mut worst = 0.0_f64;
    let mut witness = String::new();
    for q in QS {
        let fam = QWeight::new(q).unwrap();
        for n in 0..=10 {
            let (plus, minus) = inverse_products(&fam, n, horizon);
            let (want_plus, want_minus) = if telescoped {
                (
                    1.0 / q_run(q, 1, n).sqrt(),
                    1.0 / (q_run(q, 1, n + 1).sqrt() * (1.0 - q.powi(n as i32 + 1)).sqrt()),
                )
            } else {
                (1.0 / q_run(q, 2, n + 1).sqrt(), 1.0 / q_run(q, 1, n + 1).sqrt())
            };
            for (sign, got, want) in [('+', plus, want_plus), ('-', minus, want_minus)] {
                let e = rel(got, want);
                if e > worst {
                    worst = e;
                    witness = format!("q={q} n={n} {sign}: truncated {got:.10} vs closed {want:.10}");
                }
            }
        }
    }
    let (id, title) = if telescoped {
        ("2b", "product identities, telescoped closed forms")
    } else {
        ("2", "product identities, printed closed forms")
    };
    outcome(id, title, worst <= 1e-10, format!("max rel err {worst:.3e} ({witness})"))
}

fn full_operator() -> (ParametrixSet, GluedDirac) {
    let fam = q_family(0.5);
    let trunc = TruncationSpec::with_sizes(16, 512);
    (ParametrixSet::new(Arc::clone(&fam), trunc).unwrap(), GluedDirac::new(fam, trunc).unwrap())
}

fn identities() -> [Outcome; 2] {
    let start = Instant::now();
    let (pset, op) = full_operator();
    let r = verify_identities(&pset, &op, 20, 42).unwrap();
    let elapsed = start.elapsed();
    [
        outcome(
            "3",
            "DQ = I (quantum), N=16, K=512, 20 samples",
            r.dq_max <= 1e-10 && r.domain_pass && elapsed < Duration::from_secs(10),
            format!(
                "max residual {:.3e}, unscaled {:.3e}, range in domain {}; {:.3} s",
                r.dq_max,
                r.dq_plain_max,
                r.domain_pass,
                elapsed.as_secs_f64()
            ),
        ),
        outcome(
            "4",
            "QD = I - C (quantum)",
            r.qd_max <= 1e-8,
            format!("max residual {:.3e}, gluing {:.3e}", r.qd_max, r.gluing_max),
        ),
    ]
}

fn quantum_kernel() -> Outcome {
    let (_, op) = full_operator();
    let r = kernel_report(&op, 8, 64, 1e-10).unwrap();
    let gap = r.oracle_direction_gap.unwrap_or(f64::INFINITY);
    outcome(
        "5",
        "kernel dimension 1 (quantum), oracle K=64, N=8",
        r.pass && r.formula_dimension == 1 && r.oracle_dimension == 1 && gap <= 1e-10 && r.higher_mode_nullity == 0,
        format!(
            "formula dim {}, oracle dim {}, direction gap {gap:.3e}, nonzero-mode nullity {}",
            r.formula_dimension, r.oracle_dimension, r.higher_mode_nullity
        ),
    )
}

fn quantum_hs() -> Outcome {
    let fam = q_family(0.5);
    let trunc = TruncationSpec::with_sizes(20, 512);
    let kappa = validate(fam.as_ref(), &trunc).unwrap().kappa;
    let pset = ParametrixSet::new(fam, trunc).unwrap();
    let table = hs_norms(&pset, kappa).unwrap();
    let worst = table.rows.iter().map(|r| r.hs / r.bound).fold(0.0_f64, f64::max);
    let t3_first = table.get(Which::T3, 1).unwrap().hs;
    let t3_last = table.get(Which::T3, 20).unwrap().hs;
    outcome(
        "6",
        "quantum HS bounds, q=0.5, n=1..20, T3 nonincreasing",
        table.pass && table.t3_nonincreasing && table.rows.len() == 60,
        format!(
            "kappa {kappa:.6}, max norm/bound {worst:.4}, T3 {t3_first:.3e} -> {t3_last:.3e}, nonincreasing {}",
            table.t3_nonincreasing
        ),
    )
}

fn classical_hs() -> Outcome {
    let grid = RadialGrid::new(512).unwrap();
    let t = classical_hs_norms(1..=32, &grid, 1e-6).unwrap();
    let violations = t.rows.iter().filter(|r| !r.pass).count();
    outcome(
        "7",
        "classical HS bounds 1/(n(n+1)), 1/n for n=1..32",
        t.pass && t.max_error <= 1e-6 && t.rows.len() == 96,
        format!("{} rows, {violations} violations, max quadrature error {:.3e}", t.rows.len(), t.max_error),
    )
}

fn classical_parametrix() -> Outcome {
    let s = convergence_study(16, 42, &[64, 128, 256, 512], 1e-6).unwrap();
    let last = s.rows.last().unwrap();
    let orders: Vec<String> = s.observed_orders.iter().map(|o| format!("{o:.2}")).collect();
    outcome(
        "8",
        "classical DQ residual at 512 nodes, halving under refinement",
        s.pass && last.nodes == 512 && last.dq_spectral <= 1e-6,
        format!(
            "residual {:.3e} (finite differences {:.3e}), observed orders [{}]",
            last.dq_spectral,
            last.dq_finite_difference,
            orders.join(", ")
        ),
    )
}

fn classical_kernel() -> Outcome {
    let grid = RadialGrid::new(512).unwrap();
    let r = classical_kernel_check(&grid, 16).unwrap();
    let survivors: usize = r.modes.iter().map(|m| m.nullity).sum();
    outcome(
        "9",
        "classical kernel is the constant pair",
        r.pass && r.dimension == 1 && survivors == 1,
        format!(
            "dimension {}, constant d-bar residual {:.3e}, gluing residual {:.3e}",
            r.dimension, r.constant_dbar_residual, r.constant_gluing_residual
        ),
    )
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<(String, Vec<u8>)>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = tmp.path().join(name);
            let status = Command::new(env!("CARGO_BIN_EXE_glued-dirac"))
                .args(["report-all", "--seed", "7", "--out"])
                .arg(&out)
                .output()
                .unwrap();
            assert!(status.status.code().is_some(), "report-all was killed");
            read_dir_sorted(&out)
        })
        .collect();
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let same_names = runs[0].iter().map(|f| &f.0).eq(runs[1].iter().map(|f| &f.0));
    outcome(
        "10",
        "reruns with the same config and seed are byte-identical",
        same_names && differing.is_empty() && !runs[0].is_empty(),
        format!("{} files compared, differing: {:?}", runs[0].len(), differing),
    )
}

#[test]
fn acceptance_criteria() {
    let mut results = vec![closed_forms(), product_identities(false), product_identities(true)];
    results.extend(identities());
    results.extend([
        quantum_kernel(),
        quantum_hs(),
        classical_hs(),
        classical_parametrix(),
        classical_kernel(),
        determinism(),
    ]);

    let mut out = std::io::stdout().lock();
    writeln!(out).unwrap();
    for r in &results {
        let mark = if r.pass { "PASS" } else { "FAIL" };
        writeln!(out, "[{mark}] {:>3}  {}: {}", r.id, r.title, r.detail).unwrap();
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    writeln!(out, "acceptance: {} of {} pass", results.len() - failed.len(), results.len()).unwrap();
    drop(out);
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
