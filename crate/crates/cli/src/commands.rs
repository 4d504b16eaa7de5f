//! One function per CLI verb. Each returns the documents and tables it
//! produced; nothing here touches the filesystem.

use std::sync::Arc;

use glued_dirac::classical::{classical_hs_norms, classical_kernel_check, convergence_study};
use glued_dirac::diagnostics::{compactness_report, Summary, Verdict};
use glued_dirac::dirac::{kernel_d, kernel_report, GluedDirac};
use glued_dirac::parametrix::{verify_identities, ParametrixSet, Which};
use glued_dirac::quadrature::{RadialGrid, MIN_GRID};
use glued_dirac::weights::{validate, AdmissibilityReport};
use glued_dirac::{Error, WeightFamily};

use crate::config::ExperimentConfig;
use crate::report::{Bundle, Document, Table, Value};

/// Tolerance on classical HS quadrature errors.
pub const CLASSICAL_HS_TOLERANCE: f64 = 1e-6;

/// Tolerance on the classical `D(Q(rhs))` residual.
pub const CLASSICAL_DQ_TOLERANCE: f64 = 1e-6;

/// Tolerance on the kernel direction gap against the dense oracle.
pub const KERNEL_TOLERANCE: f64 = 1e-10;

fn family(cfg: &ExperimentConfig) -> anyhow::Result<Arc<dyn WeightFamily>> {
    Ok(cfg.family.build()?)
}

/// Admissibility, or the reason it could not be established.
fn admissibility(fam: &dyn WeightFamily, cfg: &ExperimentConfig) -> anyhow::Result<Result<AdmissibilityReport, String>> {
    match validate(fam, &cfg.trunc) {
        Ok(r) if r.passed() => Ok(Ok(r)),
        Ok(r) => {
            let failed: Vec<&str> = r.conditions.iter().filter(|c| !c.pass).map(|c| c.name).collect();
            Ok(Err(format!("admissibility conditions failed: {}", failed.join(", "))))
        }
        Err(e @ (Error::DivergentSum { .. } | Error::NonPositiveWeight { .. } | Error::TailNotConverged { .. })) => {
            Ok(Err(e.to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

fn gate(doc: &mut Document, reason: String) {
    doc.section("admissibility").set("pass", false).set("reason", reason);
}

pub fn cmd_validate(cfg: &ExperimentConfig) -> anyhow::Result<Bundle> {
    let fam = family(cfg)?;
    let mut doc = Document::new("validate", cfg);
    let mut bundle = Bundle::default();
    match validate(fam.as_ref(), &cfg.trunc) {
        Ok(report) => {
            let s = doc.section("validate");
            s.set("family", report.family.clone())
                .set("pass", report.passed())
                .set("kappa", report.kappa)
                .set("closed_tail_gap", report.closed_tail_gap.unwrap_or(f64::NAN));
            if let Some(w) = report.kappa_witness {
                s.set(
                    "kappa_witness",
                    format!("{}{} over k = {}..={}, product {}", w.sign.symbol(), w.n, w.from, w.to, w.product),
                );
            }
            for c in &report.conditions {
                let s = doc.section(&format!("condition.{}", c.name));
                s.set("pass", c.pass);
                if let Some(w) = &c.witness {
                    s.set("witness", w.clone());
                }
            }
            let q = fam.deformation();
            let mut t = Table::new(
                "validate",
                &["n", "s", "s_tail_estimate", "s_closed_form", "t", "t_tail_estimate", "t_bound"],
            );
            for (i, (s, tv)) in report.s.iter().zip(&report.t).enumerate() {
                t.push(vec![
                    s.n.into(),
                    s.value.into(),
                    s.tail_estimate.into(),
                    q.map_or(f64::NAN, |q| q.powf(s.n as f64 / 2.0)).into(),
                    tv.value.into(),
                    tv.tail_estimate.into(),
                    report.t_bounds[i].unwrap_or(f64::NAN).into(),
                ]);
            }
            bundle.tables.push(t);
        }
        Err(e @ (Error::DivergentSum { .. } | Error::NonPositiveWeight { .. } | Error::TailNotConverged { .. })) => {
            doc.section("validate")
                .set("family", fam.name())
                .set("pass", false)
                .set("error", e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    bundle.documents.push(("validate".into(), doc));
    Ok(bundle)
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> anyhow::Result<Bundle> {
    let fam = family(cfg)?;
    let mut doc = Document::new("verify", cfg);
    let mut bundle = Bundle::default();
    if let Err(reason) = admissibility(fam.as_ref(), cfg)? {
        gate(&mut doc, reason);
        bundle.documents.push(("verify".into(), doc));
        return Ok(bundle);
    }
    let pset = ParametrixSet::new(Arc::clone(&fam), cfg.trunc)?;
    let op = GluedDirac::new(fam, cfg.trunc)?;
    let r = verify_identities(&pset, &op, cfg.samples, cfg.seed)?;
    doc.section("identities")
        .set("family", op.family().name())
        .set("samples", r.samples)
        .set("seed", r.seed)
        .set("dq_max", r.dq_max)
        .set("dq_plain_max", r.dq_plain_max)
        .set("qd_max", r.qd_max)
        .set("gluing_max", r.gluing_max)
        .set("leakage_max", r.leakage_max)
        .set("dq_tolerance", r.dq_tolerance)
        .set("qd_tolerance", r.qd_tolerance)
        .set("dq_pass", r.dq_pass)
        .set("qd_pass", r.qd_pass)
        .set("domain_pass", r.domain_pass);
    let mut t = Table::new("verify_samples", &["index", "dq", "dq_plain", "qd", "gluing", "leakage", "in_domain"]);
    for s in &r.per_sample {
        t.push(vec![
            s.index.into(),
            s.dq.into(),
            s.dq_plain.into(),
            s.qd.into(),
            s.gluing.into(),
            s.leakage.into(),
            s.in_domain.into(),
        ]);
    }
    bundle.tables.push(t);
    bundle.documents.push(("verify".into(), doc));
    Ok(bundle)
}

pub fn cmd_hs(cfg: &ExperimentConfig) -> anyhow::Result<Bundle> {
    let fam = family(cfg)?;
    let mut doc = Document::new("hs", cfg);
    let mut bundle = Bundle::default();
    match admissibility(fam.as_ref(), cfg)? {
        Err(reason) => gate(&mut doc, reason),
        Ok(adm) => {
            let pset = ParametrixSet::new(Arc::clone(&fam), cfg.trunc)?;
            let report = compactness_report(&pset, &adm, 1..=cfg.trunc.n_max)?;
            let verdict = match &report.verdict {
                Verdict::Supported => "supported".to_string(),
                Verdict::NotSupported(why) => format!("not supported: {why}"),
                Verdict::Withheld(why) => format!("withheld: {why}"),
            };
            let rt = &report.ratio_test;
            doc.section("quantum_hs")
                .set("family", report.table.family.clone())
                .set("kappa", report.table.kappa)
                .set("n_min", 1usize)
                .set("n_max", cfg.trunc.n_max)
                .set("verdict", verdict)
                .set("bounds_pass", report.bounds_hold)
                .set("t3_nonincreasing_pass", report.t3_nonincreasing)
                .set("top_half_decreasing_pass", report.decreasing_top_half)
                .set("dominance_pass", report.dominance)
                .set("ratio_median_tail", rt.median_tail.unwrap_or(f64::NAN))
                .set("ratio_window", rt.window.map_or(Vec::new(), |w| w.to_vec()))
                .set("ratio_pass", rt.pass)
                .set("pass", report.verdict.is_supported());
            let mut cols = vec!["n".to_string()];
            for w in Which::ALL {
                for suffix in ["hs", "bound", "top_singular"] {
                    cols.push(format!("{}_{suffix}", w.label()));
                }
            }
            let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
            let mut t = Table::new("hs_quantum", &cols);
            for row in &report.table.rows {
                let mut cells: Vec<Value> = vec![row.n.into()];
                for c in 0..3 {
                    cells.extend([row.hs[c].into(), row.bounds[c].into(), row.top_singular[c].into()]);
                }
                t.push(cells);
            }
            bundle.tables.push(t);
        }
    }

    let grid = RadialGrid::new(cfg.grid)?;
    let classical = classical_hs_norms(0..=cfg.classical_hs_max, &grid, CLASSICAL_HS_TOLERANCE)?;
    doc.section("classical_hs")
        .set("nodes", grid.len())
        .set("n_max", cfg.classical_hs_max)
        .set("max_error", classical.max_error)
        .set("error_tolerance", CLASSICAL_HS_TOLERANCE)
        .set("pass", classical.pass);
    let mut t = Table::new("hs_classical", &["n", "operator", "hs_sq", "error", "bound", "pass"]);
    for r in &classical.rows {
        t.push(vec![
            r.n.into(),
            r.which.label().into(),
            r.hs_sq.into(),
            r.error.into(),
            r.bound.unwrap_or(f64::NAN).into(),
            r.pass.into(),
        ]);
    }
    bundle.tables.push(t);
    bundle.documents.push(("hs".into(), doc));
    Ok(bundle)
}

pub fn cmd_kernel(cfg: &ExperimentConfig) -> anyhow::Result<Bundle> {
    let fam = family(cfg)?;
    let mut doc = Document::new("kernel", cfg);
    let mut bundle = Bundle::default();
    match admissibility(fam.as_ref(), cfg)? {
        Err(reason) => gate(&mut doc, reason),
        Ok(_) => {
            let op = GluedDirac::new(fam, cfg.trunc)?;
            let r = kernel_report(&op, cfg.oracle_n_max, cfg.oracle_k_max, KERNEL_TOLERANCE)?;
            doc.section("quantum_kernel")
                .set("family", op.family().name())
                .set("formula_dimension", r.formula_dimension)
                .set("formula_residual", r.formula_residual)
                .set("formula_in_domain", r.formula_in_domain)
                .set("oracle_n_max", r.oracle_n_max)
                .set("oracle_k_max", r.oracle_k_max)
                .set("oracle_dimension", r.oracle_dimension)
                .set("oracle_direction_gap", r.oracle_direction_gap.unwrap_or(f64::NAN))
                .set("higher_mode_nullity", r.higher_mode_nullity)
                .set("pass", r.pass);
            let basis = kernel_d(&op)?.remove(0);
            let mut profile = Table::new("kernel_profile", &["k", "f0_plus", "g0_plus"]);
            for (k, (a, b)) in basis.f.plus(0).iter().zip(basis.g.plus(0)).enumerate() {
                profile.push(vec![k.into(), (*a).into(), (*b).into()]);
            }
            bundle.tables.push(profile);
            let mut blocks = Table::new(
                "kernel_blocks",
                &["label", "unknowns", "equations", "nullity", "smallest_singular_value"],
            );
            for b in &r.blocks {
                blocks.push(vec![
                    b.label.clone().into(),
                    b.unknowns.into(),
                    b.equations.into(),
                    b.nullity.into(),
                    b.smallest_singular_value.into(),
                ]);
            }
            bundle.tables.push(blocks);
        }
    }

    let grid = RadialGrid::new(cfg.grid)?;
    let ck = classical_kernel_check(&grid, cfg.trunc.n_max)?;
    doc.section("classical_kernel")
        .set("nodes", ck.nodes)
        .set("dimension", ck.dimension)
        .set("basis", "constant pair (1, 1)")
        .set("constant_dbar_residual", ck.constant_dbar_residual)
        .set("constant_gluing_residual", ck.constant_gluing_residual)
        .set("pass", ck.pass);
    let mut t = Table::new(
        "kernel_classical",
        &["n", "candidate", "dbar_residual", "value_at_min_node", "regular", "mode_nullity", "nullity_without_regularity"],
    );
    for m in &ck.modes {
        for c in &m.candidates {
            t.push(vec![
                m.n.into(),
                c.label.clone().into(),
                c.dbar_residual.into(),
                c.value_at_min_node.into(),
                c.regular.into(),
                m.nullity.into(),
                m.nullity_without_regularity.into(),
            ]);
        }
    }
    bundle.tables.push(t);
    bundle.documents.push(("kernel".into(), doc));
    Ok(bundle)
}

/// Grid resolutions for the refinement study: 64, 128, ... up to `grid`.
pub fn refinement_ladder(grid: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut g = MIN_GRID;
    while g < grid {
        out.push(g);
        g *= 2;
    }
    out.push(grid);
    out
}

pub fn cmd_classical(cfg: &ExperimentConfig) -> anyhow::Result<Bundle> {
    let mut doc = Document::new("classical", cfg);
    let study = convergence_study(cfg.trunc.n_max, cfg.seed, &refinement_ladder(cfg.grid), CLASSICAL_DQ_TOLERANCE)?;
    let last = study.rows.last().expect("ladder is nonempty");
    doc.section("classical_parametrix")
        .set("n_max", study.n_max)
        .set("seed", study.seed)
        .set("nodes", last.nodes)
        .set("dq_spectral", last.dq_spectral)
        .set("dq_finite_difference", last.dq_finite_difference)
        .set("gluing", last.gluing)
        .set("observed_orders", study.observed_orders.clone())
        .set("tolerance", study.tolerance)
        .set("pass", study.pass);
    let mut t = Table::new("classical_convergence", &["nodes", "dq_spectral", "dq_finite_difference", "gluing"]);
    for r in &study.rows {
        t.push(vec![r.nodes.into(), r.dq_spectral.into(), r.dq_finite_difference.into(), r.gluing.into()]);
    }
    let mut bundle = Bundle::default();
    bundle.tables.push(t);
    bundle.documents.push(("classical".into(), doc));
    Ok(bundle)
}

pub fn cmd_report_all(cfg: &ExperimentConfig) -> anyhow::Result<Bundle> {
    let mut bundle = Bundle::default();
    let mut summary = Summary::default();
    for (name, run) in [
        ("validate", cmd_validate as fn(&ExperimentConfig) -> anyhow::Result<Bundle>),
        ("verify", cmd_verify),
        ("hs", cmd_hs),
        ("kernel", cmd_kernel),
        ("classical", cmd_classical),
    ] {
        let part = run(cfg)?;
        summary.push(name, part.pass(), "");
        bundle.extend(part);
    }
    let mut doc = Document::new("report-all", cfg);
    let s = doc.section("summary");
    for c in &summary.checks {
        s.set(&format!("{}_pass", c.name.replace('-', "_")), c.pass);
    }
    bundle.documents.push(("summary".into(), doc));
    Ok(bundle)
}
