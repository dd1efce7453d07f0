//! Where the approximated inner-product test disagrees with the exact one.
//!
//! Per-sample losses are `f_i(w) = (w - xi_i)^2 / 2` with `xi` drawn from
//! two equally likely values (`-1` and `1` by default). A batch of `|S|`
//! samples holding `n` copies of the negative value has gradient
//! `w - xi_pos + n (xi_pos - xi_neg) / |S|`, which for the default values is
//! `w - 1 + 2n/|S|`. For every `n` the batch is built explicitly and both
//! tests are evaluated on it.
//!
//! The exact test used for labelling is the realized-batch form
//! `(g_S g - g^2)^2 <= theta^2 g^4`. Two variance forms are reported next to
//! it: the population form (independent of `n`) and the Bessel-corrected
//! sample variance of the batch's per-sample projections `g_i g`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batchtests::{approx_recommended_size, approx_tests, TestConfig};
use crate::dataspace::{Dataset, LabelKind};
use crate::objectives::{Objective, ObjectiveKind};

#[derive(Debug, Error, PartialEq)]
pub enum DemoError {
    #[error("invalid demo parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoSpec {
    pub w: f64,
    pub batch_total: usize,
    pub theta_a: f64,
    pub xi_neg: f64,
    pub xi_pos: f64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            w: 0.5,
            batch_total: 20,
            theta_a: 1.0,
            xi_neg: -1.0,
            xi_pos: 1.0,
        }
    }
}

impl DemoSpec {
    /// Gradient of the population objective at `w`.
    pub fn true_gradient(&self) -> f64 {
        self.w - 0.5 * (self.xi_neg + self.xi_pos)
    }

    /// Closed-form batch gradient for `n` negative samples.
    pub fn batch_gradient(&self, n: usize) -> f64 {
        self.w - self.xi_pos + n as f64 * (self.xi_pos - self.xi_neg) / self.batch_total as f64
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        let bad = |m: String| Err(DemoError::Invalid(m));
        if self.batch_total < 2 {
            return bad(format!("batch_total = {} must be at least 2", self.batch_total));
        }
        if !(self.theta_a > 0.0 && self.theta_a.is_finite()) {
            return bad(format!("theta = {} must be positive", self.theta_a));
        }
        if ![self.w, self.xi_neg, self.xi_pos].iter().all(|v| v.is_finite()) {
            return bad("w and xi values must be finite".into());
        }
        if self.xi_neg > self.xi_pos {
            return bad(format!("xi_neg = {} exceeds xi_pos = {}", self.xi_neg, self.xi_pos));
        }
        if self.true_gradient() == 0.0 {
            return bad(format!("the true gradient vanishes at w = {}", self.w));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    TP,
    TN,
    FP,
    FN,
}

impl Label {
    fn classify(positive: bool, truth: bool) -> Self {
        match (positive, truth) {
            (true, true) => Label::TP,
            (true, false) => Label::FP,
            (false, true) => Label::FN,
            (false, false) => Label::TN,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoRow {
    pub n: usize,
    pub grad_true: f64,
    pub grad_batch: f64,
    /// Smallest theta passing the realized-batch exact test.
    pub min_theta_exact: f64,
    /// Smallest theta passing the exact test with the population variance.
    pub min_theta_population: f64,
    /// Smallest theta passing the exact test with the batch's own sample
    /// variance of `g_i g`.
    pub min_theta_empirical: f64,
    pub exact_pass: bool,
    pub approx_lhs: f64,
    pub approx_rhs: f64,
    pub approx_pass: bool,
    /// `None` when the batch gradient vanishes and no batch size helps.
    pub approx_size: Option<usize>,
    /// Exact verdict against the sign of `g_S g`.
    pub label: Label,
    /// Approximated verdict against the sign of `g_S g`.
    pub approx_label: Label,
}

fn demo_batch(spec: &DemoSpec, n: usize) -> Objective {
    let labels = (0..spec.batch_total)
        .map(|k| if k < n { spec.xi_neg } else { spec.xi_pos })
        .collect();
    let data = Dataset::new(vec![1.0; spec.batch_total], labels, LabelKind::Regression).expect("demo batch is valid");
    Objective::new(ObjectiveKind::LeastSquares, Arc::new(data)).expect("least squares accepts any labels")
}

/// One row per `n = 0..=|S|`.
pub fn demo_table(spec: &DemoSpec) -> Result<Vec<DemoRow>, DemoError> {
    spec.validate()?;
    let size = spec.batch_total;
    let g = spec.true_gradient();
    let g2 = g * g;
    let half_gap = 0.5 * (spec.xi_pos - spec.xi_neg);
    // per-sample gradients are g +- half_gap, so Var(g_i g) = g^2 half_gap^2
    let min_theta_population = (g2 * half_gap * half_gap / size as f64).sqrt() / g2;
    let cfg = TestConfig {
        theta: spec.theta_a,
        nu: 1.0,
        omega: 1.0,
        grad_norm_floor: 1e-12,
    };
    let all: Vec<usize> = (0..size).collect();
    let w = [spec.w];

    let mut rows = Vec::with_capacity(size + 1);
    for n in 0..=size {
        let psg = demo_batch(spec, n)
            .batch_gradient(&w, &all)
            .expect("demo batch gradient");
        let gs = psg.mean[0];
        let min_theta_exact = (gs * g - g2).abs() / g2;
        let batch_var = psg.rows.iter().map(|gi| ((gi - gs) * g).powi(2)).sum::<f64>() / (size - 1) as f64;
        let min_theta_empirical = (batch_var / size as f64).sqrt() / g2;
        let exact_pass = min_theta_exact <= spec.theta_a;
        let (approx_lhs, approx_rhs, approx_pass) = match approx_tests(&psg, &cfg) {
            Ok(v) => (v.lhs_inner, v.rhs_inner, v.inner_pass),
            Err(_) => (psg.sum_sq_dev_inner / ((size - 1) * size) as f64, 0.0, false),
        };
        let approx_size = approx_recommended_size(&psg, &cfg).ok();
        let truth = gs * g > 0.0;
        rows.push(DemoRow {
            n,
            grad_true: g,
            grad_batch: gs,
            min_theta_exact,
            min_theta_population,
            min_theta_empirical,
            exact_pass,
            approx_lhs,
            approx_rhs,
            approx_pass,
            approx_size,
            label: Label::classify(exact_pass, truth),
            approx_label: Label::classify(approx_pass, truth),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoSummary {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(first, last)` n at which the exact test passes.
    pub exact_pass_range: Option<(usize, usize)>,
    pub exact_pass_contiguous: bool,
    pub approx_fp: usize,
    pub approx_fn: usize,
}

impl DemoSummary {
    pub fn has_fp_and_fn(&self) -> bool {
        self.fp > 0 && self.fn_ > 0
    }
}

impl fmt::Display for DemoSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exact: TP={} TN={} FP={} FN={}", self.tp, self.tn, self.fp, self.fn_)?;
        match self.exact_pass_range {
            Some((a, b)) => write!(
                f,
                "; passes for n in [{a}, {b}]{}",
                if self.exact_pass_contiguous { "" } else { " (with gaps)" }
            )?,
            None => write!(f, "; passes for no n")?,
        }
        write!(f, "; approximated: FP={} FN={}", self.approx_fp, self.approx_fn)
    }
}

pub fn summarize(rows: &[DemoRow]) -> DemoSummary {
    let count = |l: Label, approx: bool| {
        rows.iter()
            .filter(|r| if approx { r.approx_label == l } else { r.label == l })
            .count()
    };
    let passing: Vec<usize> = rows.iter().filter(|r| r.exact_pass).map(|r| r.n).collect();
    let exact_pass_range = passing.first().zip(passing.last()).map(|(a, b)| (*a, *b));
    let exact_pass_contiguous = passing.windows(2).all(|p| p[1] == p[0] + 1);
    DemoSummary {
        tp: count(Label::TP, false),
        tn: count(Label::TN, false),
        fp: count(Label::FP, false),
        fn_: count(Label::FN, false),
        exact_pass_range,
        exact_pass_contiguous,
        approx_fp: count(Label::FP, true),
        approx_fn: count(Label::FN, true),
    }
}

pub const DEMO_COLUMNS: [&str; 13] = [
    "n",
    "grad_true",
    "grad_batch",
    "min_theta_exact",
    "min_theta_population",
    "min_theta_empirical",
    "exact_pass",
    "approx_lhs",
    "approx_rhs",
    "approx_pass",
    "approx_size",
    "label",
    "approx_label",
];

/// Writes the table as CSV; an unbounded recommendation is written `inf`.
pub fn write_demo_csv<W: Write>(rows: &[DemoRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DEMO_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.grad_true.to_string(),
            r.grad_batch.to_string(),
            r.min_theta_exact.to_string(),
            r.min_theta_population.to_string(),
            r.min_theta_empirical.to_string(),
            r.exact_pass.to_string(),
            r.approx_lhs.to_string(),
            r.approx_rhs.to_string(),
            r.approx_pass.to_string(),
            r.approx_size.map_or_else(|| "inf".to_string(), |s| s.to_string()),
            r.label.to_string(),
            r.approx_label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_gradient_matches_closed_form() {
        for spec in [
            DemoSpec::default(),
            DemoSpec {
                w: -0.3,
                batch_total: 7,
                ..DemoSpec::default()
            },
        ] {
            for row in demo_table(&spec).unwrap() {
                assert!((row.grad_batch - spec.batch_gradient(row.n)).abs() < 1e-14, "{row:?}");
            }
        }
    }

    #[test]
    fn default_table_labels() {
        let rows = demo_table(&DemoSpec::default()).unwrap();
        assert_eq!(rows.len(), 21);
        for r in &rows {
            let expected = match r.n {
                0..=4 => Label::TN,
                5 => Label::FP,
                6..=15 => Label::TP,
                _ => Label::FN,
            };
            assert_eq!(r.label, expected, "n = {}", r.n);
        }
        let s = summarize(&rows);
        assert_eq!(s.exact_pass_range, Some((5, 15)));
        assert!(s.exact_pass_contiguous && s.has_fp_and_fn());
    }

    #[test]
    fn approx_values() {
        let rows = demo_table(&DemoSpec::default()).unwrap();
        let r10 = rows[10];
        assert!((r10.approx_lhs - 5.0 / 380.0).abs() < 1e-15);
        assert_eq!(r10.approx_rhs, 0.0625);
        assert!(r10.approx_pass);
        let r3 = rows[3];
        assert!((r3.grad_batch + 0.2).abs() < 1e-15);
        assert!(r3.approx_pass);
        assert_eq!(r3.approx_label, Label::FP);
        assert_eq!(r3.approx_size, Some(14));
        let r5 = rows[5];
        assert_eq!(r5.grad_batch, 0.0);
        assert!(!r5.approx_pass);
        assert_eq!(r5.approx_size, None);
    }

    #[test]
    fn population_theta_is_constant() {
        // Var(g_i g) = 0.25 * 1, over |S| = 20, divided by g^2 = 0.25
        let rows = demo_table(&DemoSpec::default()).unwrap();
        let expected = (0.25f64 / 20.0).sqrt() / 0.25;
        assert!(rows.iter().all(|r| (r.min_theta_population - expected).abs() < 1e-15));
    }

    #[test]
    fn empirical_theta_closed_form() {
        // batch variance of g_i is 4 n (|S| - n) / (|S| (|S| - 1))
        let spec = DemoSpec::default();
        for r in demo_table(&spec).unwrap() {
            let n = r.n as f64;
            let var = 4.0 * n * (20.0 - n) / (20.0 * 19.0) * 0.25;
            let expected = (var / 20.0).sqrt() / 0.25;
            assert!((r.min_theta_empirical - expected).abs() < 1e-12, "n = {}", r.n);
        }
    }

    #[test]
    fn zero_noise_variant() {
        let spec = DemoSpec {
            xi_neg: 0.0,
            xi_pos: 0.0,
            ..DemoSpec::default()
        };
        let rows = demo_table(&spec).unwrap();
        let mid = rows[10];
        assert_eq!(mid.min_theta_exact, 0.0);
        assert_eq!(mid.min_theta_population, 0.0);
        assert_eq!(mid.approx_size, Some(1));
    }

    #[test]
    fn csv_sentinel() {
        let rows = demo_table(&DemoSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_demo_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 22);
        let line5 = text.lines().nth(6).unwrap();
        assert!(line5.starts_with("5,"));
        assert!(line5.contains(",inf,FP,"));
    }

    #[test]
    fn invalid_specs() {
        assert!(demo_table(&DemoSpec {
            batch_total: 1,
            ..DemoSpec::default()
        })
        .is_err());
        assert!(demo_table(&DemoSpec {
            w: 0.0,
            ..DemoSpec::default()
        })
        .is_err());
    }
}
