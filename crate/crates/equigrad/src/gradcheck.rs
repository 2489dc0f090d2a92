//! Central-difference gradient verification.
//!
//! The numerical side only ever runs forward passes, so it stays independent
//! of the backward implementation it is checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub rel_tolerance: f64,
    /// Coordinates whose analytic and numerical magnitudes both sit below
    /// this floor are treated as matching zeros.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tolerance: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub pass: bool,
    /// Set when a probe point produced a non-finite value; names the
    /// offending coordinate.
    pub failure: Option<String>,
}

/// Checks the analytic gradient of `build` (a scalar-valued graph function of
/// one tensor input) against central differences at `point`.
///
/// The report passes when the worst relative error is within tolerance or
/// the worst absolute error is below the floor.
pub fn finite_difference_check<F>(
    op_name: &str,
    point: &Tensor,
    cfg: &GradCheckConfig,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    // Analytic gradient through one forward + backward.
    let grad_point = point.clone().with_grad();
    let mut g = Graph::new();
    let leaf = g.leaf(&grad_point)?;
    let root = build(&mut g, leaf)?;
    g.backward(root)?;
    let analytic = g.grad(leaf)?.to_vec();

    let eval = |data: &[f64]| -> Result<f64> {
        let probe = Tensor::new(point.shape().to_vec(), data.to_vec())?;
        let mut g = Graph::new();
        let leaf = g.leaf(&probe)?;
        let root = build(&mut g, leaf)?;
        g.scalar(root)
    };

    let mut report = GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        pass: false,
        failure: None,
    };
    let mut data = point.data().to_vec();
    for i in 0..data.len() {
        let saved = data[i];
        data[i] = saved + cfg.step;
        let up = eval(&data);
        data[i] = saved - cfg.step;
        let down = eval(&data);
        data[i] = saved;
        let (up, down) = match (up, down) {
            (Ok(u), Ok(d)) => (u, d),
            _ => {
                report.failure = Some(format!("non-finite value at coordinate {i}"));
                return Ok(report);
            }
        };
        let numerical = (up - down) / (2.0 * cfg.step);
        let abs = (analytic[i] - numerical).abs();
        let denom = analytic[i].abs().max(numerical.abs());
        let rel = if denom < cfg.abs_floor {
            0.0
        } else {
            abs / denom
        };
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(rel);
    }
    report.pass = report.max_rel_err <= cfg.rel_tolerance || report.max_abs_err <= cfg.abs_floor;
    Ok(report)
}
