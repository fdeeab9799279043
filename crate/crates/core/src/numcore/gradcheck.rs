use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference step.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks reverse-mode gradients of a scalar-valued graph function against
/// central differences on every coordinate of every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = ids.iter().map(|&id| grads.get(id)).collect();
    let value = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &ids)?;
        Ok(g.value(out).data()[0])
    };
    compare_gradients(value, &analytic, inputs, tol)
}

/// Compares supplied analytic gradients with central differences of `value`.
pub fn compare_gradients<V>(
    value: V,
    analytic: &[Tensor<f64>],
    inputs: &[Tensor<f64>],
    tol: f64,
) -> Result<GradcheckReport>
where
    V: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    if analytic.len() != inputs.len() {
        return Err(Error::contract("one analytic gradient per input expected"));
    }
    let mut report = GradcheckReport {
        passed: true,
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut xs = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        if grad.dims() != inputs[i].dims() {
            return Err(Error::Shape {
                op: "gradcheck",
                lhs: inputs[i].dims().to_vec(),
                rhs: grad.dims().to_vec(),
            });
        }
        for k in 0..inputs[i].len() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + STEP;
            let plus = value(&xs)?;
            xs[i].data_mut()[k] = orig - STEP;
            let minus = value(&xs)?;
            xs[i].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * STEP);
            let a = grad.data()[k];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((i, k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tol && report.max_rel_error.is_finite();
    Ok(report)
}
