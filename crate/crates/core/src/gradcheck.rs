//! Loss/gradient evaluation over a flat parameter list, and the central
//! finite-difference checker used to validate it.

use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One gradient per parameter tensor, shape-matched and in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: Vec<Tensor>,
}

impl GradientSet {
    pub fn new(grads: Vec<Tensor>) -> Self {
        Self { grads }
    }

    pub fn as_slice(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tensor> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Evaluates `loss_fn` with every parameter registered as a graph leaf and
/// returns the loss together with its gradient w.r.t. each parameter.
///
/// `loss_fn` receives the leaf vars in the same order as `params`.
pub fn loss_and_grads<F>(params: &[&Tensor], loss_fn: F) -> Result<(f64, GradientSet)>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf((*p).clone())).collect();
    let loss = loss_fn(&g, &vars)?;
    let mut grads = g.backward(loss)?;
    let value = g.scalar_value(loss);
    Ok((value, GradientSet::new(vars.iter().map(|&v| grads.take(v)).collect())))
}

fn loss_only<F>(params: &[Tensor], loss_fn: &F) -> Result<f64>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = loss_fn(&g, &vars)?;
    g.check()?;
    Ok(g.scalar_value(loss))
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_err: f64,
    pub worst_element: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`; two exact zeros compare equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares analytic gradients against `(f(θ+h) − f(θ−h)) / 2h` for every
/// parameter element. Mismatches are reported, not raised.
pub fn finite_diff_check<F>(params: &[&Tensor], loss_fn: F, step: f64, tol: f64) -> Result<FiniteDiffReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    if step.is_nan() || tol.is_nan() || step <= 0.0 || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite_diff_check needs step > 0 and tol > 0 (got {step}, {tol})"
        )));
    }
    let (_, analytic) = loss_and_grads(params, &loss_fn)?;
    let mut work: Vec<Tensor> = params.iter().map(|p| (*p).clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (index, grad) in analytic.iter().enumerate() {
        let mut worst = (0.0f64, 0usize);
        for k in 0..grad.numel() {
            let orig = work[index].data()[k];
            work[index].data_mut()[k] = orig + step;
            let plus = loss_only(&work, &loss_fn)?;
            work[index].data_mut()[k] = orig - step;
            let minus = loss_only(&work, &loss_fn)?;
            work[index].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad.data()[k], numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, k);
            }
        }
        checks.push(ParamCheck {
            index,
            max_rel_err: worst.0,
            worst_element: worst.1,
            passed: worst.0 <= tol,
        });
    }
    let max_rel_err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(FiniteDiffReport {
        max_rel_err,
        passed: checks.iter().all(|c| c.passed),
        params: checks,
    })
}
