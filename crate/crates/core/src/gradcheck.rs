//! Central-difference gradient checking.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maximum relative disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input, element)` where the maximum occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn evaluate<F>(build: &F, inputs: &[Tensor]) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|t| g.variable(t.shape().to_vec(), t.data().to_vec()))
        .collect::<Result<_>>()?;
    let root = build(&g, &vars)?;
    let value = root.item();
    let grads = g.backward(root)?;
    let per_input = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    Ok((value, per_input))
}

fn value_at<F>(build: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|t| g.constant(t.shape().to_vec(), t.data().to_vec()))
        .collect::<Result<_>>()?;
    let root = build(&g, &vars)?;
    if root.numel() != 1 {
        return Err(Error::NonScalarRoot(root.shape()));
    }
    Ok(root.item())
}

/// Compares reverse-mode gradients of a scalar-valued `build` against central
/// differences with step `eps`, over every element of every input.
///
/// The error per element is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |e| (i, e)))
        .collect();
    grad_check_subset(build, inputs, eps, &all).map(|r| r.max_relative_error)
}

/// Like [`grad_check`] but only perturbs the listed `(input, element)` pairs.
pub fn grad_check_subset<F>(
    build: F,
    inputs: &[Tensor],
    eps: f64,
    subset: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid(format!("eps must lie in (0, 1e-3], got {eps}")));
    }
    let (value, analytic) = evaluate(&build, inputs)?;
    if !value.is_finite() {
        return Err(Error::invalid(format!("non-finite value {value} at the unperturbed point")));
    }
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for &(i, e) in subset {
        if i >= work.len() || e >= work[i].numel() {
            return Err(Error::invalid(format!("perturbation index ({i}, {e}) out of range")));
        }
        let orig = work[i].data()[e];
        work[i].data_mut()[e] = orig + eps;
        let plus = value_at(&build, &work)?;
        work[i].data_mut()[e] = orig - eps;
        let minus = value_at(&build, &work)?;
        work[i].data_mut()[e] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinitePerturbation { input: i, index: e });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i][e];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        report.checked += 1;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = (i, e);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let x = Tensor::new(vec![1], vec![2.0]).unwrap();
        let err = grad_check(|_, v| Ok(v[0].scale(3.0).sum()), &[x], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn gelu_at_half() {
        let x = Tensor::new(vec![1], vec![0.5]).unwrap();
        let err = grad_check(|_, v| Ok(v[0].gelu().sum()), &[x], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::new(vec![1], vec![2.0]).unwrap();
        assert!(grad_check(|_, v| Ok(v[0].sum()), std::slice::from_ref(&x), 0.0).is_err());
        assert!(grad_check(|_, v| Ok(v[0].sum()), &[x], 1e-2).is_err());
    }

    #[test]
    fn reports_non_finite_perturbation() {
        // ln(x) at x = 5e-6 is fine, but x - eps < 0 is not.
        let x = Tensor::new(vec![2], vec![1.0, 5e-6]).unwrap();
        let err = grad_check(|_, v| Ok(v[0].ln().sum()), &[x], 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFinitePerturbation { input: 0, index: 1 }), "{err}");
    }
}
