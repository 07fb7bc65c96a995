use super::{Graph, NodeId, ParamSet};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
}

/// Max relative error between reverse-mode gradients and central differences.
///
/// `build` must construct the loss from scratch on the given graph, binding
/// parameters by name from the supplied set.
pub fn finite_diff_check<F>(build: F, params: &ParamSet, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    finite_diff_report(build, params, eps).map(|r| r.max_rel_error)
}

pub fn finite_diff_report<F>(build: F, params: &ParamSet, eps: f64) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("eps must be in (0, 1e-2], got {eps}")));
    }
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, p)?;
        let v = g.value(loss);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.dims().to_vec()));
        }
        Ok(v.item())
    };

    let mut graph = Graph::new();
    let loss = build(&mut graph, params)?;
    let analytic = graph.gradients(loss, params)?;
    let first = graph.scalar(loss);
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut work = params.clone();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let grad = analytic[name].data();
        for i in 0..grad.len() {
            let orig = work.get(name).expect("param present").data()[i];
            work.data_mut(name).expect("param present")[i] = orig + eps;
            let plus = eval(&work)?;
            work.data_mut(name).expect("param present")[i] = orig - eps;
            let minus = eval(&work)?;
            work.data_mut(name).expect("param present")[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
