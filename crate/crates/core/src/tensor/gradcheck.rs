use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding do not blow the ratio up.
const REL_FLOOR: f64 = 1e-6;

/// Tape gradients next to central-difference estimates.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub max_abs_err: f64,
    /// `max |a - n| / max(|a|, |n|, 1e-6)` over every input element.
    pub max_rel_err: f64,
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::invalid(format!(
            "gradient check needs a scalar output, got shape {:?}",
            g.shape(out)
        )));
    }
    Ok((g, vars, out))
}

/// Check the tape gradient of a scalar function built by `f` against
/// central differences with step `eps`.
///
/// `f` receives one tracked variable per entry in `inputs` and must return
/// a single-element result.
pub fn finite_diff_grad<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::invalid(format!("step {eps} outside [1e-7, 1e-4]")));
    }
    let (g, vars, out) = eval(&f, inputs)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let scalar_at = |xs: &[Tensor]| -> Result<f64> {
        let (g, _, out) = eval(&f, xs)?;
        g.value(out).item()
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut est = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + eps;
            let fp = scalar_at(&work)?;
            work[i].data_mut()[j] = x0 - eps;
            let fm = scalar_at(&work)?;
            work[i].data_mut()[j] = x0;
            est.data_mut()[j] = (fp - fm) / (2.0 * eps);
        }
        numeric.push(est);
    }

    let mut max_abs_err: f64 = 0.0;
    let mut max_rel_err: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&a, &n) in a.data().iter().zip(n.data()) {
            let d = (a - n).abs();
            max_abs_err = max_abs_err.max(d);
            max_rel_err = max_rel_err.max(d / a.abs().max(n.abs()).max(REL_FLOOR));
        }
    }
    Ok(GradReport {
        analytic,
        numeric,
        max_abs_err,
        max_rel_err,
    })
}
