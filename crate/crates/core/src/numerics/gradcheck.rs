//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{MadtError, Result};

fn scalar_output(g: &Graph, out: Var) -> Result<f64> {
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(MadtError::Contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Maximum over components of `|analytic − fd| / max(1, |fd|)` where `fd` is
/// the central difference with step `eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(
        |g: &mut Graph, vars: &[Var]| f(g, vars[0]),
        std::slice::from_ref(x),
        eps,
    )
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(MadtError::Contract(format!("eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_output(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_output(&g, out)
    };

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (t, grads) in analytic.iter().enumerate() {
        for i in 0..xs[t].numel() {
            let orig = xs[t].data()[i];
            probe[t].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[t].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[t].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let err = (grads[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
