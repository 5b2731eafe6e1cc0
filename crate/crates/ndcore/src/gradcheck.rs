//! Central finite-difference verification of tape gradients.

use crate::error::{NdError, Result};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(NdError::Invalid(format!("epsilon {eps} outside [1e-6, 1e-4]")));
    }
    Ok(())
}

fn scalar_of<T: Scalar>(tape: &Tape<T>, v: Var) -> Result<f64> {
    let value = tape.value(v);
    if value.len() != 1 {
        return Err(NdError::NonScalarLoss(value.shape().to_vec()));
    }
    let x = value.item().to_f64_lossy();
    if !x.is_finite() {
        return Err(NdError::NonFinite(format!("function value {x}")));
    }
    Ok(x)
}

/// Compares the tape gradient of a scalar function of `inputs` against central
/// differences and returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn gradient_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |vals: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.input(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.input(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.wrt(*var) {
            Some(g) => g.iter().map(|v| v.to_f64_lossy()).collect(),
            None => vec![0.0; inputs[k].len()],
        };
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + lit(eps);
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - lit(eps);
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Gradient check over the trainable parameters of a store. When
/// `max_per_param` is set, larger tensors are probed at evenly spaced
/// coordinates instead of exhaustively.
pub fn gradient_check_params<T, F>(
    store: &mut ParamStore<T>,
    f: F,
    eps: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>,
{
    check_eps(eps)?;
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?.accumulate_into(&tape, store);
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.to_f64_vec()).collect();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        scalar_of(&tape, out)
    };
    for id in ids {
        let n = store.get(id).value.len();
        let coords: Vec<usize> = match max_per_param {
            Some(m) if n > m => (0..m).map(|j| j * n / m + (n / m) / 2).collect(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + lit(eps);
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - lit(eps);
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let e = rel_err(analytic[id.0][i], numeric);
            report.coordinates += 1;
            if e > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(e);
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
