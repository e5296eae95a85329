//! Central finite-difference gradient checks in f64.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over the
    /// checked coordinates (0 when both are zero).
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares the tape's gradient of `build(graph, inputs)` against central
/// differences with step `eps`, checking up to `per_input` randomly chosen
/// coordinates of each input.
pub fn gradcheck<F, R, E>(
    inputs: &[Tensor<f64>],
    build: F,
    eps: f64,
    per_input: usize,
    rng: &mut R,
) -> Result<GradcheckReport, E>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var, E>,
    R: Rng + ?Sized,
    E: From<NnError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, E> {
        let g = Graph::<f64>::new();
        let vars = xs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = build(&g, &vars)?;
        let v = g.value(out).item();
        Ok(v)
    };

    let g = Graph::<f64>::new();
    let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&g, &vars)?;
    let grads = g.backward(out)?;

    let (mut diff2, mut a2, mut n2, mut max_abs, mut count) = (0.0, 0.0, 0.0, 0.0f64, 0);
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.shape());
        let n = input.numel();
        for i in sample(rng, n, per_input.min(n)) {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
            count += 1;
        }
    }
    let denom = a2.sqrt().max(n2.sqrt());
    Ok(GradcheckReport {
        relative_error: if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom },
        max_abs_error: max_abs,
        coordinates: count,
    })
}
