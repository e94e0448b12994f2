//! Central finite-difference checking of graph gradients.

use super::graph::{Graph, Var};
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of checking one input tensor.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` over the probed
    /// entries; 0 when both norms vanish.
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub probed: usize,
}

/// Which entries of each input to probe.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// At most this many entries per input, chosen by the given seed.
    Sample { per_input: usize, seed: u64 },
}

/// Compares the gradient of the scalar `f(inputs)` obtained by `backward`
/// against central differences with step `h`, input by input.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, probe: Probe, f: F) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).expect("inputs require grad"))
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut results = Vec::with_capacity(inputs.len());
    for (which, grad) in analytic.iter().enumerate() {
        let n = inputs[which].numel();
        let entries: Vec<usize> = match probe {
            Probe::All => (0..n).collect(),
            Probe::Sample { per_input, seed } => {
                if n <= per_input {
                    (0..n).collect()
                } else {
                    let mut rng = RngStream::new(seed).derive(which as u64);
                    let mut idx: Vec<usize> = (0..n).collect();
                    rng.shuffle(&mut idx);
                    idx.truncate(per_input);
                    idx.sort_unstable();
                    idx
                }
            }
        };
        let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
        for &e in &entries {
            let orig = work[which].data()[e];
            work[which].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[which].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[which].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[e];
            diff += (a - numeric) * (a - numeric);
            an += a * a;
            nn += numeric * numeric;
        }
        let (diff, an, nn) = (diff.sqrt(), an.sqrt(), nn.sqrt());
        let denom = an + nn;
        results.push(GradCheck {
            relative_error: if denom < 1e-12 { diff } else { diff / denom },
            analytic_norm: an,
            numeric_norm: nn,
            probed: entries.len(),
        });
    }
    Ok(results)
}

/// Largest relative error across inputs.
pub fn worst(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.relative_error).fold(0.0, f64::max)
}
