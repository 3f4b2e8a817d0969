//! Central finite-difference gradient checking in 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Perturbation used for `(f(x+eps) - f(x-eps)) / (2 eps)`.
    pub eps: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to finite-difference noise do not blow the ratio up.
    pub abs_floor: f64,
    /// Check at most this many coordinates per input (chosen at random).
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            abs_floor: 1e-4,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

/// Worst coordinate found by [`gradient_check_report`].
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Maximum elementwise relative error between the analytic gradient of the
/// scalar `f(inputs)` and central finite differences.
pub fn gradient_check<F>(f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    gradient_check_report(f, inputs, opts).map(|r| r.max_rel_error)
}

pub fn gradient_check_report<F>(
    f: F,
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(Tensor::requiring_grad).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::dim(
            "gradient_check",
            format!("function must return a scalar, got shape {:?}", out.shape()),
        ));
    }
    let grads = out.backward();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();

    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < leaf.numel() => {
                let mut c = sample(&mut rng, leaf.numel(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..leaf.numel()).collect(),
        };
        for idx in coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = leaf.data().to_vec();
                data[idx] += delta;
                let mut args: Vec<Tensor<f64>> = leaves.iter().map(Tensor::detach).collect();
                args[which] = Tensor::new(leaf.shape(), data)?;
                Ok(f(&args)?.item())
            };
            let numeric = (eval(opts.eps)? - eval(-opts.eps)?) / (2.0 * opts.eps);
            let a = analytic[idx];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.coords_checked == 1 {
                report.max_rel_error = rel;
                report.worst_input = which;
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
