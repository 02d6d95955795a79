use std::ops::Sub;

use super::tensor::Tensor;
use crate::error::Result;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub index: usize,
    pub max_rel_error: f64,
    /// Flat offset of the worst entry, with its analytic and numeric values.
    pub worst: (usize, f64, f64),
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.tol)
    }
}

/// Finite-difference scheme used by [`grad_check_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h^2)`.
    Central,
    /// Richardson extrapolation of central differences at `h` and `h/2`,
    /// error `O(h^4)`.
    Richardson,
}

/// Compares analytic gradients against central differences.
///
/// `f` returns the loss and its analytic gradient for each tensor in
/// `params`. Every entry of every tensor is perturbed by `±h`. The loss
/// may be any type whose differences convert to `f64`, so a caller can
/// evaluate it in extended precision and keep rounding noise out of the
/// difference quotient.
pub fn grad_check<F, L>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(L, Vec<Tensor>)>,
    L: Copy + Sub<Output = L> + Into<f64>,
{
    grad_check_with(f, params, h, tol, Scheme::Central)
}

pub fn grad_check_with<F, L>(f: F, params: &[Tensor], h: f64, tol: f64, scheme: Scheme) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(L, Vec<Tensor>)>,
    L: Copy + Sub<Output = L> + Into<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (_, analytic) = f(params)?;
    let mut work = params.to_vec();
    let central = |work: &mut Vec<Tensor>, ti: usize, k: usize, step: f64| -> Result<f64> {
        let orig = work[ti].data()[k];
        work[ti].data_mut()[k] = orig + step;
        let plus = f(work)?.0;
        work[ti].data_mut()[k] = orig - step;
        let minus = f(work)?.0;
        work[ti].data_mut()[k] = orig;
        Ok((plus - minus).into() / (2.0 * step))
    };
    let mut tensors = Vec::with_capacity(params.len());
    for (ti, grad) in analytic.iter().enumerate() {
        let mut check = TensorCheck {
            index: ti,
            max_rel_error: 0.0,
            worst: (0, 0.0, 0.0),
        };
        for k in 0..params[ti].numel() {
            let numeric = match scheme {
                Scheme::Central => central(&mut work, ti, k, h)?,
                Scheme::Richardson => {
                    let coarse = central(&mut work, ti, k, h)?;
                    let fine = central(&mut work, ti, k, h / 2.0)?;
                    (4.0 * fine - coarse) / 3.0
                }
            };
            let a = grad.data()[k];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst = (k, a, numeric);
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors, tol })
}
