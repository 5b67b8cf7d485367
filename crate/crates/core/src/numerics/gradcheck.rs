//! Central finite-difference verification of tape gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Probe at most this many coordinates per tensor; `None` probes all of them.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tolerance: 1e-3,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub tensor: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn coords_checked(&self) -> usize {
        self.tensors.iter().map(|t| t.coords_checked).sum()
    }
}

/// `|a - b| / max(1, |a|, |b|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares tape gradients of `loss` against central differences.
///
/// `loss` builds a scalar on the tape it is given from one [`Var`] per entry
/// of `params`. It is evaluated once with backward, then twice per probed
/// coordinate without.
pub fn finite_diff_check<F>(loss: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var> + Sync,
{
    if params.is_empty() {
        return Ok(GradCheckReport {
            tensors: Vec::new(),
            max_rel_error: 0.0,
            tolerance: opts.tolerance,
            passed: true,
        });
    }

    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let out = loss(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probes = Vec::new();
    for (i, p) in params.iter().enumerate() {
        let n = p.numel();
        match opts.max_coords_per_tensor {
            Some(k) if k < n => {
                let mut picked = index::sample(&mut rng, n, k).into_vec();
                picked.sort_unstable();
                probes.extend(picked.into_iter().map(|j| (i, j)));
            }
            _ => probes.extend((0..n).map(|j| (i, j))),
        }
    }

    let evaluate = |tensor: usize, coord: usize, delta: f64| -> Result<f64> {
        let mut shifted = params[tensor].clone();
        let v = shifted.data()[coord] + delta;
        shifted.set_flat(coord, v)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if k == tensor {
                    tape.constant(shifted.clone())
                } else {
                    tape.constant_ref(p)
                }
            })
            .collect();
        let out = loss(&mut tape, &vars)?;
        let value = tape.value(out).item();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite { op: "loss" })
        }
    };

    let errors: Vec<f64> = probes
        .par_iter()
        .map(|&(i, j)| {
            let probe = || -> Result<f64> {
                let plus = evaluate(i, j, opts.eps)?;
                let minus = evaluate(i, j, -opts.eps)?;
                Ok((plus - minus) / (2.0 * opts.eps))
            };
            let numeric = probe().map_err(|e| Error::GradCheckProbe {
                tensor: i,
                coord: j,
                source: Box::new(e),
            })?;
            Ok(relative_error(analytic[i].data()[j], numeric))
        })
        .collect::<Result<_>>()?;

    let mut tensors: Vec<TensorCheck> = (0..params.len())
        .map(|i| TensorCheck {
            tensor: i,
            coords_checked: 0,
            max_rel_error: 0.0,
            worst_coord: 0,
        })
        .collect();
    for (&(i, j), &err) in probes.iter().zip(&errors) {
        let t = &mut tensors[i];
        t.coords_checked += 1;
        if err > t.max_rel_error || t.coords_checked == 1 {
            t.max_rel_error = err;
            t.worst_coord = j;
        }
    }
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance,
    })
}
