use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Tape, Tensor, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink.
    pub skipped: usize,
    /// The base point sits exactly on a tie; nothing was checked.
    pub nonsmooth: bool,
}

struct Eval {
    value: f64,
    signature: u64,
    ties: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<Eval, AutodiffError>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, AutodiffError>,
{
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let value = out.item();
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite);
    }
    Ok(Eval {
        value,
        signature: tape.kink_signature(),
        ties: tape.ties(),
    })
}

/// Check every coordinate of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], h: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, AutodiffError>,
{
    grad_check_sampled(f, params, h, usize::MAX, 0)
}

/// Check up to `per_param` randomly chosen coordinates of each parameter.
pub fn grad_check_sampled<F>(
    f: F,
    params: &[Tensor<f64>],
    h: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, AutodiffError>,
{
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&tape, &vars)?;
    if !out.item().is_finite() {
        return Err(AutodiffError::NonFinite);
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        nonsmooth: false,
    };
    if tape.ties() > 0 {
        report.nonsmooth = true;
        report.skipped = params.iter().map(|p| p.len()).sum();
        return Ok(report);
    }
    let base_signature = tape.kink_signature();
    let analytic = tape.backward(out, &vars)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        let n = params[pi].len();
        let coords: Vec<usize> = if per_param >= n {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, per_param).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let original = work[pi].data()[c];
            work[pi].data_mut()[c] = original + h;
            let plus = evaluate(&f, &work)?;
            work[pi].data_mut()[c] = original - h;
            let minus = evaluate(&f, &work)?;
            work[pi].data_mut()[c] = original;
            if plus.signature != base_signature
                || minus.signature != base_signature
                || plus.ties + minus.ties > 0
            {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * h);
            let a = grad.data()[c];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
