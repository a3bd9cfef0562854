//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of the backward rules it checks.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

/// Denominator floor for the relative error. Central differences with
/// `h = 1e-5` carry roughly `1e-11` of round-off for O(1) losses, so ratios
/// of gradients much smaller than this floor are noise.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares backprop gradients against central differences with step `h` at
/// `n_probes` randomly chosen parameter entries.
pub fn check<F>(
    params: &ParamStore,
    loss_fn: F,
    n_probes: usize,
    h: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    check_selected(params, loss_fn, n_probes, h, rng, |_| true)
}

/// Like [`check`], but probes only parameters whose name passes `select`.
/// The loss still sees every parameter.
pub fn check_selected<F>(
    params: &ParamStore,
    loss_fn: F,
    n_probes: usize,
    h: f64,
    rng: &mut impl Rng,
    select: impl Fn(&str) -> bool,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let loss = loss_fn(&tape, &bound)?;
    let grads = bound.grads(&tape.backward(loss)?);

    let chosen: Vec<(&String, usize)> = params
        .iter()
        .filter(|(k, _)| select(k))
        .map(|(k, v)| (k, v.numel()))
        .collect();
    let names: Vec<&String> = chosen.iter().map(|c| c.0).collect();
    let sizes: Vec<usize> = chosen.iter().map(|c| c.1).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::contract("no parameter selected for gradient checking"));
    }

    let eval = |p: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let bound = p.bind(&tape);
        Ok(loss_fn(&tape, &bound)?.item())
    };

    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        // uniform over all scalars, so big matrices get proportionally more probes
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let name = names[which].clone();

        let mut plus = params.clone();
        plus.get_mut(&name).unwrap().data_mut()[flat] += h;
        let mut minus = params.clone();
        minus.get_mut(&name).unwrap().data_mut()[flat] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let analytic = grads.get(&name).map_or(0.0, |g| g.data()[flat]);
        probes.push(Probe {
            rel_err: relative_error(analytic, numeric),
            param: name,
            index: flat,
            analytic,
            numeric,
        });
    }
    Ok(GradCheckReport { probes })
}
