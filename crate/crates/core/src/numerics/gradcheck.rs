//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only ever calls the forward closure, so it stays
//! independent of every backward rule it is checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Denominator guard in the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
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

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + REL_FLOOR)
}

/// Checks the gradient of the scalar `f(inputs)` with respect to randomly
/// chosen input elements.
pub fn check_inputs<F>(
    inputs: &[Tensor],
    probes: usize,
    step: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss, &mut ParamStore::new())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for _ in 0..probes {
        let input = rng.random_range(0..inputs.len());
        let element = rng.random_range(0..inputs[input].numel());
        let analytic = g.grad(vars[input]).map_or(0.0, |gr| gr[element]);
        let orig = work[input].data()[element];
        work[input].data_mut()[element] = orig + step;
        let plus = eval(&work)?;
        work[input].data_mut()[element] = orig - step;
        let minus = eval(&work)?;
        work[input].data_mut()[element] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        report.probes.push(Probe {
            input,
            element,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric),
        });
    }
    Ok(report)
}

/// Checks parameter gradients of a loss built from `store`. The closure may
/// mutate non-trainable state (batch-norm running statistics); the store is
/// restored before every numeric evaluation.
pub fn check_params<F>(
    store: &ParamStore,
    probes: usize,
    step: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &mut ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut s = s.clone();
        let mut g = Graph::new();
        let out = f(&mut g, &mut s)?;
        g.value(out).item()
    };

    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, &mut analytic_store)?;
    g.backward(loss, &mut analytic_store)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for _ in 0..probes {
        let input = rng.random_range(0..store.len());
        let element = rng.random_range(0..store.by_id(input).tensor.numel());
        let analytic = analytic_store
            .by_id(input)
            .tensor
            .grad
            .as_ref()
            .map_or(0.0, |gr| gr[element]);
        let orig = work.by_id(input).tensor.data()[element];
        work.by_id_mut(input).tensor.data_mut()[element] = orig + step;
        let plus = eval(&work)?;
        work.by_id_mut(input).tensor.data_mut()[element] = orig - step;
        let minus = eval(&work)?;
        work.by_id_mut(input).tensor.data_mut()[element] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        report.probes.push(Probe {
            input,
            element,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric),
        });
    }
    Ok(report)
}

/// Random tensor with entries uniform in `[lo, hi)`.
pub fn random_tensor(shape: [usize; 4], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Fixed random weighting so that `sum(w * y)` exercises every output.
pub fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = g.shape(y);
    let w = g.constant(Tensor::from_fn(s, |_, _, _, _| rng.random_range(0.5..1.5)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}
