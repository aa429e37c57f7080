//! Central finite-difference gradient checking.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    /// Coordinates sampled per parameter; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub worst: Option<String>,
}

/// Compares autodiff gradients of `f` with central differences for every
/// named parameter `f` registers.
pub fn grad_check<F>(store: &ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    let analytic = {
        let g = Graph::new();
        let root = f(&g, store)?;
        check_finite(root.item())?;
        g.backward(root)?.by_name()
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let g = Graph::new();
        let v = f(&g, s)?.item();
        check_finite(v)?;
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut per_param = BTreeMap::new();
    let mut max_rel_error = 0.0_f64;
    let mut worst = None;
    for (name, grad) in &analytic {
        let n = grad.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut param_max = 0.0_f64;
        for i in coords {
            let orig = work.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + opts.step;
            let up = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - opts.step;
            let down = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            param_max = param_max.max(rel);
        }
        if worst.is_none() || param_max > max_rel_error {
            max_rel_error = param_max;
            worst = Some(name.clone());
        }
        per_param.insert(name.clone(), param_max);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        worst,
    })
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("objective evaluated to {v}")))
    }
}
