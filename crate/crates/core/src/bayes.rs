//! Gaussian recurrent weights, the variational objective, the
//! freeze/unfreeze schedule and Monte-Carlo uncertainty bands.
//!
//! Only the recurrent update weights (`rnn.w`, `rnn.u`, `rnn.b`) become
//! Gaussian. Each is stored as a `name.mu` / `name.rho` pair with standard
//! deviation `softplus(rho)`; the prior is `N(0, prior_std^2)` per weight.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binder::SampledWeight;
use crate::brits::RECURRENT;
use crate::data::splitmix64;
use crate::error::{Error, Result};
use crate::tensor::{softplus, Array, ParamStore, Var};

pub const DEFAULT_RHO: f64 = -5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParam {
    pub mu: Array,
    pub rho: Array,
}

impl GaussianParam {
    pub fn std(&self) -> Array {
        self.rho.map(softplus)
    }
}

/// `mu + softplus(rho) * xi`, `xi ~ N(0, 1)` elementwise.
pub fn sample_weights(param: &GaussianParam, rng: &mut impl Rng) -> Array {
    let xi = Array::from_fn(param.mu.shape(), |_| StandardNormal.sample(rng));
    let mut w = param.mu.clone();
    for ((w, &r), &x) in w.data_mut().iter_mut().zip(param.rho.data()).zip(xi.data()) {
        *w += softplus(r) * x;
    }
    w
}

fn is_recurrent(name: &str) -> bool {
    RECURRENT.iter().any(|r| name.ends_with(&format!(".{r}")) || name == *r)
}

/// Replaces every recurrent weight `name` by `name.mu` (its current value) and
/// `name.rho` (filled with `rho`). Returns the converted names.
pub fn convert_to_bayesian(store: &mut ParamStore, rho: f64) -> Vec<String> {
    let names: Vec<String> = store.names().filter(|n| is_recurrent(n)).cloned().collect();
    for n in &names {
        let mu = store.remove(n).expect("listed name");
        store.insert(format!("{n}.rho"), Array::full(mu.shape(), rho));
        store.insert(format!("{n}.mu"), mu);
    }
    names
}

/// Gaussian parameters of a store, keyed by base name.
pub fn gaussian_params(store: &ParamStore) -> Vec<(String, GaussianParam)> {
    store
        .names()
        .filter_map(|n| n.strip_suffix(".mu"))
        .filter_map(|base| {
            let mu = store.get(&format!("{base}.mu")).ok()?.clone();
            let rho = store.get(&format!("{base}.rho")).ok()?.clone();
            Some((base.to_string(), GaussianParam { mu, rho }))
        })
        .collect()
}

pub fn is_bayesian(store: &ParamStore) -> bool {
    store.names().any(|n| n.ends_with(".rho"))
}

/// `KL(N(mu, softplus(rho)^2) || N(0, prior_std^2))`, summed over elements.
pub fn kl_closed_form(param: &GaussianParam, prior_std: f64) -> f64 {
    let vp = prior_std * prior_std;
    param
        .mu
        .data()
        .iter()
        .zip(param.rho.data())
        .map(|(&m, &r)| {
            let s = softplus(r);
            (prior_std / s).ln() + (s * s + m * m) / (2.0 * vp) - 0.5
        })
        .sum()
}

fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - std.ln() - 0.5 * z * z
}

/// Monte-Carlo estimate of the same divergence from `n` posterior draws.
pub fn kl_monte_carlo(param: &GaussianParam, prior_std: f64, n: usize, rng: &mut impl Rng) -> f64 {
    let std = param.std();
    let mut total = 0.0;
    for _ in 0..n {
        for (&m, &s) in param.mu.data().iter().zip(std.data()) {
            let xi: f64 = StandardNormal.sample(rng);
            let w = m + s * xi;
            total += log_normal(w, m, s) - log_normal(w, 0.0, prior_std);
        }
    }
    total / n as f64
}

/// Single-draw estimate `sum [log Q(w) - log P(w)] / n_batches` as a graph
/// node, differentiable in every `mu` and `rho` through the sampled weights.
pub fn kl_term<'g>(
    sampled: &[(String, SampledWeight<'g>)],
    prior_std: f64,
    n_batches: usize,
) -> Result<Option<Var<'g>>> {
    if n_batches == 0 {
        return Err(Error::InvalidArgument("n_batches must be at least 1".into()));
    }
    let mut total: Option<Var<'g>> = None;
    for (_, s) in sampled {
        let std = s.rho.softplus();
        let (w, mu, sd) = (s.weight.value(), s.mu.value(), std.value());
        let xi_sq: f64 = w
            .data()
            .iter()
            .zip(mu.data())
            .zip(sd.data())
            .map(|((w, m), s)| ((w - m) / s).powi(2))
            .sum();
        // log Q = -log sigma - xi^2 / 2, log P = -log sigma_p - w^2 / (2 sigma_p^2);
        // the 2 pi constants cancel.
        let n = w.len() as f64;
        let log_q = std.log().sum().neg().shift(-0.5 * xi_sq);
        let log_p = s
            .weight
            .square()
            .sum()
            .scale(-0.5 / (prior_std * prior_std))
            .shift(-n * prior_std.ln());
        let kl = log_q.sub(log_p)?;
        total = Some(match total {
            Some(t) => t.add(kl)?,
            None => kl,
        });
    }
    Ok(total.map(|t| t.scale(1.0 / n_batches as f64)))
}

/// Variational objective: data term plus the divergence estimate.
pub fn elbo_loss<'g>(
    data_loss: Var<'g>,
    sampled: &[(String, SampledWeight<'g>)],
    prior_std: f64,
    n_batches: usize,
) -> Result<Var<'g>> {
    match kl_term(sampled, prior_std, n_batches)? {
        Some(kl) => data_loss.add(kl),
        None => Ok(data_loss),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSchedule {
    pub every: u64,
    /// Consecutive open steps at the start of each period.
    pub window: u64,
}

impl Default for FreezeSchedule {
    fn default() -> Self {
        FreezeSchedule {
            every: 100,
            window: 1,
        }
    }
}

impl FreezeSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.every == 0 || self.window == 0 || self.window > self.every {
            return Err(Error::Config(format!(
                "invalid unfreeze schedule: every {} window {}",
                self.every, self.window
            )));
        }
        Ok(())
    }

    /// Open iff `step % every < window`; steps count from 1.
    pub fn is_open(&self, step: u64) -> bool {
        step % self.every < self.window
    }
}

/// Seed of simulation `index` under a root seed.
pub fn simulation_seed(root: u64, index: usize) -> u64 {
    splitmix64(root ^ splitmix64(index as u64 + 1))
}

/// Per-cell statistics over Monte-Carlo simulations, all `[B, T, D]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBand {
    pub n_sim: usize,
    pub mean: Array,
    pub std: Array,
    pub q05: Array,
    pub q95: Array,
    /// `min(q05, mean)` and `max(q95, mean)`.
    pub lower: Array,
    pub upper: Array,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

impl UncertaintyBand {
    /// Aggregates simulations cell by cell; the result does not depend on the
    /// order of `sims`.
    pub fn from_simulations(sims: &[Array]) -> Result<Self> {
        let first = sims
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one simulation is required".into()))?;
        let shape = first.shape().to_vec();
        if let Some(bad) = sims.iter().find(|s| s.shape() != shape.as_slice()) {
            return Err(Error::shape("mc_predict", &[&shape, bad.shape()]));
        }
        let n = sims.len();
        let cells = first.len();
        let mut out: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(cells));
        let mut v = vec![0.0; n];
        for c in 0..cells {
            for (slot, s) in v.iter_mut().zip(sims) {
                *slot = s.data()[c];
            }
            v.sort_by(f64::total_cmp);
            let base = v[0];
            let mean = base + v.iter().map(|x| x - base).sum::<f64>() / n as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let (q05, q95) = (quantile(&v, 0.05), quantile(&v, 0.95));
            out[0].push(mean);
            out[1].push(var.sqrt());
            out[2].push(q05);
            out[3].push(q95);
            out[4].push(q05.min(mean));
            out[5].push(q95.max(mean));
        }
        let [mean, std, q05, q95, lower, upper] =
            out.map(|d| Array::new(&shape, d).expect("cell count"));
        Ok(UncertaintyBand {
            n_sim: n,
            mean,
            std,
            q05,
            q95,
            lower,
            upper,
        })
    }

    pub fn max_width(&self) -> f64 {
        self.upper
            .data()
            .iter()
            .zip(self.lower.data())
            .map(|(u, l)| u - l)
            .fold(0.0, f64::max)
    }

    /// Flat table `sample,t,d,mean,std,q05,q95,lower,upper,observed`.
    pub fn write_table(&self, observed: &Array, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_rows(observed, &mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_rows(&self, observed: &Array, out: &mut impl Write) -> Result<()> {
        let sh = self.mean.shape();
        if observed.shape() != sh {
            return Err(Error::shape("write_table", &[sh, observed.shape()]));
        }
        let (t_len, d_len) = (sh[1], sh[2]);
        writeln!(out, "sample,t,d,mean,std,q05,q95,lower,upper,observed")?;
        for i in 0..self.mean.len() {
            let (b, t, d) = (i / (t_len * d_len), (i / d_len) % t_len, i % d_len);
            writeln!(
                out,
                "{b},{t},{d},{},{},{},{},{},{},{}",
                self.mean.data()[i],
                self.std.data()[i],
                self.q05.data()[i],
                self.q95.data()[i],
                self.lower.data()[i],
                self.upper.data()[i],
                observed.data()[i] as u8
            )?;
        }
        Ok(())
    }
}

/// Runs `n_sim` simulations in parallel, each with its own derived seed, and
/// aggregates them into a band.
pub fn mc_predict<F>(n_sim: usize, seed: u64, simulate: F) -> Result<UncertaintyBand>
where
    F: Fn(u64) -> Result<Array> + Sync,
{
    if n_sim == 0 {
        return Err(Error::InvalidArgument("n_sim must be at least 1".into()));
    }
    let sims: Vec<Array> = (0..n_sim)
        .into_par_iter()
        .map(|i| simulate(simulation_seed(seed, i)))
        .collect::<Result<_>>()?;
    UncertaintyBand::from_simulations(&sims)
}
