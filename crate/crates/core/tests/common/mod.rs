#![allow(dead_code)]

pub mod gradsuite;
pub mod oracle;

use deari::binder::Binder;
use deari::brits::{CellShape, CellType};
use deari::data::apply_eval_mask;
use deari::model::{Model, ModelConfig};
use deari::tensor::GradCheckOptions;
use deari::{Array, ParamStore, SeriesBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Array {
    Array::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// 2 samples x 3 steps x 2 features with irregular stamps, two missing cells
/// and one held-out cell.
pub fn toy_batch() -> SeriesBatch {
    let nan = f64::NAN;
    let raw = Array::new(
        &[2, 3, 2],
        vec![0.5, -1.2, nan, 0.3, 1.1, 0.8, -0.4, 0.9, 0.2, nan, 1.5, -0.7],
    )
    .unwrap();
    let stamps = Array::new(&[2, 3], vec![0.0, 1.5, 2.0, 0.0, 0.7, 2.9]).unwrap();
    let b = SeriesBatch::from_raw(&raw, stamps, vec!["a".into(), "b".into()]).unwrap();
    let mut b = apply_eval_mask(&b, 0.0, 0).unwrap();
    // hold out sample 1, step 0, feature 1
    let cell = 7;
    let mut eval = Array::zeros(&[2, 3, 2]);
    eval.data_mut()[cell] = 1.0;
    let mut truth = Array::zeros(&[2, 3, 2]);
    truth.data_mut()[cell] = b.values.data()[cell];
    b.values.data_mut()[cell] = 0.0;
    b.mask.data_mut()[cell] = 0.0;
    b.eval_mask = Some(eval);
    b.truth = Some(truth);
    b.refresh_deltas().unwrap();
    b
}

pub fn toy_shape() -> CellShape {
    CellShape {
        features: 2,
        hidden: 4,
        cell: CellType::Gru,
    }
}

/// Small model config with B=2, T=3, D=2, H=4.
pub fn toy_config(variant: &str, layers: usize, encoders: usize) -> ModelConfig {
    let mut c = ModelConfig::new(variant.parse().unwrap(), 2, 4, layers);
    c.heads = 2;
    c.encoder_depth = encoders;
    c.ffn = 6;
    c
}

/// Initializes a model and replaces every zero bias by a random one so no
/// `max(0, .)` sits exactly at its kink.
pub fn toy_model(variant: &str, layers: usize, encoders: usize, seed: u64) -> Model {
    randomize_decay_biases(Model::init(toy_config(variant, layers, encoders), seed).unwrap(), seed)
}

pub fn randomize_decay_biases(mut m: Model, seed: u64) -> Model {
    let mut r = rng(seed ^ 0xabc);
    for (name, a) in m.params.iter_mut() {
        if name.contains("gamma") && name.ends_with(".b") {
            *a = random_array(a.shape(), &mut r, 0.5);
        }
    }
    m
}

pub fn strict() -> GradCheckOptions {
    GradCheckOptions::default()
}

pub fn frozen<'g, 'p>(g: &'g deari::Graph, s: &'p ParamStore) -> Binder<'g, 'p> {
    Binder::frozen(g, s)
}

/// A deterministic store with every Gaussian pair replaced by its mean.
pub fn mean_store(store: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (n, a) in store.iter() {
        if let Some(base) = n.strip_suffix(".mu") {
            out.insert(base.to_string(), a.clone());
        } else if !n.ends_with(".rho") {
            out.insert(n.clone(), a.clone());
        }
    }
    out
}
