//! Randomized invariants.

mod common;

use common::oracle::{brute_force_triplets, normalize_rows, rows};
use common::*;
use deari::attention::{attention_block, init_attention_params, AttentionShape};
use deari::bayes::{kl_closed_form, GaussianParam, UncertaintyBand};
use deari::binder::Binder;
use deari::brits::{bidirectional, collect_steps};
use deari::data::{apply_eval_mask, compute_delta};
use deari::harness::evaluate;
use deari::metric::{
    extract_representation, mine_triplets, ms_loss, ms_loss_from_similarity, MsParams, PositiveSign, Strategy,
};
use deari::{Array, Direction, Graph, NormStats, ParamStore, SeriesBatch};
use proptest::prelude::*;
use rand::Rng;

fn random_batch(seed: u64, b: usize, t: usize, d: usize, missing: f64) -> SeriesBatch {
    let mut r = rng(seed);
    let raw = Array::from_fn(&[b, t, d], |_| {
        if r.random::<f64>() < missing {
            f64::NAN
        } else {
            r.random_range(-3.0..3.0)
        }
    });
    let mut stamps = Vec::with_capacity(b * t);
    for _ in 0..b {
        let mut s = 0.0;
        for _ in 0..t {
            stamps.push(s);
            s += r.random_range(0.0..2.0);
        }
    }
    let names = (0..d).map(|i| format!("f{i}")).collect();
    SeriesBatch::from_raw(&raw, Array::new(&[b, t], stamps).unwrap(), names).unwrap()
}

fn unit_rows(seed: u64, n: usize, h: usize) -> Vec<Vec<f64>> {
    let mut reps = rows(random_array(&[n, h], &mut rng(seed), 1.0).data(), h);
    normalize_rows(&mut reps);
    reps
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn delta_follows_recurrence(seed in any::<u64>(), t in 1usize..12, d in 1usize..4) {
        let b = random_batch(seed, 1, t, d, 0.5);
        let stamps = b.timestamps.data().to_vec();
        let m = Array::new(&[t, d], b.mask.data().to_vec()).unwrap();
        let fwd = compute_delta(&stamps, &m, Direction::Forward).unwrap();
        let bwd = compute_delta(&stamps, &m, Direction::Backward).unwrap();
        for f in 0..d {
            prop_assert_eq!(fwd.at(&[0, f]), 0.0);
            prop_assert_eq!(bwd.at(&[t - 1, f]), 0.0);
            for s in 1..t {
                let carry = if m.at(&[s - 1, f]) == 0.0 { fwd.at(&[s - 1, f]) } else { 0.0 };
                prop_assert_eq!(fwd.at(&[s, f]), (stamps[s] - stamps[s - 1]) + carry);
                let carry = if m.at(&[t - s, f]) == 0.0 { bwd.at(&[t - s, f]) } else { 0.0 };
                prop_assert_eq!(bwd.at(&[t - 1 - s, f]), (stamps[t - s] - stamps[t - 1 - s]) + carry);
            }
        }
        prop_assert!(fwd.data().iter().chain(bwd.data()).all(|&x| x >= 0.0));
    }

    #[test]
    fn held_out_cells_were_observed(seed in any::<u64>(), p in 0.0f64..1.0) {
        let raw = random_batch(seed, 3, 6, 3, 0.3);
        let b = apply_eval_mask(&raw, p, seed).unwrap();
        let e = b.eval_mask.as_ref().unwrap();
        for i in 0..e.len() {
            prop_assert!(!(e.data()[i] == 1.0 && b.mask.data()[i] == 1.0));
            if e.data()[i] == 1.0 {
                prop_assert_eq!(raw.mask.data()[i], 1.0);
                prop_assert_eq!(b.truth.as_ref().unwrap().data()[i], raw.values.data()[i]);
            } else {
                prop_assert_eq!(b.mask.data()[i], raw.mask.data()[i]);
            }
        }
        prop_assert_eq!(b.num_observed() + b.num_eval(), raw.num_observed());
    }

    #[test]
    fn normalization_round_trip(seed in any::<u64>()) {
        let b = random_batch(seed, 3, 5, 3, 0.3);
        let s = NormStats::fit(&b, None);
        let back = s.revert(&s.apply(&b));
        for (x, y) in back.values.data().iter().zip(b.values.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let a = random_array(&[4, 3], &mut rng(seed), 5.0);
        let rt = s.denormalize(&s.normalize(&a));
        for (x, y) in rt.data().iter().zip(a.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mining_matches_enumeration(seed in any::<u64>(), n in 1usize..=4, h in 1usize..5, margin in 0.0f64..2.0) {
        let reps = random_array(&[2 * n, h], &mut rng(seed), 1.0);
        let set = mine_triplets(&reps, margin).unwrap();
        let mut got: Vec<_> = set.triplets.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
        got.sort();
        prop_assert_eq!(got, brute_force_triplets(&rows(reps.data(), h), margin));
        for t in &set.triplets {
            prop_assert_eq!(t.anchor / 2, t.positive / 2);
            prop_assert_ne!(t.anchor, t.positive);
            prop_assert_ne!(t.anchor / 2, t.negative / 2);
        }
    }

    #[test]
    fn ms_loss_is_nonnegative(seed in any::<u64>(), n in 1usize..=4, margin in 0.0f64..2.0, printed in any::<bool>()) {
        let reps = unit_rows(seed, 2 * n, 3);
        let flat = Array::new(&[2 * n, 3], reps.concat()).unwrap();
        let set = mine_triplets(&flat, margin).unwrap();
        let params = MsParams {
            sign: if printed { PositiveSign::Printed } else { PositiveSign::Corrected },
            ..MsParams::default()
        };
        let g = Graph::new();
        let loss = ms_loss(g.constant(flat), &set, &params).unwrap().item();
        prop_assert!(loss >= 0.0);
        if set.is_empty() {
            prop_assert_eq!(loss, 0.0);
        }
    }

    #[test]
    fn ms_loss_sign_structure(seed in any::<u64>(), n in 2usize..=4, printed in any::<bool>()) {
        let reps = unit_rows(seed, 2 * n, 3);
        let flat = Array::new(&[2 * n, 3], reps.concat()).unwrap();
        let set = mine_triplets(&flat, 2.5).unwrap();
        let sign = if printed { PositiveSign::Printed } else { PositiveSign::Corrected };
        let params = MsParams { sign, ..MsParams::default() };
        let g = Graph::new();
        let s = g.leaf(Array::from_fn(&[2 * n, 2 * n], |i| {
            let (a, b) = (i / (2 * n), i % (2 * n));
            reps[a].iter().zip(&reps[b]).map(|(x, y)| x * y).sum()
        }));
        let loss = ms_loss_from_similarity(s, &set, &params).unwrap();
        let grad = g.backward(loss).unwrap().wrt(s);
        let (neg, pos) = set.pair_masks();
        for i in 0..grad.len() {
            if neg.data()[i] != 0.0 {
                prop_assert!(grad.data()[i] >= 0.0);
            }
            if pos.data()[i] != 0.0 {
                match sign {
                    PositiveSign::Printed => prop_assert!(grad.data()[i] >= 0.0),
                    PositiveSign::Corrected => prop_assert!(grad.data()[i] <= 0.0),
                }
            }
            if neg.data()[i] == 0.0 && pos.data()[i] == 0.0 {
                prop_assert_eq!(grad.data()[i], 0.0);
            }
        }
    }

    #[test]
    fn divergence_is_nonnegative(mu in -3.0f64..3.0, rho in -6.0f64..3.0, prior in 0.1f64..3.0) {
        let p = GaussianParam {
            mu: Array::new(&[1], vec![mu]).unwrap(),
            rho: Array::new(&[1], vec![rho]).unwrap(),
        };
        prop_assert!(kl_closed_form(&p, prior) >= -1e-12);
    }

    #[test]
    fn band_ignores_simulation_order(seed in any::<u64>(), n in 1usize..12) {
        let mut r = rng(seed);
        let mut sims: Vec<Array> = (0..n).map(|_| random_array(&[1, 2, 3], &mut r, 4.0)).collect();
        let a = UncertaintyBand::from_simulations(&sims).unwrap();
        sims.reverse();
        sims.rotate_left(n / 2);
        prop_assert_eq!(&a, &UncertaintyBand::from_simulations(&sims).unwrap());
        for i in 0..a.mean.len() {
            prop_assert!(a.lower.data()[i] <= a.mean.data()[i] && a.mean.data()[i] <= a.upper.data()[i]);
            prop_assert!(a.q05.data()[i] <= a.q95.data()[i]);
            prop_assert!(a.std.data()[i] >= 0.0);
        }
    }

    #[test]
    fn metrics_ignore_other_cells(seed in any::<u64>()) {
        let raw = random_batch(seed, 2, 6, 2, 0.1);
        let b = apply_eval_mask(&raw, 0.3, seed).unwrap();
        prop_assume!(b.num_eval() > 0);
        let stats = NormStats::identity(2);
        let mut r = rng(seed ^ 1);
        let pred = random_array(&[2, 6, 2], &mut r, 2.0);
        prop_assume!(b.truth.as_ref().unwrap().data().iter().any(|&v| v != 0.0));
        let base = evaluate(&pred, &b, &stats).unwrap();
        let mut noisy = pred.clone();
        let e = b.eval_mask.as_ref().unwrap();
        for (i, v) in noisy.data_mut().iter_mut().enumerate() {
            if e.data()[i] == 0.0 {
                *v = r.random_range(-100.0..100.0);
            }
        }
        prop_assert_eq!(evaluate(&noisy, &b, &stats).unwrap(), base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn observed_cells_pass_through(seed in any::<u64>(), layers in 1usize..=3, lstm in any::<bool>()) {
        let mut cfg = toy_config("deari", layers, 1);
        if lstm {
            cfg.cell = deari::brits::CellType::Lstm;
        }
        let m = randomize_decay_biases(deari::Model::init(cfg, seed).unwrap(), seed);
        let b = random_batch(seed, 2, 5, 2, 0.4);
        let out = m.predict(&b).unwrap();
        for i in 0..out.len() {
            if b.mask.data()[i] == 1.0 {
                prop_assert_eq!(out.data()[i], b.values.data()[i]);
            }
        }
    }

    #[test]
    fn gates_stay_in_range(seed in any::<u64>()) {
        let m = toy_model("brits", 1, 1, seed);
        let b = random_batch(seed, 2, 6, 2, 0.5);
        let g = Graph::new();
        let p = Binder::frozen(&g, &m.params);
        let run = bidirectional(&p, "l1.", toy_shape(), &b, (None, None), 0.1).unwrap();
        for s in run.fwd.steps.iter().chain(&run.bwd.steps) {
            for v in s.gamma_h.value().data().iter().chain(s.gamma_f.value().data()) {
                prop_assert!(*v > 0.0 && *v <= 1.0);
            }
            for v in s.beta.value().data() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
        prop_assert!(collect_steps(&run.imputation).is_finite());
    }

    #[test]
    fn representations_have_unit_norm(seed in any::<u64>(), strategy in 0usize..3) {
        let strategy = [Strategy::Cls, Strategy::Last, Strategy::Mean][strategy];
        let m = toy_model("deari+dml", 1, 1, seed);
        let b = random_batch(seed, 3, 4, 2, 0.3);
        let g = Graph::new();
        let p = Binder::frozen(&g, &m.params);
        let run = bidirectional(&p, "l1.", toy_shape(), &b, (None, None), 0.1).unwrap();
        let rep = extract_representation(&p, Some(("dml.", m.config.attention())), &run.fwd.hidden, strategy)
            .unwrap()
            .value();
        for row in rep.data().chunks(4) {
            prop_assert!((row.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_summary_ignores_token_order(seed in any::<u64>(), len in 1usize..6) {
        let shape = AttentionShape { hidden: 4, heads: 2, depth: 2, ffn: 6 };
        let mut store = ParamStore::new();
        let mut r = rng(seed);
        init_attention_params(&mut store, "a.", shape, &mut r);
        let tokens: Vec<Array> = (0..len).map(|_| random_array(&[2, 4], &mut r, 1.5)).collect();
        let g = Graph::new();
        let p = Binder::frozen(&g, &store);
        let vars: Vec<_> = tokens.iter().map(|t| g.constant(t.clone())).collect();
        let a = attention_block(&p, "a.", shape, &vars).unwrap().value();
        let mut shuffled = vars.clone();
        shuffled.reverse();
        shuffled.rotate_left(len / 2);
        let b = attention_block(&p, "a.", shape, &shuffled).unwrap().value();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
