//! Finite-difference suites shared by the gradient tests and the acceptance run.

use std::collections::BTreeMap;

use super::*;
use deari::binder::Binder;
use deari::brits::{bidirectional, cell_step, CellType};
use deari::tensor::{grad_check, GradCheckOptions};
use deari::{Array, Graph, ParamStore, Result, Var};

pub const OP_RTOL: f64 = 1e-4;
pub const MODEL_RTOL: f64 = 1e-3;

type OpFn = Box<dyn for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>>;

struct OpCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    positive: bool,
    f: OpFn,
}

fn case(
    name: &'static str,
    shapes: &[&[usize]],
    positive: bool,
    f: impl for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>> + 'static,
) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        positive,
        f: Box::new(f),
    }
}

fn op_cases() -> Vec<OpCase> {
    let mask = Array::new(&[2, 4], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    vec![
        case("add", &[&[2, 3], &[2, 3]], false, |_, x| x[0].add(x[1])),
        case("add_bias", &[&[2, 3, 4], &[4]], false, |_, x| x[0].add(x[1])),
        case("sub", &[&[2, 3], &[3]], false, |_, x| x[0].sub(x[1])),
        case("mul", &[&[2, 3], &[2, 3]], false, |_, x| x[0].mul(x[1])),
        case("mul_broadcast", &[&[2, 2, 3], &[3]], false, |_, x| x[0].mul(x[1])),
        case("matmul", &[&[3, 4], &[4, 2]], false, |_, x| x[0].matmul(x[1])),
        case("matmul_shared", &[&[2, 3, 4], &[4, 5]], false, |_, x| x[0].matmul(x[1])),
        case("matmul_batched", &[&[2, 3, 4], &[2, 4, 3]], false, |_, x| x[0].matmul(x[1])),
        case("transpose", &[&[2, 3, 4]], false, |_, x| x[0].transpose()),
        case("concat", &[&[2, 3], &[2, 2]], false, |g, x| g.concat(&[x[0], x[1]])),
        case("slice", &[&[2, 5]], false, |_, x| x[0].slice_last(1, 4)),
        case("stack", &[&[2, 3], &[2, 3], &[2, 3]], false, |g, x| g.stack(&[x[0], x[1], x[2]])),
        case("select", &[&[2, 4, 3]], false, |_, x| x[0].select(2)),
        case("reshape", &[&[2, 6]], false, |_, x| x[0].reshape(&[3, 4])),
        case("exp", &[&[2, 3]], false, |_, x| Ok(x[0].exp())),
        case("neg", &[&[2, 3]], false, |_, x| Ok(x[0].neg())),
        case("relu", &[&[3, 4]], false, |_, x| Ok(x[0].relu())),
        case("sigmoid", &[&[2, 3]], false, |_, x| Ok(x[0].sigmoid())),
        case("tanh", &[&[2, 3]], false, |_, x| Ok(x[0].tanh())),
        case("log", &[&[2, 3]], true, |_, x| Ok(x[0].log())),
        case("softplus", &[&[2, 3]], false, |_, x| Ok(x[0].softplus())),
        case("abs", &[&[2, 3]], false, |_, x| Ok(x[0].abs())),
        case("square", &[&[2, 3]], false, |_, x| Ok(x[0].square())),
        case("sqrt", &[&[2, 3]], true, |_, x| Ok(x[0].sqrt())),
        case("scale", &[&[2, 3]], false, |_, x| Ok(x[0].scale(-2.5))),
        case("shift", &[&[2, 3]], false, |_, x| Ok(x[0].shift(0.75).square())),
        case("one_minus", &[&[2, 3]], false, |_, x| Ok(x[0].one_minus())),
        case("softmax", &[&[2, 3, 4]], false, |_, x| Ok(x[0].softmax())),
        case("layer_norm", &[&[3, 5]], false, |_, x| Ok(x[0].layer_norm(1e-5))),
        case("l2_normalize", &[&[3, 4]], false, |_, x| Ok(x[0].l2_normalize())),
        case("sum", &[&[2, 3]], false, |_, x| Ok(x[0].sum())),
        case("mean", &[&[2, 3]], false, |_, x| Ok(x[0].mean())),
        case("sum_last", &[&[2, 3, 4]], false, |_, x| Ok(x[0].sum_last())),
        case("mean_axis1", &[&[2, 3, 4]], false, |_, x| x[0].mean_axis1()),
        case("masked_log1p_sum_exp", &[&[2, 4]], false, move |_, x| {
            x[0].scale(3.0).masked_log1p_sum_exp(&mask)
        }),
    ]
}

/// Maximum relative error of every op, each applied to random leaves and
/// reduced by a random weighted sum.
pub fn op_errors() -> Vec<(&'static str, f64)> {
    op_cases()
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let mut r = rng(1000 + k as u64);
            let mut store = ParamStore::new();
            for (i, s) in c.shapes.iter().enumerate() {
                let mut a = random_array(s, &mut r, 1.0);
                if c.positive {
                    a = a.map(|v| v.abs() + 0.2);
                }
                store.insert(format!("x{i}"), a);
            }
            let weights = r.clone();
            let n = c.shapes.len();
            let report = grad_check(
                &store,
                |g, s| {
                    let xs: Vec<Var> = (0..n)
                        .map(|i| {
                            let name = format!("x{i}");
                            g.param(&name, s.get(&name).unwrap())
                        })
                        .collect();
                    let y = (c.f)(g, &xs)?;
                    let w = g.constant(random_array(&y.shape(), &mut weights.clone(), 1.0));
                    Ok(y.mul(w)?.sum())
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            (c.name, report.max_rel_error)
        })
        .collect()
}

fn check(store: &ParamStore, f: impl for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>) -> f64 {
    grad_check(store, f, &GradCheckOptions::default())
        .unwrap()
        .max_rel_error
}

/// Maximum relative error of every composed objective on the toy batch.
pub fn model_errors() -> Vec<(&'static str, f64)> {
    let batch = toy_batch();
    let mut out = Vec::new();

    let m = toy_model("brits", 1, 1, 1);
    out.push((
        "cell step",
        check(&m.params, |g, s| {
            let p = Binder::frozen(g, s);
            let x = g.constant(batch.values.time_slice(1));
            let mk = g.constant(batch.mask.time_slice(1));
            let d = g.constant(batch.delta_fwd.time_slice(1));
            let h = g.constant(random_array(&[2, 4], &mut rng(3), 1.0));
            let o = cell_step(&p, "l1.fwd.", toy_shape(), x, mk, d, h, None)?;
            let w = g.constant(random_array(&[2, 4], &mut rng(4), 1.0));
            o.hidden.mul(w)?.sum().add(o.x_c.sum())
        }),
    ));

    let m = toy_model("brits", 1, 1, 2);
    out.push((
        "brits L=1",
        check(&m.params, |g, s| {
            Ok(bidirectional(&Binder::frozen(g, s), "l1.", toy_shape(), &batch, (None, None), 0.1)?.loss)
        }),
    ));

    let mut cfg = toy_config("brits", 1, 1);
    cfg.cell = CellType::Lstm;
    let m = randomize_decay_biases(deari::Model::init(cfg, 12).unwrap(), 12);
    out.push((
        "brits L=1 lstm",
        check(&m.params, |g, s| Ok(m.forward(&Binder::frozen(g, s), &batch, 1)?.loss)),
    ));

    let m = toy_model("deari", 2, 1, 3);
    out.push((
        "deari L=2 E=1",
        check(&m.params, |g, s| Ok(m.forward(&Binder::frozen(g, s), &batch, 1)?.loss)),
    ));

    let m = toy_model("deari+dml", 2, 1, 4);
    out.push((
        "deari+dml",
        check(&m.params, |g, s| Ok(m.forward(&Binder::frozen(g, s), &batch, 1)?.loss)),
    ));

    let (m, noise) = bayesian_fixture();
    out.push((
        "bayesian deari+dml, fixed noise",
        check(&m.params, |g, s| {
            Ok(m.forward(&Binder::open_with_noise(g, s, noise.clone()), &batch, 100)?.loss)
        }),
    ));
    out
}

/// Bayesian model with visible posterior spread and a fixed noise draw for
/// every Gaussian parameter.
pub fn bayesian_fixture() -> (deari::Model, BTreeMap<String, Array>) {
    let mut m = toy_model("bayesian-deari+dml", 2, 1, 5);
    for (name, a) in m.params.iter_mut() {
        if name.ends_with(".rho") {
            *a = a.map(|_| -1.0);
        }
    }
    let mut r = rng(77);
    let noise = m
        .params
        .names()
        .filter_map(|n| n.strip_suffix(".rho"))
        .map(|base| {
            let shape = m.params.get(&format!("{base}.rho")).unwrap().shape().to_vec();
            (base.to_string(), random_array(&shape, &mut r, 1.5))
        })
        .collect();
    (m, noise)
}
