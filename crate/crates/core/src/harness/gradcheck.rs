//! Central finite-difference checks of every differentiable op and the
//! composed blocks.
//!
//! Each case reduces its output to `<R, f(x)>` with a fixed random `R`, then
//! compares the analytic gradient of every input (and every parameter, for
//! blocks) with `(f(x + ε) − f(x − ε)) / 2ε`. The error is
//! `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)` per input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks::{CnnBlock, Ffn, Grapher, Stem};
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamStore};
use crate::numerics::{BnOptions, BnState, Mode, Tape, Tensor, Var};

pub const EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst per-input relative error.
    pub rel_error: f64,
    pub worst_input: String,
    pub entries: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_error <= TOLERANCE
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

type OpFn<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Checks a tape-level op over `inputs`; every input is differentiated.
pub fn check_op(name: &str, inputs: &[Tensor], f: &OpFn, seed: u64) -> Result<CheckResult> {
    let run = |tensors: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = run(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(&mut rng, tape.shape(out), 1.0);
    let grads = tape.backward_with(out, r.data().to_vec())?;
    let objective = |tensors: &[Tensor]| -> Result<f64> {
        let (tape, _, out) = run(tensors)?;
        Ok(dot(tape.value(out).data(), r.data()))
    };
    let mut worst = (0.0, String::new());
    let mut entries = 0;
    for (idx, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[idx].len()]);
        let mut numeric = vec![0.0; inputs[idx].len()];
        let mut probe = inputs.to_vec();
        for e in 0..inputs[idx].len() {
            let base = inputs[idx].data()[e];
            probe[idx].data_mut()[e] = base + EPS;
            let plus = objective(&probe)?;
            probe[idx].data_mut()[e] = base - EPS;
            let minus = objective(&probe)?;
            probe[idx].data_mut()[e] = base;
            numeric[e] = (plus - minus) / (2.0 * EPS);
        }
        entries += numeric.len();
        let err = rel_error(&analytic, &numeric);
        if err >= worst.0 {
            worst = (err, format!("input{idx}"));
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        rel_error: worst.0,
        worst_input: worst.1,
        entries,
    })
}

type BlockFn<'a> = dyn Fn(&mut Ctx, Var) -> Result<Var> + 'a;

/// Checks a parameterized block: the input and every stored parameter.
pub fn check_block(name: &str, store: &ParamStore, input: &Tensor, f: &BlockFn, seed: u64) -> Result<CheckResult> {
    let bn = BnOptions::default();
    let mut s = store.clone();
    let mut ctx = Ctx::new(&mut s, Mode::Train, bn);
    let x = ctx.tape.param(input.clone());
    let out = f(&mut ctx, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(&mut rng, ctx.tape.shape(out), 1.0);
    let grads = ctx.tape.backward_with(out, r.data().to_vec())?;
    let bound = ctx.bound().clone();

    let objective = |store: &ParamStore, input: &Tensor| -> Result<f64> {
        let mut s = store.clone();
        let mut ctx = Ctx::new(&mut s, Mode::Train, bn);
        let x = ctx.tape.constant(input.clone());
        let out = f(&mut ctx, x)?;
        Ok(dot(ctx.tape.value(out).data(), r.data()))
    };
    let mut worst = (0.0, String::new());
    let mut entries = 0;
    let mut record = |label: String, analytic: Vec<f64>, numeric: Vec<f64>| {
        entries += numeric.len();
        let err = rel_error(&analytic, &numeric);
        if err >= worst.0 {
            worst = (err, label);
        }
    };

    let mut probe = input.clone();
    let mut numeric = vec![0.0; input.len()];
    for e in 0..input.len() {
        let base = input.data()[e];
        probe.data_mut()[e] = base + EPS;
        let plus = objective(store, &probe)?;
        probe.data_mut()[e] = base - EPS;
        let minus = objective(store, &probe)?;
        probe.data_mut()[e] = base;
        numeric[e] = (plus - minus) / (2.0 * EPS);
    }
    record("input".into(), grads.get(x).map(<[f64]>::to_vec).unwrap_or_default(), numeric);

    let names: Vec<String> = store.names().map(str::to_string).collect();
    for pname in names {
        let var = *bound
            .get(&pname)
            .ok_or_else(|| Error::Structure(format!("{name}: parameter {pname} unused")))?;
        let len = store.get(&pname)?.len();
        let mut numeric = vec![0.0; len];
        let mut probe = store.clone();
        for e in 0..len {
            let base = store.get(&pname)?.data()[e];
            probe.get_mut(&pname)?.data_mut()[e] = base + EPS;
            let plus = objective(&probe, input)?;
            probe.get_mut(&pname)?.data_mut()[e] = base - EPS;
            let minus = objective(&probe, input)?;
            probe.get_mut(&pname)?.data_mut()[e] = base;
            numeric[e] = (plus - minus) / (2.0 * EPS);
        }
        let analytic = grads.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len]);
        record(pname, analytic, numeric);
    }
    Ok(CheckResult {
        name: name.to_string(),
        rel_error: worst.0,
        worst_input: worst.1,
        entries,
    })
}

/// A neighbor list with `k` distinct non-self entries per row, fixed so the
/// discrete selection does not move under perturbation.
fn fixed_neighbors(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(m * k);
    for i in 0..m {
        let mut picked = Vec::with_capacity(k);
        while picked.len() < k {
            let j = rng.random_range(0..m);
            if j != i && !picked.contains(&j) {
                picked.push(j);
            }
        }
        out.extend(picked);
    }
    out
}

/// Every check in the suite, in a fixed order.
pub fn run_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6C0);
    let mut out = Vec::new();
    let op = |name: &str, inputs: Vec<Tensor>, f: &OpFn, out: &mut Vec<CheckResult>| -> Result<()> {
        out.push(check_op(name, &inputs, f, out.len() as u64 + 1)?);
        Ok(())
    };

    let x = random(&mut rng, &[5, 4], 1.0);
    let w = random(&mut rng, &[4, 3], 1.0);
    let b = random(&mut rng, &[3], 1.0);
    op("linear", vec![x, w, b], &|t, v| t.linear(v[0], v[1], v[2]), &mut out)?;

    for (k, stride, bias) in [(3, 1, true), (3, 2, false), (1, 1, true), (1, 2, true)] {
        let x = random(&mut rng, &[2, 2, 7, 7], 1.0);
        let kern = random(&mut rng, &[3, 2, k, k], 1.0);
        let mut inputs = vec![x, kern];
        if bias {
            inputs.push(random(&mut rng, &[3], 1.0));
        }
        let name = format!("conv2d k{k} s{stride}{}", if bias { " bias" } else { "" });
        op(
            &name,
            inputs,
            &move |t, v| t.conv2d(v[0], v[1], v.get(2).copied(), stride, k / 2),
            &mut out,
        )?;
    }

    let x = random(&mut rng, &[3, 2, 3, 3], 2.0);
    let gamma = random(&mut rng, &[2], 1.5);
    let beta = random(&mut rng, &[2], 1.0);
    op(
        "batch_norm train",
        vec![x.clone(), gamma.clone(), beta.clone()],
        &|t, v| t.batch_norm(v[0], v[1], v[2], &mut BnState::new(2), Mode::Train, BnOptions::default()),
        &mut out,
    )?;
    let state = BnState {
        running_mean: vec![0.3, -0.2],
        running_var: vec![1.7, 0.6],
    };
    op(
        "batch_norm infer",
        vec![x, gamma, beta],
        &|t, v| t.batch_norm(v[0], v[1], v[2], &mut state.clone(), Mode::Infer, BnOptions::default()),
        &mut out,
    )?;

    // Keep ReLU inputs away from the kink at 0.
    let away = Tensor::from_fn(&[4, 5], |i| {
        let v: f64 = ((i * 7 + 3) % 11) as f64 / 5.0 - 1.1;
        if v.abs() < 0.05 { 0.3 } else { v }
    });
    op("relu", vec![away], &|t, v| t.relu(v[0]), &mut out)?;
    op("sigmoid", vec![random(&mut rng, &[4, 5], 3.0)], &|t, v| t.sigmoid(v[0]), &mut out)?;
    op("scale", vec![random(&mut rng, &[3, 4], 1.0)], &|t, v| t.scale(v[0], -1.75), &mut out)?;
    op("softmax", vec![random(&mut rng, &[3, 4], 2.0)], &|t, v| t.softmax(v[0]), &mut out)?;
    op(
        "add",
        vec![random(&mut rng, &[3, 4], 1.0), random(&mut rng, &[3, 4], 1.0)],
        &|t, v| t.add(v[0], v[1]),
        &mut out,
    )?;
    op("sum", vec![random(&mut rng, &[3, 4], 1.0)], &|t, v| t.sum(v[0]), &mut out)?;
    op(
        "pick_sum",
        vec![random(&mut rng, &[3, 4], 1.0)],
        &|t, v| t.pick_sum(v[0], &[0, 5, 5, 11]),
        &mut out,
    )?;
    op(
        "upsample_nearest",
        vec![random(&mut rng, &[1, 2, 2, 3], 1.0)],
        &|t, v| t.upsample_nearest(v[0], 2),
        &mut out,
    )?;
    op("to_nodes", vec![random(&mut rng, &[2, 3, 2, 2], 1.0)], &|t, v| t.to_nodes(v[0]), &mut out)?;
    op(
        "from_nodes",
        vec![random(&mut rng, &[8, 3], 1.0)],
        &|t, v| t.from_nodes(v[0], 2, 2, 2),
        &mut out,
    )?;
    let nb = fixed_neighbors(&mut rng, 6, 3);
    op(
        "max_relative_gc",
        vec![random(&mut rng, &[6, 4], 1.0)],
        &move |t, v| t.max_relative_gc(v[0], &nb, 3),
        &mut out,
    )?;
    op(
        "mean_pool_nodes",
        vec![random(&mut rng, &[6, 3], 1.0)],
        &|t, v| t.mean_pool_nodes(v[0], 2),
        &mut out,
    )?;
    op(
        "mse_loss",
        vec![random(&mut rng, &[2, 5], 1.0), random(&mut rng, &[2, 5], 1.0)],
        &|t, v| t.mse_loss(v[0], v[1]),
        &mut out,
    )?;
    op(
        "cross_entropy",
        vec![random(&mut rng, &[4, 3], 2.0)],
        &|t, v| t.cross_entropy(v[0], &[0, 2, 1, 2]),
        &mut out,
    )?;

    // Composed blocks.
    let mut store = ParamStore::new();
    let grapher = Grapher::new(&mut store, &mut rng, "g", 4)?;
    let ffn = Ffn::new(&mut store, &mut rng, "f", 4)?;
    let nodes = random(&mut rng, &[8, 4], 1.0);
    let nb = fixed_neighbors(&mut rng, 8, 3);
    out.push(check_block(
        "grapher+ffn",
        &store,
        &nodes,
        &|ctx, x| {
            let mut graph = |_: &Tensor| Ok((3, nb.clone()));
            let h = grapher.forward(ctx, x, &mut graph)?;
            ffn.forward(ctx, h)
        },
        101,
    )?);

    let mut store = ParamStore::new();
    let blocks: Vec<(Grapher, Ffn)> = (0..2)
        .map(|i| Ok((Grapher::new(&mut store, &mut rng, &format!("g{i}"), 3)?, Ffn::new(&mut store, &mut rng, &format!("f{i}"), 3)?)))
        .collect::<Result<_>>()?;
    let nodes = random(&mut rng, &[6, 3], 1.0);
    let graphs = [fixed_neighbors(&mut rng, 6, 2), fixed_neighbors(&mut rng, 6, 2)];
    out.push(check_block(
        "two-block stack",
        &store,
        &nodes,
        &|ctx, mut x| {
            for (i, (g, f)) in blocks.iter().enumerate() {
                let mut graph = |_: &Tensor| Ok((2, graphs[i].clone()));
                x = g.forward(ctx, x, &mut graph)?;
                x = f.forward(ctx, x)?;
            }
            Ok(x)
        },
        102,
    )?);

    let mut store = ParamStore::new();
    let cnn = CnnBlock::new(&mut store, &mut rng, "c", 2)?;
    let img = random(&mut rng, &[2, 2, 4, 4], 1.0);
    out.push(check_block("cnn_block", &store, &img, &|ctx, x| cnn.forward(ctx, x), 103)?);

    let mut store = ParamStore::new();
    let stem = Stem::new(&mut store, &mut rng, "s", 1, 4)?;
    let img = random(&mut rng, &[2, 1, 16, 16], 1.0);
    out.push(check_block("stem", &store, &img, &|ctx, x| Ok(stem.forward(ctx, x)?.quarter), 104)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // A "square" whose backward claims 3x instead of 2x.
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let bad = check_op(
            "bad",
            &[x],
            &|t, v| {
                let value = t.value(v[0]).clone();
                let data = value.data().iter().map(|a| a * a).collect();
                let xs = value.data().to_vec();
                t.record(
                    "bad",
                    Tensor::new(&[3], data)?,
                    vec![v[0]],
                    Box::new(move |g| vec![Some(g.iter().zip(&xs).map(|(g, x)| 3.0 * x * g).collect())]),
                )
            },
            1,
        )
        .unwrap();
        assert!(!bad.passed(), "{bad:?}");
    }
}
