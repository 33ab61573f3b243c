//! Finite-difference verification suite covering every tape primitive plus
//! the composed CSA unit and full FCT blocks. Backs the `gradcheck` CLI
//! subcommand and the gradient acceptance gate.

use std::sync::Arc;

use crate::attention::Normalizer;
use crate::autodiff::{finite_diff_check, Tape, VarId};
use crate::error::Result;
use crate::model::{csa_tape, fct_block_forward, BlockIds, BlockKind};
use crate::rng::Rng;
use crate::spectral::half_len;
use crate::tensor::RealTensor;

#[derive(Debug, Clone)]
pub struct GradcheckResult {
    pub op: String,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub nonfinite_evals: usize,
    pub pass: bool,
}

impl GradcheckResult {
    pub const CSV_HEADER: &'static str = "op,max_rel_err,worst_coord,nonfinite_evals,pass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3e},{},{},{}",
            self.op,
            self.max_rel_err,
            self.worst_coord,
            self.nonfinite_evals,
            if self.pass { "pass" } else { "fail" }
        )
    }
}

/// Weighted-sum readout so the upstream gradient is informative everywhere.
fn readout(tape: &mut Tape, y: VarId, seed: u64) -> VarId {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = Rng::new(seed ^ 0x5eed);
    let w = tape.leaf(RealTensor::from_fn(&shape, |_| rng.normal()));
    let m = tape.mul(y, w).expect("same shape");
    tape.sum_all(m)
}

/// One op under test: maps an input leaf to an output node.
type Builder = dyn Fn(&mut Tape, VarId, u64) -> VarId;

fn check_one(
    name: &str,
    point: &RealTensor,
    build: &Builder,
    seed: u64,
    tol: f64,
) -> GradcheckResult {
    let eval = |p: &RealTensor| -> (f64, Option<RealTensor>) {
        let mut tape = Tape::new();
        let x = tape.leaf(p.clone());
        let y = build(&mut tape, x, seed);
        let loss = readout(&mut tape, y, seed);
        let val = tape.value(loss).data()[0];
        let grads = tape.backward(loss).expect("scalar loss");
        (val, grads.get(x).cloned())
    };
    let (_, analytic) = eval(point);
    let analytic = analytic.unwrap_or_else(|| RealTensor::zeros(point.shape()));
    let mut f = |p: &RealTensor| eval(p).0;
    let report = finite_diff_check(&mut f, point, &analytic, None);
    GradcheckResult {
        op: name.to_string(),
        max_rel_err: report.max_rel_err,
        worst_coord: report.worst_coord,
        nonfinite_evals: report.nonfinite_evals,
        pass: report.passes(tol),
    }
}

fn normal_tensor(shape: &[usize], rng: &mut Rng) -> RealTensor {
    RealTensor::from_fn(shape, |_| rng.normal())
}

/// Magnitudes kept away from |x| = 1 (the logmax log zero-crossing) and the
/// epsilon clamps, where the forward is non-differentiable by construction.
fn logmax_safe_tensor(shape: &[usize], rng: &mut Rng) -> RealTensor {
    RealTensor::from_fn(shape, |_| {
        let mag = rng.uniform_in(1.5, 40.0);
        mag * if rng.uniform() < 0.5 { -1.0 } else { 1.0 }
    })
}

fn block_ids(tape: &mut Tape, rng: &mut Rng, d: usize, c: usize, l: usize) -> BlockIds {
    let hidden = 4 * c;
    BlockIds {
        ln1_gain: tape.leaf(RealTensor::from_fn(&[c], |_| rng.uniform_in(0.7, 1.3))),
        ln1_bias: tape.leaf(RealTensor::from_fn(&[c], |_| rng.normal() * 0.05)),
        wq: tape.leaf(RealTensor::from_fn(&[d, d], |_| rng.normal() * 0.2)),
        wk: tape.leaf(RealTensor::from_fn(&[d, d], |_| rng.normal() * 0.2)),
        wv: tape.leaf(RealTensor::from_fn(&[d, d], |_| rng.normal() * 0.2)),
        alpha: tape.leaf(RealTensor::from_fn(&[l], |_| rng.uniform())),
        ln2_gain: tape.leaf(RealTensor::from_fn(&[c], |_| rng.uniform_in(0.7, 1.3))),
        ln2_bias: tape.leaf(RealTensor::from_fn(&[c], |_| rng.normal() * 0.05)),
        fc1_w: tape.leaf(RealTensor::from_fn(&[c, hidden], |_| rng.normal() * 0.2)),
        fc1_b: tape.leaf(RealTensor::from_fn(&[hidden], |_| rng.normal() * 0.05)),
        fc2_w: tape.leaf(RealTensor::from_fn(&[hidden, c], |_| rng.normal() * 0.2)),
        fc2_b: tape.leaf(RealTensor::from_fn(&[c], |_| rng.normal() * 0.05)),
    }
}

/// Run the whole suite for one seed. `tol` is the pass threshold on the
/// max-norm relative error.
pub fn run_suite(seed: u64, tol: f64) -> Result<Vec<GradcheckResult>> {
    let mut rng = Rng::new(seed);
    let mut results: Vec<GradcheckResult> = Vec::new();
    let mut push = |r: GradcheckResult| results.push(r);

    let x34 = normal_tensor(&[3, 4], &mut rng);
    push(check_one(
        "matmul",
        &x34,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 11);
            let b = t.leaf(RealTensor::from_fn(&[4, 5], |_| r.normal()));
            t.matmul(x, b).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one("transpose", &x34, &|t, x, _| t.transpose(x), seed, tol));
    push(check_one(
        "add",
        &x34,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 12);
            let b = t.leaf(RealTensor::from_fn(&[3, 4], |_| r.normal()));
            t.add(x, b).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one(
        "sub",
        &x34,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 13);
            let b = t.leaf(RealTensor::from_fn(&[3, 4], |_| r.normal()));
            t.sub(x, b).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one(
        "mul",
        &x34,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 14);
            let b = t.leaf(RealTensor::from_fn(&[3, 4], |_| r.normal()));
            t.mul(x, b).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one("scale", &x34, &|t, x, _| t.scale(x, -1.7), seed, tol));
    push(check_one("add_scalar", &x34, &|t, x, _| t.add_scalar(x, 0.3), seed, tol));
    push(check_one(
        "add_row_vec",
        &x34,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 15);
            let v = t.leaf(RealTensor::from_fn(&[4], |_| r.normal()));
            t.add_row_vec(x, v).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one(
        "mul_row_vec",
        &x34,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 16);
            let v = t.leaf(RealTensor::from_fn(&[4], |_| r.normal()));
            t.mul_row_vec(x, v).unwrap()
        },
        seed,
        tol,
    ));

    let x2_8 = normal_tensor(&[2, 8], &mut rng);
    push(check_one("dft", &x2_8, &|t, x, _| t.dft(x).unwrap(), seed, tol));
    let bins = normal_tensor(&[2, 10], &mut rng);
    push(check_one("idft", &bins, &|t, x, _| t.idft(x, 8).unwrap(), seed, tol));
    push(check_one(
        "dft_idft_roundtrip",
        &x2_8,
        &|t, x, _| {
            let s = t.dft(x).unwrap();
            t.idft(s, 8).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one("pad_cols", &x34, &|t, x, _| t.pad_cols(x, 7).unwrap(), seed, tol));
    push(check_one(
        "slice_cols",
        &x34,
        &|t, x, _| t.slice_cols(x, 1, 2).unwrap(),
        seed,
        tol,
    ));
    push(check_one(
        "concat_cols",
        &x34,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 17);
            let b = t.leaf(RealTensor::from_fn(&[3, 2], |_| r.normal()));
            t.concat_cols(x, b).unwrap()
        },
        seed,
        tol,
    ));

    let xs = logmax_safe_tensor(&[3, 5], &mut rng);
    push(check_one("logmax", &xs, &|t, x, _| t.logmax(x), seed, tol));
    push(check_one("softmax", &x34, &|t, x, _| t.softmax(x), seed, tol));
    push(check_one(
        "layer_norm",
        &x34,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 18);
            let g = t.leaf(RealTensor::from_fn(&[4], |_| r.uniform_in(0.7, 1.3)));
            let b = t.leaf(RealTensor::from_fn(&[4], |_| r.normal() * 0.1));
            t.layer_norm(x, g, b, 1e-5).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one("gelu", &x34, &|t, x, _| t.gelu(x), seed, tol));
    push(check_one(
        "reshape",
        &x34,
        &|t, x, _| t.reshape(x, &[4, 3]).unwrap(),
        seed,
        tol,
    ));
    push(check_one(
        "gather",
        &x34,
        &|t, x, _| {
            let idx = Arc::new(vec![5usize, 0, 3, 3, 11, 7]);
            t.gather(x, idx, &[2, 3]).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one("mean_rows", &x34, &|t, x, _| t.mean_rows(x), seed, tol));
    push(check_one(
        "stack_rows",
        &x34,
        &|t, x, _| {
            let a = t.slice_cols(x, 0, 4).unwrap();
            let r0 = t.gather(a, Arc::new((0..4).collect()), &[1, 4]).unwrap();
            let r1 = t.gather(a, Arc::new((4..8).collect()), &[1, 4]).unwrap();
            t.stack_rows(&[r0, r1]).unwrap()
        },
        seed,
        tol,
    ));
    push(check_one(
        "cross_entropy_mean",
        &x34,
        &|t, x, _| t.cross_entropy_mean(x, Arc::new(vec![0, 3, 1])).unwrap(),
        seed,
        tol,
    ));
    push(check_one("sum_all", &x34, &|t, x, _| t.sum_all(x), seed, tol));

    // composed CSA over a [3 x 8] field
    let field = normal_tensor(&[3, 8], &mut rng);
    push(check_one(
        "csa",
        &field,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 21);
            let wq = t.leaf(RealTensor::from_fn(&[3, 3], |_| r.normal() * 0.3));
            let wk = t.leaf(RealTensor::from_fn(&[3, 3], |_| r.normal() * 0.3));
            let wv = t.leaf(RealTensor::from_fn(&[3, 3], |_| r.normal() * 0.3));
            let al = t.leaf(RealTensor::from_fn(&[half_len(8)], |_| r.uniform()));
            csa_tape(t, x, wq, wk, wv, al, Normalizer::Logmax, None).unwrap()
        },
        seed,
        tol,
    ));

    // full blocks, both kinds, gradient w.r.t. the block input
    let tokens = normal_tensor(&[16, 4], &mut rng);
    push(check_one(
        "fct_block_spatial",
        &tokens,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 22);
            let ids = block_ids(t, &mut r, 4, 4, half_len(16));
            fct_block_forward(t, x, &ids, BlockKind::Spatial, Normalizer::Logmax, "gc", None)
                .unwrap()
        },
        seed,
        tol,
    ));
    push(check_one(
        "fct_block_channel",
        &tokens,
        &|t, x, s| {
            let mut r = Rng::new(s ^ 23);
            let ids = block_ids(t, &mut r, 16, 4, half_len(4));
            fct_block_forward(t, x, &ids, BlockKind::Channel, Normalizer::Logmax, "gc", None)
                .unwrap()
        },
        seed,
        tol,
    ));

    Ok(results)
}

/// Worst result per op across several seeds.
pub fn run_suite_multi(seeds: &[u64], tol: f64) -> Result<Vec<GradcheckResult>> {
    let mut worst: Vec<GradcheckResult> = Vec::new();
    for &seed in seeds {
        let results = run_suite(seed, tol)?;
        if worst.is_empty() {
            worst = results;
        } else {
            for (w, r) in worst.iter_mut().zip(results) {
                debug_assert_eq!(w.op, r.op);
                if r.max_rel_err > w.max_rel_err || !r.pass {
                    *w = r;
                }
            }
        }
    }
    Ok(worst)
}
