//! Shared oracles for the integration suites. Everything here is independent
//! of the implementation paths it checks: finite differences, dense ray
//! marching, and brute-force geometry.

#![allow(dead_code)]

use advf::autodiff::{grad_check, NodeId, Tape, TapeError, TensorBuf};
use advf::SplitRng;

pub const OP_GRAD_TOL: f64 = 1e-4;

pub fn rand_buf(rng: &mut SplitRng, shape: Vec<usize>, lo: f64, hi: f64) -> TensorBuf<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(lo, hi)).collect();
    TensorBuf::new(shape, data)
}

pub struct OpCase {
    pub name: &'static str,
    pub trials: usize,
    pub build: Box<dyn Fn(&mut SplitRng) -> (TensorBuf<f64>, BuildFn)>,
}

pub type BuildFn = Box<dyn Fn(&mut Tape<f64>, NodeId) -> Result<NodeId, TapeError>>;

fn scalar_root(tape: &mut Tape<f64>, out: NodeId) -> Result<NodeId, TapeError> {
    if tape.value(out).is_scalar() {
        Ok(out)
    } else {
        tape.sum(out)
    }
}

/// One gradient-check case: random point from `make`, function from `build`.
pub fn run_case(name: &str, trials: usize, seed: u64, case: &OpCase) -> f64 {
    let mut rng = SplitRng::new(seed).split(advf::rng::stream_tag(name));
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut r = rng.split(t as u64);
        let (point, f) = (case.build)(&mut r);
        let err = grad_check(|tape, x| f(tape, x), &point, 1e-5)
            .unwrap_or_else(|e| panic!("{name} trial {t}: {e}"));
        if err > worst {
            worst = err;
        }
    }
    worst
}

macro_rules! case {
    ($name:literal, $trials:expr, |$rng:ident| $make:expr, |$tape:ident, $x:ident| $body:expr) => {
        OpCase {
            name: $name,
            trials: $trials,
            build: Box::new(|$rng: &mut SplitRng| {
                let point = $make;
                let f: BuildFn = Box::new(move |$tape: &mut Tape<f64>, $x: NodeId| $body);
                (point, f)
            }),
        }
    };
}

/// All registered op kinds, each differentiated w.r.t. every tensor operand.
///
/// Inputs for kinked ops (abs, clamp, max-pool) are sampled away from their
/// kinks: central differences straddling a kink measure the wrong quantity.
pub fn op_grad_cases() -> Vec<OpCase> {
    vec![
        case!("add", 100, |r| rand_buf(r, vec![2, 3], -2.0, 2.0), |tape, x| {
            let sq = tape.mul(x, x)?;
            let y = tape.add(x, sq)?;
            scalar_root(tape, y)
        }),
        case!("sub", 100, |r| rand_buf(r, vec![2, 3], -2.0, 2.0), |tape, x| {
            let sq = tape.mul(x, x)?;
            let y = tape.sub(sq, x)?;
            scalar_root(tape, y)
        }),
        case!("mul", 100, |r| rand_buf(r, vec![2, 3], -2.0, 2.0), |tape, x| {
            let s = tape.sigmoid(x)?;
            let y = tape.mul(x, s)?;
            scalar_root(tape, y)
        }),
        case!("scale", 100, |r| rand_buf(r, vec![4], -2.0, 2.0), |tape, x| {
            let y = tape.scale(x, -1.7)?;
            let sq = tape.mul(y, y)?;
            scalar_root(tape, sq)
        }),
        case!("add_scalar", 100, |r| rand_buf(r, vec![4], -2.0, 2.0), |tape, x| {
            let y = tape.add_scalar(x, 0.35)?;
            let sq = tape.mul(y, y)?;
            scalar_root(tape, sq)
        }),
        case!("sigmoid", 100, |r| rand_buf(r, vec![5], -4.0, 4.0), |tape, x| {
            let y = tape.sigmoid(x)?;
            scalar_root(tape, y)
        }),
        case!("softplus", 100, |r| rand_buf(r, vec![5], -4.0, 4.0), |tape, x| {
            let y = tape.softplus(x)?;
            scalar_root(tape, y)
        }),
        case!("exp", 100, |r| rand_buf(r, vec![5], -2.0, 2.0), |tape, x| {
            let y = tape.exp(x)?;
            scalar_root(tape, y)
        }),
        case!("log", 100, |r| rand_buf(r, vec![5], 0.2, 3.0), |tape, x| {
            let y = tape.log(x)?;
            scalar_root(tape, y)
        }),
        case!("power_square", 100, |r| rand_buf(r, vec![5], -2.0, 2.0), |tape, x| {
            let y = tape.power(x, 2.0)?;
            scalar_root(tape, y)
        }),
        case!("power_recip", 100, |r| rand_buf(r, vec![5], 0.4, 3.0), |tape, x| {
            let y = tape.power(x, -1.0)?;
            scalar_root(tape, y)
        }),
        case!("power_frac", 100, |r| rand_buf(r, vec![5], 0.3, 3.0), |tape, x| {
            let y = tape.power(x, 1.7)?;
            scalar_root(tape, y)
        }),
        case!("clamp", 100, |r| rand_buf(r, vec![6], -2.0, 2.0), |tape, x| {
            // Kinks at +-1; sampled points avoid the 1e-4 neighborhood.
            let y = tape.clamp(x, -1.0001, 1.0001)?;
            let sq = tape.mul(y, y)?;
            scalar_root(tape, sq)
        }),
        case!("abs", 100, |r| {
            let mut b = rand_buf(r, vec![6], 0.1, 2.0);
            for (i, v) in b.data.iter_mut().enumerate() {
                if i % 2 == 0 {
                    *v = -*v;
                }
            }
            b
        }, |tape, x| {
            let y = tape.abs_val(x)?;
            scalar_root(tape, y)
        }),
        case!("matmul_lhs", 100, |r| rand_buf(r, vec![3, 4], -1.5, 1.5), |tape, x| {
            let b = constant_grid(tape, 4, 2);
            let y = tape.matmul(x, b)?;
            scalar_root(tape, y)
        }),
        case!("matmul_rhs", 100, |r| rand_buf(r, vec![4, 2], -1.5, 1.5), |tape, x| {
            let a = constant_grid(tape, 3, 4);
            let y = tape.matmul(a, x)?;
            scalar_root(tape, y)
        }),
        case!("transpose", 100, |r| rand_buf(r, vec![3, 4], -1.5, 1.5), |tape, x| {
            let t = tape.transpose(x)?;
            let sq = tape.mul(t, t)?;
            scalar_root(tape, sq)
        }),
        case!("affine_x", 100, |r| rand_buf(r, vec![3, 4], -1.5, 1.5), |tape, x| {
            let w = constant_grid(tape, 4, 3);
            let b = constant_row(tape, 3);
            let y = tape.affine(x, w, b)?;
            let s = tape.sigmoid(y)?;
            scalar_root(tape, s)
        }),
        case!("affine_w", 100, |r| rand_buf(r, vec![4, 3], -1.5, 1.5), |tape, x| {
            let inp = constant_grid(tape, 3, 4);
            let b = constant_row(tape, 3);
            let y = tape.affine(inp, x, b)?;
            let s = tape.sigmoid(y)?;
            scalar_root(tape, s)
        }),
        case!("affine_b", 100, |r| rand_buf(r, vec![3], -1.5, 1.5), |tape, x| {
            let inp = constant_grid(tape, 3, 4);
            let w = constant_grid(tape, 4, 3);
            let y = tape.affine(inp, w, x)?;
            let s = tape.sigmoid(y)?;
            scalar_root(tape, s)
        }),
        case!("sum", 100, |r| rand_buf(r, vec![2, 3], -2.0, 2.0), |tape, x| {
            let sq = tape.mul(x, x)?;
            tape.sum(sq)
        }),
        case!("mean", 100, |r| rand_buf(r, vec![2, 3], -2.0, 2.0), |tape, x| {
            let sq = tape.mul(x, x)?;
            tape.mean(sq)
        }),
        case!("sum_axis", 100, |r| rand_buf(r, vec![2, 3, 4], -2.0, 2.0), |tape, x| {
            let a = tape.sum_axis(x, 1)?;
            let sq = tape.mul(a, a)?;
            scalar_root(tape, sq)
        }),
        case!("cumsum_exclusive", 100, |r| rand_buf(r, vec![2, 5], -2.0, 2.0), |tape, x| {
            let c = tape.cumsum_exclusive(x)?;
            let sq = tape.mul(c, c)?;
            scalar_root(tape, sq)
        }),
        case!("concat", 100, |r| rand_buf(r, vec![3, 2], -2.0, 2.0), |tape, x| {
            let other = constant_grid(tape, 2, 2);
            let c = tape.concat_rows(&[x, other, x])?;
            let sq = tape.mul(c, c)?;
            scalar_root(tape, sq)
        }),
        case!("gather_rows", 100, |r| rand_buf(r, vec![4, 3], -2.0, 2.0), |tape, x| {
            let g = tape.gather_rows(x, &[2, 0, 2])?;
            let sq = tape.mul(g, g)?;
            scalar_root(tape, sq)
        }),
        case!("scatter_rows", 100, |r| rand_buf(r, vec![3, 2], -2.0, 2.0), |tape, x| {
            let s = tape.scatter_rows(x, &[4, 1, 4], 6)?;
            let sq = tape.mul(s, s)?;
            scalar_root(tape, sq)
        }),
        case!("slice_cols", 100, |r| rand_buf(r, vec![3, 5], -2.0, 2.0), |tape, x| {
            let s = tape.slice_cols(x, 1, 4)?;
            let sq = tape.mul(s, s)?;
            scalar_root(tape, sq)
        }),
        case!("expand_last", 100, |r| rand_buf(r, vec![3, 2], -2.0, 2.0), |tape, x| {
            let e = tape.expand_last(x, 3)?;
            let sq = tape.mul(e, e)?;
            scalar_root(tape, sq)
        }),
        case!("reshape", 100, |r| rand_buf(r, vec![3, 4], -2.0, 2.0), |tape, x| {
            let v = tape.reshape(x, vec![2, 6])?;
            let sq = tape.mul(v, v)?;
            scalar_root(tape, sq)
        }),
        case!("shift_rows", 100, |r| rand_buf(r, vec![3, 4], -2.0, 2.0), |tape, x| {
            let v = tape.shift_rows(x, vec![0.5, -1.0, 2.0])?;
            let e = tape.exp(v)?;
            scalar_root(tape, e)
        }),
        case!("hwc_to_chw", 100, |r| rand_buf(r, vec![3, 4, 2], -2.0, 2.0), |tape, x| {
            let v = tape.hwc_to_chw(x)?;
            let sq = tape.mul(v, v)?;
            scalar_root(tape, sq)
        }),
        case!("pad_rect", 100, |r| rand_buf(r, vec![2, 3, 2], -2.0, 2.0), |tape, x| {
            let v = tape.pad_rect(x, 1, 2, 6, 5)?;
            let sq = tape.mul(v, v)?;
            scalar_root(tape, sq)
        }),
        case!("bilinear_sample", 100, |r| {
            rand_buf(r, vec![4, 4, 3], -2.0, 2.0)
        }, |tape, x| {
            let coords = vec![[-0.83, 0.21], [0.47, -0.99], [0.0, 0.62], [1.0, -1.0]];
            let s = tape.bilinear_sample(x, coords)?;
            let sq = tape.mul(s, s)?;
            scalar_root(tape, sq)
        }),
        case!("conv2d_x", 60, |r| rand_buf(r, vec![2, 5, 6], -1.5, 1.5), |tape, x| {
            let w = constant_conv_kernel(tape, 3, 2);
            let b = constant_row(tape, 3);
            let y = tape.conv2d(x, w, b, 2, 1)?;
            let s = tape.sigmoid(y)?;
            scalar_root(tape, s)
        }),
        case!("conv2d_w", 60, |r| rand_buf(r, vec![3, 2, 3, 3], -1.0, 1.0), |tape, x| {
            let inp = constant_image(tape, 2, 5, 6);
            let b = constant_row(tape, 3);
            let y = tape.conv2d(inp, x, b, 1, 1)?;
            let s = tape.sigmoid(y)?;
            scalar_root(tape, s)
        }),
        case!("conv2d_b", 60, |r| rand_buf(r, vec![3], -1.0, 1.0), |tape, x| {
            let inp = constant_image(tape, 2, 5, 6);
            let w = constant_conv_kernel(tape, 3, 2);
            let y = tape.conv2d(inp, w, x, 2, 1)?;
            let s = tape.sigmoid(y)?;
            scalar_root(tape, s)
        }),
        case!("max_pool2d", 100, |r| {
            // Spread values so no pooling window ties within the FD step.
            let mut b = rand_buf(r, vec![2, 4, 4], 0.0, 1.0);
            for (i, v) in b.data.iter_mut().enumerate() {
                *v += i as f64 * 0.01;
            }
            b
        }, |tape, x| {
            let y = tape.max_pool2d(x, 2, 2)?;
            let sq = tape.mul(y, y)?;
            scalar_root(tape, sq)
        }),
    ]
}

fn constant_grid(tape: &mut Tape<f64>, r: usize, c: usize) -> NodeId {
    let data: Vec<f64> = (0..r * c).map(|i| ((i * 37 + 11) % 17) as f64 / 8.5 - 1.0).collect();
    tape.constant(TensorBuf::new(vec![r, c], data))
}

fn constant_row(tape: &mut Tape<f64>, n: usize) -> NodeId {
    let data: Vec<f64> = (0..n).map(|i| (i as f64) * 0.3 - 0.2).collect();
    tape.constant(TensorBuf::new(vec![n], data))
}

fn constant_conv_kernel(tape: &mut Tape<f64>, co: usize, ci: usize) -> NodeId {
    let n = co * ci * 9;
    let data: Vec<f64> = (0..n).map(|i| ((i * 53 + 7) % 23) as f64 / 11.5 - 1.0).collect();
    tape.constant(TensorBuf::new(vec![co, ci, 3, 3], data))
}

fn constant_image(tape: &mut Tape<f64>, c: usize, h: usize, w: usize) -> NodeId {
    let n = c * h * w;
    let data: Vec<f64> = (0..n).map(|i| ((i * 29 + 3) % 31) as f64 / 15.5 - 1.0).collect();
    tape.constant(TensorBuf::new(vec![c, h, w], data))
}
