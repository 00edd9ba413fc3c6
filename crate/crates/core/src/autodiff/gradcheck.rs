//! Central-difference gradient checks for every graph primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::finola::FinolaMode;

/// A differentiable primitive together with its static parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Conv2d { stride: usize, pad: usize, bias: bool },
    Add,
    Sub,
    Mul,
    Scale(f64),
    BiasAdd,
    Reshape(Vec<usize>),
    Transpose,
    ChannelNorm,
    Softmax,
    Relu,
    Gelu,
    Abs,
    Maxout(usize),
    Upsample { fy: usize, fx: usize },
    Crop { top: usize, left: usize, h: usize, w: usize },
    Narrow { axis: usize, start: usize, len: usize },
    Concat(usize),
    Mean,
    Sum,
    Finola { paths: usize, h: usize, w: usize, mode: FinolaMode },
}

impl Primitive {
    pub fn apply(&self, g: &mut Graph<f64>, xs: &[Var]) -> Result<Var> {
        match self {
            Primitive::MatMul => g.matmul(xs[0], xs[1]),
            Primitive::Conv2d { stride, pad, bias } => {
                g.conv2d(xs[0], xs[1], bias.then(|| xs[2]), *stride, *pad)
            }
            Primitive::Add => g.add(xs[0], xs[1]),
            Primitive::Sub => g.sub(xs[0], xs[1]),
            Primitive::Mul => g.mul(xs[0], xs[1]),
            Primitive::Scale(s) => g.scale(xs[0], *s),
            Primitive::BiasAdd => g.bias_add(xs[0], xs[1]),
            Primitive::Reshape(s) => g.reshape(xs[0], s),
            Primitive::Transpose => g.transpose(xs[0]),
            Primitive::ChannelNorm => g.channel_norm(xs[0]),
            Primitive::Softmax => g.softmax(xs[0]),
            Primitive::Relu => g.relu(xs[0]),
            Primitive::Gelu => g.gelu(xs[0]),
            Primitive::Abs => g.abs(xs[0]),
            Primitive::Maxout(k) => g.maxout(xs[0], *k),
            Primitive::Upsample { fy, fx } => g.upsample(xs[0], *fy, *fx),
            Primitive::Crop { top, left, h, w } => g.crop(xs[0], *top, *left, *h, *w),
            Primitive::Narrow { axis, start, len } => g.narrow(xs[0], *axis, *start, *len),
            Primitive::Concat(axis) => g.concat(xs, *axis),
            Primitive::Mean => g.mean(xs[0]),
            Primitive::Sum => g.sum(xs[0]),
            Primitive::Finola { paths, h, w, mode } => {
                g.finola(xs[0], xs[1], xs[2], *paths, *h, *w, *mode)
            }
        }
    }

    /// True when the sampled inputs sit within `margin` of a kink.
    fn near_kink(&self, inputs: &[Tensor<f64>], margin: f64) -> bool {
        match self {
            Primitive::Relu | Primitive::Abs => inputs[0].data().iter().any(|x| x.abs() < margin),
            Primitive::Maxout(k) => {
                let t = &inputs[0];
                let len = *t.shape().last().unwrap();
                let d = len / k;
                t.data().chunks(len).any(|row| {
                    (0..d).any(|i| {
                        let mut vals: Vec<f64> = (0..*k).map(|j| row[j * d + i]).collect();
                        vals.sort_by(f64::total_cmp);
                        vals.windows(2).any(|w| (w[1] - w[0]).abs() < margin)
                    })
                })
            }
            _ => false,
        }
    }

    fn input_scale(&self, index: usize) -> f64 {
        match self {
            // keep the recurrence contractive-ish so values stay O(1)
            Primitive::Finola { .. } if index > 0 => 0.15,
            _ => 1.0,
        }
    }
}

fn evaluate(p: &Primitive, inputs: &[Tensor<f64>], seed: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let xs = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = p.apply(&mut g, &xs)?;
    Ok(g.value(out)
        .data()
        .iter()
        .zip(seed.data())
        .map(|(a, b)| a * b)
        .sum())
}

/// Maximum over all input coordinates of `|analytic − numeric| / (|analytic| + 1e-12)`
/// for `⟨seed, primitive(inputs)⟩` with random inputs of the given shapes
/// and a random seed tensor. Inputs landing near a kink are resampled up to
/// ten times before giving up.
pub fn grad_check(p: &Primitive, shapes: &[Vec<usize>], eps: f64, seed: u64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("grad_check eps {eps:e} outside [1e-7, 1e-3]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::new();
    for attempt in 0..=10 {
        if attempt == 10 {
            return Err(Error::Numeric(format!(
                "grad_check: {p:?} kept sampling non-differentiable points"
            )));
        }
        inputs = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let scale = p.input_scale(i);
                Tensor::from_fn(s, |_| rng.random_range(-1.0..1.0) * scale)
            })
            .collect();
        if !p.near_kink(&inputs, 10.0 * eps) {
            break;
        }
    }

    let mut g = Graph::new();
    let xs = inputs
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = p.apply(&mut g, &xs)?;
    let seed_t = Tensor::from_fn(g.shape(out), |_| rng.random_range(-1.0..1.0));
    g.backward(out, seed_t.clone())?;

    let mut worst: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let analytic = g
            .grad(x)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + eps;
            let fp = evaluate(p, &inputs, &seed_t)?;
            inputs[i].data_mut()[j] = orig - eps;
            let fm = evaluate(p, &inputs, &seed_t)?;
            inputs[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / (a.abs() + 1e-12));
        }
    }
    Ok(worst)
}

/// Representative small shapes for every primitive, used by the oracle suites.
pub fn standard_cases() -> Vec<(&'static str, Primitive, Vec<Vec<usize>>)> {
    use Primitive as P;
    vec![
        ("matmul", P::MatMul, vec![vec![2, 3], vec![3, 2]]),
        ("conv2d_3x3_pad1", P::Conv2d { stride: 1, pad: 1, bias: true }, vec![vec![2, 4, 5], vec![3, 2, 3, 3], vec![3]]),
        ("conv2d_stride2", P::Conv2d { stride: 2, pad: 0, bias: false }, vec![vec![1, 5, 5], vec![2, 1, 3, 3]]),
        ("add", P::Add, vec![vec![3, 4], vec![3, 4]]),
        ("sub", P::Sub, vec![vec![3, 4], vec![3, 4]]),
        ("mul", P::Mul, vec![vec![3, 4], vec![3, 4]]),
        ("scale", P::Scale(-1.7), vec![vec![5]]),
        ("bias_add", P::BiasAdd, vec![vec![3, 4], vec![4]]),
        ("reshape", P::Reshape(vec![4, 3]), vec![vec![2, 6]]),
        ("transpose", P::Transpose, vec![vec![3, 5]]),
        ("channel_norm", P::ChannelNorm, vec![vec![2, 8]]),
        ("softmax", P::Softmax, vec![vec![3, 5]]),
        ("relu", P::Relu, vec![vec![4, 4]]),
        ("gelu", P::Gelu, vec![vec![4, 4]]),
        ("abs", P::Abs, vec![vec![4, 4]]),
        ("maxout2", P::Maxout(2), vec![vec![3, 6]]),
        ("maxout3", P::Maxout(3), vec![vec![9]]),
        ("nearest_upsample2x", P::Upsample { fy: 2, fx: 2 }, vec![vec![2, 3, 2]]),
        ("upsample_rows", P::Upsample { fy: 2, fx: 1 }, vec![vec![2, 2, 3]]),
        ("crop", P::Crop { top: 1, left: 2, h: 3, w: 2 }, vec![vec![2, 5, 5]]),
        ("narrow_cols", P::Narrow { axis: 1, start: 1, len: 2 }, vec![vec![3, 4]]),
        ("narrow_rows", P::Narrow { axis: 0, start: 1, len: 2 }, vec![vec![4, 3]]),
        ("concat_cols", P::Concat(1), vec![vec![3, 2], vec![3, 3]]),
        ("concat_rows", P::Concat(0), vec![vec![2, 3], vec![1, 3]]),
        ("mean", P::Mean, vec![vec![3, 3]]),
        ("sum", P::Sum, vec![vec![3, 3]]),
    ]
}
