use super::gradcheck::{grad_check, standard_cases, Primitive};
use super::*;
use crate::error::Error;
use crate::finola::FinolaMode;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn identity_matmul() {
    let mut g = Graph::new();
    let x = t(&[3, 4], &(0..12).map(|i| i as f64 * 0.5 - 2.0).collect::<Vec<_>>());
    let i3 = g.constant(Tensor::eye(3)).unwrap();
    let xv = g.constant(x.clone()).unwrap();
    let y = g.matmul(i3, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn unit_kernel_conv_is_identity() {
    let mut g = Graph::new();
    let x = Tensor::from_fn(&[1, 4, 5], |i| (i as f64).sin());
    let xv = g.constant(x.clone()).unwrap();
    let w = g.constant(t(&[1, 1, 1, 1], &[1.0])).unwrap();
    let y = g.conv2d(xv, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_matches_naive_loops() {
    let (cin, h, w, cout, k, pad, stride) = (2, 6, 5, 3, 3, 1, 2);
    let x = Tensor::from_fn(&[cin, h, w], |i| ((i * 7 % 11) as f64) * 0.1 - 0.5);
    let wt = Tensor::from_fn(&[cout, cin, k, k], |i| ((i * 5 % 13) as f64) * 0.07 - 0.4);
    let b = t(&[cout], &[0.1, -0.2, 0.3]);
    let mut g = Graph::new();
    let (xv, wv, bv) = (
        g.constant(x.clone()).unwrap(),
        g.constant(wt.clone()).unwrap(),
        g.constant(b.clone()).unwrap(),
    );
    let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    assert_eq!(g.shape(y), [cout, ho, wo]);
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = b.data()[co];
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += x.data()[(ci * h + iy as usize) * w + ix as usize]
                                    * wt.data()[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                let got = g.value(y).data()[(co * ho + oy) * wo + ox];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn channel_norm_pair() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[1.0, 3.0])).unwrap();
    let y = g.channel_norm(x).unwrap();
    let d = g.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-5 && (d[1] - 1.0).abs() < 1e-5);
}

#[test]
fn linear_scale_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0)).unwrap();
    let y = g.scale(x, 3.0).unwrap();
    g.backward_scalar(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[3.0]);
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0])).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward_scalar(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn repeated_backward_is_an_error() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.0)).unwrap();
    let y = g.scale(x, 2.0).unwrap();
    g.backward_scalar(y).unwrap();
    assert!(matches!(g.backward_scalar(y), Err(Error::BackwardTwice)));
    g.reset_grads();
    g.backward_scalar(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
}

#[test]
fn empty_graph_backward_is_noop() {
    let mut g: Graph<f64> = Graph::new();
    assert!(g.is_empty());
    g.backward(Var::default_for_tests(), Tensor::scalar(1.0)).unwrap();
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::<f64>::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::<f64>::zeros(&[2, 3])).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn non_finite_input_is_numeric_error() {
    let mut g = Graph::new();
    let err = g.constant(t(&[2], &[1.0, f64::NAN])).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
}

#[test]
fn ops_without_grad_inputs_record_no_history() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::<f64>::eye(2)).unwrap();
    let b = g.matmul(a, a).unwrap();
    assert!(!g.requires_grad(b));
}

#[test]
fn grad_check_examples() {
    let e = grad_check(&Primitive::MatMul, &[vec![2, 3], vec![3, 2]], 1e-5, 1).unwrap();
    assert!(e < 1e-6, "matmul {e}");
    let e = grad_check(&Primitive::ChannelNorm, &[vec![1, 8]], 1e-5, 2).unwrap();
    assert!(e < 1e-5, "channel_norm {e}");
    let e = grad_check(
        &Primitive::Conv2d { stride: 1, pad: 1, bias: true },
        &[vec![2, 4, 4], vec![2, 2, 3, 3], vec![2]],
        1e-5,
        3,
    )
    .unwrap();
    assert!(e < 1e-5, "conv2d {e}");
}

#[test]
fn grad_check_rejects_bad_eps() {
    assert!(grad_check(&Primitive::Sum, &[vec![2]], 1e-2, 0).is_err());
}

#[test]
fn every_primitive_passes_one_seed() {
    for (name, p, shapes) in standard_cases() {
        let e = grad_check(&p, &shapes, 1e-5, 42).unwrap();
        assert!(e < 1e-4, "{name}: {e}");
    }
    let p = Primitive::Finola { paths: 2, h: 3, w: 3, mode: FinolaMode::Normalized };
    let e = grad_check(&p, &[vec![8], vec![4, 4], vec![4, 4]], 1e-5, 42).unwrap();
    assert!(e < 1e-4, "finola {e}");
}

#[test]
fn backward_is_linear_in_the_seed() {
    // backward(α·y1 + β·y2) == α·backward(y1) + β·backward(y2)
    let x0 = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.3).sin());
    let w0 = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.7).cos());
    let build = |coef: (f64, f64)| {
        let mut g = Graph::new();
        let x = g.param(x0.clone()).unwrap();
        let w = g.param(w0.clone()).unwrap();
        let xn = g.channel_norm(x).unwrap();
        let y1 = g.matmul(xn, w).unwrap();
        let y1 = g.gelu(y1).unwrap();
        let y1 = g.sum(y1).unwrap();
        let sq = g.mul(x, x).unwrap();
        let y2 = g.mean(sq).unwrap();
        let a = g.scale(y1, coef.0).unwrap();
        let b = g.scale(y2, coef.1).unwrap();
        let y = g.add(a, b).unwrap();
        g.backward_scalar(y).unwrap();
        (g.grad(x).unwrap().clone(), g.grad(w).unwrap().clone())
    };
    let (alpha, beta) = (0.75, -1.5);
    let (gx, gw) = build((alpha, beta));
    let (gx1, gw1) = build((1.0, 0.0));
    let (gx2, gw2) = build((0.0, 1.0));
    for i in 0..gx.numel() {
        let lin = alpha * gx1.data()[i] + beta * gx2.data()[i];
        assert!((gx.data()[i] - lin).abs() < 1e-13);
    }
    for i in 0..gw.numel() {
        let lin = alpha * gw1.data()[i] + beta * gw2.data()[i];
        assert!((gw.data()[i] - lin).abs() < 1e-13);
    }
}

#[test]
fn identical_inputs_give_bit_identical_gradients() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::from_fn(&[2, 3, 3], |i| (i as f32 * 0.37).sin())).unwrap();
        let w = g.param(Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f32 * 0.11).cos())).unwrap();
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.softmax(y).unwrap();
        let s = g.sum(y).unwrap();
        g.backward_scalar(s).unwrap();
        (g.grad(x).unwrap().clone(), g.grad(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}
