use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::check_inputs;

fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::from_f64(data, shape).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "{a:?} vs {b:?}");
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Σ out ⊙ R for a fixed random R, so every output element matters.
fn weighted(out: Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let r = Tensor::from_vec(rand_vec(&mut rng, out.numel()), out.shape())?;
    Ok(out.mul(&r)?.sum())
}

const SEEDS: u64 = 20;
const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn gradcheck(shapes: &[&[usize]], f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + Copy) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<(Vec<f64>, Vec<usize>)> = shapes
            .iter()
            .map(|s| (rand_vec(&mut rng, numel(s)), s.to_vec()))
            .collect();
        let errs = check_inputs(&inputs, STEP, |ts| weighted(f(ts)?, seed)).unwrap();
        for (i, e) in errs.iter().enumerate() {
            assert!(*e < TOL, "seed {seed} input {i}: relative error {e}");
        }
    }
}

#[test]
fn conv1d_examples() {
    let x = t(&[1., 2., 3., 4.], &[1, 4]);
    let k = t(&[1., 1.], &[1, 1, 2]);
    assert_eq!(x.conv1d(&k, None, 2, 1).unwrap().to_vec(), vec![3., 7.]);

    let x = t(&[5., 5., 5., 5.], &[1, 4]);
    let k = t(&[1., -1.], &[1, 1, 2]);
    assert_eq!(x.conv1d(&k, None, 2, 1).unwrap().to_vec(), vec![0., 0.]);

    let x = t(&[1., 0., 0., 0.], &[1, 4]);
    let k = t(&[1., 0.], &[1, 1, 2]);
    assert_eq!(x.conv1d(&k, None, 2, 1).unwrap().to_vec(), vec![1., 0.]);
}

#[test]
fn conv1d_direct_summation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, c_in, len, c_out, groups, k, stride) = (2, 4, 11, 6, 2, 3, 2);
    let xv = rand_vec(&mut rng, b * c_in * len);
    let wv = rand_vec(&mut rng, c_out * (c_in / groups) * k);
    let bv = rand_vec(&mut rng, c_out);
    let y = t(&xv, &[b, c_in, len])
        .conv1d(
            &t(&wv, &[c_out, c_in / groups, k]),
            Some(&t(&bv, &[c_out])),
            stride,
            groups,
        )
        .unwrap();
    let l_out = (len - k) / stride + 1;
    assert_eq!(y.shape(), &[b, c_out, l_out]);
    let cpg = c_in / groups;
    let opg = c_out / groups;
    for bi in 0..b {
        for o in 0..c_out {
            for tt in 0..l_out {
                let mut acc = bv[o];
                for ci in 0..cpg {
                    let cin = (o / opg) * cpg + ci;
                    for j in 0..k {
                        acc += wv[(o * cpg + ci) * k + j]
                            * xv[(bi * c_in + cin) * len + tt * stride + j];
                    }
                }
                let got = y.data()[(bi * c_out + o) * l_out + tt];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv1d_errors() {
    let x = t(&[1., 2., 3.], &[3, 1]);
    let k = t(&[1., 1.], &[1, 1, 2]);
    match x.conv1d(&k, None, 1, 2) {
        Err(Error::Dimension { axis, .. }) => assert!(axis.contains("input channels")),
        other => panic!("{other:?}"),
    }
    let x = t(&[1., 2.], &[1, 2]);
    let k = t(&[1., 1., 1.], &[1, 1, 3]);
    assert!(matches!(
        x.conv1d(&k, None, 1, 1),
        Err(Error::InputTooShort { .. })
    ));
    let k = t(&[1., 1., 1., 1.], &[1, 2, 2]);
    match x.conv1d(&k, None, 1, 1) {
        Err(Error::Dimension { axis, .. }) => assert!(axis.contains("kernel input channels")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn softmax_examples() {
    close(
        &t(&[0., 0.], &[2]).softmax_lastdim().unwrap().to_vec(),
        &[0.5, 0.5],
        1e-12,
    );
    close(
        &t(&[1000., 1000.], &[2]).softmax_lastdim().unwrap().to_vec(),
        &[0.5, 0.5],
        1e-12,
    );
    close(
        &t(&[0., 3f64.ln()], &[2])
            .softmax_lastdim()
            .unwrap()
            .to_vec(),
        &[0.25, 0.75],
        1e-12,
    );
    assert!(t(&[], &[2, 0]).softmax_lastdim().is_err());
}

#[test]
fn softmax_positive_and_normalized_over_wide_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v: Vec<f32> = (0..64 * 7)
        .map(|_| rng.random_range(-1e4f32..1e4))
        .collect();
    let y = Tensor::<f32>::from_vec(v, &[64, 7])
        .unwrap()
        .softmax_lastdim()
        .unwrap();
    for row in y.data().chunks(7) {
        assert!(row.iter().all(|&p| p >= 0.0));
        let s: f64 = row.iter().map(|&p| p as f64).sum();
        assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
    }
    // strict positivity needs logits within the exponent range
    let v: Vec<f64> = (0..64 * 7)
        .map(|_| rng.random_range(-300.0..300.0))
        .collect();
    let y = t(&v, &[64, 7]).softmax_lastdim().unwrap();
    assert!(y.data().iter().all(|&p| p > 0.0));
}

#[test]
fn layer_norm_examples() {
    let one = t(&[1., 1., 1.], &[3]);
    let zero = t(&[0., 0., 0.], &[3]);
    let y = t(&[1., 1., 1.], &[3])
        .layer_norm(&one, &zero, 1e-5)
        .unwrap();
    close(&y.to_vec(), &[0., 0., 0.], 0.0);

    let y = t(&[-1., 1.], &[2])
        .layer_norm(&t(&[1., 1.], &[2]), &t(&[0., 0.], &[2]), 0.0)
        .unwrap();
    close(&y.to_vec(), &[-1., 1.], 1e-12);

    let bias = t(&[0.5, -2., 3.], &[3]);
    let y = t(&[4., -7., 0.1, 2., 2., 9.], &[2, 3])
        .layer_norm(&zero, &bias, 1e-5)
        .unwrap();
    close(&y.to_vec(), &[0.5, -2., 3., 0.5, -2., 3.], 0.0);

    let r = t(&[3.], &[1]).layer_norm(&t(&[1.], &[1]), &t(&[0.], &[1]), 0.0);
    assert!(matches!(r, Err(Error::DivisionHazard)));
}

#[test]
fn layer_norm_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = t(&rand_vec(&mut rng, 40), &[5, 8]);
    let y = x
        .layer_norm(&t(&[1.; 8], &[8]), &t(&[0.; 8], &[8]), 1e-12)
        .unwrap();
    for row in y.data().chunks(8) {
        let m = row.iter().sum::<f64>() / 8.0;
        let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 8.0;
        assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-5);
    }
}

#[test]
fn gelu_examples() {
    let y = t(&[0., 1., -10.], &[3]).gelu().to_vec();
    assert_eq!(y[0], 0.0);
    // Φ(1) = 0.5 (1 + erf(1/√2)) = 0.841344746...
    assert!((y[1] - 0.841_344_746_068_542_9).abs() < 1e-12);
    assert!(y[2].abs() < 1e-8);
}

#[test]
fn backward_examples() {
    let x = Tensor::param(vec![1.0f64, 2.0, 3.0], &[3]).unwrap();
    x.sum().backward().unwrap();
    assert_eq!(*x.grad().unwrap(), vec![1., 1., 1.]);

    let x = Tensor::param(vec![2.0f64], &[1]).unwrap();
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(*x.grad().unwrap(), vec![4.]);

    let c = Tensor::<f64>::scalar(3.0);
    assert!(matches!(c.backward(), Err(Error::NoTape)));
    let c = t(&[1., 2.], &[2]).sum();
    assert!(matches!(c.backward(), Err(Error::NoTape)));
}

#[test]
fn backward_rejects_non_scalar_and_second_sweep() {
    let x = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
    let y = x.scale(2.0);
    assert!(matches!(y.backward(), Err(Error::NotScalar(_))));

    let loss = y.sum();
    loss.backward().unwrap();
    assert!(matches!(loss.backward(), Err(Error::NoTape)));

    let x = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
    let loss = x.scale(3.0).sum();
    loss.backward_retain().unwrap();
    loss.backward().unwrap();
    assert_eq!(*x.grad().unwrap(), vec![6., 6.]);
}

#[test]
fn shared_subexpressions_accumulate() {
    // y = a·a reused twice versus a duplicated construction with two copies
    let a = Tensor::param(vec![0.3f64, -1.2, 2.0], &[3]).unwrap();
    let y = a.mul(&a).unwrap();
    let loss = y.add(&y.tanh()).unwrap().sum();
    loss.backward().unwrap();
    let shared = a.grad().unwrap().clone();

    let b = Tensor::param(vec![0.3f64, -1.2, 2.0], &[3]).unwrap();
    let y1 = b.mul(&b).unwrap();
    let y2 = b.mul(&b).unwrap();
    let loss = y1.add(&y2.tanh()).unwrap().sum();
    loss.backward().unwrap();
    let dup = b.grad().unwrap().clone();
    close(&shared, &dup, 1e-14);
    // analytic: 2a (1 + 1 − tanh²(a²))
    let expected: Vec<f64> = [0.3f64, -1.2, 2.0]
        .iter()
        .map(|a| 2.0 * a * (2.0 - (a * a).tanh().powi(2)))
        .collect();
    close(&shared, &expected, 1e-12);
}

#[test]
fn no_grad_skips_recording() {
    let x = Tensor::param(vec![1.0f64], &[1]).unwrap();
    let y = {
        let _g = no_grad();
        x.scale(2.0).sum()
    };
    assert!(!y.has_tape());
    assert!(x.scale(2.0).sum().has_tape());
}

#[test]
fn grad_elementwise_and_shape_ops() {
    gradcheck(&[&[3, 4], &[3, 4]], |ts| ts[0].add(&ts[1]));
    gradcheck(&[&[3, 4], &[3, 4]], |ts| ts[0].sub(&ts[1]));
    gradcheck(&[&[3, 4], &[3, 4]], |ts| ts[0].mul(&ts[1]));
    gradcheck(&[&[2, 3, 4], &[3, 4]], |ts| ts[0].add_broadcast(&ts[1]));
    gradcheck(&[&[5, 2], &[1]], |ts| ts[0].mul_scalar(&ts[1]));
    gradcheck(&[&[6]], |ts| Ok(ts[0].scale(-1.7)));
    gradcheck(&[&[2, 3, 4]], |ts| ts[0].mean_lastdim());
    gradcheck(&[&[2, 3, 4]], |ts| Ok(ts[0].mean()));
    gradcheck(&[&[12]], |ts| Ok(ts[0].sigmoid()));
    gradcheck(&[&[12]], |ts| Ok(ts[0].tanh()));
    gradcheck(&[&[2, 3, 4]], |ts| ts[0].reshape(&[6, 4]));
    gradcheck(&[&[2, 3, 4]], |ts| ts[0].permute(&[2, 0, 1]));
    gradcheck(&[&[2, 3, 4]], |ts| ts[0].transpose());
    gradcheck(&[&[2, 3, 2], &[2, 1, 2]], |ts| {
        Tensor::concat(&[&ts[0], &ts[1]], 1)
    });
    gradcheck(&[&[2, 5, 3]], |ts| ts[0].narrow(1, 1, 3));
    gradcheck(&[&[2, 5]], |ts| ts[0].pad_last(8));
    gradcheck(&[&[3, 2]], |ts| Ok(ts[0].expand_leading(3)));
    gradcheck(&[&[2, 4]], |ts| ts[0].index_select(1, &[3, 0, 0, 2, 3]));
}

#[test]
fn grad_linalg() {
    gradcheck(&[&[2, 3, 4], &[4, 5]], |ts| ts[0].matmul(&ts[1]));
    gradcheck(&[&[2, 3, 4], &[2, 4, 2]], |ts| ts[0].matmul(&ts[1]));
    gradcheck(&[&[2, 2, 3, 4], &[2, 2, 4, 3]], |ts| ts[0].matmul(&ts[1]));
}

#[test]
fn grad_nn_ops() {
    gradcheck(&[&[3, 5]], |ts| ts[0].softmax_lastdim());
    gradcheck(&[&[4, 6], &[6], &[6]], |ts| {
        ts[0].layer_norm(&ts[1], &ts[2], 1e-5)
    });
    gradcheck(&[&[16]], |ts| Ok(ts[0].gelu()));
    gradcheck(&[&[2, 4, 9], &[4, 2, 3], &[4]], |ts| {
        ts[0].conv1d(&ts[1], Some(&ts[2]), 2, 2)
    });
    gradcheck(&[&[3, 8], &[2, 3, 4]], |ts| {
        ts[0].conv1d(&ts[1], None, 4, 1)
    });
}

#[test]
fn grad_cross_entropy() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![(rand_vec(&mut rng, 12), vec![4, 3])];
        let errs = check_inputs(&inputs, STEP, |ts| ts[0].cross_entropy(&[0, 2, 1, 2])).unwrap();
        assert!(errs[0] < TOL, "seed {seed}: {errs:?}");
    }
}

#[test]
fn dropout_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = t(&[1.0; 1000], &[1000]);
    let y = x.dropout(0.2, &mut rng);
    let kept = y.data().iter().filter(|&&v| v != 0.0).count();
    assert!((700..900).contains(&kept));
    assert!(y
        .data()
        .iter()
        .all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    assert!(x.dropout(0.0, &mut rng).ptr_eq(&x));
}

#[test]
fn cross_entropy_examples() {
    let l = t(&[0., 0.], &[1, 2]).cross_entropy(&[0]).unwrap().item();
    assert!((l - 2f64.ln()).abs() < 1e-12);
    let l = t(&[1e4, -1e4], &[1, 2]).cross_entropy(&[0]).unwrap().item();
    assert!(l.is_finite() && l.abs() < 1e-12);
    let mut prev = f64::INFINITY;
    for s in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let l = t(&[s, 0., 0.], &[1, 3]).cross_entropy(&[0]).unwrap().item();
        assert!(l < prev);
        prev = l;
    }
    assert!(matches!(
        t(&[0., 0.], &[1, 2]).cross_entropy(&[2]),
        Err(Error::Label {
            label: 2,
            classes: 2
        })
    ));
}
