//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! Parameters live in a [`ParamStore`]; each training step records its
//! forward computation on a fresh [`Tape`], calls [`Tape::backward`] once and
//! folds the resulting [`Gradients`] into the store.

mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    check_store_gradients, finite_difference_check, relative_error, sample_coords, RELATIVE_ERROR_FLOOR,
    GradCheckReport,
};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, SoftmaxMask, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Shift-invariant softmax of a vector.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Contract("softmax of an empty vector".into()));
    }
    kernels::check_finite(x, "softmax")?;
    let mut out = vec![0.0; x.len()];
    kernels::masked_softmax_row(x, &mut out, |_| true);
    Ok(out)
}

/// Elementwise GELU (tanh approximation).
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    kernels::check_finite(x.data(), "gelu")?;
    let data = x.data().iter().map(|&v| kernels::gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// `-log softmax(logits)[gold]`
pub fn cross_entropy(logits: &[f64], gold: usize) -> Result<f64> {
    if gold >= logits.len() {
        return Err(Error::Index(format!(
            "gold class {gold} with {} logits",
            logits.len()
        )));
    }
    kernels::check_finite(logits, "cross_entropy")?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[gold])
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for p in u {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(softmax(&[1000.0, 1000.0]).unwrap(), vec![0.5, 0.5]);
        // 40-digit reference evaluation of exp(i) / sum exp
        let want = [
            0.090_030_573_170_380_458,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        let got = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax(&[1.0, f64::NAN]),
            Err(Error::NumericInput(_))
        ));
        assert!(matches!(
            softmax(&[f64::INFINITY]),
            Err(Error::NumericInput(_))
        ));
    }

    #[test]
    fn softmax_sums_to_one_on_wide_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let n = rng.gen_range(1..20);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e4..1e4)).collect();
            let p = softmax(&x).unwrap();
            assert!(p.iter().all(|v| *v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_examples() {
        let g = gelu(&Tensor::vector(vec![0.0, 1.0, 30.0])).unwrap();
        assert_eq!(g.data()[0], 0.0);
        assert_abs_diff_eq!(g.data()[1], 0.841_191_990_608_276_7, epsilon = 1e-14);
        assert_abs_diff_eq!(g.data()[2], 30.0, epsilon = 1e-9);
        let grid: Vec<f64> = (0..=400).map(|i| -0.75 + i as f64 * 0.02).collect();
        let g = gelu(&Tensor::vector(grid)).unwrap();
        assert!(g.data().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(
            cross_entropy(&[0.3; 7], 2).unwrap(),
            7f64.ln(),
            epsilon = 1e-14
        );
        assert!(cross_entropy(&[500.0, 0.0, 0.0], 0).unwrap() < 1e-12);
        assert_abs_diff_eq!(
            cross_entropy(&[2.0, 1.0, 0.0], 1).unwrap(),
            1.407_605_964_444_380_3,
            epsilon = 1e-14
        );
        assert!(matches!(cross_entropy(&[1.0, 2.0], 2), Err(Error::Index(_))));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap().with_grad());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_dot_is_twice_x() {
        let mut tape = Tape::new();
        let xs = vec![0.5, -1.5, 2.0];
        let x = tape.leaf(&Tensor::vector(xs.clone()).with_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        let want: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.wrt(x).unwrap(), want.as_slice());
    }

    #[test]
    fn backward_rejects_non_scalar_root_and_second_call() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]).with_grad());
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
        let s = tape.sum(y);
        assert!(tape.backward(s).is_ok());
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_params_get_zero_grad() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = store.insert("b", Tensor::vector(vec![3.0])).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let s = tape.sum(av);
        let g = tape.backward(s).unwrap();
        g.accumulate_into(&mut store).unwrap();
        assert_eq!(store.get(a).grad().unwrap(), &[1.0, 1.0]);
        assert_eq!(store.get(b).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn sum_of_squares_gradcheck() {
        let x = vec![0.3, -1.2, 2.5, 0.01];
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let err = finite_difference_check(
            |p| p.iter().map(|v| v * v).sum(),
            &x,
            &analytic,
            1e-4,
            &[0, 1, 2, 3],
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn softmax_cross_entropy_gradcheck() {
        let logits = vec![0.2, -1.0, 3.0, 0.7, -0.4];
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::row(logits.clone()).with_grad());
        let loss = tape.cross_entropy(l, &[3]).unwrap();
        let g = tape.backward(loss).unwrap();
        let err = finite_difference_check(
            |p| cross_entropy(p, 3).unwrap(),
            &logits,
            g.wrt(l).unwrap(),
            1e-4,
            &[0, 1, 2, 3, 4],
        );
        assert!(err < 1e-5, "{err}");
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .unwrap()
            .with_grad()
    }

    /// Checks d(sum(w * op(inputs)))/d(inputs) for a fixed random `w`.
    fn check_op(
        shapes: &[&[usize]],
        seed: u64,
        op: impl Fn(&mut Tape, &[Var]) -> Var,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        let weight_seed = rng.gen::<u64>();
        let eval = |ins: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t)).collect();
            let out = op(&mut tape, &vars);
            let mut wr = ChaCha8Rng::seed_from_u64(weight_seed);
            let n = tape.value(out).len();
            let w = Tensor::new(
                tape.shape(out).to_vec(),
                (0..n).map(|_| wr.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let wv = tape.leaf(&w);
            let prod = tape.mul(out, wv).unwrap();
            let s = tape.sum(prod);
            let val = tape.scalar(s);
            let g = tape.backward(s).unwrap();
            let grads = vars
                .iter()
                .map(|v| g.wrt(*v).map(<[f64]>::to_vec).unwrap_or_default())
                .collect();
            (val, grads)
        };
        let (_, analytic) = eval(&inputs);
        let mut worst = 0.0f64;
        for k in 0..inputs.len() {
            let coords: Vec<usize> = (0..inputs[k].len()).collect();
            let err = finite_difference_check(
                |p| {
                    let mut ins = inputs.clone();
                    ins[k].data_mut().copy_from_slice(p);
                    eval(&ins).0
                },
                inputs[k].data(),
                &analytic[k],
                1e-4,
                &coords,
            );
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn every_differentiable_op_passes_gradcheck() {
        let tol = 1e-4;
        let cases: Vec<(&str, f64)> = vec![
            ("matmul", check_op(&[&[3, 4], &[4, 2]], 1, |t, v| t.matmul(v[0], v[1]).unwrap())),
            ("matmul_bt", check_op(&[&[3, 4], &[5, 4]], 2, |t, v| t.matmul_bt(v[0], v[1]).unwrap())),
            ("add", check_op(&[&[2, 3], &[2, 3]], 3, |t, v| t.add(v[0], v[1]).unwrap())),
            ("mul", check_op(&[&[2, 3], &[2, 3]], 4, |t, v| t.mul(v[0], v[1]).unwrap())),
            ("add_bias", check_op(&[&[3, 4], &[4]], 5, |t, v| t.add_bias(v[0], v[1]).unwrap())),
            ("scale", check_op(&[&[2, 2]], 6, |t, v| t.scale(v[0], -1.7))),
            ("gelu", check_op(&[&[3, 3]], 7, |t, v| t.gelu(v[0]))),
            ("tanh", check_op(&[&[3, 3]], 8, |t, v| t.tanh(v[0]))),
            ("sigmoid", check_op(&[&[3, 3]], 9, |t, v| t.sigmoid(v[0]))),
            ("softmax", check_op(&[&[3, 5]], 10, |t, v| t.softmax_rows(v[0], &SoftmaxMask::none()).unwrap())),
            ("softmax_causal", check_op(&[&[4, 4]], 11, |t, v| t.softmax_rows(v[0], &SoftmaxMask::causal()).unwrap())),
            ("softmax_keys", check_op(&[&[2, 4]], 12, |t, v| {
                t.softmax_rows(v[0], &SoftmaxMask::keys(vec![true, false, true, true])).unwrap()
            })),
            ("layer_norm", check_op(&[&[3, 6], &[6], &[6]], 13, |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap())),
            ("gather", check_op(&[&[5, 3]], 14, |t, v| t.gather_rows(v[0], &[4, 0, 4, 2]).unwrap())),
            ("concat_rows", check_op(&[&[2, 3], &[1, 3]], 15, |t, v| t.concat_rows(&[v[0], v[1]]).unwrap())),
            ("concat_cols", check_op(&[&[2, 3], &[2, 1]], 16, |t, v| t.concat_cols(&[v[0], v[1]]).unwrap())),
            ("slice_rows", check_op(&[&[4, 3]], 17, |t, v| t.slice_rows(v[0], 1, 2).unwrap())),
            ("slice_cols", check_op(&[&[3, 5]], 18, |t, v| t.slice_cols(v[0], 2, 2).unwrap())),
            ("reshape", check_op(&[&[2, 6]], 19, |t, v| t.reshape(v[0], vec![3, 4]).unwrap())),
            ("transpose", check_op(&[&[2, 5]], 20, |t, v| t.transpose(v[0]))),
            ("mean", check_op(&[&[2, 5]], 21, |t, v| t.mean(v[0]))),
            ("cross_entropy", check_op(&[&[3, 4]], 22, |t, v| t.cross_entropy(v[0], &[0, 3, 1]).unwrap())),
        ];
        for (name, err) in cases {
            assert!(err < tol, "{name}: max relative error {err}");
        }
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(x in prop::collection::vec(-50.0f64..50.0, 1..12), c in -1e3f64..1e3) {
            let a = softmax(&x).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax(&shifted).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
