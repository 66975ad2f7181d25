//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The op set is fixed to what the feedback autoencoder needs: matmul,
//! elementwise arithmetic with row broadcasting, GELU/tanh, softmax,
//! layernorm, reshaping/slicing/concatenation, reductions, power
//! normalization and a straight-through estimator for hard sampling.
//! Complex values live outside this module as paired real channels.

mod tape;
mod tensor;

pub use tape::{gelu, Gradients, Tape, Var};
pub use tensor::Tensor;


#[cfg(test)]
mod tests {
    use super::gradcheck::*;
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn mat(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut t = Tape::new();
        let i2 = t.constant(mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let a = t.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let out = t.matmul(i2, a).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let p = t.constant(mat(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let b = t.constant(mat(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let out = t.matmul(p, b).unwrap();
        assert_eq!(t.value(out).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_gradient() {
        let f = |t: &mut Tape, v: &[Var]| {
            let p = t.matmul(v[0], v[1])?;
            t.sum(p)
        };
        assert_grads(f, &[random(&[3, 3], 1), random(&[3, 3], 2)], 1e-6);
    }

    #[test]
    fn elementwise_basics() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let b = t.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 6.0]);
        let z = t.constant(Tensor::scalar(0.0));
        let g = t.gelu(z).unwrap();
        assert_eq!(t.value(g).data(), &[0.0]);
        let c = t.constant(Tensor::zeros(&[3]));
        assert!(matches!(t.add(a, c), Err(Error::Dimension(_))));
    }

    #[test]
    fn gelu_gradient_at_fixed_points() {
        let x = Tensor::new(vec![4], vec![-2.0, -0.5, 0.3, 1.7]).unwrap();
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.gelu(v[0])?;
            t.sum(y)
        };
        assert_grads(f, &[x], 1e-6);
    }

    #[test]
    fn binary_and_broadcast_gradients() {
        let f = |t: &mut Tape, v: &[Var]| {
            let a = t.add(v[0], v[1])?;
            let m = t.mul(a, v[2])?;
            let s = t.sub(m, v[1])?;
            let th = t.tanh(s)?;
            let sq = t.mul(th, th)?;
            t.sum(sq)
        };
        assert_grads(
            f,
            &[random(&[3, 4], 3), random(&[4], 4), random(&[3, 4], 5)],
            1e-6,
        );
    }

    #[test]
    fn softmax_values() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[4]));
        let s = t.softmax(a).unwrap();
        assert_eq!(t.value(s).data(), &[0.25; 4]);
        let b = t.constant(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
        let s = t.softmax(b).unwrap();
        let v = t.value(s).data();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_gradient() {
        let f = |t: &mut Tape, v: &[Var]| {
            let s = t.softmax(v[0])?;
            let c = t.constant(Tensor::new(vec![5], vec![0.3, -1.0, 2.0, 0.7, -0.2]).unwrap());
            let p = t.mul(s, c)?;
            t.sum(p)
        };
        assert_grads(f, &[random(&[5], 10)], 1e-6);
    }

    #[test]
    fn layernorm_values() {
        let mut t = Tape::new();
        let g = t.constant(Tensor::full(&[3], 1.0));
        let b = t.constant(Tensor::zeros(&[3]));
        let x = t.constant(Tensor::full(&[1, 3], 7.5));
        let y = t.layernorm(x, g, b, 1e-5).unwrap();
        assert_eq!(t.value(y).data(), &[0.0; 3]);

        let g = t.constant(Tensor::full(&[2], 1.0));
        let b = t.constant(Tensor::zeros(&[2]));
        let x = t.constant(mat(1, 2, &[1.0, -1.0]));
        let y = t.layernorm(x, g, b, 1e-5).unwrap();
        let v = t.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-5 && (v[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn layernorm_gradient() {
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.layernorm(v[0], v[1], v[2], 1e-5)?;
            let c = t.constant(random(&[4, 8], 99));
            let p = t.mul(y, c)?;
            t.sum(p)
        };
        assert_grads(
            f,
            &[random(&[4, 8], 20), random(&[8], 21), random(&[8], 22)],
            1e-5,
        );
    }

    #[test]
    fn structural_op_gradients() {
        let f = |t: &mut Tape, v: &[Var]| {
            let tr = t.transpose(v[0])?; // 4x3
            let left = t.slice_cols(tr, 0, 2)?;
            let right = t.slice_cols(tr, 1, 3)?;
            let cat = t.concat_cols(&[right, left, v[1]])?; // 4x5
            let r = t.reshape(cat, &[2, 10])?;
            let sc = t.scale(r, 0.7)?;
            let sq = t.mul(sc, sc)?;
            t.mean(sq)
        };
        assert_grads(f, &[random(&[3, 4], 30), random(&[4, 1], 31)], 1e-6);
    }

    #[test]
    fn power_normalize_contract_and_gradient() {
        let mut t = Tape::new();
        let x = t.constant(random(&[8, 2], 40));
        let y = t.power_normalize(x, 8.0).unwrap();
        let e: f64 = t.value(y).data().iter().map(|v| v * v).sum::<f64>() / 8.0;
        assert!((e - 1.0).abs() < 1e-12);

        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.power_normalize(v[0], 8.0)?;
            let c = t.constant(random(&[8, 2], 41));
            let p = t.mul(y, c)?;
            t.sum(p)
        };
        assert_grads(f, &[random(&[8, 2], 42)], 1e-6);
    }

    #[test]
    fn backward_contracts() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));

        // loss = 0·f(x)
        let mut t = Tape::new();
        let w = t.param(random(&[3, 3], 50));
        let u = t.param(random(&[3], 51));
        let y = t.matmul(w, w).unwrap();
        let y = t.gelu(y).unwrap();
        let s = t.sum(y).unwrap();
        let z = t.scale(s, 0.0).unwrap();
        let g = t.backward(z).unwrap();
        assert!(g.get_or_zero(w).iter().all(|&v| v == 0.0));
        assert!(g.get(u).is_none());
        assert_eq!(g.get_or_zero(u), vec![0.0; 3]);
    }

    #[test]
    fn straight_through_passes_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![2], vec![0.3, 0.7]).unwrap());
        let h = t
            .straight_through(x, Tensor::new(vec![2], vec![0.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(t.value(h).data(), &[0.0, 1.0]);
        let c = t.constant(Tensor::new(vec![2], vec![2.0, 3.0]).unwrap());
        let p = t.mul(h, c).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(1e200));
        assert!(matches!(t.mul(a, a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let a = t.constant(random(&[4, 6], 60));
            let b = t.constant(random(&[6, 3], 61));
            let m = t.matmul(a, b).unwrap();
            let s = t.softmax(m).unwrap();
            t.value(s).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 12)) {
                let mut t = Tape::new();
                let a = t.constant(Tensor::new(vec![3, 4], v).unwrap());
                let s = t.softmax(a).unwrap();
                for row in t.value(s).data().chunks(4) {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn layernorm_rows_are_centered(v in prop::collection::vec(-100.0f64..100.0, 16)) {
                let mut t = Tape::new();
                let g = t.constant(Tensor::full(&[8], 1.0));
                let b = t.constant(Tensor::zeros(&[8]));
                let x = t.constant(Tensor::new(vec![2, 8], v).unwrap());
                let y = t.layernorm(x, g, b, 1e-5).unwrap();
                for row in t.value(y).data().chunks(8) {
                    prop_assert!((row.iter().sum::<f64>() / 8.0).abs() < 1e-9);
                }
            }

            #[test]
            fn gelu_and_tanh_match_finite_differences(x in -4.0f64..4.0) {
                let input = Tensor::new(vec![1], vec![x]).unwrap();
                for which in 0..2 {
                    let f = move |t: &mut Tape, v: &[Var]| {
                        let y = if which == 0 { t.gelu(v[0])? } else { t.tanh(v[0])? };
                        t.sum(y)
                    };
                    let a = analytic_grads(&f, std::slice::from_ref(&input));
                    let n = numeric_grad(&f, std::slice::from_ref(&input), 0, 1e-5);
                    prop_assert!(rel_err(&a[0], &n) < 1e-5);
                }
            }
        }
    }
}
