//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The [`Tape`] is define-by-run: each forward evaluation appends the
//! primitives it executes, and [`Tape::backward`] walks them once in reverse.
//! Leaves are created with [`Tape::leaf`]; detached tensors act as constants.
//!
//! ```
//! use qmpc::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
//! let loss = tape.sum(&tape.square(&x).unwrap()).unwrap();
//! assert_eq!(loss.item(), 25.0);
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[6.0, 8.0]);
//! ```

mod gemm;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shape() {
        let tape = Tape::new();
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[3, 1], &[1., 0., -1.]);
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_primitive() {
        let tape = Tape::new();
        let err = tape
            .matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 1]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 1]"),
            "{msg}"
        );
    }

    #[test]
    fn relu_forward() {
        let tape = Tape::new();
        let y = tape.relu(&t(&[3], &[-1., 0., 2.])).unwrap();
        assert_eq!(y.data(), &[0., 0., 2.]);
    }

    #[test]
    fn sum_of_squares() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[3., 4.]));
        let y = tape.sum(&tape.square(&x).unwrap()).unwrap();
        assert_eq!(y.item(), 25.0);
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[6., 8.]);
    }

    #[test]
    fn relu_gradient_convention() {
        for (x, expected) in [(-1.0, 0.0), (0.0, 0.0), (2.0, 1.0)] {
            let tape = Tape::new();
            let v = tape.leaf(&Tensor::scalar(x));
            let y = tape.sum(&tape.relu(&v).unwrap()).unwrap();
            let g = tape.backward(&y).unwrap();
            assert_eq!(g.get(&v).unwrap().item(), expected, "x = {x}");
        }
    }

    #[test]
    fn pinball_gradient_matches_finite_difference() {
        // q * relu(y - yhat) + (1 - q) * relu(yhat - y) at q = 0.5, y = 1, yhat = 0
        let loss = |yhat: f64| {
            let d: f64 = 1.0 - yhat;
            0.5 * d.max(0.0) + 0.5 * (-d).max(0.0)
        };
        let h = 1e-6;
        let fd = (loss(h) - loss(-h)) / (2.0 * h);
        assert!((fd + 0.5).abs() < 1e-9);

        let tape = Tape::new();
        let yhat = tape.leaf(&Tensor::scalar(0.0));
        let diff = tape.sub(&Tensor::scalar(1.0), &yhat).unwrap();
        let over = tape.scale(&diff, -1.0).unwrap();
        let a = tape.scale(&tape.relu(&diff).unwrap(), 0.5).unwrap();
        let b = tape.scale(&tape.relu(&over).unwrap(), 0.5).unwrap();
        let l = tape.sum(&tape.add(&a, &b).unwrap()).unwrap();
        assert_eq!(l.item(), 0.5);
        let g = tape.backward(&l).unwrap();
        assert!((g.get(&yhat).unwrap().item() - fd).abs() < 1e-9);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1., 2.]));
        let y = tape.square(&x).unwrap();
        assert!(matches!(tape.backward(&y), Err(Error::NonScalarRoot(_))));
        assert!(matches!(tape.backward(&Tensor::scalar(1.0)), Err(Error::NotOnTape)));

        let other = Tape::new();
        let z = other.leaf(&Tensor::scalar(1.0));
        let s = other.sum(&z).unwrap();
        assert!(matches!(tape.backward(&s), Err(Error::NotOnTape)));
        assert!(matches!(tape.add(&x, &z), Err(Error::NotOnTape)));
    }

    #[test]
    fn unreachable_leaf_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[2, 2], &[1., 2., 3., 4.]));
        let unused = tape.leaf(&t(&[3], &[1., 1., 1.]));
        let y = tape.sum(&x).unwrap();
        let g = tape.backward(&y).unwrap();
        let gu = g.get(&unused).unwrap();
        assert_eq!(gu.shape(), &[3]);
        assert!(gu.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detached_inputs_are_not_recorded() {
        let tape = Tape::new();
        let a = t(&[2], &[1., 2.]);
        let y = tape.square(&a).unwrap();
        assert!(!y.is_attached());
        assert!(tape.is_empty());
        let no_grad = Tape::no_grad();
        let leaf = no_grad.leaf(&a);
        assert!(!no_grad.square(&leaf).unwrap().is_attached());
    }

    #[test]
    fn dropout_is_identity_at_zero_rate() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = t(&[4], &[1., 2., 3., 4.]);
        assert_eq!(tape.dropout(&a, 0.0, &mut rng).unwrap(), a);
        let d = tape.dropout(&a, 0.5, &mut rng).unwrap();
        assert!(d.data().iter().zip(a.data()).all(|(x, y)| *x == 0.0 || *x == 2.0 * y));
    }

    // ---- finite-difference checks -------------------------------------------------

    type Build = dyn Fn(&Tape, &[Tensor]) -> Tensor;

    /// Reduces an arbitrary output to a scalar through fixed random weights so
    /// every output component contributes to the checked gradient.
    fn weighted_sum(tape: &Tape, out: &Tensor, weights: &[f64]) -> Tensor {
        let w = Tensor::new(out.shape().to_vec(), weights[..out.len()].to_vec()).unwrap();
        tape.sum(&tape.mul(out, &w).unwrap()).unwrap()
    }

    fn check_fd(build: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) {
        let weights: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eval = |vals: &[Tensor]| {
            let tape = Tape::no_grad();
            let out = build(&tape, vals);
            out.data().iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };

        let tape = Tape::new();
        let leaves: Vec<Tensor> = inputs.iter().map(|x| tape.leaf(x)).collect();
        let out = build(&tape, &leaves);
        let root = weighted_sum(&tape, &out, &weights);
        let grads = tape.backward(&root).unwrap();

        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(leaf).unwrap();
            for j in 0..leaf.len() {
                let perturb = |delta: f64| {
                    let mut vals = inputs.to_vec();
                    let mut d = vals[li].to_vec();
                    d[j] += delta;
                    vals[li] = Tensor::new(vals[li].shape().to_vec(), d).unwrap();
                    eval(&vals)
                };
                let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                let a = analytic.data()[j];
                let err = (a - fd).abs();
                assert!(
                    err < 1e-7 || err < 1e-4 * a.abs().max(fd.abs()),
                    "input {li} component {j}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    /// Random values bounded away from zero so kinks are not straddled.
    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let mag = rng.random_range(0.05..2.0);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    #[allow(clippy::type_complexity)]
    fn every_primitive_matches_finite_differences() {
        let cases: Vec<(&str, Box<Build>, Vec<Vec<usize>>)> = vec![
            (
                "matmul",
                Box::new(|t: &Tape, x: &[Tensor]| t.matmul(&x[0], &x[1]).unwrap()),
                vec![vec![3, 4], vec![4, 2]],
            ),
            (
                "add",
                Box::new(|t: &Tape, x: &[Tensor]| t.add(&x[0], &x[1]).unwrap()),
                vec![vec![3, 2], vec![3, 2]],
            ),
            (
                "add_bias",
                Box::new(|t: &Tape, x: &[Tensor]| t.add(&x[0], &x[1]).unwrap()),
                vec![vec![3, 4], vec![4]],
            ),
            (
                "sub",
                Box::new(|t: &Tape, x: &[Tensor]| t.sub(&x[0], &x[1]).unwrap()),
                vec![vec![2, 3], vec![2, 3]],
            ),
            (
                "mul",
                Box::new(|t: &Tape, x: &[Tensor]| t.mul(&x[0], &x[1]).unwrap()),
                vec![vec![2, 3], vec![2, 3]],
            ),
            (
                "scale",
                Box::new(|t: &Tape, x: &[Tensor]| t.scale(&x[0], -1.7).unwrap()),
                vec![vec![5]],
            ),
            (
                "scale_shift",
                Box::new(|t: &Tape, x: &[Tensor]| t.scale_shift(&x[0], &[2.0, -0.5], &[1.0, 3.0]).unwrap()),
                vec![vec![3, 2]],
            ),
            (
                "relu",
                Box::new(|t: &Tape, x: &[Tensor]| t.relu(&x[0]).unwrap()),
                vec![vec![6]],
            ),
            (
                "square",
                Box::new(|t: &Tape, x: &[Tensor]| t.square(&x[0]).unwrap()),
                vec![vec![6]],
            ),
            (
                "sum",
                Box::new(|t: &Tape, x: &[Tensor]| t.sum(&x[0]).unwrap()),
                vec![vec![2, 3]],
            ),
            (
                "reshape",
                Box::new(|t: &Tape, x: &[Tensor]| t.reshape(&x[0], vec![3, 2]).unwrap()),
                vec![vec![2, 3]],
            ),
            (
                "slice_cols",
                Box::new(|t: &Tape, x: &[Tensor]| t.slice_cols(&x[0], 1, 3).unwrap()),
                vec![vec![3, 4]],
            ),
            (
                "concat_cols",
                Box::new(|t: &Tape, x: &[Tensor]| t.concat_cols(&[x[0].clone(), x[1].clone()]).unwrap()),
                vec![vec![3, 2], vec![3, 1]],
            ),
            (
                "layer_norm",
                Box::new(|t: &Tape, x: &[Tensor]| t.layer_norm(&x[0], &x[1], &x[2]).unwrap()),
                vec![vec![3, 5], vec![5], vec![5]],
            ),
            (
                "dropout",
                Box::new(|t: &Tape, x: &[Tensor]| {
                    let mut rng = ChaCha8Rng::seed_from_u64(7);
                    t.dropout(&x[0], 0.3, &mut rng).unwrap()
                }),
                vec![vec![4, 3]],
            ),
        ];
        for (name, build, shapes) in &cases {
            for seed in 0..100u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
                let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    check_fd(build.as_ref(), &inputs, &mut rng)
                }));
                assert!(result.is_ok(), "primitive {name} failed at seed {seed}");
            }
        }
    }

    #[test]
    fn gradients_are_deterministic_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = rand_tensor(&mut rng, &[4, 3]);
        let w = rand_tensor(&mut rng, &[3, 2]);
        let run = |which: u8| {
            let tape = Tape::new();
            let x = tape.leaf(&x0);
            let h = tape.relu(&tape.matmul(&x, &w).unwrap()).unwrap();
            let f = tape.sum(&tape.square(&h).unwrap()).unwrap();
            let g = tape
                .sum(
                    &tape
                        .layer_norm(
                            &x,
                            &Tensor::new(vec![3], vec![1.0, 2.0, 0.5]).unwrap(),
                            &Tensor::zeros(&[3]),
                        )
                        .unwrap(),
                )
                .unwrap();
            let g = tape.sum(&tape.square(&g).unwrap()).unwrap();
            let root = match which {
                0 => f,
                1 => g,
                _ => tape.add(&f, &g).unwrap(),
            };
            tape.backward(&root).unwrap().get(&x).unwrap()
        };
        let a = run(2);
        let b = run(2);
        assert_eq!(a.data(), b.data(), "repeated runs must be bitwise identical");
        let (gf, gg) = (run(0), run(1));
        for ((s, f), g) in a.data().iter().zip(gf.data()).zip(gg.data()) {
            assert!((s - (f + g)).abs() < 1e-12);
        }
    }
}
