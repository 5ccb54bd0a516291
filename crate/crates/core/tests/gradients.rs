mod support;

use dcd_core::nn::{Mlp, MlpCritic, MlpGenerator};
use dcd_core::numcore::{Rng, Tape, Tensor, Var};
use dcd_core::sampler::{Latent, Potential};
use proptest::prelude::*;
use support::*;

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.gaussian(shape)
}

/// Default init plus random biases, so no pre-activation sits exactly on
/// the ReLU kink (zero biases make dead units feed exact zeros forward).
fn random_mlp(dims: &[usize], rng: &mut Rng) -> Mlp {
    let mut mlp = Mlp::new(dims, rng);
    for (i, p) in mlp.params_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            *p = random_tensor(rng, p.shape()).scale(0.1);
        }
    }
    mlp
}

#[test]
fn two_layer_forward_matches_straight_line() {
    let mut rng = Rng::new(11, 0);
    let mlp = Mlp::new(&[2, 16, 3], &mut rng);
    let x = random_tensor(&mut rng, &[5, 2]);
    let y = mlp.forward(&x).unwrap();
    let layers = ref_layers(&mlp);
    for r in 0..5 {
        let expect = ref_forward(&layers, x.row(r));
        for (a, b) in y.row(r).iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn critic_value_matches_straight_line() {
    let critic = MlpCritic::new(32, &mut Rng::new(12, 0));
    let x = random_tensor(&mut Rng::new(12, 1), &[7, 2]);
    let v = critic.value(&x).unwrap();
    let layers = ref_layers(critic.mlp());
    for (r, &got) in v.iter().enumerate() {
        let want = ref_forward(&layers, x.row(r))[0];
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn forward_is_pure() {
    let mut rng = Rng::new(13, 0);
    let mlp = Mlp::new(&[2, 32, 32, 32, 1], &mut rng);
    let x = random_tensor(&mut rng, &[9, 2]);
    let a = mlp.forward(&x).unwrap();
    let b = mlp.forward(&x).unwrap();
    assert_eq!(a, b);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let t = mlp.record(&mut tape, xv, false).unwrap();
    assert_eq!(tape.value(t.output), &a);
}

#[test]
fn random_four_layer_mlps_match_finite_differences() {
    let mut rng = Rng::new(14, 0);
    for _ in 0..10 {
        let h: Vec<usize> = (0..3).map(|_| 1 + (rng.next_u64() % 48) as usize).collect();
        let mlp = random_mlp(&[2, h[0], h[1], h[2], 1], &mut rng);
        let x = random_tensor(&mut rng, &[3, 2]);
        let seed = random_tensor(&mut rng, &[3, 1]);
        let rep = fd_check_mlp(&mlp, &x, &seed);
        assert!(rep.max_rel <= 1e-5, "{rep:?}");
        assert!(rep.skipped * 100 <= rep.checked + rep.skipped, "{rep:?}");
    }
}

#[test]
fn generator_shaped_mlp_matches_finite_differences() {
    let mut rng = Rng::new(15, 0);
    let g = MlpGenerator::new(24, &mut rng);
    let x = random_tensor(&mut rng, &[4, 2]);
    let seed = random_tensor(&mut rng, &[4, 2]);
    let rep = fd_check_mlp(g.mlp(), &x, &seed);
    assert!(rep.max_rel <= 1e-5, "{rep:?}");
}

/// Finite-difference check of a tape-built function of several leaves.
fn check_op(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let out_shape = tape.value(out).shape().to_vec();
    let seed = random_tensor(&mut Rng::new(99, 0), &out_shape);
    let grads = tape.backward(out, &seed).unwrap();
    let objective = |xs: &[Tensor]| {
        let (t, _, o) = eval(xs);
        t.value(o)
            .data()
            .iter()
            .zip(seed.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    for (k, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for i in 0..inputs[k].len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += FD_STEP;
            let fp = objective(&xs);
            xs[k].data_mut()[i] -= 2.0 * FD_STEP;
            let fm = objective(&xs);
            let num = (fp - fm) / (2.0 * FD_STEP);
            assert!(
                rel_err(g.data()[i], num) <= 1e-5,
                "input {k}[{i}]: {} vs {num}",
                g.data()[i]
            );
        }
    }
}

#[test]
fn primitive_ops_match_finite_differences() {
    let mut rng = Rng::new(16, 0);
    for _ in 0..100 {
        let a = random_tensor(&mut rng, &[3, 4]);
        let b = random_tensor(&mut rng, &[4, 2]);
        let c = random_tensor(&mut rng, &[3, 4]);
        let row = random_tensor(&mut rng, &[1, 4]);
        let s = rng.normal();
        check_op(&[a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]).unwrap());
        check_op(&[a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]).unwrap());
        check_op(&[a.clone(), c.clone()], |t, v| t.add(v[0], v[1]).unwrap());
        check_op(&[a.clone(), c.clone()], |t, v| t.sub(v[0], v[1]).unwrap());
        check_op(&[a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]).unwrap());
        check_op(std::slice::from_ref(&a), |t, v| t.relu(v[0]).unwrap());
        check_op(std::slice::from_ref(&a), |t, v| t.scale(v[0], s).unwrap());
        check_op(std::slice::from_ref(&a), |t, v| t.sum(v[0]).unwrap());
        check_op(std::slice::from_ref(&a), |t, v| t.square(v[0]).unwrap());
        check_op(std::slice::from_ref(&a), |t, v| t.norm(v[0]).unwrap());
        // A composite reusing a node: ‖relu(a·b) ⊙ relu(a·b)‖ + sum(a²).
        check_op(&[a.clone(), b.clone()], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            let r = t.relu(m).unwrap();
            let p = t.mul(r, r).unwrap();
            let n = t.norm(p).unwrap();
            let q = t.square(v[0]).unwrap();
            let s = t.sum(q).unwrap();
            t.add(n, s).unwrap()
        });
    }
}

#[test]
fn critic_input_grad_matches_finite_differences() {
    let mut rng = Rng::new(17, 0);
    for _ in 0..20 {
        let critic = MlpCritic::new(32, &mut rng);
        let x = random_tensor(&mut rng, &[4, 2]);
        let g = critic.input_grad(&x).unwrap();
        for r in 0..4 {
            for c in 0..2 {
                let mut xp = x.clone();
                xp.data_mut()[2 * r + c] += FD_STEP;
                let mut xm = x.clone();
                xm.data_mut()[2 * r + c] -= FD_STEP;
                let num = (critic.value(&xp).unwrap()[r] - critic.value(&xm).unwrap()[r]) / (2.0 * FD_STEP);
                assert!(rel_err(g.get(r, c), num) <= 1e-5);
            }
        }
    }
}

#[test]
fn latent_gradient_matches_finite_differences() {
    let mut rng = Rng::new(18, 0);
    for _ in 0..20 {
        let generator = MlpGenerator::new(16, &mut rng);
        let critic = MlpCritic::new(16, &mut rng);
        let pot = Latent {
            generator: &generator,
            critic: &critic,
        };
        let z = random_tensor(&mut rng, &[3, 2]);
        let (_, g) = pot.values_and_grads(&z).unwrap();
        for i in 0..6 {
            let mut zp = z.clone();
            zp.data_mut()[i] += FD_STEP;
            let mut zm = z.clone();
            zm.data_mut()[i] -= FD_STEP;
            let r = i / 2;
            let num = (pot.values(&zp).unwrap()[r] - pot.values(&zm).unwrap()[r]) / (2.0 * FD_STEP);
            assert!(rel_err(g.data()[i], num) <= 1e-5, "{} vs {num}", g.data()[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear_in_the_seed(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let mut rng = Rng::new(seed, 0);
        let mlp = Mlp::new(&[2, 8, 8, 8, 2], &mut rng);
        let x = random_tensor(&mut rng, &[5, 2]);
        let s1 = random_tensor(&mut rng, &[5, 2]);
        let s2 = random_tensor(&mut rng, &[5, 2]);
        let mut s12 = s1.scale(alpha);
        s12.axpy(1.0, &s2);
        let (p1, x1) = tape_grads(&mlp, &x, &s1);
        let (p2, x2) = tape_grads(&mlp, &x, &s2);
        let (p12, x12) = tape_grads(&mlp, &x, &s12);
        let pairs = p1.iter().zip(&p2).zip(&p12).chain(std::iter::once(((&x1, &x2), &x12)));
        for ((a, b), c) in pairs {
            for ((u, v), w) in a.data().iter().zip(b.data()).zip(c.data()) {
                let want = alpha * u + v;
                prop_assert!((w - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn batched_rows_are_independent(seed in any::<u64>(), rows in 1usize..12) {
        let mut rng = Rng::new(seed, 0);
        let critic = MlpCritic::new(16, &mut rng);
        let x = random_tensor(&mut rng, &[rows, 2]);
        let all = critic.value(&x).unwrap();
        for r in 0..rows {
            let one = critic.value(&x.slice_rows(r, r + 1)).unwrap();
            prop_assert_eq!(one[0], all[r]);
        }
    }
}
