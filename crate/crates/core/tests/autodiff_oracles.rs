use gcdn::autodiff::*;
use gcdn::{Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Mirror reflection without repeating the border sample.
fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn conv_nested_loops(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64]) -> Tensor<f64> {
    let [b, h, w, cin] = x.shape()[..] else { panic!() };
    let [kh, kw, _, cout] = k.shape()[..] else { panic!() };
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let xv = |bb: usize, y: usize, xx: usize, c: usize| x.data()[((bb * h + y) * w + xx) * cin + c];
    let kv = |dy: usize, dx: usize, ci: usize, co: usize| k.data()[((dy * kw + dx) * cin + ci) * cout + co];
    let mut out = Tensor::zeros(&[b, h, w, cout]);
    for bb in 0..b {
        for y in 0..h {
            for xx in 0..w {
                for co in 0..cout {
                    let mut s = bias[co];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let sy = mirror(y as isize + dy as isize - ry, h);
                            let sx = mirror(xx as isize + dx as isize - rx, w);
                            for ci in 0..cin {
                                s += xv(bb, sy, sx, ci) * kv(dy, dx, ci, co);
                            }
                        }
                    }
                    out.data_mut()[((bb * h + y) * w + xx) * cout + co] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_nested_loops_on_shape_sweep() {
    let mut seed = 0;
    let mut checked = 0;
    for kh in [3, 5, 7] {
        for kw in [3, 5, 7] {
            for cin in 1..=4 {
                for cout in [1, 3] {
                    for (h, w) in [(1, 1), (2, 5), (3, 3), (4, 8), (6, 6), (8, 7)] {
                        seed += 1;
                        let x = random(&[2, h, w, cin], seed);
                        let k = random(&[kh, kw, cin, cout], seed + 1000);
                        let bias = random(&[cout], seed + 2000);
                        let tape = Tape::no_grad();
                        let got = conv2d(&tape, &tape.constant(x.clone()), &tape.constant(k.clone()), Some(&tape.constant(bias.clone())));
                        if kh > 2 * h + 1 || kw > 2 * w + 1 {
                            assert!(got.is_err(), "kernel {kh}x{kw} on {h}x{w} must be rejected");
                            continue;
                        }
                        let got = got.unwrap();
                        let want = conv_nested_loops(&x, &k, bias.data());
                        assert!(
                            got.value().max_abs_diff(&want) < 1e-12,
                            "k={kh}x{kw} c={cin}->{cout} hw={h}x{w}"
                        );
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 300);
}

#[test]
fn conv_six_by_six_example() {
    let x = random(&[1, 6, 6, 2], 11);
    let k = random(&[3, 3, 2, 3], 12);
    let tape = Tape::no_grad();
    let got = conv2d(&tape, &tape.constant(x.clone()), &tape.constant(k.clone()), None).unwrap();
    assert!(got.value().max_abs_diff(&conv_nested_loops(&x, &k, &[0.0; 3])) < 1e-12);
}

fn check<F>(f: F, inputs: &[Tensor<f64>]) -> f64
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    grad_check(f, inputs, GradCheck::default()).unwrap().max_rel_error
}

/// Contract an arbitrary map against fixed weights so every output entry
/// contributes to the scalar loss with a distinct coefficient.
fn probe(tape: &Tape<f64>, y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let w = tape.constant(random(y.shape(), seed));
    let yw = mse_loss(tape, y, &w)?;
    Ok(yw)
}

#[test]
fn elementwise_and_reduction_ops_pass_grad_check() {
    let a = random(&[3, 4], 1);
    let b = random(&[3, 4], 2);
    assert!(check(|t, v| probe(t, &add(t, &v[0], &v[1])?, 9), &[a.clone(), b.clone()]) < 1e-8);
    assert!(check(|t, v| probe(t, &scale(t, &v[0], -1.7), 9), &[a.clone()]) < 1e-8);
    assert!(check(|t, v| Ok(sum(t, &v[0])), &[a.clone()]) < 1e-8);
    assert!(check(|t, v| Ok(half_sq_norm(t, &v[0])), &[a.clone()]) < 1e-9);
    assert!(check(|t, v| probe(t, &leaky_relu(t, &v[0], 0.2)?, 9), &[a.clone()]) < 1e-8);
    assert!(check(|t, v| mse_loss(t, &v[0], &v[1]), &[a.clone(), b.clone()]) < 1e-8);
    let c = random(&[3, 2], 3);
    assert!(
        check(|t, v| probe(t, &concat_channels(t, &[v[0].clone(), v[1].clone()])?, 9), &[a, c]) < 1e-8
    );
}

#[test]
fn conv_and_batch_norm_pass_grad_check() {
    let x = random(&[2, 4, 5, 2], 4);
    let k = random(&[3, 3, 2, 3], 5);
    let bias = random(&[3], 6);
    assert!(check(|t, v| probe(t, &conv2d(t, &v[0], &v[1], Some(&v[2]))?, 9), &[x.clone(), k.clone(), bias]) < 1e-7);
    let k5 = random(&[5, 3, 2, 1], 7);
    assert!(check(|t, v| probe(t, &conv2d(t, &v[0], &v[1], None)?, 9), &[x.clone(), k5]) < 1e-7);
    let gamma = random(&[2], 8);
    let beta = random(&[2], 9);
    assert!(
        check(|t, v| probe(t, &batch_norm_train(t, &v[0], &v[1], &v[2])?.0, 9), &[x.clone(), gamma.clone(), beta.clone()])
            < 1e-6
    );
    let stats = RunningStats {
        mean: random(&[2], 10),
        var: Tensor::new(&[2], vec![0.5, 2.0]).unwrap(),
    };
    assert!(check(|t, v| probe(t, &batch_norm_infer(t, &v[0], &v[1], &v[2], &stats)?, 9), &[x, gamma, beta]) < 1e-7);
}

#[test]
fn composite_conv_bn_lrelu_mse_gradient() {
    let x = random(&[2, 5, 5, 2], 20);
    let k = random(&[3, 3, 2, 3], 21);
    let gamma = Tensor::new(&[3], vec![1.0, 0.7, 1.3]).unwrap();
    let beta = random(&[3], 22);
    let target = random(&[2, 5, 5, 3], 23);
    let r = check(
        |t, v| {
            let y = conv2d(t, &v[0], &v[1], None)?;
            let (y, _) = batch_norm_train(t, &y, &v[2], &v[3])?;
            let y = leaky_relu(t, &y, 0.2)?;
            mse_loss(t, &y, &t.constant(target.clone()))
        },
        &[x, k, gamma, beta],
    );
    assert!(r < 1e-5, "composite relative error {r}");
}

#[test]
fn quadratic_grad_check_is_near_exact() {
    let x = random(&[17], 30);
    assert!(check(|t, v| Ok(half_sq_norm(t, &v[0])), &[x]) < 1e-9);
}

struct WrongSquare {
    x: Tensor<f64>,
}

impl Backward<f64> for WrongSquare {
    fn name(&self) -> &'static str {
        "wrong_square"
    }

    fn backward(&self, g: &Tensor<f64>) -> Result<Vec<Option<Tensor<f64>>>> {
        // forward is x², the correct rule would be 2x
        let gx = Tensor::from_fn(self.x.shape(), |i| g.data()[i] * 3.0 * self.x.data()[i]);
        Ok(vec![Some(gx)])
    }
}

#[test]
fn sabotaged_backward_rule_is_caught() {
    let x = random(&[6], 31);
    let r = check(
        |t, v| {
            let xv = v[0].value().clone();
            let y = t.record(xv.map(|a| a * a), &[&v[0]], || Box::new(WrongSquare { x: xv.clone() }));
            Ok(sum(t, &y))
        },
        &[x],
    );
    assert!(r > 1e-2, "negative control slipped through: {r}");
}

#[test]
fn non_finite_objective_is_an_error() {
    let x = Tensor::new(&[1], vec![f64::NAN]).unwrap();
    assert!(grad_check(|t, v| Ok(sum(t, &v[0])), &[x], GradCheck::default()).is_err());
}

proptest! {
    #[test]
    fn leaky_relu_monotone_and_homogeneous(a in -50.0f64..50.0, b in -50.0f64..50.0, s in 0.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(leaky_relu_scalar(lo, 0.2) <= leaky_relu_scalar(hi, 0.2));
        // positive scaling commutes on each half-line
        let lhs = leaky_relu_scalar(s * a, 0.2);
        let rhs = s * leaky_relu_scalar(a, 0.2);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn batch_norm_standardises(seed in 0u64..1000, rows in 4usize..40, shift in -3.0f64..3.0, spread in 0.1f64..5.0) {
        let x = Tensor::from_fn(&[rows, 1, 1, 2], {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            move |_| shift + spread * rng.random_range(-1.0..1.0)
        });
        let n = rows as f64;
        let stats = |t: &Tensor<f64>, c: usize| {
            let col: Vec<f64> = (0..rows).map(|r| t.data()[r * 2 + c]).collect();
            let m = col.iter().sum::<f64>() / n;
            (m, col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n)
        };
        let input_var: Vec<f64> = (0..2).map(|c| stats(&x, c).1).collect();
        prop_assume!(input_var.iter().all(|&v| v > 1e-3));
        let tape = Tape::no_grad();
        let (y, _) = batch_norm_train(&tape, &tape.constant(x), &tape.constant(Tensor::full(&[2], 1.0)), &tape.constant(Tensor::zeros(&[2]))).unwrap();
        for c in 0..2 {
            let (m, v) = stats(y.value(), c);
            prop_assert!(m.abs() < 1e-6);
            // standardised variance is exactly σ² / (σ² + ε)
            let expect = input_var[c] / (input_var[c] + BN_EPS);
            prop_assert!((v - expect).abs() < 1e-9);
            if input_var[c] >= 0.1 {
                prop_assert!((v - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_contracts_moments(seed in 0u64..1000, steps in 1usize..5) {
        let mut p = random(&[5], seed);
        let g = random(&[5], seed + 1);
        let mut st = AdamState::new(&[5]);
        let cfg = AdamConfig::default();
        for _ in 0..steps {
            adam_step("p", &mut p, &g, &mut st, 1e-3, &cfg).unwrap();
        }
        let (m0, v0) = (st.m.clone(), st.v.clone());
        adam_step("p", &mut p, &Tensor::zeros(&[5]), &mut st, 1e-3, &cfg).unwrap();
        for i in 0..5 {
            prop_assert!(st.m.data()[i].abs() <= m0.data()[i].abs());
            prop_assert!(st.v.data()[i] <= v0.data()[i] && st.v.data()[i] >= 0.0);
        }
        // from fresh moments a zero gradient leaves parameters untouched
        let mut q = random(&[5], seed + 2);
        let q0 = q.clone();
        let mut fresh = AdamState::new(&[5]);
        adam_step("q", &mut q, &Tensor::zeros(&[5]), &mut fresh, 1e-3, &cfg).unwrap();
        prop_assert_eq!(q, q0);
    }

    #[test]
    fn random_small_ops_pass_grad_check(seed in 0u64..200) {
        let x = random(&[1, 3, 4, 2], seed);
        let k = random(&[3, 3, 2, 2], seed + 7);
        let r = check(|t, v| {
            let y = conv2d(t, &v[0], &v[1], None)?;
            let y = leaky_relu(t, &y, 0.2)?;
            probe(t, &y, seed + 3)
        }, &[x, k]);
        prop_assert!(r < 1e-5, "relative error {}", r);
    }
}
