//! Acceptance checks, one PASS/FAIL line each.
//!
//! `cargo test -p gcdn --test acceptance -- 2 5` runs only the listed
//! criteria. Set `GCDN_ACCEPTANCE_STRICT=1` to exit non-zero on any FAIL.

use std::time::Instant;

use gcdn::autodiff::*;
use gcdn::dataset::Dataset;
use gcdn::graph_builder::*;
use gcdn::graph_conv::*;
use gcdn::image::GrayImage;
use gcdn::metrics::psnr;
use gcdn::network::*;
use gcdn::noise::add_awgn;
use gcdn::prox::*;
use gcdn::synthetic::synthetic_scene;
use gcdn::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn random_params(shape: EccShape, rng: &mut ChaCha8Rng) -> EccParams<f64> {
    let mut p = init_ecc::<f64>(shape, rng.random()).unwrap();
    for t in [
        &mut p.w0, &mut p.b0, &mut p.wl, &mut p.bl, &mut p.wr, &mut p.br, &mut p.wk, &mut p.bk, &mut p.local, &mut p.bias,
    ] {
        *t = random(&t.shape().to_vec(), rng);
    }
    p
}

fn ecc_vars(v: &[Var<f64>]) -> EccVars<f64> {
    EccVars {
        w0: v[0].clone(),
        b0: v[1].clone(),
        wl: v[2].clone(),
        bl: v[3].clone(),
        wr: v[4].clone(),
        br: v[5].clone(),
        wk: v[6].clone(),
        bk: v[7].clone(),
        local: v[8].clone(),
        bias: v[9].clone(),
    }
}

fn ecc_tensors(p: &EccParams<f64>) -> Vec<Tensor<f64>> {
    vec![
        p.w0.clone(), p.b0.clone(), p.wl.clone(), p.bl.clone(), p.wr.clone(), p.br.clone(), p.wk.clone(), p.bk.clone(),
        p.local.clone(), p.bias.clone(),
    ]
}

fn check<F>(f: F, inputs: Vec<Tensor<f64>>) -> f64
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    grad_check(f, &inputs, GradCheck::default()).unwrap().max_rel_error
}

fn micro_config() -> ModelConfig {
    ModelConfig {
        features: 6,
        branch_features: 2,
        lpf_blocks: 1,
        knn: 2,
        window: 7,
        rank: 2,
        shifts: 3,
        batch: 1,
        patch: 8,
        ..ModelConfig::desk()
    }
}

fn c1_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let slope = LEAKY_SLOPE;
    let a = random(&[2, 3, 4, 3], &mut rng);
    let b = random(&[2, 3, 4, 3], &mut rng);
    let mut ops: Vec<(&str, f64)> = vec![
        ("add", check(|t, v| add(t, &v[0], &v[1]).map(|s| half_sq_norm(t, &s)), vec![a.clone(), b.clone()])),
        ("scale", check(|t, v| Ok(half_sq_norm(t, &scale(t, &v[0], -1.7))), vec![a.clone()])),
        ("sum", check(|t, v| Ok(sum(t, &scale(t, &v[0], 0.3))), vec![a.clone()])),
        ("half_sq_norm", check(|t, v| Ok(half_sq_norm(t, &v[0])), vec![a.clone()])),
        ("leaky_relu", check(|t, v| leaky_relu(t, &v[0], slope).map(|s| half_sq_norm(t, &s)), vec![a.clone()])),
        ("mse_loss", check(|t, v| mse_loss(t, &v[0], &v[1]), vec![a.clone(), b.clone()])),
        (
            "concat_channels",
            check(
                |t, v| concat_channels(t, &[v[0].clone(), v[1].clone()]).map(|s| half_sq_norm(t, &s)),
                vec![a.clone(), random(&[2, 3, 4, 2], &mut rng)],
            ),
        ),
        (
            "conv2d",
            check(
                |t, v| conv2d(t, &v[0], &v[1], Some(&v[2])).map(|s| half_sq_norm(t, &s)),
                vec![random(&[2, 5, 6, 2], &mut rng), random(&[3, 5, 2, 3], &mut rng), random(&[3], &mut rng)],
            ),
        ),
    ];
    let bn_target = random(&[2, 4, 4, 3], &mut rng);
    ops.push((
        "batch_norm_train",
        check(
            |t, v| {
                let (y, _) = batch_norm_train(t, &v[0], &v[1], &v[2])?;
                mse_loss(t, &y, &t.constant(bn_target.clone()))
            },
            vec![random(&[2, 4, 4, 3], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)],
        ),
    ));
    let stats = RunningStats {
        mean: random(&[3], &mut rng),
        var: random(&[3], &mut rng).map(|v| v.abs() + 0.5),
    };
    ops.push((
        "batch_norm_infer",
        check(
            |t, v| batch_norm_infer(t, &v[0], &v[1], &v[2], &stats).map(|s| half_sq_norm(t, &s)),
            vec![random(&[2, 4, 4, 3], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)],
        ),
    ));
    for agg in [Aggregation::Ecc, Aggregation::AttentionOnly] {
        let shape = EccShape { aggregation: agg, ..EccShape::new(3, 3, 2, 3, 3.0) };
        let p = random_params(shape, &mut rng);
        let x = random(&[1, 4, 4, 3], &mut rng);
        let target = random(&[1, 4, 4, 3], &mut rng);
        let graphs = build_graph_train(&x, 2).unwrap();
        let mut inputs = vec![x];
        inputs.extend(ecc_tensors(&p));
        let err = check(
            |t, v| {
                let out = graph_conv_layer(t, &v[0], &graphs, &shape, &ecc_vars(&v[1..]), 5)?;
                mse_loss(t, &out, &t.constant(target.clone()))
            },
            inputs,
        );
        ops.push((if agg == Aggregation::Ecc { "graph_conv_layer" } else { "attention_only_layer" }, err));
    }
    let op_worst = ops.iter().fold(("", 0.0f64), |w, &(n, e)| if e > w.1 { (n, e) } else { w });

    // micro end-to-end model; hidden subnetwork biases moved off the
    // leaky-ReLU kink so the finite differences see a smooth function
    let mut m = build_network::<f64>(&micro_config(), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for (name, t) in m.params_mut().iter_mut() {
        if name.ends_with(".b0") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    let clean = synthetic_scene(8, 8, 14);
    let x = add_awgn(&clean, 25.0, 15).unwrap().to_tensor::<f64>();
    let target = clean.to_tensor::<f64>();
    let inputs: Vec<Tensor<f64>> = m.params().iter().map(|(_, t)| t.clone()).collect();
    let e2e = check(
        |t, v| {
            let out = m.forward_with(t, &t.constant(x.clone()), v, ForwardOptions::train())?;
            mse_loss(t, &out.output, &t.constant(target.clone()))
        },
        inputs,
    );
    outcome(
        op_worst.1 < 1e-5 && e2e < 1e-4,
        format!(
            "{} ops, worst {} {:.2e} (< 1e-5); micro end-to-end {:.2e} (< 1e-4) over {} parameters",
            ops.len(),
            op_worst.0,
            op_worst.1,
            e2e,
            m.parameter_count()
        ),
    )
}

fn explicit_aggregate(x: &Tensor<f64>, graphs: &[PixelGraph], p: &EccParams<f64>) -> Tensor<f64> {
    let [b, h, w, fin] = x.shape()[..] else { unreachable!() };
    let fout = p.shape.fout;
    let n = h * w;
    let mut out = vec![0.0; b * n * fout];
    for (bi, g) in graphs.iter().enumerate() {
        let img = &x.data()[bi * n * fin..(bi + 1) * n * fin];
        for i in 0..n {
            let nb = g.neighbors(i);
            for &j in nb {
                let j = j as usize;
                let d: Vec<f64> = (0..fin).map(|c| img[j * fin + c] - img[i * fin + c]).collect();
                let ew = fnet_forward(&d, p).unwrap();
                let mut theta = vec![0.0; fout * fin];
                for (s, &k) in ew.kappa.iter().enumerate() {
                    for o in 0..fout {
                        for c in 0..fin {
                            theta[o * fin + c] += k * ew.theta_l[s * fout + o] * ew.theta_r[s * fin + c];
                        }
                    }
                }
                for o in 0..fout {
                    let acc: f64 = (0..fin).map(|c| theta[o * fin + c] * img[j * fin + c]).sum();
                    out[(bi * n + i) * fout + o] += ew.gamma * acc / nb.len() as f64;
                }
            }
        }
    }
    Tensor::new(&[b, h, w, fout], out).unwrap()
}

fn c2_low_rank() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(3..=5), rng.random_range(3..=6));
        let fin = rng.random_range(1..=8);
        let fout = rng.random_range(1..=8);
        let rank = rng.random_range(1..=fin.min(4));
        let shape = EccShape::new(fin, fout, rank, rng.random_range(1..=3), rng.random_range(0.5..5.0));
        let p = random_params(shape, &mut rng);
        let x = random(&[1, h, w, fin], &mut rng);
        let graphs = build_graph_train(&x, rng.random_range(0..=4)).unwrap();
        let tape = Tape::no_grad();
        let vars = p.bind(&tape);
        let got = nonlocal_aggregate(&tape, &tape.constant(x.clone()), &graphs, &shape, &vars, 7).unwrap();
        worst = worst.max(got.value().max_abs_diff(&explicit_aggregate(&x, &graphs, &p)));
    }
    outcome(worst < 1e-10, format!("100 instances, max |decoupled - explicit| = {worst:.2e} (< 1e-10)"))
}

fn c3_circulant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for m in [1, 2, 3] {
        for _ in 0..200 {
            let blocks = rng.random_range(1..=8);
            let n = rng.random_range(1..=12);
            let free = random(&[blocks, n], &mut rng);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = circulant_matvec(&free, m, blocks * m, &x).unwrap();
            let dense = materialize(&free, m);
            for (r, g) in got.iter().enumerate() {
                let want: f64 = (0..n).map(|c| dense.data()[r * n + c] * x[c]).sum();
                worst = worst.max((g - want).abs());
            }
            cases += 1;
        }
    }
    outcome(worst < 1e-12, format!("{cases} shapes, m in {{1,2,3}}, max error {worst:.2e} (< 1e-12)"))
}

fn c4_memory() -> Outcome {
    let m = memory_report(16, 1024, 8, 66, 66, 10).unwrap();
    outcome(
        m.full_rank_bytes == 2_283_798_528 && m.low_rank_bytes == 697_303_040,
        format!("full {} bytes, low-rank {} bytes", m.full_rank_bytes, m.low_rank_bytes),
    )
}

fn c5_init_statistics() -> Outcome {
    // F = 32, r = 8; each trial draws a fresh layer, a standardised label d
    // and a standardised neighbour feature H_j, and records every component
    // of Θ(d) H_j (single neighbour, attention excluded).
    let (f, r) = (32, 8);
    let shape = EccShape::new(f, f, r, 1, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 10_000;
    let mut values = Vec::with_capacity(trials * f);
    let mut with_gamma = Vec::with_capacity(trials * f);
    for t in 0..trials {
        let p = init_ecc::<f64>(shape, 1000 + t as u64).unwrap();
        let d: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut rng)).collect();
        let hj: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ew = fnet_forward(&d, &p).unwrap();
        let proj: Vec<f64> = (0..r).map(|s| (0..f).map(|c| ew.theta_r[s * f + c] * hj[c]).sum()).collect();
        for o in 0..f {
            let v: f64 = (0..r).map(|s| ew.kappa[s] * ew.theta_l[s * f + o] * proj[s]).sum();
            values.push(v);
            with_gamma.push(ew.gamma * v);
        }
    }
    let var = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    };
    let (v, vg) = (var(&values), var(&with_gamma));
    outcome(
        (0.8..=1.25).contains(&v),
        format!("{trials} edges, F={f}, r={r}: Var[H_NL] = {v:.4} (target [0.8, 1.25]); with attention {vg:.2e}"),
    )
}

fn random_graph(n: usize, density: f64, rng: &mut ChaCha8Rng) -> Laplacian {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                edges.push((i, j, rng.random_range(0.05..2.0)));
            }
        }
    }
    Laplacian::from_undirected(n, &edges).unwrap()
}

fn c6_prox() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut monotone = true;
    let mut runs = 0;
    for alpha in [0.5, 1.0] {
        for beta in [0.1, 1.0, 10.0] {
            for _ in 0..5 {
                let l = random_graph(64, 0.1, &mut rng);
                let y: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
                let obj = prox_denoise(&y, &l, beta, alpha, 200).unwrap().objective;
                monotone &= obj.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
                runs += 1;
            }
        }
    }
    let mut spectral = 0.0f64;
    for n in [2, 8, 16, 24, 32] {
        for beta in [0.1, 1.0, 10.0] {
            let s = spectral_response(&random_graph(n, 0.3, &mut rng), beta).unwrap();
            spectral = spectral.max(s.reconstruction_error);
            for (lam, g) in s.eigenvalues.iter().zip(&s.gains) {
                spectral = spectral.max((g - 1.0 / (beta * lam + 1.0)).abs());
            }
        }
    }
    let two = Laplacian::from_undirected(2, &[(0, 1, 1.0)]).unwrap();
    let x = prox_denoise(&[0.0, 1.0], &two, 1.0, 1.0, 50).unwrap().estimate;
    let closed = (x[0] - 1.0 / 3.0).abs().max((x[1] - 2.0 / 3.0).abs());
    outcome(
        monotone && spectral < 1e-8 && closed < 1e-10,
        format!(
            "(a) {runs} runs monotone: {monotone}; (b) spectral error {spectral:.2e} (< 1e-8); (c) two-node error {closed:.2e} (< 1e-10)"
        ),
    )
}

fn c7_noisy_psnr() -> Outcome {
    let clean = synthetic_scene(256, 256, 7);
    let noisy = add_awgn(&clean, 25.0, 7).unwrap();
    let p = psnr(&clean, &noisy).unwrap();
    outcome((p - 20.17).abs() <= 0.3, format!("PSNR {p:.3} dB (20.17 ± 0.3)"))
}

fn optimal(f: &Tensor<f64>, g: &PixelGraph, k: usize, window: Option<usize>) -> bool {
    let [_, h, w, c] = f.shape()[..] else { unreachable!() };
    let dist = |i: usize, j: usize| -> f64 { (0..c).map(|ch| (f.data()[i * c + ch] - f.data()[j * c + ch]).powi(2)).sum() };
    (0..h * w).all(|i| {
        let (y, x) = (i / w, i % w);
        let admissible = |j: usize| {
            let cheb = y.abs_diff(j / w).max(x.abs_diff(j % w));
            cheb > 1 && window.is_none_or(|win| cheb <= win / 2)
        };
        let chosen: Vec<usize> = g.neighbors(i).iter().map(|&j| j as usize).collect();
        let n_adm = (0..h * w).filter(|&j| admissible(j)).count();
        let worst = chosen.iter().map(|&j| dist(i, j)).fold(f64::NEG_INFINITY, f64::max);
        chosen.len() == k.min(n_adm)
            && chosen.iter().all(|&j| admissible(j) && j != i)
            && (0..h * w).filter(|&j| admissible(j) && !chosen.contains(&j)).all(|j| dist(i, j) >= worst)
    })
}

fn c8_graphs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = 0;
    for _ in 0..500 {
        let (h, w, c) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=4));
        let k = rng.random_range(0..=8);
        let window = 2 * rng.random_range(1..=5) + 1;
        let f = random(&[1, h, w, c], &mut rng);
        let train = &build_graph_train(&f, k).unwrap()[0];
        let infer = &build_graph_infer(&f, k, window).unwrap()[0];
        let ok = train.validate().is_ok()
            && infer.validate().is_ok()
            && optimal(&f, train, k, None)
            && optimal(&f, infer, k, Some(window));
        failures += usize::from(!ok);
    }
    outcome(failures == 0, format!("500 random maps (train and infer), {failures} failures"))
}

struct Smoke {
    heldout: Vec<(GrayImage, GrayImage)>,
    noisy_psnr: f64,
    trained: Vec<(usize, f64, Model<f32>)>,
}

impl Smoke {
    fn new() -> Self {
        let held = Dataset::synthetic(8, 64, 64, 9001).unwrap();
        let heldout: Vec<(GrayImage, GrayImage)> = held
            .images()
            .iter()
            .enumerate()
            .map(|(i, im)| {
                let clean = im.crop(8, 8, 48, 48).unwrap();
                let noisy = add_awgn(&clean, 25.0, 7000 + i as u64).unwrap();
                (clean, noisy)
            })
            .collect();
        let noisy_psnr = heldout.iter().map(|(c, n)| psnr(c, n).unwrap()).sum::<f64>() / heldout.len() as f64;
        Smoke { heldout, noisy_psnr, trained: Vec::new() }
    }

    fn evaluate(&self, m: &Model<f32>) -> f64 {
        self.heldout
            .iter()
            .map(|(c, n)| psnr(c, &m.denoise(n, DEFAULT_CHUNK_PIXELS).unwrap()).unwrap())
            .sum::<f64>()
            / self.heldout.len() as f64
    }

    /// Held-out PSNR of the desk model with `k` neighbours (trained once).
    fn psnr_for(&mut self, k: usize) -> f64 {
        if let Some((_, p, _)) = self.trained.iter().find(|(kk, ..)| *kk == k) {
            return *p;
        }
        let data = Dataset::synthetic(20, 64, 64, 9000).unwrap();
        let cfg = ModelConfig { knn: k, ..ModelConfig::desk() };
        let mut model = build_network::<f32>(&cfg, 1).unwrap();
        let mut state = TrainState::new(&model);
        let start = Instant::now();
        let mut recent = 0.0;
        train(&mut model, &mut state, &data, |t, loss| {
            recent += loss;
            if (t + 1) % 500 == 0 {
                eprintln!("  K={k} iter {} loss {:.5} ({:.0}s)", t + 1, recent / 500.0, start.elapsed().as_secs_f64());
                recent = 0.0;
            }
        })
        .unwrap();
        let p = self.evaluate(&model);
        self.trained.push((k, p, model));
        p
    }
}

fn c9_smoke(s: &mut Smoke) -> Outcome {
    let k4 = s.psnr_for(4);
    let k0 = s.psnr_for(0);
    let gain = k4 - s.noisy_psnr;
    outcome(
        gain >= 3.0,
        format!(
            "noisy {:.2} dB, K=4 {:.2} dB (gain {gain:.2} dB, needs >= 3); 0-NN {:.2} dB",
            s.noisy_psnr, k4, k0
        ),
    )
}

fn c10_ablation(s: &mut Smoke) -> Outcome {
    let k8 = s.psnr_for(8);
    let k0 = s.psnr_for(0);
    outcome(k8 >= k0 - 0.05, format!("informative: K=8 {k8:.2} dB vs K=0 {k0:.2} dB (needs K=8 >= K=0 - 0.05)"))
}

fn c11_serialization() -> Outcome {
    let cfg = ModelConfig { iters: 20, ..ModelConfig::desk() };
    let data = Dataset::synthetic(4, 32, 32, 11).unwrap();
    let mut model = build_network::<f32>(&cfg, 11).unwrap();
    let mut state = TrainState::new(&model);
    train(&mut model, &mut state, &data, |_, _| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.gcdn"), dir.path().join("b.gcdn"));
    let ck = Checkpoint { model, train: Some(state) };
    ck.save(&a).unwrap();
    let back = Checkpoint::load(&a).unwrap();
    back.save(&b).unwrap();
    let same_bytes = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    let img = add_awgn(&synthetic_scene(40, 40, 12), 25.0, 13).unwrap();
    let (x, y) = (ck.model.denoise(&img, 256).unwrap(), back.model.denoise(&img, 256).unwrap());
    let same_output = x.pixels().iter().zip(y.pixels()).all(|(p, q)| p.to_bits() == q.to_bits());
    outcome(
        same_bytes && same_output,
        format!(
            "{} bytes; save-load-save identical: {same_bytes}; reloaded denoise bit-identical: {same_output}",
            std::fs::metadata(&a).unwrap().len()
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut smoke = None;
    let names = [
        "gradient correctness",
        "low-rank equivalence",
        "circulant equivalence",
        "memory formulas",
        "initialization statistics",
        "proximal oracle",
        "noisy-input PSNR",
        "graph invariants",
        "smoke training",
        "ablation direction",
        "serialization",
    ];
    let mut failed = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let out = match n {
            1 => c1_gradients(),
            2 => c2_low_rank(),
            3 => c3_circulant(),
            4 => c4_memory(),
            5 => c5_init_statistics(),
            6 => c6_prox(),
            7 => c7_noisy_psnr(),
            8 => c8_graphs(),
            9 => c9_smoke(smoke.get_or_insert_with(Smoke::new)),
            10 => c10_ablation(smoke.get_or_insert_with(Smoke::new)),
            _ => c11_serialization(),
        };
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {n:>2} {name}: {} [{:.1}s]", out.detail, start.elapsed().as_secs_f64());
        // criterion 10 is informative only
        if !out.pass && n != 10 {
            failed.push(n);
        }
    }
    println!("acceptance: {} gating criteria failed {:?}", failed.len(), failed);
    if !failed.is_empty() && std::env::var_os("GCDN_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
