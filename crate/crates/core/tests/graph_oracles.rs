use gcdn::graph_builder::*;
use gcdn::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(h: usize, w: usize, c: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, h, w, c], |_| rng.random_range(-1.0..1.0))
}

fn dist2(f: &Tensor<f64>, c: usize, i: usize, j: usize) -> f64 {
    (0..c).map(|k| (f.data()[i * c + k] - f.data()[j * c + k]).powi(2)).sum()
}

/// Sort every admissible candidate by (distance, index) and keep the first k.
fn brute_force(f: &Tensor<f64>, k: usize, window: Option<usize>) -> Vec<Vec<u32>> {
    let [_, h, w, c] = f.shape()[..] else { panic!() };
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let mut cand: Vec<(f64, usize)> = (0..h * w)
                .filter(|&j| {
                    let (yy, xx) = (j / w, j % w);
                    let cheb = y.abs_diff(yy).max(x.abs_diff(xx));
                    cheb > 1 && window.is_none_or(|win| cheb <= win / 2)
                })
                .map(|j| (dist2(f, c, i, j), j))
                .collect();
            cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j as u32).collect()
        })
        .collect()
}

fn lists(g: &PixelGraph) -> Vec<Vec<u32>> {
    (0..g.nodes()).map(|i| g.neighbors(i).to_vec()).collect()
}

#[test]
fn train_graph_matches_exhaustive_sort() {
    let f = features(6, 6, 4, 1);
    let g = &build_graph_train(&f, 3).unwrap()[0];
    assert_eq!(lists(g), brute_force(&f, 3, None));
}

#[test]
fn infer_graph_matches_windowed_brute_force() {
    let f = features(16, 16, 4, 2);
    let g = &build_graph_infer(&f, 4, 9).unwrap()[0];
    assert_eq!(lists(g), brute_force(&f, 4, Some(9)));
    g.validate().unwrap();
}

#[test]
fn covering_window_equals_train_mode() {
    let f = features(7, 9, 3, 3);
    let train = &build_graph_train(&f, 5).unwrap()[0];
    let infer = &build_graph_infer(&f, 5, 2 * 9 + 1).unwrap()[0];
    assert_eq!(lists(train), lists(infer));
}

#[test]
fn corner_window_is_clamped() {
    let f = features(50, 50, 2, 4);
    let g = &build_graph_infer(&f, 6, 43).unwrap()[0];
    for &j in g.neighbors(0) {
        let (y, x) = (j as usize / 50, j as usize % 50);
        assert!(y <= 21 && x <= 21, "neighbour ({y}, {x}) outside the clamped window");
    }
    let last = 50 * 50 - 1;
    for &j in g.neighbors(last) {
        let (y, x) = (j as usize / 50, j as usize % 50);
        assert!(y >= 28 && x >= 28);
    }
    assert_eq!(lists(g)[0], brute_force(&f, 6, Some(43))[0]);
}

#[test]
fn labels_are_differences_and_track_features() {
    let f = features(5, 6, 3, 5);
    let graphs = build_graph_train(&f, 2).unwrap();
    let labels = edge_labels(&f, &graphs).unwrap();
    for (e, (i, j)) in graphs[0].edges().enumerate() {
        for c in 0..3 {
            let want = f.data()[j * 3 + c] - f.data()[i * 3 + c];
            assert_eq!(labels[0].labels.data()[e * 3 + c], want);
        }
    }
    // new features, same graph: labels equal a fresh recomputation
    let f2 = f.map(|v| v * 1.5 - 0.25);
    let again = edge_labels(&f2, &graphs).unwrap();
    for (e, (i, j)) in graphs[0].edges().enumerate() {
        for c in 0..3 {
            assert_eq!(again[0].labels.data()[e * 3 + c], f2.data()[j * 3 + c] - f2.data()[i * 3 + c]);
        }
    }
}

#[test]
fn graphs_do_not_depend_on_thread_count() {
    let f = Tensor::from_fn(&[3, 12, 12, 4], {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        move |_| rng.random_range(-1.0..1.0)
    });
    let a = build_graph_infer(&f, 4, 7).unwrap();
    gcdn::par::set_sequential(true);
    let b = build_graph_infer(&f, 4, 7).unwrap();
    gcdn::par::set_sequential(false);
    assert_eq!(a, b);
    assert_eq!(a, build_graph_infer(&f, 4, 7).unwrap());
}

fn check_invariants(f: &Tensor<f64>, g: &PixelGraph, k: usize, window: Option<usize>) -> Result<(), TestCaseError> {
    let [_, h, w, c] = f.shape()[..] else { panic!() };
    g.validate().map_err(|e| TestCaseError::fail(e.to_string()))?;
    for i in 0..h * w {
        let (y, x) = (i / w, i % w);
        let nb = g.neighbors(i);
        prop_assert!(nb.len() <= k);
        let chosen: Vec<usize> = nb.iter().map(|&j| j as usize).collect();
        for &j in &chosen {
            let (yy, xx) = (j / w, j % w);
            let cheb = y.abs_diff(yy).max(x.abs_diff(xx));
            prop_assert!(cheb > 1, "self or 8-neighbour edge {i}->{j}");
            if let Some(win) = window {
                prop_assert!(cheb <= win / 2);
            }
        }
        // optimality: nothing rejected is strictly closer than anything chosen
        let worst = chosen.iter().map(|&j| dist2(f, c, i, j)).fold(f64::NEG_INFINITY, f64::max);
        let admissible = |j: usize| {
            let (yy, xx) = (j / w, j % w);
            let cheb = y.abs_diff(yy).max(x.abs_diff(xx));
            cheb > 1 && window.is_none_or(|win| cheb <= win / 2)
        };
        let n_adm = (0..h * w).filter(|&j| admissible(j)).count();
        prop_assert_eq!(chosen.len(), k.min(n_adm));
        for j in (0..h * w).filter(|&j| admissible(j) && !chosen.contains(&j)) {
            prop_assert!(dist2(f, c, i, j) >= worst);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_graphs_satisfy_invariants(seed in any::<u64>(), h in 1usize..=16, w in 1usize..=16, c in 1usize..=4, k in 0usize..=6, win_half in 1usize..=5) {
        let f = features(h, w, c, seed);
        let g = &build_graph_train(&f, k).unwrap()[0];
        check_invariants(&f, g, k, None)?;
        let window = 2 * win_half + 1;
        let g = &build_graph_infer(&f, k, window).unwrap()[0];
        check_invariants(&f, g, k, Some(window))?;
    }

    #[test]
    fn swapping_endpoints_negates_labels(seed in any::<u64>()) {
        let f = features(6, 6, 3, seed);
        let g = &build_graph_train(&f, 2).unwrap()[0];
        for (i, j) in g.edges() {
            for ch in 0..3 {
                let d_ij = f.data()[j * 3 + ch] - f.data()[i * 3 + ch];
                let d_ji = f.data()[i * 3 + ch] - f.data()[j * 3 + ch];
                prop_assert_eq!(d_ij, -d_ji);
            }
        }
    }
}

#[test]
fn quantised_features_still_break_ties_by_index() {
    // many exact ties: values drawn from {0, 1}
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = Tensor::from_fn(&[1, 8, 8, 1], |_| rng.random_range(0..2) as f64);
    let g = &build_graph_train(&f, 4).unwrap()[0];
    assert_eq!(lists(g), brute_force(&f, 4, None));
}
