#[path = "support/betti_oracle.rs"]
mod betti_oracle;

use betti_oracle::{probe_thresholds, sublevel_betti};
use lltk_core::numkit::SeededRng;
use lltk_core::topo::{persistence_h0, persistence_h1, FilteredComplex, PersistenceDiagram};
use proptest::prelude::*;

fn random_graph(n: usize, density: f64, integer_values: bool, seed: u64) -> (Vec<f64>, Vec<(usize, usize)>) {
    let mut rng = SeededRng::new(seed, 0);
    let values = (0..n)
        .map(|_| if integer_values { rng.below(4) as f64 } else { rng.uniform() })
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.uniform() < density {
                edges.push((a, b));
            }
        }
    }
    (values, edges)
}

fn diagrams(values: &[f64], edges: &[(usize, usize)]) -> (PersistenceDiagram, PersistenceDiagram) {
    let c = FilteredComplex::with_flag_fill(values.to_vec(), edges).unwrap();
    (persistence_h0(&c), persistence_h1(&c))
}

#[test]
fn betti_curves_match_exhaustive_oracle() {
    for seed in 0..300u64 {
        let n = 1 + (seed % 12) as usize;
        let density = [0.2, 0.4, 0.6, 0.9][(seed % 4) as usize];
        let (values, edges) = random_graph(n, density, seed % 3 == 0, seed);
        let (h0, h1) = diagrams(&values, &edges);
        for t in probe_thresholds(&values) {
            let (b0, b1) = sublevel_betti(&values, &edges, t);
            assert_eq!((h0.betti_at(t), h1.betti_at(t)), (b0, b1), "seed {seed} t {t}");
        }
    }
}

/// Bottleneck distance between two diagrams of the same complex: essential
/// classes matched among themselves in birth order, finite pairs by
/// thresholded bipartite matching with the diagonal.
fn bottleneck(a: &PersistenceDiagram, b: &PersistenceDiagram) -> f64 {
    let ess = |d: &PersistenceDiagram| {
        let mut v: Vec<(f64, f64)> = d.pairs.iter().filter(|p| p.essential).map(|p| (p.birth, p.death)).collect();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        v
    };
    let (ea, eb) = (ess(a), ess(b));
    assert_eq!(ea.len(), eb.len());
    let mut worst: f64 = ea
        .iter()
        .zip(&eb)
        .map(|(x, y)| (x.0 - y.0).abs().max((x.1 - y.1).abs()))
        .fold(0.0, f64::max);
    let fin = |d: &PersistenceDiagram| -> Vec<(f64, f64)> {
        d.pairs.iter().filter(|p| !p.essential && p.death > p.birth).map(|p| (p.birth, p.death)).collect()
    };
    let (fa, fb) = (fin(a), fin(b));
    let diag = |p: (f64, f64)| 0.5 * (p.1 - p.0);
    let linf = |p: (f64, f64), q: (f64, f64)| (p.0 - q.0).abs().max((p.1 - q.1).abs());
    let mut candidates: Vec<f64> = vec![0.0];
    candidates.extend(fa.iter().map(|&p| diag(p)));
    candidates.extend(fb.iter().map(|&p| diag(p)));
    for &p in &fa {
        for &q in &fb {
            candidates.push(linf(p, q));
        }
    }
    candidates.sort_by(f64::total_cmp);
    let feasible = |eps: f64| {
        // left: fa then diagonal copies of fb; right: fb then diagonal copies of fa
        let (na, nb) = (fa.len(), fb.len());
        let size = na + nb;
        let allowed = |i: usize, j: usize| -> bool {
            match (i < na, j < nb) {
                (true, true) => linf(fa[i], fb[j]) <= eps,
                (true, false) => diag(fa[i]) <= eps && j - nb == i,
                (false, true) => diag(fb[j]) <= eps && i - na == j,
                (false, false) => true,
            }
        };
        let mut match_right = vec![usize::MAX; size];
        fn augment(i: usize, size: usize, allowed: &dyn Fn(usize, usize) -> bool, seen: &mut [bool], mr: &mut [usize]) -> bool {
            for j in 0..size {
                if allowed(i, j) && !seen[j] {
                    seen[j] = true;
                    if mr[j] == usize::MAX || augment(mr[j], size, allowed, seen, mr) {
                        mr[j] = i;
                        return true;
                    }
                }
            }
            false
        }
        (0..size).all(|i| {
            let mut seen = vec![false; size];
            augment(i, size, &allowed, &mut seen, &mut match_right)
        })
    };
    let finite = candidates.into_iter().find(|&eps| feasible(eps)).unwrap();
    worst = worst.max(finite);
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diagrams_are_stable_under_value_perturbation(seed in 0u64..10_000, delta in 0.0f64..0.2) {
        let n = 3 + (seed % 9) as usize;
        let (values, edges) = random_graph(n, 0.5, false, seed);
        let mut rng = SeededRng::new(seed, 1);
        let moved: Vec<f64> = values.iter().map(|v| v + delta * (2.0 * rng.uniform() - 1.0)).collect();
        let (a0, a1) = diagrams(&values, &edges);
        let (b0, b1) = diagrams(&moved, &edges);
        prop_assert!(bottleneck(&a0, &b0) <= delta + 1e-12);
        prop_assert!(bottleneck(&a1, &b1) <= delta + 1e-12);
    }
}

#[test]
fn bottleneck_of_identical_diagrams_is_zero() {
    let (values, edges) = random_graph(9, 0.5, false, 4);
    let (h0, h1) = diagrams(&values, &edges);
    assert_eq!(bottleneck(&h0, &h0), 0.0);
    assert_eq!(bottleneck(&h1, &h1), 0.0);
}

#[test]
fn uniform_shift_moves_h0_by_the_shift() {
    let (values, edges) = random_graph(9, 0.5, false, 4);
    let shifted: Vec<f64> = values.iter().map(|v| v + 0.25).collect();
    let (a0, _) = diagrams(&values, &edges);
    let (b0, _) = diagrams(&shifted, &edges);
    assert!((bottleneck(&a0, &b0) - 0.25).abs() < 1e-12);
}
