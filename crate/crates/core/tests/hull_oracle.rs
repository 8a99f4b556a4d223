use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridgeline::hull::{caratheodory_reduce, hull_contains_zero, min_norm_point, AtomSet, MinNormCertificate};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Exact oracle: the nearest hull point is the affine minimizer of some
/// affinely independent support of at most p+1 atoms with nonnegative weights.
fn subset_oracle(atoms: &[Vec<f64>]) -> f64 {
    let n = atoms.len();
    let p = atoms[0].len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if idx.len() > p + 1 {
            continue;
        }
        let k = idx.len();
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                kkt[(a, b)] = atoms[i].iter().zip(&atoms[j]).map(|(x, y)| x * y).sum::<f64>();
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
        }
        let mut rhs = DVector::zeros(k + 1);
        rhs[k] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if sol.iter().any(|v| !v.is_finite()) || (0..k).any(|a| sol[a] < -1e-12) {
            continue;
        }
        let mut pt = vec![0.0; p];
        for (a, &i) in idx.iter().enumerate() {
            for d in 0..p {
                pt[d] += sol[a] * atoms[i][d];
            }
        }
        best = best.min(norm(&pt));
    }
    best
}

/// Grid over simplex weights at resolution 1/200 followed by a pairwise
/// weight-transfer polish; only feasible for up to three atoms.
fn grid_oracle(atoms: &[Vec<f64>]) -> f64 {
    let n = atoms.len();
    assert!(n <= 3);
    let p = atoms[0].len();
    let eval = |w: &[f64]| {
        let mut pt = vec![0.0; p];
        for (a, wi) in atoms.iter().zip(w) {
            for d in 0..p {
                pt[d] += wi * a[d];
            }
        }
        norm(&pt)
    };
    let res = 200;
    let mut best_w = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut w = vec![0.0; n];
    let visit = |w: &[f64], best: &mut f64, best_w: &mut Vec<f64>| {
        let v = eval(w);
        if v < *best {
            *best = v;
            *best_w = w.to_vec();
        }
    };
    match n {
        1 => visit(&[1.0], &mut best, &mut best_w),
        2 => {
            for i in 0..=res {
                w[0] = i as f64 / res as f64;
                w[1] = 1.0 - w[0];
                visit(&w, &mut best, &mut best_w);
            }
        }
        _ => {
            for i in 0..=res {
                for j in 0..=(res - i) {
                    w[0] = i as f64 / res as f64;
                    w[1] = j as f64 / res as f64;
                    w[2] = 1.0 - w[0] - w[1];
                    visit(&w, &mut best, &mut best_w);
                }
            }
        }
    }
    let mut step = 1.0 / res as f64;
    while step > 1e-13 {
        let mut improved = false;
        for a in 0..n {
            for b in 0..n {
                if a == b || best_w[a] <= 0.0 {
                    continue;
                }
                let t = step.min(best_w[a]);
                let mut cand = best_w.clone();
                cand[a] -= t;
                cand[b] += t;
                let v = eval(&cand);
                if v < best {
                    best = v;
                    best_w = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

fn random_atoms(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=8);
    let p = rng.random_range(1..=3);
    let shift: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
    (0..n)
        .map(|_| (0..p).map(|d| shift[d] + rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn wolfe_matches_subset_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..500 {
        let atoms = random_atoms(&mut rng);
        let cert = min_norm_point(&AtomSet::new(atoms.clone()).unwrap(), 1e-12);
        let exact = subset_oracle(&atoms);
        assert!(
            (cert.norm - exact).abs() <= 1e-4,
            "trial {trial}: wolfe {} vs oracle {exact}",
            cert.norm
        );
        assert!(!cert.capped);
        assert!(cert.norm <= exact + 1e-9);
    }
}

#[test]
fn grid_and_subset_oracles_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let p = rng.random_range(1..=3);
        let atoms: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let wolfe = min_norm_point(&AtomSet::new(atoms.clone()).unwrap(), 1e-12).norm;
        assert!((grid_oracle(&atoms) - subset_oracle(&atoms)).abs() < 1e-6);
        assert!((grid_oracle(&atoms) - wolfe).abs() < 1e-4);
    }
}

#[test]
fn triangle_value_frozen_from_grid() {
    let atoms = vec![vec![2.0, 1.0], vec![1.0, 2.0], vec![3.0, 3.0]];
    let g = grid_oracle(&atoms);
    assert!((g * g - 4.5).abs() < 1e-9);
}

#[test]
fn caratheodory_on_six_planar_atoms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let atoms: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let ang = i as f64 * std::f64::consts::PI / 3.0 + rng.random_range(-0.3..0.3);
                let r = rng.random_range(0.5..2.0);
                vec![r * ang.cos(), r * ang.sin()]
            })
            .collect();
        let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut point = vec![0.0; 2];
        for (a, w) in atoms.iter().zip(&weights) {
            point[0] += w * a[0];
            point[1] += w * a[1];
        }
        let cert = MinNormCertificate {
            atoms: atoms.clone(),
            weights,
            norm: norm(&point),
            point: point.clone(),
            gap: 0.0,
            iterations: 0,
            capped: false,
        };
        let red = caratheodory_reduce(&cert, 2);
        assert!(red.support_size() <= 3);
        assert!(norm(&[red.point[0] - point[0], red.point[1] - point[1]]) < 1e-10);
        assert!(red.norm <= cert.norm + 1e-12);
    }
}

proptest! {
    #[test]
    fn scaling_scales_point_and_preserves_verdict(
        atoms in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..7),
        c in 0.1f64..10.0,
    ) {
        let tol = 1e-6;
        let base = AtomSet::new(atoms.clone()).unwrap();
        let scaled = AtomSet::new(atoms.iter().map(|a| a.iter().map(|v| c * v).collect()).collect()).unwrap();
        let (v1, c1) = hull_contains_zero(&base, tol);
        let (v2, c2) = hull_contains_zero(&scaled, tol * c);
        prop_assert_eq!(v1, v2);
        prop_assert!((c2.norm - c * c1.norm).abs() <= 1e-9 * (1.0 + c));
    }

    #[test]
    fn reduction_never_grows_support_or_norm(
        atoms in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..9),
    ) {
        let cert = min_norm_point(&AtomSet::new(atoms).unwrap(), 1e-12);
        let red = caratheodory_reduce(&cert, 3);
        prop_assert!(red.support_size() <= 4);
        prop_assert!(red.norm <= cert.norm + 1e-12);
        prop_assert!((red.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(red.weights.iter().all(|w| *w >= 0.0));
    }
}
