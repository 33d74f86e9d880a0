use mbt::lossresp::{fourier_basis, LeafSolver};
use mbt::tree::{find_best_split, fit_tree, tree_predict, SplitCandidate};
use mbt::{LossResponseSpec, Matrix64, TreeConfig};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Every midpoint of every feature, scored from scratch.
fn exhaustive_split(
    x: &Matrix64,
    resid: &Matrix64,
    solver: &LeafSolver<f64>,
    n_min: usize,
) -> Option<SplitCandidate<f64>> {
    let n = x.rows();
    let grads = solver.row_gradients(resid, None).unwrap();
    let parent = solver.optimal_leaf_loss(&grads.total()).unwrap();
    let mut best: Option<SplitCandidate<f64>> = None;
    for j in 0..x.cols() {
        let mut vals = x.column(j);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let thr = w[0] + (w[1] - w[0]) / 2.0;
            let left: Vec<usize> = (0..n).filter(|&i| x[(i, j)] <= thr).collect();
            let right: Vec<usize> = (0..n).filter(|&i| x[(i, j)] > thr).collect();
            if left.len() < n_min || right.len() < n_min {
                continue;
            }
            let loss = solver.optimal_leaf_loss(&grads.accumulate(left)).unwrap()
                + solver.optimal_leaf_loss(&grads.accumulate(right)).unwrap();
            let better = match &best {
                None => true,
                Some(b) => loss < b.loss || (loss == b.loss && (j, thr) < (b.feature, b.threshold)),
            };
            if better {
                best = Some(SplitCandidate { feature: j, threshold: thr, loss });
            }
        }
    }
    let tol = f64::EPSILON * 16.0 * parent.abs();
    best.filter(|b| b.loss < parent - tol.max(1e-12 * parent.abs()))
}

#[test]
fn histogram_search_agrees_with_exhaustive_oracle() {
    for seed in 0..10 {
        let mut rng = StdRng::seed_from_u64(seed);
        let (n, nf, nt) = (200, 5, 2);
        // Coarse feature grids give ties; integer residuals keep every sum exact.
        let x = Matrix64::from_fn(n, nf, |_, j| (rng.random_range(0..(10 + 20 * j)) as f64) * 0.5);
        let resid = Matrix64::from_fn(n, nt, |i, _| (rng.random_range(-5..6) + if x[(i, 2)] > 20.0 { 4 } else { 0 }) as f64);
        let solver = LeafSolver::new(&LossResponseSpec::l2_constant(1.0), nt, 0).unwrap();
        let grads = solver.row_gradients(&resid, None).unwrap();
        let parent = solver.optimal_leaf_loss(&grads.total()).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        for n_min in [1, 7] {
            let got = find_best_split(&x, &rows, &grads, &solver, parent, 1024, n_min).unwrap();
            let want = exhaustive_split(&x, &resid, &solver, n_min);
            assert_eq!(got, want, "seed {seed}, n_min {n_min}");
        }
    }
}

#[test]
fn linear_leaf_reproduces_least_squares() {
    let mut rng = StdRng::seed_from_u64(21);
    let (n, n_p, n_t) = (60, 3, 2);
    let x = Matrix64::zeros(n, 1);
    let xl = Matrix64::from_fn(n, n_p, |_, _| rng.random_range(-1.0..1.0));
    let resid = Matrix64::from_fn(n, n_t, |_, _| rng.random_range(-1.0..1.0));
    let solver = LeafSolver::new(&LossResponseSpec::l2_linear(0.0), n_t, n_p).unwrap();
    let cfg = TreeConfig { n_min: 1, max_depth: 0, n_bins: 8 };
    let rows: Vec<usize> = (0..n).collect();
    let tree = fit_tree(&x, &resid, Some(&xl), &rows, &solver, &cfg).unwrap();
    let w = tree.leaves()[0].to_vec();

    let a = DMatrix::from_row_slice(n, n_p, xl.as_slice());
    let b = DMatrix::from_row_slice(n, n_t, resid.as_slice());
    let ols = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
    for p in 0..n_p {
        for t in 0..n_t {
            assert!((w[p * n_t + t] - ols[(p, t)]).abs() <= 1e-10);
        }
    }
    let response = solver.spec().response(n_t, n_p);
    for i in 0..5 {
        let out = tree_predict(&tree, &response, x.row(i), Some(xl.row(i))).unwrap();
        let want = a.row(i) * &ols;
        for t in 0..n_t {
            assert!((out[t] - want[t]).abs() <= 1e-10);
        }
    }
}

#[test]
fn fourier_leaf_output_lies_in_basis_span() {
    let mut rng = StdRng::seed_from_u64(3);
    let n_t = 24;
    let spec = LossResponseSpec::l2_fourier(n_t, &[1, 3], 0.5).unwrap();
    let solver = LeafSolver::new(&spec, n_t, 0).unwrap();
    let x = Matrix64::from_fn(100, 2, |_, _| rng.random_range(0.0..1.0));
    let resid = Matrix64::from_fn(100, n_t, |i, t| x[(i, 0)] * (t as f64).sin() + rng.random_range(-0.1..0.1));
    let cfg = TreeConfig { n_min: 5, max_depth: 3, n_bins: 16 };
    let tree = fit_tree(&x, &resid, None, &(0..100).collect::<Vec<_>>(), &solver, &cfg).unwrap();
    assert!(tree.n_leaves > 1);
    let p: Matrix64 = fourier_basis(n_t, &[1, 3]).unwrap();
    let response = spec.response(n_t, 0);
    for i in 0..100 {
        let out = tree_predict(&tree, &response, x.row(i), None).unwrap();
        let proj = p.mul_vec(&p.t_mul_vec(&out).unwrap()).unwrap();
        let off = out.iter().zip(&proj).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(off <= 1e-12);
    }
}

#[test]
fn split_rule_sends_ties_left() {
    let x = Matrix64::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let r = Matrix64::from_vec(4, 1, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
    let solver = LeafSolver::new(&LossResponseSpec::l2_constant(0.0), 1, 0).unwrap();
    let cfg = TreeConfig { n_min: 1, max_depth: 1, n_bins: 32 };
    let tree = fit_tree(&x, &r, None, &[0, 1, 2, 3], &solver, &cfg).unwrap();
    assert_eq!(tree.route(&[2.5]), &[0.0]);
    assert_eq!(tree.route(&[2.5000001]), &[10.0]);
}
