mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use mbt::linalg::{eigen_decompose_symmetric, eigen_decompositions_on_this_thread, shifted_inverse_apply};
use mbt::lossresp::{
    fourier_basis, linquad_quantile_grad_hess, second_difference_matrix, smoothed_quantile_grad_hess,
    smoothed_quantile_loss, LeafSolver, RowGradients,
};
use mbt::metrics::crossing_rate;
use mbt::reconcile::{bottom_up, estimate_omega, gls_reconcile, mbt_reconcile_fit, OmegaEstimator};
use mbt::tree::{fit_tree, SplitCandidate};
use mbt::{BoostConfig, Dataset64, Hierarchy, LossResponseSpec, Matrix64, Model64, TreeConfig};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp, Normal, StudentT, Uniform};

type Check = Result<String, String>;
type Sampler = Box<dyn Fn(&mut StdRng) -> f64>;
type Criterion = (&'static str, &'static str, Option<u64>, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn to_na(m: &Matrix64) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn ac1_cached_inverse() -> Check {
    let mut rng = StdRng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=64);
        let b = Matrix64::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let a = b.add(&b.transpose()).unwrap();
        let e = eigen_decompose_symmetric(&a).map_err(|e| e.to_string())?;
        // Indefinite A; n keeps every m·λᵢ + n positive, as the operation requires.
        let m: f64 = rng.random_range(0.1..5.0);
        let lambda_min = to_na(&a).symmetric_eigenvalues().min();
        let n: f64 = (-m * lambda_min).max(0.0) + rng.random_range(0.05..5.0);
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = shifted_inverse_apply(&e, n, m, &v).map_err(|e| e.to_string())?;
        let lhs = to_na(&a) * m + DMatrix::identity(k, k) * n;
        let want = lhs.lu().solve(&DVector::from_vec(v)).ok_or("direct solve failed")?;
        let err = (DVector::from_vec(got) - &want).norm() / want.norm();
        worst = worst.max(err);
    }
    ensure(worst <= 1e-8, || format!("worst relative error {worst:e}"))?;

    let n_t = 48;
    let spec = LossResponseSpec::l2_smooth(n_t, 5.0).unwrap();
    let before = eigen_decompositions_on_this_thread();
    let solver = LeafSolver::new(&spec, n_t, 0).map_err(|e| e.to_string())?;
    let after_first = eigen_decompositions_on_this_thread();
    let resid = Matrix64::from_fn(400, n_t, |_, _| rng.random_range(-1.0..1.0));
    let grads = solver.row_gradients(&resid, None).map_err(|e| e.to_string())?;
    for _ in 0..1000 {
        let lo = rng.random_range(0..399);
        let hi = rng.random_range(lo + 1..=400);
        solver.solve(&grads.accumulate(lo..hi)).map_err(|e| e.to_string())?;
    }
    let extra = eigen_decompositions_on_this_thread() - after_first;
    ensure(after_first - before == 1 && extra == 0, || {
        format!("{} decompositions at setup, {extra} during 1000 solves", after_first - before)
    })?;
    Ok(format!("worst rel err {worst:.2e}; 0 decompositions in 1000 leaf solves"))
}

fn frozen_linquad_loss(x: &[f64], q: f64, tau: f64, k: f64, sum_l: f64, sum_r: f64) -> f64 {
    x.iter()
        .map(|&xi| {
            let e = xi - q;
            if e < 0.0 {
                (tau - 1.0) * e + k * e * e / (2.0 * sum_l)
            } else {
                tau * e + k * e * e / (2.0 * sum_r)
            }
        })
        .sum::<f64>()
        / x.len() as f64
}

fn ac2_linquad_minimizer() -> Check {
    let mut rng = StdRng::seed_from_u64(202);
    let n = 1001;
    let samplers: Vec<(&str, Sampler)> = vec![
        ("uniform", Box::new(|r: &mut StdRng| Uniform::new(0.0, 1.0).unwrap().sample(r))),
        ("gaussian", Box::new(|r: &mut StdRng| Normal::new(0.0, 1.0).unwrap().sample(r))),
        ("exponential", Box::new(|r: &mut StdRng| Exp::new(1.0).unwrap().sample(r))),
        (
            "bimodal",
            Box::new(|r: &mut StdRng| {
                let c = if r.random::<bool>() { -2.0 } else { 2.0 };
                c + Normal::new(0.0, 0.5).unwrap().sample(r)
            }),
        ),
        ("student_t3", Box::new(|r: &mut StdRng| StudentT::new(3.0).unwrap().sample(r))),
    ];
    let k = 1.0;
    let mut worst_gaps: f64 = 0.0;
    for (name, draw) in &samplers {
        let mut x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for t in 1..=9 {
            let tau = t as f64 / 10.0;
            let pos = tau * (n - 1) as f64;
            let i = pos as usize;
            let target = x[i] + (pos - i as f64) * (x[i + 1] - x[i]);
            let gap = (x[i + 1] - x[i]).max(x[i] - x[i - 1]);
            // Grid spacing a fraction of the local gap, spanning a few gaps.
            let (lo, hi) = (x[i.saturating_sub(20)], x[(i + 20).min(n - 1)]);
            let steps = 4000;
            let grid: Vec<f64> = (0..=steps).map(|s| lo + (hi - lo) * s as f64 / steps as f64).collect();
            let sumg = |q: f64| -> f64 {
                let r: Vec<f64> = x.iter().map(|v| v - q).collect();
                linquad_quantile_grad_hess(&r, tau, k).g.iter().sum()
            };
            let idx = grid
                .windows(2)
                .position(|w| sumg(w[0]) < 0.0 && sumg(w[1]) >= 0.0)
                .ok_or_else(|| format!("{name} τ={tau}: no sign change of Σg on the grid"))?;
            let q_star = grid[idx];
            let (sl, sr) = x.iter().fold((0.0, 0.0), |(l, r), &v| {
                let e = v - q_star;
                if e < 0.0 {
                    (l - e, r)
                } else {
                    (l, r + e)
                }
            });
            let best = grid
                .iter()
                .copied()
                .min_by(|a, b| {
                    frozen_linquad_loss(&x, *a, tau, k, sl, sr)
                        .partial_cmp(&frozen_linquad_loss(&x, *b, tau, k, sl, sr))
                        .unwrap()
                })
                .unwrap();
            let step = grid[1] - grid[0];
            for (label, q) in [("Σg root", q_star), ("loss minimizer", best)] {
                let off = (q - target).abs();
                worst_gaps = worst_gaps.max(off / gap);
                ensure(off <= gap + step, || {
                    format!("{name} τ={tau}: {label} {q} vs empirical quantile {target} (gap {gap})")
                })?;
            }
        }
    }
    Ok(format!("45 cases, worst offset {worst_gaps:.3} gaps"))
}

/// Leaves of a brute-force tree, left to right: (rows, optimal loss).
type RefLeaves = Vec<(Vec<usize>, f64)>;

fn exhaustive_split(
    x: &Matrix64,
    rows: &[usize],
    grads: &RowGradients<f64>,
    solver: &LeafSolver<f64>,
    parent: f64,
    n_min: usize,
) -> Option<SplitCandidate<f64>> {
    let mut best: Option<SplitCandidate<f64>> = None;
    for j in 0..x.cols() {
        let mut vals: Vec<f64> = rows.iter().map(|&r| x[(r, j)]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let thr = w[0] + (w[1] - w[0]) * 0.5;
            let left: Vec<usize> = (0..rows.len()).filter(|&p| x[(rows[p], j)] <= thr).collect();
            let right: Vec<usize> = (0..rows.len()).filter(|&p| x[(rows[p], j)] > thr).collect();
            if left.len() < n_min || right.len() < n_min {
                continue;
            }
            let (Ok(a), Ok(b)) = (
                solver.optimal_leaf_loss(&grads.accumulate(left)),
                solver.optimal_leaf_loss(&grads.accumulate(right)),
            ) else {
                continue;
            };
            let loss = a + b;
            let better = match &best {
                None => true,
                Some(b) => loss < b.loss || (loss == b.loss && (j, thr) < (b.feature, b.threshold)),
            };
            if better {
                best = Some(SplitCandidate { feature: j, threshold: thr, loss });
            }
        }
    }
    let tol = (16.0 * f64::EPSILON).max(1e-12) * parent.abs();
    best.filter(|b| b.loss < parent - tol)
}

/// Brute-force tree: every midpoint of every feature at every node.
fn reference_tree(
    x: &Matrix64,
    rows: &[usize],
    grads: &RowGradients<f64>,
    solver: &LeafSolver<f64>,
    cfg: &TreeConfig,
    depth: usize,
    out: &mut RefLeaves,
) {
    let parent = solver.optimal_leaf_loss(&grads.total()).unwrap_or(f64::INFINITY);
    let split = if depth >= cfg.max_depth || rows.len() < 2 * cfg.n_min {
        None
    } else {
        exhaustive_split(x, rows, grads, solver, parent, cfg.n_min)
    };
    let Some(s) = split else {
        out.push((rows.to_vec(), parent));
        return;
    };
    let (lp, rp): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&p| x[(rows[p], s.feature)] <= s.threshold);
    let pick = |ps: &[usize]| ps.iter().map(|&p| rows[p]).collect::<Vec<_>>();
    reference_tree(x, &pick(&lp), &grads.select(&lp), solver, cfg, depth + 1, out);
    reference_tree(x, &pick(&rp), &grads.select(&rp), solver, cfg, depth + 1, out);
}

fn ac3_split_oracle() -> Check {
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(300 + seed);
        let n = rng.random_range(60..=200);
        let n_f = rng.random_range(1..=5);
        let n_t = rng.random_range(1..=4);
        let x = Matrix64::from_fn(n, n_f, |_, j| rng.random_range(0..(8 + 15 * j)) as f64 * 0.25);
        let resid = Matrix64::from_fn(n, n_t, |i, t| {
            (rng.random_range(-4..5) + if x[(i, 0)] > 1.0 { 3 } else { 0 } - if t % 2 == 1 && x[(i, n_f - 1)] < 2.0 { 2 } else { 0 }) as f64
        });
        let spec = if seed % 2 == 0 {
            LossResponseSpec::l2_constant(seed as f64 * 0.5)
        } else if n_t >= 3 {
            LossResponseSpec::l2_smooth(n_t, 2.0).unwrap()
        } else {
            LossResponseSpec::l2_constant(0.0)
        };
        let solver = LeafSolver::new(&spec, n_t, 0).map_err(|e| e.to_string())?;
        let cfg = TreeConfig { n_min: rng.random_range(1..=8), max_depth: rng.random_range(1..=5), n_bins: 1024 };
        let rows: Vec<usize> = (0..n).collect();
        let tree = fit_tree(&x, &resid, None, &rows, &solver, &cfg).map_err(|e| e.to_string())?;

        // Rows per fitted leaf, leaves in left-to-right order.
        let grads = solver.row_gradients(&resid, None).map_err(|e| e.to_string())?;
        let leaves = tree.leaves();
        let mut got: RefLeaves = leaves.iter().map(|_| (Vec::new(), 0.0)).collect();
        for i in 0..n {
            let key = tree.route(x.row(i)).as_ptr();
            let l = leaves.iter().position(|w| w.as_ptr() == key).ok_or("row routed to an unknown leaf")?;
            got[l].0.push(i);
        }
        for g in got.iter_mut() {
            g.1 = solver.optimal_leaf_loss(&grads.accumulate(g.0.iter().copied())).map_err(|e| e.to_string())?;
        }
        let mut want = RefLeaves::new();
        reference_tree(&x, &rows, &grads, &solver, &cfg, 0, &mut want);
        let total = |v: &RefLeaves| v.iter().map(|l| l.1).sum::<f64>();
        ensure(got == want && total(&got) == total(&want), || {
            format!(
                "seed {seed}: tree loss {} ({} leaves) vs reference {} ({} leaves)",
                total(&got),
                got.len(),
                total(&want),
                want.len()
            )
        })?;
        checked += 1;
    }
    Ok(format!("{checked} datasets, identical leaves and total loss"))
}

fn ac4_smoothed_derivatives() -> Check {
    let d = 1e-4;
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for t in 1..=9 {
        let tau = t as f64 / 10.0;
        let (g0, _) = smoothed_quantile_grad_hess(0.0, tau);
        ensure(g0.abs() <= 1e-15, || format!("g(0, {tau}) = {g0:e}"))?;
        for s in 0..=400 {
            let e = -10.0 + s as f64 * 0.05;
            let (g, h) = smoothed_quantile_grad_hess(e, tau);
            // g is the derivative with respect to the model output, i.e. −d/dε.
            let fd_g = -(smoothed_quantile_loss(e + d, tau) - smoothed_quantile_loss(e - d, tau)) / (2.0 * d);
            let fd_h = -(smoothed_quantile_grad_hess(e + d, tau).0 - smoothed_quantile_grad_hess(e - d, tau).0) / (2.0 * d);
            worst_g = worst_g.max((fd_g - g).abs() / g.abs().max(1.0));
            worst_h = worst_h.max((fd_h - h).abs() / h.abs().max(1.0));
        }
    }
    ensure(worst_g <= 1e-6 && worst_h <= 1e-6, || format!("g err {worst_g:e}, h err {worst_h:e}"))?;
    Ok(format!("g err {worst_g:.1e}, h err {worst_h:.1e}; g(0,τ) = 0"))
}

fn ac5_hierarchical_consistency() -> Check {
    let h = Hierarchy::<f64>::from_levels(&[1, 2, 4], 24).map_err(|e| e.to_string())?;
    ensure(h.s.shape() == (31, 24), || format!("S is {:?}", h.s.shape()))?;
    let mut rng = StdRng::seed_from_u64(505);
    let yhat = Matrix64::from_fn(200, 31, |_, _| rng.random_range(-10.0..10.0));
    let bottoms: Vec<usize> = h.bottom_range().collect();
    let bu = bottom_up(&yhat.select_cols(&bottoms), &h).map_err(|e| e.to_string())?;
    let errors = Matrix64::from_fn(100, 31, |_, _| rng.random_range(-1.0..1.0));
    let mut worst = h.consistency_error(&bu).unwrap();
    for est in [OmegaEstimator::Identity, OmegaEstimator::Diagonal, OmegaEstimator::Full] {
        let omega = estimate_omega(&errors, est).map_err(|e| e.to_string())?;
        let g = gls_reconcile(&yhat, &h, &omega).map_err(|e| e.to_string())?;
        worst = worst.max(h.consistency_error(&g).unwrap());
    }
    let g = gls_reconcile(&yhat, &h, &Matrix64::identity(31)).unwrap();
    let gg = gls_reconcile(&g, &h, &Matrix64::identity(31)).unwrap();
    let idem = max_abs_diff(g.as_slice(), gg.as_slice());

    let (fc, actuals) = biased_forecasts(300, &h, 55);
    let cfg = BoostConfig {
        n_rounds: 10,
        learning_rate: 0.3,
        tree: TreeConfig { n_min: 10, max_depth: 3, n_bins: 32 },
        ..BoostConfig::new(LossResponseSpec::l2_constant(0.5))
    };
    let train: Vec<usize> = (0..200).collect();
    let model = mbt_reconcile_fit(&fc.select_rows(&train), &actuals.select_rows(&train), None, &h, &cfg)
        .map_err(|e| e.to_string())?;
    let m = model.predict(&fc, &actuals, None, 200).map_err(|e| e.to_string())?;
    worst = worst.max(h.consistency_error(&m).unwrap());
    ensure(worst <= 1e-9 && idem <= 1e-9, || format!("consistency {worst:e}, idempotence {idem:e}"))?;
    Ok(format!("max consistency error {worst:.1e}; GLS(Ω=I) idempotence {idem:.1e}"))
}

fn ac6_fourier_span() -> Check {
    let n_t = 144;
    let ks = [1, 2, 3, 7, 12];
    let p: Matrix64 = fourier_basis(n_t, &ks).map_err(|e| e.to_string())?;
    let ortho = p.t_matmul(&p).unwrap().sub(&Matrix64::identity(10)).unwrap().max_abs();
    ensure(ortho <= 1e-10, || format!("‖PᵀP − I‖ = {ortho:e}"))?;
    let mut rng = StdRng::seed_from_u64(606);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let x = Matrix64::from_fn(1000, 3, |_, _| rng.random_range(-1.0..1.0));
    let y = Matrix64::from_fn(1000, n_t, |i, t| {
        let a = 2.0 * std::f64::consts::PI * t as f64 / n_t as f64;
        x[(i, 0)] * a.sin() + x[(i, 1)].abs() * (3.0 * a).cos() + noise.sample(&mut rng)
    });
    let data = Dataset64::new(x, y, None).unwrap();
    let spec = LossResponseSpec::l2_fourier(n_t, &ks, 0.5).map_err(|e| e.to_string())?;
    let model = Model64::fit(&data, &quick_config(spec, 20)).map_err(|e| e.to_string())?;
    let pred = model.predict_dataset(&data).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let d: Vec<f64> = pred.row(i).iter().zip(&model.y0).map(|(a, b)| a - b).collect();
        let proj = p.mul_vec(&p.t_mul_vec(&d).unwrap()).unwrap();
        worst = worst.max(max_abs_diff(&d, &proj));
    }
    ensure(worst <= 1e-9 && !model.trees.is_empty(), || format!("span residual {worst:e}, {} trees", model.trees.len()))?;
    Ok(format!("{} trees; span residual {worst:.1e}; PᵀP − I {ortho:.1e}", model.trees.len()))
}

fn ac7_smoothness_monotone() -> Check {
    let n_t = 24;
    let d: Matrix64 = second_difference_matrix(n_t).unwrap();
    let mut rng = StdRng::seed_from_u64(707);
    let resid = Matrix64::from_fn(40, n_t, |_, _| rng.random_range(-2.0..2.0));
    let mut norms = Vec::new();
    for lambda in [0.0, 1.0, 10.0, 1e2, 1e3, 1e4] {
        let spec = LossResponseSpec::l2_smooth(n_t, lambda).unwrap();
        let solver = LeafSolver::new(&spec, n_t, 0).map_err(|e| e.to_string())?;
        let stats = solver.row_gradients(&resid, None).unwrap().total();
        let w = solver.optimal_leaf_response(&stats).map_err(|e| e.to_string())?;
        norms.push(d.mul_vec(&w).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    ensure(norms.windows(2).all(|w| w[1] <= w[0]), || format!("{norms:?}"))?;
    Ok(format!("‖Dw*‖ from {:.3e} down to {:.3e}", norms[0], norms[5]))
}

fn ac8_linear_response() -> Check {
    let data = synthetic(500, 3, 3, 4, 808);
    let cfg = BoostConfig {
        n_rounds: 1,
        learning_rate: 1.0,
        tree: TreeConfig { n_min: 1, max_depth: 0, n_bins: 8 },
        ..BoostConfig::new(LossResponseSpec::l2_linear(0.0))
    };
    let model = Model64::fit(&data, &cfg).map_err(|e| e.to_string())?;
    let w = model.trees.first().ok_or("no tree was kept")?.leaves()[0].to_vec();
    let a = to_na(data.x_lr.as_ref().unwrap());
    let y = to_na(&data.y);
    // Residuals are taken from the column means, so regress the centred targets.
    let means = y.row_mean();
    let yc = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - means[j]);
    let beta = (a.transpose() * &a).lu().solve(&(a.transpose() * yc)).ok_or("singular normal equations")?;
    let mut coef_err: f64 = 0.0;
    for p in 0..4 {
        for t in 0..3 {
            coef_err = coef_err.max((w[p * 3 + t] - beta[(p, t)]).abs());
        }
    }
    ensure(coef_err <= 1e-8, || format!("coefficient error {coef_err:e}"))?;

    let deep = Model64::fit(&data, &quick_config(LossResponseSpec::l2_linear(0.5), 10)).map_err(|e| e.to_string())?;
    ensure(deep.trees.iter().any(|t| t.n_leaves > 1), || "no split was made".into())?;
    let mut rng = StdRng::seed_from_u64(809);
    let x = data.x.select_rows(&(0..50).collect::<Vec<_>>());
    let rnd = |rng: &mut StdRng| Matrix64::from_fn(50, 4, |_, _| rng.random_range(-2.0..2.0));
    let (u, v) = (rnd(&mut rng), rnd(&mut rng));
    let f = |m: &Matrix64| deep.predict(&x, Some(m)).unwrap();
    let f0 = f(&Matrix64::zeros(50, 4));
    let (fu, fv, fuv, f3u) = (f(&u), f(&v), f(&u.add(&v).unwrap()), f(&u.scale(3.0)));
    let mut affine_err: f64 = 0.0;
    for k in 0..f0.as_slice().len() {
        let (z, a, b) = (f0.as_slice()[k], fu.as_slice()[k], fv.as_slice()[k]);
        affine_err = affine_err.max(((fuv.as_slice()[k] - z) - (a - z) - (b - z)).abs());
        affine_err = affine_err.max(((f3u.as_slice()[k] - z) - 3.0 * (a - z)).abs());
    }
    ensure(affine_err <= 1e-8, || format!("affinity probe error {affine_err:e}"))?;
    Ok(format!("OLS coefficient error {coef_err:.1e}; affinity probe error {affine_err:.1e}"))
}

fn ac9_monotone_training() -> Check {
    let mut lines = Vec::new();
    for (name, data, cfg) in all_kinds(2000, 25, 909) {
        let model = Model64::fit(&data, &cfg).map_err(|e| format!("{name}: {e}"))?;
        ensure(model.trace.windows(2).all(|w| w[1] < w[0]), || format!("{name}: trace {:?}", model.trace))?;
        ensure(model.trees.len() == model.trace.len() - 1 && !model.trees.is_empty(), || {
            format!("{name}: {} trees, trace length {}", model.trees.len(), model.trace.len())
        })?;
        lines.push(format!("{name}:{}", model.trees.len()));
    }
    Ok(format!("rounds kept {}", lines.join(" ")))
}

fn ac10_quantile_crossing() -> Check {
    let (n, n_t, n_q) = (5000, 24, 11);
    let taus: Vec<f64> = (0..n_q).map(|i| 0.05 + 0.09 * i as f64).collect();
    let mut rng = StdRng::seed_from_u64(1010);
    let z = Normal::new(0.0, 1.0).unwrap();
    let x = Matrix64::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    let y = Matrix64::from_fn(n, n_t, |i, t| {
        let a = 2.0 * std::f64::consts::PI * t as f64 / n_t as f64;
        let scale = 0.2 + 1.5 * (x[(i, 1)] + 1.0) * (1.0 + a.sin()) / 2.0;
        2.0 * x[(i, 0)] + a.cos() + scale * z.sample(&mut rng)
    });
    let data = Dataset64::new(x.clone(), y.clone(), None).unwrap();
    let tree = TreeConfig { n_min: 50, max_depth: 3, n_bins: 32 };
    let cfg = |spec| BoostConfig { n_rounds: 30, learning_rate: 0.3, tree, ..BoostConfig::new(spec) };

    let mut out = Vec::new();
    for (name, spec) in [
        ("smoothed+refit", LossResponseSpec::quantile_smoothed(taus.clone(), 1.0, true)),
        ("linquad+refit", LossResponseSpec::quantile_linquad(taus.clone(), 100.0, 1.0, true)),
    ] {
        let model = Model64::fit(&data, &cfg(spec)).map_err(|e| format!("{name}: {e}"))?;
        ensure(!model.trees.is_empty(), || format!("{name}: no trees kept"))?;
        let mut leaf_crossings = 0;
        for t in &model.trees {
            for w in t.leaves() {
                leaf_crossings += w.chunks(n_q).map(|c| c.windows(2).filter(|p| p[0] > p[1]).count()).sum::<usize>();
            }
        }
        ensure(leaf_crossings == 0, || format!("{name}: {leaf_crossings} crossings inside leaves"))?;
        let chi = crossing_rate(&model.predict_dataset(&data).unwrap(), n_q).unwrap();
        out.push((name, chi));
    }

    // Independent models, one per (horizon, τ).
    let mut base = Matrix64::zeros(n, n_t * n_q);
    for t in 0..n_t {
        let yt = Matrix64::from_fn(n, 1, |i, _| y[(i, t)]);
        let d = Dataset64::new(x.clone(), yt, None).unwrap();
        for (q, &tau) in taus.iter().enumerate() {
            let m = Model64::fit(&d, &cfg(LossResponseSpec::quantile_smoothed(vec![tau], 1.0, true))).map_err(|e| e.to_string())?;
            let p = m.predict_dataset(&d).unwrap();
            for i in 0..n {
                base[(i, t * n_q + q)] = p[(i, 0)];
            }
        }
    }
    let chi_base = crossing_rate(&base, n_q).unwrap();
    for (name, chi) in &out {
        ensure(*chi < chi_base, || format!("{name} χ̄ {chi} not below baseline {chi_base}"))?;
    }
    Ok(format!(
        "χ̄ baseline {chi_base:.4}; {}; zero within-leaf crossings",
        out.iter().map(|(n, c)| format!("{n} {c:.4}")).collect::<Vec<_>>().join(", ")
    ))
}

fn ac11_error_feedback() -> Check {
    let h = Hierarchy::<f64>::from_levels(&[1, 2], 4).unwrap();
    let (fc, actuals) = biased_forecasts(1200, &h, 1111);
    let train: Vec<usize> = (0..800).collect();
    let test: Vec<usize> = (800..1200).collect();
    let cfg = BoostConfig {
        n_rounds: 60,
        learning_rate: 0.2,
        tree: TreeConfig { n_min: 20, max_depth: 4, n_bins: 64 },
        ..BoostConfig::new(LossResponseSpec::l2_constant(0.1))
    };
    let model = mbt_reconcile_fit(&fc.select_rows(&train), &actuals.select_rows(&train), None, &h, &cfg)
        .map_err(|e| e.to_string())?;
    let truth = actuals.select_rows(&test);
    let mbt = rmse(&model.predict(&fc, &actuals, None, 800).map_err(|e| e.to_string())?, &truth);
    let fc_test = fc.select_rows(&test);
    let bu = rmse(&bottom_up(&fc_test.select_cols(&h.bottom_range().collect::<Vec<_>>()), &h).unwrap(), &truth);
    let errors = actuals.select_rows(&train).sub(&fc.select_rows(&train)).unwrap();
    let mut gls_best = f64::INFINITY;
    for est in [OmegaEstimator::Identity, OmegaEstimator::Diagonal, OmegaEstimator::Full] {
        let omega = estimate_omega(&errors, est).unwrap();
        gls_best = gls_best.min(rmse(&gls_reconcile(&fc_test, &h, &omega).unwrap(), &truth));
    }
    ensure(mbt <= 0.95 * bu && mbt <= 0.95 * gls_best, || {
        format!("RMSE mbt {mbt:.4}, bottom-up {bu:.4}, best GLS {gls_best:.4}")
    })?;
    Ok(format!(
        "RMSE mbt {mbt:.4} vs bottom-up {bu:.4} ({:.0}% lower), best GLS {gls_best:.4} ({:.0}% lower)",
        100.0 * (1.0 - mbt / bu),
        100.0 * (1.0 - mbt / gls_best)
    ))
}

fn ac12_serialization() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(1212);
    let mut names = Vec::new();
    for (name, data, cfg) in all_kinds(600, 10, 1212) {
        let model = Model64::fit(&data, &cfg).map_err(|e| format!("{name}: {e}"))?;
        let path = dir.path().join(format!("{name}.json"));
        model.save(&path).map_err(|e| e.to_string())?;
        let back = Model64::load(&path).map_err(|e| e.to_string())?;
        let x = Matrix64::from_fn(1000, data.n_features(), |_, _| rng.random_range(-2.5..2.5));
        let x_lr = data.x_lr.as_ref().map(|m| Matrix64::from_fn(1000, m.cols(), |_, _| rng.random_range(-1.5..1.5)));
        let a = model.predict(&x, x_lr.as_ref()).unwrap();
        let b = back.predict(&x, x_lr.as_ref()).unwrap();
        let same = a.as_slice().iter().zip(b.as_slice()).all(|(p, q)| p.to_bits() == q.to_bits());
        ensure(same, || format!("{name}: predictions differ after reload"))?;
        names.push(name);
    }
    Ok(format!("{} models bitwise identical on 1000 rows", names.len()))
}

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("AC1", "cached eigen inverse", Some(10), ac1_cached_inverse),
        ("AC2", "linear-quadratic minimizer is the empirical quantile", Some(30), ac2_linquad_minimizer),
        ("AC3", "split search matches brute force", Some(60), ac3_split_oracle),
        ("AC4", "smoothed quantile gradient and Hessian", None, ac4_smoothed_derivatives),
        ("AC5", "hierarchical consistency", None, ac5_hierarchical_consistency),
        ("AC6", "Fourier span invariance", None, ac6_fourier_span),
        ("AC7", "smoothness penalty monotonicity", None, ac7_smoothness_monotone),
        ("AC8", "linear response reduces to OLS", None, ac8_linear_response),
        ("AC9", "monotone training trace", None, ac9_monotone_training),
        ("AC10", "refitted quantiles cross less", Some(300), ac10_quantile_crossing),
        ("AC11", "error feedback beats bottom-up and GLS", Some(120), ac11_error_feedback),
        ("AC12", "serialization round trip", None, ac12_serialization),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(s)) if elapsed > Duration::from_secs(s) => Err(format!("took {elapsed:.1?}, limit {s}s")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("[PASS] {id} {name}: {detail} ({elapsed:.2?})"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail} ({elapsed:.2?})");
            }
        }
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
