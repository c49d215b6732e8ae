mod common;

use common::{fd_gradient, generate, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

#[test]
fn inner_product_identity_on_generated_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..30 {
        let g = generate(seed);
        let c = g.compile();
        for _ in 0..10 {
            let x = point(&mut rng, g.n);
            let dx = point(&mut rng, g.n);
            let dy: f64 = rng.gen_range(-2.0..2.0);
            let lhs = dy * c.jvp(&x, &dx);
            let bar = c.pullback(&x, dy);
            let rhs: f64 = bar.iter().zip(&dx).map(|(a, b)| a * b).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!((lhs - rhs).abs() <= 1e-9 * scale, "seed {seed}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 100..120 {
        let g = generate(seed);
        let c = g.compile();
        for _ in 0..5 {
            let x = point(&mut rng, g.n);
            let grad = c.pullback(&x, 1.0);
            let fd = fd_gradient(|p| c.value(p), &x);
            for (a, b) in grad.iter().zip(&fd) {
                assert!(rel_err(*a, *b) <= 1e-5, "seed {seed} at {x:?}: {grad:?} vs {fd:?}");
            }
        }
    }
}

#[test]
fn hessians_of_generated_functions_are_symmetric_and_match_gradient_differences() {
    use scalar_ad::autodiff::hessian;
    use scalar_ad::builder::{BuildError, Tracer};
    use scalar_ad::exec::compile;
    use scalar_ad::ir::Ty;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 200..215 {
        let g = generate(seed);
        let n = g.n;
        let c = g.compile();
        let mut t = Tracer::with_registry(g.reg);
        let f = t.func_handle(g.f).unwrap();
        let arr = Ty::vec(n, Ty::Real);
        let h = t
            .define_fn("hess", &[arr.clone()], Ty::vec(n, arr), |t, ps| {
                hessian(t, &f, n, &ps[0]).map_err(BuildError::from)
            })
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let hc = compile(t.registry(), h.id).unwrap();
        let x = point(&mut rng, n);
        let out = hc.invoke(&[serde_json::json!(x)]).unwrap();
        let rows: Vec<Vec<f64>> = out.as_array().unwrap().iter().map(common::reals).collect();
        let norm = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let fd = fd_gradient(|p| c.pullback(p, 1.0)[i], &x);
            for j in 0..n {
                assert!((rows[i][j] - rows[j][i]).abs() <= 1e-9 * norm.max(1.0), "seed {seed}: {rows:?}");
                assert!(rel_err(rows[i][j], fd[j]) <= 1e-4, "seed {seed}: {rows:?} vs row {i} {fd:?}");
            }
        }
    }
}
