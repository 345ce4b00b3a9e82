mod common;

use bnnood::autodiff::{grad_check, Graph, NodeId, Tensor};
use bnnood::Result;
use proptest::prelude::*;
use rand::Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Gradient error of `Σ w ⊙ op(x)` for fixed random weights `w`.
fn op_error<F>(op: F, shape: Vec<usize>, x: &[f64], seed: u64) -> f64
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut r = common::rng(seed);
    let out_len = {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(shape.clone(), x.to_vec()).unwrap());
        let y = op(&mut g, a).unwrap();
        g.value(y).len()
    };
    let w: Vec<f64> = (0..out_len).map(|_| r.random_range(-1.0..1.0)).collect();
    let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(shape.clone(), theta.to_vec())?);
        let y = op(&mut g, a)?;
        let shape_y = g.value(y).shape().to_vec();
        let wn = g.constant(Tensor::new(shape_y, w.clone())?);
        let p = g.mul(y, wn)?;
        let s = g.sum(p);
        g.backward(s)?;
        Ok((g.scalar(s), g.grad(a)))
    };
    grad_check(f, x, EPS).unwrap()
}

fn uniform(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut r = common::rng(seed);
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

#[test]
fn elementwise_ops_on_many_seeds() {
    for seed in 0..100 {
        let x = uniform(seed, 12, -2.0, 2.0);
        let pos = uniform(seed + 1000, 12, 0.2, 5.0);
        let shape = vec![3, 4];
        assert!(op_error(|g, a| Ok(g.tanh(a)), shape.clone(), &x, seed) < TOL);
        assert!(op_error(|g, a| Ok(g.exp(a)), shape.clone(), &x, seed) < TOL);
        assert!(op_error(|g, a| g.log(a), shape.clone(), &pos, seed) < TOL);
        assert!(op_error(|g, a| g.lgamma(a), shape.clone(), &pos, seed) < TOL);
        assert!(op_error(|g, a| Ok(g.scale(a, -1.7)), shape.clone(), &x, seed) < TOL);
        assert!(op_error(|g, a| Ok(g.add_scalar(a, 0.3)), shape.clone(), &x, seed) < TOL);
        assert!(op_error(|g, a| Ok(g.log_softmax(a)), shape.clone(), &x, seed) < TOL);
        assert!(op_error(|g, a| Ok(g.mean(a)), shape.clone(), &x, seed) < TOL);
        assert!(op_error(|g, a| g.transpose(a), shape.clone(), &x, seed) < TOL);
        assert!(
            op_error(
                |g, a| g.index_select_row(a, &[3, 0, 2]),
                shape.clone(),
                &x,
                seed
            ) < TOL
        );
        assert!(op_error(|g, a| g.mul(a, a), shape.clone(), &x, seed) < TOL);
        assert!(op_error(|g, a| g.sub(a, a), shape.clone(), &x, seed) < TOL);
    }
}

#[test]
fn relu_away_from_the_kink() {
    for seed in 0..100 {
        let x: Vec<f64> = uniform(seed, 12, -2.0, 2.0)
            .into_iter()
            .map(|v: f64| {
                if v.abs() < 1e-3 {
                    v.signum() * 1e-3 + v
                } else {
                    v
                }
            })
            .collect();
        assert!(op_error(|g, a| Ok(g.relu(a)), vec![3, 4], &x, seed) < TOL);
    }
}

#[test]
fn binary_ops_with_constants() {
    for seed in 0..100 {
        let x = uniform(seed, 6, -2.0, 2.0);
        let b = uniform(seed + 7, 12, -2.0, 2.0);
        let row = uniform(seed + 9, 3, -2.0, 2.0);
        let bm = b.clone();
        assert!(
            op_error(
                move |g, a| {
                    let c = g.constant(Tensor::matrix(3, 4, bm.clone())?);
                    g.matmul(a, c)
                },
                vec![2, 3],
                &x,
                seed
            ) < TOL
        );
        assert!(
            op_error(
                move |g, a| {
                    let c = g.constant(Tensor::matrix(4, 2, b[..8].to_vec())?);
                    g.matmul(c, a)
                },
                vec![2, 3],
                &x,
                seed
            ) < TOL
        );
        assert!(
            op_error(
                move |g, a| {
                    let c = g.constant(Tensor::vector(row.clone()));
                    g.add(a, c)
                },
                vec![2, 3],
                &x,
                seed
            ) < TOL
        );
    }
}

#[test]
fn composite_network_like_expression() {
    for seed in 0..100 {
        let x = uniform(seed, 12, -1.5, 1.5);
        let err = op_error(
            |g, a| {
                let t = g.tanh(a);
                let tt = g.transpose(t)?;
                let m = g.matmul(t, tt)?;
                let ls = g.log_softmax(m);
                let e = g.exp(ls);
                let s = g.add_scalar(e, 0.5);
                g.lgamma(s)
            },
            vec![3, 4],
            &x,
            seed,
        );
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

proptest! {
    #[test]
    fn log_softmax_rows_normalise(v in prop::collection::vec(-50.0f64..50.0, 1..40), cols in 1usize..8) {
        let rows = v.len() / cols;
        prop_assume!(rows > 0);
        let data = v[..rows * cols].to_vec();
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(rows, cols, data).unwrap());
        let ls = g.log_softmax(a);
        for r in g.value(ls).values().chunks(cols) {
            let total: f64 = r.iter().map(|l| l.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|&l| l <= 0.0));
        }
    }

    #[test]
    fn log_softmax_survives_huge_logits(shift in -1e300f64..1e300) {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![shift, shift, shift, shift]));
        let ls = g.log_softmax(a);
        for &l in g.value(ls).values() {
            prop_assert!(((l + 4f64.ln()).abs()) < 1e-12);
        }
    }

    #[test]
    fn sum_of_products_gradient_is_the_other_factor(a in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        let b: Vec<f64> = a.iter().map(|v| v * 0.5 - 1.0).collect();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(a.clone()));
        let y = g.constant(Tensor::vector(b.clone()));
        let p = g.mul(x, y).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        prop_assert_eq!(g.grad(x), b);
    }
}
