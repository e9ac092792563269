//! Every differentiable op against central finite differences at f64.

use std::sync::Arc;

use molforge_tensor::{rng, Graph, Tensor, TensorError, Var};
use proptest::prelude::*;

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>;

const H: f64 = 1e-5;

/// Loss `sum(out * w)` with fixed pseudo-random weights `w`, so ops whose
/// outputs have constant sums (softmax, layernorm) still get a signal.
fn loss_of(build: &Build, inputs: &[Tensor<f64>], seed: u64) -> (Graph<f64>, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let shape = g.shape(out).to_vec();
    let w = g.constant(rng::normal_tensor(&mut rng::seeded(seed), &shape, 1.0));
    let y = g.mul(out, w).unwrap();
    let loss = g.sum(y);
    (g, vars, loss)
}

fn max_rel_error(build: &Build, inputs: Vec<Tensor<f64>>) -> f64 {
    let (g, vars, loss) = loss_of(build, &inputs, 99);
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.tensor(vars[k]);
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut shifted = inputs.clone();
                shifted[k].data_mut()[i] += delta;
                let (g, _, loss) = loss_of(build, &shifted, 99);
                g.value(loss).data()[0]
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    rng::normal_tensor(&mut rng::seeded(seed), shape, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul(r in 1usize..5, k in 1usize..5, n in 1usize..5, s in 0u64..1000) {
        let b: &Build = &|g, v| g.matmul(v[0], v[1]);
        prop_assert!(max_rel_error(b, vec![random(&[2, r, k], s), random(&[k, n], s + 1)]) < 1e-4);
    }

    #[test]
    fn bmm_both_layouts(m in 1usize..4, k in 1usize..4, n in 1usize..4, s in 0u64..1000) {
        let plain: &Build = &|g, v| g.bmm(v[0], v[1], false);
        prop_assert!(max_rel_error(plain, vec![random(&[2, m, k], s), random(&[2, k, n], s + 1)]) < 1e-4);
        let trans: &Build = &|g, v| g.bmm(v[0], v[1], true);
        prop_assert!(max_rel_error(trans, vec![random(&[2, m, k], s), random(&[2, n, k], s + 1)]) < 1e-4);
    }

    #[test]
    fn elementwise(n in 1usize..8, s in 0u64..1000) {
        let add: &Build = &|g, v| g.add(v[0], v[1]);
        let mul: &Build = &|g, v| g.mul(v[0], v[1]);
        let scale: &Build = &|g, v| Ok(g.scale(v[0], -1.7));
        let relu: &Build = &|g, v| Ok(g.relu(v[0]));
        let bias: &Build = &|g, v| g.add_bias(v[0], v[1]);
        let inputs = vec![random(&[3, n], s), random(&[3, n], s + 1)];
        for b in [add, mul] {
            prop_assert!(max_rel_error(b, inputs.clone()) < 1e-4);
        }
        prop_assert!(max_rel_error(scale, vec![inputs[0].clone()]) < 1e-4);
        prop_assert!(max_rel_error(relu, vec![inputs[0].clone()]) < 1e-4);
        prop_assert!(max_rel_error(bias, vec![inputs[0].clone(), random(&[n], s + 2)]) < 1e-4);
    }

    #[test]
    fn shape_ops(a in 1usize..4, b in 1usize..4, c in 1usize..4, s in 0u64..1000) {
        let perm: &Build = &|g, v| g.permute(v[0], &[1, 2, 0]);
        let resh: &Build = &|g, v| {
            let n = g.value(v[0]).len();
            g.reshape(v[0], &[n])
        };
        let cat: &Build = &|g, v| g.concat_last_axis(&[v[0], v[1]]);
        let x = random(&[a, b, c], s);
        prop_assert!(max_rel_error(perm, vec![x.clone()]) < 1e-4);
        prop_assert!(max_rel_error(resh, vec![x.clone()]) < 1e-4);
        prop_assert!(max_rel_error(cat, vec![x, random(&[a, b, c + 1], s + 1)]) < 1e-4);
    }

    #[test]
    fn normalizations(w in 2usize..7, s in 0u64..1000) {
        let soft: &Build = &|g, v| Ok(g.softmax_last_axis(v[0]));
        let masked: &Build = &|g, v| {
            let w = g.value(v[0]).last_dim();
            let mask: Arc<[bool]> = (0..w).map(|i| i % 2 == 1).collect::<Vec<_>>().into();
            let m = g.masked_fill(v[0], mask)?;
            Ok(g.softmax_last_axis(m))
        };
        let ln: &Build = &|g, v| g.layernorm_last_axis(v[0], v[1], v[2]);
        prop_assert!(max_rel_error(soft, vec![random(&[3, w], s)]) < 1e-4);
        prop_assert!(max_rel_error(masked, vec![random(&[3, w], s)]) < 1e-4);
        prop_assert!(max_rel_error(ln, vec![random(&[3, w], s), random(&[w], s + 1), random(&[w], s + 2)]) < 1e-4);
    }

    #[test]
    fn lookup_and_loss(v in 2usize..6, s in 0u64..1000) {
        let emb: &Build = &|g, x| g.embedding_lookup(x[0], &[1, 0, 1]);
        prop_assert!(max_rel_error(emb, vec![random(&[v, 3], s)]) < 1e-4);
        let ce: &Build = &|g, x| {
            let v = g.value(x[0]).last_dim();
            g.cross_entropy_logits(x[0], &[0, v - 1, 1], &[true, true, false])
        };
        prop_assert!(max_rel_error(ce, vec![random(&[3, v], s)]) < 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one(w in 1usize..30, s in 0u64..1000) {
        let mut g = Graph::new();
        let x = g.param(random(&[4, w], s));
        let p = g.softmax_last_axis(x);
        for row in g.value(p).data().chunks(w) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
