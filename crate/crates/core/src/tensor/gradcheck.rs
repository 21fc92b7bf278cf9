//! Central finite-difference verification of reverse-mode gradients.
//! Runs in f64; the builder closure must be deterministic (fixed dropout
//! seed) so repeated forwards see the same function.

use crate::tensor::graph::{Graph, TensorId};
use crate::tensor::params::ParamSet;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

impl GradCheckReport {
    pub fn within(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compares analytic gradients against (f(x+h) - f(x-h)) / 2h for up to
/// `max_entries_per_param` entries of every parameter.
pub fn finite_difference_check<F>(
    ps: &mut ParamSet<f64>,
    mut build: F,
    h: f64,
    max_entries_per_param: usize,
    sample_seed: u64,
) -> GradCheckReport
where
    F: FnMut(&ParamSet<f64>) -> (Graph<f64>, TensorId),
{
    use rand::Rng;

    ps.zero_grads();
    let (mut g, loss) = build(ps);
    g.backward(loss).expect("gradcheck backward");
    g.flush_grads(ps);
    let analytic: Vec<Vec<f64>> = ps.ids().map(|id| ps.grad_of(id).to_vec()).collect();

    let mut rng = crate::rng::stream(sample_seed, "gradcheck", 0);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let ids: Vec<_> = ps.ids().collect();
    for (pi, id) in ids.iter().enumerate() {
        let n = ps.data(*id).len();
        let indices: Vec<usize> = if n <= max_entries_per_param {
            (0..n).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < max_entries_per_param {
                picked.insert(rng.random_range(0..n));
            }
            picked.into_iter().collect()
        };
        for j in indices {
            let orig = ps.data(*id)[j];
            ps.data_mut(*id)[j] = orig + h;
            let (gp, lp) = build(ps);
            let lplus = gp.value(lp)[0];
            ps.data_mut(*id)[j] = orig - h;
            let (gm, lm) = build(ps);
            let lminus = gm.value(lm)[0];
            ps.data_mut(*id)[j] = orig;
            let fd = (lplus - lminus) / (2.0 * h);
            let an = analytic[pi][j];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{}[{}] analytic {an} fd {fd}", ps.name(*id), j);
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::graph::causal_mask;
    use crate::tensor::params::Init;
    use rand::Rng;
    use std::rc::Rc;

    const TOL: f64 = 1e-4;
    const H: f64 = 1e-5;

    /// Loss = sum(out * W) with a fixed random weight so gradients are not
    /// uniform across positions.
    fn weighted_loss(
        g: &mut Graph<f64>,
        out: TensorId,
        weight_seed: u64,
    ) -> TensorId {
        let (r, c) = g.shape(out);
        let mut rng = stream(weight_seed, "loss-weight", 0);
        let w: Vec<f64> = (0..r * c).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let wt = g.constant(r, c, w);
        let prod = g.mul_elem(out, wt).unwrap();
        g.sum(prod)
    }

    fn check_op(
        name: &str,
        shapes: &[(usize, usize)],
        apply: impl Fn(&mut Graph<f64>, &[TensorId]) -> TensorId,
    ) {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let mut rng = stream(31, "gradcheck-init", 0);
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                ps.add(&format!("p{i}"), r, c, Init::TruncNormal { std: 0.5 }, &mut rng)
            })
            .collect();
        let report = finite_difference_check(
            &mut ps,
            |ps| {
                let mut g = Graph::new(7, true);
                let leased: Vec<_> = ids.iter().map(|&id| g.param(ps, id)).collect();
                let out = apply(&mut g, &leased);
                let loss = weighted_loss(&mut g, out, 3);
                (g, loss)
            },
            H,
            12,
            11,
        );
        assert!(
            report.within(TOL),
            "{name}: max rel err {} at {}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn grad_matmul_all_flag_combos() {
        check_op("mm", &[(3, 4), (4, 2)], |g, t| g.matmul_t(t[0], t[1], false, false).unwrap());
        check_op("mm_ta", &[(4, 3), (4, 2)], |g, t| g.matmul_t(t[0], t[1], true, false).unwrap());
        check_op("mm_tb", &[(3, 4), (2, 4)], |g, t| g.matmul_t(t[0], t[1], false, true).unwrap());
        check_op("mm_tt", &[(4, 3), (2, 4)], |g, t| g.matmul_t(t[0], t[1], true, true).unwrap());
    }

    #[test]
    fn grad_elementwise() {
        check_op("add", &[(3, 3), (3, 3)], |g, t| g.add(t[0], t[1]).unwrap());
        check_op("sub", &[(3, 3), (3, 3)], |g, t| g.sub(t[0], t[1]).unwrap());
        check_op("mul", &[(3, 3), (3, 3)], |g, t| g.mul_elem(t[0], t[1]).unwrap());
        check_op("scale", &[(3, 3)], |g, t| g.scale(t[0], -1.7));
        check_op("add_row", &[(4, 3), (1, 3)], |g, t| g.add_row(t[0], t[1]).unwrap());
    }

    #[test]
    fn grad_gelu() {
        check_op("gelu", &[(4, 4)], |g, t| g.gelu(t[0]));
    }

    #[test]
    fn grad_sigmoid() {
        check_op("sigmoid", &[(4, 4)], |g, t| g.sigmoid(t[0]));
    }

    #[test]
    fn grad_masked_softmax() {
        check_op("softmax_causal", &[(4, 4)], |g, t| {
            g.masked_softmax_rows(t[0], causal_mask(4)).unwrap()
        });
        check_op("softmax_full", &[(3, 5)], |g, t| {
            g.masked_softmax_rows(t[0], Rc::new(vec![true; 15])).unwrap()
        });
    }

    #[test]
    fn grad_layer_norm() {
        check_op("layer_norm", &[(3, 6), (1, 6), (1, 6)], |g, t| {
            g.layer_norm(t[0], t[1], t[2], 1e-5).unwrap()
        });
    }

    #[test]
    fn grad_dropout_with_fixed_seed() {
        // The builder reseeds the graph identically each call, so the mask
        // is the same function across finite-difference evaluations.
        check_op("dropout", &[(5, 5)], |g, t| g.dropout(t[0], 0.4));
    }

    #[test]
    fn grad_shape_ops() {
        check_op("concat_rows", &[(2, 3), (4, 3)], |g, t| {
            g.concat_rows(&[t[0], t[1]]).unwrap()
        });
        check_op("concat_cols", &[(3, 2), (3, 5)], |g, t| {
            g.concat_cols(&[t[0], t[1]]).unwrap()
        });
        check_op("slice_cols", &[(3, 6)], |g, t| g.slice_cols(t[0], 1, 3).unwrap());
        check_op("gather_rows", &[(4, 3)], |g, t| {
            g.gather_rows(t[0], Rc::new(vec![2, 0, 2, 3])).unwrap()
        });
        check_op("transpose", &[(3, 5)], |g, t| g.transpose(t[0]));
        check_op("reshape", &[(3, 4)], |g, t| g.reshape(t[0], 2, 6).unwrap());
        check_op("sum", &[(3, 4)], |g, t| g.sum(t[0]));
    }

    #[test]
    fn grad_small_composite_network() {
        // Two-layer MLP with layer norm and a masked softmax head mixed in,
        // as a denser integration point than single ops.
        use crate::tensor::nn::{LayerNorm, Linear};
        let mut ps: ParamSet<f64> = ParamSet::new();
        let mut rng = stream(41, "comp", 0);
        let l1 = Linear::new(&mut ps, &mut rng, "l1", 6, 8, true);
        let ln = LayerNorm::new(&mut ps, &mut rng, "ln", 8);
        let l2 = Linear::new(&mut ps, &mut rng, "l2", 8, 4, true);
        let xdata: Vec<f64> = (0..5 * 6).map(|_| rng.random::<f64>() - 0.5).collect();
        let report = finite_difference_check(
            &mut ps,
            |ps| {
                let mut g = Graph::new(9, false);
                let x = g.constant(5, 6, xdata.clone());
                let h = l1.forward(&mut g, ps, x).unwrap();
                let h = g.gelu(h);
                let h = ln.forward(&mut g, ps, h).unwrap();
                let out = l2.forward(&mut g, ps, h).unwrap();
                let probs = g
                    .masked_softmax_rows(out, Rc::new(vec![true; 20]))
                    .unwrap();
                let loss = weighted_loss(&mut g, probs, 13);
                (g, loss)
            },
            H,
            10,
            17,
        );
        assert!(
            report.within(TOL),
            "composite: {} at {}",
            report.max_rel_err,
            report.worst
        );
    }
}
