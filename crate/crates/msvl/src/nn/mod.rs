//! Minimal deterministic tensor arithmetic with reverse-mode differentiation.
//!
//! Everything runs in 64-bit floats on a per-pass tape ([`Graph`]): enough
//! machinery for the residual view encoder, the channel-gating attention
//! module, the graph attention layer, and the classifier, verified against
//! central differences ([`finite_diff_grad`]) and trained with [`AdamState`].

mod gradcheck;
mod graph;
mod init;
mod optim;
mod tensor;

pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use graph::{Graph, NodeId};
pub use init::{he_uniform, xavier_uniform};
pub use optim::AdamState;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::util::{rng_from_seed, uniform_in};

    fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| uniform_in(&mut rng, lo, hi)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Random values bounded away from zero, so rectifier kinks stay out of
    /// reach of the finite-difference probes.
    fn random_kink_free(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len)
            .map(|_| {
                let magnitude = uniform_in(&mut rng, 0.1, 1.2);
                if uniform_in(&mut rng, 0.0, 1.0) < 0.5 {
                    -magnitude
                } else {
                    magnitude
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Checks d(scalar build(x))/dx against central differences for every
    /// input coordinate.
    fn gradcheck_input(
        build: &dyn Fn(&mut Graph, NodeId) -> crate::error::Result<NodeId>,
        x: &Tensor,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let xid = g.leaf(x.clone()).unwrap();
        let out = build(&mut g, xid).unwrap();
        let (_, grads) = g.eval_with_grads(out, &[xid]).unwrap();
        let mut f = |t: &Tensor| {
            let mut g = Graph::new();
            let xid = g.leaf(t.clone())?;
            let out = build(&mut g, xid)?;
            g.value(out).item()
        };
        let fd = finite_diff_grad(&mut f, x, 1e-5).unwrap();
        let err = max_rel_error(&grads[0], &fd, 1e-3);
        assert!(err <= tol, "max relative error {err} exceeds {tol}");
    }

    #[test]
    fn relu_backward_piecewise() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![-1.0, 1.0])).unwrap();
        let y = g.relu(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(g.value(y).data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_sums_to_one() {
        for seed in 0..10 {
            let mut g = Graph::new();
            let x = g.leaf(random_tensor(&[7], seed, -4.0, 4.0)).unwrap();
            let y = g.softmax(x).unwrap();
            let total: f64 = g.value(y).data().iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn grouped_conv_equals_independent_convolutions() {
        // conv2d with groups=3 on 3 channels vs three 1-channel convolutions.
        let x = random_tensor(&[3, 6, 6], 11, -1.0, 1.0);
        let w = random_tensor(&[3, 1, 3, 3], 12, -1.0, 1.0);
        let b = random_tensor(&[3], 13, -0.5, 0.5);

        let mut g = Graph::new();
        let xid = g.leaf(x.clone()).unwrap();
        let wid = g.leaf(w.clone()).unwrap();
        let bid = g.leaf(b.clone()).unwrap();
        let grouped = g.conv2d(xid, wid, bid, 1, 1, 3).unwrap();
        let grouped_value = g.value(grouped).clone();

        let mut per_channel = Vec::new();
        for c in 0..3 {
            let mut gc = Graph::new();
            let xc = Tensor::new(vec![1, 6, 6], x.data()[c * 36..(c + 1) * 36].to_vec()).unwrap();
            let wc = Tensor::new(vec![1, 1, 3, 3], w.data()[c * 9..(c + 1) * 9].to_vec()).unwrap();
            let bc = Tensor::vector(vec![b.data()[c]]);
            let xid = gc.leaf(xc).unwrap();
            let wid = gc.leaf(wc).unwrap();
            let bid = gc.leaf(bc).unwrap();
            let out = gc.conv2d(xid, wid, bid, 1, 1, 1).unwrap();
            per_channel.extend_from_slice(gc.value(out).data());
        }
        assert_eq!(grouped_value.data(), per_channel.as_slice());
    }

    #[test]
    fn quadratic_gradient() {
        // f(x) = x^T x at (1, 2) has gradient (2, 4).
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let out = g.sum(sq).unwrap();
        let (value, grads) = g.eval_with_grads(out, &[x]).unwrap();
        assert_eq!(value, 5.0);
        assert_eq!(grads[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_graph_has_zero_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let c = g.leaf(Tensor::scalar(3.0)).unwrap();
        let out = g.scale(c, 2.0).unwrap();
        let (value, grads) = g.eval_with_grads(out, &[x]).unwrap();
        assert_eq!(value, 6.0);
        assert_eq!(grads[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let y = g.relu(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn non_finite_intermediate_names_the_node() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(8e307)).unwrap();
        let doubled = g.add(x, x).unwrap(); // finite
        let err = g.add(doubled, doubled).unwrap_err(); // overflows to inf
        match err {
            Error::NumericFault(msg) => {
                assert!(msg.contains("add"), "message: {msg}");
                assert!(msg.contains("node #"), "message: {msg}");
            }
            other => panic!("expected numeric fault, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        match g.add(a, b).unwrap_err() {
            Error::InvalidInput(msg) => {
                assert!(msg.contains("[2]") && msg.contains("[3]"), "message: {msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    // -- per-primitive gradient checks, tolerance 1e-6 ----------------------

    #[test]
    fn gradcheck_matmul() {
        let x = random_tensor(&[3, 4], 21, -1.0, 1.0);
        let other = random_tensor(&[4, 5], 22, -1.0, 1.0);
        gradcheck_input(
            &move |g, xid| {
                let o = g.leaf(other.clone())?;
                let y = g.matmul(xid, o)?;
                g.sum(y)
            },
            &x,
            1e-6,
        );
        // And with respect to the right operand.
        let left = random_tensor(&[3, 4], 23, -1.0, 1.0);
        let y = random_tensor(&[4, 5], 24, -1.0, 1.0);
        gradcheck_input(
            &move |g, yid| {
                let l = g.leaf(left.clone())?;
                let z = g.matmul(l, yid)?;
                g.sum(z)
            },
            &y,
            1e-6,
        );
    }

    #[test]
    fn gradcheck_fully_connected() {
        let w = random_tensor(&[6, 4], 25, -1.0, 1.0);
        let b = random_tensor(&[4], 26, -0.5, 0.5);
        let x = random_tensor(&[6], 27, -1.0, 1.0);
        // d/dx
        let (wc, bc) = (w.clone(), b.clone());
        gradcheck_input(
            &move |g, xid| {
                let wid = g.leaf(wc.clone())?;
                let bid = g.leaf(bc.clone())?;
                let y = g.fully_connected(xid, wid, Some(bid))?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &x,
            1e-6,
        );
        // d/dw
        let (xc, bc) = (x.clone(), b.clone());
        gradcheck_input(
            &move |g, wid| {
                let xid = g.leaf(xc.clone())?;
                let bid = g.leaf(bc.clone())?;
                let y = g.fully_connected(xid, wid, Some(bid))?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &w,
            1e-6,
        );
        // d/db
        let (xc, wc) = (x.clone(), w.clone());
        gradcheck_input(
            &move |g, bid| {
                let xid = g.leaf(xc.clone())?;
                let wid = g.leaf(wc.clone())?;
                let y = g.fully_connected(xid, wid, Some(bid))?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &b,
            1e-6,
        );
    }

    #[test]
    fn gradcheck_conv2d_stride_pad_groups() {
        let x = random_tensor(&[4, 5, 5], 31, -1.0, 1.0);
        let w = random_tensor(&[6, 2, 3, 3], 32, -1.0, 1.0);
        let b = random_tensor(&[6], 33, -0.5, 0.5);
        // d/dx with stride 2, pad 1, groups 2
        let (wc, bc) = (w.clone(), b.clone());
        gradcheck_input(
            &move |g, xid| {
                let wid = g.leaf(wc.clone())?;
                let bid = g.leaf(bc.clone())?;
                let y = g.conv2d(xid, wid, bid, 2, 1, 2)?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &x,
            1e-6,
        );
        // d/dw
        let (xc, bc) = (x.clone(), b.clone());
        gradcheck_input(
            &move |g, wid| {
                let xid = g.leaf(xc.clone())?;
                let bid = g.leaf(bc.clone())?;
                let y = g.conv2d(xid, wid, bid, 2, 1, 2)?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &w,
            1e-6,
        );
        // d/db
        let (xc, wc) = (x.clone(), w.clone());
        gradcheck_input(
            &move |g, bid| {
                let xid = g.leaf(xc.clone())?;
                let wid = g.leaf(wc.clone())?;
                let y = g.conv2d(xid, wid, bid, 2, 1, 2)?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &b,
            1e-6,
        );
    }

    #[test]
    fn gradcheck_activations() {
        let x = random_kink_free(&[9], 41);
        gradcheck_input(
            &|g, xid| {
                let y = g.relu(xid)?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &x,
            1e-6,
        );
        gradcheck_input(
            &|g, xid| {
                let y = g.leaky_relu(xid, 0.2)?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &x,
            1e-6,
        );
        gradcheck_input(
            &|g, xid| {
                let y = g.sigmoid(xid)?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &random_tensor(&[9], 42, -2.0, 2.0),
            1e-6,
        );
    }

    #[test]
    fn gradcheck_softmax_and_cross_entropy() {
        let x = random_tensor(&[6], 43, -2.0, 2.0);
        gradcheck_input(
            &|g, xid| {
                let s = g.softmax(xid)?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            },
            &x,
            1e-6,
        );
        gradcheck_input(&|g, xid| g.cross_entropy_loss(xid, 2), &x, 1e-6);
    }

    #[test]
    fn gradcheck_pool_concat_stack_and_friends() {
        let x = random_tensor(&[3, 4, 4], 44, -1.0, 1.0);
        gradcheck_input(
            &|g, xid| {
                let p = g.global_average_pool(xid)?;
                let sq = g.mul(p, p)?;
                g.sum(sq)
            },
            &x,
            1e-6,
        );

        let v = random_tensor(&[5], 45, -1.0, 1.0);
        gradcheck_input(
            &|g, xid| {
                // index / stack / scalar_mul / concat / mean_vectors in one graph
                let s0 = g.index(xid, 0)?;
                let s1 = g.index(xid, 3)?;
                let stacked = g.stack(&[s0, s1])?;
                let soft = g.softmax(stacked)?;
                let w0 = g.index(soft, 0)?;
                let scaled = g.scalar_mul(w0, xid)?;
                let joined = g.concat(&[scaled, xid])?;
                let halved = g.scale(joined, 0.5)?;
                let sq = g.mul(halved, halved)?;
                g.sum(sq)
            },
            &v,
            1e-6,
        );

        let m = random_tensor(&[4], 46, -1.0, 1.0);
        gradcheck_input(
            &|g, xid| {
                let doubled = g.scale(xid, 2.0)?;
                let mean = g.mean_vectors(&[xid, doubled])?;
                let sq = g.mul(mean, mean)?;
                g.sum(sq)
            },
            &m,
            1e-6,
        );
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        // Three-layer perceptron with all weights and biases flattened into
        // one parameter vector, so a single gradcheck covers every layer.
        // Layers are spelled out with scalar index/mul/stack/sum ops because
        // the flattened parameters arrive as a rank-1 node.
        let dims = [5usize, 8, 6, 1];
        let mut sizes = Vec::new();
        for i in 0..3 {
            sizes.push(dims[i] * dims[i + 1]);
            sizes.push(dims[i + 1]);
        }
        let total: usize = sizes.iter().sum();
        let theta = random_tensor(&[total], 47, -0.8, 0.8);
        let input = random_tensor(&[5], 48, -1.0, 1.0);

        let build = move |g: &mut Graph, theta_id: NodeId| -> crate::error::Result<NodeId> {
            let mut offsets = Vec::with_capacity(sizes.len());
            let mut offset = 0;
            for &size in &sizes {
                offsets.push(offset);
                offset += size;
            }
            let mut activations: Vec<NodeId> = input
                .data()
                .iter()
                .map(|&c| g.leaf(Tensor::scalar(c)))
                .collect::<crate::error::Result<_>>()?;
            for layer in 0..3 {
                let w_off = offsets[2 * layer];
                let b_off = offsets[2 * layer + 1];
                let (fan_in, fan_out) = (dims[layer], dims[layer + 1]);
                let mut next = Vec::with_capacity(fan_out);
                for o in 0..fan_out {
                    let mut terms = Vec::with_capacity(fan_in + 1);
                    for (i, &x) in activations.iter().enumerate() {
                        let wio = g.index(theta_id, w_off + i * fan_out + o)?;
                        terms.push(g.mul(wio, x)?);
                    }
                    terms.push(g.index(theta_id, b_off + o)?);
                    let stacked = g.stack(&terms)?;
                    let mut pre = g.sum(stacked)?;
                    if layer < 2 {
                        pre = g.sigmoid(pre)?;
                    }
                    next.push(pre);
                }
                activations = next;
            }
            Ok(activations[0])
        };
        gradcheck_input(&build, &theta, 1e-6);
    }

    #[test]
    fn forward_and_backward_are_bitwise_reproducible() {
        let run = || {
            let mut g = Graph::new();
            let x = g.leaf(random_tensor(&[3, 8, 8], 51, -1.0, 1.0)).unwrap();
            let w = g.leaf(random_tensor(&[6, 1, 3, 3], 52, -1.0, 1.0)).unwrap();
            let b = g.leaf(random_tensor(&[6], 53, -0.5, 0.5)).unwrap();
            let c = g.conv2d(x, w, b, 1, 1, 3).unwrap();
            let r = g.relu(c).unwrap();
            let p = g.global_average_pool(r).unwrap();
            let out = g.sum(p).unwrap();
            let (value, grads) = g.eval_with_grads(out, &[w, b]).unwrap();
            (value.to_bits(), grads[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kink_margin_reports_rectifier_inputs() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![-0.5, 0.001, 2.0])).unwrap();
        let _ = g.relu(x).unwrap();
        assert_eq!(g.rectifier_kink_margin(), 0.001);
        assert_eq!(g.rectifier_signs(), vec![false, true, true]);
    }
}
