use microcrack::{grad_check, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn add_elementwise() {
    let g = Graph::new();
    let a = g.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let b = g.constant(vec![2], vec![3.0, 4.0]).unwrap();
    assert_eq!(a.add(b).unwrap().to_vec(), vec![4.0, 6.0]);
}

#[test]
fn shape_mismatch_names_the_op() {
    let g = Graph::new();
    let a = g.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let b = g.constant(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let msg = a.mul(b).unwrap_err().to_string();
    assert!(msg.contains("mul") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
}

#[test]
fn conv2d_sliding_dot_product() {
    // Cross-correlation, kernel tap k reads x[i + k - 1]:
    // out[0] = 1·0 + 2·1 + 3·1 = 5, out[1] = 1+2+3 = 6, out[2] = 1+2+0 = 3.
    let g = Graph::new();
    let x = g.constant(vec![1, 1, 3, 1], vec![1.0; 3]).unwrap();
    let w = g.constant(vec![1, 1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
    let y = x.conv2d(w, None, (1, 1), (1, 0)).unwrap();
    assert_eq!(y.shape(), vec![1, 1, 3, 1]);
    assert_eq!(y.to_vec(), vec![5.0, 6.0, 3.0]);

    // a flipped kernel gives the textbook convolution
    let wf = g.constant(vec![1, 1, 3, 1], vec![3.0, 2.0, 1.0]).unwrap();
    assert_eq!(x.conv2d(wf, None, (1, 1), (1, 0)).unwrap().to_vec(), vec![3.0, 6.0, 5.0]);
}

#[test]
fn max_pool_windows() {
    let g = Graph::new();
    let x = g.constant(vec![1, 1, 8, 1], (1..=8).map(f64::from).collect()).unwrap();
    let y = x.max_pool2d((4, 1)).unwrap();
    assert_eq!(y.to_vec(), vec![4.0, 8.0]);
}

#[test]
fn max_pool_ties_route_to_first() {
    let g = Graph::new();
    let x = g.variable(vec![1, 1, 4, 1], vec![2.0, 2.0, 1.0, 2.0]).unwrap();
    let y = x.max_pool2d((4, 1)).unwrap().sum();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn backward_of_sum_is_ones() {
    let g = Graph::new();
    let x = g.variable(vec![2, 3], vec![0.5; 6]).unwrap();
    let grads = g.backward(x.sum()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_of_sum_of_squares() {
    let g = Graph::new();
    let x = g.variable(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let grads = g.backward(x.mul(x).unwrap().sum()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn non_scalar_root_rejected() {
    let g = Graph::new();
    let x = g.variable(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!(g.backward(x.scale(2.0)).is_err());
}

#[test]
fn two_consumers_accumulate() {
    let g = Graph::new();
    let x = g.variable(vec![2], vec![1.5, -0.5]).unwrap();
    let a = x.scale(3.0);
    let b = x.exp();
    let root = a.add(b).unwrap().sum();
    let grads = g.backward(root).unwrap();
    let gx = grads.get(x).unwrap();
    for (gi, xi) in gx.iter().zip([1.5f64, -0.5]) {
        assert!((gi - (3.0 + xi.exp())).abs() < 1e-15);
    }
}

#[test]
fn constants_never_receive_gradients() {
    let g = Graph::new();
    let c = g.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let x = g.variable(vec![2], vec![3.0, 4.0]).unwrap();
    let grads = g.backward(c.mul(x).unwrap().sum()).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0]);
}

#[test]
fn reshape_is_gradient_transparent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = weights(&mut rng, 12);
    let x0 = rand_tensor(&mut rng, &[3, 4]);
    let g = Graph::new();
    let x = g.leaf(&x0.clone().with_grad());
    let direct = g.backward(x.mul_const(&w).unwrap().sum()).unwrap().get(x).unwrap().to_vec();
    let g2 = Graph::new();
    let x2 = g2.leaf(&x0.with_grad());
    let r = x2.reshape(&[2, 6]).unwrap().mul_const(&w).unwrap().sum();
    let via = g2.backward(r).unwrap().get(x2).unwrap().to_vec();
    assert_eq!(direct, via);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Graph::new();
        let x = g.leaf(&rand_tensor(&mut rng, &[2, 3, 6, 5]));
        let w = g.leaf(&rand_tensor(&mut rng, &[4, 3, 3, 1]));
        x.conv2d(w, None, (1, 1), (1, 0)).unwrap().gelu().max_pool2d((2, 1)).unwrap().to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (stride, pad, k) in [((1, 1), (1, 0), (3, 1)), ((2, 2), (0, 0), (2, 2)), ((2, 1), (1, 1), (3, 3))] {
        let a = rand_tensor(&mut rng, &[2, 3, 7, 6]);
        let kern = rand_tensor(&mut rng, &[4, 3, k.0, k.1]);
        let g = Graph::new();
        let av = g.leaf(&a);
        let kv = g.leaf(&kern);
        let ca = av.conv2d(kv, None, stride, pad).unwrap();
        let b = rand_tensor(&mut rng, &ca.shape());
        let bv = g.leaf(&b);
        let ctb = bv.conv_transpose2d(kv, None, stride, pad).unwrap();
        // output extent of the adjoint may drop trailing rows the conv never read
        let lhs: f64 = ca.to_vec().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let ct = ctb.to_vec();
        let cs = ctb.shape();
        let mut rhs = 0.0;
        for bi in 0..2 {
            for c in 0..3 {
                for h in 0..cs[2].min(7) {
                    for w in 0..cs[3].min(6) {
                        rhs += a.data()[((bi * 3 + c) * 7 + h) * 6 + w] * ct[((bi * 3 + c) * cs[2] + h) * cs[3] + w];
                    }
                }
            }
        }
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn every_differentiable_op_passes_grad_check() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 3, 4, 3]);
        let y = rand_tensor(&mut rng, &[2, 3, 4, 3]);
        let r = weights(&mut rng, 72);
        let check = |name: &str, err: f64| assert!(err < 1e-3, "{name} seed {seed}: {err}");

        check("add", grad_check(|_, v| Ok(v[0].add(v[1])?.mul_const(&r)?.sum()), &[x.clone(), y.clone()], 1e-5).unwrap());
        check("sub", grad_check(|_, v| Ok(v[0].sub(v[1])?.mul_const(&r)?.sum()), &[x.clone(), y.clone()], 1e-5).unwrap());
        check("mul", grad_check(|_, v| Ok(v[0].mul(v[1])?.mul_const(&r)?.sum()), &[x.clone(), y.clone()], 1e-5).unwrap());
        check(
            "div",
            grad_check(|_, v| Ok(v[0].div(v[1].exp())?.mul_const(&r)?.sum()), &[x.clone(), y.clone()], 1e-5).unwrap(),
        );
        check("exp", grad_check(|_, v| Ok(v[0].exp().mul_const(&r)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap());
        check("log", grad_check(|_, v| Ok(v[0].exp().add_scalar(0.1).ln().mul_const(&r)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap());
        check("erf", grad_check(|_, v| Ok(v[0].erf().mul_const(&r)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap());
        check("sigmoid", grad_check(|_, v| Ok(v[0].sigmoid().mul_const(&r)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap());
        check("powf", grad_check(|_, v| Ok(v[0].exp().powf(1.7).mul_const(&r)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap());
        check("mean", grad_check(|_, v| Ok(v[0].mul(v[0])?.mean()), std::slice::from_ref(&x), 1e-5).unwrap());
        check(
            "permute",
            grad_check(|_, v| Ok(v[0].permute(&[2, 0, 3, 1])?.mul_const(&r)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap(),
        );
        check(
            "softmax",
            grad_check(|_, v| Ok(v[0].softmax().mul_const(&r)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap(),
        );

        let a = rand_tensor(&mut rng, &[2, 3, 4]);
        let b = rand_tensor(&mut rng, &[2, 4, 5]);
        let rb = weights(&mut rng, 30);
        check("bmm", grad_check(|_, v| Ok(v[0].bmm(v[1])?.mul_const(&rb)?.sum()), &[a, b], 1e-5).unwrap());

        let w = rand_tensor(&mut rng, &[5, 3]);
        let bias = rand_tensor(&mut rng, &[5]);
        let xl = rand_tensor(&mut rng, &[4, 3]);
        let rl = weights(&mut rng, 20);
        check(
            "linear",
            grad_check(|_, v| Ok(v[0].linear(v[1], Some(v[2]))?.mul_const(&rl)?.sum()), &[xl, w, bias], 1e-5).unwrap(),
        );

        let gate = rand_tensor(&mut rng, &[2, 3]);
        check(
            "channel_gate",
            grad_check(|_, v| Ok(v[0].channel_gate(v[1])?.mul_const(&r)?.sum()), &[x.clone(), gate], 1e-5).unwrap(),
        );
        let sc = rand_tensor(&mut rng, &[3]);
        let sh = rand_tensor(&mut rng, &[3]);
        check(
            "channel_affine",
            grad_check(|_, v| Ok(v[0].channel_affine(v[1], v[2])?.mul_const(&r)?.sum()), &[x.clone(), sc, sh], 1e-5)
                .unwrap(),
        );
        let rp = weights(&mut rng, 6);
        check(
            "global_avg_pool",
            grad_check(|_, v| Ok(v[0].global_avg_pool()?.mul_const(&rp)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap(),
        );
        check(
            "clamp",
            grad_check(|_, v| Ok(v[0].clamp(-1.0, 1.0).mul_const(&r)?.sum()), std::slice::from_ref(&x), 1e-5).unwrap(),
        );
    }
}
