use drama::params::{check_param_grads, Graph, ParamStore};
use drama::rng::Seed;
use drama::ssd::{
    materialize_m, ssd_forward, ssd_linear_chunked, ssd_quadratic, ssd_scan, ssm_recurrence_reference, MambaBlock,
    MambaBlockConfig, SsdMode, SsdParams,
};
use drama::tensor::gradcheck::{check_op, relative_error};
use drama::tensor::kernels::matmul_naive;
use drama::tensor::Tensor;
use proptest::prelude::*;

fn rel(a: &Tensor, b: &Tensor) -> f64 {
    relative_error(a.data(), b.data())
}

fn random_x(len: usize, width: usize, seed: u64) -> Tensor {
    Tensor::randn(&[len, width], 1.0, Seed(seed))
}

fn params_with(a: f64, delta: f64, b: Tensor, c: Tensor) -> SsdParams {
    let len = b.shape()[0];
    SsdParams::new(vec![a], Tensor::full(&[len, 1], delta), b, c).unwrap()
}

#[test]
fn memoryless_when_decay_vanishes() {
    let (len, n, p) = (6, 3, 2);
    let b = Tensor::randn(&[len, n], 1.0, Seed(1));
    let c = Tensor::randn(&[len, n], 1.0, Seed(2));
    let x = random_x(len, p, 3);
    let delta = 0.7;
    // exp(0.7·−1e6) underflows to exactly 0
    let params = params_with(-1e6, delta, b.clone(), c.clone());
    let y = ssm_recurrence_reference(&params, &x).unwrap();
    for t in 0..len {
        let cb: f64 = (0..n).map(|k| c.data()[t * n + k] * delta * b.data()[t * n + k]).sum();
        for q in 0..p {
            assert!((y.data()[t * p + q] - cb * x.data()[t * p + q]).abs() < 1e-12);
        }
    }
    let m = materialize_m(&params, 0).unwrap();
    for j in 0..len {
        for i in 0..len {
            if i != j {
                assert_eq!(m.data()[j * len + i], 0.0);
            }
        }
    }
}

#[test]
fn prefix_sum_case() {
    let len = 9;
    let ones = Tensor::full(&[len, 1], 1.0);
    let params = params_with(0.0, 1.0, ones.clone(), ones);
    let x = random_x(len, 1, 4);
    let y = ssm_recurrence_reference(&params, &x).unwrap();
    let mut acc = 0.0;
    for t in 0..len {
        acc += x.data()[t];
        assert!((y.data()[t] - acc).abs() < 1e-12);
    }
}

#[test]
fn recurrence_equals_matrix_form() {
    let (len, n, p) = (16, 4, 3);
    let params = SsdParams::random(len, 1, n, Seed(5));
    let x = random_x(len, p, 6);
    let m = materialize_m(&params, 0).unwrap();
    let mx = matmul_naive(len, len, p, m.data(), x.data());
    let y = ssm_recurrence_reference(&params, &x).unwrap();
    assert!(relative_error(y.data(), &mx) < 1e-12);
    for j in 0..len {
        for i in j + 1..len {
            assert_eq!(m.data()[j * len + i], 0.0);
        }
    }
}

#[test]
fn single_step_matrix() {
    let params = SsdParams::random(1, 1, 5, Seed(7));
    let m = materialize_m(&params, 0).unwrap();
    let (b, c, d) = (params.b().data(), params.c().data(), params.delta().data()[0]);
    let want: f64 = (0..5).map(|k| c[k] * d * b[k]).sum();
    assert_eq!(m.shape(), &[1, 1]);
    assert!((m.data()[0] - want).abs() < 1e-14);
}

#[test]
fn quadratic_matches_recurrence_for_all_lengths() {
    for len in 1..=64 {
        let params = SsdParams::random(len, 2, 4, Seed(100 + len as u64));
        let x = random_x(len, 6, 200 + len as u64);
        let r = ssm_recurrence_reference(&params, &x).unwrap();
        let q = ssd_quadratic(&params, &x).unwrap();
        assert!(rel(&q, &r) <= 1e-10, "T={len}: {}", rel(&q, &r));
    }
}

#[test]
fn unit_decay_is_linear_attention() {
    let (len, n, p) = (12, 3, 2);
    let b = Tensor::randn(&[len, n], 1.0, Seed(8));
    let c = Tensor::randn(&[len, n], 1.0, Seed(9));
    let x = random_x(len, p, 10);
    let params = params_with(0.0, 1.0, b.clone(), c.clone());
    let y = ssd_quadratic(&params, &x).unwrap();
    for t in 0..len {
        for q in 0..p {
            let mut want = 0.0;
            for s in 0..=t {
                let cb: f64 = (0..n).map(|k| c.data()[t * n + k] * b.data()[s * n + k]).sum();
                want += cb * x.data()[s * p + q];
            }
            assert!((y.data()[t * p + q] - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn chunked_degenerate_and_ragged_chunks() {
    let len = 37;
    let params = SsdParams::random(len, 3, 5, Seed(11));
    let x = random_x(len, 6, 12);
    let r = ssm_recurrence_reference(&params, &x).unwrap();
    let q = ssd_quadratic(&params, &x).unwrap();
    assert!(rel(&ssd_linear_chunked(&params, &x, len).unwrap(), &q) <= 1e-12);
    assert!(rel(&ssd_linear_chunked(&params, &x, 1).unwrap(), &r) <= 1e-10);
    for chunk in [2, 3, 8] {
        let c = ssd_linear_chunked(&params, &x, chunk).unwrap();
        assert!(rel(&c, &q) <= 1e-10, "Q={chunk}");
    }
    assert!(ssd_linear_chunked(&params, &x, 0).is_err());
}

#[test]
fn every_mode_is_causal() {
    let len = 20;
    let params = SsdParams::random(len, 2, 3, Seed(13));
    let x = random_x(len, 4, 14);
    for mode in [SsdMode::Recurrence, SsdMode::Quadratic, SsdMode::Chunked(3), SsdMode::Chunked(8)] {
        let y = ssd_forward(&params, &x, mode).unwrap();
        for s in [0, 7, 19] {
            let mut xp = x.clone();
            for v in &mut xp.data_mut()[s * 4..] {
                *v += 3.0;
            }
            let yp = ssd_forward(&params, &xp, mode).unwrap();
            assert_eq!(&y.data()[..s * 4], &yp.data()[..s * 4], "{mode:?} s={s}");
            assert_ne!(&y.data()[s * 4..], &yp.data()[s * 4..]);
        }
    }
}

#[test]
fn impulse_response_decays() {
    let (len, n) = (30, 4);
    let mut rng = Seed(15).rng();
    let bv = rng.vec_normal(n, 1.0);
    let cv = rng.vec_normal(n, 1.0);
    let b = Tensor::new(vec![len, n], bv.iter().cycle().take(len * n).copied().collect()).unwrap();
    let c = Tensor::new(vec![len, n], cv.iter().cycle().take(len * n).copied().collect()).unwrap();
    let delta = Tensor::new(vec![len, 1], rng.vec_uniform(len, 0.05, 1.0)).unwrap();
    let params = SsdParams::new(vec![-0.7], delta, b, c).unwrap();
    let mut x = Tensor::zeros(&[len, 1]);
    x.data_mut()[0] = 1.0;
    for mode in [SsdMode::Recurrence, SsdMode::Quadratic, SsdMode::Chunked(4)] {
        let y = ssd_forward(&params, &x, mode).unwrap();
        for t in 1..len {
            assert!(y.data()[t].abs() <= y.data()[t - 1].abs() + 1e-15, "{mode:?} t={t}");
        }
    }
}

fn scan_inputs(len: usize, heads: usize, p: usize, n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = Seed(seed).rng();
    vec![
        Tensor::new(vec![len, heads * p], rng.vec_normal(len * heads * p, 1.0)).unwrap(),
        Tensor::new(vec![len, heads], rng.vec_uniform(len * heads, 0.1, 0.9)).unwrap(),
        Tensor::new(vec![heads], rng.vec_uniform(heads, -1.5, -0.2)).unwrap(),
        Tensor::new(vec![len, n], rng.vec_normal(len * n, 1.0)).unwrap(),
        Tensor::new(vec![len, n], rng.vec_normal(len * n, 1.0)).unwrap(),
    ]
}

#[test]
fn scan_gradients_match_finite_differences() {
    let inputs = scan_inputs(11, 2, 2, 3, 16);
    for mode in
        [SsdMode::Recurrence, SsdMode::Quadratic, SsdMode::Chunked(1), SsdMode::Chunked(4), SsdMode::Chunked(11)]
    {
        let err = check_op(&inputs, |v| ssd_scan(&v[0], &v[1], &v[2], &v[3], &v[4], mode).unwrap(), Seed(17));
        assert!(err <= 1e-6, "{mode:?}: {err}");
    }
}

#[test]
fn chunked_backward_matches_quadratic_backward() {
    use drama::tensor::Tape;
    let inputs = scan_inputs(29, 3, 2, 4, 18);
    let grads = |mode| {
        let tape = Tape::new();
        let v: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        let y = ssd_scan(&v[0], &v[1], &v[2], &v[3], &v[4], mode).unwrap();
        let w = tape.constant(Tensor::randn(&y.shape(), 1.0, Seed(19)));
        y.mul(&w).unwrap().sum().backward().unwrap();
        v.iter().map(|x| x.grad().unwrap()).collect::<Vec<_>>()
    };
    let q = grads(SsdMode::Quadratic);
    for chunk in [1, 2, 3, 8, 16, 29] {
        let c = grads(SsdMode::Chunked(chunk));
        for (a, b) in c.iter().zip(&q) {
            assert!(relative_error(a, b) <= 1e-8, "Q={chunk}");
        }
    }
    let r = grads(SsdMode::Recurrence);
    for (a, b) in r.iter().zip(&q) {
        assert!(relative_error(a, b) <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn three_way_equivalence(len in 1usize..=64, n in 1usize..=8, heads in 1usize..=4, p in 1usize..=4,
                             q_pick in 0usize..6, seed in any::<u64>()) {
        let params = SsdParams::random(len, heads, n, Seed(seed));
        let x = random_x(len, heads * p, seed ^ 0x5eed);
        let chunk = [1, 2, 3, 8, 16, len][q_pick];
        let r = ssm_recurrence_reference(&params, &x).unwrap();
        let q = ssd_quadratic(&params, &x).unwrap();
        let c = ssd_linear_chunked(&params, &x, chunk).unwrap();
        prop_assert!(rel(&q, &r) <= 1e-10);
        prop_assert!(rel(&c, &r) <= 1e-10);
    }
}

fn block_fixture(conv_width: usize, mode: SsdMode) -> (ParamStore, MambaBlock, Tensor) {
    let mut store = ParamStore::new();
    let cfg = MambaBlockConfig { conv_width, mode, ..MambaBlockConfig::new(8, 2, 3) };
    let block = MambaBlock::new(&mut store, "mamba", cfg, Seed(20)).unwrap();
    (store, block, Tensor::randn(&[7, 8], 1.0, Seed(21)))
}

#[test]
fn block_preserves_shape_and_rejects_mismatch() {
    let (store, block, x) = block_fixture(4, SsdMode::default());
    let g = Graph::new(&store, false);
    assert_eq!(block.forward(&g, &g.input(x)).unwrap().shape(), vec![7, 8]);
    assert!(block.forward(&g, &g.input(Tensor::zeros(&[7, 5]))).is_err());
}

#[test]
fn block_with_zero_output_projection_is_identity() {
    let (mut store, block, x) = block_fixture(4, SsdMode::default());
    store.get_mut(block.out_proj()).data_mut().fill(0.0);
    let g = Graph::new(&store, false);
    let y = block.forward(&g, &g.input(x.clone())).unwrap();
    assert!(y.value().bit_eq(&x));
}

#[test]
fn block_is_causal() {
    let (store, block, x) = block_fixture(4, SsdMode::Chunked(3));
    let run = |x: &Tensor| {
        let g = Graph::new(&store, false);
        block.forward(&g, &g.input(x.clone())).unwrap().value().data().to_vec()
    };
    let y = run(&x);
    let mut xp = x.clone();
    xp.data_mut()[4 * 8 + 2] += 1.0;
    let yp = run(&xp);
    assert_eq!(&y[..4 * 8], &yp[..4 * 8]);
    assert_ne!(&y[4 * 8..], &yp[4 * 8..]);
}

#[test]
fn block_gradients_match_finite_differences() {
    for (conv, mode) in [(4, SsdMode::Chunked(3)), (0, SsdMode::Quadratic)] {
        let (mut store, block, x) = block_fixture(conv, mode);
        let xid = store.add("input", x);
        let checks = check_param_grads(&store, |g| block.forward(g, &g.param(xid)), Seed(22), 64).unwrap();
        for c in checks {
            assert!(c.rel_err <= 1e-5, "{}: {}", c.name, c.rel_err);
        }
    }
}
