use drama::blocks::{
    attention_core, mamba_fusion, sample_fsd_mask, transformer_fusion_baseline, FeatureMap, FeatureStateDropout,
    FsdConfig, Modality, MtDecoderLayer, MtDecoderLayerConfig, MultiHeadAttention, MultiScaleConv, SelfAttentionBlock,
    TokenSequence, TokenTag,
};
use drama::params::{check_param_grads, Graph, ParamStore};
use drama::rng::Seed;
use drama::ssd::{MambaBlock, MambaBlockConfig, SsdMode};
use drama::tensor::Tensor;

fn map(g: &Graph, t: Tensor, m: Modality) -> FeatureMap {
    FeatureMap::new(g.input(t), m).unwrap()
}

// ---------- multi-scale conv ----------

#[test]
fn msc_preserves_spatial_dims_and_checks_channels() {
    let mut store = ParamStore::new();
    let msc = MultiScaleConv::new(&mut store, "msc", 3, 4, Seed(1));
    let g = Graph::new(&store, false);
    let y = msc.forward(&g, &map(&g, Tensor::randn(&[3, 6, 11], 1.0, Seed(2)), Modality::Camera)).unwrap();
    assert_eq!(y.value.shape(), vec![4, 6, 11]);
    assert_eq!(y.modality, Modality::Camera);
    assert!(msc.forward(&g, &map(&g, Tensor::zeros(&[2, 6, 11]), Modality::Camera)).is_err());
}

#[test]
fn msc_delta_kernels_with_identity_mlp_triple_the_input() {
    let c = 2;
    let mut store = ParamStore::new();
    let msc = MultiScaleConv::new(&mut store, "msc", c, c, Seed(3));
    for (&(kid, _), k) in msc.branches().iter().zip([5, 7, 9]) {
        let mut kernel = vec![0.0; c * c * k * k];
        for o in 0..c {
            kernel[((o * c + o) * k + k / 2) * k + k / 2] = 1.0;
        }
        *store.get_mut(kid) = Tensor::new(vec![c, c, k, k], kernel).unwrap();
    }
    store.get_mut(msc.mlp().down.weight()).data_mut().fill(0.0);
    let x = Tensor::randn(&[c, 5, 7], 1.0, Seed(4));
    let g = Graph::new(&store, false);
    let y = msc.forward(&g, &map(&g, x.clone(), Modality::Lidar)).unwrap();
    for (a, b) in y.value.value().data().iter().zip(x.data()) {
        assert!((a - 3.0 * b).abs() < 1e-12);
    }
}

#[test]
fn msc_gradients() {
    let mut store = ParamStore::new();
    let msc = MultiScaleConv::new(&mut store, "msc", 2, 3, Seed(5));
    let x = store.add("input", Tensor::randn(&[2, 5, 6], 1.0, Seed(6)));
    let checks = check_param_grads(
        &store,
        |g| Ok(msc.forward(g, &FeatureMap::new(g.param(x), Modality::Camera)?)?.value),
        Seed(7),
        24,
    )
    .unwrap();
    for c in checks {
        assert!(c.rel_err <= 1e-5, "{}: {}", c.name, c.rel_err);
    }
}

// ---------- fusion ----------

fn fusion_fixture() -> (ParamStore, MambaBlock, Tensor, Tensor) {
    let mut store = ParamStore::new();
    let block = MambaBlock::new(&mut store, "fusion", MambaBlockConfig::new(4, 1, 4), Seed(8)).unwrap();
    (store, block, Tensor::randn(&[4, 3, 5], 1.0, Seed(9)), Tensor::randn(&[4, 2, 2], 1.0, Seed(10)))
}

#[test]
fn fusion_shapes_round_trip() {
    let (store, block, cam, lidar) = fusion_fixture();
    let g = Graph::new(&store, false);
    let (c, l) = mamba_fusion(&block, &g, &map(&g, cam, Modality::Camera), &map(&g, lidar, Modality::Lidar)).unwrap();
    assert_eq!((c.value.shape(), c.modality), (vec![4, 3, 5], Modality::Camera));
    assert_eq!((l.value.shape(), l.modality), (vec![4, 2, 2], Modality::Lidar));
}

#[test]
fn fusion_with_zero_output_projection_is_identity() {
    let (mut store, block, cam, lidar) = fusion_fixture();
    store.get_mut(block.out_proj()).data_mut().fill(0.0);
    let g = Graph::new(&store, false);
    let (c, l) =
        mamba_fusion(&block, &g, &map(&g, cam.clone(), Modality::Camera), &map(&g, lidar.clone(), Modality::Lidar))
            .unwrap();
    assert!(c.value.value().bit_eq(&cam));
    assert!(l.value.value().bit_eq(&lidar));
}

#[test]
fn fusion_information_flow_follows_token_order() {
    let (store, block, cam, lidar) = fusion_fixture();
    let run = |cam: &Tensor, lidar: &Tensor| {
        let g = Graph::new(&store, false);
        let (c, l) =
            mamba_fusion(&block, &g, &map(&g, cam.clone(), Modality::Camera), &map(&g, lidar.clone(), Modality::Lidar))
                .unwrap();
        ((*c.value.value()).clone(), (*l.value.value()).clone())
    };
    let (c0, l0) = run(&cam, &lidar);
    // camera pixel → lidar outputs
    let mut cam_p = cam.clone();
    cam_p.data_mut()[7] += 0.5;
    let (_, l1) = run(&cam_p, &lidar);
    assert!(l1.max_abs_diff(&l0) > 1e-9);
    // camera tokens precede lidar tokens in a causal scan
    let mut lidar_p = lidar.clone();
    lidar_p.data_mut()[3] += 0.5;
    let (c2, l2) = run(&cam, &lidar_p);
    assert!(c2.bit_eq(&c0));
    assert!(l2.max_abs_diff(&l0) > 1e-9);
}

#[test]
fn fusion_gradients() {
    let (mut store, block, cam, lidar) = fusion_fixture();
    let (ci, li) = (store.add("cam", cam), store.add("lidar", lidar));
    let checks = check_param_grads(
        &store,
        |g| {
            let (c, l) = mamba_fusion(
                &block,
                g,
                &FeatureMap::new(g.param(ci), Modality::Camera)?,
                &FeatureMap::new(g.param(li), Modality::Lidar)?,
            )?;
            drama::tensor::Var::concat(&[&c.value.reshape(&[60])?, &l.value.reshape(&[16])?], 0)
        },
        Seed(11),
        32,
    )
    .unwrap();
    for c in checks {
        assert!(c.rel_err <= 1e-5, "{}: {}", c.name, c.rel_err);
    }
}

#[test]
fn attention_fusion_baseline_shapes() {
    let mut store = ParamStore::new();
    let block = SelfAttentionBlock::new(&mut store, "attn_fusion", 4, 2, Seed(12)).unwrap();
    let g = Graph::new(&store, false);
    let cam = map(&g, Tensor::randn(&[4, 3, 5], 1.0, Seed(13)), Modality::Camera);
    let lidar = map(&g, Tensor::randn(&[4, 2, 2], 1.0, Seed(14)), Modality::Lidar);
    let (c, l) = transformer_fusion_baseline(&block, &g, &cam, &lidar).unwrap();
    assert_eq!(c.value.shape(), vec![4, 3, 5]);
    assert_eq!(l.value.shape(), vec![4, 2, 2]);
    let bad = map(&g, Tensor::zeros(&[3, 2, 2]), Modality::Lidar);
    assert!(transformer_fusion_baseline(&block, &g, &cam, &bad).is_err());
}

// ---------- attention ----------

fn naive_attention(q: &[f64], k: &[f64], v: &[f64], lq: usize, lk: usize, d: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; lq * d];
    for i in 0..lq {
        let logits: Vec<f64> =
            (0..lk).map(|j| (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum::<f64>() * scale).collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        for j in 0..lk {
            for c in 0..d {
                out[i * d + c] += w[j] / z * v[j * d + c];
            }
        }
    }
    out
}

fn project(x: &Tensor, w: &Tensor) -> Vec<f64> {
    let (r, k, n) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    drama::tensor::kernels::matmul_naive(r, k, n, x.data(), w.data())
}

#[test]
fn attention_matches_naive_per_head_oracle() {
    let (d, heads, lq, lk) = (8, 2, 3, 5);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "attn", d, heads, Seed(15)).unwrap();
    let q = Tensor::randn(&[lq, d], 1.0, Seed(16));
    let kv = Tensor::randn(&[lk, d], 1.0, Seed(17));
    let g = Graph::new(&store, false);
    let y = mha.forward(&g, &g.input(q.clone()), &g.input(kv.clone())).unwrap();

    let qp = project(&q, store.get(mha.query.weight()));
    let kp = project(&kv, store.get(mha.key.weight()));
    let vp = project(&kv, store.get(mha.value.weight()));
    let dk = d / heads;
    let mut concat = vec![0.0; lq * d];
    for h in 0..heads {
        let slice = |m: &[f64], rows: usize| -> Vec<f64> {
            (0..rows).flat_map(|r| m[r * d + h * dk..r * d + (h + 1) * dk].to_vec()).collect()
        };
        let o =
            naive_attention(&slice(&qp, lq), &slice(&kp, lk), &slice(&vp, lk), lq, lk, dk, 1.0 / (dk as f64).sqrt());
        for r in 0..lq {
            concat[r * d + h * dk..r * d + (h + 1) * dk].copy_from_slice(&o[r * dk..(r + 1) * dk]);
        }
    }
    let want = project(&Tensor::new(vec![lq, d], concat).unwrap(), store.get(mha.output.weight()));
    for (a, b) in y.value().data().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-10);
    }
    for w in mha.weights(&g, &g.input(q), &g.input(kv)).unwrap() {
        for row in w.data().chunks(lk) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn attention_over_single_token_returns_its_value() {
    let d = 6;
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "attn", d, 3, Seed(18)).unwrap();
    let kv = Tensor::randn(&[1, d], 1.0, Seed(19));
    let g = Graph::new(&store, false);
    let y = mha.forward(&g, &g.input(Tensor::randn(&[4, d], 1.0, Seed(20))), &g.input(kv.clone())).unwrap();
    let vp = Tensor::new(vec![1, d], project(&kv, store.get(mha.value.weight()))).unwrap();
    let want = project(&vp, store.get(mha.output.weight()));
    for row in y.value().data().chunks(d) {
        for (a, b) in row.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_is_invariant_to_memory_permutation() {
    let d = 8;
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "attn", d, 4, Seed(21)).unwrap();
    let q = Tensor::randn(&[3, d], 1.0, Seed(22));
    let kv = Tensor::randn(&[6, d], 1.0, Seed(23));
    let perm = [4, 0, 5, 2, 1, 3];
    let kvp =
        Tensor::new(vec![6, d], perm.iter().flat_map(|&r| kv.data()[r * d..(r + 1) * d].to_vec()).collect()).unwrap();
    let g = Graph::new(&store, false);
    let a = mha.forward(&g, &g.input(q.clone()), &g.input(kv)).unwrap().value();
    let b = mha.forward(&g, &g.input(q), &g.input(kvp)).unwrap().value();
    assert!(a.max_abs_diff(&b) <= 1e-10);
}

#[test]
fn attention_core_matches_naive_oracle() {
    let (lq, lk, d) = (9, 13, 4);
    let q = Tensor::randn(&[lq, d], 1.0, Seed(24));
    let k = Tensor::randn(&[lk, d], 1.0, Seed(25));
    let v = Tensor::randn(&[lk, d], 1.0, Seed(26));
    let y = attention_core(lq, lk, d, q.data(), k.data(), v.data());
    let want = naive_attention(q.data(), k.data(), v.data(), lq, lk, d, 1.0);
    for (a, b) in y.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn attention_gradients() {
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "attn", 6, 2, Seed(27)).unwrap();
    let q = store.add("q", Tensor::randn(&[2, 6], 1.0, Seed(28)));
    let kv = store.add("kv", Tensor::randn(&[5, 6], 1.0, Seed(29)));
    for c in check_param_grads(&store, |g| mha.forward(g, &g.param(q), &g.param(kv)), Seed(30), 64).unwrap() {
        assert!(c.rel_err <= 1e-5, "{}: {}", c.name, c.rel_err);
    }
}

// ---------- feature-state dropout ----------

fn tags() -> Vec<TokenTag> {
    let mut t = vec![TokenTag::Fusion; 6];
    t.extend([TokenTag::Ego; 3]);
    t
}

fn fsd_fixture(cfg: FsdConfig) -> (ParamStore, FeatureStateDropout, Tensor) {
    let mut store = ParamStore::new();
    let fsd = FeatureStateDropout::new(&mut store, "fsd", 9, 4, cfg, Seed(31)).unwrap();
    (store, fsd, Tensor::randn(&[9, 4], 1.0, Seed(32)))
}

fn run_fsd(store: &ParamStore, fsd: &FeatureStateDropout, x: &Tensor, training: bool, seed: u64) -> Tensor {
    let g = Graph::new(store, false);
    let toks = TokenSequence::new(g.input(x.clone()), tags()).unwrap();
    (*fsd.forward(&g, &toks, training, Seed(seed)).unwrap().value.value()).clone()
}

#[test]
fn fsd_without_masking_adds_positional_embedding() {
    let (store, fsd, x) = fsd_fixture(FsdConfig { state_rate: 0.0, fusion_rate: 0.0 });
    let pos = store.get(fsd.pos_emb());
    let want: Vec<f64> = x.data().iter().zip(pos.data()).map(|(a, b)| a + b).collect();
    assert_eq!(run_fsd(&store, &fsd, &x, true, 1).data(), &want[..]);
    let (store, fsd, x) = fsd_fixture(FsdConfig::default());
    let a = run_fsd(&store, &fsd, &x, false, 1);
    let b = run_fsd(&store, &fsd, &x, false, 2);
    assert!(a.bit_eq(&b));
    assert_eq!(a.data(), &want[..]);
}

#[test]
fn fsd_full_masking_yields_mask_plus_position() {
    let (store, fsd, x) = fsd_fixture(FsdConfig { state_rate: 1.0, fusion_rate: 1.0 });
    let y = run_fsd(&store, &fsd, &x, true, 3);
    let (pos, mask) = (store.get(fsd.pos_emb()), store.get(fsd.mask_vec()));
    for (t, row) in y.data().chunks(4).enumerate() {
        for c in 0..4 {
            assert_eq!(row[c], mask.data()[c] + pos.data()[t * 4 + c]);
        }
    }
}

#[test]
fn fsd_rates_apply_per_tag() {
    let tags = tags();
    let only_state = FsdConfig { state_rate: 1.0, fusion_rate: 0.0 };
    let m = sample_fsd_mask(&tags, &only_state, Seed(4));
    for (t, masked) in tags.iter().zip(m) {
        assert_eq!(masked, *t == TokenTag::Ego);
    }
    let cfg = FsdConfig::default();
    let (mut fusion, mut ego, mut nf, mut ne) = (0usize, 0usize, 0usize, 0usize);
    for trial in 0..10_000 {
        for (t, masked) in tags.iter().zip(sample_fsd_mask(&tags, &cfg, Seed(5).split(trial))) {
            match t {
                TokenTag::Fusion => {
                    nf += 1;
                    fusion += masked as usize;
                }
                TokenTag::Ego => {
                    ne += 1;
                    ego += masked as usize;
                }
            }
        }
    }
    assert!((fusion as f64 / nf as f64 - 0.1).abs() <= 0.02);
    assert!((ego as f64 / ne as f64 - 0.5).abs() <= 0.02);
    assert!(FeatureStateDropout::new(
        &mut ParamStore::new(),
        "f",
        2,
        2,
        FsdConfig { state_rate: 1.5, fusion_rate: 0.0 },
        Seed(0)
    )
    .is_err());
}

#[test]
fn fsd_training_mask_depends_only_on_seed() {
    let (store, fsd, x) = fsd_fixture(FsdConfig::default());
    assert!(run_fsd(&store, &fsd, &x, true, 9).bit_eq(&run_fsd(&store, &fsd, &x, true, 9)));
}

#[test]
fn fsd_gradients() {
    for cfg in [FsdConfig { state_rate: 0.0, fusion_rate: 0.0 }, FsdConfig { state_rate: 0.5, fusion_rate: 0.5 }] {
        let (mut store, fsd, x) = fsd_fixture(cfg);
        let xi = store.add("input", x);
        let checks = check_param_grads(
            &store,
            |g| Ok(fsd.forward(g, &TokenSequence::new(g.param(xi), tags())?, true, Seed(6))?.value),
            Seed(33),
            64,
        )
        .unwrap();
        for c in checks {
            assert!(c.rel_err <= 1e-5, "{}: {}", c.name, c.rel_err);
        }
    }
}

// ---------- decoder layer ----------

fn decoder_fixture() -> (ParamStore, MtDecoderLayer, Tensor, Tensor) {
    let mut store = ParamStore::new();
    let cfg = MtDecoderLayerConfig {
        mamba_heads: 2,
        state_dim: 4,
        attn_heads: 2,
        ffn_hidden: 12,
        mode: SsdMode::Chunked(2),
        ..MtDecoderLayerConfig::new(8)
    };
    let layer = MtDecoderLayer::new(&mut store, "mt", cfg, Seed(34)).unwrap();
    (store, layer, Tensor::randn(&[5, 8], 1.0, Seed(35)), Tensor::randn(&[7, 8], 1.0, Seed(36)))
}

#[test]
fn decoder_layer_shape_and_identity() {
    let (mut store, layer, q, mem) = decoder_fixture();
    {
        let g = Graph::new(&store, false);
        let y = layer.forward(&g, &g.input(q.clone()), &g.input(mem.clone())).unwrap();
        assert_eq!(y.shape(), vec![5, 8]);
    }
    for id in layer.residual_output_params() {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let g = Graph::new(&store, false);
    let y = layer.forward(&g, &g.input(q.clone()), &g.input(mem)).unwrap();
    assert!(y.value().bit_eq(&q));
}

#[test]
fn decoder_layer_is_causal_in_query_without_cross_attention() {
    let (mut store, layer, q, mem) = decoder_fixture();
    store.get_mut(layer.attn.output.weight()).data_mut().fill(0.0);
    let run = |q: &Tensor| {
        let g = Graph::new(&store, false);
        (*layer.forward(&g, &g.input(q.clone()), &g.input(mem.clone())).unwrap().value()).clone()
    };
    let y = run(&q);
    let mut qp = q.clone();
    qp.data_mut()[3 * 8 + 1] += 1.0;
    let yp = run(&qp);
    assert_eq!(&y.data()[..24], &yp.data()[..24]);
    assert_ne!(&y.data()[24..], &yp.data()[24..]);
}

#[test]
fn decoder_layer_gradients() {
    let (mut store, layer, q, mem) = decoder_fixture();
    let (qi, mi) = (store.add("query", q), store.add("memory", mem));
    for c in check_param_grads(&store, |g| layer.forward(g, &g.param(qi), &g.param(mi)), Seed(37), 32).unwrap() {
        assert!(c.rel_err <= 1e-5, "{}: {}", c.name, c.rel_err);
    }
}
