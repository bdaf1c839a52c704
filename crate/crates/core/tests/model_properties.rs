use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varpool::mil::{EtaKind, MilModel, ModelConfig, ModelFamily, ParamStore, PoolOutputs};
use varpool::reference::reference_risk;
use varpool::training::init_params;
use varpool::Tensor;

fn config(family: ModelFamily, varpool: bool, shared: bool) -> ModelConfig {
    ModelConfig {
        input_dim: 5,
        encoder_dims: vec![6],
        attn_hidden: 4,
        n_projections: 3,
        head_dims: vec![4],
        family,
        varpool,
        shared_attention: shared,
        gcn_k_neighbors: 3,
        ..Default::default()
    }
}

fn model(cfg: &ModelConfig, seed: u64) -> MilModel {
    MilModel::new(cfg.clone(), init_params(cfg, seed).unwrap()).unwrap()
}

fn random_bag(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Every pooled quantity except the per-instance weights, which permute.
fn bag_level(o: &PoolOutputs) -> Vec<f64> {
    let mut v = o.p_mean.clone();
    v.extend(o.p_var_raw.clone().unwrap_or_default());
    v.extend(&o.p_cat);
    v.push(o.risk);
    v
}

fn all_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for family in ModelFamily::ALL {
        for (varpool, shared) in [(false, true), (true, true), (true, false)] {
            out.push(config(family, varpool, shared));
        }
    }
    out
}

#[test]
fn identity_encoder_passes_instances_through() {
    let mut cfg = config(ModelFamily::AttnMean, true, true);
    cfg.encoder_dims.clear();
    let m = model(&cfg, 1);
    let x = random_bag(&mut ChaCha8Rng::seed_from_u64(1), 7, 5);
    let inspection = m.inspect(&x, &[true; 7]).unwrap();
    assert_eq!(inspection.embeddings, x);
}

#[test]
fn zero_encoder_gives_zero_embeddings() {
    let mut cfg = config(ModelFamily::AttnMean, false, true);
    cfg.input_dim = 4;
    cfg.encoder_dims = vec![2];
    let mut params = init_params(&cfg, 2).unwrap();
    for (name, t) in params.iter_mut() {
        if name.starts_with("encoder.") {
            t.data_mut().fill(0.0);
        }
    }
    let m = MilModel::new(cfg, params).unwrap();
    let x = random_bag(&mut ChaCha8Rng::seed_from_u64(2), 5, 4);
    let emb = m.inspect(&x, &[true; 5]).unwrap().embeddings;
    assert!(emb.data().iter().all(|&v| v == 0.0));
}

#[test]
fn one_layer_encoder_matches_product_and_relu_oracle() {
    let mut cfg = config(ModelFamily::AttnMean, false, true);
    cfg.input_dim = 4;
    cfg.encoder_dims = vec![3];
    let m = model(&cfg, 3);
    let x = random_bag(&mut ChaCha8Rng::seed_from_u64(3), 5, 4);
    let w = m.params().get("encoder.0.weight").unwrap();
    let b = m.params().get("encoder.0.bias").unwrap();
    let emb = m.inspect(&x, &[true; 5]).unwrap().embeddings;
    for i in 0..5 {
        for c in 0..3 {
            let z: f64 = (0..4).map(|k| x.get(i, k) * w.get(k, c)).sum::<f64>() + b.data()[c];
            assert!((emb.get(i, c) - z.max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn deep_sets_weights_are_uniform() {
    let m = model(&config(ModelFamily::DeepSets, true, true), 4);
    let x = random_bag(&mut ChaCha8Rng::seed_from_u64(4), 4, 5);
    assert_eq!(m.forward(&x, &[true; 4]).unwrap().attention, vec![0.25; 4]);
    let a = m.forward(&x, &[true, false, true, true]).unwrap().attention;
    assert_eq!(a[1], 0.0);
    assert!((a[0] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn gated_attention_on_identical_rows_is_uniform() {
    for family in [ModelFamily::AttnMean, ModelFamily::DeepGraphConv] {
        let m = model(&config(family, true, false), 5);
        let x = Tensor::matrix(6, 5, [0.3, -1.0, 0.7, 2.0, 0.1].repeat(6)).unwrap();
        let out = m.forward(&x, &[true; 6]).unwrap();
        for a in out.attention.iter().chain(out.var_attention.as_ref().unwrap()) {
            assert!((a - 1.0 / 6.0).abs() < 1e-15);
        }
    }
}

#[test]
fn constant_bag_has_zero_variance_and_matches_mean_only_path() {
    for cfg in all_configs().into_iter().filter(|c| c.varpool) {
        let m = model(&cfg, 6);
        let x = Tensor::matrix(5, 5, [0.4, -0.2, 1.3, 0.0, -0.9].repeat(5)).unwrap();
        let out = m.forward(&x, &[true; 5]).unwrap();
        assert_eq!(out.p_var_raw.as_ref().unwrap(), &vec![0.0; cfg.n_projections]);
        // the head sees p_mean followed by the constant eta(0) = ln(eps)
        let e = cfg.embed_dim();
        assert_eq!(&out.p_cat[..e], out.p_mean.as_slice());
        assert!(out.p_cat[e..].iter().all(|&v| v == cfg.eta_eps.ln()));
        let head_in = out.p_cat.clone();
        let mut z = head_in;
        for i in 0..=cfg.head_dims.len() {
            let w = m.params().get(&format!("head.{i}.weight")).unwrap();
            let b = m.params().get(&format!("head.{i}.bias")).unwrap();
            let next: Vec<f64> = (0..w.cols())
                .map(|c| (0..w.rows()).map(|r| z[r] * w.get(r, c)).sum::<f64>() + b.data()[c])
                .collect();
            z = if i < cfg.head_dims.len() {
                next.into_iter().map(|v| v.max(0.0)).collect()
            } else {
                next
            };
        }
        assert!((z[0] - out.risk).abs() < 1e-12);
    }
}

#[test]
fn varpool_off_has_no_variance_fields() {
    let m = model(&config(ModelFamily::AttnMean, false, true), 7);
    let x = random_bag(&mut ChaCha8Rng::seed_from_u64(7), 4, 5);
    let out = m.forward(&x, &[true; 4]).unwrap();
    assert!(out.p_var_raw.is_none());
    assert_eq!(out.p_cat, out.p_mean);
}

#[test]
fn eta_variants_produce_expected_tail() {
    for eta in [EtaKind::Log, EtaKind::Sqrt, EtaKind::Sigmoid] {
        let mut cfg = config(ModelFamily::AttnMean, true, true);
        cfg.eta = eta;
        let m = model(&cfg, 8);
        let x = random_bag(&mut ChaCha8Rng::seed_from_u64(8), 9, 5);
        let out = m.forward(&x, &[true; 9]).unwrap();
        let e = cfg.embed_dim();
        for (k, &p) in out.p_var_raw.as_ref().unwrap().iter().enumerate() {
            let expect = match eta {
                EtaKind::Log => (cfg.eta_eps + p).ln(),
                EtaKind::Sqrt => p.sqrt(),
                EtaKind::Sigmoid => 1.0 / (1.0 + (-p).exp()),
            };
            assert!((out.p_cat[e + k] - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    let m = model(&config(ModelFamily::AttnMean, true, true), 9);
    let x = random_bag(&mut ChaCha8Rng::seed_from_u64(9), 3, 4);
    assert!(m.forward(&x, &[true; 3]).is_err());
    let x = random_bag(&mut ChaCha8Rng::seed_from_u64(9), 3, 5);
    assert!(m.forward(&x, &[true; 2]).is_err());
    assert!(m.forward(&x, &[false; 3]).is_err());
    assert!(MilModel::new(config(ModelFamily::AttnMean, true, true), ParamStore::new()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn permutation_invariance(seed in 0u64..10_000, n in 2usize..14, which in 0usize..9) {
        let cfg = &all_configs()[which];
        let m = model(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_bag(&mut rng, n, 5);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let xp = x.select_rows(&perm).unwrap();
        let a = m.forward(&x, &vec![true; n]).unwrap();
        let b = m.forward(&xp, &vec![true; n]).unwrap();
        prop_assert!(max_abs_diff(&bag_level(&a), &bag_level(&b)) < 1e-12);
        let permuted: Vec<f64> = perm.iter().map(|&i| a.attention[i]).collect();
        prop_assert!(max_abs_diff(&permuted, &b.attention) < 1e-12);
    }

    #[test]
    fn padding_invariance(seed in 0u64..10_000, n in 1usize..12, pad in 1usize..5, which in 0usize..9) {
        let cfg = &all_configs()[which];
        let m = model(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_bag(&mut rng, n, 5);
        let mut data = x.data().to_vec();
        data.extend(std::iter::repeat_n(0.0, pad * 5));
        let padded = Tensor::matrix(n + pad, 5, data).unwrap();
        let mut mask = vec![true; n];
        mask.extend(std::iter::repeat_n(false, pad));
        let a = m.forward(&x, &vec![true; n]).unwrap();
        let b = m.forward(&padded, &mask).unwrap();
        prop_assert!(max_abs_diff(&bag_level(&a), &bag_level(&b)) < 1e-12);
        prop_assert!(max_abs_diff(&a.attention, &b.attention[..n]) < 1e-12);
        prop_assert!(b.attention[n..].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn masked_slots_get_zero_weight_and_the_rest_sum_to_one(seed in 0u64..10_000, n in 2usize..12, which in 0usize..9) {
        let cfg = &all_configs()[which];
        let m = model(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_bag(&mut rng, n, 5);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        mask[rng.random_range(0..n)] = true;
        let out = m.forward(&x, &mask).unwrap();
        for weights in std::iter::once(&out.attention).chain(out.var_attention.as_ref()) {
            for (w, &keep) in weights.iter().zip(&mask) {
                if !keep {
                    prop_assert_eq!(*w, 0.0);
                }
            }
            prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_and_reference_forward_agree(seed in 0u64..10_000, n in 1usize..12, which in 0usize..9) {
        let cfg = &all_configs()[which];
        let m = model(cfg, seed);
        let x = random_bag(&mut ChaCha8Rng::seed_from_u64(seed), n, 5);
        let mask = vec![true; n];
        let tape = m.forward(&x, &mask).unwrap().risk;
        let reference: f64 = reference_risk(&m, &x, &mask).unwrap();
        prop_assert!((tape - reference).abs() < 1e-12);
    }
}
