mod common;

use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use matmvp::dataset::{generate_scenes, GridConfig, RenderSource};
use matmvp::denoiser::{
    attend, embedding_name, material_embedding_attention, mcaa_inject, multiview_attention, param_count,
    reference_cross_attention, scaled_dot_attention, AttentionWeights, Denoiser, DenoiserConfig, Lane, RefLevel,
};
use matmvp::denoiser::attention::attention_probs;
use matmvp::tensor::{randn, to_f64_vec};
use matmvp::trainer::{TrainConfig, Trainer};

fn tiny(n_views: usize) -> DenoiserConfig {
    DenoiserConfig { width: 8, resolution: 8, n_views, ..DenoiserConfig::default() }
}

/// Adds noise to every parameter so zero-initialized projections carry signal.
fn perturbed(cfg: DenoiserConfig, seed: u64) -> Denoiser {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Denoiser::new(cfg, DType::F64, &mut rng).unwrap();
    let names: Vec<String> = model.params().names().map(String::from).collect();
    for name in names {
        let p = model.params().get(&name).unwrap().clone();
        let noise = (randn(&mut rng, p.dims(), DType::F64).unwrap() * 0.2).unwrap();
        model.params().set(&name, &(p + noise).unwrap()).unwrap();
    }
    model
}

struct Inputs {
    z: Tensor,
    geometry: Tensor,
    reference: Tensor,
}

fn inputs(cfg: &DenoiserConfig, seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, r) = (cfg.n_views, cfg.resolution);
    Inputs {
        z: randn(&mut rng, (1, v, 2, 3, r, r), DType::F64).unwrap(),
        geometry: randn(&mut rng, (1, v, 6, r, r), DType::F64).unwrap(),
        reference: randn(&mut rng, (1, 3, r, r), DType::F64).unwrap(),
    }
}

fn forward(model: &Denoiser, x: &Inputs, t: usize) -> Tensor {
    let refs = model.reference_features(&x.reference).unwrap();
    model.forward(&x.z, &[t], &x.geometry, &refs).unwrap()
}

fn lane(out: &Tensor, l: Lane) -> Vec<f64> {
    to_f64_vec(&out.narrow(2, l.index(), 1).unwrap()).unwrap()
}

fn eye_weights(d: usize) -> Tensor {
    Tensor::eye(d, DType::F64, &Device::Cpu).unwrap()
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    randn(rng, shape, DType::F64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn forward_is_view_permutation_equivariant(seed in any::<u64>(), t in 1usize..1000) {
        let cfg = tiny(3);
        let model = perturbed(cfg.clone(), seed);
        let x = inputs(&cfg, seed ^ 1);
        let mut perm: Vec<u32> = (0..3).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 2));
        let idx = Tensor::new(perm.as_slice(), &Device::Cpu).unwrap();
        let permuted = Inputs {
            z: x.z.index_select(&idx, 1).unwrap(),
            geometry: x.geometry.index_select(&idx, 1).unwrap(),
            reference: x.reference.clone(),
        };
        let want = to_f64_vec(&forward(&model, &x, t).index_select(&idx, 1).unwrap()).unwrap();
        let got = to_f64_vec(&forward(&model, &permuted, t)).unwrap();
        let err = got.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err <= 1e-5, "max deviation {err}");
    }

    #[test]
    fn mcaa_is_elementwise_addition(a in prop::collection::vec(-10.0f64..10.0, 24), b in prop::collection::vec(-10.0f64..10.0, 24)) {
        let ta = Tensor::from_vec(a.clone(), (2, 3, 4), &Device::Cpu).unwrap();
        let tb = Tensor::from_vec(b.clone(), (2, 3, 4), &Device::Cpu).unwrap();
        let got = to_f64_vec(&mcaa_inject(&ta, &tb).unwrap()).unwrap();
        let want: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn embedding_attention_rows_sum_to_one(seed in any::<u64>(), nq in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = (rand_t(&mut rng, &[2, nq, 8]) * 3.0).unwrap();
        let k = (rand_t(&mut rng, &[2, 16, 8]) * 3.0).unwrap();
        let p = attention_probs(&q, &k).unwrap();
        prop_assert_eq!(p.dims(), &[2, nq, 16]);
        let sums = to_f64_vec(&p.sum(2).unwrap()).unwrap();
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn multiview_matches_loop_oracle(seed in any::<u64>(), views in 1usize..4, tokens in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = OracleWeights {
            q: random_mat(&mut rng, 4, 4, 1.0),
            k: random_mat(&mut rng, 4, 4, 1.0),
            v: random_mat(&mut rng, 4, 4, 1.0),
            o: random_mat(&mut rng, 4, 4, 1.0),
            o_bias: None,
            heads: 2,
        };
        let z: Vec<Vec<Mat>> = vec![(0..views).map(|_| random_mat(&mut rng, tokens, 4, 1.0)).collect()];
        let zt = tokens_tensor(&z[0]).reshape((1, views, tokens, 4)).unwrap();
        let (q, k, v, o) = (mat_tensor(&w.q), mat_tensor(&w.k), mat_tensor(&w.v), mat_tensor(&w.o));
        let aw = AttentionWeights { q: &q, k: &k, v: &v, o: &o, o_bias: None, heads: 2 };
        let got = to_f64_vec(&multiview_attention(&zt, &aw).unwrap()).unwrap();
        let want: Vec<f64> = multiview_oracle(&z, &w).into_iter().flatten().flatten().flatten().collect();
        prop_assert!(max_rel_err(&got, &want) < 1e-10);
    }
}

#[test]
fn single_view_reduces_to_self_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_t(&mut rng, &[2, 5, 8]);
    let (q, k, v, o) = (rand_t(&mut rng, &[8, 8]), rand_t(&mut rng, &[8, 8]), rand_t(&mut rng, &[8, 8]), rand_t(&mut rng, &[8, 8]));
    let w = AttentionWeights { q: &q, k: &k, v: &v, o: &o, o_bias: None, heads: 2 };
    let mv = multiview_attention(&x.unsqueeze(1).unwrap(), &w).unwrap().squeeze(1).unwrap();
    let sa = attend(&x, &x, &w).unwrap();
    assert_eq!(to_f64_vec(&mv).unwrap(), to_f64_vec(&sa).unwrap());
}

#[test]
fn equal_value_rows_give_that_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = rand_t(&mut rng, &[1, 3, 4, 6]);
    let c = [0.25, -2.0, 1.5, 0.0, 3.0, -0.5];
    // a zero value projection plus a bias makes every value row the bias
    let zero = Tensor::zeros((6, 6), DType::F64, &Device::Cpu).unwrap();
    let (q, k) = (rand_t(&mut rng, &[6, 6]), rand_t(&mut rng, &[6, 6]));
    let id = eye_weights(6);
    let bias = Tensor::new(&c, &Device::Cpu).unwrap();
    let w = AttentionWeights { q: &q, k: &k, v: &zero, o: &id, o_bias: Some(&bias), heads: 3 };
    let out = to_f64_vec(&multiview_attention(&z, &w).unwrap()).unwrap();
    for row in out.chunks(6) {
        assert_eq!(row, c);
    }
}

#[test]
fn reference_attention_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q_tokens = rand_t(&mut rng, &[2, 7, 4]);
    let (q, k, o) = (rand_t(&mut rng, &[4, 4]), rand_t(&mut rng, &[4, 4]), rand_t(&mut rng, &[4, 4]));

    let zero = Tensor::zeros((4, 4), DType::F64, &Device::Cpu).unwrap();
    let reference = RefLevel { stage: 1, tokens: rand_t(&mut rng, &[2, 5, 4]) };
    let w = AttentionWeights { q: &q, k: &k, v: &zero, o: &o, o_bias: None, heads: 2 };
    let out = to_f64_vec(&reference_cross_attention(&q_tokens, 1, &reference, &w).unwrap()).unwrap();
    assert!(out.iter().all(|&x| x == 0.0));

    let v = rand_t(&mut rng, &[4, 4]);
    let single = RefLevel { stage: 0, tokens: rand_t(&mut rng, &[2, 1, 4]) };
    let w = AttentionWeights { q: &q, k: &k, v: &v, o: &o, o_bias: None, heads: 2 };
    let out = reference_cross_attention(&q_tokens, 0, &single, &w).unwrap();
    let row = single.tokens.broadcast_matmul(&v).unwrap().broadcast_matmul(&o).unwrap();
    let want = to_f64_vec(&row.broadcast_as((2, 7, 4)).unwrap().contiguous().unwrap()).unwrap();
    assert!(max_rel_err(&to_f64_vec(&out).unwrap(), &want) < 1e-12);

    let reference = RefLevel { stage: 2, tokens: rand_t(&mut rng, &[2, 3, 4]) };
    let lanes = attend(&q_tokens, &reference.tokens, &w).unwrap();
    let got = reference_cross_attention(&q_tokens, 2, &reference, &w).unwrap();
    assert_eq!(to_f64_vec(&got).unwrap(), to_f64_vec(&lanes).unwrap());
}

#[test]
fn mcaa_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = rand_t(&mut rng, &[1, 9, 4]);
    let zero = Tensor::zeros((1, 9, 4), DType::F64, &Device::Cpu).unwrap();
    assert_eq!(to_f64_vec(&mcaa_inject(&z, &zero).unwrap()).unwrap(), to_f64_vec(&z).unwrap());
    assert_eq!(to_f64_vec(&mcaa_inject(&zero, &z).unwrap()).unwrap(), to_f64_vec(&z).unwrap());
}

#[test]
fn zero_embedding_and_output_projection_leave_tokens_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_t(&mut rng, &[2, 10, 8]);
    let emb = Tensor::zeros((16, 12), DType::F64, &Device::Cpu).unwrap();
    let (q, k, v) = (rand_t(&mut rng, &[8, 8]), rand_t(&mut rng, &[12, 8]), rand_t(&mut rng, &[12, 8]));
    let o = Tensor::zeros((8, 8), DType::F64, &Device::Cpu).unwrap();
    let b = Tensor::zeros(8, DType::F64, &Device::Cpu).unwrap();
    let w = AttentionWeights { q: &q, k: &k, v: &v, o: &o, o_bias: Some(&b), heads: 2 };
    let y = material_embedding_attention(&x, &emb, &w).unwrap();
    assert_eq!(to_f64_vec(&(&x + y).unwrap()).unwrap(), to_f64_vec(&x).unwrap());

    let wrong = rand_t(&mut rng, &[16, 5]);
    assert!(material_embedding_attention(&x, &wrong, &w).is_err());
}

#[test]
fn fresh_model_ignores_embeddings() {
    let cfg = tiny(2);
    let model = Denoiser::new(cfg.clone(), DType::F64, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let x = inputs(&cfg, 9);
    let before = to_f64_vec(&forward(&model, &x, 300)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for l in Lane::ALL {
        let name = embedding_name(l);
        let dims = model.params().get(&name).unwrap().dims().to_vec();
        model.params().set(&name, &rand_t(&mut rng, &dims)).unwrap();
    }
    assert_eq!(to_f64_vec(&forward(&model, &x, 300)).unwrap(), before);
}

#[test]
fn albedo_lane_never_reads_the_mr_embedding() {
    for mcaa in [true, false] {
        let cfg = DenoiserConfig { mcaa, ..tiny(2) };
        let model = perturbed(cfg.clone(), 11);
        let x = inputs(&cfg, 12);
        let before = forward(&model, &x, 600);

        let name = embedding_name(Lane::Mr);
        let var = model.params().var(&name).unwrap().clone();
        let out = forward(&model, &x, 600);
        let albedo_sum = out.narrow(2, Lane::Albedo.index(), 1).unwrap().sum_all().unwrap();
        let grads = albedo_sum.backward().unwrap();
        if let Some(g) = grads.get(var.as_tensor()) {
            assert!(to_f64_vec(g).unwrap().iter().all(|&v| v == 0.0), "mcaa {mcaa}");
        }

        let dims = var.as_tensor().dims().to_vec();
        let shifted = (var.as_tensor() + rand_t(&mut ChaCha8Rng::seed_from_u64(13), &dims)).unwrap();
        model.params().set(&name, &shifted).unwrap();
        let after = forward(&model, &x, 600);
        assert_eq!(lane(&after, Lane::Albedo), lane(&before, Lane::Albedo), "mcaa {mcaa}");
        assert_ne!(lane(&after, Lane::Mr), lane(&before, Lane::Mr), "mcaa {mcaa}");
    }
}

#[test]
fn mcaa_flag_keeps_parameter_count() {
    for width in [8, 16, 32] {
        let on = DenoiserConfig { width, mcaa: true, ..DenoiserConfig::default() };
        let off = DenoiserConfig { mcaa: false, ..on.clone() };
        assert_eq!(param_count(&on), param_count(&off));
    }
    let cfg = TrainConfig::toy();
    let a = Trainer::new(cfg.clone()).unwrap().model().param_count();
    let b = Trainer::new(TrainConfig { disable_mcaa: true, ..cfg }).unwrap().model().param_count();
    assert_eq!(a, b);
}

#[test]
fn identical_inputs_and_weights_give_identical_outputs() {
    let cfg = tiny(2);
    let a = Denoiser::new(cfg.clone(), DType::F32, &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
    let b = Denoiser::new(cfg.clone(), DType::F32, &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
    let x = inputs(&cfg, 15);
    let first = to_f64_vec(&forward(&a, &x, 10)).unwrap();
    assert_eq!(first, to_f64_vec(&forward(&a, &x, 10)).unwrap());
    assert_eq!(first, to_f64_vec(&forward(&b, &x, 10)).unwrap());
}

#[test]
fn heads_split_the_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let q = rand_t(&mut rng, &[1, 3, 6]);
    let k = rand_t(&mut rng, &[1, 4, 6]);
    let v = rand_t(&mut rng, &[1, 4, 6]);
    let joint = to_f64_vec(&scaled_dot_attention(&q, &k, &v, 3).unwrap()).unwrap();
    for h in 0..3 {
        let part = |t: &Tensor| t.narrow(2, 2 * h, 2).unwrap().contiguous().unwrap();
        let single = to_f64_vec(&scaled_dot_attention(&part(&q), &part(&k), &part(&v), 1).unwrap()).unwrap();
        for (i, s) in single.iter().enumerate() {
            let (tok, c) = (i / 2, i % 2);
            assert!((joint[tok * 6 + 2 * h + c] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn trained_model_depends_on_the_reference() {
    let grid = GridConfig { azimuths: 6, ..GridConfig::default() };
    let source = RenderSource::new(generate_scenes(21, 4), grid).unwrap();
    let cfg = TrainConfig { steps: 25, seed: 3, model: DenoiserConfig { width: 8, ..DenoiserConfig::default() }, ..TrainConfig::toy() };
    let mut trainer = Trainer::new(cfg).unwrap();
    trainer.run(&source, &[0, 1, 2, 3], |_, _| Ok(())).unwrap();
    let model = trainer.model();
    let mc = model.config().clone();
    let (v, r) = (mc.n_views, mc.resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let z = randn(&mut rng, (1, v, 2, 3, r, r), DType::F32).unwrap();
    let g = randn(&mut rng, (1, v, 6, r, r), DType::F32).unwrap();
    let albedo = |reference: &Tensor| {
        let refs = model.reference_features(reference).unwrap();
        lane(&model.forward(&z, &[500], &g, &refs).unwrap(), Lane::Albedo)
    };
    let a = albedo(&(randn(&mut rng, (1, 3, r, r), DType::F32).unwrap() * 0.5).unwrap());
    let b = albedo(&(randn(&mut rng, (1, 3, r, r), DType::F32).unwrap() * 0.5).unwrap());
    let delta = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(delta > 1e-4, "albedo output moved by only {delta}");
}
