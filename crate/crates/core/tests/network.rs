mod common;

use common::*;
use oa_complete::autodiff::{ParamStore, Tensor};
use oa_complete::geom::{compute_norm_params, normalize};
use oa_complete::model::completion_loss;
use oa_complete::nn::Ctx;
use oa_complete::{CompletionNet, ModelConfig, PointCloud, Variant};
use rand::seq::SliceRandom;

fn normalized_cloud(seed: u64, n: usize) -> PointCloud {
    let raw = random_cloud(&mut rng(seed), n);
    normalize(&raw, &compute_norm_params(&raw).unwrap())
}

fn cloud_tensor(c: &PointCloud) -> Tensor<f32> {
    Tensor::new(&[c.len(), 3], c.flat()).unwrap()
}

#[test]
fn default_config_forward_shapes() {
    let cfg = ModelConfig::default();
    let net = CompletionNet::new(cfg.clone()).unwrap();
    let params = net.init_seeded(0);
    let pp = normalized_cloud(1, cfg.n_input);
    let mut ctx = Ctx::new(&params, false);
    let out = net.forward(&mut ctx, &pp).unwrap();
    let g = &ctx.graph;
    assert_eq!(g.shape(out.embedded.tokens), &[128, 256]);
    assert_eq!(g.shape(out.encoder.global), &[1024]);
    assert_eq!(out.encoder.memory.len(), 4);
    for &m in &out.encoder.memory {
        assert_eq!(g.shape(m), &[128, 256]);
    }
    assert_eq!(g.shape(out.queries), &[192, 256]);
    assert_eq!(g.shape(out.sparse), &[192, 3]);
    assert_eq!(g.shape(out.decoded), &[192, 512]);
    assert_eq!(g.shape(out.folded), &[5952, 3]);
    assert_eq!(g.shape(out.missing), &[6144, 3]);
    assert_eq!(g.shape(out.completed), &[8192, 3]);
    let head = &g.value(out.completed).data()[..cfg.n_input * 3];
    assert!(head.iter().zip(pp.flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn layer_counts_one_two_four() {
    for layers in [1, 2, 4] {
        let mut cfg = ModelConfig::desk();
        cfg.n_enc_layers = layers;
        cfg.n_dec_layers = layers;
        let net = CompletionNet::new(cfg.clone()).unwrap();
        let params = net.init_seeded(3);
        let pred = net.predict(&params, &normalized_cloud(2, cfg.n_input)).unwrap();
        assert_eq!(pred.global.len(), cfg.global_width);
        assert_eq!(pred.decoded.shape(), &[cfg.n_queries, cfg.decoder_width]);
        assert_eq!(pred.completed.len(), cfg.completed_count());
        assert!(pred.completed.points().iter().flatten().all(|v| v.is_finite()));
    }
}

fn permuted(c: &PointCloud, seed: u64) -> PointCloud {
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.shuffle(&mut rng(seed));
    c.select(&idx)
}

#[test]
fn global_feature_and_completion_ignore_input_order() {
    let cfg = ModelConfig::desk();
    let net = CompletionNet::new(cfg.clone()).unwrap();
    let params = net.init_seeded(4);
    for trial in 0..3 {
        let pp = normalized_cloud(100 + trial, cfg.n_input);
        let a = net.predict(&params, &pp).unwrap();
        let b = net.predict(&params, &permuted(&pp, trial)).unwrap();
        let ae = a.global.iter().zip(&b.global).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
        assert!(ae < 1e-5, "AE moved by {ae}");
        assert!(same_point_set(a.completed.points(), b.completed.points(), 1e-5));
    }
}

#[test]
fn training_mode_forward_ignores_input_order() {
    let cfg = ModelConfig::toy();
    let net = CompletionNet::new(cfg.clone()).unwrap();
    let params = net.init_seeded(5);
    let pp = normalized_cloud(6, cfg.n_input);
    let run = |c: &PointCloud| {
        let mut ctx = Ctx::new(&params, true);
        let out = net.forward(&mut ctx, c).unwrap();
        let g = &ctx.graph;
        (g.value(out.encoder.global).data().to_vec(), g.value(out.missing).data().to_vec())
    };
    let (ga, ma) = run(&pp);
    let (gb, mb) = run(&permuted(&pp, 9));
    assert!(ga.iter().zip(&gb).all(|(x, y)| (x - y).abs() < 1e-5));
    assert!(ma.iter().zip(&mb).all(|(x, y)| (x - y).abs() < 1e-5));
}

#[test]
fn zero_tokens_reach_the_global_feature_through_biases_only() {
    let cfg = ModelConfig::desk();
    let net = CompletionNet::new(cfg.clone()).unwrap();
    let mut params: ParamStore<f32> = net.init_seeded(6);
    for i in 0..params.len() {
        let (name, p) = params.at_mut(i);
        if name.starts_with("enc.") && (name.ends_with(".b") || name.ends_with(".beta")) {
            p.tensor = Tensor::zeros(p.tensor.shape());
        }
    }
    let mut ctx = Ctx::new(&params, false);
    let tokens = ctx.graph.constant(Tensor::zeros(&[cfg.regions, cfg.token_width()])).unwrap();
    let enc = net.encoder.forward(&mut ctx, tokens, 1).unwrap();
    let ae = ctx.graph.value(enc.global).data();
    assert_eq!(ae.len(), cfg.global_width);
    // every weight multiplies a zero activation, so nothing but biases can move AE
    assert!(ae.iter().all(|&v| v == 0.0));
}

#[test]
fn loss_examples() {
    let store: ParamStore<f32> = ParamStore::new();
    let gt = normalized_cloud(7, 8);
    let mut ctx = Ctx::new(&store, true);
    let ps = ctx.graph.constant(cloud_tensor(&gt)).unwrap();
    let pc = ctx.graph.constant(cloud_tensor(&gt)).unwrap();
    let l = completion_loss(&mut ctx, ps, pc, &gt).unwrap();
    assert_eq!(ctx.graph.value(l).item(), 0.0);

    let other = normalized_cloud(8, 8);
    let mut ctx = Ctx::new(&store, true);
    let ps = ctx.graph.constant(cloud_tensor(&gt)).unwrap();
    let pc = ctx.graph.constant(cloud_tensor(&other)).unwrap();
    let l = completion_loss(&mut ctx, ps, pc, &gt).unwrap();
    let direct = oa_complete::geom::chamfer_l2(&other, &gt).unwrap();
    assert!((ctx.graph.value(l).item() as f64 - direct).abs() <= 1e-6 * direct);

    let sparse = normalized_cloud(9, 8);
    let mut ctx = Ctx::new(&store, true);
    let ps = ctx.graph.constant(cloud_tensor(&sparse)).unwrap();
    let pc = ctx.graph.constant(cloud_tensor(&other)).unwrap();
    let l = completion_loss(&mut ctx, ps, pc, &gt).unwrap();
    let want = chamfer_oracle(sparse.points(), gt.points()) + chamfer_oracle(other.points(), gt.points());
    assert!((ctx.graph.value(l).item() as f64 - want).abs() <= 1e-6 * want);

    let mut ctx = Ctx::new(&store, true);
    let ps = ctx.graph.constant(cloud_tensor(&sparse)).unwrap();
    assert!(completion_loss(&mut ctx, ps, ps, &PointCloud::empty()).is_err());
}

#[test]
fn variants_build_and_differ() {
    let cfg = ModelConfig::desk();
    let pp = normalized_cloud(10, cfg.n_input);
    let outs: Vec<Vec<f32>> = Variant::ALL
        .iter()
        .map(|&v| {
            let net = CompletionNet::new(cfg.clone().with_variant(v)).unwrap();
            net.predict(&net.init_seeded(1), &pp).unwrap().decoded.data().to_vec()
        })
        .collect();
    for i in 0..outs.len() {
        for j in (i + 1)..outs.len() {
            assert_ne!(outs[i], outs[j]);
        }
    }
}
