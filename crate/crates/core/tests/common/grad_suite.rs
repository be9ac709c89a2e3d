//! Finite-difference checks of every differentiable component, in double
//! precision on reduced shapes.

use ndarray::{Array, Array2, Array3, Dimension};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustmark::embedder::{ClampGrad, ConvEmbedder, Embedder, WatermarkEmbedder};
use robustmark::network::Network;
use robustmark::nn::{Conv2d, Gelu, LayerNorm, Linear, Mode, MultiHeadAttention, TransformerBlock};
use robustmark::objectives::{
    embedder_loss, embedder_loss_grad, extractor_final_loss, extractor_pretrain_loss, extractor_pretrain_loss_grad,
    triplet_loss, triplet_loss_with_grad,
};
use robustmark::params::{Gradients, ParamBuilder, ParameterStore};
use robustmark::{Decoder, Encoder, Extractor, ImageTensor, ModelConfig, WatermarkBits};

use super::{check_input, check_params, random_vec, Bare, GradReport};

const PER_ARRAY: usize = 24;

fn array<D: Dimension>(shape: D, scale: f64, seed: u64) -> Array<f64, D> {
    let n = shape.size();
    Array::from_shape_vec(shape, random_vec(n, scale, seed)).unwrap()
}

fn to_vec<D: Dimension>(a: &Array<f64, D>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn reshape<D: Dimension>(v: &[f64], like: &Array<f64, D>) -> Array<f64, D> {
    Array::from_shape_vec(like.raw_dim(), v.to_vec()).unwrap()
}

/// Move every parameter away from its initial value so that zero biases
/// and unit gains are not special points.
fn jitter(store: &mut ParameterStore<f64>, seed: u64) {
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let v = store.value_mut(id);
        let noise = random_vec(v.len(), 0.1, seed + k as u64);
        for (x, n) in v.iter_mut().zip(noise) {
            *x += n;
        }
    }
}

fn weighted_sum<D: Dimension>(x: &Array<f64, D>, w: &Array<f64, D>) -> f64 {
    (x * w).sum()
}

fn layer_store() -> (ParameterStore<f64>, ChaCha8Rng) {
    (ParameterStore::new(), ChaCha8Rng::seed_from_u64(17))
}

pub fn multi_head_attention() -> GradReport {
    let (mut store, mut rng) = layer_store();
    let layer = MultiHeadAttention::build(&mut ParamBuilder::new(&mut store, &mut rng), "mha", 5, 6, 4, 3, 2).unwrap();
    jitter(&mut store, 1);
    let q = array(ndarray::Ix2(3, 5), 1.0, 2);
    let kv = array(ndarray::Ix2(4, 6), 1.0, 3);
    let w = array(ndarray::Ix2(3, 3), 1.0, 4);
    let loss = |st: &ParameterStore<f64>, q: &Array2<f64>, kv: &Array2<f64>| {
        weighted_sum(&layer.forward(st, q, kv).unwrap().0, &w)
    };
    let (_, cache) = layer.forward(&store, &q, &kv).unwrap();
    let mut g = Gradients::zeros_like(&store);
    let (dq, dkv) = layer.backward(&store, &cache, &w, &mut g);
    let mut net = Bare(store);
    let mut report = check_params(&mut net, &g, |n| loss(&n.0, &q, &kv), PER_ARRAY);
    report.merge(check_input(&mut to_vec(&q), &to_vec(&dq), |v| loss(&net.0, &reshape(v, &q), &kv), 64, "q_src"));
    report.merge(check_input(&mut to_vec(&kv), &to_vec(&dkv), |v| loss(&net.0, &q, &reshape(v, &kv)), 64, "kv_src"));
    report
}

pub fn transformer_block() -> GradReport {
    let (mut store, mut rng) = layer_store();
    let block = TransformerBlock::build(&mut ParamBuilder::new(&mut store, &mut rng), "block", 4, 2).unwrap();
    jitter(&mut store, 5);
    let x = array(ndarray::Ix2(3, 4), 1.0, 6);
    let w = array(ndarray::Ix2(3, 4), 1.0, 7);
    let loss = |st: &ParameterStore<f64>, x: &Array2<f64>| weighted_sum(&block.forward(st, x).unwrap().0, &w);
    let (_, cache) = block.forward(&store, &x).unwrap();
    let mut g = Gradients::zeros_like(&store);
    let dx = block.backward(&store, &cache, &w, &mut g);
    let mut net = Bare(store);
    let mut report = check_params(&mut net, &g, |n| loss(&n.0, &x), PER_ARRAY);
    report.merge(check_input(&mut to_vec(&x), &to_vec(&dx), |v| loss(&net.0, &reshape(v, &x)), 64, "tokens"));
    report
}

pub fn channel_fc() -> GradReport {
    let (mut store, mut rng) = layer_store();
    let fc = Linear::build(&mut ParamBuilder::new(&mut store, &mut rng), "fc", 5, 3).unwrap();
    jitter(&mut store, 8);
    let x = array(ndarray::Ix2(4, 5), 1.0, 9);
    let w = array(ndarray::Ix2(4, 3), 1.0, 10);
    let loss = |st: &ParameterStore<f64>, x: &Array2<f64>| weighted_sum(&fc.forward(st, x).unwrap(), &w);
    let mut g = Gradients::zeros_like(&store);
    let dx = fc.backward(&store, &x, &w, &mut g);
    let mut net = Bare(store);
    let mut report = check_params(&mut net, &g, |n| loss(&n.0, &x), PER_ARRAY);
    report.merge(check_input(&mut to_vec(&x), &to_vec(&dx), |v| loss(&net.0, &reshape(v, &x)), 64, "tokens"));
    report
}

pub fn conv2d() -> GradReport {
    let (mut store, mut rng) = layer_store();
    let conv = Conv2d::build(&mut ParamBuilder::new(&mut store, &mut rng), "conv", 2, 3, 3).unwrap();
    jitter(&mut store, 11);
    let x = array(ndarray::Ix3(5, 4, 2), 1.0, 12);
    let w = array(ndarray::Ix3(5, 4, 3), 1.0, 13);
    let loss = |st: &ParameterStore<f64>, x: &Array3<f64>| weighted_sum(&conv.forward(st, x).unwrap().0, &w);
    let (_, cache) = conv.forward(&store, &x).unwrap();
    let mut g = Gradients::zeros_like(&store);
    let dx = conv.backward(&store, &cache, &w, &mut g);
    let mut net = Bare(store);
    let mut report = check_params(&mut net, &g, |n| loss(&n.0, &x), 64);
    report.merge(check_input(&mut to_vec(&x), &to_vec(&dx), |v| loss(&net.0, &reshape(v, &x)), 64, "image"));
    report
}

pub fn layer_norm() -> GradReport {
    let (mut store, mut rng) = layer_store();
    let norm = LayerNorm::build(&mut ParamBuilder::new(&mut store, &mut rng), "norm", 6).unwrap();
    jitter(&mut store, 14);
    let x = array(ndarray::Ix2(3, 6), 1.0, 15);
    let w = array(ndarray::Ix2(3, 6), 1.0, 16);
    let loss = |st: &ParameterStore<f64>, x: &Array2<f64>| weighted_sum(&norm.forward(st, x).unwrap().0, &w);
    let (_, cache) = norm.forward(&store, &x).unwrap();
    let mut g = Gradients::zeros_like(&store);
    let dx = norm.backward(&store, &cache, &w, &mut g);
    let mut net = Bare(store);
    let mut report = check_params(&mut net, &g, |n| loss(&n.0, &x), PER_ARRAY);
    report.merge(check_input(&mut to_vec(&x), &to_vec(&dx), |v| loss(&net.0, &reshape(v, &x)), 64, "tokens"));
    report
}

pub fn gelu() -> GradReport {
    let x = array(ndarray::Ix1(16), 3.0, 17);
    let w = array(ndarray::Ix1(16), 1.0, 18);
    let dx = Gelu::backward(&x, &w);
    check_input(&mut to_vec(&x), &to_vec(&dx), |v| weighted_sum(&Gelu::forward(&reshape(v, &x)), &w), 16, "x")
}

pub fn embedder_loss_check() -> GradReport {
    let c = ImageTensor::new(array(ndarray::Ix3(4, 4, 3), 0.5, 19).mapv(|v| v + 0.5)).unwrap();
    let m = array(ndarray::Ix3(4, 4, 3), 0.5, 20).mapv(|v| v + 0.5);
    let loss = |m: &Array3<f64>| embedder_loss(&c, &ImageTensor::new(m.clone()).unwrap()).unwrap();
    let g = embedder_loss_grad(&c, &ImageTensor::new(m.clone()).unwrap()).unwrap();
    check_input(&mut to_vec(&m), &to_vec(&g), |v| loss(&reshape(v, &m)), 64, "marked")
}

pub fn extractor_loss_check() -> GradReport {
    let t = array(ndarray::Ix2(4, 4), 1.0, 21).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let e = array(ndarray::Ix2(4, 4), 1.5, 22);
    let g = extractor_pretrain_loss_grad(&t, &e).unwrap();
    check_input(&mut to_vec(&e), &to_vec(&g), |v| extractor_pretrain_loss(&t, &reshape(v, &e)).unwrap(), 64, "extracted")
}

pub fn triplet_loss_check() -> GradReport {
    let a = array(ndarray::Ix2(3, 4), 1.0, 23);
    let p = &a + &array(ndarray::Ix2(3, 4), 0.2, 24);
    let n = &a + &array(ndarray::Ix2(3, 4), 0.5, 25);
    let margin = 1.0;
    let t = triplet_loss_with_grad(a.view(), p.view(), n.view(), margin).unwrap();
    assert!(t.loss > 0.1, "hinge must be active for the check");
    let f = |a: &Array2<f64>, p: &Array2<f64>, n: &Array2<f64>| triplet_loss(a.view(), p.view(), n.view(), margin).unwrap();
    let mut report = check_input(&mut to_vec(&a), &to_vec(&t.d_anchor), |v| f(&reshape(v, &a), &p, &n), 64, "anchor");
    report.merge(check_input(&mut to_vec(&p), &to_vec(&t.d_positive), |v| f(&a, &reshape(v, &p), &n), 64, "positive"));
    report.merge(check_input(&mut to_vec(&n), &to_vec(&t.d_negative), |v| f(&a, &p, &reshape(v, &n)), 64, "negative"));
    report
}

/// The three-term extraction loss, differentiated term by term.
pub fn extractor_final_loss_check() -> GradReport {
    let targets: Vec<Array2<f64>> = (0..3)
        .map(|k| array(ndarray::Ix2(2, 2), 1.0, 26 + k).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }))
        .collect();
    let extracted: Vec<Array2<f64>> = (0..3).map(|k| array(ndarray::Ix2(2, 2), 1.5, 30 + k)).collect();
    let mut report = GradReport::new();
    for slot in 0..3 {
        let g = extractor_pretrain_loss_grad(&targets[slot], &extracted[slot]).unwrap();
        let f = |v: &[f64]| {
            let mut ex = extracted.clone();
            ex[slot] = reshape(v, &extracted[slot]);
            extractor_final_loss([&targets[0], &targets[1], &targets[2]], [&ex[0], &ex[1], &ex[2]]).unwrap()
        };
        report.merge(check_input(&mut to_vec(&extracted[slot]), &to_vec(&g), f, 16, &format!("extracted{slot}")));
    }
    report
}

fn tiny_cover() -> ImageTensor<f64> {
    let cfg = ModelConfig::tiny();
    let n = cfg.image_size;
    ImageTensor::from_fn(n, n, 3, |(y, x, c)| {
        0.5 + 0.3 * ((y as f64 * 0.37 + x as f64 * 0.21 + c as f64).sin())
    })
}

fn tiny_watermark() -> WatermarkBits {
    WatermarkBits::new(2, vec![true, false, false, true]).unwrap()
}

fn embedder_network<E: WatermarkEmbedder<f64>>(mut net: E) -> GradReport {
    let cover = tiny_cover();
    let wm = tiny_watermark();
    let loss = |n: &E| embedder_loss(&cover, &n.embed(&cover, &wm).unwrap()).unwrap();
    let (marked, cache) = net.forward(&cover, &wm).unwrap();
    let mut g = Gradients::zeros_like(net.store());
    let d = embedder_loss_grad(&cover, &marked).unwrap();
    net.backward(&cache, &d, ClampGrad::Exact, &mut g);
    check_params(&mut net, &g, loss, PER_ARRAY)
}

/// Cross-attention embedder on a 32×32 cover, loss MSE(cover, marked).
pub fn embedder_network_check() -> GradReport {
    embedder_network(Embedder::<f64>::new(&ModelConfig::tiny(), 3).unwrap())
}

pub fn conv_embedder_network_check() -> GradReport {
    embedder_network(ConvEmbedder::<f64>::new(&ModelConfig::tiny(), 4).unwrap())
}

pub fn encoder_network_check() -> GradReport {
    let cfg = ModelConfig::tiny();
    let mut enc = Encoder::<f64>::new(&cfg, 5).unwrap();
    jitter(enc.store_mut(), 40);
    let x = tiny_cover();
    let w = array(ndarray::Ix2(cfg.tokens(), cfg.attn_dim), 1.0, 41);
    let (_, cache) = enc.forward(&x).unwrap();
    let mut g = Gradients::zeros_like(enc.store());
    enc.backward(&cache, &w, &mut g);
    check_params(&mut enc, &g, |n| weighted_sum(&n.forward(&x).unwrap().0, &w), PER_ARRAY)
}

pub fn decoder_network_check() -> GradReport {
    let cfg = ModelConfig::tiny();
    let mut dec = Decoder::<f64>::new(&cfg, 6).unwrap();
    jitter(dec.store_mut(), 42);
    let id = array(ndarray::Ix2(cfg.tokens(), cfg.attn_dim), 1.0, 43);
    let w = array(ndarray::Ix3(cfg.image_size, cfg.image_size, 3), 1.0, 44);
    let loss = |n: &Decoder<f64>, id: &Array2<f64>| weighted_sum(n.forward(id).unwrap().0.data(), &w);
    let (_, cache) = dec.forward(&id).unwrap();
    let mut g = Gradients::zeros_like(dec.store());
    let did = dec.backward(&cache, &w, &mut g);
    let mut report = check_params(&mut dec, &g, |n| loss(n, &id), PER_ARRAY);
    report.merge(check_input(&mut to_vec(&id), &to_vec(&did), |v| loss(&dec, &reshape(v, &id)), 64, "id"));
    report
}

/// Extractor in training mode; every evaluation replays the same dropout
/// mask from a fixed seed.
pub fn extractor_network_check() -> GradReport {
    let cfg = ModelConfig::tiny();
    let mut ex = Extractor::<f64>::new(&cfg, 7).unwrap();
    jitter(ex.store_mut(), 45);
    let x = tiny_cover();
    let w = array(ndarray::Ix2(cfg.wm_size, cfg.wm_size), 1.0, 46);
    let run = |n: &Extractor<f64>, x: &ImageTensor<f64>| {
        n.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    };
    let loss = |n: &Extractor<f64>, x: &ImageTensor<f64>| weighted_sum(&run(n, x).0, &w);
    let (_, cache) = run(&ex, &x);
    let mut g = Gradients::zeros_like(ex.store());
    let dx = ex.backward(&cache, &w, &mut g);
    let mut report = check_params(&mut ex, &g, |n| loss(n, &x), PER_ARRAY);
    let xd = x.data().clone();
    report.merge(check_input(
        &mut to_vec(&xd),
        &to_vec(&dx),
        |v| loss(&ex, &ImageTensor::new(reshape(v, &xd)).unwrap()),
        64,
        "image",
    ));
    report
}

/// Every check, labelled.
pub fn all() -> Vec<(&'static str, fn() -> GradReport)> {
    vec![
        ("multi_head_attention", multi_head_attention),
        ("transformer_block", transformer_block),
        ("channel_fc", channel_fc),
        ("conv2d", conv2d),
        ("layer_norm", layer_norm),
        ("gelu", gelu),
        ("embedder_loss", embedder_loss_check),
        ("extractor_pretrain_loss", extractor_loss_check),
        ("triplet_loss", triplet_loss_check),
        ("extractor_final_loss", extractor_final_loss_check),
        ("embedder_network", embedder_network_check),
        ("conv_embedder_network", conv_embedder_network_check),
        ("encoder_network", encoder_network_check),
        ("decoder_network", decoder_network_check),
        ("extractor_network", extractor_network_check),
    ]
}
