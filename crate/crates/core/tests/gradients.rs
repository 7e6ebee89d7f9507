//! Analytic gradients against central finite differences.

mod common;

use std::sync::Arc;

use bandsep_core::bandsplit::{merge_var, split_var};
use bandsep_core::gradcheck::GradCheckReport;
use common::{dot, random, run};
use bandsep_core::losses::{l1_time_var, multires_var, total_loss_var};
use bandsep_core::network::Network;
use bandsep_core::ops::ConvGeom;
use bandsep_core::params::ParamStore;
use bandsep_core::seqmodel::rope_attention;
use bandsep_core::spectral::{istft_var, stft_var, Stft};
use bandsep_core::tensor::Tensor;

const TOL: f64 = 1e-3;

fn assert_ok(name: &str, r: GradCheckReport) {
    assert!(r.checked >= 50);
    assert!(r.max_rel_err < TOL, "{name}: max rel err {} at {:?}", r.max_rel_err, r.worst);
}

#[test]
fn conv2d_grouped_with_bias() {
    let r = Arc::new(random(&[4, 6, 5], 99));
    let rep = run(vec![random(&[4, 6, 5], 1), random(&[4, 2, 3, 3], 2), random(&[4], 3)], move |_, v| {
        dot(v[0].conv2d(v[1], Some(v[2]), ConvGeom::same(2, 3, 5)), r.clone())
    });
    assert_ok("conv2d", rep);
}

#[test]
fn strided_downsample_conv() {
    let r = Arc::new(random(&[6, 6, 3], 98));
    let rep = run(vec![random(&[4, 6, 5], 1), random(&[6, 2, 1, 2], 2)], move |_, v| {
        dot(v[0].conv2d(v[1], None, ConvGeom::downsample(2, 2, 5)), r.clone())
    });
    assert_ok("downsample", rep);
}

#[test]
fn transposed_time_conv() {
    let r = Arc::new(random(&[4, 3, 7], 97));
    let rep = run(vec![random(&[6, 3, 4], 1), random(&[6, 2, 2], 2), random(&[4], 3)], move |_, v| {
        dot(v[0].conv_transpose_time(v[1], Some(v[2]), 2, 7), r.clone())
    });
    assert_ok("conv_transpose_time", rep);
}

#[test]
fn normalizations() {
    let r = Arc::new(random(&[4, 3, 5], 96));
    let rep = run(vec![random(&[4, 3, 5], 1), random(&[4], 2), random(&[4], 3)], move |_, v| {
        dot(v[0].group_norm(2, v[1], v[2]), r.clone())
    });
    assert_ok("group_norm", rep);
    let r = Arc::new(random(&[3, 5, 6], 95));
    let rep = run(vec![random(&[3, 5, 6], 1), random(&[6], 2), random(&[6], 3)], move |_, v| {
        dot(v[0].layer_norm(v[1], v[2]), r.clone())
    });
    assert_ok("layer_norm", rep);
}

#[test]
fn linear_maps_and_gelu() {
    let r = Arc::new(random(&[2, 3, 5], 94));
    let rep = run(vec![random(&[2, 3, 4], 1), random(&[5, 4], 2), random(&[5], 3)], move |_, v| {
        dot(v[0].linear(v[1], Some(v[2])).gelu(), r.clone())
    });
    assert_ok("linear+gelu", rep);
    let r = Arc::new(random(&[4, 3, 5], 93));
    let rep = run(vec![random(&[4, 6, 5], 1), random(&[2, 3, 6], 2), random(&[2, 3], 3)], move |_, v| {
        dot(v[0].band_linear(v[1], v[2]), r.clone())
    });
    assert_ok("band_linear", rep);
}

#[test]
fn layout_ops() {
    let r = Arc::new(random(&[6, 4, 3], 92));
    let rep = run(vec![random(&[4, 3, 6], 1)], move |_, v| {
        dot(v[0].permute3([2, 0, 1]).scale(1.5), r.clone())
    });
    assert_ok("permute", rep);
    let r = Arc::new(random(&[2, 3, 7], 91));
    let rep = run(vec![random(&[2, 3, 2], 1)], move |_, v| dot(v[0].repeat_time(4, 7), r.clone()));
    assert_ok("repeat_time", rep);
    let r = Arc::new(random(&[8, 4, 3], 90));
    let rep = run(vec![random(&[4, 8, 3], 1)], move |_, v| {
        let s = split_var(v[0], 2);
        dot(s, r.clone()).add(dot(merge_var(s, 2), Arc::new(random(&[4, 8, 3], 89))))
    });
    assert_ok("split/merge", rep);
}

#[test]
fn rotary_attention() {
    let r = Arc::new(random(&[2, 5, 8], 88));
    let rep = run(vec![random(&[2, 5, 8], 1), random(&[2, 5, 8], 2), random(&[2, 5, 8], 3)], move |_, v| {
        dot(rope_attention(v[0], v[1], v[2], 2), r.clone())
    });
    assert_ok("rope_attention", rep);
}

#[test]
fn stft_and_istft() {
    let plan = Stft::shared(32, 8, 12, true);
    let r = Arc::new(random(&[4, 12, 11], 87));
    let p = plan.clone();
    let rep = run(vec![random(&[2, 80], 1)], move |_, v| dot(stft_var(v[0], p.clone()), r.clone()));
    assert_ok("stft", rep);
    let r = Arc::new(random(&[2, 80], 86));
    let rep = run(vec![random(&[4, 12, 11], 2)], move |_, v| dot(istft_var(v[0], plan.clone(), 80), r.clone()));
    assert_ok("istft", rep);
}

#[test]
fn loss_components() {
    let target = random(&[2, 200], 5);
    let windows = vec![[64, 16], [32, 8]];
    let t = Arc::new(target.clone());
    assert_ok("l1_time", run(vec![random(&[2, 200], 1)], move |_, v| l1_time_var(v[0], t.clone())));
    let (t, w) = (target.clone(), windows.clone());
    assert_ok("multires", run(vec![random(&[2, 200], 2)], move |_, v| multires_var(v[0], &t, &w).unwrap()));
    let stft = common::tiny_stft();
    let frames = 1 + 200 / stft.hop;
    let rep = run(vec![random(&[4, stft.kept_bins, frames], 3)], move |_, v| {
        total_loss_var(v[0], &target, &stft, &windows).unwrap().0
    });
    assert_ok("total_loss", rep);
}

#[test]
fn full_tiny_model_weights() {
    let (model, stft) = (common::tiny_model(), common::tiny_stft());
    let net = Network::new(&model, &stft, 4).unwrap();
    // Nonzero biases and norm affine terms so every parameter carries gradient.
    let params = net.params().map(|t| {
        let noise = random(t.shape(), t.numel() as u64);
        Tensor::from_vec(t.shape(), t.data().iter().zip(noise.data()).map(|(a, b)| a + 0.1 * b).collect())
    });
    let names = params.names().to_vec();
    let x = random(&[4, 32, 16], 8);
    let r = Arc::new(random(&[4, 32, 16], 9));
    let inputs: Vec<Tensor> = params.tensors().cloned().collect();
    let rep = run(inputs, move |g, v| {
        let store = ParamStore::from_parts(names.clone(), v.iter().map(|p| (*p.value()).clone()).collect());
        let net = Network::from_params(&model, &stft, store).unwrap();
        let bound = bandsep_core::params::Bound::from_vars(v.to_vec());
        dot(net.forward_var(&bound, g.leaf(x.clone())).unwrap(), r.clone())
    });
    assert_ok("tiny model", rep);
}
