//! Whole-model finite-difference checks in f64.

mod common;

use common::{model_fd_check, model_grads, random_batch};
use trajconv::models::{build_model, ModelSpec};
use trajconv::social::{SocialConfig, SocialKind};

const TOL: f64 = 1e-4;
// Recurrent losses are smooth, and a larger step keeps roundoff well below
// their small gradient entries. The full-width conv2d has ~16k ReLU units per
// layer, so it needs a step small enough not to cross a kink.
const H: f64 = 1e-5;
const H_WIDE_RELU: f64 = 1e-6;

fn small_conv2d() -> ModelSpec {
    ModelSpec {
        embed_dim: 6,
        channels: Some(vec![(1, 2), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2), (2, 1)]),
        ..ModelSpec::conv2d(3)
    }
}

fn small_conv1d() -> ModelSpec {
    ModelSpec { embed_dim: 4, channels: Some(vec![(4, 4); 7]), ..ModelSpec::conv1d(3) }
}

fn small_recurrent(spec: ModelSpec) -> ModelSpec {
    ModelSpec { embed_dim: 4, lstm_hidden: 5, out_hidden: 3, ..spec }
}

fn check(spec: ModelSpec, batch: usize, per_tensor: Option<usize>) {
    check_with(spec, batch, per_tensor, H)
}

fn check_with(spec: ModelSpec, batch: usize, per_tensor: Option<usize>, h: f64) {
    let (rep, at) = model_fd_check(&spec, 21, batch, per_tensor, h);
    assert!(rep.worst_rel < TOL, "{}: {rep:?} at {at}", spec.label());
    assert!(rep.checked > 0);
}

#[test]
fn conv2d_small_every_entry() {
    check(small_conv2d(), 3, None);
    check(ModelSpec { symmetric_reduction_padding: true, ..small_conv2d() }, 3, None);
}

#[test]
fn conv2d_small_with_social() {
    let social = SocialConfig { l: 2, ..SocialConfig::with_kind(SocialKind::SquareGrid) };
    check(ModelSpec { social, ..small_conv2d() }, 3, None);
}

#[test]
fn conv1d_variants_every_entry() {
    check(small_conv1d(), 2, None);
    check(ModelSpec { positional_embedding: true, ..small_conv1d() }, 2, None);
    check(ModelSpec { residual: true, ..small_conv1d() }, 2, None);
    check(ModelSpec { transpose_conv: true, ..small_conv1d() }, 2, None);
    check(ModelSpec { kernel_size: 5, ..small_conv1d() }, 2, None);
}

#[test]
fn recurrent_models_every_entry() {
    let social = SocialConfig { c: 2, ..SocialConfig::with_kind(SocialKind::CircularMap) };
    check(small_recurrent(ModelSpec::lstm()), 2, None);
    check(small_recurrent(ModelSpec::encdec()), 2, None);
    check(small_recurrent(ModelSpec { social: social.clone(), ..ModelSpec::lstm() }), 2, None);
    check(small_recurrent(ModelSpec { social, ..ModelSpec::encdec() }), 2, None);
}

#[test]
fn default_models_sampled_entries() {
    check_with(ModelSpec::conv2d(5), 2, Some(3), H_WIDE_RELU);
    check_with(ModelSpec::conv1d(3), 2, Some(3), H_WIDE_RELU);
    check(ModelSpec::lstm(), 2, Some(4));
    check(ModelSpec::encdec(), 2, Some(4));
}

#[test]
fn every_parameter_gets_a_finite_gradient() {
    let angular = SocialConfig::with_kind(SocialKind::AngularGrid);
    for spec in [
        ModelSpec::conv2d(5),
        ModelSpec { social: angular.clone(), ..ModelSpec::conv2d(3) },
        ModelSpec { transpose_conv: true, positional_embedding: true, ..ModelSpec::conv1d(5) },
        ModelSpec { social: angular, ..ModelSpec::lstm() },
        ModelSpec::encdec(),
    ] {
        let (store, model) = build_model::<f64>(&spec, 5).unwrap();
        let (input, target) = random_batch(6, 4, spec.social.feature_len());
        for (id, g) in model_grads(&model, &store, &input, &target) {
            assert!(g.all_finite(), "{}: {}", spec.label(), store.entries()[id.0].name);
        }
    }
}
