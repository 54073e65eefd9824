//! Analytic gradients against central finite differences in f64.

mod support;

use support::gradient::{layer_gradients, nre_gradients};

#[test]
fn networks_of_every_layer_kind() {
    assert_eq!(layer_gradients(100), Ok(100));
}

#[test]
fn nre_loss_through_frozen_similarity_encoder() {
    assert_eq!(nre_gradients(100), Ok(100));
}
