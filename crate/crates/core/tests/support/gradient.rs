//! Analytic gradients against central finite differences in f64.

use nre_core::nre::{nre_loss, LossWeights, NreBatch};
use nre_core::rng;
use nre_core::{Layer, LayerKind, Network, Tensor};
use rand::Rng;

pub const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Relu inputs closer than this to the kink make finite differences meaningless.
const KINK_MARGIN: f64 = 1e-3;

fn uniform(r: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn random_layers(r: &mut impl Rng, in_dim: usize, depth: usize, last: Option<LayerKind>) -> (Vec<Layer<f64>>, usize) {
    let mut layers = Vec::new();
    let mut width = in_dim;
    for d in 0..depth {
        let out = r.random_range(1..=5);
        let scale = 1.5 / (width as f64).sqrt();
        layers.push(Layer::affine(uniform(r, &[out, width], -scale, scale), uniform(r, &[out], -0.5, 0.5)).unwrap());
        let kind = match last {
            Some(k) if d + 1 == depth => k,
            _ => [LayerKind::Affine, LayerKind::Relu, LayerKind::Sigmoid, LayerKind::Tanh][r.random_range(0..4)],
        };
        match kind {
            LayerKind::Relu => layers.push(Layer::relu()),
            LayerKind::Sigmoid => layers.push(Layer::sigmoid()),
            LayerKind::Tanh => layers.push(Layer::tanh()),
            LayerKind::Affine => {}
        }
        width = out;
    }
    (layers, width)
}

/// Smallest distance of any relu input to zero along a forward pass.
fn relu_margin(net: &Network<f64>, x: &Tensor<f64>) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in net.layers() {
        if layer.kind() == LayerKind::Relu {
            margin = h.data().iter().fold(margin, |m, v| m.min(v.abs()));
        }
        h = layer.predict(&h);
    }
    margin
}

/// Norm-wise relative error; gradients below 1e-6 in norm are compared
/// absolutely, since finite differences carry ~1e-11 of rounding noise.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(1e-6)
}

/// Central differences of `f` with respect to every entry of `params`.
fn numeric_grads(params: &[Tensor<f64>], mut f: impl FnMut(&[Tensor<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut work = params.to_vec();
    let mut out = Vec::new();
    for p in 0..params.len() {
        let mut g = Vec::with_capacity(params[p].len());
        for j in 0..params[p].len() {
            let orig = work[p].data()[j];
            work[p].data_mut()[j] = orig + STEP;
            let plus = f(&work);
            work[p].data_mut()[j] = orig - STEP;
            let minus = f(&work);
            work[p].data_mut()[j] = orig;
            g.push((plus - minus) / (2.0 * STEP));
        }
        out.push(g);
    }
    out
}

fn weighted_sum(y: &Tensor<f64>, c: &Tensor<f64>) -> f64 {
    y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

/// Parameter and input gradients of random networks mixing every layer kind.
pub fn layer_gradients(configs: usize) -> Result<usize, String> {
    let mut seen = [0usize; 4];
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < configs {
        seed += 1;
        let mut r = rng::seeded(seed);
        let in_dim = r.random_range(1..=5);
        let depth = r.random_range(1..=4);
        let (layers, out_dim) = random_layers(&mut r, in_dim, depth, None);
        let mut net = Network::new(in_dim, layers).unwrap();
        let batch = r.random_range(1..=4);
        let x = uniform(&mut r, &[batch, in_dim], -1.0, 1.0);
        let c = uniform(&mut r, &[batch, out_dim], -1.0, 1.0);
        if relu_margin(&net, &x) < KINK_MARGIN {
            continue;
        }
        for k in net.kinds() {
            seen[k as usize] += 1;
        }

        net.forward(&x).unwrap();
        let analytic = net.backward(&c).unwrap();
        let params: Vec<Tensor<f64>> = net.params().into_iter().cloned().collect();
        let mut probe = net.clone();
        let numeric = numeric_grads(&params, |p| {
            probe.set_params(p.to_vec()).unwrap();
            weighted_sum(&probe.predict(&x).unwrap(), &c)
        });
        for (a, n) in analytic.param_grads.iter().zip(&numeric) {
            let e = relative_error(a.data(), n);
            if !(e < TOLERANCE) {
                return Err(format!("seed {seed}: parameter gradient error {e:e}"));
            }
        }
        let numeric_x = numeric_grads(std::slice::from_ref(&x), |p| {
            weighted_sum(&net.predict(&p[0]).unwrap(), &c)
        });
        let e = relative_error(analytic.input_grad.data(), &numeric_x[0]);
        if !(e < TOLERANCE) {
            return Err(format!("seed {seed}: input gradient error {e:e}"));
        }
        checked += 1;
    }
    if seen.contains(&0) {
        return Err(format!("some layer kind never exercised: {seen:?}"));
    }
    Ok(checked)
}

/// Encoder and decoder gradients of the full NRE loss, through a frozen
/// similarity encoder, on random small models.
pub fn nre_gradients(configs: usize) -> Result<usize, String> {
    let mut checked = 0;
    let mut seed = 1000u64;
    while checked < configs {
        seed += 1;
        let mut r = rng::seeded(seed);
        let in_dim = r.random_range(2..=6);
        let (enc_layers, z) = {
            let depth = r.random_range(1..=2);
            random_layers(&mut r, in_dim, depth, Some(LayerKind::Relu))
        };
        let (mut dec_layers, hidden) = random_layers(&mut r, z, 1, None);
        let scale = 1.5 / (hidden as f64).sqrt();
        dec_layers.push(
            Layer::affine(
                uniform(&mut r, &[in_dim, hidden], -scale, scale),
                uniform(&mut r, &[in_dim], -0.5, 0.5),
            )
            .unwrap(),
        );
        dec_layers.push(Layer::sigmoid());
        let (sim_layers, latent) = {
            let depth = r.random_range(1..=2);
            random_layers(&mut r, in_dim, depth, Some(LayerKind::Relu))
        };
        let encoder = Network::new(in_dim, enc_layers).unwrap();
        let decoder = Network::new(z, dec_layers).unwrap();
        let similarity = Network::new(in_dim, sim_layers).unwrap().frozen_copy();

        let n = r.random_range(1..=3);
        let t = r.random_range(1..=3);
        let x = uniform(&mut r, &[n, in_dim], 0.0, 1.0);
        let anchors = similarity.predict(&x).unwrap();
        let neighbors = uniform(&mut r, &[n * t, latent], 0.0, 1.0);
        let far = uniform(&mut r, &[n * t, latent], 0.0, 1.0);
        let (a, b) = (r.random_range(0.0..1.0f64), r.random_range(0.0..1.0f64));
        let (lo, hi) = (a.min(b), a.max(b));
        let weights = LossWeights::new(lo, hi - lo, 1.0 - hi).unwrap();
        let normalize = r.random_bool(0.5);

        let code = encoder.predict(&x).unwrap();
        let recon = decoder.predict(&code).unwrap();
        let margin = relu_margin(&encoder, &x)
            .min(relu_margin(&decoder, &code))
            .min(relu_margin(&similarity, &recon));
        let degenerate = similarity
            .predict(&recon)
            .unwrap()
            .iter_rows()
            .any(|row| row.iter().all(|&v| v == 0.0));
        if margin < KINK_MARGIN || degenerate {
            continue;
        }

        let batch = NreBatch {
            inputs: &x,
            anchors: &anchors,
            neighbors: Some(&neighbors),
            far: Some(&far),
            t,
        };
        let (mut e, mut d, mut s) = (encoder.clone(), decoder.clone(), similarity.clone());
        let out = nre_loss(&mut e, &mut d, &mut s, &batch, &weights, normalize).unwrap();
        if s.params() != similarity.params() {
            return Err(format!("seed {seed}: the frozen encoder changed"));
        }

        let loss_with = |enc: &Network<f64>, dec: &Network<f64>| {
            let (mut e, mut d, mut s) = (enc.clone(), dec.clone(), similarity.clone());
            nre_loss(&mut e, &mut d, &mut s, &batch, &weights, normalize)
                .unwrap()
                .loss
        };
        let enc_params: Vec<Tensor<f64>> = encoder.params().into_iter().cloned().collect();
        let dec_params: Vec<Tensor<f64>> = decoder.params().into_iter().cloned().collect();
        let numeric_enc = numeric_grads(&enc_params, |p| {
            let mut e = encoder.clone();
            e.set_params(p.to_vec()).unwrap();
            loss_with(&e, &decoder)
        });
        let numeric_dec = numeric_grads(&dec_params, |p| {
            let mut d = decoder.clone();
            d.set_params(p.to_vec()).unwrap();
            loss_with(&encoder, &d)
        });
        for (analytic, numeric) in out
            .encoder_grads
            .iter()
            .chain(&out.decoder_grads)
            .zip(numeric_enc.iter().chain(&numeric_dec))
        {
            let err = relative_error(analytic.data(), numeric);
            if !(err < TOLERANCE) {
                return Err(format!("seed {seed}: NRE gradient error {err:e}"));
            }
        }
        checked += 1;
    }
    Ok(checked)
}
