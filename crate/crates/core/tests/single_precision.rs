use ether_core::adapters::factors::distance_to_identity;
use ether_core::adapters::{householder, init_adapter, linear_forward, AdaptedLinear};
use ether_core::metrics::transformation_distance;
use ether_core::{AdapterConfig, AdapterF32, Method, Prng, TapeF32, TensorF32};

#[test]
fn householder_in_f32() {
    let u: TensorF32 = Prng::new(1, 0).normal_tensor(&[16], 1.0);
    let h = householder(&u).unwrap();
    assert!((distance_to_identity(&h).unwrap() - 2.0).abs() < 1e-5);
}

#[test]
fn every_adapter_runs_in_f32() {
    let mut rng = Prng::new(2, 0);
    for method in Method::ALL {
        let config = AdapterConfig::new(method).with_blocks(2);
        let mut adapter: AdapterF32 = init_adapter(&config, 8, 6, &mut rng).unwrap();
        for p in adapter.params_mut() {
            let noise: TensorF32 = rng.normal_tensor(p.shape(), 0.3);
            p.axpy(1.0, &noise).unwrap();
        }
        let w: TensorF32 = rng.normal_tensor(&[8, 6], 1.0);
        let b: TensorF32 = rng.normal_tensor(&[6], 1.0);
        let layer = AdaptedLinear::new(w, b, adapter).unwrap();
        let x: TensorF32 = rng.normal_tensor(&[4, 8], 1.0);
        let direct = layer.forward(&x).unwrap();
        let merged = linear_forward(&x, &layer.merge().unwrap(), &layer.bias).unwrap();
        assert!(direct.max_abs_diff(&merged).unwrap() < 1e-4, "{method}");
        if method.is_bounded() {
            let d = transformation_distance(&layer.adapter).unwrap();
            assert!(d.per_factor.iter().all(|&v| v <= 2.0 * 2f32.sqrt() + 1e-4), "{method}");
        }

        let mut tape = TapeF32::new();
        let params = layer.register(&mut tape);
        let xv = tape.constant(x);
        let y = layer.forward_on(&mut tape, xv, &params).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert!(params.iter().all(|&p| grads.get(p).all_finite()), "{method}");
    }
}
