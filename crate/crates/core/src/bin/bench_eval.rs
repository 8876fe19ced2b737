//! Rough throughput probe for the batched evaluation path.
use nonlocal_pinn::autodiff::scalar::{Dual, Dual2};
use nonlocal_pinn::autodiff::tape::{grad_params, Tape};
use nonlocal_pinn::estimators::Surrogate;
use nonlocal_pinn::network::{Activation, FusedNet, ConstraintWrapper, NetworkParams};
use std::sync::Arc;
use std::time::Instant;

fn bench<S: nonlocal_pinn::autodiff::scalar::Scalar>(name: &str, b: usize, reps: usize) {
    let p = Arc::new(NetworkParams::init_glorot(&[1, 64, 64, 64, 64, 1], Activation::Tanh, 0).unwrap());
    let net = FusedNet::new(p.clone(), ConstraintWrapper::None);
    let pts: Vec<f64> = (0..b).map(|i| i as f64 / b as f64).collect();
    let seeds: Vec<f64> = vec![1.0; b];
    let mut tape: Tape<S> = Tape::new();
    let start = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        tape.clear();
        let block = tape.alloc_params(&p.flat);
        let ids = net.eval_batch(&mut tape, &pts, b, Some(&seeds));
        let terms: Vec<_> = ids.iter().map(|&id| (id, 0.5)).collect();
        let s = tape.weighted_sum(&terms);
        let l = tape.mul(s, s);
        let g = grad_params(&mut tape, l, &block).unwrap();
        sink += g[0];
    }
    let dt = start.elapsed().as_secs_f64();
    let evals = (b * reps) as f64;
    println!("{name}: B={b} reps={reps}: {:.2}s total, {:.2} us/eval (fwd+bwd) [{sink:.3e}]", dt, dt / evals * 1e6);
}

fn main() {
    bench::<f64>("f64", 400, 200);
    bench::<f64>("f64", 40, 1000);
    bench::<Dual>("dual", 128, 200);
    bench::<Dual2>("dual2", 64, 200);
}
