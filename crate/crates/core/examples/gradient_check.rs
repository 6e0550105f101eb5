//! Backpropagated gradients of the blended objective against central
//! differences.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use adaptive_kd::losses::{combined_gradient, combined_loss, cross_entropy, kl_distill};
use adaptive_kd::models::{Activation, DenseNet};

fn objective(z: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let teacher = [0.5, 2.0, -1.0];
    let ce = cross_entropy(z, 1).unwrap();
    let kd = kl_distill(z, &teacher, 2.0).unwrap();
    (
        combined_loss(ce.value, kd.value, alpha).unwrap(),
        combined_gradient(&ce.grad, &kd.grad, alpha).unwrap(),
    )
}

fn main() -> adaptive_kd::Result<()> {
    let sizes = [4, 16, 3];
    let net = DenseNet::init(&sizes, Activation::Tanh, 42)?;
    let x = [0.3, -1.2, 0.8, 2.0];
    let alpha = 0.4;
    let (_, upstream) = objective(&net.forward(&x)?, alpha);
    let analytic = net.backward(&x, &upstream)?;

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut params = net.params().to_vec();
    for i in 0..params.len() {
        let orig = params[i];
        let mut eval = |v: f64| {
            params[i] = v;
            let probe = DenseNet::from_params(&sizes, Activation::Tanh, params.clone()).unwrap();
            objective(&probe.forward(&x).unwrap(), alpha).0
        };
        let numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
        params[i] = orig;
        let a = analytic.as_slice()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    println!("{} parameters, worst relative error {worst:.3e}", params.len());
    Ok(())
}
