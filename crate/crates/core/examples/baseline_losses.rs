//! Per-instance values of every loss on one set of logits.
//!
//! ```text
//! cargo run --example baseline_losses
//! ```

use adaptive_kd::losses::{
    annealing_target, combined_loss, cross_entropy, focal_loss, kl_distill, lambert_w0, regression_loss, softmax,
    super_loss,
};

fn main() -> adaptive_kd::Result<()> {
    let student = [1.0, 0.2, -0.5];
    let teacher = [2.5, 0.0, -1.0];
    let label = 0;

    println!("softmax(τ=1) {:?}", softmax(&student, 1.0)?);
    println!("softmax(τ=4) {:?}", softmax(&student, 4.0)?);
    let ce = cross_entropy(&student, label)?;
    let kd = kl_distill(&student, &teacher, 2.0)?;
    println!("ce {:.6}  kl(τ=2) {:.6}", ce.value, kd.value);
    for alpha in [0.0, 0.37, 1.0] {
        println!("blend α={alpha}: {:.6}", combined_loss(ce.value, kd.value, alpha)?);
    }
    for gamma in [0.0, 1.0, 2.0, 5.0] {
        println!("focal γ={gamma}: {:.6}", focal_loss(&student, label, gamma)?.value);
    }
    for l in [0.1, 1.0, 3.0] {
        let s = super_loss(l, 1.0, 1.0)?;
        println!("super ℓ={l}: value {:.6} σ {:.6}", s.value, s.sigma);
    }
    println!("W0(1) = {:.16}", lambert_w0(1.0)?);
    for epoch in 0..4 {
        let target = annealing_target(&teacher, epoch, 4, 7.0)?;
        println!("annealing epoch {epoch}: target {target:?} mse {:.6}", regression_loss(&student, &target)?.value);
    }
    Ok(())
}
