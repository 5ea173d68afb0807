use super::{ParamStore, Real};
use crate::error::{Error, Result};

/// One heavy-ball step over every parameter:
/// `v ← momentum·v + grad`, `w ← w − lr·v`, then the gradient is zeroed.
///
/// Fails without touching any weight if a parameter has no gradient.
pub fn sgd_momentum_step<T: Real>(params: &mut ParamStore<T>, lr: f64, momentum: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
        return Err(Error::State(format!("parameter {:?} has no gradient", p.name)));
    }
    let lr = T::from_f64(lr);
    let momentum = T::from_f64(momentum);
    for p in params.iter_mut() {
        let grad = p.tensor.grad().expect("checked above").to_vec();
        for ((w, v), g) in p.tensor.data_mut().iter_mut().zip(p.velocity.iter_mut()).zip(&grad) {
            *v = momentum * *v + *g;
            *w = *w - lr * *v;
        }
        p.tensor.zero_grad();
    }
    Ok(())
}
