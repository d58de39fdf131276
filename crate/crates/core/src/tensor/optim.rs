use super::{Real, Tensor};
use crate::error::{Error, Result};

/// SGD with classical momentum and L2 weight decay:
///
/// ```text
/// v ← momentum·v + grad + weight_decay·param
/// param ← param − lr·v
/// ```
#[derive(Debug, Clone)]
pub struct SgdMomentum<T: Real = f32> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> SgdMomentum<T> {
    /// Zero velocity for every parameter in `params`.
    pub fn new<'a>(
        params: impl IntoIterator<Item = &'a Tensor<T>>,
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(SgdMomentum {
            learning_rate,
            momentum,
            weight_decay,
            velocity: params
                .into_iter()
                .map(|p| vec![T::zero(); p.numel()])
                .collect(),
        })
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Vec<T>>) -> Result<()> {
        if velocity.len() != self.velocity.len()
            || velocity
                .iter()
                .zip(&self.velocity)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::invalid(
                "velocity buffers do not match the parameter set",
            ));
        }
        self.velocity = velocity;
        Ok(())
    }

    /// Applies one update to `params` (named for error reporting) and clears
    /// their gradients. Fails before touching anything if a gradient is missing.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor<T>)>,
    ) -> Result<()> {
        let mut params: Vec<_> = params.into_iter().collect();
        if params.len() != self.velocity.len() {
            return Err(Error::invalid(format!(
                "optimizer bound to {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for ((name, p), v) in params.iter().zip(&self.velocity) {
            if p.grad().is_none() {
                return Err(Error::MissingGradient(name.to_string()));
            }
            if p.numel() != v.len() {
                return Err(Error::invalid(format!("parameter `{name}` changed shape")));
            }
        }
        let lr = T::from_f64(self.learning_rate);
        let mu = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        for ((_, p), v) in params.iter_mut().zip(&mut self.velocity) {
            let grad = p.take_grad().expect("checked above");
            for ((w, vi), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = mu * *vi + g + wd * *w;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}
