//! Training objective: per-level Charbonnier data term plus gradient
//! difference loss (GDL), summed over pixels, channels and pyramid levels
//! and averaged over the batch.
//!
//! ```text
//! ρ(x)        = sqrt(x² + ε²)
//! gdl(Y, Ŷ)   = Σ ρ(|Y[i,j] − Y[i−1,j]| − |Ŷ[i,j] − Ŷ[i−1,j]|)
//!             + Σ ρ(|Y[i,j−1] − Y[i,j]| − |Ŷ[i,j−1] − Ŷ[i,j]|)
//! total       = 1/N Σ_n Σ_s [ Σ ρ(Ŷ_s − Y_s) + λ_gdl · gdl(Y_s, Ŷ_s) ]
//! ```
//!
//! Differences are only taken where both pixels lie inside the image.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Charbonnier ε, shared by the data term and the GDL.
    pub epsilon: f64,
    pub lambda_gdl: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 1e-3,
            lambda_gdl: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda_gdl >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda_gdl must be >= 0, got {}",
                self.lambda_gdl
            )));
        }
        Ok(())
    }
}

/// `Σ ρ(pred − target)` over every element.
pub fn charbonnier_loss<T: Real>(
    graph: &mut Graph<T>,
    pred: Var,
    target: Var,
    epsilon: f64,
) -> Result<Var> {
    let diff = graph.sub(pred, target)?;
    let penalty = graph.charbonnier(diff, T::from_f64(epsilon));
    Ok(graph.sum(penalty))
}

/// `|x[i,j] − x[i−1,j]|` and `|x[i,j−1] − x[i,j]|` over valid offsets.
fn abs_gradients<T: Real>(graph: &mut Graph<T>, x: Var) -> Result<(Var, Var)> {
    let s = graph.value(x).shape();
    let (h, w) = (s.h(), s.w());
    let below = graph.crop(x, 1, 0, h - 1, w)?;
    let above = graph.crop(x, 0, 0, h - 1, w)?;
    let vertical = graph.abs_diff(below, above)?;
    let left = graph.crop(x, 0, 0, h, w - 1)?;
    let right = graph.crop(x, 0, 1, h, w - 1)?;
    let horizontal = graph.abs_diff(left, right)?;
    Ok((vertical, horizontal))
}

/// Gradient difference loss between ground truth `target` and `pred`.
pub fn gdl_loss<T: Real>(
    graph: &mut Graph<T>,
    target: Var,
    pred: Var,
    epsilon: f64,
) -> Result<Var> {
    let ts = graph.value(target).shape();
    ts.expect_eq(&graph.value(pred).shape(), "gdl_loss")?;
    if ts.h() < 2 || ts.w() < 2 {
        return Err(Error::invalid(format!(
            "gdl_loss needs at least 2x2 planes, got {ts:?}"
        )));
    }
    let eps = T::from_f64(epsilon);
    let (tv, th) = abs_gradients(graph, target)?;
    let (pv, ph) = abs_gradients(graph, pred)?;
    let dv = graph.sub(tv, pv)?;
    let dh = graph.sub(th, ph)?;
    let rv = graph.charbonnier(dv, eps);
    let rh = graph.charbonnier(dh, eps);
    Ok(graph.sum_pair(rv, rh))
}

/// Number of GDL terms for a `(n, c, h, w)` tensor.
pub fn gdl_term_count(shape: crate::tensor::Shape) -> usize {
    let [n, c, h, w] = shape.0;
    n * c * ((h - 1) * w + h * (w - 1))
}

/// Scalar nodes of one loss evaluation. `charbonnier` and `gdl` are the
/// batch-averaged unweighted parts: `total = charbonnier + λ·gdl`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub charbonnier: Var,
    pub gdl: Var,
}

/// Full objective over matching pyramid `outputs` and `targets` (finest last).
///
/// With `lambda_gdl == 0` the GDL is still evaluated for reporting but is not
/// part of `total`, which is then exactly the batch-averaged Charbonnier sum.
pub fn total_loss<T: Real>(
    graph: &mut Graph<T>,
    outputs: &[Var],
    targets: &[Var],
    config: &LossConfig,
    batch_size: usize,
) -> Result<LossTerms> {
    config.validate()?;
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::invalid(format!(
            "loss: {} output levels vs {} target levels",
            outputs.len(),
            targets.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::invalid("loss: batch size must be positive"));
    }
    let mut charb_sum: Option<Var> = None;
    let mut gdl_sum: Option<Var> = None;
    for (&pred, &target) in outputs.iter().zip(targets) {
        let c = charbonnier_loss(graph, pred, target, config.epsilon)?;
        let g = gdl_loss(graph, target, pred, config.epsilon)?;
        charb_sum = Some(match charb_sum {
            Some(acc) => graph.add(acc, c)?,
            None => c,
        });
        gdl_sum = Some(match gdl_sum {
            Some(acc) => graph.add(acc, g)?,
            None => g,
        });
    }
    let (charb_sum, gdl_sum) = (charb_sum.expect("non-empty"), gdl_sum.expect("non-empty"));
    let inv_n = T::from_f64(1.0 / batch_size as f64);
    let data = if config.lambda_gdl == 0.0 {
        charb_sum
    } else {
        let weighted = graph.scale(gdl_sum, T::from_f64(config.lambda_gdl));
        graph.add(charb_sum, weighted)?
    };
    let total = graph.scale(data, inv_n);
    let charbonnier = graph.scale(charb_sum, inv_n);
    let gdl = graph.scale(gdl_sum, inv_n);
    Ok(LossTerms {
        total,
        charbonnier,
        gdl,
    })
}
