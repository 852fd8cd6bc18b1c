//! Training losses with analytic gradients.
//!
//! Semantic head: class-weighted, label-smoothed cross-entropy whose weights
//! `w_c = (1 - X_c)^rho` come from an exponential moving average `X_c` of the
//! per-step class occupancy. Instance head: unweighted three-label
//! cross-entropy plus an L2 center-vector regression term restricted to
//! nucleus pixels.

use crate::error::{Error, Result};
use crate::imagecore::{Mask, Raster, SemanticMap};
use crate::scalar::Scalar;
use crate::targets::{CenterVectorField, ThreeLabelTarget};

/// Moving-average class occupancy used to derive loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrior<T> {
    values: Vec<T>,
    decay: T,
}

impl<T: Scalar> ClassPrior<T> {
    pub fn new(values: Vec<T>, decay: T) -> Result<Self> {
        if !(decay >= T::zero() && decay < T::one()) {
            return Err(Error::invalid(format!("EMA decay {decay} outside [0, 1)")));
        }
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::invalid("class prior values must lie in [0, 1]"));
        }
        Ok(Self { values, decay })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn decay(&self) -> T {
        self.decay
    }

    /// `X' = decay * X + (1 - decay) * batch`. Returns the new prior.
    pub fn ema_update(&self, batch_occupancy: &[T]) -> Result<Self> {
        if batch_occupancy.len() != self.values.len() {
            return Err(Error::shape(self.values.len(), batch_occupancy.len()));
        }
        let g = self.decay;
        let values = self
            .values
            .iter()
            .zip(batch_occupancy)
            .map(|(&x, &b)| {
                let b = b.max(T::zero()).min(T::one());
                (g * x + (T::one() - g) * b).max(T::zero()).min(T::one())
            })
            .collect();
        Ok(Self { values, decay: g })
    }

    pub fn csv_header(&self) -> String {
        let cols: Vec<String> = (0..self.values.len()).map(|c| format!("x_{c}")).collect();
        format!("step,{}", cols.join(","))
    }

    pub fn csv_row(&self, step: usize) -> String {
        let cols: Vec<String> = self.values.iter().map(|v| format!("{v}")).collect();
        format!("{step},{}", cols.join(","))
    }
}

/// Per-class loss weights plus the label-smoothing and optional focal terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub weights: Vec<T>,
    pub rho: T,
    pub smoothing: T,
    /// Focal modulation `(1 - p_t)^gamma`; `None` gives plain cross-entropy.
    pub focal_gamma: Option<T>,
}

impl<T: Scalar> LossWeights<T> {
    pub fn uniform(num_classes: usize, smoothing: T) -> Self {
        Self { weights: vec![T::one(); num_classes], rho: T::zero(), smoothing, focal_gamma: None }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self { weights: self.weights.iter().map(|&w| w * factor).collect(), ..self.clone() }
    }
}

/// `w_c = (1 - X_c)^rho`.
pub fn class_weights<T: Scalar>(prior: &ClassPrior<T>, rho: T, smoothing: T) -> LossWeights<T> {
    let weights = prior.values().iter().map(|&x| (T::one() - x).powf(rho)).collect();
    LossWeights { weights, rho, smoothing, focal_gamma: None }
}

/// Loss of one pixel; writes d(loss)/d(logits) scaled by `scale` into `grad`.
fn smoothed_ce_pixel<T: Scalar>(
    z: &[T],
    target: usize,
    weight: T,
    smoothing: T,
    focal: Option<T>,
    scale: T,
    grad: &mut [T],
) -> T {
    let c = z.len();
    if weight == T::zero() {
        grad.iter_mut().for_each(|g| *g = T::zero());
        return T::zero();
    }
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let sum_exp: T = z.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let off = smoothing / T::from_usize_lossy(c);
    let on = T::one() - smoothing + off;
    let mut ce = T::zero();
    for k in 0..c {
        let q = if k == target { on } else { off };
        ce -= q * (z[k] - lse);
    }
    let s_t = (z[target] - lse).exp();
    match focal {
        None => {
            for k in 0..c {
                let q = if k == target { on } else { off };
                grad[k] = scale * weight * ((z[k] - lse).exp() - q);
            }
            weight * ce
        }
        Some(gamma) => {
            let rest = T::one() - s_t;
            let modulation = rest.powf(gamma);
            // d modulation / d z_k = -gamma (1 - s_t)^(gamma - 1) s_t (delta_tk - s_k)
            let dmod_base = if rest > T::zero() { -gamma * rest.powf(gamma - T::one()) * s_t } else { T::zero() };
            for k in 0..c {
                let s_k = (z[k] - lse).exp();
                let q = if k == target { on } else { off };
                let delta = if k == target { T::one() } else { T::zero() };
                grad[k] = scale * weight * (modulation * (s_k - q) + ce * dmod_base * (delta - s_k));
            }
            weight * modulation * ce
        }
    }
}

fn check_finite<T: Scalar>(r: &Raster<T>) -> Result<()> {
    match r.data().iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Mean over pixels of the weighted, smoothed cross-entropy, and its gradient
/// with respect to `logits`.
pub fn weighted_smoothed_ce<T: Scalar>(
    logits: &Raster<T>,
    target: &SemanticMap,
    weights: &LossWeights<T>,
) -> Result<(T, Raster<T>)> {
    let c = logits.channels();
    if (logits.height(), logits.width()) != (target.height(), target.width()) {
        return Err(Error::shape(
            format!("{}x{}", target.height(), target.width()),
            format!("{}x{}", logits.height(), logits.width()),
        ));
    }
    if weights.weights.len() != c || target.num_classes() > c {
        return Err(Error::shape(format!("{c} classes"), weights.weights.len()));
    }
    if !(weights.smoothing >= T::zero() && weights.smoothing < T::one()) {
        return Err(Error::invalid("label smoothing must lie in [0, 1)"));
    }
    check_finite(logits)?;
    let n = logits.pixels();
    let scale = T::one() / T::from_usize_lossy(n.max(1));
    let mut grad = Raster::zeros(logits.height(), logits.width(), c);
    let mut total = T::zero();
    for (i, &t) in target.classes().iter().enumerate() {
        let t = t as usize;
        total += smoothed_ce_pixel(
            logits.pixel(i),
            t,
            weights.weights[t],
            weights.smoothing,
            weights.focal_gamma,
            scale,
            grad.pixel_mut(i),
        );
    }
    Ok((total * scale, grad))
}

/// Loss terms and gradients of the instance head.
#[derive(Clone, Debug)]
pub struct InstanceLoss<T> {
    pub ce: T,
    pub l2: T,
    pub total: T,
    pub grad_tri: Raster<T>,
    pub grad_vec: Raster<T>,
}

/// Three-label cross-entropy (mean over all pixels) plus the mean squared
/// center-vector error over `fg_mask`. An empty mask gives an L2 term of 0.
pub fn instance_loss<T: Scalar>(
    tri_logits: &Raster<T>,
    tri_target: &ThreeLabelTarget,
    vec_pred: &Raster<T>,
    vec_target: &CenterVectorField<T>,
    fg_mask: &Mask,
) -> Result<InstanceLoss<T>> {
    if tri_logits.channels() != 3 || vec_pred.channels() != 2 {
        return Err(Error::shape("3 tri-label planes and 2 vector planes", format!(
            "{} and {}",
            tri_logits.channels(),
            vec_pred.channels()
        )));
    }
    let vt = vec_target.raster();
    if !vec_pred.same_shape(vt)
        || (fg_mask.height(), fg_mask.width()) != (vec_pred.height(), vec_pred.width())
        || (tri_logits.height(), tri_logits.width()) != (vec_pred.height(), vec_pred.width())
    {
        return Err(Error::shape(
            format!("{}x{}", tri_logits.height(), tri_logits.width()),
            "mismatched instance-head shapes",
        ));
    }
    check_finite(vec_pred)?;
    let (ce, grad_tri) = weighted_smoothed_ce(tri_logits, tri_target.as_semantic(), &LossWeights::uniform(3, T::zero()))?;
    let fg = fg_mask.count();
    let mut grad_vec = Raster::zeros(vec_pred.height(), vec_pred.width(), 2);
    let mut l2 = T::zero();
    if fg > 0 {
        let inv = T::one() / T::from_usize_lossy(fg);
        let two = T::lit(2.0);
        for (i, &on) in fg_mask.data().iter().enumerate() {
            if !on {
                continue;
            }
            let (p, t) = (vec_pred.pixel(i), vt.pixel(i));
            let (ey, ex) = (p[0] - t[0], p[1] - t[1]);
            l2 += ey * ey + ex * ex;
            let g = grad_vec.pixel_mut(i);
            g[0] = two * ey * inv;
            g[1] = two * ex * inv;
        }
        l2 *= inv;
    }
    Ok(InstanceLoss { ce, l2, total: ce + l2, grad_tri, grad_vec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{encode_center_vectors, encode_three_label};
    use crate::InstanceMap;
    use approx::assert_relative_eq;

    #[test]
    fn ema_degenerate_decay_copies_batch() {
        let p = ClassPrior::new(vec![0.3f64, 0.7], 0.0).unwrap();
        assert_eq!(p.ema_update(&[0.9, 0.1]).unwrap().values(), &[0.9, 0.1]);
    }

    #[test]
    fn ema_fixed_point() {
        let p = ClassPrior::new(vec![0.25f64, 0.75], 0.9).unwrap();
        assert_eq!(p.ema_update(&[0.25, 0.75]).unwrap().values(), p.values());
    }

    #[test]
    fn ema_hand_value() {
        let p = ClassPrior::new(vec![0.5f64], 0.9).unwrap();
        assert_relative_eq!(p.ema_update(&[0.1]).unwrap().values()[0], 0.46, epsilon = 1e-12);
    }

    #[test]
    fn ema_rejects_bad_decay() {
        assert!(ClassPrior::new(vec![0.5f64], 1.0).is_err());
    }

    #[test]
    fn weights_from_prior() {
        let p = ClassPrior::new(vec![0.0f64, 1.0, 0.5], 0.99).unwrap();
        let w = class_weights(&p, 3.0, 0.05);
        assert_eq!(w.weights, vec![1.0, 0.0, 0.125]);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Raster::from_vec(1, 1, 2, vec![0.0f64, 0.0]).unwrap();
        let target = SemanticMap::from_vec(1, 1, 2, vec![1]).unwrap();
        let (loss, _) = weighted_smoothed_ce(&logits, &target, &LossWeights::uniform(2, 0.0)).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn zero_weight_pixel_contributes_nothing() {
        let logits = Raster::from_vec(1, 2, 2, vec![0.3f64, -1.0, 2.0, 0.1]).unwrap();
        let target = SemanticMap::from_vec(1, 2, 2, vec![0, 1]).unwrap();
        let mut w = LossWeights::uniform(2, 0.05);
        w.weights[1] = 0.0;
        let (loss, grad) = weighted_smoothed_ce(&logits, &target, &w).unwrap();
        let single = Raster::from_vec(1, 1, 2, vec![0.3f64, -1.0]).unwrap();
        let (alone, _) =
            weighted_smoothed_ce(&single, &SemanticMap::from_vec(1, 1, 2, vec![0]).unwrap(), &w).unwrap();
        assert_relative_eq!(loss, alone / 2.0, epsilon = 1e-12);
        assert_eq!(grad.pixel(1), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_logits_rejected() {
        let mut data = vec![0.0f32; 4];
        data[3] = f32::INFINITY;
        // from_vec itself refuses non-finite values, so build through data_mut
        let mut logits = Raster::zeros(1, 2, 2);
        logits.data_mut().copy_from_slice(&data);
        let target = SemanticMap::new(1, 2, 2);
        assert!(matches!(
            weighted_smoothed_ce(&logits, &target, &LossWeights::uniform(2, 0.0)),
            Err(Error::NonFinite(3))
        ));
    }

    #[test]
    fn loss_vanishes_as_true_logit_grows_without_smoothing() {
        let target = SemanticMap::from_vec(1, 1, 3, vec![2]).unwrap();
        let mut last = f64::INFINITY;
        for big in [1.0, 5.0, 10.0, 30.0] {
            let logits = Raster::from_vec(1, 1, 3, vec![0.0, 0.0, big]).unwrap();
            let (loss, _) = weighted_smoothed_ce(&logits, &target, &LossWeights::uniform(3, 0.0)).unwrap();
            assert!(loss < last);
            last = loss;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn perfect_vectors_give_zero_l2() {
        let mut inst = InstanceMap::new(5, 5);
        for (y, x) in [(1, 1), (1, 2), (2, 1), (2, 2), (3, 3)] {
            inst.set(y, x, 1);
        }
        let tri = encode_three_label(&inst, 1);
        let vecs = encode_center_vectors::<f64>(&inst);
        let logits = Raster::zeros(5, 5, 3);
        let l = instance_loss(&logits, &tri, vecs.raster(), &vecs, &inst.foreground()).unwrap();
        assert_eq!(l.l2, 0.0);
        assert!(l.grad_vec.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_pixel_unit_error() {
        let mut inst = InstanceMap::new(3, 3);
        inst.set(1, 1, 1);
        let tri = encode_three_label(&inst, 1);
        let vecs = encode_center_vectors::<f64>(&inst);
        let mut pred = Raster::zeros(3, 3, 2);
        pred.set(1, 1, 0, 1.0);
        let l = instance_loss(&Raster::zeros(3, 3, 3), &tri, &pred, &vecs, &inst.foreground()).unwrap();
        assert_relative_eq!(l.l2, 1.0);
    }

    #[test]
    fn empty_foreground_has_zero_l2() {
        let inst = InstanceMap::new(3, 3);
        let tri = encode_three_label(&inst, 1);
        let vecs = encode_center_vectors::<f64>(&inst);
        let pred = Raster::filled(3, 3, 2, 4.0);
        let l = instance_loss(&Raster::zeros(3, 3, 3), &tri, &pred, &vecs, &inst.foreground()).unwrap();
        assert_eq!(l.l2, 0.0);
        assert_relative_eq!(l.total, l.ce);
    }
}
