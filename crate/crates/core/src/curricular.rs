//! CurricularFace: a margin softmax whose hard-negative logits are reweighted
//! by a difficulty scalar `t` tracked as an EMA of positive cosines.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const COS_LIMIT: f64 = 1.0 - 1e-7;
const COS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    pub margin: f64,
    pub scale: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { margin: 0.5, scale: 64.0 }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::param(format!("margin {} outside [0, pi/2)", self.margin)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::param(format!("scale {} must be positive", self.scale)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurricularState {
    pub t: f64,
    pub ema_momentum: f64,
}

impl Default for CurricularState {
    fn default() -> Self {
        Self { t: 0.0, ema_momentum: 0.99 }
    }
}

impl CurricularState {
    pub fn new(ema_momentum: f64) -> Result<Self> {
        let s = Self { t: 0.0, ema_momentum };
        s.validate()?;
        Ok(s)
    }

    /// Momentum 1 is accepted and freezes `t`.
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_momentum > 0.0 && self.ema_momentum <= 1.0) {
            return Err(Error::param(format!("ema momentum {} outside (0, 1]", self.ema_momentum)));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::param(format!("t = {} outside [0, 1]", self.t)));
        }
        Ok(())
    }
}

/// Row-major `B x n` cosine logits with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineBatch {
    n_classes: usize,
    cosines: Vec<f64>,
    labels: Vec<usize>,
}

impl CosineBatch {
    pub fn new(n_classes: usize, cosines: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::param("a batch needs at least one class"));
        }
        if cosines.len() != labels.len() * n_classes {
            return Err(Error::param(format!(
                "{} cosines do not form {} rows of {n_classes}",
                cosines.len(),
                labels.len()
            )));
        }
        if let Some(c) = cosines.iter().find(|c| !(c.abs() <= 1.0 + COS_TOLERANCE)) {
            return Err(Error::param(format!("cosine {c} outside [-1, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::param(format!("label {l} out of range for {n_classes} classes")));
        }
        Ok(Self { n_classes, cosines, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn cosines(&self) -> &[f64] {
        &self.cosines
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.cosines[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn positive_cosines(&self) -> Vec<f64> {
        self.labels.iter().enumerate().map(|(i, &y)| self.row(i)[y]).collect()
    }
}

/// `cos(theta + m)` and its derivative with respect to `cos theta`, on the clamped cosine.
pub fn target_logit(cos_y: f64, margin: f64) -> (f64, f64) {
    let c = cos_y.clamp(-COS_LIMIT, COS_LIMIT);
    let sin = (1.0 - c * c).sqrt();
    let (sm, cm) = margin.sin_cos();
    (c * cm - sin * sm, cm + c * sm / sin)
}

/// Modulated negative cosine `N(t, c)` and its derivative in `c`.
pub fn negative_logit(target: f64, cos_j: f64, t: f64) -> (f64, f64) {
    if target >= cos_j {
        (cos_j, 1.0)
    } else {
        (cos_j * (t + cos_j), t + 2.0 * cos_j)
    }
}

fn loss_and_grad(batch: &CosineBatch, params: &LossParams, state: &CurricularState, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    state.validate()?;
    if batch.is_empty() {
        return Err(Error::param("empty batch"));
    }
    let n = batch.n_classes;
    let b = batch.len() as f64;
    let s = params.scale;
    let mut grad = if want_grad { vec![0.0; batch.cosines.len()] } else { Vec::new() };
    let mut logits = vec![0.0; n];
    let mut slopes = vec![0.0; n];
    let mut loss = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        let row = batch.row(i);
        let (target, dtarget) = target_logit(row[y], params.margin);
        for j in 0..n {
            let (v, dv) = if j == y { (target, dtarget) } else { negative_logit(target, row[j], state.t) };
            logits[j] = s * v;
            slopes[j] = s * dv;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        loss += max + sum.ln() - logits[y];
        if want_grad {
            let g = &mut grad[i * n..(i + 1) * n];
            for j in 0..n {
                let p = (logits[j] - max).exp() / sum;
                let dz = if j == y { p - 1.0 } else { p };
                g[j] = dz * slopes[j] / b;
            }
        }
    }
    Ok((loss / b, grad))
}

/// Mean loss over the batch and the state after one EMA step.
pub fn curricular_forward(batch: &CosineBatch, params: &LossParams, state: &CurricularState) -> Result<(f64, CurricularState)> {
    let (loss, _) = loss_and_grad(batch, params, state, false)?;
    Ok((loss, update_t(state, &batch.positive_cosines())))
}

/// Partial derivatives of the mean loss with respect to every cosine, with `t` held fixed.
pub fn curricular_grad(batch: &CosineBatch, params: &LossParams, state: &CurricularState) -> Result<Vec<f64>> {
    loss_and_grad(batch, params, state, true).map(|(_, g)| g)
}

/// Loss and gradient in one pass. The state is not advanced.
pub fn curricular_loss_grad(batch: &CosineBatch, params: &LossParams, state: &CurricularState) -> Result<(f64, Vec<f64>)> {
    loss_and_grad(batch, params, state, true)
}

pub fn update_t(state: &CurricularState, positive_cosines: &[f64]) -> CurricularState {
    if positive_cosines.is_empty() {
        return *state;
    }
    let mean = positive_cosines.iter().sum::<f64>() / positive_cosines.len() as f64;
    let m = state.ema_momentum;
    CurricularState {
        t: (m * state.t + (1.0 - m) * mean).clamp(0.0, 1.0),
        ema_momentum: m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn batch(n: usize, cos: &[f64], labels: &[usize]) -> CosineBatch {
        CosineBatch::new(n, cos.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn single_class_is_exactly_zero() {
        let b = batch(1, &[0.3, -0.9, 0.99], &[0, 0, 0]);
        let p = LossParams::default();
        let st = CurricularState { t: 0.4, ..Default::default() };
        assert_eq!(curricular_forward(&b, &p, &st).unwrap().0, 0.0);
        assert!(curricular_grad(&b, &p, &st).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn easy_negatives_are_plain() {
        let p = LossParams { margin: 0.5, scale: 2.0 };
        let st = CurricularState { t: 0.7, ..Default::default() };
        let b = batch(3, &[1.0, -0.2, 0.1], &[0]);
        let (target, _) = target_logit(1.0, p.margin);
        let z = [2.0 * target, 2.0 * -0.2, 2.0 * 0.1];
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        let (loss, _) = curricular_forward(&b, &p, &st).unwrap();
        assert!((loss - (lse - z[0])).abs() < 1e-12);
    }

    #[test]
    fn hard_negative_modulation() {
        let (n, _) = negative_logit(0.1, 0.8, 0.3);
        assert!((n - 0.88).abs() < 1e-15);
        assert_eq!(negative_logit(0.8, 0.8, 0.3).0, 0.8);
    }

    #[test]
    fn target_matches_angle_addition() {
        for c in [-0.9, -0.3, 0.0, 0.4, 0.95] {
            let (t, _) = target_logit(c, 0.5);
            assert!((t - (f64::acos(c) + 0.5).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        assert!(CosineBatch::new(3, vec![0.0; 3], vec![3]).is_err());
        assert!(CosineBatch::new(2, vec![0.0, 1.1], vec![0]).is_err());
        assert!(CosineBatch::new(2, vec![0.0, 1.0 + 5e-7], vec![0]).is_ok());
    }

    #[test]
    fn ema_arithmetic() {
        let st = update_t(&CurricularState::default(), &[0.5, 0.5]);
        assert!((st.t - 0.005).abs() < 1e-15);
        let frozen = CurricularState { t: 0.25, ema_momentum: 1.0 };
        assert_eq!(update_t(&frozen, &[0.9]).t, 0.25);
        assert_eq!(update_t(&st, &[]), st);
        let mut s = CurricularState::default();
        for _ in 0..5000 {
            s = update_t(&s, &[0.62]);
        }
        assert!((s.t - 0.62).abs() < 1e-12);
        for _ in 0..100 {
            s = update_t(&s, &[-0.8]);
        }
        assert!(s.t >= 0.0);
    }

    fn central_difference(b: &CosineBatch, p: &LossParams, st: &CurricularState, h: f64) -> Vec<f64> {
        (0..b.cosines().len())
            .map(|k| {
                let mut plus = b.clone();
                plus.cosines[k] += h;
                let mut minus = b.clone();
                minus.cosines[k] -= h;
                let lp = loss_and_grad(&plus, p, st, false).unwrap().0;
                let lm = loss_and_grad(&minus, p, st, false).unwrap().0;
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(31);
        let p = LossParams { margin: 0.5, scale: 8.0 };
        let mut checked = 0;
        while checked < 20 {
            let cos: Vec<f64> = (0..40).map(|_| rng.random_range(-0.95..0.95)).collect();
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..10)).collect();
            let b = batch(10, &cos, &labels);
            let st = CurricularState { t: rng.random_range(0.0..1.0), ..Default::default() };
            let near_branch = (0..4).any(|i| {
                let (target, _) = target_logit(b.row(i)[labels[i]], p.margin);
                b.row(i).iter().any(|c| (c - target).abs() < 1e-4)
            });
            if near_branch {
                continue;
            }
            let g = curricular_grad(&b, &p, &st).unwrap();
            let fd = central_difference(&b, &p, &st, 1e-6);
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            assert!(num / den < 1e-5, "relative error {}", num / den);
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn t_stays_in_unit_interval(steps in prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, 1..8), 1..40), m in 0.01f64..=1.0) {
            let mut s = CurricularState { t: 0.0, ema_momentum: m };
            for batch in &steps {
                s = update_t(&s, batch);
                prop_assert!((0.0..=1.0).contains(&s.t));
            }
        }

        #[test]
        fn larger_margin_never_lowers_loss(
            cos in prop::collection::vec(-0.9f64..0.9, 6),
            m in 0.0f64..1.2,
            dm in 0.0f64..0.2,
            t in 0.0f64..1.0,
        ) {
            let b = batch(3, &cos, &[0, 2]);
            let st = CurricularState { t, ..Default::default() };
            let lo = LossParams { margin: m, scale: 16.0 };
            let hi = LossParams { margin: m + dm, scale: 16.0 };
            prop_assume!([cos[0], cos[5]].iter().all(|c| c.acos() + hi.margin <= std::f64::consts::PI));
            let branches = |p: &LossParams| -> Vec<bool> {
                (0..2).flat_map(|i| {
                    let row = b.row(i);
                    let (target, _) = target_logit(row[b.labels()[i]], p.margin);
                    row.iter().map(move |c| target >= *c).collect::<Vec<_>>()
                }).collect()
            };
            prop_assume!(branches(&lo) == branches(&hi));
            let l0 = curricular_forward(&b, &lo, &st).unwrap().0;
            let l1 = curricular_forward(&b, &hi, &st).unwrap().0;
            prop_assert!(l1 >= l0 - 1e-12);
        }

        #[test]
        fn misclassified_positive_gradient_is_nonpositive(
            cos in prop::collection::vec(-1.0f64..=1.0, 8),
            label in 0usize..8,
            t in 0.0f64..1.0,
        ) {
            let p = LossParams::default();
            // Beyond theta + m = pi the margin target turns back upward, so the sign flips.
            prop_assume!(cos[label] > (std::f64::consts::PI - p.margin).cos());
            let b = batch(8, &cos, &[label]);
            let st = CurricularState { t, ..Default::default() };
            let (target, _) = target_logit(cos[label], p.margin);
            let max_neg = (0..8).filter(|&j| j != label).map(|j| negative_logit(target, cos[j], t).0).fold(f64::MIN, f64::max);
            prop_assume!(target < max_neg);
            let g = curricular_grad(&b, &p, &st).unwrap();
            prop_assert!(g[label] <= 0.0);
        }
    }
}
