//! Central finite-difference check of the analytic cross-entropy gradient.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Example, LinearTextClassifier, Param};
use crate::rng;

pub const FD_STEP: f64 = 1e-5;
/// Relative errors are taken against `max(|analytic|, |numeric|, this)` so
/// that parameters with a vanishing gradient do not divide by zero.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
}

/// Compare the analytic batch gradient against central differences on a
/// sample of at least `samples` parameters: every bias, weights of features
/// active in the batch, and a few inactive weights.
pub fn gradient_check(model: &LinearTextClassifier, batch: &[Example], samples: usize, seed: u64) -> GradientCheck {
    let refs: Vec<&Example> = batch.iter().collect();
    let analytic = model.batch_gradient(&refs);
    let k = model.num_classes();
    let mut rng = rng::stream(seed, &["gradient-check".into()]);

    let mut params: Vec<Param> = (0..k).map(Param::Bias).collect();
    let active: BTreeSet<u32> = batch.iter().flat_map(|ex| ex.features.indices.iter().copied()).collect();
    let mut active_params: Vec<Param> = active
        .iter()
        .flat_map(|&j| (0..k).map(move |c| Param::Weight(j, c)))
        .collect();
    active_params.shuffle(&mut rng);
    let want_active = samples.saturating_sub(params.len()).max(samples * 3 / 4);
    params.extend(active_params.into_iter().take(want_active));
    while params.len() < samples {
        let j = rng.gen_range(0..model.dim() as u32);
        params.push(Param::Weight(j, rng.gen_range(0..k)));
    }

    let mut probe = model.clone();
    let mut max_rel: f64 = 0.0;
    for &p in &params {
        let original = *probe.param_mut(p);
        *probe.param_mut(p) = original + FD_STEP;
        let plus = probe.batch_loss(&refs);
        *probe.param_mut(p) = original - FD_STEP;
        let minus = probe.batch_loss(&refs);
        *probe.param_mut(p) = original;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic.get(p);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        max_rel = max_rel.max(rel);
    }
    GradientCheck {
        max_relative_error: max_rel,
        parameters_checked: params.len(),
    }
}
