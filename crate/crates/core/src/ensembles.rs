//! Two-model ensembles in output space and weight space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::SampleBatch;
use crate::models::{EffectiveCoeffs, FeatureMask, LinearModel, Logits, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Average of the component logits.
    Ose,
    /// `¼ (W1 + W2)ᵀ x (Φ1 + Φ2)`.
    Wse,
    /// `¼ (W1 + λW2)ᵀ x (Φ1 + λΦ2)`.
    WseLambda,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    kind: EnsembleKind,
    components: [LinearModel; 2],
    lambda: f64,
    // The single linear model a weight-space ensemble collapses to.
    composed: Option<LinearModel>,
}

impl EnsembleModel {
    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }
    pub fn components(&self) -> &[LinearModel; 2] {
        &self.components
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn composed(&self) -> Option<&LinearModel> {
        self.composed.as_ref()
    }
}

fn check_pair(m1: &LinearModel, m2: &LinearModel) -> Result<()> {
    if m1.w().shape() != m2.w().shape() || m1.mask().len() != m2.mask().len() || m1.mask().d_v() != m2.mask().d_v() {
        return Err(Error::Mismatch("ensemble components come from different feature specs".into()));
    }
    Ok(())
}

pub fn ose(m1: &LinearModel, m2: &LinearModel) -> Result<EnsembleModel> {
    check_pair(m1, m2)?;
    Ok(EnsembleModel {
        kind: EnsembleKind::Ose,
        components: [m1.clone(), m2.clone()],
        lambda: 1.0,
        composed: None,
    })
}

pub fn wse(m1: &LinearModel, m2: &LinearModel) -> Result<EnsembleModel> {
    let mut e = weight_space(m1, m2, 1.0)?;
    e.kind = EnsembleKind::Wse;
    Ok(e)
}

pub fn wse_imbalanced(m1: &LinearModel, m2: &LinearModel, lambda: f64) -> Result<EnsembleModel> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    weight_space(m1, m2, lambda)
}

fn weight_space(m1: &LinearModel, m2: &LinearModel, lambda: f64) -> Result<EnsembleModel> {
    check_pair(m1, m2)?;
    // Component scales are folded into the classifiers; the featurizers are
    // summed raw.
    let w = m1.w() * m1.scale() + m2.w() * (lambda * m2.scale());
    let mask = m1.mask().combine(m2.mask(), lambda)?;
    let coeffs = match (m1.latent_coeffs(), m2.latent_coeffs()) {
        (Some(a), Some(b)) => Some(
            a.iter()
                .zip(b)
                .map(|(x, y)| m1.scale() * x + lambda * m2.scale() * y)
                .collect(),
        ),
        _ => None,
    };
    let composed = LinearModel::build(mask, w, 0.25, coeffs)?;
    Ok(EnsembleModel {
        kind: EnsembleKind::WseLambda,
        components: [m1.clone(), m2.clone()],
        lambda,
        composed: Some(composed),
    })
}

impl Predictor for EnsembleModel {
    fn k(&self) -> usize {
        self.components[0].k()
    }

    fn logits(&self, batch: &SampleBatch) -> Result<Logits> {
        match &self.composed {
            Some(m) => m.logits(batch),
            None => {
                let a = self.components[0].logits(batch)?;
                let b = self.components[1].logits(batch)?;
                a.blend(0.5, &b, 0.5)
            }
        }
    }

    /// Normalized by the first component's scale times the composition
    /// factor (½ for OSE, ¼ for weight space), so unit-coefficient
    /// components give 1/2 (OSE) and 1/4 (WSE) on shared features.
    fn effective_coeffs(&self) -> Result<EffectiveCoeffs> {
        let norm = self.components[0].scale();
        match &self.composed {
            Some(m) => {
                let mut e = m.effective_coeffs()?;
                e.c.iter_mut().for_each(|c| *c /= norm);
                Ok(e)
            }
            None => {
                let a = self.components[0].effective_coeffs()?;
                let b = self.components[1].effective_coeffs()?;
                let (s1, s2) = (self.components[0].scale(), self.components[1].scale());
                let c = a.c.iter().zip(&b.c).map(|(x, y)| (s1 * x + s2 * y) / norm).collect();
                Ok(EffectiveCoeffs { c, d_v: a.d_v })
            }
        }
    }

    fn masks(&self) -> Vec<&FeatureMask> {
        let mut v = vec![self.components[0].mask(), self.components[1].mask()];
        if let Some(m) = &self.composed {
            v.push(m.mask());
        }
        v
    }
}
