//! Logistic-regression verifier over the fixed evidence feature schema.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{VerifyError, FEATURE_COUNT, FEATURE_SCHEMA_VERSION, SCORE_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVerifierModel {
    pub schema_version: u32,
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(skip, default = "trained_when_loaded")]
    pub trained: bool,
}

fn trained_when_loaded() -> bool {
    true
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl FeatureVerifierModel {
    pub fn untrained(dim: usize) -> Self {
        Self {
            schema_version: FEATURE_SCHEMA_VERSION,
            weights: vec![0.0; dim],
            bias: 0.0,
            trained: false,
        }
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64, VerifyError> {
        if !self.trained {
            return Err(VerifyError::Untrained);
        }
        if features.len() != self.weights.len() {
            return Err(VerifyError::FeatureLength {
                expected: self.weights.len(),
                got: features.len(),
            });
        }
        let z: f64 = self.bias + self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>();
        Ok(sigmoid(z))
    }

    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        let bytes = fs::read(path).map_err(|e| VerifyError::Model(format!("{}: {e}", path.display())))?;
        let model: Self =
            serde_json::from_slice(&bytes).map_err(|e| VerifyError::Model(format!("{}: {e}", path.display())))?;
        if model.schema_version != FEATURE_SCHEMA_VERSION {
            return Err(VerifyError::Model(format!(
                "schema version {} (expected {FEATURE_SCHEMA_VERSION})",
                model.schema_version
            )));
        }
        if model.weights.len() != FEATURE_COUNT {
            return Err(VerifyError::Model(format!(
                "{} weights (expected {FEATURE_COUNT})",
                model.weights.len()
            )));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Weight indices clamped at zero after every step.
    pub non_negative: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 2000,
            l2: 1e-3,
            seed: 17,
            non_negative: SCORE_FEATURES.to_vec(),
        }
    }
}

pub type Example = (Vec<f64>, u8);

/// Mean cross-entropy plus `l2 / 2 * |w|^2`, with its gradient.
///
/// Returns `(loss, d loss / d weights, d loss / d bias)`.
pub fn loss_and_gradient(weights: &[f64], bias: f64, data: &[Example], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut grad_bias = 0.0;
    for (x, y) in data {
        let y = f64::from(*y);
        let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        loss += softplus(z) - y * z;
        let residual = sigmoid(z) - y;
        grad.iter_mut().zip(x).for_each(|(g, v)| *g += residual * v);
        grad_bias += residual;
    }
    loss /= n;
    grad_bias /= n;
    for (g, w) in grad.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, grad, grad_bias)
}

/// Full-batch gradient descent on the regularized logistic loss.
///
/// Returns the trained model and its final training loss.
pub fn train_verifier(data: &[Example], config: &TrainConfig) -> Result<(FeatureVerifierModel, f64), VerifyError> {
    let Some((first, _)) = data.first() else {
        return Err(VerifyError::Dataset("dataset is empty".into()));
    };
    let dim = first.len();
    if data.iter().any(|(x, _)| x.len() != dim) {
        return Err(VerifyError::Dataset("feature vectors differ in length".into()));
    }
    if data.iter().any(|(x, _)| x.iter().any(|v| !v.is_finite())) {
        return Err(VerifyError::Dataset("non-finite feature value".into()));
    }
    let positives = data.iter().filter(|(_, y)| *y == 1).count();
    if data.iter().any(|(_, y)| *y > 1) {
        return Err(VerifyError::Dataset("labels must be 0 or 1".into()));
    }
    if positives == 0 || positives == data.len() {
        return Err(VerifyError::Dataset("both labels must be present".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let mut bias = 0.0;
    for &j in &config.non_negative {
        if let Some(w) = weights.get_mut(j) {
            *w = w.max(0.0);
        }
    }
    for _ in 0..config.epochs {
        let (_, grad, grad_bias) = loss_and_gradient(&weights, bias, data, config.l2);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
        bias -= config.learning_rate * grad_bias;
        for &j in &config.non_negative {
            if let Some(w) = weights.get_mut(j) {
                *w = w.max(0.0);
            }
        }
    }
    let (loss, _, _) = loss_and_gradient(&weights, bias, data, config.l2);
    Ok((
        FeatureVerifierModel {
            schema_version: FEATURE_SCHEMA_VERSION,
            weights,
            bias,
            trained: true,
        },
        loss,
    ))
}
