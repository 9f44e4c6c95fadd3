//! The full trainable parameter set: the shared prior plus per-problem-class
//! fidelity weights, with flattening into optimizer vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DEFAULT_PEAK;
use crate::prior::{Architecture, PriorGrad, PriorProx};

/// Free-form, deterministic provenance attached to a model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub fields: BTreeMap<String, String>,
}

impl ModelMetadata {
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.fields.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(|s| s.as_str())
    }
}

/// Shared prior parameters plus the fidelity-weight table.
///
/// Fidelity weights are stored as log-values so unconstrained optimization
/// keeps them positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub prior: PriorProx,
    log_lambdas: BTreeMap<String, f64>,
    pub peak: f64,
    pub metadata: ModelMetadata,
}

impl ModelParams {
    pub fn new(prior: PriorProx) -> Self {
        ModelParams {
            prior,
            log_lambdas: BTreeMap::new(),
            peak: DEFAULT_PEAK,
            metadata: ModelMetadata::default(),
        }
    }

    pub fn init(arch: &Architecture) -> Result<Self> {
        Ok(ModelParams::new(PriorProx::init(arch)?))
    }

    /// Fidelity weight for a class, if trained.
    pub fn lambda_for(&self, class_id: &str) -> Option<f64> {
        self.log_lambdas.get(class_id).map(|l| l.exp())
    }

    pub fn set_lambda(&mut self, class_id: impl Into<String>, lambda: f64) -> Result<()> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        self.log_lambdas.insert(class_id.into(), lambda.ln());
        Ok(())
    }

    pub fn set_log_lambda(&mut self, class_id: impl Into<String>, log_lambda: f64) -> Result<()> {
        if !log_lambda.is_finite() {
            return Err(Error::Config(format!("log lambda must be finite, got {log_lambda}")));
        }
        self.log_lambdas.insert(class_id.into(), log_lambda);
        Ok(())
    }

    pub fn log_lambdas(&self) -> &BTreeMap<String, f64> {
        &self.log_lambdas
    }

    pub fn class_ids(&self) -> impl Iterator<Item = &str> {
        self.log_lambdas.keys().map(|s| s.as_str())
    }
}

/// Which part of the parameter set an optimizer run touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSelection {
    /// Trainable stage indices of the prior.
    pub stages: Vec<usize>,
    /// Whether the log-lambda table is trainable.
    pub lambdas: bool,
}

impl ParamSelection {
    pub fn all(model: &ModelParams) -> Self {
        ParamSelection {
            stages: (0..model.prior.num_stages()).collect(),
            lambdas: true,
        }
    }

    pub fn single_stage(stage: usize) -> Self {
        ParamSelection {
            stages: vec![stage],
            lambdas: true,
        }
    }
}

/// Gradient of a scalar loss over the full parameter set.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub prior: PriorGrad,
    pub log_lambdas: BTreeMap<String, f64>,
}

impl LossGrad {
    pub fn zeros_like(model: &ModelParams) -> Self {
        LossGrad {
            prior: PriorGrad::zeros_like(&model.prior),
            log_lambdas: model.log_lambdas.keys().map(|k| (k.clone(), 0.0)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &LossGrad) {
        self.prior.add_assign(&other.prior);
        for (k, v) in &other.log_lambdas {
            *self.log_lambdas.get_mut(k).expect("lambda key mismatch") += v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.prior.scale(s);
        for v in self.log_lambdas.values_mut() {
            *v *= s;
        }
    }

    /// Euclidean norm over every coordinate.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for stage in &self.prior.stages {
            for c in &stage.filter_coeffs {
                acc += c.iter().map(|v| v * v).sum::<f64>();
            }
            for w in &stage.rbf_weights {
                acc += w.iter().map(|v| v * v).sum::<f64>();
            }
        }
        acc += self.log_lambdas.values().map(|v| v * v).sum::<f64>();
        acc.sqrt()
    }
}

impl ModelParams {
    fn stage_param_len(&self) -> usize {
        let coeffs = self.prior.basis().dim();
        let kernels = self.prior.rbf_config().kernels;
        self.prior.num_filters() * (coeffs + kernels)
    }

    /// Number of scalars covered by a selection.
    pub fn selected_len(&self, sel: &ParamSelection) -> usize {
        let mut n = sel.stages.len() * self.stage_param_len();
        if sel.lambdas {
            n += self.log_lambdas.len();
        }
        n
    }

    /// Flattens the selected parameters into a vector.
    ///
    /// Layout: for each selected stage in order, for each filter: basis
    /// coefficients then rbf weights; finally the log-lambda table in
    /// class-id order.
    pub fn extract(&self, sel: &ParamSelection) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.selected_len(sel));
        for &k in &sel.stages {
            let stage = &self.prior.stages()[k];
            for (lf, psi) in stage.filters().iter().zip(stage.influences()) {
                out.extend_from_slice(lf.coeffs());
                out.extend_from_slice(psi.weights());
            }
        }
        if sel.lambdas {
            out.extend(self.log_lambdas.values());
        }
        out
    }

    /// Writes a flat vector produced by [`ModelParams::extract`] back.
    pub fn inject(&mut self, sel: &ParamSelection, values: &[f64]) -> Result<()> {
        if values.len() != self.selected_len(sel) {
            return Err(Error::dims(
                "parameter vector",
                self.selected_len(sel),
                values.len(),
            ));
        }
        let basis = self.prior.basis().clone();
        let coeff_len = basis.dim();
        let mut idx = 0;
        for &k in &sel.stages {
            let stage = &mut self.prior.stages_mut()[k];
            let n = stage.num_filters();
            for i in 0..n {
                stage.filters_mut()[i].set_coeffs(&basis, &values[idx..idx + coeff_len])?;
                idx += coeff_len;
                let weights = stage.influences_mut()[i].weights_mut();
                weights.copy_from_slice(&values[idx..idx + weights.len()]);
                idx += weights.len();
            }
        }
        if sel.lambdas {
            for v in self.log_lambdas.values_mut() {
                if !values[idx].is_finite() {
                    return Err(Error::Numerical("non-finite lambda parameter".into()));
                }
                *v = values[idx];
                idx += 1;
            }
        }
        debug_assert_eq!(idx, values.len());
        Ok(())
    }

    /// Flattens a gradient with the same layout as [`ModelParams::extract`].
    pub fn extract_grad(&self, grad: &LossGrad, sel: &ParamSelection) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.selected_len(sel));
        for &k in &sel.stages {
            let stage = &grad.prior.stages[k];
            for (c, w) in stage.filter_coeffs.iter().zip(&stage.rbf_weights) {
                out.extend_from_slice(c);
                out.extend_from_slice(w);
            }
        }
        if sel.lambdas {
            out.extend(grad.log_lambdas.values());
        }
        out
    }
}
