use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ActionSet, BoundedSmooth, Coefficients, LqParams, ModelSpec};
use crate::chain::GeneratorMatrix;
use crate::error::{Error, Result};
use crate::particle::InitialLaw;

/// Parametric coefficient family selected by a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Lq(LqParams),
    BoundedSmooth(BoundedSmooth),
}

/// On-disk model description. Regimes are labelled `1..=d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub family: FamilySpec,
    pub generator: GeneratorMatrix,
    pub modulation: Vec<f64>,
    #[serde(default = "one")]
    pub initial_regime: usize,
    pub action_set: ActionSet,
    pub initial_law: InitialLaw,
    #[serde(default)]
    pub documented_deviations: Vec<String>,
}

fn one() -> usize {
    1
}

impl ModelFile {
    pub fn build(&self) -> Result<ModelSpec> {
        if self.initial_regime == 0 {
            return Err(Error::InvalidModel("initial_regime is 1-based".into()));
        }
        let coeffs: Arc<dyn Coefficients> = match self.family {
            FamilySpec::Lq(p) => Arc::new(p),
            FamilySpec::BoundedSmooth(p) => Arc::new(p),
        };
        self.initial_law.validate()?;
        Ok(ModelSpec::new(
            coeffs,
            self.modulation.clone(),
            self.generator.clone(),
            self.initial_regime - 1,
            self.action_set,
        )?
        .with_deviations(self.documented_deviations.clone()))
    }

    pub fn lq_params(&self) -> Option<LqParams> {
        match self.family {
            FamilySpec::Lq(p) => Some(p),
            _ => None,
        }
    }
}
