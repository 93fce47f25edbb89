use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dataset, Outcome, Scale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    #[default]
    Log,
    Identity,
}

/// Per-outcome transform between the original and the model scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTransform {
    pub kinds: BTreeMap<Outcome, TransformKind>,
}

impl OutcomeTransform {
    pub fn uniform(kind: TransformKind) -> Self {
        OutcomeTransform {
            kinds: Outcome::REPORTED.iter().map(|&o| (o, kind)).collect(),
        }
    }

    pub fn log() -> Self {
        Self::uniform(TransformKind::Log)
    }

    pub fn identity() -> Self {
        Self::uniform(TransformKind::Identity)
    }

    pub fn kind(&self, outcome: Outcome) -> TransformKind {
        self.kinds.get(&outcome).copied().unwrap_or_default()
    }

    pub fn forward(&self, outcome: Outcome, value: f64) -> Result<f64> {
        match self.kind(outcome) {
            TransformKind::Identity => Ok(value),
            TransformKind::Log if value > 0.0 => Ok(value.ln()),
            TransformKind::Log => Err(Error::Domain(format!(
                "log transform of non-positive {outcome} value {value}"
            ))),
        }
    }

    pub fn inverse(&self, outcome: Outcome, value: f64) -> f64 {
        match self.kind(outcome) {
            TransformKind::Identity => value,
            TransformKind::Log => value.exp(),
        }
    }
}

impl Default for OutcomeTransform {
    fn default() -> Self {
        Self::log()
    }
}

/// Replaces every plot outcome with its model-scale value.
pub fn transform_outcomes(data: &Dataset, transform: &OutcomeTransform) -> Result<Dataset> {
    if data.scale != Scale::Original {
        return Err(Error::Config("dataset is already on the model scale".into()));
    }
    let mut out = data.clone();
    for p in &mut out.plots {
        for (o, v) in p.outcomes.iter_mut() {
            *v = transform.forward(*o, *v).map_err(|e| match e {
                Error::Domain(m) => Error::validation(format!("plot '{}': {m}", p.plot_id)),
                e => e,
            })?;
        }
    }
    out.scale = Scale::Model(transform.clone());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_examples() {
        let t = OutcomeTransform::log();
        assert!((t.forward(Outcome::Gsv, 510.8).unwrap() - 6.2360).abs() < 1e-4);
        assert!(t.forward(Outcome::Gsv, 0.0).is_err());
        let id = OutcomeTransform::identity();
        assert_eq!(id.forward(Outcome::Ba, 44.8).unwrap(), 44.8);
        assert_eq!(id.inverse(Outcome::Ba, -3.0), -3.0);
    }

    proptest! {
        #[test]
        fn round_trip(v in prop::collection::vec(1e-6f64..1e6, 1..50)) {
            let t = OutcomeTransform::log();
            for x in v {
                let back = t.inverse(Outcome::Qmd, t.forward(Outcome::Qmd, x).unwrap());
                prop_assert!(((back - x) / x).abs() < 1e-12);
            }
        }
    }
}
