use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;

use super::config::{DataSpec, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::network::{config_digest, load_checkpoint, stored_dtype, ModelConfig};
use crate::tensor::Float;
use crate::train::evaluate;

#[derive(Clone, Debug, Serialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub samples: usize,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub checkpoint: String,
    pub config_digest: String,
    pub samples: usize,
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
}

/// Evaluates a checkpoint on the test split at the precision it was saved
/// in. With `expected`, the stored config digest must match.
pub fn eval_checkpoint(
    checkpoint: &Path,
    data: &DataSpec,
    expected: Option<&ModelConfig>,
    batch: usize,
) -> Result<EvalReport> {
    let dtype = stored_dtype(BufReader::new(File::open(checkpoint)?))?;
    match dtype {
        Some(1) => eval_typed::<f64>(checkpoint, data, expected, batch),
        _ => eval_typed::<f32>(checkpoint, data, expected, batch),
    }
}

fn eval_typed<T: Float>(
    checkpoint: &Path,
    data: &DataSpec,
    expected: Option<&ModelConfig>,
    batch: usize,
) -> Result<EvalReport> {
    let net = load_checkpoint::<T>(checkpoint, expected)?;
    let mut data = data.clone();
    data.points = Some(net.config().input_points);
    let (_, test) = data.load()?;
    if test.num_classes != net.config().num_classes {
        return Err(Error::arg(format!(
            "dataset has {} classes, checkpoint was built for {}",
            test.num_classes,
            net.config().num_classes
        )));
    }
    let acc = evaluate(&net, &test, batch)?;
    let per_class = acc
        .per_class_accuracy
        .iter()
        .enumerate()
        .map(|(i, a)| ClassAccuracy {
            class: test.class_names.get(i).cloned().unwrap_or_else(|| i.to_string()),
            samples: test.samples.iter().filter(|s| s.label == i).count(),
            accuracy: *a,
        })
        .collect();
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        checkpoint: checkpoint.display().to_string(),
        config_digest: config_digest(net.config())?,
        samples: acc.samples,
        overall_accuracy: acc.overall_accuracy,
        mean_class_accuracy: acc.mean_class_accuracy,
        per_class,
    })
}
