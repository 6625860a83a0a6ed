use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the per-epoch metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss: f64,
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall_accuracy: f64,
    /// Mean of per-class recalls over classes present in the labels.
    pub mean_class_accuracy: f64,
    /// `None` for classes absent from the labels.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub samples: usize,
}

pub fn accuracy_metrics(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<AccuracyReport> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension {
            op: "accuracy",
            lhs: vec![preds.len()],
            rhs: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::arg("accuracy of an empty set"));
    }
    let mut total = vec![0usize; num_classes];
    let mut right = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::Index {
                op: "accuracy label",
                index: l,
                extent: num_classes,
            });
        }
        total[l] += 1;
        if p == l {
            right[l] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = total
        .iter()
        .zip(&right)
        .map(|(&t, &r)| (t > 0).then(|| r as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(AccuracyReport {
        overall_accuracy: right.iter().sum::<usize>() as f64 / labels.len() as f64,
        mean_class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        per_class_accuracy: per_class,
        samples: labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = accuracy_metrics(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.mean_class_accuracy, 1.0);
    }

    #[test]
    fn imbalanced_hand_case() {
        let mut labels = vec![0; 10];
        labels.extend([1, 1]);
        let preds = vec![0; 12];
        let r = accuracy_metrics(&preds, &labels, 2).unwrap();
        assert!((r.overall_accuracy - 10.0 / 12.0).abs() < 1e-15);
        assert!((r.mean_class_accuracy - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_class_macc_equals_oa() {
        let r = accuracy_metrics(&[2, 0, 2, 2], &[2, 2, 2, 2], 4).unwrap();
        assert_eq!(r.mean_class_accuracy, r.overall_accuracy);
        assert_eq!(r.per_class_accuracy[0], None);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(accuracy_metrics(&[], &[], 2).is_err());
    }
}
