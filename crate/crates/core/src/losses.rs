//! Task losses and the constants that minimise them over constant predictors.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Square-root least squares, `||Y - mu||_2`.
    Regression,
    /// Softmax cross-entropy summed over observations.
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub output_dim: usize,
}

impl TaskSpec {
    pub fn regression() -> Self {
        TaskSpec {
            kind: TaskKind::Regression,
            output_dim: 1,
        }
    }

    pub fn classification(classes: usize) -> Result<Self> {
        let task = TaskSpec {
            kind: TaskKind::Classification,
            output_dim: classes,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TaskKind::Regression if self.output_dim != 1 => Err(Error::Domain(format!(
                "regression has a single output, got {}",
                self.output_dim
            ))),
            TaskKind::Classification if self.output_dim < 2 => Err(Error::Domain(format!(
                "classification needs at least two classes, got {}",
                self.output_dim
            ))),
            _ => Ok(()),
        }
    }

    /// Checks that `y` has `output_dim` columns and, for classification,
    /// one-hot rows.
    pub fn check_targets(&self, y: ArrayView2<f64>) -> Result<()> {
        if y.ncols() != self.output_dim {
            return Err(Error::Shape(format!(
                "targets have {} columns, task expects {}",
                y.ncols(),
                self.output_dim
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("targets contain non-finite values".into()));
        }
        if self.kind == TaskKind::Classification {
            for (i, row) in y.rows().into_iter().enumerate() {
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::Data(format!("target row {i} is not one-hot")));
                }
            }
        }
        Ok(())
    }
}

fn check_pair(task: &TaskSpec, predictions: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if predictions.dim() != y.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            predictions.dim(),
            y.dim()
        )));
    }
    if predictions.ncols() != task.output_dim {
        return Err(Error::Shape(format!(
            "predictions have {} columns, task expects {}",
            predictions.ncols(),
            task.output_dim
        )));
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite prediction", f64::NAN));
    }
    Ok(())
}

/// Loss of `predictions` against `y` (both `n x m`).
pub fn loss(task: &TaskSpec, predictions: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    check_pair(task, predictions, y)?;
    Ok(match task.kind {
        TaskKind::Regression => residual_norm(predictions, y),
        TaskKind::Classification => cross_entropy(predictions, y),
    })
}

/// Loss value and its gradient with respect to the predictions.
pub fn loss_and_gradient(
    task: &TaskSpec,
    predictions: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    check_pair(task, predictions, y)?;
    match task.kind {
        TaskKind::Regression => {
            let norm = residual_norm(predictions, y);
            if norm == 0.0 {
                return Err(Error::PerfectFit);
            }
            let grad = (&predictions - &y) / norm;
            Ok((norm, grad))
        }
        TaskKind::Classification => {
            let mut grad = Array2::zeros(predictions.dim());
            let mut total = 0.0;
            for ((logits, target), mut g) in predictions
                .rows()
                .into_iter()
                .zip(y.rows())
                .zip(grad.rows_mut())
            {
                let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let mut sum = 0.0;
                for (gi, &z) in g.iter_mut().zip(logits.iter()) {
                    *gi = (z - max).exp();
                    sum += *gi;
                }
                let lse = max + sum.ln();
                for ((gi, &z), &t) in g.iter_mut().zip(logits.iter()).zip(target.iter()) {
                    *gi = *gi / sum - t;
                    total += t * (lse - z);
                }
            }
            Ok((total, grad))
        }
    }
}

fn residual_norm(predictions: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    predictions
        .iter()
        .zip(y.iter())
        .map(|(p, t)| (t - p) * (t - p))
        .sum::<f64>()
        .sqrt()
}

fn cross_entropy(logits: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    logits
        .rows()
        .into_iter()
        .zip(y.rows())
        .map(|(z, t)| {
            let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            z.iter().zip(t.iter()).map(|(&zi, &ti)| ti * (lse - zi)).sum::<f64>()
        })
        .sum()
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Class proportions of a one-hot target matrix; empty classes are clamped
/// to `1 / (2n)` and the vector renormalised.
pub fn class_proportions(y: ArrayView2<f64>) -> Result<Array1<f64>> {
    let n = y.nrows();
    if n == 0 {
        return Err(Error::Domain("no observations".into()));
    }
    let counts = y.sum_axis(Axis(0));
    let floor = 1.0 / (2.0 * n as f64);
    let mut props = counts.mapv(|c| c / n as f64);
    let empty: Vec<usize> = props
        .iter()
        .enumerate()
        .filter(|(_, &p)| p == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !empty.is_empty() {
        log::warn!("classes {empty:?} never observed; clamping their proportion to {floor}");
        props.mapv_inplace(|p| p.max(floor));
        let total = props.sum();
        props /= total;
    }
    Ok(props)
}

/// Minimiser of the loss over constant predictors.
///
/// Regression: the sample mean. Classification: log class proportions,
/// shifted to mean zero (softmax is shift invariant).
pub fn null_constant(task: &TaskSpec, y: ArrayView2<f64>) -> Result<Array1<f64>> {
    if y.nrows() == 0 {
        return Err(Error::Domain("no observations".into()));
    }
    if y.ncols() != task.output_dim {
        return Err(Error::Shape(format!(
            "targets have {} columns, task expects {}",
            y.ncols(),
            task.output_dim
        )));
    }
    match task.kind {
        TaskKind::Regression => Ok(y.mean_axis(Axis(0)).expect("nonempty")),
        TaskKind::Classification => {
            let logp = class_proportions(y)?.mapv(f64::ln);
            let shift = logp.mean().expect("nonempty");
            Ok(logp - shift)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_hot(labels: &[usize], m: usize) -> Array2<f64> {
        let mut y = Array2::zeros((labels.len(), m));
        for (i, &l) in labels.iter().enumerate() {
            y[[i, l]] = 1.0;
        }
        y
    }

    #[test]
    fn regression_loss_examples() {
        let task = TaskSpec::regression();
        let y = array![[1.0], [2.0]];
        assert_eq!(loss(&task, y.view(), y.view()).unwrap(), 0.0);
        let pred = array![[-2.0], [-2.0]];
        assert!((loss(&task, pred.view(), y.view()).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn classification_uniform_logits() {
        let task = TaskSpec::classification(2).unwrap();
        let l = loss(&task, array![[0.0, 0.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_rejects_nan_and_shapes() {
        let task = TaskSpec::regression();
        assert!(loss(&task, array![[f64::NAN]].view(), array![[0.0]].view()).is_err());
        assert!(matches!(
            loss(&task, array![[0.0], [1.0]].view(), array![[0.0]].view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn perfect_fit_gradient_is_an_error() {
        let task = TaskSpec::regression();
        let y = array![[1.0], [3.0]];
        assert!(matches!(
            loss_and_gradient(&task, y.view(), y.view()),
            Err(Error::PerfectFit)
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let task = TaskSpec::classification(3).unwrap();
        let y = one_hot(&[0, 2, 1, 2], 3);
        let p = array![[0.1, -0.3, 0.7], [1.2, 0.0, -0.5], [0.3, 0.3, 0.3], [-1.0, 2.0, 0.5]];
        let (_, g) = loss_and_gradient(&task, p.view(), y.view()).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut plus = p.clone();
                plus[[i, j]] += h;
                let mut minus = p.clone();
                minus[[i, j]] -= h;
                let fd = (loss(&task, plus.view(), y.view()).unwrap()
                    - loss(&task, minus.view(), y.view()).unwrap())
                    / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn null_constants() {
        let task = TaskSpec::regression();
        assert_eq!(null_constant(&task, array![[1.0], [2.0], [3.0]].view()).unwrap()[0], 2.0);

        let task = TaskSpec::classification(2).unwrap();
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 50)).collect();
        let c = null_constant(&task, one_hot(&labels, 2).view()).unwrap();
        let probs = softmax(c.view().insert_axis(Axis(0)));
        assert!((probs[[0, 0]] - 0.5).abs() < 1e-15);

        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 75)).collect();
        let c = null_constant(&task, one_hot(&labels, 2).view()).unwrap();
        assert!(c.sum().abs() < 1e-15);
        let probs = softmax(c.view().insert_axis(Axis(0)));
        assert!((probs[[0, 0]] - 0.75).abs() < 1e-14);
        assert!((probs[[0, 1]] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn empty_class_is_clamped() {
        let task = TaskSpec::classification(3).unwrap();
        let y = one_hot(&[0, 1, 0, 1], 3);
        let props = class_proportions(y.view()).unwrap();
        assert!((props.sum() - 1.0).abs() < 1e-15);
        assert!(props[2] > 0.0);
        assert!(null_constant(&task, y.view()).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn null_constant_is_a_local_minimum() {
        let task = TaskSpec::regression();
        let y = array![[0.3], [1.7], [-2.0], [4.1]];
        let c = null_constant(&task, y.view()).unwrap()[0];
        let at = |v: f64| loss(&task, Array2::from_elem((4, 1), v).view(), y.view()).unwrap();
        assert!(at(c) <= at(c + 1e-2) && at(c) <= at(c - 1e-2));

        let task = TaskSpec::classification(3).unwrap();
        let y = one_hot(&[0, 0, 1, 2, 2, 2], 3);
        let c = null_constant(&task, y.view()).unwrap();
        let at = |v: &Array1<f64>| {
            let pred = Array2::from_shape_fn((6, 3), |(_, j)| v[j]);
            loss(&task, pred.view(), y.view()).unwrap()
        };
        let base = at(&c);
        for j in 0..3 {
            for delta in [-1e-2, 1e-2] {
                let mut moved = c.clone();
                moved[j] += delta;
                assert!(at(&moved) >= base);
            }
        }
    }

    #[test]
    fn regression_loss_is_positively_homogeneous() {
        let task = TaskSpec::regression();
        let y = array![[0.5], [-1.0], [2.0]];
        let zero = Array2::zeros((3, 1));
        let base = loss(&task, zero.view(), y.view()).unwrap();
        let scaled = y.mapv(|v| 3.5 * v);
        assert!((loss(&task, zero.view(), scaled.view()).unwrap() - 3.5 * base).abs() < 1e-12);
    }

    #[test]
    fn one_hot_validation() {
        let task = TaskSpec::classification(2).unwrap();
        assert!(task.check_targets(array![[1.0, 0.0], [0.0, 1.0]].view()).is_ok());
        assert!(task.check_targets(array![[1.0, 1.0]].view()).is_err());
        assert!(task.check_targets(array![[0.5, 0.5]].view()).is_err());
        assert!(TaskSpec::classification(1).is_err());
    }
}
