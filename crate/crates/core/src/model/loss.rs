use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    MaskedToken,
    Classification,
    Binary,
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Summed cross-entropy over rows of `logits`, with the gradient of that sum.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows {
        return Err(Error::DimensionMismatch {
            expected: logits.rows,
            found: labels.len(),
            context: "one label per logit row".into(),
        });
    }
    let mut total = 0.0;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    for (r, &y) in labels.iter().enumerate() {
        if y >= logits.cols {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {} classes",
                logits.cols
            )));
        }
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        total += lse - row[y];
        let g = grad.row_mut(r);
        for c in 0..row.len() {
            g[c] = (row[c] - lse).exp();
        }
        g[y] -= 1.0;
    }
    Ok((total, grad))
}

/// Summed binary cross-entropy on single-logit rows, labels in {0, 1}.
pub fn binary_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.cols != 1 || labels.len() != logits.rows {
        return Err(Error::DimensionMismatch {
            expected: logits.rows,
            found: labels.len(),
            context: "binary head expects one logit per label".into(),
        });
    }
    let mut total = 0.0;
    let mut grad = Matrix::zeros(logits.rows, 1);
    for (r, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::InvalidInput(format!("binary label {y} is not 0 or 1")));
        }
        let z = logits.data[r];
        let y = y as f64;
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.data[r] = 1.0 / (1.0 + (-z).exp()) - y;
    }
    Ok((total, grad))
}

/// Mean loss over the rows of `logits` for the given head.
pub fn main_loss(logits: &Matrix, labels: &[usize], head: HeadKind) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let (sum, _) = match head {
        HeadKind::MaskedToken | HeadKind::Classification => softmax_cross_entropy(logits, labels)?,
        HeadKind::Binary => binary_cross_entropy(logits, labels)?,
    };
    Ok(sum / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 5, 17] {
            let logits = Matrix::zeros(3, k);
            let loss = main_loss(&logits, &[0, 1, k - 1], HeadKind::Classification).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let logits = Matrix::from_vec(2, 3, vec![50.0, 0.0, 0.0, 0.0, 0.0, 50.0]);
        assert!(main_loss(&logits, &[0, 2], HeadKind::MaskedToken).unwrap() < 1e-20);
        let bin = Matrix::from_vec(2, 1, vec![60.0, -60.0]);
        assert!(main_loss(&bin, &[1, 0], HeadKind::Binary).unwrap() < 1e-20);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Matrix::zeros(1, 3);
        assert!(main_loss(&logits, &[3], HeadKind::Classification).is_err());
        assert!(main_loss(&Matrix::zeros(1, 1), &[2], HeadKind::Binary).is_err());
    }

    #[test]
    fn matches_direct_formula() {
        // independent evaluation: -log(exp(z_y) / sum exp(z))
        let logits = Matrix::from_vec(2, 4, vec![0.3, -1.2, 2.5, 0.1, -0.7, 0.0, 0.9, 1.4]);
        let labels = [2, 0];
        let mut expected = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = logits.row(r);
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -(row[y].exp() / denom).ln();
        }
        expected /= 2.0;
        let got = main_loss(&logits, &labels, HeadKind::Classification).unwrap();
        assert!((got - expected).abs() < 1e-12);

        let z: f64 = 0.8;
        let p = 1.0 / (1.0 + (-z).exp());
        let bce = main_loss(&Matrix::from_vec(1, 1, vec![z]), &[0], HeadKind::Binary).unwrap();
        assert!((bce + (1.0 - p).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let logits = Matrix::from_vec(2, 3, vec![0.2, -0.4, 1.1, 0.5, 0.5, -2.0]);
        let labels = [1, 2];
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let bin = Matrix::from_vec(2, 1, vec![0.3, -1.7]);
        let (_, gb) = binary_cross_entropy(&bin, &[1, 0]).unwrap();
        let h = 1e-6;
        for j in 0..logits.data.len() {
            let mut p = logits.clone();
            p.data[j] += h;
            let mut m = logits.clone();
            m.data[j] -= h;
            let fd = (softmax_cross_entropy(&p, &labels).unwrap().0 - softmax_cross_entropy(&m, &labels).unwrap().0) / (2.0 * h);
            assert!((fd - g.data[j]).abs() < 1e-8);
        }
        for j in 0..2 {
            let mut p = bin.clone();
            p.data[j] += h;
            let mut m = bin.clone();
            m.data[j] -= h;
            let fd = (binary_cross_entropy(&p, &[1, 0]).unwrap().0 - binary_cross_entropy(&m, &[1, 0]).unwrap().0) / (2.0 * h);
            assert!((fd - gb.data[j]).abs() < 1e-8);
        }
    }
}
