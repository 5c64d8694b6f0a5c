use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-normalised mean cosine similarity between per-class features of two domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub size: usize,
    /// Row-major `size x size`.
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("class");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for r in 0..self.size {
            out.push_str(labels.get(r).map(String::as_str).unwrap_or("?"));
            for c in 0..self.size {
                out.push_str(&format!(",{}", self.get(r, c)));
            }
            out.push('\n');
        }
        out
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Entry `(c, c')` is the mean cosine similarity over all pairs of a class-`c`
/// feature from domain A and a class-`c'` feature from domain B; each row is
/// then divided by its maximum (rows whose maximum is not positive are left
/// as is). Zero vectors have cosine 0 with everything.
pub fn feature_correlation(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> Result<CorrelationMatrix> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!("{} vs {} classes", a.len(), b.len())));
    }
    if let Some(c) = (0..a.len()).find(|&c| a[c].is_empty() || b[c].is_empty()) {
        return Err(Error::EmptyClass(c));
    }
    let size = a.len();
    let mut values = vec![0.0; size * size];
    for (r, fa) in a.iter().enumerate() {
        for (c, fb) in b.iter().enumerate() {
            let total: f64 = fa.iter().flat_map(|x| fb.iter().map(move |y| cosine(x, y))).sum();
            values[r * size + c] = total / (fa.len() * fb.len()) as f64;
        }
        let row = &mut values[r * size..(r + 1) * size];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > 0.0 {
            row.iter_mut().for_each(|v| *v /= max);
        }
    }
    Ok(CorrelationMatrix { size, values })
}
