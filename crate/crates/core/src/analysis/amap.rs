use crate::error::Result;
use crate::model::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel-wise L2 norm of a `[N, C, T]` feature map, giving `[N, T]`.
pub fn l2_over_channels<S: Scalar>(features: &Tensor<S>) -> Result<Vec<Vec<f64>>> {
    let (n, c, t) = features.nct()?;
    let d = features.data();
    Ok((0..n)
        .map(|b| {
            (0..t)
                .map(|s| {
                    (0..c)
                        .map(|ch| d[(b * c + ch) * t + s].as_f64().powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect())
}

/// Eval-mode activation magnitude of the final backend block, one row of
/// `T` values per sample.
pub fn activation_map<S: Scalar>(net: &Network<S>, features: &Tensor<S>) -> Result<Vec<Vec<f64>>> {
    l2_over_channels(&net.backend_features(features)?)
}

pub fn amap_csv(rows: &[Vec<f64>]) -> String {
    let len = rows.first().map_or(0, |r| r.len());
    let mut s = String::from("sample");
    for t in 0..len {
        s.push_str(&format!(",t{t}"));
    }
    s.push('\n');
    for (i, row) in rows.iter().enumerate() {
        s.push_str(&i.to_string());
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}
