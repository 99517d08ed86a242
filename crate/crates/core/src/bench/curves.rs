use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::CertificationOutput;

pub const CURVE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub count: usize,
    pub eps_min: f64,
    pub eps_max: f64,
    pub mean_epsilon_x: f64,
    pub mean_width: f64,
}

/// Sorts certified outputs by `ε_x` and cuts them into `bins` groups of
/// near-equal size (rank-based quantile bins); reports per-bin means of
/// `ε_x` and `S^u − S^l`. Abstained outputs are skipped.
pub fn bound_width_curve_with(certs: &[CertificationOutput], bins: usize) -> Result<Vec<CurveBin>> {
    let mut pts: Vec<(f64, f64)> =
        certs.iter().filter_map(|c| c.certified().map(|c| (c.epsilon_x, c.bounds.width()))).collect();
    if bins == 0 || pts.len() < bins {
        return Err(Error::InvalidArgument(format!(
            "need at least {bins} certified outputs for {bins} bins, got {}",
            pts.len()
        )));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    Ok((0..bins)
        .map(|b| {
            let group = &pts[b * n / bins..(b + 1) * n / bins];
            let m = group.len() as f64;
            CurveBin {
                count: group.len(),
                eps_min: group[0].0,
                eps_max: group[group.len() - 1].0,
                mean_epsilon_x: group.iter().map(|p| p.0).sum::<f64>() / m,
                mean_width: group.iter().map(|p| p.1).sum::<f64>() / m,
            }
        })
        .collect())
}

pub fn bound_width_curve(certs: &[CertificationOutput]) -> Result<Vec<CurveBin>> {
    bound_width_curve_with(certs, CURVE_BINS)
}

/// Plot-ready CSV, one row per `(label, bin)`.
pub fn curves_csv(curves: &[(String, Vec<CurveBin>)]) -> String {
    let mut out = String::from("label,bin,count,eps_min,eps_max,mean_epsilon_x,mean_width\n");
    for (label, bins) in curves {
        for (i, b) in bins.iter().enumerate() {
            out.push_str(&format!(
                "{label},{i},{},{},{},{},{}\n",
                b.count, b.eps_min, b.eps_max, b.mean_epsilon_x, b.mean_width
            ));
        }
    }
    out
}
