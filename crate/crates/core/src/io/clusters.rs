//! Observation clusters from CSV (`cluster_id,x_star_mm,y_mm`) and the JSON
//! report of a noise-law fit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{estimate_clusters, fit_noise_params, EstimatorOptions, ObservationCluster, SolvePath};
use crate::forward::{NoiseFamily, QuantizerParams};

#[derive(Debug, Deserialize)]
struct Row {
    cluster_id: String,
    x_star_mm: f64,
    y_mm: f64,
}

/// Clusters in order of first appearance. Every row of a cluster must repeat
/// the same ground-truth depth.
pub fn read_clusters(path: impl AsRef<Path>) -> Result<Vec<(String, ObservationCluster<f64>)>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, None, format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| Error::parse(path, Some(1), e.to_string()))?.clone();
    for need in ["cluster_id", "x_star_mm", "y_mm"] {
        if !headers.iter().any(|h| h == need) {
            return Err(Error::parse(path, Some(1), format!("missing column {need}")));
        }
    }
    let mut out: Vec<(String, f64, Vec<f64>)> = Vec::new();
    for rec in reader.deserialize::<Row>() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            let msg = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            };
            Error::parse(path, line, msg)
        })?;
        if !(rec.x_star_mm > 0.0 && rec.x_star_mm.is_finite() && rec.y_mm > 0.0 && rec.y_mm.is_finite()) {
            return Err(Error::parse(path, None, format!("depths of cluster {} must be positive", rec.cluster_id)));
        }
        match out.iter_mut().find(|c| c.0 == rec.cluster_id) {
            Some(c) if c.1 != rec.x_star_mm => {
                return Err(Error::parse(
                    path,
                    None,
                    format!("cluster {} has two ground-truth depths, {} and {}", c.0, c.1, rec.x_star_mm),
                ))
            }
            Some(c) => c.2.push(rec.y_mm),
            None => out.push((rec.cluster_id, rec.x_star_mm, vec![rec.y_mm])),
        }
    }
    if out.is_empty() {
        return Err(Error::parse(path, None, "no observations"));
    }
    out.into_iter()
        .map(|(id, x, ys)| Ok((id, ObservationCluster::new(x, ys)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub id: String,
    pub x_star_mm: f64,
    pub samples: usize,
    pub sigma_mm: Option<f64>,
    /// Search bracket of the estimate.
    pub bracket_mm: Option<[f64; 2]>,
    /// `sigma* - sigma(x*)` under the fitted law.
    pub residual_mm: Option<f64>,
    pub solver: Option<String>,
    pub plateau: bool,
    pub boundary: bool,
    pub multimodal: bool,
    pub error: Option<String>,
}

/// Fitted law plus the per-cluster estimates it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub alpha: f64,
    pub mu: f64,
    pub kappa: f64,
    pub family: NoiseFamily,
    pub iterations: usize,
    pub alpha_at_bound: bool,
    pub clusters: Vec<ClusterReport>,
}

impl FitReport {
    /// Estimates every cluster's `sigma`, then fits the noise law to the
    /// successful estimates. Failed clusters are reported and left out of the fit.
    pub fn fit(
        clusters: &[(String, ObservationCluster<f64>)],
        q: &QuantizerParams<f64>,
        family: NoiseFamily,
        opts: &EstimatorOptions,
    ) -> Result<Self> {
        let plain: Vec<ObservationCluster<f64>> = clusters.iter().map(|c| c.1.clone()).collect();
        let estimates = estimate_clusters(&plain, q, opts);
        let points: Vec<(f64, f64)> = plain
            .iter()
            .zip(&estimates)
            .filter_map(|(c, e)| e.as_ref().ok().map(|e| (c.ground_truth, e.sigma)))
            .collect();
        let fit = fit_noise_params(&points, family)?;
        let mut residuals = fit.residuals.iter();
        let reports = clusters
            .iter()
            .zip(&estimates)
            .map(|((id, c), e)| {
                let mut r = ClusterReport {
                    id: id.clone(),
                    x_star_mm: c.ground_truth,
                    samples: c.samples.len(),
                    sigma_mm: None,
                    bracket_mm: None,
                    residual_mm: None,
                    solver: None,
                    plateau: false,
                    boundary: false,
                    multimodal: false,
                    error: None,
                };
                match e {
                    Ok(e) => {
                        r.sigma_mm = Some(e.sigma);
                        r.bracket_mm = Some([e.bracket_lo, e.bracket_hi]);
                        r.residual_mm = residuals.next().copied();
                        r.solver = Some(
                            match e.path {
                                SolvePath::Newton => "newton",
                                SolvePath::GoldenSection => "golden-section",
                                SolvePath::Direct => "direct",
                            }
                            .to_string(),
                        );
                        r.plateau = e.flags.plateau;
                        r.boundary = e.flags.boundary;
                        r.multimodal = e.flags.multimodal;
                    }
                    Err(err) => r.error = Some(err.to_string()),
                }
                r
            })
            .collect();
        Ok(FitReport {
            alpha: fit.model.alpha,
            mu: fit.model.mu,
            kappa: fit.model.kappa,
            family,
            iterations: fit.iterations,
            alpha_at_bound: fit.alpha_at_bound,
            clusters: reports,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
