//! Two-covariance PLDA over speaker embeddings.
//!
//! Model: `x = m + y + e` with speaker offset `y ~ N(0, B)` and residual
//! `e ~ N(0, W)`. Fit by EM; trials are scored with the log-likelihood ratio
//! of the same-speaker vs different-speaker hypotheses.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mean: DVector<f64>,
    /// Between-speaker covariance `B`.
    pub between: DMatrix<f64>,
    /// Within-speaker covariance `W`.
    pub within: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PldaFit {
    pub model: PldaModel,
    /// Total data log-likelihood after each EM iteration.
    pub loglik: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Cholesky with on-demand ridge: when the matrix is not positive definite,
/// `delta * I` is added (delta = 1e-6 * trace / dim, escalating tenfold).
fn ridge_cholesky(
    m: &DMatrix<f64>,
    what: &str,
    warnings: &mut Vec<String>,
) -> Result<(Cholesky<f64, nalgebra::Dyn>, DMatrix<f64>)> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok((ch, m.clone()));
    }
    let dim = m.nrows();
    let mut delta = (1e-6 * m.trace() / dim as f64).max(1e-9);
    for _ in 0..12 {
        let ridged = m + DMatrix::identity(dim, dim) * delta;
        if let Some(ch) = Cholesky::new(ridged.clone()) {
            warnings.push(format!("{what} covariance singular; ridge {delta:.3e} applied"));
            return Ok((ch, ridged));
        }
        delta *= 10.0;
    }
    Err(Error::Evaluation(format!(
        "{what} covariance not positive definite even after ridging"
    )))
}

fn ln_det(ch: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

struct SpeakerGroup {
    count: f64,
    mean: DVector<f64>,
    /// Scatter of deviations around the group mean.
    scatter: DMatrix<f64>,
}

/// Total log-likelihood of the grouped data under (m, B, W).
fn log_likelihood(
    groups: &[SpeakerGroup],
    mean: &DVector<f64>,
    between: &DMatrix<f64>,
    within: &DMatrix<f64>,
    warnings: &mut Vec<String>,
) -> Result<f64> {
    let dim = mean.len() as f64;
    let (w_ch, _) = ridge_cholesky(within, "within", warnings)?;
    let ln_det_w = ln_det(&w_ch);
    let w_inv = w_ch.inverse();
    let mut ll = 0.0;
    for g in groups {
        let n = g.count;
        let cov = between * n + within;
        let (ch, _) = ridge_cholesky(&cov, "group", warnings)?;
        let centered = &g.mean - mean;
        let solved = ch.solve(&centered);
        ll += -0.5 * (dim * LN_2PI + ln_det(&ch) + n * centered.dot(&solved));
        ll += -0.5 * ((n - 1.0) * (dim * LN_2PI + ln_det_w) + (&w_inv * &g.scatter).trace());
    }
    Ok(ll)
}

/// Fits the two-covariance model by EM.
///
/// `labeled` pairs each embedding vector with its speaker id. Requires at
/// least two speakers and at least one speaker with two embeddings; with
/// one embedding per speaker everywhere the within covariance falls back to
/// a ridge floor (recorded as a warning).
pub fn plda_fit(labeled: &[(Vec<f64>, String)], n_iter: usize) -> Result<PldaFit> {
    let dim = labeled
        .first()
        .map(|(v, _)| v.len())
        .ok_or_else(|| Error::EmptyDataset("no embeddings for PLDA".into()))?;
    if labeled.iter().any(|(v, _)| v.len() != dim) {
        return Err(Error::Dimension("embedding widths differ".into()));
    }

    let mut by_speaker: std::collections::BTreeMap<&str, Vec<&Vec<f64>>> = Default::default();
    for (v, s) in labeled {
        by_speaker.entry(s).or_default().push(v);
    }
    if by_speaker.len() < 2 {
        return Err(Error::Config("PLDA needs at least two speakers".into()));
    }
    let mut warnings = Vec::new();
    if !by_speaker.values().any(|v| v.len() >= 2) {
        warnings.push(
            "every speaker has a single embedding; within covariance uses the ridge floor"
                .to_string(),
        );
    }

    let n_total = labeled.len() as f64;
    let mut mean = DVector::zeros(dim);
    for (v, _) in labeled {
        mean += DVector::from_column_slice(v);
    }
    mean /= n_total;

    let groups: Vec<SpeakerGroup> = by_speaker
        .values()
        .map(|vs| {
            let count = vs.len() as f64;
            let mut gm = DVector::zeros(dim);
            for v in vs {
                gm += DVector::from_column_slice(v);
            }
            gm /= count;
            let mut scatter = DMatrix::zeros(dim, dim);
            for v in vs {
                let d = DVector::from_column_slice(v) - &gm;
                scatter += &d * d.transpose();
            }
            SpeakerGroup {
                count,
                mean: gm,
                scatter,
            }
        })
        .collect();
    let n_speakers = groups.len() as f64;

    // moment initialization: between = scatter of group means, within =
    // pooled residual scatter
    let mut between = DMatrix::zeros(dim, dim);
    let mut within = DMatrix::zeros(dim, dim);
    for g in &groups {
        let d = &g.mean - &mean;
        between += &d * d.transpose();
        within += &g.scatter;
    }
    between /= n_speakers;
    within /= n_total;
    let floor = |m: &mut DMatrix<f64>, what: &str, warnings: &mut Vec<String>| -> Result<()> {
        let (_, ridged) = ridge_cholesky(m, what, warnings)?;
        *m = ridged;
        Ok(())
    };
    floor(&mut between, "between", &mut warnings)?;
    floor(&mut within, "within", &mut warnings)?;

    let mut loglik = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        // E-step
        let (b_ch, _) = ridge_cholesky(&between, "between", &mut warnings)?;
        let (w_ch, _) = ridge_cholesky(&within, "within", &mut warnings)?;
        let b_inv = b_ch.inverse();
        let w_inv = w_ch.inverse();

        let mut new_between = DMatrix::zeros(dim, dim);
        let mut new_within = DMatrix::zeros(dim, dim);
        for g in &groups {
            let precision = &b_inv + &w_inv * g.count;
            let (p_ch, _) = ridge_cholesky(&precision, "posterior", &mut warnings)?;
            let post_cov = p_ch.inverse();
            let rhs = &w_inv * (&g.mean - &mean) * g.count;
            let y_hat = &post_cov * rhs;

            new_between += &y_hat * y_hat.transpose() + &post_cov;
            // within update: residual scatter around (mean + y_hat)
            let resid_mean = &g.mean - &mean - &y_hat;
            new_within += &g.scatter
                + (&resid_mean * resid_mean.transpose() + &post_cov) * g.count;
        }
        between = new_between / n_speakers;
        within = new_within / n_total;
        floor(&mut between, "between", &mut warnings)?;
        floor(&mut within, "within", &mut warnings)?;

        loglik.push(log_likelihood(&groups, &mean, &between, &within, &mut warnings)?);
    }

    Ok(PldaFit {
        model: PldaModel {
            mean,
            between,
            within,
        },
        loglik,
        warnings,
    })
}

/// Precomputed factorizations for scoring many trials.
pub struct PldaScorer {
    mean: DVector<f64>,
    same: Cholesky<f64, nalgebra::Dyn>,
    diff: Cholesky<f64, nalgebra::Dyn>,
    ln_det_same: f64,
    ln_det_diff: f64,
    dim: usize,
}

impl PldaModel {
    pub fn scorer(&self) -> Result<PldaScorer> {
        let dim = self.mean.len();
        let total = &self.between + &self.within;
        let mut joint_same = DMatrix::zeros(2 * dim, 2 * dim);
        let mut joint_diff = DMatrix::zeros(2 * dim, 2 * dim);
        joint_same.view_mut((0, 0), (dim, dim)).copy_from(&total);
        joint_same.view_mut((dim, dim), (dim, dim)).copy_from(&total);
        joint_same
            .view_mut((0, dim), (dim, dim))
            .copy_from(&self.between);
        joint_same
            .view_mut((dim, 0), (dim, dim))
            .copy_from(&self.between);
        joint_diff.view_mut((0, 0), (dim, dim)).copy_from(&total);
        joint_diff.view_mut((dim, dim), (dim, dim)).copy_from(&total);

        let mut warnings = Vec::new();
        let (same, _) = ridge_cholesky(&joint_same, "same-speaker joint", &mut warnings)?;
        let (diff, _) = ridge_cholesky(&joint_diff, "different-speaker joint", &mut warnings)?;
        let ln_det_same = ln_det(&same);
        let ln_det_diff = ln_det(&diff);
        Ok(PldaScorer {
            mean: self.mean.clone(),
            same,
            diff,
            ln_det_same,
            ln_det_diff,
            dim,
        })
    }
}

impl PldaScorer {
    /// Log-likelihood ratio: same-speaker vs different-speaker hypotheses.
    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.dim || b.len() != self.dim {
            return Err(Error::Dimension(format!(
                "embedding widths {}/{} vs model {}",
                a.len(),
                b.len(),
                self.dim
            )));
        }
        let mut stacked = DVector::zeros(2 * self.dim);
        for i in 0..self.dim {
            stacked[i] = a[i] - self.mean[i];
            stacked[self.dim + i] = b[i] - self.mean[i];
        }
        let q_same = stacked.dot(&self.same.solve(&stacked));
        let q_diff = stacked.dot(&self.diff.solve(&stacked));
        Ok(-0.5 * (q_same - q_diff) - 0.5 * (self.ln_det_same - self.ln_det_diff))
    }
}

/// One-shot scoring convenience.
pub fn plda_score(model: &PldaModel, a: &[f64], b: &[f64]) -> Result<f64> {
    model.scorer()?.score(a, b)
}
