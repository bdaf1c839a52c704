//! Post-hoc interpretation: top-attention instances and signed
//! attention-weighted squared residuals (SAsqR) per variance projection.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mil::{MilModel, ModelError, ModelFamily};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("model has no variance branch, so there are no SAsqR scores")]
    NoVarianceBranch,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Quantiles used to sample instances along the SAsqR ordering.
pub const QUANTILES: [u32; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

#[derive(Clone, Debug, PartialEq)]
pub struct TopAttention {
    /// `(instance index, attention)`, largest attention first.
    pub entries: Vec<(usize, f64)>,
    /// Fewer than the requested number of valid instances existed.
    pub truncated: bool,
}

/// The `m` largest attention weights among unmasked instances, descending,
/// ties to the lower index.
pub fn top_attention(attention: &[f64], mask: &[bool], m: usize) -> Result<TopAttention, InterpretError> {
    if m == 0 {
        return Err(InterpretError::Invalid("top_attention needs m >= 1".into()));
    }
    if mask.len() != attention.len() {
        return Err(InterpretError::Invalid(format!(
            "mask length {} for {} attention weights",
            mask.len(),
            attention.len()
        )));
    }
    let mut valid: Vec<(usize, f64)> = attention
        .iter()
        .enumerate()
        .filter(|&(i, _)| mask[i])
        .map(|(i, &a)| (i, a))
        .collect();
    valid.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let truncated = m > valid.len();
    valid.truncate(m);
    Ok(TopAttention {
        entries: valid,
        truncated,
    })
}

/// Projected values `u_j = h_jᵀ v` of each instance.
fn project(h: &Tensor, v: &[f64]) -> Result<Vec<f64>, InterpretError> {
    if h.ndim() != 2 || h.cols() != v.len() {
        return Err(InterpretError::Invalid(format!(
            "embeddings {:?} and projection of length {}",
            h.shape(),
            v.len()
        )));
    }
    Ok((0..h.rows())
        .map(|j| h.row(j).iter().zip(v).map(|(x, y)| x * y).sum())
        .collect())
}

/// Residuals `r_j = u_j - Σ_l a_l u_l` of the projected instances.
pub fn residuals(h: &Tensor, a: &[f64], v: &[f64]) -> Result<Vec<f64>, InterpretError> {
    let u = project(h, v)?;
    if a.len() != u.len() {
        return Err(InterpretError::Invalid(format!(
            "{} attention weights for {} instances",
            a.len(),
            u.len()
        )));
    }
    let mean: f64 = a.iter().zip(&u).map(|(w, x)| w * x).sum();
    Ok(u.iter().map(|x| x - mean).collect())
}

/// `SAsqR_j = sign(r_j) · a_j · r_j²`.
pub fn sasqr(h: &Tensor, a: &[f64], v: &[f64]) -> Result<Vec<f64>, InterpretError> {
    let r = residuals(h, a, v)?;
    Ok(r.iter().zip(a).map(|(r, w)| r.signum() * w * r * r).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileBuckets {
    /// `(quantile, instance indices)` in [`QUANTILES`] order.
    pub buckets: Vec<(u32, Vec<usize>)>,
    /// Some bucket got fewer than the requested instances because its
    /// neighbours were already taken by earlier buckets.
    pub deduplicated: bool,
}

impl QuantileBuckets {
    /// Quantile label of each instance, if it was picked.
    pub fn labels(&self, n: usize) -> Vec<Option<u32>> {
        let mut out = vec![None; n];
        for (q, members) in &self.buckets {
            for &i in members {
                out[i] = Some(*q);
            }
        }
        out
    }
}

/// Sorts `values` ascending (ties to the lower index) and, for each quantile
/// q, picks the `m` unused sorted positions closest to the nearest-rank
/// position `max(ceil(q n / 100), 1) - 1`, preferring the lower position on
/// equal distance. Instances never appear in two buckets.
pub fn quantile_buckets(values: &[f64], m: usize) -> Result<QuantileBuckets, InterpretError> {
    let n = values.len();
    if n == 0 || m == 0 {
        return Err(InterpretError::Invalid("quantile_buckets needs n >= 1 and m >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| values[x].total_cmp(&values[y]).then(x.cmp(&y)));
    let mut used = vec![false; n];
    let mut deduplicated = false;
    let mut buckets = Vec::with_capacity(QUANTILES.len());
    for q in QUANTILES {
        let rank = ((q as usize * n).div_ceil(100)).max(1);
        let centre = rank - 1;
        // candidate positions by distance, lower position first
        let mut candidates: Vec<usize> = (0..n).filter(|&p| !used[p]).collect();
        candidates.sort_by_key(|&p| (p.abs_diff(centre), p));
        candidates.truncate(m);
        if candidates.len() < m.min(n) {
            deduplicated = true;
        }
        candidates.sort_unstable();
        for &p in &candidates {
            used[p] = true;
        }
        buckets.push((q, candidates.into_iter().map(|p| order[p]).collect()));
    }
    Ok(QuantileBuckets { buckets, deduplicated })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceRecord {
    pub instance_index: usize,
    pub attention: f64,
    pub residual: f64,
    pub sasqr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SAsqRReport {
    pub patient_id: String,
    pub projection: usize,
    pub records: Vec<InstanceRecord>,
    pub buckets: QuantileBuckets,
    pub p_var_raw: f64,
    pub eta_p_var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientReport {
    pub patient_id: String,
    pub risk: f64,
    /// `None` when the model uses uniform weights, where ranking by
    /// attention carries no information.
    pub top_attention: Option<TopAttention>,
    pub projections: Vec<SAsqRReport>,
}

/// Attention ranking and per-projection SAsqR reports for one full bag.
pub fn explain_bag(
    model: &MilModel,
    patient_id: &str,
    features: &Tensor,
    top_m: usize,
    per_bucket: usize,
) -> Result<PatientReport, InterpretError> {
    let cfg = model.config();
    if !cfg.varpool {
        return Err(InterpretError::NoVarianceBranch);
    }
    let mask = vec![true; features.rows()];
    let inspection = model.inspect(features, &mask)?;
    let top_attention = match cfg.family {
        ModelFamily::DeepSets => None,
        _ => Some(top_attention(&inspection.outputs.attention, &mask, top_m)?),
    };
    let projections = inspection.projections.as_ref().ok_or(InterpretError::NoVarianceBranch)?;
    let p_var = inspection
        .outputs
        .p_var_raw
        .as_ref()
        .ok_or(InterpretError::NoVarianceBranch)?;
    let a = inspection.variance_attention();
    let offset = cfg.embed_dim();
    let mut reports = Vec::with_capacity(cfg.n_projections);
    for k in 0..cfg.n_projections {
        let v: Vec<f64> = (0..projections.rows()).map(|r| projections.get(r, k)).collect();
        let r = residuals(&inspection.embeddings, a, &v)?;
        let s: Vec<f64> = r.iter().zip(a).map(|(r, w)| r.signum() * w * r * r).collect();
        let buckets = quantile_buckets(&s, per_bucket)?;
        let records = (0..s.len())
            .map(|j| InstanceRecord {
                instance_index: j,
                attention: a[j],
                residual: r[j],
                sasqr: s[j],
            })
            .collect();
        reports.push(SAsqRReport {
            patient_id: patient_id.to_string(),
            projection: k,
            records,
            buckets,
            p_var_raw: p_var[k],
            eta_p_var: inspection.outputs.p_cat[offset + k],
        });
    }
    Ok(PatientReport {
        patient_id: patient_id.to_string(),
        risk: inspection.outputs.risk,
        top_attention,
        projections: reports,
    })
}

pub const INSTANCE_HEADER: [&str; 5] = ["instance_index", "attention", "residual", "sasqr", "quantile_bucket"];
pub const SUMMARY_HEADER: [&str; 4] = ["patient_id", "projection", "p_var_raw", "eta_p_var"];
pub const TOP_ATTENTION_HEADER: [&str; 4] = ["patient_id", "rank", "instance_index", "attention"];

/// File name of the instance table for one patient and projection.
pub fn instance_file_name(patient_id: &str, projection: usize) -> String {
    format!("{patient_id}_proj{projection}.csv")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, InterpretError> {
    let file = std::fs::File::create(path).map_err(|source| InterpretError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes one instance CSV per (patient, projection), `summary.csv` with the
/// raw and transformed variance pool of every patient, and
/// `top_attention.csv`. Floats use the shortest round-trip representation.
pub fn emit_report(reports: &[PatientReport], dir: &Path) -> Result<(), InterpretError> {
    std::fs::create_dir_all(dir).map_err(|source| InterpretError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut summary = writer(&dir.join("summary.csv"))?;
    summary.write_record(SUMMARY_HEADER)?;
    let mut top = writer(&dir.join("top_attention.csv"))?;
    top.write_record(TOP_ATTENTION_HEADER)?;
    for report in reports {
        if let Some(t) = &report.top_attention {
            for (rank, (i, a)) in t.entries.iter().enumerate() {
                top.write_record([
                    report.patient_id.clone(),
                    rank.to_string(),
                    i.to_string(),
                    a.to_string(),
                ])?;
            }
        }
        for p in &report.projections {
            summary.write_record([
                p.patient_id.clone(),
                p.projection.to_string(),
                p.p_var_raw.to_string(),
                p.eta_p_var.to_string(),
            ])?;
            let mut w = writer(&dir.join(instance_file_name(&p.patient_id, p.projection)))?;
            w.write_record(INSTANCE_HEADER)?;
            let labels = p.buckets.labels(p.records.len());
            for rec in &p.records {
                w.write_record([
                    rec.instance_index.to_string(),
                    rec.attention.to_string(),
                    rec.residual.to_string(),
                    rec.sasqr.to_string(),
                    labels[rec.instance_index].map(|q| q.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush().map_err(|source| InterpretError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
    }
    for mut w in [summary, top] {
        w.flush().map_err(|source| InterpretError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}
