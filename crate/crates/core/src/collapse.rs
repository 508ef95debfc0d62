//! Embedding dimensional-collapse analysis: sample-weighted singular
//! spectra per field, singular sums, information abundance, the
//! 95%-percentile dimension, and pair-weight field importance.

use std::io::Write;
use std::path::Path;

use crate::data::{FieldInput, TabularDataset};
use crate::error::{Error, Result};
use crate::interaction::InteractionKind;
use crate::layers::PoolingKind;
use crate::linalg::{frobenius_norm_slice, singular_values, Matrix};
use crate::model::IpaModel;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Singular-value summary of one field's embeddings.
#[derive(Debug, Clone)]
pub struct FieldSpectrum {
    /// Field index.
    pub field: usize,
    /// Feature count of the field (dataset schema).
    pub cardinality: u32,
    /// Mean pair-weight magnitude against all other fields.
    pub importance: f64,
    /// Singular values, descending.
    pub singular_values: Vec<f64>,
    /// Sum of singular values.
    pub singular_sum: f64,
    /// Singular sum divided by the largest singular value.
    pub information_abundance: f64,
    /// Smallest k whose top-k singular values cover 95% of the sum.
    pub p95_dimension: usize,
}

/// Per-field spectra plus the two field orderings used for plots.
#[derive(Debug, Clone)]
pub struct CollapseReport {
    /// One spectrum per field, in field order.
    pub fields: Vec<FieldSpectrum>,
    /// Field ids ordered by descending cardinality.
    pub by_cardinality: Vec<usize>,
    /// Field ids ordered by descending importance.
    pub by_importance: Vec<usize>,
}

/// Scales embedding row f by sqrt(count_f / total) so the Gram matrix of
/// the result is the embedding second moment under the empirical sample
/// distribution rather than the uniform feature-id distribution.
pub fn sample_weighted_matrix(embeddings: &Matrix, counts: &[u64]) -> Result<Matrix> {
    if counts.len() != embeddings.rows() {
        return Err(Error::Dimension(format!(
            "{} counts for {} embedding rows",
            counts.len(),
            embeddings.rows()
        )));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Contract("sample weighting needs a positive total count".into()));
    }
    let k = embeddings.cols();
    let mut out = Matrix::zeros(embeddings.rows(), k);
    for (r, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let scale = (count as f64 / total as f64).sqrt();
        for c in 0..k {
            out.set(r, c, scale * embeddings.get(r, c));
        }
    }
    Ok(out)
}

fn spectrum_stats(sv: &[f64]) -> Result<(f64, f64, usize)> {
    let sum: f64 = sv.iter().sum();
    let max = sv[0];
    if max <= 0.0 {
        return Err(Error::UndefinedMetric(
            "singular spectrum is identically zero".into(),
        ));
    }
    let threshold = 0.95 * sum;
    let mut acc = 0.0;
    let mut p95 = sv.len();
    for (i, &s) in sv.iter().enumerate() {
        acc += s;
        if acc >= threshold {
            p95 = i + 1;
            break;
        }
    }
    Ok((sum, sum / max, p95))
}

/// Singular value sum divided by the largest singular value; near K means
/// isotropic embeddings, near 1 means collapsed.
pub fn information_abundance(e: &Matrix) -> Result<f64> {
    let sv = singular_values(e)?;
    Ok(spectrum_stats(&sv)?.1)
}

/// Smallest k whose top-k singular values cover 95% of the singular sum.
pub fn p95_dimension(e: &Matrix) -> Result<usize> {
    let sv = singular_values(e)?;
    Ok(spectrum_stats(&sv)?.2)
}

/// Per-field importance from symmetric pair weights: the mean of |w_ij|
/// over all j != i.
pub fn fwfm_field_importance(m: usize, pair_weight: impl Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::Contract("field importance needs M >= 2".into()));
    }
    Ok((0..m)
        .map(|i| {
            let sum: f64 = (0..m).filter(|&j| j != i).map(|j| pair_weight(i, j).abs()).sum();
            sum / (m - 1) as f64
        })
        .collect())
}

/// Mean pair-weight block magnitude per field from the model's first
/// interaction layer. For Weighted models this is exactly the FwFM
/// importance; richer kinds use the Frobenius norm of each pair block, and
/// Naive (no weights) is uniform.
pub fn pair_importances(model: &IpaModel) -> Result<Vec<f64>> {
    let cfg = &model.config;
    let m = cfg.m;
    if m < 2 {
        return Err(Error::Contract("field importance needs M >= 2".into()));
    }
    if cfg.l < 2
        || cfg.code.pooling != PoolingKind::Field
        || cfg.code.interaction == InteractionKind::Naive
    {
        return Ok(vec![1.0; m]);
    }
    let wiring = cfg.pooling_spec().field_wiring(m);
    let stride = cfg.code.interaction.param_size(cfg.k);
    let block = &model.params.layer_blocks[0];
    let norm_of = |i: usize, j: usize| -> f64 {
        // pair_once stores (higher, lower); shared storage is unordered.
        let slot = if wiring.pair_once || wiring.symmetric_share {
            wiring.slot(i.max(j), i.min(j))
        } else {
            wiring.slot(i, j)
        };
        frobenius_norm_slice(&block[slot * stride..(slot + 1) * stride])
    };
    fwfm_field_importance(m, norm_of)
}

/// Occurrence counts of every feature of every field over a dataset.
pub fn feature_counts(ds: &TabularDataset) -> Vec<Vec<u64>> {
    let mut counts: Vec<Vec<u64>> = ds.vocabs().iter().map(|&v| vec![0; v as usize]).collect();
    for row in &ds.rows {
        for (field, input) in row.fields.iter().enumerate() {
            match input {
                FieldInput::Cat(ids) => {
                    for &id in ids {
                        counts[field][id as usize] += 1;
                    }
                }
                FieldInput::Num(_) => counts[field][0] += 1,
            }
        }
    }
    counts
}

/// Full collapse analysis of a trained model over a dataset.
pub fn collapse_report(model: &IpaModel, ds: &TabularDataset) -> Result<CollapseReport> {
    let cfg = &model.config;
    if ds.num_fields() != cfg.m {
        return Err(Error::Dimension(format!(
            "dataset has {} fields, model has {}",
            ds.num_fields(),
            cfg.m
        )));
    }
    let vocabs = ds.vocabs();
    if vocabs != cfg.vocabs {
        return Err(Error::Config(
            "dataset schema vocabularies do not match the model".into(),
        ));
    }
    let counts = feature_counts(ds);
    let importances = pair_importances(model)?;

    let analyze = |field: usize| -> Result<FieldSpectrum> {
        let vocab = vocabs[field] as usize;
        let e = Matrix::from_vec(vocab, cfg.k, model.params.embeddings[field].clone())?;
        let weighted = sample_weighted_matrix(&e, &counts[field])?;
        let sv = singular_values(&weighted)?;
        let (singular_sum, ia, p95) = spectrum_stats(&sv)?;
        Ok(FieldSpectrum {
            field,
            cardinality: vocabs[field],
            importance: importances[field],
            singular_values: sv,
            singular_sum,
            information_abundance: ia,
            p95_dimension: p95,
        })
    };

    #[cfg(feature = "parallel")]
    let fields: Vec<FieldSpectrum> =
        (0..cfg.m).into_par_iter().map(analyze).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let fields: Vec<FieldSpectrum> = (0..cfg.m).map(analyze).collect::<Result<_>>()?;

    let mut by_cardinality: Vec<usize> = (0..cfg.m).collect();
    by_cardinality.sort_by(|&a, &b| vocabs[b].cmp(&vocabs[a]).then(a.cmp(&b)));
    let mut by_importance: Vec<usize> = (0..cfg.m).collect();
    by_importance.sort_by(|&a, &b| {
        importances[b].partial_cmp(&importances[a]).unwrap().then(a.cmp(&b))
    });

    Ok(CollapseReport { fields, by_cardinality, by_importance })
}

/// CSV export: one row per field with the spectrum spread over sigma
/// columns.
pub fn write_collapse_csv(report: &CollapseReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let k = report.fields.first().map_or(0, |f| f.singular_values.len());
    let sigmas: Vec<String> = (1..=k).map(|i| format!("sigma_{i}")).collect();
    writeln!(
        w,
        "field_id,cardinality,importance,singular_sum,information_abundance,p95_dim,{}",
        sigmas.join(",")
    )?;
    for f in &report.fields {
        let sv: Vec<String> = f.singular_values.iter().map(|v| format!("{v}")).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            f.field,
            f.cardinality,
            f.importance,
            f.singular_sum,
            f.information_abundance,
            f.p95_dimension,
            sv.join(",")
        )?;
    }
    w.flush()?;
    Ok(())
}
