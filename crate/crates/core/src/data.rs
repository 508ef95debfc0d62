//! Datasets: synthetic polynomial cross-term regression data, Criteo-format
//! ingestion with feature hashing, and deterministic splits.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::SeededRng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Column type of one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FieldSchema {
    /// Categorical field with the given vocabulary size.
    Categorical {
        /// Number of distinct feature ids.
        vocab: u32,
    },
    /// Real-valued field (one learnable vector, scaled by the value).
    Numeric,
}

impl FieldSchema {
    /// Embedding rows a field needs (numeric fields use a single vector).
    pub fn vocab(&self) -> u32 {
        match self {
            FieldSchema::Categorical { vocab } => *vocab,
            FieldSchema::Numeric => 1,
        }
    }
}

/// One field's content in one row.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldInput {
    /// Active feature ids (empty, one-hot or multi-hot).
    Cat(Vec<u32>),
    /// Real value.
    Num(f64),
}

/// Prediction task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Task {
    /// Binary labels, logit scoring.
    Classification,
    /// Real labels, squared-error scoring.
    Regression,
}

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Field contents, aligned with the schema.
    pub fields: Vec<FieldInput>,
    /// Binary (0/1) or real label.
    pub label: f64,
}

/// Immutable in-memory dataset.
#[derive(Debug, Clone)]
pub struct TabularDataset {
    /// Per-field schema.
    pub schema: Vec<FieldSchema>,
    /// Examples.
    pub rows: Vec<Row>,
    /// Task tag.
    pub task: Task,
}

impl TabularDataset {
    /// Number of fields M.
    pub fn num_fields(&self) -> usize {
        self.schema.len()
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// True when the dataset has no rows.
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Vocabulary sizes per field.
    pub fn vocabs(&self) -> Vec<u32> {
        self.schema.iter().map(|f| f.vocab()).collect()
    }

    /// Checks ids against the schema and binary labels for classification.
    pub fn validate(&self) -> Result<()> {
        for (ri, row) in self.rows.iter().enumerate() {
            if row.fields.len() != self.schema.len() {
                return Err(Error::Data(format!(
                    "row {ri} has {} fields, schema has {}",
                    row.fields.len(),
                    self.schema.len()
                )));
            }
            if !row.label.is_finite() {
                return Err(Error::Data(format!("row {ri} label not finite")));
            }
            if self.task == Task::Classification && row.label != 0.0 && row.label != 1.0 {
                return Err(Error::Data(format!(
                    "row {ri} classification label {} not in {{0,1}}",
                    row.label
                )));
            }
            for (fi, (input, schema)) in row.fields.iter().zip(&self.schema).enumerate() {
                match (input, schema) {
                    (FieldInput::Cat(ids), FieldSchema::Categorical { vocab }) => {
                        if let Some(&bad) = ids.iter().find(|&&id| id >= *vocab) {
                            return Err(Error::Lookup { field: fi, feature: bad, vocab: *vocab });
                        }
                    }
                    (FieldInput::Num(x), FieldSchema::Numeric) => {
                        if !x.is_finite() {
                            return Err(Error::Data(format!("row {ri} field {fi} not finite")));
                        }
                    }
                    _ => {
                        return Err(Error::Data(format!(
                            "row {ri} field {fi} does not match schema"
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic cross-term data
// ---------------------------------------------------------------------------

/// Parameters of the synthetic regression generator.
///
/// Features are i.i.d. Uniform[-1, 1]; the label is the weighted sum of all
/// cross-terms of order <= `order`, plus N(0, noise_sigma^2) noise.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Feature count n (<= 16 so the monomial set stays enumerable).
    pub features: usize,
    /// Maximum cross-term order O, 1 <= O <= n.
    pub order: usize,
    /// Number of rows.
    pub samples: usize,
    /// Label noise standard deviation.
    pub noise_sigma: f64,
    /// Seed for weights, features and noise.
    pub seed: u64,
    /// Optional cap on combinations kept per order (off by default; the
    /// label sums over all combinations).
    pub max_combinations: Option<usize>,
}

impl SyntheticSpec {
    /// Spec with the default 0.1 noise level and no combination cap.
    pub fn new(features: usize, order: usize, samples: usize, seed: u64) -> Self {
        SyntheticSpec { features, order, samples, noise_sigma: 0.1, seed, max_combinations: None }
    }

    fn validate(&self) -> Result<()> {
        if self.features == 0 || self.features > 16 {
            return Err(Error::Contract(format!(
                "feature count must be in 1..=16, got {}",
                self.features
            )));
        }
        if self.order == 0 || self.order > self.features {
            return Err(Error::Contract(format!(
                "order must satisfy 1 <= O <= n, got O={} n={}",
                self.order, self.features
            )));
        }
        if self.samples == 0 {
            return Err(Error::Contract("samples must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Contract("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// One weighted cross-term of the planted label function.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    /// Feature indices of the product, strictly increasing.
    pub indices: Vec<usize>,
    /// Cross-term weight.
    pub weight: f64,
}

const STREAM_WEIGHTS: u64 = 0x57;
const STREAM_ROWS: u64 = 0x1000_0000;
const STREAM_SPLIT: u64 = 0x5350_4c49;

/// Enumerates the planted cross-terms in lexicographic order per order and
/// draws one N(0, 1) weight each from a dedicated stream.
pub fn enumerate_monomials(spec: &SyntheticSpec) -> Result<Vec<Monomial>> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed, STREAM_WEIGHTS);
    let mut monomials = Vec::new();
    for degree in 1..=spec.order {
        let mut combos: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = (0..degree).collect();
        loop {
            combos.push(current.clone());
            // Advance to the next lexicographic combination.
            let mut i = degree;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if current[i] != i + spec.features - degree {
                    current[i] += 1;
                    for j in (i + 1)..degree {
                        current[j] = current[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    current.clear();
                    break;
                }
            }
            if current.is_empty() {
                break;
            }
        }
        if let Some(cap) = spec.max_combinations {
            if combos.len() > cap {
                let mut pick = rng.derive(degree as u64);
                pick.shuffle(&mut combos);
                combos.truncate(cap);
                combos.sort();
            }
        }
        for indices in combos {
            let weight = rng.standard_normal();
            monomials.push(Monomial { indices, weight });
        }
    }
    Ok(monomials)
}

/// Evaluates the noiseless label function at `x`.
pub fn eval_monomials(monomials: &[Monomial], x: &[f64]) -> f64 {
    monomials
        .iter()
        .map(|m| m.weight * m.indices.iter().map(|&i| x[i]).product::<f64>())
        .sum()
}

/// Generates the synthetic regression dataset.
///
/// Row r draws from a stream keyed by (seed, r), so generation order (and
/// any parallelism) never changes the data.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TabularDataset> {
    let monomials = enumerate_monomials(spec)?;
    let gen_row = |r: usize| -> Row {
        let mut rng = SeededRng::new(spec.seed, STREAM_ROWS + r as u64);
        let x: Vec<f64> = (0..spec.features).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let noise = spec.noise_sigma * rng.standard_normal();
        let label = eval_monomials(&monomials, &x) + noise;
        Row { fields: x.iter().map(|&v| FieldInput::Num(v)).collect(), label }
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<Row> = (0..spec.samples).into_par_iter().map(gen_row).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Row> = (0..spec.samples).map(gen_row).collect();

    Ok(TabularDataset {
        schema: vec![FieldSchema::Numeric; spec.features],
        rows,
        task: Task::Regression,
    })
}

/// Writes a synthetic dataset as CSV (`x1,...,xn,y`), 17 significant digits
/// so values round-trip exactly.
pub fn save_synthetic_csv(ds: &TabularDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let n = ds.num_fields();
    let header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    writeln!(w, "{},y", header.join(","))?;
    for row in &ds.rows {
        for field in &row.fields {
            match field {
                FieldInput::Num(x) => write!(w, "{x:.16e},")?,
                FieldInput::Cat(_) => {
                    return Err(Error::Data("synthetic CSV export expects numeric fields".into()))
                }
            }
        }
        writeln!(w, "{:.16e}", row.label)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a synthetic CSV back into a regression dataset.
pub fn load_synthetic_csv(path: &Path) -> Result<TabularDataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty synthetic CSV".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols.last() != Some(&"y") {
        return Err(Error::Data("synthetic CSV header must be x1,...,xn,y".into()));
    }
    let n = cols.len() - 1;
    let mut rows = Vec::new();
    for (li, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split(',').map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| Error::Data(format!("CSV line {}: {e}", li + 2)))?;
        if vals.len() != n + 1 {
            return Err(Error::Data(format!(
                "CSV line {}: {} columns, expected {}",
                li + 2,
                vals.len(),
                n + 1
            )));
        }
        rows.push(Row {
            fields: vals[..n].iter().map(|&v| FieldInput::Num(v)).collect(),
            label: vals[n],
        });
    }
    if rows.is_empty() {
        return Err(Error::Data("synthetic CSV has no rows".into()));
    }
    Ok(TabularDataset { schema: vec![FieldSchema::Numeric; n], rows, task: Task::Regression })
}

// ---------------------------------------------------------------------------
// Feature hashing and Criteo-format ingestion
// ---------------------------------------------------------------------------

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic multiply-xor string hasher with per-field bucket counts.
///
/// Not a standard-library hash: the scheme is fixed so ids are identical on
/// every platform and run.
#[derive(Debug, Clone)]
pub struct FeatureHasher {
    /// Bucket count per field.
    pub buckets: Vec<u32>,
    /// Hash seed.
    pub seed: u64,
}

impl FeatureHasher {
    /// Hasher with a uniform bucket count for `fields` fields.
    pub fn uniform(fields: usize, buckets: u32, seed: u64) -> Self {
        FeatureHasher { buckets: vec![buckets; fields], seed }
    }

    /// Bucket id of `value` in `field`; output is in [0, buckets).
    pub fn hash(&self, field: usize, value: &str) -> u32 {
        let mut h = self.seed ^ mix64(field as u64 ^ 0xFEED_FACE_CAFE_BEEF);
        for &b in value.as_bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
        }
        let buckets = self.buckets[field] as u64;
        (mix64(h) % buckets) as u32
    }
}

const CRITEO_NUMERIC: usize = 13;
const CRITEO_CATEGORICAL: usize = 26;

/// Log-square bucket of a Criteo numeric value: floor(ln(1 + max(x, 0)))^2,
/// capped at `limit - 1`.
pub fn numeric_bucket(x: f64, limit: u32) -> u32 {
    let v = (1.0 + x.max(0.0)).ln().floor();
    let sq = (v * v) as u32;
    sq.min(limit - 1)
}

/// Loads a Criteo-format TSV: label, 13 numeric columns, 26 categorical
/// columns, any of which may be empty.
///
/// Numeric values are bucketed with [`numeric_bucket`]; categorical strings
/// hash into per-field buckets; missing cells map to id 0. Malformed lines
/// are skipped and counted; more than 1% malformed is a hard error.
pub fn load_criteo_tsv(
    path: &Path,
    hasher: &FeatureHasher,
    numeric_buckets: u32,
) -> Result<(TabularDataset, usize)> {
    if hasher.buckets.len() != CRITEO_CATEGORICAL {
        return Err(Error::Config(format!(
            "Criteo hasher needs {CRITEO_CATEGORICAL} bucket counts, got {}",
            hasher.buckets.len()
        )));
    }
    if numeric_buckets == 0 {
        return Err(Error::Config("numeric_buckets must be >= 1".into()));
    }
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);

    let mut rows = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        total += 1;
        match parse_criteo_line(&line, hasher, numeric_buckets) {
            Some(row) => rows.push(row),
            None => malformed += 1,
        }
    }
    if total == 0 {
        return Err(Error::Data("Criteo file has no data lines".into()));
    }
    if malformed * 100 > total {
        return Err(Error::Data(format!(
            "{malformed} of {total} lines malformed (> 1%)"
        )));
    }
    let mut schema = vec![FieldSchema::Categorical { vocab: numeric_buckets }; CRITEO_NUMERIC];
    schema.extend(
        hasher
            .buckets
            .iter()
            .map(|&b| FieldSchema::Categorical { vocab: b }),
    );
    Ok((TabularDataset { schema, rows, task: Task::Classification }, malformed))
}

fn parse_criteo_line(line: &str, hasher: &FeatureHasher, numeric_buckets: u32) -> Option<Row> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 1 + CRITEO_NUMERIC + CRITEO_CATEGORICAL {
        return None;
    }
    let label: f64 = match cols[0] {
        "0" => 0.0,
        "1" => 1.0,
        _ => return None,
    };
    let mut fields = Vec::with_capacity(CRITEO_NUMERIC + CRITEO_CATEGORICAL);
    for &cell in &cols[1..=CRITEO_NUMERIC] {
        let id = if cell.is_empty() {
            0
        } else {
            match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => numeric_bucket(x, numeric_buckets),
                _ => return None,
            }
        };
        fields.push(FieldInput::Cat(vec![id]));
    }
    for (ci, &cell) in cols[1 + CRITEO_NUMERIC..].iter().enumerate() {
        let id = if cell.is_empty() { 0 } else { hasher.hash(ci, cell) };
        fields.push(FieldInput::Cat(vec![id]));
    }
    Some(Row { fields, label })
}

/// Loads a generic categorical classification CSV: header `label,f1,...,fM`,
/// then one 0/1 label and M categorical strings per line. Values hash into
/// per-field buckets; empty cells map to id 0.
pub fn load_categorical_csv(path: &Path, hasher: &FeatureHasher) -> Result<TabularDataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty categorical CSV".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::Data(
            "categorical CSV header must be label,f1,...,fM".into(),
        ));
    }
    let m = cols.len() - 1;
    if hasher.buckets.len() != m {
        return Err(Error::Config(format!(
            "hasher has {} bucket counts for {m} fields",
            hasher.buckets.len()
        )));
    }
    let mut rows = Vec::new();
    for (li, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != m + 1 {
            return Err(Error::Data(format!(
                "categorical CSV line {}: {} columns, expected {}",
                li + 2,
                cells.len(),
                m + 1
            )));
        }
        let label = match cells[0] {
            "0" => 0.0,
            "1" => 1.0,
            other => {
                return Err(Error::Data(format!(
                    "categorical CSV line {}: label '{other}' not 0/1",
                    li + 2
                )))
            }
        };
        let fields = cells[1..]
            .iter()
            .enumerate()
            .map(|(fi, cell)| {
                let id = if cell.is_empty() { 0 } else { hasher.hash(fi, cell) };
                FieldInput::Cat(vec![id])
            })
            .collect();
        rows.push(Row { fields, label });
    }
    if rows.is_empty() {
        return Err(Error::Data("categorical CSV has no rows".into()));
    }
    let schema = hasher
        .buckets
        .iter()
        .map(|&b| FieldSchema::Categorical { vocab: b })
        .collect();
    Ok(TabularDataset { schema, rows, task: Task::Classification })
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Partition sizes by largest-remainder rounding of `ratios` over `n`.
fn partition_sizes(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    if ratios.is_empty() || ratios.iter().any(|&r| r <= 0.0) {
        return Err(Error::Contract("split ratios must be positive".into()));
    }
    let total: f64 = ratios.iter().sum();
    let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Data(format!(
            "split of {n} rows by {ratios:?} leaves an empty partition"
        )));
    }
    Ok(sizes)
}

/// Seeded permutation of 0..n sliced into contiguous partitions.
pub fn split_indices(n: usize, ratios: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let sizes = partition_sizes(n, ratios)?;
    let mut perm: Vec<usize> = (0..n).collect();
    SeededRng::new(seed, STREAM_SPLIT).shuffle(&mut perm);
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(perm[start..start + s].to_vec());
        start += s;
    }
    Ok(parts)
}

/// Splits a dataset into disjoint partitions whose union is every row.
pub fn split(ds: &TabularDataset, ratios: &[f64], seed: u64) -> Result<Vec<TabularDataset>> {
    let parts = split_indices(ds.len(), ratios, seed)?;
    Ok(parts
        .into_iter()
        .map(|idx| TabularDataset {
            schema: ds.schema.clone(),
            rows: idx.iter().map(|&i| ds.rows[i].clone()).collect(),
            task: ds.task,
        })
        .collect())
}
