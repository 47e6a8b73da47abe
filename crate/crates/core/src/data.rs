//! Datasets, CSV ingestion, normalization, biased partitioning and the
//! synthetic generator used in place of non-public data.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

/// Feature matrix (`n_samples × n_features`) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    feature_names: Vec<String>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let feature_names = (0..features.ncols()).map(|i| format!("f{i}")).collect();
        let class_names = (0..n_classes).map(|c| c.to_string()).collect();
        Self::with_names(features, labels, n_classes, feature_names, class_names)
    }

    pub fn with_names(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::argument("dataset needs at least one sample"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::argument(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::argument("n_classes must be positive"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::argument(format!("label {bad} out of range for {n_classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("features must be finite"));
        }
        if feature_names.len() != features.ncols() || class_names.len() != n_classes {
            return Err(Error::argument("name lists do not match dataset shape"));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            feature_names,
            class_names,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn row(&self, idx: usize) -> ArrayView1<'_, f64> {
        self.features.row(idx)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::with_names(
            features,
            labels,
            self.n_classes,
            self.feature_names.clone(),
            self.class_names.clone(),
        )
    }

    /// Stacks datasets that share a schema.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::argument("nothing to concatenate"))?;
        for p in parts {
            if p.n_features() != first.n_features() || p.n_classes != first.n_classes {
                return Err(Error::argument("datasets have different schemas"));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::argument(e.to_string()))?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Self::with_names(
            features,
            labels,
            first.n_classes,
            first.feature_names.clone(),
            first.class_names.clone(),
        )
    }

    /// Returns a copy with one extra feature column on the right.
    pub fn with_appended_column(&self, name: &str, values: &[f64]) -> Result<Self> {
        if values.len() != self.n_samples() {
            return Err(Error::argument("column length does not match sample count"));
        }
        let mut features = Array2::zeros((self.n_samples(), self.n_features() + 1));
        features
            .slice_mut(ndarray::s![.., ..self.n_features()])
            .assign(&self.features);
        for (r, v) in values.iter().enumerate() {
            features[[r, self.n_features()]] = *v;
        }
        let mut names = self.feature_names.clone();
        names.push(name.to_string());
        Self::with_names(features, self.labels.clone(), self.n_classes, names, self.class_names.clone())
    }

    fn map_features(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for mut row in out.features.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f(c, *v);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    Zscore,
}

/// Per-column mean and population standard deviation fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScoreStats {
    pub fn fit(data: &Dataset) -> Self {
        let n = data.n_samples() as f64;
        let mut mean = Vec::with_capacity(data.n_features());
        let mut std = Vec::with_capacity(data.n_features());
        for col in data.features.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        Self { mean, std }
    }

    /// Standardizes every column; columns with zero spread map to 0.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if self.mean.len() != data.n_features() {
            return Err(Error::argument("normalization stats do not match feature count"));
        }
        Ok(data.map_features(|c, v| {
            if self.std[c] > 0.0 {
                (v - self.mean[c]) / self.std[c]
            } else {
                0.0
            }
        }))
    }
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub label_column: String,
    pub normalization: Normalization,
    /// Fixed class ordering; when absent, labels are integers if every label
    /// parses as one, otherwise the sorted distinct label strings.
    pub class_names: Option<Vec<String>>,
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            normalization: Normalization::None,
            class_names: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsvLoad {
    pub dataset: Dataset,
    /// Rows dropped because a field was empty, `?`, `NA` or `NaN`.
    pub skipped_rows: usize,
    pub stats: Option<ZScoreStats>,
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "?" | "NA" | "NaN" | "nan" | "null")
}

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<CsvLoad> {
    let ingest = |message: String| Error::Ingestion {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| ingest(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ingest(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| *h == options.label_column)
        .ok_or_else(|| ingest(format!("no label column named {:?}", options.label_column)))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut skipped = 0;
    for (line_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingest(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(ingest(format!(
                "line {}: expected {} fields, found {}",
                line_no + 2,
                headers.len(),
                record.len()
            )));
        }
        if record.iter().any(is_missing) {
            skipped += 1;
            continue;
        }
        let mut values = Vec::with_capacity(feature_names.len());
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                ingest(format!(
                    "line {}: column {:?} is not numeric ({field:?})",
                    line_no + 2,
                    headers[i]
                ))
            })?;
            if !v.is_finite() {
                return Err(ingest(format!("line {}: non-finite value in {:?}", line_no + 2, headers[i])));
            }
            values.push(v);
        }
        rows.push(values);
        raw_labels.push(record[label_idx].trim().to_string());
    }
    if rows.is_empty() {
        return Err(ingest("no complete rows".into()));
    }

    let (labels, class_names) = encode_labels(&raw_labels, options.class_names.as_deref())
        .map_err(ingest)?;
    let n_features = feature_names.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((raw_labels.len(), n_features), flat)
        .map_err(|e| ingest(e.to_string()))?;
    let dataset = Dataset::with_names(features, labels, class_names.len(), feature_names, class_names)?;
    let (dataset, stats) = match options.normalization {
        Normalization::None => (dataset, None),
        Normalization::Zscore => {
            let stats = ZScoreStats::fit(&dataset);
            (stats.apply(&dataset)?, Some(stats))
        }
    };
    if skipped > 0 {
        log::info!("{}: skipped {skipped} rows with missing values", path.display());
    }
    Ok(CsvLoad {
        dataset,
        skipped_rows: skipped,
        stats,
    })
}

fn encode_labels(raw: &[String], fixed: Option<&[String]>) -> std::result::Result<(Vec<usize>, Vec<String>), String> {
    if let Some(names) = fixed {
        let labels = raw
            .iter()
            .map(|l| {
                names
                    .iter()
                    .position(|n| n == l)
                    .ok_or_else(|| format!("label {l:?} is not one of {names:?}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        return Ok((labels, names.to_vec()));
    }
    let ints: Option<Vec<usize>> = raw.iter().map(|l| l.parse::<usize>().ok()).collect();
    if let Some(ints) = ints {
        let n = ints.iter().max().map_or(1, |m| m + 1);
        return Ok((ints, (0..n).map(|c| c.to_string()).collect()));
    }
    let names: Vec<String> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels = raw
        .iter()
        .map(|l| names.iter().position(|n| n == l).expect("label present"))
        .collect();
    Ok((labels, names))
}

/// Writes `data` as CSV: feature columns, then `label_column` holding class names.
pub fn write_csv(path: &Path, data: &Dataset, label_column: &str) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    writer.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for (r, row) in data.features.rows().into_iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        fields.push(data.class_names[data.labels[r]].clone());
        writer.write_record(&fields).map_err(|e| Error::Io(e.into()))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    ClassSkew,
    InjectedFeatureBias,
    SizeSplit,
}

/// Synthetic binary feature whose value-1 rate differs per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasFeatureSpec {
    pub feature_name: String,
    /// Fraction of `positive_class` samples that get value 1.
    pub positive_class_fraction_value1: f64,
    /// Fraction of every other class that gets value 1; defaults to
    /// `1 - positive_class_fraction_value1`.
    #[serde(default)]
    pub other_class_fraction_value1: Option<f64>,
    #[serde(default = "default_positive_class")]
    pub positive_class: usize,
}

fn default_positive_class() -> usize {
    1
}

impl BiasFeatureSpec {
    pub fn new(feature_name: impl Into<String>, positive_class_fraction_value1: f64) -> Self {
        Self {
            feature_name: feature_name.into(),
            positive_class_fraction_value1,
            other_class_fraction_value1: None,
            positive_class: 1,
        }
    }

    fn fraction_for(&self, class: usize) -> f64 {
        if class == self.positive_class {
            self.positive_class_fraction_value1
        } else {
            self.other_class_fraction_value1
                .unwrap_or(1.0 - self.positive_class_fraction_value1)
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.positive_class_fraction_value1) || !self.other_class_fraction_value1.is_none_or(ok) {
            return Err(Error::Plan(format!(
                "bias fractions for {:?} must lie in [0, 1]",
                self.feature_name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub host_id: String,
    /// Exact sample count per class (class_skew / injected_feature_bias).
    #[serde(default)]
    pub class_counts: Option<Vec<usize>>,
    /// Fraction of each class's post-test pool (class_skew / injected_feature_bias).
    #[serde(default)]
    pub class_fractions: Option<Vec<f64>>,
    /// Fraction of the whole post-test pool (size_split).
    #[serde(default)]
    pub share: Option<f64>,
    #[serde(default)]
    pub bias: Option<BiasFeatureSpec>,
}

impl HostSpec {
    pub fn counts(host_id: impl Into<String>, class_counts: Vec<usize>) -> Self {
        Self {
            host_id: host_id.into(),
            class_counts: Some(class_counts),
            class_fractions: None,
            share: None,
            bias: None,
        }
    }

    pub fn fractions(host_id: impl Into<String>, class_fractions: Vec<f64>) -> Self {
        Self {
            class_counts: None,
            class_fractions: Some(class_fractions),
            ..Self::counts(host_id, vec![])
        }
    }

    pub fn share(host_id: impl Into<String>, share: f64) -> Self {
        Self {
            class_counts: None,
            share: Some(share),
            ..Self::counts(host_id, vec![])
        }
    }

    pub fn with_bias(mut self, bias: BiasFeatureSpec) -> Self {
        self.bias = Some(bias);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    #[serde(default)]
    pub class_counts: Option<Vec<usize>>,
    /// Stratified fraction of every class.
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub bias: Option<BiasFeatureSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub hosts: Vec<HostSpec>,
    #[serde(default)]
    pub test: Option<TestSpec>,
    pub seed: u64,
    /// Shrink every class count by a common factor when the data is too small.
    #[serde(default)]
    pub scale_to_fit: bool,
}

#[derive(Clone, Debug)]
pub struct HostPartition {
    pub host_id: String,
    pub data: Dataset,
    /// Row indices into the partitioned dataset.
    pub source_rows: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Partition {
    pub hosts: Vec<HostPartition>,
    pub test: Option<Dataset>,
    pub test_rows: Vec<usize>,
    pub discarded_rows: Vec<usize>,
    /// Factor applied to every requested count (1.0 when none was needed).
    pub scale: f64,
}

/// Splits `data` into per-host datasets plus a held-out test set.
///
/// Each class pool is shuffled with its own seeded stream; the test set is
/// drawn first, then hosts in plan order. Count plans are exact. Bias
/// injection appends one 0/1 column whose per-class count of ones is
/// `round(fraction · n_class)`.
pub fn partition(data: &Dataset, plan: &PartitionPlan) -> Result<Partition> {
    if plan.hosts.is_empty() {
        return Err(Error::Plan("plan lists no hosts".into()));
    }
    let k = data.n_classes();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in data.labels().iter().enumerate() {
        pools[l].push(i);
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        SeededRng::new(derive_seed(plan.seed, c as u64)).shuffle(pool);
    }
    let available: Vec<usize> = pools.iter().map(Vec::len).collect();

    let mut scale = 1.0;
    let test_counts: Option<Vec<usize>> = match &plan.test {
        None => None,
        Some(t) => match (&t.class_counts, t.fraction) {
            (Some(counts), None) => {
                check_len(counts.len(), k, "test class_counts")?;
                Some(counts.clone())
            }
            (None, Some(f)) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Plan("test fraction must lie in [0, 1]".into()));
                }
                Some(available.iter().map(|&n| (f * n as f64).floor() as usize).collect())
            }
            _ => return Err(Error::Plan("test needs exactly one of class_counts or fraction".into())),
        },
    };

    let mut host_counts: Vec<Option<Vec<usize>>> = Vec::with_capacity(plan.hosts.len());
    for h in &plan.hosts {
        match plan.scheme {
            PartitionScheme::SizeSplit => {
                let share = h
                    .share
                    .ok_or_else(|| Error::Plan(format!("host {} needs a share for size_split", h.host_id)))?;
                if !(0.0..=1.0).contains(&share) || h.class_counts.is_some() || h.class_fractions.is_some() {
                    return Err(Error::Plan(format!("host {}: size_split takes only a share in [0, 1]", h.host_id)));
                }
                host_counts.push(None);
            }
            _ => match (&h.class_counts, &h.class_fractions) {
                (Some(counts), None) => {
                    check_len(counts.len(), k, &format!("host {} class_counts", h.host_id))?;
                    host_counts.push(Some(counts.clone()));
                }
                (None, Some(_)) => host_counts.push(None),
                _ => {
                    return Err(Error::Plan(format!(
                        "host {} needs exactly one of class_counts or class_fractions",
                        h.host_id
                    )))
                }
            },
        }
        if plan.scheme == PartitionScheme::InjectedFeatureBias {
            h.bias
                .as_ref()
                .ok_or_else(|| Error::Plan(format!("host {} has no bias spec", h.host_id)))?
                .validate()?;
        }
    }

    // Feasibility of the exact-count requests, with optional common scaling.
    let mut requested = test_counts.clone().unwrap_or_else(|| vec![0; k]);
    for counts in host_counts.iter().flatten() {
        for (c, n) in counts.iter().enumerate() {
            requested[c] += n;
        }
    }
    let deficits: Vec<(usize, usize, usize)> = (0..k)
        .filter(|&c| requested[c] > available[c])
        .map(|c| (c, requested[c], available[c]))
        .collect();
    let mut test_counts = test_counts;
    if !deficits.is_empty() {
        if !plan.scale_to_fit {
            let detail: Vec<String> = deficits
                .iter()
                .map(|(c, want, have)| {
                    format!("class {:?} needs {want}, has {have} (short {})", data.class_names()[*c], want - have)
                })
                .collect();
            return Err(Error::Plan(detail.join("; ")));
        }
        scale = (0..k)
            .filter(|&c| requested[c] > 0)
            .map(|c| available[c] as f64 / requested[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let shrink = |n: &usize| (*n as f64 * scale).floor() as usize;
        if plan.test.as_ref().is_some_and(|t| t.class_counts.is_some()) {
            test_counts = test_counts.map(|v| v.iter().map(shrink).collect());
        }
        for counts in host_counts.iter_mut().flatten() {
            *counts = counts.iter().map(shrink).collect();
        }
    }

    let mut cursor = vec![0usize; k];
    let take = |c: usize, n: usize, cursor: &mut Vec<usize>| -> Vec<usize> {
        let start = cursor[c];
        cursor[c] += n;
        pools[c][start..start + n].to_vec()
    };

    let test_rows: Vec<usize> = match &test_counts {
        Some(counts) => (0..k).flat_map(|c| take(c, counts[c], &mut cursor)).collect(),
        None => Vec::new(),
    };

    let mut host_rows: Vec<Vec<usize>> = Vec::with_capacity(plan.hosts.len());
    match plan.scheme {
        PartitionScheme::SizeSplit => {
            let mut pool: Vec<usize> = (0..k).flat_map(|c| pools[c][cursor[c]..].to_vec()).collect();
            pool.sort_unstable();
            SeededRng::new(derive_seed(plan.seed, u64::from(u32::MAX))).shuffle(&mut pool);
            let total = pool.len();
            let total_share: f64 = plan.hosts.iter().filter_map(|h| h.share).sum();
            if total_share > 1.0 + 1e-12 {
                return Err(Error::Plan(format!("host shares sum to {total_share} > 1")));
            }
            let mut start = 0;
            for h in &plan.hosts {
                let n = ((h.share.unwrap() * total as f64).floor() as usize).min(total - start);
                host_rows.push(pool[start..start + n].to_vec());
                start += n;
            }
        }
        _ => {
            let remaining: Vec<usize> = (0..k).map(|c| available[c] - cursor[c]).collect();
            let mut frac_sum = vec![0.0; k];
            for (h, counts) in plan.hosts.iter().zip(&host_counts) {
                let counts = match counts {
                    Some(c) => c.clone(),
                    None => {
                        let fr = h.class_fractions.as_ref().unwrap();
                        check_len(fr.len(), k, &format!("host {} class_fractions", h.host_id))?;
                        for (c, f) in fr.iter().enumerate() {
                            if !(0.0..=1.0).contains(f) {
                                return Err(Error::Plan(format!("host {} fraction {f} outside [0, 1]", h.host_id)));
                            }
                            frac_sum[c] += f;
                        }
                        fr.iter()
                            .zip(&remaining)
                            .map(|(f, &n)| (f * n as f64).floor() as usize)
                            .collect()
                    }
                };
                if let Some(c) = (0..k).find(|&c| frac_sum[c] > 1.0 + 1e-12) {
                    return Err(Error::Plan(format!("class {c} fractions sum past 1")));
                }
                let rows = (0..k).flat_map(|c| take(c, counts[c], &mut cursor)).collect();
                host_rows.push(rows);
            }
        }
    }

    for (h, rows) in plan.hosts.iter().zip(&host_rows) {
        if rows.is_empty() {
            return Err(Error::Plan(format!("host {} would receive no samples", h.host_id)));
        }
    }

    let mut used = vec![false; data.n_samples()];
    for &r in test_rows.iter().chain(host_rows.iter().flatten()) {
        used[r] = true;
    }
    let discarded_rows = (0..data.n_samples()).filter(|&r| !used[r]).collect();

    let inject = plan.scheme == PartitionScheme::InjectedFeatureBias;
    let mut hosts = Vec::with_capacity(plan.hosts.len());
    for (idx, (h, rows)) in plan.hosts.iter().zip(host_rows).enumerate() {
        let mut part = data.subset(&rows)?;
        if inject {
            part = inject_bias(&part, h.bias.as_ref().unwrap(), derive_seed(plan.seed, 1_000 + idx as u64))?;
        }
        hosts.push(HostPartition {
            host_id: h.host_id.clone(),
            data: part,
            source_rows: rows,
        });
    }

    let test = if test_rows.is_empty() {
        None
    } else {
        let mut t = data.subset(&test_rows)?;
        if inject {
            let bias = plan
                .test
                .as_ref()
                .and_then(|t| t.bias.as_ref())
                .ok_or_else(|| Error::Plan("injected_feature_bias needs a test bias spec".into()))?;
            bias.validate()?;
            t = inject_bias(&t, bias, derive_seed(plan.seed, 999))?;
        }
        Some(t)
    };

    Ok(Partition {
        hosts,
        test,
        test_rows,
        discarded_rows,
        scale,
    })
}

fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::Plan(format!("{what} lists {got} classes, data has {want}")));
    }
    Ok(())
}

fn inject_bias(data: &Dataset, spec: &BiasFeatureSpec, seed: u64) -> Result<Dataset> {
    let mut column = vec![0.0; data.n_samples()];
    let mut rng = SeededRng::new(seed);
    for class in 0..data.n_classes() {
        let mut members: Vec<usize> = (0..data.n_samples()).filter(|&r| data.labels()[r] == class).collect();
        let ones = (spec.fraction_for(class) * members.len() as f64).round() as usize;
        rng.shuffle(&mut members);
        for &r in &members[..ones] {
            column[r] = 1.0;
        }
    }
    data.with_appended_column(&spec.feature_name, &column)
}

/// Two isotropic unit-variance Gaussian classes whose means sit at
/// `∓ separation/2` along the all-ones diagonal, so the distance between the
/// means is exactly `separation`. Class 0 rows come first.
pub fn synth_gaussian_blobs(n_per_class: usize, n_features: usize, class_separation: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || n_features == 0 {
        return Err(Error::argument("need at least one sample per class and one feature"));
    }
    let mut rng = SeededRng::new(seed);
    let offset = class_separation / 2.0 / (n_features as f64).sqrt();
    let mut features = Array2::zeros((2 * n_per_class, n_features));
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        let center = if class == 0 { -offset } else { offset };
        for i in 0..n_per_class {
            let r = class * n_per_class + i;
            for c in 0..n_features {
                features[[r, c]] = center + rng.standard_normal();
            }
            labels.push(class);
        }
    }
    Dataset::new(features, labels, 2)
}
