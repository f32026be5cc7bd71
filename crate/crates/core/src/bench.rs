//! Synthetic benchmark generation, table I/O, and score assembly.
//!
//! In-distribution data is a Gaussian mixture with isotropic components;
//! outliers come from a separate generator (a ring around the mixture by
//! default). Each split draws from its own seeded stream.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorScore;
use crate::error::{Error, Result};
use crate::gda::{energy_u, mahalanobis_score, GdaModel};
use crate::metrics::ScoreSet;
use crate::mlp::{Batch, MlpModel};
use crate::rng::{stream, Prng, PRNG_NAME, PRNG_VERSION};
use crate::scores::{msp_score, neg_energy_score, Temperature};

/// In-distribution data with labels, or outlier data without.
pub type LabeledDataset = Batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodKind {
    /// Uniform radius in `[r_min, r_max]` around the origin, uniform direction.
    Ring { r_min: f64, r_max: f64 },
    /// Uniform in `[-half_width, half_width]^dim`.
    UniformBox { half_width: f64 },
    /// Isotropic Gaussian centred at `offset * (1, ..., 1)`.
    ShiftedGaussian { offset: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub k_classes: usize,
    pub dim: usize,
    /// Explicit class means; when absent they are `±radius` on the coordinate axes.
    pub class_means: Option<Vec<Vec<f64>>>,
    pub radius: f64,
    pub in_std: f64,
    pub ood_kind: OodKind,
    pub n_train_in: usize,
    pub n_train_out: usize,
    pub n_test_in: usize,
    pub n_test_out: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            k_classes: 2,
            dim: 2,
            class_means: None,
            radius: 4.0,
            in_std: 1.0,
            ood_kind: OodKind::Ring {
                r_min: 10.0,
                r_max: 12.0,
            },
            n_train_in: 2000,
            n_train_out: 2000,
            n_test_in: 1000,
            n_test_out: 1000,
            seed: 7,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_classes < 2 {
            return Err(Error::invalid("benchmark needs at least 2 classes"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("benchmark dimension must be at least 1"));
        }
        for (name, n) in [
            ("n_train_in", self.n_train_in),
            ("n_train_out", self.n_train_out),
            ("n_test_in", self.n_test_in),
            ("n_test_out", self.n_test_out),
        ] {
            if n == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.in_std > 0.0 && self.in_std.is_finite()) {
            return Err(Error::invalid(format!(
                "in_std must be positive, got {}",
                self.in_std
            )));
        }
        if let Some(means) = &self.class_means {
            if means.len() != self.k_classes {
                return Err(Error::DimensionMismatch {
                    expected: self.k_classes,
                    got: means.len(),
                });
            }
            if let Some(m) = means.iter().find(|m| m.len() != self.dim) {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: m.len(),
                });
            }
        }
        match self.ood_kind {
            OodKind::Ring { r_min, r_max }
                if !(0.0 <= r_min && r_min <= r_max && r_max.is_finite()) =>
            {
                Err(Error::invalid("ring needs 0 <= r_min <= r_max"))
            }
            OodKind::UniformBox { half_width } if !positive(half_width) => {
                Err(Error::invalid("box half-width must be positive"))
            }
            OodKind::ShiftedGaussian { std, .. } if !positive(std) => {
                Err(Error::invalid("shifted Gaussian std must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        if let Some(m) = &self.class_means {
            return m.clone();
        }
        (0..self.k_classes)
            .map(|c| {
                let mut v = vec![0.0; self.dim];
                let sign = if (c / self.dim).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                };
                v[c % self.dim] = sign * self.radius;
                v
            })
            .collect()
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkData {
    pub train_in: LabeledDataset,
    pub train_out: LabeledDataset,
    pub test_in: LabeledDataset,
    pub test_out: LabeledDataset,
}

fn draw_in(spec: &BenchmarkSpec, means: &[Vec<f64>], n: usize, rng: &mut Prng) -> Batch {
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.below(spec.k_classes);
        inputs.push(
            means[y]
                .iter()
                .map(|m| m + spec.in_std * rng.normal())
                .collect(),
        );
        labels.push(y);
    }
    Batch {
        inputs,
        labels: Some(labels),
    }
}

fn draw_out(spec: &BenchmarkSpec, n: usize, rng: &mut Prng) -> Batch {
    let d = spec.dim;
    let inputs = (0..n)
        .map(|_| match spec.ood_kind {
            OodKind::Ring { r_min, r_max } => {
                let mut dir: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let r = rng.uniform_in(r_min, r_max);
                for v in &mut dir {
                    *v *= r / norm;
                }
                dir
            }
            OodKind::UniformBox { half_width } => (0..d)
                .map(|_| rng.uniform_in(-half_width, half_width))
                .collect(),
            OodKind::ShiftedGaussian { offset, std } => {
                (0..d).map(|_| offset + std * rng.normal()).collect()
            }
        })
        .collect();
    Batch::unlabeled(inputs)
}

pub fn generate(spec: &BenchmarkSpec) -> Result<BenchmarkData> {
    spec.validate()?;
    let means = spec.means();
    let rng = |s| Prng::new(spec.seed, s);
    Ok(BenchmarkData {
        train_in: draw_in(spec, &means, spec.n_train_in, &mut rng(stream::TRAIN_IN)),
        train_out: draw_out(spec, spec.n_train_out, &mut rng(stream::TRAIN_OUT)),
        test_in: draw_in(spec, &means, spec.n_test_in, &mut rng(stream::TEST_IN)),
        test_out: draw_out(spec, spec.n_test_out, &mut rng(stream::TEST_OUT)),
    })
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    In,
    Out,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::In => "in",
            Split::Out => "out",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Raw64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub split: Split,
    pub label: Option<usize>,
    pub values: Vec<f64>,
}

/// Rows of `split, label, v0..v{cols-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub cols: usize,
    pub rows: Vec<TableRow>,
}

/// Sidecar descriptor for the raw64 format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raw64Descriptor {
    pub rows: usize,
    pub cols: usize,
    /// One entry per row.
    pub splits: Vec<Split>,
    /// One entry per row; `null` for unlabeled rows.
    pub labels: Vec<Option<usize>>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Sidecar path for a raw64 file: `<path>.json`.
pub fn raw64_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Table {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            rows: Vec::new(),
        }
    }

    /// In-distribution rows first, then outliers.
    pub fn from_batches(in_data: &Batch, out_data: &Batch) -> Result<Self> {
        let cols = in_data
            .inputs
            .first()
            .or(out_data.inputs.first())
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("cannot build a table from empty data"))?;
        let mut t = Table::new(cols);
        for (split, data) in [(Split::In, in_data), (Split::Out, out_data)] {
            for (i, x) in data.inputs.iter().enumerate() {
                if x.len() != cols {
                    return Err(Error::DimensionMismatch {
                        expected: cols,
                        got: x.len(),
                    });
                }
                t.rows.push(TableRow {
                    split,
                    label: data.labels.as_ref().map(|l| l[i]),
                    values: x.clone(),
                });
            }
        }
        Ok(t)
    }

    fn batch_of(&self, split: Split) -> Batch {
        let rows: Vec<&TableRow> = self.rows.iter().filter(|r| r.split == split).collect();
        let inputs = rows.iter().map(|r| r.values.clone()).collect();
        let labels = if !rows.is_empty() && rows.iter().all(|r| r.label.is_some()) {
            Some(rows.iter().map(|r| r.label.unwrap()).collect())
        } else {
            None
        };
        Batch { inputs, labels }
    }

    pub fn in_batch(&self) -> Batch {
        self.batch_of(Split::In)
    }

    pub fn out_batch(&self) -> Batch {
        self.batch_of(Split::Out)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,label");
        for i in 0..self.cols {
            let _ = write!(s, ",v{i}");
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(r.split.as_str());
            s.push(',');
            if let Some(l) = r.label {
                let _ = write!(s, "{l}");
            }
            for v in &r.values {
                // `{}` on f64 is the shortest representation that round-trips.
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| parse_err(path, 0, "empty file"))?;
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "split" || cols[1] != "label" {
            return Err(parse_err(path, 1, "header must be `split,label,v0,...`"));
        }
        for (i, c) in cols[2..].iter().enumerate() {
            if *c != format!("v{i}") {
                return Err(parse_err(
                    path,
                    1,
                    format!("expected column v{i}, found {c:?}"),
                ));
            }
        }
        let width = cols.len() - 2;
        let mut table = Table::new(width);
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.trim().split(',').map(str::trim).collect();
            if cells.len() != width + 2 {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {} fields, found {}", width + 2, cells.len()),
                ));
            }
            let split = match cells[0] {
                "in" => Split::In,
                "out" => Split::Out,
                other => return Err(parse_err(path, lineno, format!("unknown split {other:?}"))),
            };
            let label =
                if cells[1].is_empty() {
                    None
                } else {
                    Some(cells[1].parse::<usize>().map_err(|_| {
                        parse_err(path, lineno, format!("bad label {:?}", cells[1]))
                    })?)
                };
            let values = cells[2..]
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    c.parse::<f64>()
                        .map_err(|_| parse_err(path, lineno, format!("v{i}: not a number: {c:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            table.rows.push(TableRow {
                split,
                label,
                values,
            });
        }
        Ok(table)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&read_text(path)?, path)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }

    pub fn write_raw64(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.rows.len() * self.cols * 8);
        for r in &self.rows {
            for v in &r.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let desc = Raw64Descriptor {
            rows: self.rows.len(),
            cols: self.cols,
            splits: self.rows.iter().map(|r| r.split).collect(),
            labels: self.rows.iter().map(|r| r.label).collect(),
        };
        write_text(&raw64_sidecar(path), &serde_json::to_string_pretty(&desc)?)
    }

    pub fn read_raw64(path: &Path) -> Result<Self> {
        let side = raw64_sidecar(path);
        let desc: Raw64Descriptor = serde_json::from_str(&read_text(&side)?)
            .map_err(|e| parse_err(&side, e.line(), e.to_string()))?;
        if desc.splits.len() != desc.rows || desc.labels.len() != desc.rows {
            return Err(parse_err(&side, 0, "splits/labels length must equal rows"));
        }
        if desc.cols == 0 {
            return Err(parse_err(&side, 0, "cols must be at least 1"));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() {
            return Err(parse_err(path, 0, "empty file"));
        }
        if bytes.len() != desc.rows * desc.cols * 8 {
            return Err(parse_err(
                path,
                0,
                format!(
                    "expected {} bytes for {}x{} f64, found {}",
                    desc.rows * desc.cols * 8,
                    desc.rows,
                    desc.cols,
                    bytes.len()
                ),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rows = values
            .chunks_exact(desc.cols)
            .zip(desc.splits.iter().zip(&desc.labels))
            .map(|(v, (&split, &label))| TableRow {
                split,
                label,
                values: v.to_vec(),
            })
            .collect();
        Ok(Table {
            cols: desc.cols,
            rows,
        })
    }
}

pub fn load_table(path: &Path, format: TableFormat) -> Result<Table> {
    match format {
        TableFormat::Csv => Table::read_csv(path),
        TableFormat::Raw64 => Table::read_raw64(path),
    }
}

pub fn write_table(table: &Table, path: &Path, format: TableFormat) -> Result<()> {
    match format {
        TableFormat::Csv => table.write_csv(path),
        TableFormat::Raw64 => table.write_raw64(path),
    }
}

// ---------------------------------------------------------------------------
// Score files: `row,score`

pub fn scores_to_csv(scores: &[f64]) -> String {
    let mut s = String::from("row,score\n");
    for (i, v) in scores.iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s
}

pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 0, "empty file"))?;
    if header.trim() != "row,score" {
        return Err(parse_err(path, 1, "header must be `row,score`"));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let cells: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if cells.len() != 2 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 2 fields, found {}", cells.len()),
            ));
        }
        let row: usize = cells[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad row index {:?}", cells[0])))?;
        if row != out.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected row {}, found {row}", out.len()),
            ));
        }
        let v: f64 = cells[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("not a number: {:?}", cells[1])))?;
        if !v.is_finite() {
            return Err(parse_err(path, lineno, format!("non-finite score {v}")));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    parse_scores(&read_text(path)?, path)
}

pub fn write_scores(path: &Path, scores: &[f64]) -> Result<()> {
    write_text(path, &scores_to_csv(scores))
}

// ---------------------------------------------------------------------------
// Dataset directories

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: BenchmarkSpec,
    pub prng_name: String,
    pub version: u32,
}

impl DatasetManifest {
    pub fn new(spec: &BenchmarkSpec) -> Self {
        Self {
            spec: spec.clone(),
            prng_name: PRNG_NAME.to_string(),
            version: PRNG_VERSION,
        }
    }
}

/// Writes `train.csv`, `test.csv` and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, spec: &BenchmarkSpec, data: &BenchmarkData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Table::from_batches(&data.train_in, &data.train_out)?.write_csv(&dir.join("train.csv"))?;
    Table::from_batches(&data.test_in, &data.test_out)?.write_csv(&dir.join("test.csv"))?;
    let manifest = serde_json::to_string_pretty(&DatasetManifest::new(spec))?;
    write_text(&dir.join("manifest.json"), &(manifest + "\n"))
}

pub fn read_dataset(dir: &Path) -> Result<BenchmarkData> {
    let train = Table::read_csv(&dir.join("train.csv"))?;
    let test = Table::read_csv(&dir.join("test.csv"))?;
    let data = BenchmarkData {
        train_in: train.in_batch(),
        train_out: train.out_batch(),
        test_in: test.in_batch(),
        test_out: test.out_batch(),
    };
    if data.train_in.labels.is_none() {
        return Err(parse_err(
            &dir.join("train.csv"),
            0,
            "every in-distribution training row needs a label",
        ));
    }
    Ok(data)
}

// ---------------------------------------------------------------------------
// Score assembly

/// Maps one input vector to a score where higher means more in-distribution.
pub trait Scorer: Sync {
    fn score(&self, x: &[f64]) -> Result<f64>;
}

/// Logit-based scores from an MLP.
pub struct LogitScorer<'a> {
    pub model: &'a MlpModel,
    pub kind: DetectorScore,
    pub temp: Temperature,
}

impl Scorer for LogitScorer<'_> {
    fn score(&self, x: &[f64]) -> Result<f64> {
        let logits = self.model.forward(x)?;
        match self.kind {
            DetectorScore::NegEnergy => Ok(neg_energy_score(&logits, self.temp)),
            DetectorScore::Msp => Ok(msp_score(&logits)),
            other => Err(Error::invalid(format!("{other:?} is not a logit score"))),
        }
    }
}

/// GDA scores on feature vectors.
pub struct GdaScorer<'a> {
    pub model: &'a GdaModel,
    pub kind: DetectorScore,
}

impl Scorer for GdaScorer<'_> {
    fn score(&self, x: &[f64]) -> Result<f64> {
        match self.kind {
            DetectorScore::NegEnergyGda => Ok(-energy_u(self.model, x)?),
            DetectorScore::Mahalanobis => mahalanobis_score(self.model, x),
            other => Err(Error::invalid(format!("{other:?} is not a GDA score"))),
        }
    }
}

/// Scores every input in order (parallel, order-preserving).
pub fn score_inputs<S: Scorer + ?Sized>(scorer: &S, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    inputs.par_iter().map(|x| scorer.score(x)).collect()
}

pub fn assemble_scores<S: Scorer + ?Sized>(
    scorer: &S,
    test_in: &Batch,
    test_out: &Batch,
) -> Result<ScoreSet> {
    ScoreSet::new(
        score_inputs(scorer, &test_in.inputs)?,
        score_inputs(scorer, &test_out.inputs)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> BenchmarkSpec {
        BenchmarkSpec {
            n_train_in: 50,
            n_train_out: 40,
            n_test_in: 30,
            n_test_out: 20,
            ..BenchmarkSpec::default()
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a, b);
        let other = generate(&BenchmarkSpec {
            seed: 8,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a.train_in, other.train_in);
    }

    #[test]
    fn generate_validates() {
        let bad = BenchmarkSpec {
            n_test_in: 0,
            ..BenchmarkSpec::default()
        };
        assert!(generate(&bad).is_err());
        let bad = BenchmarkSpec {
            in_std: 0.0,
            ..BenchmarkSpec::default()
        };
        assert!(generate(&bad).is_err());
        let bad = BenchmarkSpec {
            k_classes: 1,
            ..BenchmarkSpec::default()
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn default_means_on_axes() {
        assert_eq!(
            BenchmarkSpec::default().means(),
            vec![vec![4.0, 0.0], vec![0.0, 4.0]]
        );
        let s = BenchmarkSpec {
            k_classes: 3,
            dim: 2,
            radius: 1.0,
            ..BenchmarkSpec::default()
        };
        assert_eq!(
            s.means(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]
        );
    }

    #[test]
    fn ring_radius_band() {
        let d = generate(&small_spec()).unwrap();
        for x in d.train_out.inputs.iter().chain(&d.test_out.inputs) {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            assert!((10.0 - 1e-9..=12.0 + 1e-9).contains(&r), "r = {r}");
        }
    }

    #[test]
    fn other_ood_kinds() {
        let s = BenchmarkSpec {
            ood_kind: OodKind::UniformBox { half_width: 3.0 },
            ..small_spec()
        };
        let d = generate(&s).unwrap();
        assert!(d.test_out.inputs.iter().flatten().all(|v| v.abs() <= 3.0));
        let s = BenchmarkSpec {
            ood_kind: OodKind::ShiftedGaussian {
                offset: 50.0,
                std: 1.0,
            },
            ..small_spec()
        };
        let d = generate(&s).unwrap();
        let mean: f64 = d.test_out.inputs.iter().map(|x| x[0]).sum::<f64>() / 20.0;
        assert!((mean - 50.0).abs() < 1.0);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let p = Path::new("t.csv");
        let err = Table::parse_csv("split,label,v0,v1\nin,0,1,2\nout,,1\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = Table::parse_csv("", p).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = Table::parse_csv("split,label,v0\nin,0,abc\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = Table::parse_csv("split,lbl,v0\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = Table::parse_csv("split,label,v0\nmaybe,0,1\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = generate(&small_spec()).unwrap();
        let t = Table::from_batches(&d.train_in, &d.train_out).unwrap();
        let back = Table::parse_csv(&t.to_csv(), Path::new("x")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.in_batch(), d.train_in);
        assert_eq!(back.out_batch(), d.train_out);
    }

    #[test]
    fn score_file_parsing() {
        let p = Path::new("s.csv");
        let s = [1.5, -0.25, 1e-300];
        assert_eq!(parse_scores(&scores_to_csv(&s), p).unwrap(), s.to_vec());
        assert!(parse_scores("", p).is_err());
        assert!(matches!(
            parse_scores("row,score\n0,1\n2,1\n", p),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse_scores("row,score\n0,nan\n", p).is_err());
    }
}
