//! File formats: GMT gene sets and the CSV layouts for expression, clinical
//! features, outcomes, predictions and gene weights.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, ExpressionDataset, Outcome, OutcomeType, Pathway, PathwayCollection};
use crate::error::{PkbError, Result};
use crate::sim::SimulatedData;

/// Parses GMT text: `name<TAB>description<TAB>gene...` per line. Blank lines
/// are skipped.
pub fn parse_gmt_str(text: &str, path: &Path) -> Result<PathwayCollection> {
    let mut pathways = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(PkbError::parse(path, k + 1, "expected name, description and at least one gene"));
        }
        let genes = fields[2..].iter().map(|g| g.trim()).filter(|g| !g.is_empty());
        pathways.push(Pathway::new(fields[0].trim(), genes).with_description(fields[1]));
    }
    Ok(PathwayCollection::new(pathways))
}

pub fn parse_gmt(path: &Path) -> Result<PathwayCollection> {
    let text = std::fs::read_to_string(path).map_err(|e| PkbError::io(path, e))?;
    parse_gmt_str(&text, path)
}

pub fn write_gmt(path: &Path, pathways: &PathwayCollection) -> Result<()> {
    let mut out = String::new();
    for p in pathways.iter() {
        out.push_str(&p.id);
        out.push('\t');
        out.push_str(&p.description);
        for g in &p.genes {
            out.push('\t');
            out.push_str(g);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| PkbError::io(path, e))
}

/// A CSV file read as strings: header plus rows, with 1-based line numbers.
struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| PkbError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(PkbError::parse(path, 1, "header needs a sample column and at least one data column"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            PkbError::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "NaN" | "nan" | "null")
}

fn parse_number(path: &Path, line: usize, column: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| PkbError::parse(path, line, format!("column '{column}': '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(PkbError::parse(path, line, format!("column '{column}': non-finite value")));
    }
    Ok(v)
}

fn check_unique(path: &Path, ids: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(PkbError::Schema(format!("{}: duplicate sample id '{id}'", path.display())));
        }
    }
    Ok(())
}

/// Expression matrix: first column sample id, one column per gene.
pub struct ExpressionTable {
    pub sample_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_expression(path: &Path) -> Result<ExpressionTable> {
    let t = read_table(path)?;
    let gene_ids: Vec<String> = t.header[1..].to_vec();
    let mut sample_ids = Vec::with_capacity(t.rows.len());
    let mut values = DMatrix::zeros(t.rows.len(), gene_ids.len());
    for (i, (line, row)) in t.rows.iter().enumerate() {
        sample_ids.push(row[0].clone());
        for (j, cell) in row[1..].iter().enumerate() {
            values[(i, j)] = parse_number(path, *line, &gene_ids[j], cell)?;
        }
    }
    check_unique(path, &sample_ids)?;
    Ok(ExpressionTable { sample_ids, gene_ids, values })
}

/// Clinical features as read, before encoding.
pub struct ClinicalTable {
    pub sample_ids: Vec<String>,
    pub names: Vec<String>,
    /// column-major raw cells
    pub columns: Vec<Vec<String>>,
}

pub fn read_clinical(path: &Path) -> Result<ClinicalTable> {
    let t = read_table(path)?;
    let names: Vec<String> = t.header[1..].to_vec();
    let mut columns = vec![Vec::with_capacity(t.rows.len()); names.len()];
    let mut sample_ids = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        sample_ids.push(row[0].clone());
        for (j, cell) in row[1..].iter().enumerate() {
            if is_missing(cell) {
                return Err(PkbError::parse(path, *line, format!("missing value in clinical column '{}'", names[j])));
            }
            columns[j].push(cell.clone());
        }
    }
    check_unique(path, &sample_ids)?;
    Ok(ClinicalTable { sample_ids, names, columns })
}

impl ClinicalTable {
    fn numeric(column: &[String]) -> Option<Vec<f64>> {
        column
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect()
    }

    /// Numeric columns pass through; categorical columns become indicators
    /// for every level except the first in sorted order, named `col=level`.
    pub fn encode(&self, rows: &[usize]) -> (Vec<String>, DMatrix<f64>) {
        let mut names = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for (name, column) in self.names.iter().zip(&self.columns) {
            let column: Vec<String> = rows.iter().map(|&i| column[i].clone()).collect();
            if let Some(v) = Self::numeric(&column) {
                names.push(name.clone());
                cols.push(v);
                continue;
            }
            let levels: BTreeSet<&String> = column.iter().collect();
            for level in levels.into_iter().skip(1) {
                names.push(format!("{name}={level}"));
                cols.push(column.iter().map(|c| f64::from(u8::from(c == level))).collect());
            }
        }
        let m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cols[j][i]);
        (names, m)
    }

    /// Encodes to a fixed list of column names, as produced by [`encode`]
    /// on the training data.
    ///
    /// [`encode`]: ClinicalTable::encode
    pub fn encode_as(&self, rows: &[usize], names: &[String]) -> Result<DMatrix<f64>> {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(names.len());
        for name in names {
            if let Some(j) = self.names.iter().position(|n| n == name) {
                let column: Vec<String> = rows.iter().map(|&i| self.columns[j][i].clone()).collect();
                let v = Self::numeric(&column)
                    .ok_or_else(|| PkbError::Schema(format!("clinical column '{name}' is not numeric")))?;
                cols.push(v);
                continue;
            }
            let (base, level) = name
                .rsplit_once('=')
                .ok_or_else(|| PkbError::Schema(format!("clinical column '{name}' missing")))?;
            let j = self
                .names
                .iter()
                .position(|n| n == base)
                .ok_or_else(|| PkbError::Schema(format!("clinical column '{base}' missing")))?;
            cols.push(rows.iter().map(|&i| f64::from(u8::from(self.columns[j][i] == level))).collect());
        }
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| cols[j][i]))
    }
}

/// Outcome file: `sample,y` (regression), `sample,label` (classification,
/// 0/1 or -1/+1) or `sample,time,status` (survival, 1 = event). Rows with a
/// missing outcome are dropped with a warning.
pub fn read_outcome(path: &Path, outcome_type: OutcomeType) -> Result<(Vec<String>, Outcome)> {
    let t = read_table(path)?;
    let needed = match outcome_type {
        OutcomeType::Survival => 3,
        _ => 2,
    };
    if t.header.len() < needed {
        return Err(PkbError::parse(
            path,
            1,
            format!("{} outcome needs {} columns", outcome_type.as_str(), needed),
        ));
    }
    let mut ids = Vec::new();
    let mut y = Vec::new();
    let mut time = Vec::new();
    let mut event = Vec::new();
    let mut dropped = 0;
    for (line, row) in &t.rows {
        if row[1..needed].iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        let v = parse_number(path, *line, &t.header[1], &row[1])?;
        match outcome_type {
            OutcomeType::Regression => y.push(v),
            OutcomeType::Classification => y.push(match v {
                1.0 => 1.0,
                0.0 | -1.0 => -1.0,
                _ => return Err(PkbError::parse(path, *line, format!("label {v} is not 0/1 or -1/+1"))),
            }),
            OutcomeType::Survival => {
                time.push(v);
                let s = parse_number(path, *line, &t.header[2], &row[2])?;
                event.push(match s {
                    1.0 => true,
                    0.0 => false,
                    _ => return Err(PkbError::parse(path, *line, format!("status {s} is not 0 or 1"))),
                });
            }
        }
        ids.push(row[0].clone());
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with missing outcome", path.display());
    }
    check_unique(path, &ids)?;
    let outcome = match outcome_type {
        OutcomeType::Regression => Outcome::Regression(y),
        OutcomeType::Classification => Outcome::Classification(y),
        OutcomeType::Survival => Outcome::survival(time, event),
    };
    outcome.validate()?;
    Ok((ids, outcome))
}

/// Gene weights: `gene,weight` rows.
pub fn read_gene_weights(path: &Path) -> Result<BTreeMap<String, f64>> {
    let t = read_table(path)?;
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        let w = parse_number(path, *line, &t.header[1], &row[1])?;
        if w < 0.0 {
            return Err(PkbError::parse(path, *line, "gene weights must be nonnegative"));
        }
        out.insert(row[0].clone(), w);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// fewer samples after joining is an error
    pub min_samples: usize,
    /// pathways with fewer genes present are dropped
    pub min_pathway_genes: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            min_samples: 10,
            min_pathway_genes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub samples: usize,
    pub samples_unmatched: usize,
    pub genes: usize,
    pub clinical_columns: Vec<String>,
    pub pathways_kept: usize,
    pub pathways_dropped: Vec<String>,
}

pub struct Ingested {
    pub dataset: ExpressionDataset,
    pub pathways: PathwayCollection,
    pub report: IngestReport,
}

pub struct InputPaths<'a> {
    pub expression: &'a Path,
    pub clinical: Option<&'a Path>,
    pub outcome: &'a Path,
    pub pathways: &'a Path,
}

/// Reads and inner-joins the input files on sample id, keeping the order of
/// the expression file. Clinical values are encoded but not standardized.
pub fn ingest(paths: &InputPaths, outcome_type: OutcomeType, options: IngestOptions) -> Result<Ingested> {
    let expr = read_expression(paths.expression)?;
    let clinical = paths.clinical.map(read_clinical).transpose()?;
    let (outcome_ids, outcome) = read_outcome(paths.outcome, outcome_type)?;
    let pathways = parse_gmt(paths.pathways)?;

    let outcome_index: HashMap<&str, usize> =
        outcome_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let clinical_index: Option<HashMap<&str, usize>> = clinical
        .as_ref()
        .map(|c| c.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect());
    let mut expr_rows = Vec::new();
    let mut outcome_rows = Vec::new();
    let mut clinical_rows = Vec::new();
    for (i, id) in expr.sample_ids.iter().enumerate() {
        let Some(&o) = outcome_index.get(id.as_str()) else { continue };
        let c = match &clinical_index {
            Some(ci) => match ci.get(id.as_str()) {
                Some(&c) => Some(c),
                None => continue,
            },
            None => None,
        };
        expr_rows.push(i);
        outcome_rows.push(o);
        if let Some(c) = c {
            clinical_rows.push(c);
        }
    }
    let n = expr_rows.len();
    let total = expr
        .sample_ids
        .len()
        .max(outcome_ids.len())
        .max(clinical.as_ref().map_or(0, |c| c.sample_ids.len()));
    if n < total {
        log::warn!("{} samples not present in every input file", total - n);
    }
    if n < options.min_samples {
        return Err(PkbError::DegenerateOutcome(format!(
            "only {n} samples shared by all input files (need {})",
            options.min_samples
        )));
    }
    let sample_ids: Vec<String> = expr_rows.iter().map(|&i| expr.sample_ids[i].clone()).collect();
    let (clinical_names, z) = match &clinical {
        Some(c) => c.encode(&clinical_rows),
        None => (Vec::new(), DMatrix::zeros(n, 0)),
    };
    let covariates = Covariates::new(
        sample_ids,
        expr.gene_ids.clone(),
        expr.values.select_rows(&expr_rows),
        clinical_names.clone(),
        z,
    )?;
    let dataset = ExpressionDataset::new(covariates, outcome.subset(&outcome_rows))?;
    let (kept, dropped) = pathways.restrict_to(&dataset.covariates, options.min_pathway_genes);
    let report = IngestReport {
        samples: n,
        samples_unmatched: total - n,
        genes: expr.gene_ids.len(),
        clinical_columns: clinical_names,
        pathways_kept: kept.len(),
        pathways_dropped: dropped,
    };
    log::info!(
        "ingested {} samples, {} genes, {} pathways ({} dropped)",
        report.samples,
        report.genes,
        report.pathways_kept,
        report.pathways_dropped.len()
    );
    Ok(Ingested {
        dataset,
        pathways: kept,
        report,
    })
}

/// Reads covariates for prediction. Clinical columns are encoded to
/// `clinical_names` (the columns a model was trained on).
pub fn read_covariates(expression: &Path, clinical: Option<&Path>, clinical_names: &[String]) -> Result<Covariates> {
    let expr = read_expression(expression)?;
    let n = expr.sample_ids.len();
    let z = match clinical {
        Some(path) => {
            let c = read_clinical(path)?;
            let index: HashMap<&str, usize> = c.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let rows = expr
                .sample_ids
                .iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| PkbError::Schema(format!("sample '{id}' has no clinical row")))
                })
                .collect::<Result<Vec<_>>>()?;
            c.encode_as(&rows, clinical_names)?
        }
        None if clinical_names.is_empty() => DMatrix::zeros(n, 0),
        None => return Err(PkbError::Schema("the model needs clinical features".into())),
    };
    Covariates::new(expr.sample_ids, expr.gene_ids, expr.values, clinical_names.to_vec(), z)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| PkbError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| PkbError::io(path, e))
}

pub fn write_expression(path: &Path, cov: &Covariates) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(std::iter::once("sample").chain(cov.gene_ids.iter().map(String::as_str)))?;
    for (i, id) in cov.sample_ids.iter().enumerate() {
        let row = cov.expression.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>();
        w.write_record(std::iter::once(id.clone()).chain(row))?;
    }
    finish(w, path)
}

pub fn write_clinical(path: &Path, cov: &Covariates) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(std::iter::once("sample").chain(cov.clinical_names.iter().map(String::as_str)))?;
    for (i, id) in cov.sample_ids.iter().enumerate() {
        let row = cov.clinical.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>();
        w.write_record(std::iter::once(id.clone()).chain(row))?;
    }
    finish(w, path)
}

pub fn write_outcome(path: &Path, sample_ids: &[String], outcome: &Outcome) -> Result<()> {
    let mut w = csv_writer(path)?;
    match outcome {
        Outcome::Regression(y) => {
            w.write_record(["sample", "y"])?;
            for (id, v) in sample_ids.iter().zip(y) {
                w.write_record([id.clone(), v.to_string()])?;
            }
        }
        Outcome::Classification(y) => {
            w.write_record(["sample", "label"])?;
            for (id, v) in sample_ids.iter().zip(y) {
                w.write_record([id.clone(), v.to_string()])?;
            }
        }
        Outcome::Survival { time, event } => {
            w.write_record(["sample", "time", "status"])?;
            for ((id, t), d) in sample_ids.iter().zip(time).zip(event) {
                w.write_record([id.clone(), t.to_string(), u8::from(*d).to_string()])?;
            }
        }
    }
    finish(w, path)
}

/// Per-sample predictions: raw score and the outcome-scale response.
pub fn write_predictions(path: &Path, sample_ids: &[String], scores: &[f64], responses: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["sample", "score", "prediction"])?;
    for ((id, s), r) in sample_ids.iter().zip(scores).zip(responses) {
        w.write_record([id.clone(), s.to_string(), r.to_string()])?;
    }
    finish(w, path)
}

/// Reads a prediction column keyed by sample id: the column named
/// `prediction` when present, otherwise the second column.
pub fn read_predictions(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let t = read_table(path)?;
    let col = t.header.iter().position(|h| h == "prediction").unwrap_or(1);
    let mut ids = Vec::with_capacity(t.rows.len());
    let mut values = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        ids.push(row[0].clone());
        values.push(parse_number(path, *line, &t.header[col], &row[col])?);
    }
    check_unique(path, &ids)?;
    Ok((ids, values))
}

pub fn write_pathway_weights(path: &Path, weights: &[(String, f64)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["pathway", "weight"])?;
    for (id, v) in weights {
        w.write_record([id.clone(), v.to_string()])?;
    }
    finish(w, path)
}

/// Writes `expression.csv`, `clinical.csv`, `outcome.csv`, `pathways.gmt`
/// and the ground truth `truth.json` into `dir`.
pub fn write_simulated(dir: &Path, sim: &SimulatedData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PkbError::io(dir, e))?;
    let cov = &sim.dataset.covariates;
    write_expression(&dir.join("expression.csv"), cov)?;
    write_clinical(&dir.join("clinical.csv"), cov)?;
    write_outcome(&dir.join("outcome.csv"), &cov.sample_ids, &sim.dataset.outcome)?;
    write_gmt(&dir.join("pathways.gmt"), &sim.pathways)?;
    let truth = dir.join("truth.json");
    std::fs::write(&truth, serde_json::to_string_pretty(&sim.truth)?).map_err(|e| PkbError::io(&truth, e))
}
