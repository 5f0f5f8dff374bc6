//! On-disk artifact formats.
//!
//! * datasets: JSONL, one sample per line, tokens as space-separated ids
//! * model snapshots: line-oriented text with every `f64` stored as its
//!   16-digit hex bit pattern, so reading back is bit-exact
//! * metrics: CSV with a fixed header, missing values as empty fields
//! * sampling and curation logs: JSONL
//! * manifest: JSON

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use anyhow::{anyhow, bail, ensure, Context as _, Result};
use scpl_core::curation::CurationRecord;
use scpl_core::evaluator::MetricsRecord;
use scpl_core::generator::{Context, CountModel, CountSpec, ModelParams, Smoothing, SoftmaxModel};
use scpl_core::sampler::SamplingRecord;
use scpl_core::world::{GroupLabel, GroupedDataset, Origin, Provenance, Sample, Token};
use serde::{Deserialize, Serialize};

pub const METRICS_HEADER: [&str; 8] = [
    "generation",
    "preference_bias",
    "generation_quality",
    "pass1_a",
    "pass1_d",
    "disparate_bias",
    "similarity",
    "dataset_ratio",
];

pub const MODEL_MAGIC: &str = "scpl-model 1";

pub fn tokens_to_string(tokens: &[Token]) -> String {
    let mut s = String::with_capacity(tokens.len() * 3);
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{t}").unwrap();
    }
    s
}

pub fn parse_tokens(s: &str) -> Result<Vec<Token>> {
    s.split_whitespace()
        .map(|t| t.parse::<Token>().with_context(|| format!("bad token {t:?}")))
        .collect()
}

pub fn parse_group(s: &str) -> Result<GroupLabel> {
    GroupLabel::BOTH
        .into_iter()
        .find(|g| g.as_str() == s)
        .ok_or_else(|| anyhow!("unknown group {s:?}"))
}

fn parse_origin(s: &str) -> Result<Origin> {
    [Origin::Real, Origin::Synthetic, Origin::External]
        .into_iter()
        .find(|o| o.as_str() == s)
        .ok_or_else(|| anyhow!("unknown origin {s:?}"))
}

fn parse_provenance(s: &str) -> Result<Provenance> {
    [Provenance::Real, Provenance::Synthetic, Provenance::Mixed]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| anyhow!("unknown provenance {s:?}"))
}

// ---------------------------------------------------------------------------
// datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub prompt: String,
    pub response: String,
    pub group: String,
    pub generation: u32,
    pub provenance: String,
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

pub fn write_dataset<W: Write>(mut w: W, data: &GroupedDataset) -> Result<()> {
    for s in &data.samples {
        let row = DatasetRow {
            prompt: tokens_to_string(&s.prompt),
            response: tokens_to_string(&s.response),
            group: s.group.as_str().to_string(),
            generation: data.generation,
            provenance: data.provenance.as_str().to_string(),
            origin: s.origin.as_str().to_string(),
            ground_truth: s.ground_truth.as_deref().map(tokens_to_string),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a dataset back. Generation and provenance come from the first row;
/// an empty file yields an empty real dataset of generation 0.
pub fn read_dataset<R: BufRead>(r: R) -> Result<GroupedDataset> {
    let mut samples = Vec::new();
    let mut meta = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DatasetRow = serde_json::from_str(&line).with_context(|| format!("dataset line {}", i + 1))?;
        let here = (row.generation, parse_provenance(&row.provenance)?);
        match meta {
            None => meta = Some(here),
            Some(m) => ensure!(m == here, "dataset line {} disagrees on generation or provenance", i + 1),
        }
        samples.push(Sample {
            prompt: parse_tokens(&row.prompt)?,
            response: parse_tokens(&row.response)?,
            group: parse_group(&row.group)?,
            ground_truth: row.ground_truth.as_deref().map(parse_tokens).transpose()?,
            origin: parse_origin(&row.origin)?,
        });
    }
    let (generation, provenance) = meta.unwrap_or((0, Provenance::Real));
    Ok(GroupedDataset::new(samples, provenance, generation))
}

// ---------------------------------------------------------------------------
// model snapshots

fn hex_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{:016x}", v.to_bits()).unwrap();
    }
}

fn parse_hex(s: &str) -> Result<f64> {
    ensure!(s.len() == 16, "expected 16 hex digits, got {s:?}");
    Ok(f64::from_bits(u64::from_str_radix(s, 16).with_context(|| format!("bad hex float {s:?}"))?))
}

fn parse_hex_row(s: &str, len: usize) -> Result<Vec<f64>> {
    let row = s.split_whitespace().map(parse_hex).collect::<Result<Vec<_>>>()?;
    ensure!(row.len() == len, "row has {} values, expected {len}", row.len());
    Ok(row)
}

fn context_name(c: Context) -> &'static str {
    c.as_str()
}

fn parse_context(s: &str) -> Result<Context> {
    [Context::Unigram, Context::Bigram, Context::Prompt]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| anyhow!("unknown context {s:?}"))
}

fn parse_smoothing(s: &str) -> Result<Smoothing> {
    [Smoothing::Additive, Smoothing::UnigramBackoff]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| anyhow!("unknown smoothing {s:?}"))
}

/// Text snapshot of a model. Header lines are `key value`; the payload
/// follows the `payload` line.
pub fn model_to_string(model: &ModelParams) -> String {
    let mut out = String::new();
    writeln!(out, "{MODEL_MAGIC}").unwrap();
    match model {
        ModelParams::CountNgram(m) => {
            let spec = m.spec();
            let v = spec.vocab_size;
            writeln!(out, "variant count_ngram").unwrap();
            writeln!(out, "order {}", spec.context.order()).unwrap();
            writeln!(out, "context {}", context_name(spec.context)).unwrap();
            writeln!(out, "smoothing {}", spec.smoothing.as_str()).unwrap();
            writeln!(out, "lambda {:016x}", spec.lambda.to_bits()).unwrap();
            writeln!(out, "vocab_size {v}").unwrap();
            if let Some(table) = m.dense() {
                writeln!(out, "payload dense {}", table.len() / v).unwrap();
                for row in table.chunks(v) {
                    hex_row(&mut out, row);
                    out.push('\n');
                }
            } else if let Some((rows, default)) = m.keyed() {
                writeln!(out, "payload keyed {}", rows.len()).unwrap();
                out.push_str("default ");
                hex_row(&mut out, default);
                out.push('\n');
                for (key, row) in rows {
                    write!(out, "row {}", key.len()).unwrap();
                    for t in key {
                        write!(out, " {t}").unwrap();
                    }
                    out.push(' ');
                    hex_row(&mut out, row);
                    out.push('\n');
                }
            }
        }
        ModelParams::SoftmaxUnigram(m) => {
            let v = m.vocab_size();
            writeln!(out, "variant softmax_unigram").unwrap();
            writeln!(out, "order 1").unwrap();
            writeln!(out, "lambda {:016x}", 0f64.to_bits()).unwrap();
            writeln!(out, "vocab_size {v}").unwrap();
            writeln!(out, "payload weights {}", m.features()).unwrap();
            for row in m.weights().chunks(v) {
                hex_row(&mut out, row);
                out.push('\n');
            }
        }
    }
    out
}

pub fn parse_model(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines();
    ensure!(lines.next() == Some(MODEL_MAGIC), "not a model snapshot (missing {MODEL_MAGIC:?})");
    let mut header = BTreeMap::new();
    let payload = loop {
        let line = lines.next().ok_or_else(|| anyhow!("model snapshot has no payload"))?;
        let (key, value) = line.split_once(' ').ok_or_else(|| anyhow!("bad header line {line:?}"))?;
        if key == "payload" {
            break value.to_string();
        }
        header.insert(key.to_string(), value.to_string());
    };
    let get = |k: &str| header.get(k).map(String::as_str).ok_or_else(|| anyhow!("model snapshot lacks {k:?}"));
    let v: usize = get("vocab_size")?.parse().context("vocab_size")?;
    let lambda = parse_hex(get("lambda")?)?;
    let (layout, count) = payload.split_once(' ').ok_or_else(|| anyhow!("bad payload line"))?;
    let count: usize = count.parse().context("payload count")?;

    let model = match get("variant")? {
        "count_ngram" => {
            let context = parse_context(get("context")?)?;
            let order: u32 = get("order")?.parse().context("order")?;
            ensure!(order == context.order(), "order {order} contradicts context {}", context.as_str());
            let spec = CountSpec::new(context, parse_smoothing(get("smoothing")?)?, lambda, v);
            ModelParams::CountNgram(match layout {
                "dense" => {
                    let mut table = Vec::with_capacity(count * v);
                    for _ in 0..count {
                        let line = lines.next().ok_or_else(|| anyhow!("truncated dense payload"))?;
                        table.extend(parse_hex_row(line, v)?);
                    }
                    CountModel::from_dense(spec, table)?
                }
                "keyed" => {
                    let line = lines.next().ok_or_else(|| anyhow!("missing default row"))?;
                    let default = parse_hex_row(line.strip_prefix("default ").ok_or_else(|| anyhow!("missing default row"))?, v)?;
                    let mut rows = BTreeMap::new();
                    for _ in 0..count {
                        let line = lines.next().ok_or_else(|| anyhow!("truncated keyed payload"))?;
                        let rest = line.strip_prefix("row ").ok_or_else(|| anyhow!("bad keyed row {line:?}"))?;
                        let mut parts = rest.split_whitespace();
                        let k: usize = parts.next().ok_or_else(|| anyhow!("bad keyed row"))?.parse()?;
                        let key = parts.by_ref().take(k).map(|t| t.parse::<Token>()).collect::<Result<Vec<_>, _>>()?;
                        ensure!(key.len() == k, "keyed row is shorter than its key");
                        let row = parts.map(parse_hex).collect::<Result<Vec<_>>>()?;
                        ensure!(row.len() == v, "row has {} values, expected {v}", row.len());
                        rows.insert(key, row);
                    }
                    CountModel::from_keyed(spec, rows, default)?
                }
                other => bail!("unknown count payload layout {other:?}"),
            })
        }
        "softmax_unigram" => {
            ensure!(layout == "weights", "softmax payload must be weights");
            let mut weights = Vec::with_capacity(count * v);
            for _ in 0..count {
                let line = lines.next().ok_or_else(|| anyhow!("truncated weight payload"))?;
                weights.extend(parse_hex_row(line, v)?);
            }
            ModelParams::SoftmaxUnigram(SoftmaxModel::from_weights(v, weights)?)
        }
        other => bail!("unknown model variant {other:?}"),
    };
    ensure!(lines.all(|l| l.trim().is_empty()), "trailing data after payload");
    Ok(model)
}

// ---------------------------------------------------------------------------
// metrics

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_fields(r: &MetricsRecord) -> [String; 8] {
    [
        r.generation.to_string(),
        opt(r.preference_bias),
        opt(r.generation_quality),
        opt(r.pass1_a),
        opt(r.pass1_d),
        opt(r.disparate_bias),
        opt(r.similarity),
        r.dataset_ratio.to_string(),
    ]
}

/// Metrics CSV writer that flushes after every row.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        self.inner.write_record(metrics_fields(record))?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn metrics_to_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut w = MetricsWriter::new(&mut buf)?;
        for r in records {
            w.write(r)?;
        }
    }
    Ok(String::from_utf8(buf)?)
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        Ok(Some(s.parse().with_context(|| format!("bad number {s:?}"))?))
    }
}

pub fn read_metrics<R: std::io::Read>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    ensure!(header == METRICS_HEADER, "unexpected metrics header {header:?}");
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        ensure!(row.len() == 8, "metrics row has {} fields", row.len());
        out.push(MetricsRecord {
            generation: row[0].parse().context("generation")?,
            preference_bias: parse_opt(&row[1])?,
            generation_quality: parse_opt(&row[2])?,
            pass1_a: parse_opt(&row[3])?,
            pass1_d: parse_opt(&row[4])?,
            disparate_bias: parse_opt(&row[5])?,
            similarity: parse_opt(&row[6])?,
            dataset_ratio: row[7].parse().context("dataset_ratio")?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// logs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRow {
    pub t: u32,
    pub s_a: Option<f64>,
    pub s_d: Option<f64>,
    pub r_d: f64,
    pub n_a: usize,
    pub n_d: usize,
    pub mode: String,
}

impl From<&SamplingRecord> for SamplingRow {
    fn from(r: &SamplingRecord) -> Self {
        let finite = |x: f64| x.is_finite().then_some(x);
        Self {
            t: r.t,
            s_a: finite(r.s_a),
            s_d: finite(r.s_d),
            r_d: r.r_d,
            n_a: r.n_a,
            n_d: r.n_d,
            mode: r.mode.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRow {
    pub generation: u32,
    pub prompt_id: u64,
    pub group: String,
    pub reward: f64,
    pub strategy: String,
    pub round: usize,
}

impl CurationRow {
    pub fn new(generation: u32, r: &CurationRecord) -> Self {
        Self {
            generation,
            prompt_id: r.prompt_id,
            group: r.group.as_str().to_string(),
            reward: r.reward,
            strategy: r.strategy.as_str().to_string(),
            round: r.round,
        }
    }
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// manifest

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SAMPLING_FILE: &str = "sampling.jsonl";
pub const CURATION_FILE: &str = "curation.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const MODELS_DIR: &str = "models";
pub const DATASETS_DIR: &str = "datasets";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub sweep: String,
    pub experiment: String,
    pub seed: u64,
    pub world_seed: u64,
    /// SHA-256 of the run's `config.toml`.
    pub config_sha256: String,
    pub generations: u32,
    /// Generations whose artifacts are on disk.
    pub completed_generations: u32,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn model_file(t: u32) -> String {
    format!("gen-{t:03}.model")
}

pub fn dataset_file(t: u32) -> String {
    format!("gen-{t:03}.jsonl")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    format!("{:x}", Sha256::digest(bytes))
}
