//! Corpus loading, reproducible splitting, and planted synthetic corpora.
//!
//! Categorical corpora use one delimited layout with a header row:
//!
//! * multi-label: `id, text, <label_1>, ..., <label_C>` with `0`/`1` cells
//! * single-label: `id, text, label` with one label name per row
//!
//! VAD corpora use `id, text, V, A, D`. The delimiter (comma or tab) is taken
//! from the header line; fields follow standard quoting rules.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labelspace::{AnnotationKind, AnnotationVector, LabelSpace};
use crate::lexicon::{VadLexicon, VadPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub annotation: AnnotationVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadRecord {
    pub id: String,
    pub text: String,
    /// Rescaled to `[0, 1]`.
    pub target: VadPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDataset {
    /// Canonical label order.
    pub labels: Vec<String>,
    pub kind: AnnotationKind,
    pub examples: Vec<LabeledExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadDataset {
    pub examples: Vec<VadRecord>,
}

/// Default source scale of VAD annotations.
pub const DEFAULT_VAD_RANGE: (f64, f64) = (1.0, 5.0);

fn detect_delimiter(content: &str) -> u8 {
    let header = content.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn reader_for(content: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(content))
        .has_headers(true)
        .flexible(false)
        .from_reader(content.as_bytes())
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn check_header_prefix(headers: &csv::StringRecord) -> Result<()> {
    let id = headers.get(0).map(|s| s.trim().to_lowercase());
    let text = headers.get(1).map(|s| s.trim().to_lowercase());
    if id.as_deref() != Some("id") || text.as_deref() != Some("text") {
        return Err(parse_err(
            1,
            "header must start with 'id' and 'text' columns",
        ));
    }
    Ok(())
}

fn read_to_string<R: Read>(mut reader: R) -> Result<String> {
    let mut s = String::new();
    reader.read_to_string(&mut s)?;
    Ok(s.strip_prefix('\u{feff}').map(str::to_string).unwrap_or(s))
}

/// Reorders `found` to follow `wanted`; errors unless they name the same labels.
fn reorder(found: &[String], wanted: &[String]) -> Result<Vec<usize>> {
    if found.len() != wanted.len() {
        return Err(Error::InvalidArgument(format!(
            "dataset declares {} labels, expected {}",
            found.len(),
            wanted.len()
        )));
    }
    wanted
        .iter()
        .map(|w| {
            found
                .iter()
                .position(|f| f.eq_ignore_ascii_case(w))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("label '{w}' missing from dataset header"))
                })
        })
        .collect()
}

impl CategoricalDataset {
    /// Parses a categorical corpus. When `labels` is given it fixes the
    /// canonical order; otherwise header order (multi-label) or order of first
    /// appearance (single-label) is used.
    pub fn load<R: Read>(reader: R, labels: Option<&[String]>) -> Result<Self> {
        let content = read_to_string(reader)?;
        let mut rdr = reader_for(&content);
        let headers = rdr.headers()?.clone();
        check_header_prefix(&headers)?;
        let single = headers.len() == 3 && headers[2].trim().eq_ignore_ascii_case("label");
        let mut seen_ids = HashSet::new();
        let mut check_id = |id: &str, line: usize| -> Result<()> {
            if !seen_ids.insert(id.to_string()) {
                return Err(parse_err(line, format!("duplicate id '{id}'")));
            }
            Ok(())
        };

        if single {
            let mut names: Vec<String> = labels.map(<[String]>::to_vec).unwrap_or_default();
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let line = line_of(&rec);
                let (id, text, name) = (rec[0].to_string(), rec[1].to_string(), rec[2].trim());
                check_id(&id, line)?;
                let idx = match names.iter().position(|n| n.eq_ignore_ascii_case(name)) {
                    Some(i) => i,
                    None if labels.is_none() && !name.is_empty() => {
                        names.push(name.to_string());
                        names.len() - 1
                    }
                    None => return Err(parse_err(line, format!("unknown label name '{name}'"))),
                };
                rows.push((id, text, idx));
            }
            let c = names.len();
            let examples = rows
                .into_iter()
                .map(|(id, text, idx)| {
                    Ok(LabeledExample {
                        id,
                        text,
                        annotation: AnnotationVector::one_hot(c, idx)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Self {
                labels: names,
                kind: AnnotationKind::Single,
                examples,
            });
        }

        let header_labels: Vec<String> = headers
            .iter()
            .skip(2)
            .map(|h| h.trim().to_string())
            .collect();
        if header_labels.is_empty() {
            return Err(parse_err(1, "header declares no labels"));
        }
        let (names, columns) = match labels {
            Some(wanted) => (wanted.to_vec(), reorder(&header_labels, wanted)?),
            None => (header_labels.clone(), (0..header_labels.len()).collect()),
        };
        let mut examples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = line_of(&rec);
            check_id(&rec[0], line)?;
            let mut values = Vec::with_capacity(columns.len());
            for &col in &columns {
                let cell = rec[col + 2].trim();
                values.push(match cell {
                    "0" => 0.0,
                    "1" => 1.0,
                    other => {
                        return Err(parse_err(
                            line,
                            format!("label cell must be 0 or 1, found '{other}'"),
                        ))
                    }
                });
            }
            examples.push(LabeledExample {
                id: rec[0].to_string(),
                text: rec[1].to_string(),
                annotation: AnnotationVector::new(values, AnnotationKind::Multi)?,
            });
        }
        Ok(Self {
            labels: names,
            kind: AnnotationKind::Multi,
            examples,
        })
    }

    pub fn from_path(path: impl AsRef<Path>, labels: Option<&[String]>) -> Result<Self> {
        Self::load(std::fs::File::open(path)?, labels)
    }

    pub fn write<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        match self.kind {
            AnnotationKind::Single => {
                w.write_record(["id", "text", "label"])?;
                for ex in &self.examples {
                    let idx = ex.annotation.positives()[0];
                    w.write_record([ex.id.as_str(), ex.text.as_str(), self.labels[idx].as_str()])?;
                }
            }
            AnnotationKind::Multi => {
                let header: Vec<&str> = ["id", "text"]
                    .into_iter()
                    .chain(self.labels.iter().map(String::as_str))
                    .collect();
                w.write_record(&header)?;
                for ex in &self.examples {
                    let mut row = vec![ex.id.clone(), ex.text.clone()];
                    row.extend(
                        ex.annotation
                            .values()
                            .iter()
                            .map(|&v| if v == 1.0 { "1" } else { "0" }.to_string()),
                    );
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.examples, self.labels.len())
    }
}

/// Positive count per canonical label.
pub fn class_counts(examples: &[LabeledExample], num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; num_labels];
    for ex in examples {
        for i in ex.annotation.positives() {
            counts[i] += 1;
        }
    }
    counts
}

impl VadDataset {
    /// Parses `id, text, V, A, D` rows and rescales scores from `range` to `[0, 1]`.
    pub fn load<R: Read>(reader: R, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid VAD range ({lo}, {hi})"
            )));
        }
        let content = read_to_string(reader)?;
        let mut rdr = reader_for(&content);
        let headers = rdr.headers()?.clone();
        check_header_prefix(&headers)?;
        let dims: Vec<String> = headers
            .iter()
            .skip(2)
            .map(|h| h.trim().to_uppercase())
            .collect();
        if dims != ["V", "A", "D"] {
            return Err(parse_err(1, "VAD header must be 'id, text, V, A, D'"));
        }
        let mut ids = HashSet::new();
        let mut examples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = line_of(&rec);
            if !ids.insert(rec[0].to_string()) {
                return Err(parse_err(line, format!("duplicate id '{}'", &rec[0])));
            }
            let mut scaled = [0.0; 3];
            for (k, slot) in scaled.iter_mut().enumerate() {
                let raw = rec[k + 2].trim();
                let x: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(line, format!("cannot parse score '{raw}'")))?;
                if !(lo..=hi).contains(&x) {
                    return Err(parse_err(
                        line,
                        format!("score {x} outside range [{lo}, {hi}]"),
                    ));
                }
                *slot = rescale(x, range);
            }
            examples.push(VadRecord {
                id: rec[0].to_string(),
                text: rec[1].to_string(),
                target: VadPoint {
                    v: scaled[0],
                    a: scaled[1],
                    d: scaled[2],
                },
            });
        }
        Ok(Self { examples })
    }

    pub fn from_path(path: impl AsRef<Path>, range: (f64, f64)) -> Result<Self> {
        Self::load(std::fs::File::open(path)?, range)
    }

    /// Writes scores mapped back onto `range`.
    pub fn write<W: Write>(&self, writer: W, delimiter: u8, range: (f64, f64)) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        w.write_record(["id", "text", "V", "A", "D"])?;
        for ex in &self.examples {
            let [v, a, d] = ex.target.to_array().map(|x| unscale(x, range).to_string());
            w.write_record([ex.id.as_str(), ex.text.as_str(), &v, &a, &d])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(x - lo) / (hi - lo)`.
pub fn rescale(x: f64, (lo, hi): (f64, f64)) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn unscale(x: f64, (lo, hi): (f64, f64)) -> f64 {
    (lo + x * (hi - lo)).clamp(lo, hi)
}

/// Header fields of a delimited file, trimmed.
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let content = read_to_string(std::fs::File::open(path)?)?;
    let mut rdr = reader_for(&content);
    Ok(rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect())
}

/// Reads `(id, text)` pairs for prediction.
///
/// Input with an `id, text` header is read as a delimited file and extra
/// columns are ignored. Anything else is one text per line, with 1-based line
/// numbers as ids.
pub fn load_texts<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let content = read_to_string(reader)?;
    let header = content.lines().next().unwrap_or("");
    let delim = detect_delimiter(&content) as char;
    let mut cols = header
        .split(delim)
        .map(|c| c.trim().trim_matches('"').to_lowercase());
    if cols.next().as_deref() == Some("id") && cols.next().as_deref() == Some("text") {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delim as u8)
            .flexible(true)
            .from_reader(content.as_bytes());
        let mut out = Vec::new();
        let mut ids = HashSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = line_of(&rec);
            let (Some(id), Some(text)) = (rec.get(0), rec.get(1)) else {
                return Err(parse_err(line, "expected id and text fields"));
            };
            if !ids.insert(id.to_string()) {
                return Err(parse_err(line, format!("duplicate id '{id}'")));
            }
            out.push((id.to_string(), text.to_string()));
        }
        return Ok(out);
    }
    Ok(content
        .lines()
        .enumerate()
        .map(|(i, l)| ((i + 1).to_string(), l.trim_end_matches('\r').to_string()))
        .collect())
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];
pub const DEFAULT_SPLIT_SEED: u64 = 42;

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    Ok(())
}

/// Sizes for a group of `n`: rounded train share, rounded validation share
/// capped by what is left, test takes the rest.
fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize) {
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_valid = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    if ratios[2] == 0.0 {
        (n_train, n - n_train)
    } else {
        (n_train, n_valid)
    }
}

fn assemble<T: Clone>(
    items: &[T],
    mut parts: [Vec<usize>; 3],
    seed: u64,
    ratios: [f64; 3],
) -> DatasetSplit<T> {
    for p in &mut parts {
        p.sort_unstable();
    }
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    DatasetSplit {
        train: pick(&parts[0]),
        valid: pick(&parts[1]),
        test: pick(&parts[2]),
        seed,
        ratios,
    }
}

/// Seeded shuffle followed by a ratio cut. Each split keeps source order.
pub fn shuffled_split<T: Clone>(
    items: &[T],
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit<T>> {
    check_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let (n_train, n_valid) = split_sizes(items.len(), ratios);
    let parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_valid].to_vec(),
        order[n_train + n_valid..].to_vec(),
    ];
    Ok(assemble(items, parts, seed, ratios))
}

/// Per-class seeded split of a single-label corpus.
pub fn stratified_split(
    dataset: &CategoricalDataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit<LabeledExample>> {
    check_ratios(ratios)?;
    if dataset.kind != AnnotationKind::Single {
        return Err(Error::InvalidArgument(
            "stratified split requires a single-label dataset".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for class in 0..dataset.labels.len() {
        let mut members: Vec<usize> = dataset
            .examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.annotation.values()[class] == 1.0)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        if members.len() < 3 && ratios[0] < 1.0 {
            log::warn!(
                "class '{}' has {} examples; all placed in train",
                dataset.labels[class],
                members.len()
            );
            parts[0].extend(members);
            continue;
        }
        let (n_train, n_valid) = split_sizes(members.len(), ratios);
        parts[0].extend(&members[..n_train]);
        parts[1].extend(&members[n_train..n_train + n_valid]);
        parts[2].extend(&members[n_train + n_valid..]);
    }
    Ok(assemble(&dataset.examples, parts, seed, ratios))
}

/// Parameters of a planted corpus.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub labels: Vec<String>,
    pub coords: Vec<VadPoint>,
    /// Disjoint token sets, one per label.
    pub signal_tokens: Vec<Vec<String>>,
    pub noise_tokens: Vec<String>,
    /// Probability that a token position holds a noise token.
    pub noise_rate: f64,
    pub n: usize,
    pub seed: u64,
    pub tokens_per_example: usize,
    /// 1 for single-label corpora; otherwise each example gets 1..=max labels.
    pub max_labels: usize,
}

impl SynthSpec {
    /// A spec with generated vocabularies: `<label>_<k>` signal tokens and
    /// `noise_<k>` noise tokens.
    pub fn generated(
        label_names: &[String],
        lexicon: &VadLexicon,
        n: usize,
        noise_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let coords = label_names
            .iter()
            .map(|l| lexicon.lookup(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labels: label_names.to_vec(),
            coords,
            signal_tokens: label_names
                .iter()
                .map(|l| {
                    (0..8)
                        .map(|k| format!("{}_{k}", l.to_lowercase()))
                        .collect()
                })
                .collect(),
            noise_tokens: (0..40).map(|k| format!("noise_{k}")).collect(),
            noise_rate,
            n,
            seed,
            tokens_per_example: 8,
            max_labels: 1,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.labels.len() < 2
            || self.labels.len() != self.coords.len()
            || self.labels.len() != self.signal_tokens.len()
        {
            return Err(Error::InvalidArgument(
                "need at least 2 labels with one coordinate and one token set each".into(),
            ));
        }
        if self.signal_tokens.iter().any(Vec::is_empty)
            || (self.noise_rate > 0.0 && self.noise_tokens.is_empty())
        {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidArgument(format!(
                "noise rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        if self.tokens_per_example == 0
            || self.max_labels == 0
            || self.max_labels > self.labels.len()
        {
            return Err(Error::InvalidArgument(
                "tokens per example and max labels must be positive; max labels at most the label count".into(),
            ));
        }
        let mut seen = HashSet::new();
        for tok in self
            .signal_tokens
            .iter()
            .flatten()
            .chain(&self.noise_tokens)
        {
            if !seen.insert(tok.to_lowercase()) {
                return Err(Error::InvalidArgument(format!(
                    "token '{tok}' appears in more than one vocabulary"
                )));
            }
        }
        Ok(())
    }
}

/// A generated corpus with its ground-truth VAD per example.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub dataset: CategoricalDataset,
    /// Mean of each example's label coordinates.
    pub truth: Vec<VadPoint>,
}

impl SynthCorpus {
    pub fn vad_dataset(&self) -> VadDataset {
        VadDataset {
            examples: self
                .dataset
                .examples
                .iter()
                .zip(&self.truth)
                .map(|(ex, &target)| VadRecord {
                    id: ex.id.clone(),
                    text: ex.text.clone(),
                    target,
                })
                .collect(),
        }
    }

    pub fn label_space(&self, spec: &SynthSpec) -> Result<LabelSpace> {
        LabelSpace::from_coords(spec.labels.clone(), spec.coords.clone())
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.labels.len();
    let kind = if spec.max_labels == 1 {
        AnnotationKind::Single
    } else {
        AnnotationKind::Multi
    };
    let width = spec.n.to_string().len().max(6);
    let mut examples = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    let all: Vec<usize> = (0..c).collect();
    for i in 0..spec.n {
        let count = if spec.max_labels == 1 {
            1
        } else {
            rng.random_range(1..=spec.max_labels)
        };
        let mut chosen: Vec<usize> = all.choose_multiple(&mut rng, count).copied().collect();
        chosen.sort_unstable();
        let tokens: Vec<&str> = (0..spec.tokens_per_example)
            .map(|_| {
                if rng.random::<f64>() < spec.noise_rate {
                    spec.noise_tokens
                        .choose(&mut rng)
                        .expect("validated")
                        .as_str()
                } else {
                    let label = *chosen.choose(&mut rng).expect("at least one label");
                    spec.signal_tokens[label]
                        .choose(&mut rng)
                        .expect("validated")
                        .as_str()
                }
            })
            .collect();
        let k = chosen.len() as f64;
        let sum = chosen.iter().fold([0.0; 3], |acc, &l| {
            let p = spec.coords[l];
            [acc[0] + p.v, acc[1] + p.a, acc[2] + p.d]
        });
        truth.push(VadPoint {
            v: sum[0] / k,
            a: sum[1] / k,
            d: sum[2] / k,
        });
        let annotation = match kind {
            AnnotationKind::Single => AnnotationVector::one_hot(c, chosen[0])?,
            AnnotationKind::Multi => AnnotationVector::multi_hot(c, &chosen)?,
        };
        examples.push(LabeledExample {
            id: format!("s{i:0width$}"),
            text: tokens.join(" "),
            annotation,
        });
    }
    Ok(SynthCorpus {
        dataset: CategoricalDataset {
            labels: spec.labels.clone(),
            kind,
            examples,
        },
        truth,
    })
}
