//! JSONL and CSV dataset formats.
//!
//! JSONL: a header line `{"schema": [...], "K": int, "provenance": str}`
//! followed by one trajectory per line,
//! `{"id": str, "steps": [{"features": {name: value|null}, "action": int, "reward": number|null}]}`.
//!
//! CSV: long format, one row per step, columns `id, t, action, reward` followed
//! by feature columns. Optional leading `# K=<int>` and `# provenance=<text>`
//! lines carry dataset metadata. Feature headers may be typed as `name:num` or
//! `name:cat:A|B|C`; untyped columns are inferred (numeric when every cell
//! parses as a number). Empty cells are missing values.
//!
//! In both formats a missing reward truncates the trajectory before that step.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, FeatureValue, Features, Step, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(Self::Jsonl),
            Some("csv") => Ok(Self::Csv),
            _ => Err(Error::InvalidConfig(format!(
                "cannot infer dataset format from `{}`",
                path.display()
            ))),
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidConfig(format!("unknown dataset format `{other}`"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    match format {
        Format::Jsonl => read_jsonl(BufReader::new(file)),
        Format::Csv => read_csv(BufReader::new(file)),
    }
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    match format {
        Format::Jsonl => write_jsonl(ds, &mut out)?,
        Format::Csv => write_csv(ds, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: FeatureSchema,
    #[serde(rename = "K")]
    n_actions: usize,
    #[serde(default)]
    provenance: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    #[serde(default)]
    features: Features,
    action: u64,
    reward: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    id: String,
    steps: Vec<RawStep>,
}

/// Keeps the steps before the first missing reward.
fn truncate_at_missing(id: &str, steps: Vec<(Features, usize, Option<f64>)>) -> Vec<Step> {
    let mut out = Vec::with_capacity(steps.len());
    for (features, action, reward) in steps {
        match reward {
            Some(reward) => out.push(Step { features, action, reward }),
            None => {
                log::debug!("trajectory `{id}` truncated at stage {} (missing reward)", out.len() + 1);
                break;
            }
        }
    }
    out
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(Error::Parse { line: 1, message: "missing header line".into() }),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| Error::Parse { line: i + 1, message: format!("bad header: {e}") })?;
            }
        }
    };
    header.schema.validate()?;

    let mut trajectories = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let raw: RawTrajectory = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        if raw.steps.is_empty() {
            return Err(Error::Validation(format!(
                "line {lineno}: trajectory `{}` is empty",
                raw.id
            )));
        }
        let mut steps = Vec::with_capacity(raw.steps.len());
        for s in raw.steps {
            if s.action >= header.n_actions as u64 {
                return Err(Error::Schema(format!(
                    "line {lineno}: action {} out of range for K = {}",
                    s.action, header.n_actions
                )));
            }
            steps.push((s.features, s.action as usize, s.reward));
        }
        let steps = truncate_at_missing(&raw.id, steps);
        if steps.is_empty() {
            log::warn!("line {lineno}: trajectory `{}` dropped (no reward at stage 1)", raw.id);
            continue;
        }
        trajectories.push(Trajectory { id: raw.id, steps });
    }
    Dataset::new(header.schema, header.n_actions, trajectories, header.provenance)
}

pub fn write_jsonl<W: Write>(ds: &Dataset, out: &mut W) -> Result<()> {
    let header = Header {
        schema: ds.schema.clone(),
        n_actions: ds.n_actions,
        provenance: ds.provenance.clone(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for traj in &ds.trajectories {
        serde_json::to_writer(&mut *out, traj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

enum ColumnType {
    Typed(FeatureSpec),
    Untyped(String),
}

fn parse_column(header: &str) -> Result<ColumnType> {
    let mut parts = header.splitn(3, ':');
    let name = parts.next().unwrap_or_default().to_string();
    match (parts.next(), parts.next()) {
        (None, _) => Ok(ColumnType::Untyped(name)),
        (Some("num"), None) => Ok(ColumnType::Typed(FeatureSpec::numeric(name))),
        (Some("cat"), Some(cats)) => Ok(ColumnType::Typed(FeatureSpec::categorical(name, cats.split('|')))),
        _ => Err(Error::Parse { line: 1, message: format!("bad column header `{header}`") }),
    }
}

pub fn read_csv<R: Read>(mut reader: R) -> Result<Dataset> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;

    let mut n_actions: Option<usize> = None;
    let mut provenance = String::new();
    let mut offset = 0;
    let mut preamble_lines = 0;
    for line in text.split_inclusive('\n') {
        let Some(meta) = line.trim_start().strip_prefix('#') else { break };
        preamble_lines += 1;
        offset += line.len();
        let meta = meta.trim();
        if let Some(k) = meta.strip_prefix("K=") {
            n_actions = Some(k.trim().parse().map_err(|_| Error::Parse {
                line: preamble_lines,
                message: format!("bad K `{k}`"),
            })?);
        } else if let Some(p) = meta.strip_prefix("provenance=") {
            provenance = p.to_string();
        }
    }

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(&text.as_bytes()[offset..]);
    let headers = rdr.headers()?.clone();
    let fixed = ["id", "t", "action", "reward"];
    if headers.len() < 4 || headers.iter().take(4).ne(fixed.iter().copied()) {
        return Err(Error::Parse {
            line: preamble_lines + 1,
            message: "header must start with id,t,action,reward".into(),
        });
    }
    let columns = headers.iter().skip(4).map(parse_column).collect::<Result<Vec<_>>>()?;

    struct Row {
        t: usize,
        action: usize,
        reward: Option<f64>,
        cells: Vec<String>,
        line: usize,
    }
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Row>> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let line = preamble_lines + i + 2;
        let record = record?;
        let bad = |what: &str, v: &str| Error::Parse { line, message: format!("bad {what} `{v}`") };
        let id = record[0].to_string();
        let t = record[1].parse().map_err(|_| bad("t", &record[1]))?;
        let action = record[2].parse().map_err(|_| bad("action", &record[2]))?;
        let reward = match record[3].trim() {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("reward", v))?),
        };
        let cells = record.iter().skip(4).map(str::to_string).collect();
        if !grouped.contains_key(&id) {
            order.push(id.clone());
        }
        grouped.entry(id).or_default().push(Row { t, action, reward, cells, line });
    }

    let max_action = grouped.values().flatten().map(|r| r.action).max().unwrap_or(0);
    let n_actions = n_actions.unwrap_or((max_action + 1).max(2));
    if let Some(r) = grouped.values().flatten().find(|r| r.action >= n_actions) {
        return Err(Error::Schema(format!(
            "line {}: action {} out of range for K = {n_actions}",
            r.line, r.action
        )));
    }

    let specs: Vec<FeatureSpec> = columns
        .into_iter()
        .enumerate()
        .map(|(j, col)| match col {
            ColumnType::Typed(spec) => spec,
            ColumnType::Untyped(name) => {
                let observed: BTreeSet<&str> = grouped
                    .values()
                    .flatten()
                    .map(|r| r.cells[j].as_str())
                    .filter(|c| !c.is_empty())
                    .collect();
                if observed.iter().all(|c| c.parse::<f64>().is_ok()) {
                    FeatureSpec::numeric(name)
                } else {
                    FeatureSpec::categorical(name, observed)
                }
            }
        })
        .collect();
    let schema = FeatureSchema::new(specs)?;

    let mut trajectories = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = grouped.remove(&id).unwrap_or_default();
        rows.sort_by_key(|r| r.t);
        if let Some(w) = rows.windows(2).find(|w| w[0].t == w[1].t) {
            return Err(Error::Parse { line: w[1].line, message: format!("duplicate stage {} for `{id}`", w[1].t) });
        }
        let mut steps = Vec::with_capacity(rows.len());
        for row in rows {
            let mut features = BTreeMap::new();
            for (spec, cell) in schema.features.iter().zip(&row.cells) {
                let value = match (cell.as_str(), spec.kind) {
                    ("", _) => None,
                    (c, FeatureKind::Numeric) => Some(FeatureValue::Number(c.parse().map_err(|_| {
                        Error::Parse { line: row.line, message: format!("bad number `{c}` for `{}`", spec.name) }
                    })?)),
                    (c, FeatureKind::Categorical) => Some(FeatureValue::Category(c.to_string())),
                };
                features.insert(spec.name.clone(), value);
            }
            steps.push((features, row.action, row.reward));
        }
        let steps = truncate_at_missing(&id, steps);
        if steps.is_empty() {
            log::warn!("trajectory `{id}` dropped (no reward at stage 1)");
            continue;
        }
        trajectories.push(Trajectory { id, steps });
    }
    Dataset::new(schema, n_actions, trajectories, provenance)
}

pub fn write_csv<W: Write>(ds: &Dataset, out: &mut W) -> Result<()> {
    writeln!(out, "# K={}", ds.n_actions)?;
    if !ds.provenance.is_empty() {
        writeln!(out, "# provenance={}", ds.provenance.replace('\n', " "))?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "t".into(), "action".into(), "reward".into()];
    for f in &ds.schema.features {
        header.push(match (&f.kind, &f.categories) {
            (FeatureKind::Categorical, Some(c)) => format!("{}:cat:{}", f.name, c.join("|")),
            _ => format!("{}:num", f.name),
        });
    }
    wtr.write_record(&header)?;
    for traj in &ds.trajectories {
        for (t, step) in traj.steps.iter().enumerate() {
            let mut row = vec![traj.id.clone(), (t + 1).to_string(), step.action.to_string(), step.reward.to_string()];
            for f in &ds.schema.features {
                row.push(match step.feature(&f.name) {
                    None => String::new(),
                    Some(FeatureValue::Number(v)) => v.to_string(),
                    Some(FeatureValue::Category(c)) => c.clone(),
                });
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
