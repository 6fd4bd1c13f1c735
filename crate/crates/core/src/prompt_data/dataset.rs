use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::client::{complete_with_retry, CompletionRequest, LlmClient, RetryPolicy};
use super::templates::{render, QueryTemplate};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Novel,
    All,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class_id: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_suffix: Option<String>,
    pub split: Split,
}

impl ClassRecord {
    pub fn new(class_id: u32, name: impl Into<String>) -> Self {
        Self { class_id, name: name.into(), concept_suffix: None, split: Split::All }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSource {
    Llm,
    #[serde(rename = "handcrafted-80")]
    Handcrafted80,
    HandcraftedAttribute,
    Fixture,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub class_id: u32,
    pub input_text: String,
    pub output_text: String,
    pub source: PairSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// `M`: completions requested per query (1 for handcrafted data).
    pub outputs_per_query: usize,
    /// `N`: queries (or handcrafted templates) per class.
    pub query_count: usize,
    pub generator: String,
    pub input_template: String,
    /// Completions removed by filtering (blank outputs).
    #[serde(default)]
    pub dropped: usize,
}

/// Text-to-text training pairs mapping a class-name input to descriptions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDataset {
    pub pairs: Vec<PromptPair>,
    pub classes: Vec<ClassRecord>,
    pub meta: DatasetMeta,
}

/// Renders the class-name input for every class, appending the concept suffix when present.
pub fn build_inputs(classes: &[ClassRecord], template: &str) -> Result<Vec<String>> {
    classes
        .iter()
        .map(|c| {
            let mut s = render(template, &c.name)?;
            if let Some(suffix) = &c.concept_suffix {
                s.push_str(suffix);
            }
            Ok(s)
        })
        .collect()
}

/// Raw completions grouped by class, in query order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedOutputs {
    pub per_class: BTreeMap<u32, Vec<String>>,
    pub outputs_per_query: usize,
    pub query_count: usize,
    pub dropped: usize,
    pub source: PairSource,
}

/// Asks `client` for `m` completions of every query for every class.
/// Blank completions are dropped (and counted); completions are otherwise kept verbatim.
pub fn generate_outputs(
    classes: &[ClassRecord],
    queries: &[QueryTemplate],
    client: &dyn LlmClient,
    m: usize,
    retry: RetryPolicy,
) -> Result<GeneratedOutputs> {
    if m == 0 {
        return Err(Error::invalid("need at least one completion per query"));
    }
    let mut per_class = BTreeMap::new();
    let mut dropped = 0;
    for class in classes {
        let mut outs = Vec::with_capacity(m * queries.len());
        for q in queries {
            let prompt = q.render(&class.name);
            let req = CompletionRequest { class_id: class.class_id, query_id: q.id, prompt: &prompt, n: m };
            let got = complete_with_retry(client, &req, retry)
                .map_err(|e| Error::Llm(format!("class {} ({}), query {}: {e}", class.class_id, class.name, q.id)))?;
            if got.len() < m {
                log::warn!("class {} query {}: {} of {m} completions returned", class.class_id, q.id, got.len());
                dropped += m - got.len();
            }
            for text in got.into_iter().take(m) {
                if text.trim().is_empty() {
                    log::warn!("class {} query {}: dropping blank completion", class.class_id, q.id);
                    dropped += 1;
                } else {
                    outs.push(text);
                }
            }
        }
        per_class.insert(class.class_id, outs);
    }
    Ok(GeneratedOutputs { per_class, outputs_per_query: m, query_count: queries.len(), dropped, source: client.source() })
}

/// Pairs every generated output with its class's single input string.
pub fn assemble_dataset(
    classes: &[ClassRecord],
    input_template: &str,
    outputs: GeneratedOutputs,
    generator: &str,
) -> Result<PromptDataset> {
    let inputs = build_inputs(classes, input_template)?;
    let by_id: BTreeMap<u32, &String> = classes.iter().map(|c| c.class_id).zip(&inputs).collect();
    let mut pairs = Vec::new();
    for (class_id, outs) in outputs.per_class {
        let input = by_id
            .get(&class_id)
            .ok_or_else(|| Error::invalid(format!("outputs for class {class_id} have no matching input")))?;
        for out in outs {
            pairs.push(PromptPair {
                class_id,
                input_text: (*input).clone(),
                output_text: out,
                source: outputs.source,
            });
        }
    }
    let ds = PromptDataset {
        pairs,
        classes: classes.to_vec(),
        meta: DatasetMeta {
            outputs_per_query: outputs.outputs_per_query,
            query_count: outputs.query_count,
            generator: generator.to_string(),
            input_template: input_template.to_string(),
            dropped: outputs.dropped,
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Handcrafted variant: each of the `K` templates rendered with the class
/// name becomes an output, paired with the class-name input.
pub fn assemble_handcrafted(
    classes: &[ClassRecord],
    input_template: &str,
    templates: &[&str],
    source: PairSource,
) -> Result<PromptDataset> {
    let inputs = build_inputs(classes, input_template)?;
    let mut pairs = Vec::with_capacity(classes.len() * templates.len());
    for (class, input) in classes.iter().zip(&inputs) {
        for t in templates {
            pairs.push(PromptPair {
                class_id: class.class_id,
                input_text: input.clone(),
                output_text: render(t, &class.name)?,
                source,
            });
        }
    }
    let ds = PromptDataset {
        pairs,
        classes: classes.to_vec(),
        meta: DatasetMeta {
            outputs_per_query: 1,
            query_count: templates.len(),
            generator: format!("{source:?}").to_lowercase(),
            input_template: input_template.to_string(),
            dropped: 0,
        },
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    class_id: u32,
    class_name: String,
    input: String,
    output: String,
    source: PairSource,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    classes: Vec<ClassRecord>,
    meta: DatasetMeta,
}

/// Sidecar header for a JSONL dataset: `pairs.jsonl` -> `pairs.header.json`.
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("header.json")
}

impl PromptDataset {
    pub fn class(&self, class_id: u32) -> Option<&ClassRecord> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Outputs grouped by class, in pair order.
    pub fn outputs_by_class(&self) -> BTreeMap<u32, Vec<&str>> {
        let mut m: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
        for p in &self.pairs {
            m.entry(p.class_id).or_default().push(&p.output_text);
        }
        m
    }

    /// Keeps at most `k` pairs per class (the first ones in file order).
    pub fn take_per_class(&self, k: usize) -> PromptDataset {
        let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
        let pairs: Vec<PromptPair> = self
            .pairs
            .iter()
            .filter(|p| {
                let n = seen.entry(p.class_id).or_default();
                *n += 1;
                *n <= k
            })
            .cloned()
            .collect();
        let mut meta = self.meta.clone();
        meta.dropped += self.pairs.len() - pairs.len();
        PromptDataset { pairs, classes: self.classes.clone(), meta }
    }

    /// Restricts to the given classes.
    pub fn subset(&self, class_ids: &BTreeSet<u32>) -> PromptDataset {
        let pairs: Vec<PromptPair> = self.pairs.iter().filter(|p| class_ids.contains(&p.class_id)).cloned().collect();
        let classes = self.classes.iter().filter(|c| class_ids.contains(&c.class_id)).cloned().collect();
        PromptDataset { pairs, classes, meta: self.meta.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for c in &self.classes {
            if !names.insert(c.name.as_str()) {
                return Err(Error::invalid(format!("duplicate class name {:?}", c.name)));
            }
            if !ids.insert(c.class_id) {
                return Err(Error::invalid(format!("duplicate class id {}", c.class_id)));
            }
        }
        let inputs = build_inputs(&self.classes, &self.meta.input_template)?;
        let input_of: BTreeMap<u32, &String> = self.classes.iter().map(|c| c.class_id).zip(&inputs).collect();
        for (i, p) in self.pairs.iter().enumerate() {
            let expected = input_of
                .get(&p.class_id)
                .ok_or_else(|| Error::invalid(format!("pair {i} refers to unknown class {}", p.class_id)))?;
            if &p.input_text != *expected {
                return Err(Error::invalid(format!(
                    "pair {i}: input {:?} differs from the class template {:?}",
                    p.input_text, expected
                )));
            }
            if p.output_text.trim().is_empty() {
                return Err(Error::invalid(format!("pair {i} has an empty output")));
            }
        }
        let expected = self.meta.outputs_per_query * self.meta.query_count * self.classes.len();
        if self.pairs.len() + self.meta.dropped != expected {
            return Err(Error::invalid(format!(
                "{} pairs + {} dropped != M*N*C = {}*{}*{}",
                self.pairs.len(),
                self.meta.dropped,
                self.meta.outputs_per_query,
                self.meta.query_count,
                self.classes.len()
            )));
        }
        Ok(())
    }

    /// Writes JSONL pairs to `path` and the class/meta header next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let names: BTreeMap<u32, &str> = self.classes.iter().map(|c| (c.class_id, c.name.as_str())).collect();
        let mut buf = Vec::new();
        for p in &self.pairs {
            let rec = JsonlRecord {
                class_id: p.class_id,
                class_name: names.get(&p.class_id).copied().unwrap_or_default().to_string(),
                input: p.input_text.clone(),
                output: p.output_text.clone(),
                source: p.source,
            };
            serde_json::to_writer(&mut buf, &rec)?;
            buf.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        let header = DatasetHeader { classes: self.classes.clone(), meta: self.meta.clone() };
        let hp = header_path(path);
        std::fs::write(&hp, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&hp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let hp = header_path(path);
        let header_text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let header: DatasetHeader = serde_json::from_str(&header_text)?;
        let names: BTreeMap<u32, &str> = header.classes.iter().map(|c| (c.class_id, c.name.as_str())).collect();

        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: line_no,
                msg: e.to_string(),
            })?;
            match names.get(&rec.class_id) {
                Some(n) if *n == rec.class_name => {}
                _ => {
                    return Err(Error::Record {
                        path: path.to_path_buf(),
                        line: line_no,
                        msg: format!("class {} ({:?}) is not declared in the header", rec.class_id, rec.class_name),
                    })
                }
            }
            pairs.push(PromptPair { class_id: rec.class_id, input_text: rec.input, output_text: rec.output, source: rec.source });
        }
        let ds = PromptDataset { pairs, classes: header.classes, meta: header.meta };
        ds.validate()?;
        Ok(ds)
    }
}
