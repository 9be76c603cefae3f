//! Documents, class sets, seed lexicons and the loaders that produce them.
//!
//! A [`Corpus`] is an immutable snapshot: once loaded it is shared (usually
//! behind an `Arc`) by every downstream stage.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = usize;

/// Lowercase `raw_text` and split it into maximal runs of alphanumeric
/// characters. Whitespace, punctuation and symbols are boundaries and never
/// part of a token.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    raw_text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub gold_label: Option<ClassId>,
}

impl Document {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, gold_label: Option<ClassId>) -> Self {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text);
        Document {
            id: id.into(),
            raw_text,
            tokens,
            gold_label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
    index: HashMap<String, ClassId>,
}

impl ClassSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = ClassSet::default();
        for name in names {
            let name = name.into();
            if set.index.contains_key(&name) {
                return Err(Error::DuplicateClass(name));
            }
            set.push(name);
        }
        Ok(set)
    }

    fn push(&mut self, name: String) -> ClassId {
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    fn get_or_insert(&mut self, name: &str) -> ClassId {
        match self.index.get(name) {
            Some(&id) => id,
            None => self.push(name.to_owned()),
        }
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Per-class sets of single-token seed words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedLexicon {
    classes: ClassSet,
    seeds: Vec<BTreeSet<String>>,
    owner: HashMap<String, ClassId>,
}

impl SeedLexicon {
    /// Build a lexicon from `(class, seeds)` pairs. Each seed is normalized by
    /// [`tokenize`] and must yield exactly one token; a seed may belong to
    /// only one class.
    pub fn new<I, S, T>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<T>)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut names: Vec<String> = Vec::new();
        let mut seeds = Vec::new();
        let mut owner: HashMap<String, ClassId> = HashMap::new();
        for (class, raw_seeds) in entries {
            let class: String = class.into();
            let id = names.len();
            let mut set = BTreeSet::new();
            for raw in raw_seeds {
                let raw = raw.as_ref();
                let mut tokens = tokenize(raw);
                if tokens.len() != 1 {
                    return Err(Error::SeedNotSingleToken {
                        class,
                        seed: raw.to_owned(),
                        tokens,
                    });
                }
                let seed = tokens.pop().unwrap();
                match owner.get(&seed) {
                    Some(&other) if other != id => {
                        return Err(Error::DuplicateSeed {
                            seed,
                            first: names[other].clone(),
                            second: class,
                        })
                    }
                    _ => {}
                }
                owner.insert(seed.clone(), id);
                set.insert(seed);
            }
            names.push(class);
            seeds.push(set);
        }
        Ok(SeedLexicon {
            classes: ClassSet::new(names)?,
            seeds,
            owner,
        })
    }

    /// Load a JSON object `{class: [seed, ...]}`. Class order follows the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: serde_json::Map<String, serde_json::Value> =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: e.line(),
                message: e.to_string(),
            })?;
        let mut entries = Vec::with_capacity(raw.len());
        for (class, value) in raw {
            let seeds: Vec<String> = serde_json::from_value(value).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: 0,
                message: format!("class `{class}`: {e}"),
            })?;
            entries.push((class, seeds));
        }
        SeedLexicon::new(entries)
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn seeds(&self, class: ClassId) -> &BTreeSet<String> {
        &self.seeds[class]
    }

    /// Class that owns `token` as a seed, if any.
    pub fn class_of(&self, token: &str) -> Option<ClassId> {
        self.owner.get(token).copied()
    }

    pub fn is_seed_of(&self, token: &str, class: ClassId) -> bool {
        self.class_of(token) == Some(class)
    }

    /// Re-index this lexicon onto `classes`. Every lexicon class must exist in
    /// `classes`; classes without seeds get an empty set.
    pub fn aligned_to(&self, classes: &ClassSet) -> Result<SeedLexicon> {
        if self.classes == *classes {
            return Ok(self.clone());
        }
        let mut seeds = vec![BTreeSet::new(); classes.len()];
        let mut owner = HashMap::with_capacity(self.owner.len());
        for (id, name) in self.classes.names().iter().enumerate() {
            let target = classes.id(name).ok_or_else(|| {
                Error::Precondition(format!("lexicon class `{name}` is not a corpus class"))
            })?;
            for seed in &self.seeds[id] {
                owner.insert(seed.clone(), target);
            }
            seeds[target] = self.seeds[id].clone();
        }
        Ok(SeedLexicon {
            classes: classes.clone(),
            seeds,
            owner,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(CorpusFormat::Jsonl),
            "csv" => Some(CorpusFormat::Csv),
            _ => None,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    classes: ClassSet,
    vocabulary: BTreeMap<String, usize>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, classes: ClassSet) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            if let Some(label) = doc.gold_label {
                if label >= classes.len() {
                    return Err(Error::UnknownClass {
                        id: doc.id.clone(),
                        class: format!("#{label}"),
                    });
                }
            }
        }
        let vocabulary = document_frequencies(&documents);
        Ok(Corpus {
            documents,
            classes,
            vocabulary,
            by_id,
        })
    }

    /// Load a corpus file. With `classes` given, every gold label must name one
    /// of them; otherwise classes are collected in order of first appearance.
    pub fn load(path: impl AsRef<Path>, format: CorpusFormat, classes: Option<&ClassSet>) -> Result<Self> {
        let path = path.as_ref();
        let records = match format {
            CorpusFormat::Jsonl => read_jsonl(path)?,
            CorpusFormat::Csv => read_csv(path)?,
        };
        let strict = classes.is_some();
        let mut classes = classes.cloned().unwrap_or_default();
        let mut documents = Vec::with_capacity(records.len());
        for rec in records {
            let gold = match rec.label.as_deref() {
                None | Some("") => None,
                Some(name) if strict => Some(classes.id(name).ok_or_else(|| Error::UnknownClass {
                    id: rec.id.clone(),
                    class: name.to_owned(),
                })?),
                Some(name) => Some(classes.get_or_insert(name)),
            };
            documents.push(Document::new(rec.id, rec.text, gold));
        }
        Corpus::new(documents, classes)
    }

    /// Write the corpus as JSONL (`id`, `text`, optional `label`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for doc in &self.documents {
            let rec = RecordOut {
                id: &doc.id,
                text: &doc.raw_text,
                label: doc.gold_label.map(|l| self.classes.name(l)),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, index: usize) -> &Document {
        &self.documents[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    /// Token to document frequency.
    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn has_gold_labels(&self) -> bool {
        !self.documents.is_empty() && self.documents.iter().all(|d| d.gold_label.is_some())
    }
}

fn document_frequencies(documents: &[Document]) -> BTreeMap<String, usize> {
    let mut vocab = BTreeMap::new();
    for doc in documents {
        let unique: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for tok in unique {
            *vocab.entry(tok.to_owned()).or_insert(0) += 1;
        }
    }
    vocab
}

#[derive(Debug, Deserialize)]
struct RecordIn {
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

struct Record {
    id: String,
    text: String,
    label: Option<String>,
}

impl RecordIn {
    fn validate(self, path: &Path, line: usize) -> Result<Record> {
        let id = self.id.ok_or_else(|| Error::MissingField {
            path: path.to_owned(),
            line,
            field: "id",
        })?;
        let text = self.text.ok_or_else(|| Error::MissingField {
            path: path.to_owned(),
            line,
            field: "text",
        })?;
        Ok(Record {
            id,
            text,
            label: self.label,
        })
    }
}

fn read_jsonl(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: lineno,
            message: e.to_string(),
        })?;
        records.push(rec.validate(path, lineno)?);
    }
    Ok(records)
}

fn read_csv(path: &Path) -> Result<Vec<Record>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut records = Vec::new();
    for row in reader.deserialize::<RecordIn>() {
        let rec = row.map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = records.len() + 2;
        records.push(rec.validate(path, line)?);
    }
    Ok(records)
}
