//! Test suites with provenance, and their on-disk layout.
//!
//! A suite directory holds `manifest.json` and one text file per test under
//! `tests/`, each listing the input coordinates one per line in shortest
//! round-trip decimal form.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a test came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    /// Pre-loaded sample input.
    Sample,
    /// Synthesized for `requirement` starting from test `parent`.
    Generated {
        requirement: String,
        parent: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestSuite {
    pub tests: Vec<TestCase>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dimension: usize,
    tests: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: usize,
    file: String,
    provenance: Provenance,
}

impl TestSuite {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.tests.iter().map(|t| t.input.clone()).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.tests.iter().any(|t| t.input == x)
    }

    /// Appends a test; a generated test must name an earlier parent.
    pub fn push(&mut self, input: Vec<f64>, provenance: Provenance) -> Result<usize> {
        if let Some(first) = self.tests.first() {
            if first.input.len() != input.len() {
                return Err(Error::Dimension(first.input.len(), input.len()));
            }
        }
        if let Provenance::Generated { parent, .. } = &provenance {
            if *parent >= self.tests.len() {
                return Err(Error::Config(format!(
                    "parent test {parent} does not exist yet"
                )));
            }
        }
        self.tests.push(TestCase { input, provenance });
        Ok(self.tests.len() - 1)
    }

    /// Writes `dir/manifest.json` and `dir/tests/NNNNN.vec`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tests_dir = dir.join("tests");
        fs::create_dir_all(&tests_dir).map_err(|e| Error::io(&tests_dir, e))?;
        let mut entries = Vec::with_capacity(self.tests.len());
        for (id, t) in self.tests.iter().enumerate() {
            let file = format!("tests/{id:05}.vec");
            write_vector(&dir.join(&file), &t.input)?;
            entries.push(ManifestEntry {
                id,
                file,
                provenance: t.provenance.clone(),
            });
        }
        let manifest = Manifest {
            dimension: self.tests.first().map_or(0, |t| t.input.len()),
            tests: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::artifact(&path, e.to_string()))?;
        let mut suite = TestSuite::new();
        for (pos, entry) in manifest.tests.into_iter().enumerate() {
            let where_ = format!("test entry {pos} (id {}, file {})", entry.id, entry.file);
            if entry.id != pos {
                return Err(Error::artifact(
                    &path,
                    format!("{where_}: id out of sequence"),
                ));
            }
            let input = read_vector(&dir.join(&entry.file))?;
            if input.len() != manifest.dimension {
                return Err(Error::artifact(
                    &path,
                    format!(
                        "{where_}: {} values, manifest says {}",
                        input.len(),
                        manifest.dimension
                    ),
                ));
            }
            suite
                .push(input, entry.provenance)
                .map_err(|e| Error::artifact(&path, format!("{where_}: {e}")))?;
        }
        Ok(suite)
    }
}

/// One value per line, shortest decimal form that parses back bit-exactly.
pub fn format_vector(x: &[f64]) -> String {
    let mut out = String::with_capacity(x.len() * 20);
    for v in x {
        out.push_str(&format!("{v:?}\n"));
    }
    out
}

pub fn write_vector(path: &Path, x: &[f64]) -> Result<()> {
    fs::write(path, format_vector(x)).map_err(|e| Error::io(path, e))
}

pub fn parse_vector(text: &str, path: &Path) -> Result<Vec<f64>> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            let v: f64 = tok.parse().map_err(|_| {
                Error::artifact(path, format!("value {i}: `{tok}` is not a number"))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::artifact(path, format!("value {i} is not finite")))
            }
        })
        .collect()
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vector(&text, path)
}

/// Inputs read from disk, with labels when the source carried them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InputSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InputJson {
    Plain(Vec<Vec<f64>>),
    Labelled {
        inputs: Vec<Vec<f64>>,
        #[serde(default)]
        labels: Option<Vec<usize>>,
    },
}

/// Loads inputs from a directory of `.vec` files (sorted by name), a single
/// `.vec` file, or a JSON file holding either an array of vectors or an
/// object `{"inputs": [...], "labels": [...]}`.
pub fn load_inputs(path: &Path) -> Result<InputSet> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "vec"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::artifact(path, "no .vec files in directory"));
        }
        let inputs = files
            .iter()
            .map(|f| read_vector(f))
            .collect::<Result<Vec<_>>>()?;
        return Ok(InputSet {
            inputs,
            labels: None,
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|x| x == "json") {
        let parsed: InputJson =
            serde_json::from_str(&text).map_err(|e| Error::artifact(path, e.to_string()))?;
        let set = match parsed {
            InputJson::Plain(inputs) => InputSet {
                inputs,
                labels: None,
            },
            InputJson::Labelled { inputs, labels } => InputSet { inputs, labels },
        };
        if set.inputs.is_empty() {
            return Err(Error::artifact(path, "no inputs"));
        }
        return Ok(set);
    }
    Ok(InputSet {
        inputs: vec![parse_vector(&text, path)?],
        labels: None,
    })
}
