//! Report documents. Structured verdicts are TOML with the run's config
//! under `[config]`; tables are CSV preceded by `#` comment lines carrying
//! the same config. Floats are printed with 17 significant digits so that
//! reruns are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Float(f64),
    Int(i64),
    Bool(bool),
    Str(String),
    Floats(Vec<f64>),
    Strs(Vec<String>),
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::Floats(v)
    }
}

impl From<Vec<String>> for Value {
    fn from(v: Vec<String>) -> Self {
        Value::Strs(v)
    }
}

pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Float(x) => fmt_float(*x),
            Value::Int(i) => i.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Str(s) => quote(s),
            Value::Floats(v) => format!("[{}]", v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(", ")),
            Value::Strs(v) => format!("[{}]", v.iter().map(|s| quote(s)).collect::<Vec<_>>().join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, Value)>,
}

impl Section {
    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.entries.push((key.to_string(), value.into()));
        self
    }

    /// Every boolean entry named `pass` or ending in `_pass`.
    fn pass_flags(&self) -> impl Iterator<Item = bool> + '_ {
        self.entries.iter().filter_map(|(k, v)| match v {
            Value::Bool(b) if k == "pass" || k.ends_with("_pass") => Some(*b),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub command: String,
    config: String,
    pub sections: Vec<Section>,
}

impl Document {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.to_toml(),
            sections: Vec::new(),
        }
    }

    pub fn section(&mut self, name: &str) -> &mut Section {
        self.sections.push(Section {
            name: name.to_string(),
            entries: Vec::new(),
        });
        self.sections.last_mut().expect("just pushed")
    }

    /// True iff every pass flag in the document is true.
    pub fn pass(&self) -> bool {
        self.sections.iter().flat_map(|s| s.pass_flags()).all(|b| b)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# glued-dirac {}", self.command).unwrap();
        writeln!(out, "command = {}", quote(&self.command)).unwrap();
        writeln!(out, "pass = {}", self.pass()).unwrap();
        // The config is re-rooted under [config].
        let table: toml::Table = toml::from_str(&self.config).expect("config is valid TOML");
        let mut wrapped = toml::Table::new();
        wrapped.insert("config".into(), toml::Value::Table(table));
        out.push('\n');
        out.push_str(&toml::to_string(&wrapped).expect("table serializes"));
        for s in &self.sections {
            writeln!(out, "\n[{}]", s.name).unwrap();
            for (k, v) in &s.entries {
                writeln!(out, "{k} = {}", v.render()).unwrap();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn render(&self, config: &ExperimentConfig) -> anyhow::Result<String> {
        let mut out = String::new();
        writeln!(out, "# glued-dirac table {}", self.name).unwrap();
        writeln!(out, "# seed = {}", config.seed).unwrap();
        for line in config.to_toml().lines().filter(|l| !l.is_empty()) {
            writeln!(out, "# {line}").unwrap();
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| match v {
                Value::Str(s) => s.clone(),
                other => other.render(),
            }))?;
        }
        out.push_str(std::str::from_utf8(&w.into_inner()?)?);
        Ok(out)
    }
}

/// Output of one command.
#[derive(Debug, Clone, Default)]
pub struct Bundle {
    pub documents: Vec<(String, Document)>,
    pub tables: Vec<Table>,
}

impl Bundle {
    pub fn pass(&self) -> bool {
        self.documents.iter().all(|(_, d)| d.pass())
    }

    pub fn extend(&mut self, other: Bundle) {
        self.documents.extend(other.documents);
        self.tables.extend(other.tables);
    }

    /// `(file name, contents)` in a fixed order.
    pub fn files(&self, config: &ExperimentConfig) -> anyhow::Result<Vec<(String, String)>> {
        let mut files: Vec<(String, String)> = self
            .documents
            .iter()
            .map(|(name, d)| (format!("{name}.toml"), d.render()))
            .collect();
        for t in &self.tables {
            files.push((format!("{}.csv", t.name), t.render(config)?));
        }
        Ok(files)
    }

    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> anyhow::Result<Vec<String>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let files = self.files(config)?;
        for (name, text) in &files {
            let path = dir.join(name);
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(files.into_iter().map(|(n, _)| n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_float(f64::NAN), "nan");
        assert_eq!(fmt_float(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn document_is_valid_toml_with_config() {
        let cfg = ExperimentConfig::default();
        let mut doc = Document::new("verify", &cfg);
        doc.section("identities").set("dq_max", 1e-15).set("pass", true).set("label", "a \"b\"");
        let text = doc.render();
        let parsed: toml::Table = toml::from_str(&text).unwrap();
        assert_eq!(parsed["config"]["seed"].as_integer(), Some(42));
        assert_eq!(parsed["identities"]["label"].as_str(), Some("a \"b\""));
        assert_eq!(parsed["pass"].as_bool(), Some(true));
    }

    #[test]
    fn any_false_flag_fails_the_document() {
        let cfg = ExperimentConfig::default();
        let mut doc = Document::new("x", &cfg);
        doc.section("a").set("pass", true).set("dq_pass", false);
        assert!(!doc.pass());
        doc.sections[0].entries.pop();
        assert!(doc.pass());
    }

    #[test]
    fn csv_has_header_and_comments() {
        let cfg = ExperimentConfig::default();
        let mut t = Table::new("t", &["n", "value"]);
        t.push(vec![1usize.into(), 0.5.into()]);
        let text = t.render(&cfg).unwrap();
        assert!(text.contains("# seed = 42\n"));
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap(), vec!["n", "value"]);
        let row = r.records().next().unwrap().unwrap();
        assert_eq!(&row[1], "5.0000000000000000e-1");
    }
}
