//! Checks, suite reports and their on-disk artifacts.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::coverage;

/// Floats that may be infinite or NaN, written as strings in that case.
mod lenient {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn encode(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("bad float {other}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(encode).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(decode).transpose()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub anchor: String,
    pub pass: bool,
    #[serde(with = "lenient")]
    pub value: f64,
    #[serde(with = "lenient")]
    pub bound: f64,
    #[serde(
        with = "lenient::option",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Wall time of the work behind the check; kept out of the JSON so that
    /// reports stay byte-identical across runs.
    #[serde(skip)]
    pub runtime: Duration,
}

impl PartialEq for Check {
    fn eq(&self, other: &Self) -> bool {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        self.name == other.name
            && self.anchor == other.anchor
            && self.pass == other.pass
            && same(self.value, other.value)
            && same(self.bound, other.bound)
            && self.stderr.map(f64::to_bits) == other.stderr.map(f64::to_bits)
            && self.note == other.note
    }
}

impl Check {
    /// `name` is `family` or `family[params]`; the anchor comes from the coverage table.
    pub fn new(name: impl Into<String>, pass: bool, value: f64, bound: f64) -> Self {
        let name = name.into();
        let anchor = coverage::anchor(&name).unwrap_or("unmapped").to_string();
        Self {
            name,
            anchor,
            pass,
            value,
            bound,
            stderr: None,
            note: None,
            runtime: Duration::ZERO,
        }
    }

    /// Passes when `value <= bound` (NaN fails).
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value <= bound, value, bound)
    }

    /// Passes when `value >= bound` (NaN fails).
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value >= bound, value, bound)
    }

    /// `value <= bound + 3 stderr`.
    pub fn at_most_mc(name: impl Into<String>, value: f64, bound: f64, stderr: f64) -> Self {
        Self::new(name, value <= bound + 3.0 * stderr, value, bound).with_stderr(stderr)
    }

    pub fn failure(name: impl Into<String>, note: impl Into<String>) -> Self {
        Self::new(name, false, f64::NAN, f64::NAN).with_note(note)
    }

    pub fn with_stderr(mut self, s: f64) -> Self {
        self.stderr = Some(s);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn with_runtime(mut self, t: Duration) -> Self {
        self.runtime = t;
        self
    }

    /// Family part of the name, before any `[params]`.
    pub fn family(&self) -> &str {
        self.name.split('[').next().unwrap_or(&self.name)
    }
}

/// A CSV artifact: header plus rows of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        self.rows
            .push(row.into_iter().map(|c| c.to_string()).collect());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Output of one suite.
#[derive(Debug, Clone, Default)]
pub struct SuiteOutput {
    pub checks: Vec<Check>,
    pub tables: BTreeMap<String, Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub config_hash: String,
    pub suites: BTreeMap<String, Vec<Check>>,
    pub pass: bool,
    #[serde(skip)]
    pub tables: BTreeMap<String, Table>,
}

impl SuiteReport {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            seed: cfg.seed,
            config_hash: config_hash(cfg),
            suites: BTreeMap::new(),
            pass: true,
            tables: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, suite: &str, out: SuiteOutput) {
        self.pass &= out.checks.iter().all(|c| c.pass);
        self.suites.insert(suite.to_string(), out.checks);
        self.tables.extend(out.tables);
    }

    pub fn checks(&self) -> impl Iterator<Item = (&str, &Check)> {
        self.suites
            .iter()
            .flat_map(|(s, cs)| cs.iter().map(move |c| (s.as_str(), c)))
    }

    pub fn failures(&self) -> Vec<(&str, &Check)> {
        self.checks().filter(|(_, c)| !c.pass).collect()
    }

    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn checks_table(&self) -> Table {
        let mut t = Table::new(&[
            "suite", "name", "anchor", "pass", "value", "bound", "stderr", "note",
        ]);
        for (suite, c) in self.checks() {
            t.push([
                suite.to_string(),
                c.name.clone(),
                c.anchor.clone(),
                c.pass.to_string(),
                c.value.to_string(),
                c.bound.to_string(),
                c.stderr.map(|v| v.to_string()).unwrap_or_default(),
                c.note.clone().unwrap_or_default(),
            ]);
        }
        t
    }

    /// `report.json`, `checks.csv` and one CSV per table.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        self.checks_table().write(&dir.join("checks.csv"))?;
        for (name, t) in &self.tables {
            t.write(&dir.join(format!("{name}.csv")))?;
        }
        Ok(())
    }

    /// Human summary, one line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (suite, c) in self.checks() {
            let tag = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "{tag} {suite}/{} value={:.6e} bound={:.6e}",
                c.name, c.value, c.bound
            ));
            if let Some(n) = &c.note {
                out.push_str(&format!(" ({n})"));
            }
            out.push('\n');
        }
        let total = self.checks().count();
        out.push_str(&format!(
            "{} of {total} checks passed\n",
            total - self.failures().len()
        ));
        out
    }
}

pub fn canonical_json<T: Serialize>(v: &T) -> String {
    // serde_json::Value keeps object keys in a BTreeMap.
    let value = serde_json::to_value(v).expect("serialisable");
    let mut s = serde_json::to_string_pretty(&value).expect("serialisable");
    s.push('\n');
    s
}

/// The output location does not enter the hash.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut cfg = cfg.clone();
    cfg.output = Default::default();
    let digest = Sha256::digest(canonical_json(&cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
