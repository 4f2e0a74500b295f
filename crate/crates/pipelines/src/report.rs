//! Check records and reports, serialised as schema-versioned JSON or CSV.
//!
//! Every float is written with 17 significant digits (`{:.16e}`) so reruns
//! compare byte for byte. Wall time is kept out of the serialised body.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::Duration;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Direction of a tolerance comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Pass iff value ≤ tol.
    AtMost,
    /// Pass iff value ≥ tol (negative controls).
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tol: f64) -> Check {
        Check {
            name: name.into(),
            value,
            tol,
            bound: Bound::AtMost,
            pass: value <= tol,
        }
    }

    pub fn at_least(name: &str, value: f64, tol: f64) -> Check {
        Check {
            name: name.into(),
            value,
            tol,
            bound: Bound::AtLeast,
            pass: value >= tol,
        }
    }

    /// A boolean check recorded as value 1 (true) or 0 against tol 1.
    pub fn holds(name: &str, ok: bool) -> Check {
        Check::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: Option<u64>,
    pub settings: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub values: BTreeMap<String, f64>,
    pub outputs: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub provenance: Provenance,
    #[serde(skip)]
    pub wall_time: Option<Duration>,
}

impl Report {
    pub fn new(scenario: &str) -> Report {
        Report {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.into(),
            pass: true,
            checks: Vec::new(),
            values: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: Vec::new(),
            provenance: Provenance::default(),
            wall_time: None,
        }
    }

    pub fn check(&mut self, c: Check) -> &mut Self {
        self.pass &= c.pass;
        self.checks.push(c);
        self
    }

    pub fn value(&mut self, name: &str, v: f64) -> &mut Self {
        self.values.insert(name.into(), v);
        self
    }

    pub fn output(&mut self, name: &str, text: String) -> &mut Self {
        self.outputs.insert(name.into(), text);
        self
    }

    pub fn note(&mut self, text: String) -> &mut Self {
        self.notes.push(text);
        self
    }

    pub fn setting(&mut self, name: &str, v: f64) -> &mut Self {
        self.provenance.settings.insert(name.into(), v);
        self
    }

    /// Appends the checks, values and notes of `other`, prefixing names.
    pub fn absorb(&mut self, prefix: &str, other: Report) -> &mut Self {
        for mut c in other.checks {
            c.name = format!("{prefix}.{}", c.name);
            self.check(c);
        }
        for (k, v) in other.values {
            self.values.insert(format!("{prefix}.{k}"), v);
        }
        for (k, v) in other.outputs {
            self.outputs.insert(format!("{prefix}.{k}"), v);
        }
        self.notes.extend(other.notes);
        self
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter::default());
        self.serialize(&mut ser).expect("reports serialise");
        buf.push(b'\n');
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// One row per check: scenario, check, value, tol, pass.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            w.write_record(["scenario", "check", "value", "tol", "pass"])?;
        }
        for c in &self.checks {
            w.write_record([
                self.scenario.as_str(),
                c.name.as_str(),
                &sci(c.value),
                &sci(c.tol),
                if c.pass { "true" } else { "false" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, true).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// 17 significant digits.
pub fn sci(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Hex SHA-256 of the given bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Pretty JSON with every float in `{:.16e}` form.
#[derive(Default)]
struct SciFormatter {
    pretty: PrettyFormatter<'static>,
}

impl Formatter for SciFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(writer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_and_overall_verdict() {
        let mut r = Report::new("demo");
        r.check(Check::at_most("small", 1e-9, 1e-8));
        assert!(r.pass);
        r.check(Check::at_least("negative control", 1e-4, 1e-2));
        assert!(!r.pass);
        assert!(!Check::at_most("nan", f64::NAN, 1.0).pass);
        assert!(Check::holds("ok", true).pass && !Check::holds("no", false).pass);
    }

    #[test]
    fn json_uses_seventeen_digits() {
        let mut r = Report::new("demo");
        r.check(Check::at_most("x", 0.1, 1e-6)).value("k", 1.0 / 3.0);
        let json = r.to_json();
        assert!(json.contains("1.0000000000000001e-1"), "{json}");
        assert!(json.contains("3.3333333333333331e-1"));
        assert!(json.contains("\"schema_version\": 1"));
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["values"]["k"].as_f64(), Some(1.0 / 3.0));
    }

    #[test]
    fn csv_rows() {
        let mut r = Report::new("demo");
        r.check(Check::at_most("x", 0.5, 1.0));
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("demo,x,5.0000000000000000e-1"));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            config_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
