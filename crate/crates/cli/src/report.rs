//! Checks and the byte-stable run report.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt::Write as _;

/// Which side of the tolerance passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// `value ≤ tolerance`.
    Upper,
    /// `value ≥ tolerance`.
    Lower,
}

/// Non-finite values are written as `null` and read back as NaN.
mod lossy_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(with = "lossy_f64")]
    pub value: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub pass: bool,
    /// Observed order `log₂(coarse/fine)` for refinement checks.
    pub order: Option<f64>,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            bound: Bound::Upper,
            pass: value <= tolerance,
            order: None,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            bound: Bound::Lower,
            pass: value >= tolerance,
            order: None,
        }
    }

    /// Error ratio under a halved step, passing when it reaches `min_ratio`.
    pub fn refinement(name: impl Into<String>, coarse: f64, fine: f64, min_ratio: f64) -> Self {
        let ratio = coarse / fine;
        let mut c = Self::at_least(name, ratio, min_ratio);
        c.order = Some(ratio.log2()).filter(|o| o.is_finite());
        c
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

/// Outcome of a run or a verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

impl RunReport {
    /// Checks are sorted by name; an empty report never passes.
    pub fn new(config_hash: String, mut checks: Vec<Check>) -> Self {
        checks.sort_by(|a, b| a.name.cmp(&b.name));
        let all_pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
        Self {
            config_hash,
            checks,
            all_pass,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// One aligned line per check.
    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let op = match c.bound {
                Bound::Upper => "<=",
                Bound::Lower => ">=",
            };
            let order = c.order.map(|o| format!("  order {o:.2}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{}  {:<width$}  {:>12.4e} {op} {:.1e}{order}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance,
            );
        }
        let _ = writeln!(out, "{}", if self.all_pass { "all checks pass" } else { "some checks FAIL" });
        out
    }
}
