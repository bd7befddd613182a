//! Bundled protocol models and the table of verdicts they are expected to
//! produce.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::diag::Diagnostic;
use crate::parser::{parse, SourceSpec};
use crate::strand::{compile, Compiled};
use crate::verifier::{verify, Config, Status, VerifyError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expected {
    Safe,
    Attack,
    /// Safe to the bound or unknown; never an attack.
    NoAttack,
}

impl Expected {
    pub fn accepts(self, s: &Status) -> bool {
        match self {
            Expected::Safe => matches!(s, Status::Safe { .. }),
            Expected::Attack => s.is_attack(),
            Expected::NoAttack => !s.is_attack(),
        }
    }
}

#[derive(Debug)]
pub struct BuiltinModel {
    pub name: &'static str,
    pub source: &'static str,
    /// Sessions the expected table refers to.
    pub sessions: usize,
    pub expected: &'static [(&'static str, Expected)],
}

use Expected::{Attack as A, Safe as S};

const BASE: &[(&str, Expected)] = &[("G1", S), ("G2", S), ("G3", S), ("G4", A), ("G5", S), ("G6", S), ("G7", A), ("G8", A)];
const G4FIX: &[(&str, Expected)] = &[("G1", S), ("G2", S), ("G3", S), ("G4", S), ("G5", S), ("G6", S), ("G7", A), ("G8", A)];
const G7G8FIX: &[(&str, Expected)] = &[("G1", S), ("G2", S), ("G3", S), ("G4", A), ("G5", S), ("G6", S), ("G7", S), ("G8", S)];
const FIXED: &[(&str, Expected)] = &[("G1", S), ("G2", S), ("G3", S), ("G4", S), ("G5", S), ("G6", S), ("G7", S), ("G8", S)];

static BUILTINS: &[BuiltinModel] = &[
    BuiltinModel { name: "atp-base", source: include_str!("../models/atp-base.anb"), sessions: 1, expected: BASE },
    BuiltinModel { name: "atp-g4fix", source: include_str!("../models/atp-g4fix.anb"), sessions: 1, expected: G4FIX },
    BuiltinModel { name: "atp-g7g8fix", source: include_str!("../models/atp-g7g8fix.anb"), sessions: 1, expected: G7G8FIX },
    BuiltinModel { name: "atp-fixed", source: include_str!("../models/atp-fixed.anb"), sessions: 1, expected: FIXED },
    BuiltinModel {
        name: "toy-replay",
        source: include_str!("../models/toy-replay.anb"),
        sessions: 2,
        expected: &[("G1", A), ("G2", S)],
    },
    BuiltinModel {
        name: "toy-nonce",
        source: include_str!("../models/toy-nonce.anb"),
        sessions: 2,
        expected: &[("G1", S), ("G2", S)],
    },
];

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("unknown builtin model `{0}` (try one of: {})", names().join(", "))]
    Unknown(String),
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

pub fn builtins() -> &'static [BuiltinModel] {
    BUILTINS
}

pub fn names() -> Vec<&'static str> {
    BUILTINS.iter().map(|m| m.name).collect()
}

pub fn builtin_model(name: &str) -> Option<&'static BuiltinModel> {
    BUILTINS.iter().find(|m| m.name == name)
}

pub fn builtin(name: &str) -> Result<SourceSpec, LoadError> {
    builtin_model(name)
        .map(|m| SourceSpec::new(m.source, format!("builtin:{}", m.name)))
        .ok_or_else(|| LoadError::Unknown(name.to_string()))
}

/// Parses and compiles a bundled model.
pub fn load(name: &str) -> Result<Compiled, LoadError> {
    let spec = builtin(name)?;
    let p = parse(&spec).map_err(LoadError::Invalid)?;
    compile(&p).map_err(LoadError::Invalid)
}

#[derive(Clone, Debug)]
pub struct ReproConfig {
    /// Depth for single-session rows.
    pub depth: usize,
    /// Depth for the two-session atp-fixed row.
    pub two_session_depth: usize,
    pub workers: usize,
    /// Per-scenario state cap for single-session rows.
    pub max_states: Option<u64>,
    /// Per-scenario state cap for the two-session row.
    pub two_session_max_states: Option<u64>,
}

/// Default state budget per two-session scenario, about two minutes of
/// search in total on one core.
pub const TWO_SESSION_BUDGET: u64 = 4_000_000;

impl Default for ReproConfig {
    fn default() -> Self {
        ReproConfig {
            depth: 20,
            two_session_depth: 12,
            workers: 1,
            max_states: None,
            two_session_max_states: Some(TWO_SESSION_BUDGET),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReproRow {
    pub model: String,
    pub sessions: usize,
    pub depth: usize,
    pub goal: String,
    pub expected: Expected,
    pub actual: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReproReport {
    pub rows: Vec<ReproRow>,
}

impl ReproReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_json(&self) -> Value {
        json!({ "pass": self.passed(), "rows": self.rows })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>2} {:>5}  {:<4} {:<9} {:<8} result", "model", "s", "depth", "goal", "expected", "actual");
        for r in &self.rows {
            let expected = match r.expected {
                Expected::Safe => "safe",
                Expected::Attack => "attack",
                Expected::NoAttack => "no-attack",
            };
            let _ = writeln!(
                s,
                "{:<12} {:>2} {:>5}  {:<4} {:<9} {:<8} {}",
                r.model,
                r.sessions,
                r.depth,
                r.goal,
                expected,
                r.actual,
                if r.pass { "ok" } else { "MISMATCH" }
            );
        }
        let failed = self.rows.iter().filter(|r| !r.pass).count();
        let _ = writeln!(s, "{} rows, {failed} mismatches", self.rows.len());
        s
    }
}

/// Runs every bundled model against its expected table, plus atp-fixed
/// with two sessions.
pub fn reproduce(cfg: &ReproConfig) -> Result<ReproReport, VerifyError> {
    let mut runs: Vec<(&BuiltinModel, usize, usize, Option<u64>, bool)> =
        BUILTINS.iter().map(|m| (m, m.sessions, cfg.depth, cfg.max_states, false)).collect();
    let fixed = builtin_model("atp-fixed").expect("atp-fixed is bundled");
    runs.push((fixed, 2, cfg.two_session_depth, cfg.two_session_max_states, true));

    let mut rows = Vec::new();
    for (m, sessions, depth, max_states, relaxed) in runs {
        let compiled = load(m.name).expect("bundled models compile");
        let vcfg = Config { sessions, max_depth: depth, workers: cfg.workers, max_states, ..Config::default() };
        let report = verify(&compiled, &vcfg)?;
        for &(goal, want) in m.expected {
            let want = if relaxed && want == Expected::Safe { Expected::NoAttack } else { want };
            let status = &report.verdict(goal).expect("expected goals exist").status;
            rows.push(ReproRow {
                model: m.name.to_string(),
                sessions,
                depth,
                goal: goal.to_string(),
                expected: want,
                actual: status.name().to_string(),
                pass: want.accepts(status),
            });
        }
    }
    Ok(ReproReport { rows })
}
