//! Evaluation harness: step classification and tallies, key-point scores,
//! McNemar tests between configurations, and automatic pre-flagging of
//! formal syntax.
//!
//! Judgments are recorded by people and read from JSON-lines files; nothing
//! here judges meaning. Display rounding follows the report tables:
//! percentages to 2 places, scores to 3, χ² to 4 and p-values to 4
//! significant figures.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::text::{is_ident_char, looks_formal_name};
use crate::trace::ProofTrace;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no judgments for configuration `{0}`")]
    EmptyConfig(String),
    #[error("no criteria to score")]
    EmptyCriteria,
    #[error("no discordant pairs (b + c = 0)")]
    DegenerateTable,
    #[error("item `{0}` appears more than once")]
    DuplicateItem(String),
    #[error("proof `{proof}` criterion `{criterion}`: {message}")]
    InvalidComposite { proof: String, criterion: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| EvalError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| EvalError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// The four yes/no questions asked of each step explanation, in priority
/// order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepFlags {
    #[serde(default)]
    pub formal_syntax: bool,
    #[serde(default)]
    pub misinformation: bool,
    #[serde(default)]
    pub insufficient: bool,
    #[serde(default)]
    pub unnecessary: bool,
}

impl StepFlags {
    pub fn new(formal_syntax: bool, misinformation: bool, insufficient: bool, unnecessary: bool) -> Self {
        StepFlags { formal_syntax, misinformation, insufficient, unnecessary }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepJudgment {
    pub step_id: String,
    pub config_id: String,
    #[serde(flatten)]
    pub flags: StepFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StepLabel {
    Correct,
    UntranslatedExpression,
    Misinformation,
    InsufficientInformation,
    UnnecessaryMention,
}

impl StepLabel {
    /// Column order of the tally table.
    pub const ALL: [StepLabel; 5] = [
        StepLabel::Correct,
        StepLabel::UntranslatedExpression,
        StepLabel::Misinformation,
        StepLabel::InsufficientInformation,
        StepLabel::UnnecessaryMention,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            StepLabel::Correct => "Correct",
            StepLabel::UntranslatedExpression => "Untranslated",
            StepLabel::Misinformation => "Misinfo",
            StepLabel::InsufficientInformation => "Insufficient",
            StepLabel::UnnecessaryMention => "Unnecessary",
        }
    }
}

/// First raised flag wins: formal syntax, misinformation, insufficient
/// information, unnecessary mention; no flag means correct.
pub fn classify_step(flags: StepFlags) -> StepLabel {
    if flags.formal_syntax {
        StepLabel::UntranslatedExpression
    } else if flags.misinformation {
        StepLabel::Misinformation
    } else if flags.insufficient {
        StepLabel::InsufficientInformation
    } else if flags.unnecessary {
        StepLabel::UnnecessaryMention
    } else {
        StepLabel::Correct
    }
}

/// Label counts for one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub config_id: String,
    pub total: usize,
    pub counts: BTreeMap<StepLabel, usize>,
}

impl Tally {
    pub fn count(&self, label: StepLabel) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    /// Exact share of `label` as (count, total).
    pub fn fraction(&self, label: StepLabel) -> (usize, usize) {
        (self.count(label), self.total)
    }

    pub fn percent(&self, label: StepLabel) -> f64 {
        100.0 * self.count(label) as f64 / self.total as f64
    }

    /// Percentage rounded half up to two places, e.g. `89.05`.
    pub fn percent_display(&self, label: StepLabel) -> String {
        let hundredths = round_half_up(self.count(label) as u128 * 10_000, self.total as u128);
        format!("{}.{:02}", hundredths / 100, hundredths % 100)
    }
}

/// `num / den` rounded half up to an integer.
fn round_half_up(num: u128, den: u128) -> u128 {
    (2 * num + den) / (2 * den)
}

pub fn tally(judgments: &[StepJudgment], config_id: &str) -> Result<Tally, EvalError> {
    let mut counts: BTreeMap<StepLabel, usize> = StepLabel::ALL.iter().map(|l| (*l, 0)).collect();
    let mut total = 0;
    for j in judgments.iter().filter(|j| j.config_id == config_id) {
        *counts.get_mut(&classify_step(j.flags)).unwrap() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(EvalError::EmptyConfig(config_id.to_string()));
    }
    Ok(Tally { config_id: config_id.to_string(), total, counts })
}

/// One tally per configuration, in order of first appearance.
pub fn tally_all(judgments: &[StepJudgment]) -> Vec<Tally> {
    let mut seen = Vec::new();
    for j in judgments {
        if !seen.contains(&j.config_id) {
            seen.push(j.config_id.clone());
        }
    }
    seen.iter().map(|c| tally(judgments, c).expect("configuration has judgments")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionCategory {
    VariableDefinition,
    SublemmaStatement,
    SublemmaProof,
    ProofMethod,
    TheoremReference,
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Captured,
    Partial,
    Missed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionJudgment {
    pub proof_id: String,
    pub criterion_id: String,
    pub category: CriterionCategory,
    pub verdict: Verdict,
    /// Component criterion ids; required for composite criteria.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<String>,
}

/// Checks composite criteria: they list components that exist in the same
/// proof, and are rated captured only when every component is.
pub fn validate_criteria(judgments: &[CriterionJudgment]) -> Result<(), EvalError> {
    let mut index: BTreeMap<(&str, &str), &CriterionJudgment> = BTreeMap::new();
    for j in judgments {
        if index.insert((&j.proof_id, &j.criterion_id), j).is_some() {
            return Err(EvalError::DuplicateItem(format!("{}/{}", j.proof_id, j.criterion_id)));
        }
    }
    let bad = |j: &CriterionJudgment, message: String| EvalError::InvalidComposite {
        proof: j.proof_id.clone(),
        criterion: j.criterion_id.clone(),
        message,
    };
    for j in judgments {
        if j.category != CriterionCategory::Composite {
            if !j.components.is_empty() {
                return Err(bad(j, "only composite criteria list components".into()));
            }
            continue;
        }
        if j.components.is_empty() {
            return Err(bad(j, "composite criterion lists no components".into()));
        }
        for c in &j.components {
            let Some(comp) = index.get(&(j.proof_id.as_str(), c.as_str())) else {
                return Err(bad(j, format!("unknown component `{c}`")));
            };
            if j.verdict == Verdict::Captured && comp.verdict != Verdict::Captured {
                return Err(bad(j, format!("rated captured but component `{c}` is not")));
            }
        }
    }
    Ok(())
}

/// Verdict counts with the key-point score (captured + ½·partial) / total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Score {
    pub captured: usize,
    pub partial: usize,
    pub missed: usize,
}

impl Score {
    pub fn new(captured: usize, partial: usize, missed: usize) -> Result<Self, EvalError> {
        if captured + partial + missed == 0 {
            return Err(EvalError::EmptyCriteria);
        }
        Ok(Score { captured, partial, missed })
    }

    pub fn total(&self) -> usize {
        self.captured + self.partial + self.missed
    }

    pub fn value(&self) -> f64 {
        (self.captured as f64 + 0.5 * self.partial as f64) / self.total() as f64
    }

    /// Three-decimal display. The exact ratio is first rounded half up to
    /// four places and that value is then rounded to three, so (87, 11, 10),
    /// exactly 0.856481..., shows as 0.857 by way of 0.8565. Integer
    /// arithmetic throughout.
    pub fn display(&self) -> String {
        let num = 2 * self.captured as u128 + self.partial as u128;
        let den = 2 * self.total() as u128;
        let four = round_half_up(num * 10_000, den);
        let three = (four + 5) / 10;
        format!("{}.{:03}", three / 1000, three % 1000)
    }

    fn add(self, other: Score) -> Score {
        Score {
            captured: self.captured + other.captured,
            partial: self.partial + other.partial,
            missed: self.missed + other.missed,
        }
    }
}

/// Scores one proof's criteria.
pub fn score_proof(judgments: &[CriterionJudgment]) -> Result<Score, EvalError> {
    let mut s = Score::default();
    for j in judgments {
        match j.verdict {
            Verdict::Captured => s.captured += 1,
            Verdict::Partial => s.partial += 1,
            Verdict::Missed => s.missed += 1,
        }
    }
    Score::new(s.captured, s.partial, s.missed)
}

/// Per-proof scores (in order of first appearance) and the pooled score over
/// all criteria.
pub fn score_all(judgments: &[CriterionJudgment]) -> Result<(Vec<(String, Score)>, Score), EvalError> {
    validate_criteria(judgments)?;
    let mut order: Vec<&str> = Vec::new();
    for j in judgments {
        if !order.contains(&j.proof_id.as_str()) {
            order.push(&j.proof_id);
        }
    }
    let mut per_proof = Vec::new();
    let mut pooled = Score::default();
    for p in order {
        let items: Vec<CriterionJudgment> = judgments.iter().filter(|j| j.proof_id == p).cloned().collect();
        let s = score_proof(&items)?;
        pooled = pooled.add(s);
        per_proof.push((p.to_string(), s));
    }
    let pooled = Score::new(pooled.captured, pooled.partial, pooled.missed)?;
    Ok((per_proof, pooled))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub item_id: String,
    pub correct_under_a: bool,
    pub correct_under_b: bool,
}

/// Discordant counts (A only correct, B only correct).
pub fn discordant_counts(pairs: &[PairedOutcome]) -> Result<(u64, u64), EvalError> {
    let mut seen = HashSet::new();
    let (mut b, mut c) = (0, 0);
    for p in pairs {
        if !seen.insert(p.item_id.as_str()) {
            return Err(EvalError::DuplicateItem(p.item_id.clone()));
        }
        match (p.correct_under_a, p.correct_under_b) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok((b, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub b: u64,
    pub c: u64,
    pub chi_squared: f64,
    pub p_value: f64,
}

impl McNemar {
    pub fn chi_squared_display(&self) -> String {
        format!("{:.4}", self.chi_squared)
    }

    /// Four significant figures with a two-digit exponent, e.g. `7.3460e-08`.
    pub fn p_value_display(&self) -> String {
        sci4(self.p_value)
    }
}

fn sci4(x: f64) -> String {
    let s = format!("{x:.4e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// McNemar's test with continuity correction on discordant counts `b` and
/// `c`: χ² = (|b − c| − 1)² / (b + c), one degree of freedom, so the upper
/// tail probability is erfc(√(χ²/2)).
pub fn mcnemar(b: u64, c: u64) -> Result<McNemar, EvalError> {
    if b + c == 0 {
        return Err(EvalError::DegenerateTable);
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let chi_squared = diff * diff / (b + c) as f64;
    let p_value = erfc((chi_squared / 2.0).sqrt());
    Ok(McNemar { b, c, chi_squared, p_value })
}

/// Names an explanation should not show verbatim: premise names and the
/// variables and hypotheses in scope.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScopeIndex {
    pub premises: BTreeSet<String>,
    pub variables: BTreeSet<String>,
}

impl ScopeIndex {
    pub fn new<P, V>(premises: P, variables: V) -> Self
    where
        P: IntoIterator,
        P::Item: Into<String>,
        V: IntoIterator,
        V::Item: Into<String>,
    {
        ScopeIndex {
            premises: premises.into_iter().map(Into::into).collect(),
            variables: variables.into_iter().map(Into::into).collect(),
        }
    }

    /// Premises of the trace, every hypothesis label of every state, and the
    /// names the syntax tree introduces.
    pub fn from_trace(trace: &ProofTrace) -> Self {
        let mut idx = ScopeIndex::default();
        idx.premises.extend(trace.premises.iter().map(|p| p.name.clone()));
        for s in &trace.steps {
            idx.premises.extend(s.premise_refs.iter().cloned());
            for state in [&s.state_before, &s.state_after] {
                idx.variables.extend(state.hypotheses.iter().map(|h| h.label.clone()));
            }
        }
        for n in trace.ast.nodes() {
            idx.variables.extend(n.introduces.iter().cloned());
        }
        idx
    }

    fn contains(&self, name: &str) -> bool {
        self.premises.contains(name) || self.variables.contains(name)
    }
}

/// True when the text shows formal syntax: `⊢`, `↑`, a backtick-quoted
/// identifier, a premise name with formal shape (`sInf`, `Nat.add_assoc`),
/// or application by juxtaposition of in-scope names such as `x n`. TeX
/// commands (`\inf P`) are not juxtaposition.
pub fn autoflag_formal_syntax(text: &str, scope: &ScopeIndex) -> bool {
    if text.contains('⊢') || text.contains('↑') {
        return true;
    }
    // Odd segments between backticks are quoted, if a closing backtick follows.
    let parts: Vec<&str> = text.split('`').collect();
    let quoted = (1..parts.len().saturating_sub(1)).step_by(2).map(|k| parts[k]);
    if quoted.into_iter().any(|q| !q.trim().is_empty() && q.chars().all(|c| is_ident_char(c) || c == ' ')) {
        return true;
    }
    let tokens = token_spans(text);
    if tokens.iter().any(|(_, t)| scope.premises.contains(*t) && looks_formal_name(t)) {
        return true;
    }
    tokens.windows(2).any(|w| {
        let ((s1, t1), (s2, t2)) = (w[0], w[1]);
        let escaped = text[..s1].ends_with('\\');
        let gap = &text[s1 + t1.len()..s2];
        !escaped && gap == " " && t2.chars().count() == 1 && scope.contains(t1) && scope.contains(t2)
    })
}

fn token_spans(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (start, is_ident_char(c) && i < text.len()) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                let tok = text[s..i].trim_end_matches(['.', '!', '?']);
                let lead = tok.len() - tok.trim_start_matches('.').len();
                let tok = &tok[lead..];
                if !tok.is_empty() {
                    out.push((s + lead, tok));
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Plain-text table of step tallies.
pub fn tally_report(tallies: &[Tally]) -> String {
    let mut out = format!("{:<24}", "config");
    for l in StepLabel::ALL {
        write!(out, "{:>14}", l.short_name()).unwrap();
    }
    writeln!(out, "{:>8}", "n").unwrap();
    for t in tallies {
        write!(out, "{:<24}", t.config_id).unwrap();
        for l in StepLabel::ALL {
            write!(out, "{:>14}", format!("{}%", t.percent_display(l))).unwrap();
        }
        writeln!(out, "{:>8}", t.total).unwrap();
    }
    out
}

/// Plain-text table of key-point scores.
pub fn score_report(rows: &[(String, Score)]) -> String {
    let mut out = format!("{:<24}{:>10}{:>10}{:>10}{:>8}\n", "proof", "captured", "partial", "missed", "score");
    for (name, s) in rows {
        writeln!(out, "{:<24}{:>10}{:>10}{:>10}{:>8}", name, s.captured, s.partial, s.missed, s.display()).unwrap();
    }
    out
}

/// Plain-text table of McNemar results.
pub fn mcnemar_report(rows: &[(String, McNemar)]) -> String {
    let mut out = format!("{:<24}{:>8}{:>8}{:>12}{:>14}\n", "comparison", "A only", "B only", "chi2", "p-value");
    for (name, m) in rows {
        writeln!(
            out,
            "{:<24}{:>8}{:>8}{:>12}{:>14}",
            name,
            m.b,
            m.c,
            m.chi_squared_display(),
            m.p_value_display()
        )
        .unwrap();
    }
    out
}

impl fmt::Display for McNemar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "χ²={} p={}", self.chi_squared_display(), self.p_value_display())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priority_examples() {
        assert_eq!(classify_step(StepFlags::new(true, true, false, false)), StepLabel::UntranslatedExpression);
        assert_eq!(classify_step(StepFlags::default()), StepLabel::Correct);
        assert_eq!(classify_step(StepFlags::new(false, true, true, true)), StepLabel::Misinformation);
    }

    #[test]
    fn all_correct_tally() {
        let js: Vec<StepJudgment> = (0..10)
            .map(|i| StepJudgment { step_id: format!("s{i}"), config_id: "c".into(), flags: StepFlags::default() })
            .collect();
        let t = tally(&js, "c").unwrap();
        assert_eq!(t.percent_display(StepLabel::Correct), "100.00");
        assert_eq!(t.percent_display(StepLabel::Misinformation), "0.00");
        assert!(matches!(tally(&js, "other"), Err(EvalError::EmptyConfig(_))));
    }

    #[test]
    fn score_extremes_and_empty() {
        assert_eq!(Score::new(0, 0, 7).unwrap().value(), 0.0);
        assert_eq!(Score::new(7, 0, 0).unwrap().value(), 1.0);
        assert_eq!(Score::new(7, 0, 0).unwrap().display(), "1.000");
        assert!(matches!(score_proof(&[]), Err(EvalError::EmptyCriteria)));
    }

    #[test]
    fn mcnemar_degenerate() {
        assert!(matches!(mcnemar(0, 0), Err(EvalError::DegenerateTable)));
    }

    #[test]
    fn sci_format_pads_exponent() {
        assert_eq!(sci4(7.346e-8), "7.3460e-08");
        assert_eq!(sci4(0.89576), "8.9576e-01");
        assert_eq!(sci4(1.5841e-81), "1.5841e-81");
    }

    #[test]
    fn composite_rules() {
        let j = |id: &str, cat, verdict, comps: &[&str]| CriterionJudgment {
            proof_id: "p".into(),
            criterion_id: id.into(),
            category: cat,
            verdict,
            components: comps.iter().map(|s| s.to_string()).collect(),
        };
        let ok = [
            j("a", CriterionCategory::SublemmaProof, Verdict::Captured, &[]),
            j("b", CriterionCategory::ProofMethod, Verdict::Partial, &[]),
            j("c", CriterionCategory::Composite, Verdict::Partial, &["a", "b"]),
        ];
        assert!(validate_criteria(&ok).is_ok());
        let mut bad = ok.clone();
        bad[2].verdict = Verdict::Captured;
        assert!(validate_criteria(&bad).is_err());
        bad[2].components.clear();
        assert!(validate_criteria(&bad).is_err());
    }

    #[test]
    fn autoflag_cases() {
        let scope = ScopeIndex::new(["sInf", "Nat.add_assoc"], ["x", "n", "P"]);
        assert!(autoflag_formal_syntax("the set's infimum sInf P is positive", &scope));
        assert!(!autoflag_formal_syntax("the infimum of P is positive", &scope));
        assert!(autoflag_formal_syntax("the n-th element x n of the sequence", &scope));
        assert!(autoflag_formal_syntax("so ⊢ holds", &scope));
        assert!(autoflag_formal_syntax("cast ↑n", &scope));
        assert!(autoflag_formal_syntax("by `foo` we get", &scope));
        assert!(autoflag_formal_syntax("a `b` c `d` e", &scope));
        assert!(!autoflag_formal_syntax("an unclosed ` tick", &scope));
        assert!(!autoflag_formal_syntax("we have $\\inf P > 0$ here", &scope));
    }
}
