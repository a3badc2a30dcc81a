//! Trace data model and the JSONL trace format.
//!
//! One trace per line:
//!
//! ```text
//! {"id":str,"dataset":str,"model":str,
//!  "decoding":{"temperature":num,"top_p":num,"seed":int},
//!  "steps":[[[token_id,logprob],...],...],
//!  "label":{"correct":bool,"predicted":str,"reference":str},
//!  "output_text":str|null}
//! ```
//!
//! Log probabilities are natural logs under the model's full distribution and
//! are stored raw; renormalization happens at analysis time. Step entries are
//! put in canonical order (logprob descending, token id ascending) at
//! ingestion, and the writer emits keys in the order above with shortest
//! round-trip float formatting, so canonical files round-trip byte-for-byte.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

pub type TokenId = u64;

/// Default generation cap used at collection time.
pub const DEFAULT_MAX_STEPS: usize = 128;

/// Tolerance on the total mass of a [`StepDistribution`].
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(TokenId, f64)", into = "(TokenId, f64)")]
pub struct TokenEntry {
    pub token_id: TokenId,
    pub logprob: f64,
}

impl TokenEntry {
    pub fn new(token_id: TokenId, logprob: f64) -> Self {
        Self { token_id, logprob }
    }
}

impl From<(TokenId, f64)> for TokenEntry {
    fn from((token_id, logprob): (TokenId, f64)) -> Self {
        Self { token_id, logprob }
    }
}

impl From<TokenEntry> for (TokenId, f64) {
    fn from(e: TokenEntry) -> Self {
        (e.token_id, e.logprob)
    }
}

/// Logged top-k list for one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepRecord {
    entries: Vec<TokenEntry>,
}

impl StepRecord {
    /// Builds a step and puts its entries in canonical order.
    pub fn new(entries: Vec<TokenEntry>) -> Self {
        let mut step = Self { entries };
        step.canonicalize();
        step
    }

    pub fn entries(&self) -> &[TokenEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Token ids of the first `m` entries.
    pub fn top_tokens(&self, m: usize) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.iter().take(m).map(|e| e.token_id)
    }

    fn canonicalize(&mut self) {
        self.entries.sort_by(|a, b| {
            b.logprob
                .total_cmp(&a.logprob)
                .then(a.token_id.cmp(&b.token_id))
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub correct: bool,
    pub predicted: String,
    pub reference: String,
}

/// One decoding run. Field order is the canonical JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    pub dataset: String,
    pub model: String,
    pub decoding: Decoding,
    pub steps: Vec<StepRecord>,
    pub label: Label,
    pub output_text: Option<String>,
}

impl TraceRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn correct(&self) -> bool {
        self.label.correct
    }

    /// Puts every step in canonical entry order.
    pub fn canonicalize(&mut self) {
        for step in &mut self.steps {
            step.canonicalize();
        }
    }

    /// Checks every record invariant. `max_steps = None` disables the length cap.
    pub fn validate(&self, max_steps: Option<usize>) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::invalid_trace(&self.id, field, message));
        if self.id.is_empty() {
            return bad("id", "empty trace id".into());
        }
        let d = &self.decoding;
        if !(d.temperature.is_finite() && d.temperature >= 0.0) {
            return bad("decoding.temperature", format!("temperature {} is not >= 0", d.temperature));
        }
        if !(d.top_p > 0.0 && d.top_p <= 1.0) {
            return bad("decoding.top_p", format!("top_p {} outside (0, 1]", d.top_p));
        }
        if self.steps.is_empty() {
            return bad("steps", "trace has no steps".into());
        }
        if let Some(cap) = max_steps {
            if self.steps.len() > cap {
                return bad(
                    "steps",
                    format!("{} steps exceeds max_new_tokens {cap}", self.steps.len()),
                );
            }
        }
        let mut seen = HashSet::new();
        for (t, step) in self.steps.iter().enumerate() {
            let field = format!("steps[{t}]");
            if step.is_empty() {
                return bad(&field, format!("empty top-k list at trace {} step {t}", self.id));
            }
            seen.clear();
            for e in step.entries() {
                if !e.logprob.is_finite() {
                    return bad(&field, format!("non-finite logprob at trace {} step {t}", self.id));
                }
                if e.logprob > 0.0 {
                    return bad(&field, format!("logprob > 0 at trace {} step {t}", self.id));
                }
                if !seen.insert(e.token_id) {
                    return bad(
                        &field,
                        format!("duplicate token id {} at trace {} step {t}", e.token_id, self.id),
                    );
                }
            }
        }
        Ok(())
    }

    /// Canonical single-line JSON (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Maximum trace length; `None` accepts any length.
    pub max_steps: Option<usize>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            max_steps: Some(DEFAULT_MAX_STEPS),
        }
    }
}

/// Streaming reader yielding validated, canonicalized traces in file order.
pub struct TraceReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
    options: ParseOptions,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R, options: ParseOptions) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
            options,
        }
    }

    fn parse_line(&mut self, line: &str) -> Result<TraceRecord> {
        let mut record: TraceRecord = serde_json::from_str(line).map_err(|source| Error::Json {
            line: self.line_no,
            source,
        })?;
        record.canonicalize();
        record.validate(self.options.max_steps)?;
        if !self.seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId {
                id: record.id,
                line: self.line_no,
            });
        }
        Ok(record)
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(source) => return Some(Err(Error::io("<trace stream>", source))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line));
        }
    }
}

pub fn parse_traces<R: BufRead>(reader: R, options: ParseOptions) -> Result<Vec<TraceRecord>> {
    TraceReader::new(reader, options).collect()
}

pub fn parse_trace_file(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    parse_trace_file_with(path, ParseOptions::default())
}

pub fn parse_trace_file_with(path: impl AsRef<Path>, options: ParseOptions) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_traces(BufReader::new(file), options).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_traces<W: Write>(mut writer: W, traces: &[TraceRecord]) -> std::io::Result<()> {
    for t in traces {
        writer.write_all(t.to_json_line().as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_trace_file(path: impl AsRef<Path>, traces: &[TraceRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_traces(BufWriter::new(file), traces).map_err(|e| Error::io(path, e))
}

/// Renormalized probability vector over a step's retained support.
///
/// Support order follows the step's canonical order, so `probs()[0]` is the
/// most likely token.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    support: Vec<TokenId>,
    probs: Vec<f64>,
}

impl StepDistribution {
    /// Validating constructor.
    pub fn new(support: Vec<TokenId>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "support of length {} with {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidDistribution(format!("probability {p} outside (0, 1]")));
        }
        let mass = compensated_sum(probs.iter().copied());
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("mass {mass} is not 1")));
        }
        let distinct: HashSet<_> = support.iter().collect();
        if distinct.len() != support.len() {
            return Err(Error::InvalidDistribution("repeated token id in support".into()));
        }
        Ok(Self { support, probs })
    }

    pub fn support(&self) -> &[TokenId] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Keeps the first `effective_k` entries of `step` and renormalizes them.
///
/// An `effective_k` beyond the logged length is clamped (with a warning).
/// Entries whose relative weight underflows to zero carry no mass and are
/// dropped from the support.
pub fn renormalize(step: &StepRecord, effective_k: usize) -> Result<StepDistribution> {
    if effective_k < 1 {
        return Err(Error::InvalidArgument("effective_k must be >= 1".into()));
    }
    if step.is_empty() {
        return Err(Error::InvalidDistribution("empty step".into()));
    }
    if effective_k > step.len() {
        log::warn!(
            "effective_k {effective_k} exceeds logged length {}; clamping",
            step.len()
        );
    }
    let kept = &step.entries()[..effective_k.min(step.len())];
    let top = kept
        .iter()
        .map(|e| e.logprob)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut support = Vec::with_capacity(kept.len());
    let mut weights = Vec::with_capacity(kept.len());
    for e in kept {
        let w = (e.logprob - top).exp();
        if w > 0.0 {
            support.push(e.token_id);
            weights.push(w);
        }
    }
    let total = compensated_sum(weights.iter().copied());
    let probs = weights.into_iter().map(|w| w / total).collect();
    Ok(StepDistribution { support, probs })
}

/// Two distributions zero-padded onto the sorted union of their supports.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub support: Vec<TokenId>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn align_union(p: &StepDistribution, q: &StepDistribution) -> AlignedPair {
    let sorted = |d: &StepDistribution| {
        let mut v: Vec<(TokenId, f64)> = d.support.iter().copied().zip(d.probs.iter().copied()).collect();
        v.sort_unstable_by_key(|&(id, _)| id);
        v
    };
    let a = sorted(p);
    let b = sorted(q);
    let cap = a.len() + b.len();
    let mut out = AlignedPair {
        support: Vec::with_capacity(cap),
        p: Vec::with_capacity(cap),
        q: Vec::with_capacity(cap),
    };
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next_a = a.get(i).map(|x| x.0);
        let next_b = b.get(j).map(|x| x.0);
        match (next_a, next_b) {
            (Some(x), Some(y)) if x == y => {
                out.support.push(x);
                out.p.push(a[i].1);
                out.q.push(b[j].1);
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => {
                out.support.push(x);
                out.p.push(a[i].1);
                out.q.push(0.0);
                i += 1;
            }
            (Some(x), None) => {
                out.support.push(x);
                out.p.push(a[i].1);
                out.q.push(0.0);
                i += 1;
            }
            (_, Some(y)) => {
                out.support.push(y);
                out.p.push(0.0);
                out.q.push(b[j].1);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(entries: &[(TokenId, f64)]) -> StepRecord {
        StepRecord::new(entries.iter().map(|&(t, p)| TokenEntry::new(t, p.ln())).collect())
    }

    fn dist(support: &[TokenId], probs: &[f64]) -> StepDistribution {
        StepDistribution::new(support.to_vec(), probs.to_vec()).unwrap()
    }

    fn line(id: &str, lp: f64) -> String {
        format!(
            r#"{{"id":"{id}","dataset":"d","model":"m","decoding":{{"temperature":0.0,"top_p":1.0,"seed":0}},"steps":[[[1,{lp}],[2,-2.0]]],"label":{{"correct":true,"predicted":"1","reference":"1"}},"output_text":null}}"#
        )
    }

    #[test]
    fn parses_two_lines_in_order() {
        let text = format!("{}\n{}\n", line("a", -0.1), line("b", -0.2));
        let traces = parse_traces(text.as_bytes(), ParseOptions::default()).unwrap();
        assert_eq!(traces.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn canonical_lines_round_trip_byte_identical() {
        let text = format!("{}\n{}\n", line("a", -0.1), line("b", -0.25));
        let traces = parse_traces(text.as_bytes(), ParseOptions::default()).unwrap();
        let mut out = Vec::new();
        write_traces(&mut out, &traces).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn positive_logprob_is_rejected() {
        let err = parse_traces(line("x", 0.5).as_bytes(), ParseOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("logprob > 0 at trace x step 0"), "{msg}");
        assert!(matches!(err, Error::InvalidTrace { ref id, .. } if id == "x"));
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse_traces(&b""[..], ParseOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", line("a", -0.1));
        match parse_traces(text.as_bytes(), ParseOptions::default()) {
            Err(Error::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = format!("{}\n{}\n", line("a", -0.1), line("a", -0.2));
        assert!(matches!(
            parse_traces(text.as_bytes(), ParseOptions::default()),
            Err(Error::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn length_cap_is_enforced() {
        let mut t: TraceRecord = serde_json::from_str(&line("a", -0.1)).unwrap();
        t.steps = vec![t.steps[0].clone(); 129];
        assert!(t.validate(Some(128)).is_err());
        assert!(t.validate(None).is_ok());
    }

    #[test]
    fn entries_are_sorted_at_ingestion() {
        let s = StepRecord::new(vec![
            TokenEntry::new(9, -2.0),
            TokenEntry::new(4, -1.0),
            TokenEntry::new(3, -2.0),
        ]);
        let ids: Vec<_> = s.top_tokens(3).collect();
        assert_eq!(ids, [4, 3, 9]);
    }

    #[test]
    fn renormalize_symmetric_pair() {
        let d = renormalize(&step(&[(1, 0.5), (2, 0.5)]), 2).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn renormalize_truncates_then_rescales() {
        let d = renormalize(&step(&[(1, 0.6), (2, 0.2), (3, 0.1)]), 2).unwrap();
        assert!((d.probs()[0] - 0.75).abs() < 1e-15);
        assert!((d.probs()[1] - 0.25).abs() < 1e-15);
        assert_eq!(d.support(), &[1, 2]);
    }

    #[test]
    fn renormalize_point_mass_and_clamp() {
        let d = renormalize(&step(&[(7, 0.013)]), 50).unwrap();
        assert_eq!(d.probs(), &[1.0]);
        assert!(renormalize(&step(&[(7, 0.5)]), 0).is_err());
    }

    #[test]
    fn renormalize_full_length_is_idempotent() {
        let s = step(&[(1, 0.4), (2, 0.3), (3, 0.1), (4, 0.05)]);
        let once = renormalize(&s, 4).unwrap();
        let again = StepRecord::new(
            once.support()
                .iter()
                .zip(once.probs())
                .map(|(&t, p)| TokenEntry::new(t, p.ln()))
                .collect(),
        );
        let twice = renormalize(&again, 4).unwrap();
        for (a, b) in once.probs().iter().zip(twice.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn align_identical_supports() {
        let p = dist(&[5, 7], &[0.4, 0.6]);
        let a = align_union(&p, &p);
        assert_eq!(a.support, [5, 7]);
        assert_eq!(a.p, a.q);
    }

    #[test]
    fn align_disjoint_point_masses() {
        let a = align_union(&dist(&[1], &[1.0]), &dist(&[2], &[1.0]));
        assert_eq!(a.support, [1, 2]);
        assert_eq!(a.p, [1.0, 0.0]);
        assert_eq!(a.q, [0.0, 1.0]);
    }

    #[test]
    fn align_partial_overlap() {
        let a = align_union(&dist(&[1, 2], &[0.75, 0.25]), &dist(&[2, 3], &[0.5, 0.5]));
        assert_eq!(a.support, [1, 2, 3]);
        assert_eq!(a.p, [0.75, 0.25, 0.0]);
        assert_eq!(a.q, [0.0, 0.5, 0.5]);
    }

    #[test]
    fn distribution_constructor_checks_mass() {
        assert!(StepDistribution::new(vec![1, 2], vec![0.5, 0.4]).is_err());
        assert!(StepDistribution::new(vec![1, 1], vec![0.5, 0.5]).is_err());
        assert!(StepDistribution::new(vec![1, 2], vec![1.0, 0.0]).is_err());
    }
}
