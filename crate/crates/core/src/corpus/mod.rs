//! Unified event records, dataset readers and trigger-aware preprocessing.

mod synthetic;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{
    make_heldout_corpus, make_synthetic_corpora, make_synthetic_splits, Splits, SyntheticCorpora,
    SyntheticSplits, GENERATOR_EVENT_TYPES,
};

pub const TRIGGER_OPEN: &str = "<t>";
pub const TRIGGER_CLOSE: &str = "</t>";

/// Inclusive token range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", try_from = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    /// Number of tokens covered.
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn fits(&self, n_tokens: usize) -> bool {
        self.start <= self.end && self.end < n_tokens
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl TryFrom<[usize; 2]> for Span {
    type Error = String;

    fn try_from([start, end]: [usize; 2]) -> std::result::Result<Self, Self::Error> {
        if start > end {
            return Err(format!("span start {start} is after end {end}"));
        }
        Ok(Span { start, end })
    }
}

/// One annotated event mention.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub event_type: String,
    pub trigger: Span,
    pub roles: Vec<String>,
    #[serde(rename = "args")]
    pub gold_args: BTreeMap<String, Vec<Span>>,
    pub format_id: u8,
}

impl EventInstance {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::InvalidRecord {
                id: self.id.clone(),
                message,
            })
        };
        if self.tokens.is_empty() {
            return fail("empty token sequence".into());
        }
        if self.roles.is_empty() {
            return fail("empty role set".into());
        }
        if self.format_id == 0 {
            return fail("format_id must be positive".into());
        }
        if !self.trigger.fits(self.tokens.len()) {
            return fail(format!(
                "trigger [{}, {}] out of range for {} tokens",
                self.trigger.start,
                self.trigger.end,
                self.tokens.len()
            ));
        }
        for (role, spans) in &self.gold_args {
            if !self.roles.contains(role) {
                return fail(format!("argument role {role:?} not in role set"));
            }
            for span in spans {
                if !span.fits(self.tokens.len()) {
                    return fail(format!(
                        "{role} span [{}, {}] out of range for {} tokens",
                        span.start,
                        span.end,
                        self.tokens.len()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_args(&self) -> usize {
        self.gold_args.values().map(Vec::len).sum()
    }

    /// Gold arguments as `(role, span)` pairs.
    pub fn arguments(&self) -> impl Iterator<Item = (&str, Span)> {
        self.gold_args
            .iter()
            .flat_map(|(role, spans)| spans.iter().map(move |s| (role.as_str(), *s)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub n_events: usize,
    pub n_args: usize,
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "docs={} events={} args={}",
            self.n_docs, self.n_events, self.n_args
        )
    }
}

/// Input record layouts accepted by [`load_dataset`]. Field mappings are in
/// `docs/schemas.md`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    /// The unified record written by [`save_dataset`].
    Unified,
    /// One event per line over a single sentence.
    SentenceStyle,
    /// One document per line carrying several event mentions.
    DocumentStyle,
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unified" => Ok(Schema::Unified),
            "sentence" | "sentence_style" => Ok(Schema::SentenceStyle),
            "document" | "document_style" => Ok(Schema::DocumentStyle),
            other => Err(Error::InvalidArgument(format!("unknown schema {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
struct SentenceRecord {
    #[serde(default)]
    id: Option<String>,
    tokens: Vec<String>,
    event: String,
    trigger: [usize; 2],
    roles: Vec<String>,
    #[serde(default)]
    args: BTreeMap<String, Vec<[usize; 2]>>,
}

#[derive(Deserialize)]
struct DocumentRecord {
    doc_key: String,
    sentences: Vec<Vec<String>>,
    events: Vec<DocumentEvent>,
}

#[derive(Deserialize)]
struct DocumentEvent {
    event_type: String,
    trigger: [usize; 2],
    roles: Vec<String>,
    #[serde(default)]
    args: BTreeMap<String, Vec<[usize; 2]>>,
}

fn to_spans(
    id: &str,
    raw: BTreeMap<String, Vec<[usize; 2]>>,
) -> Result<BTreeMap<String, Vec<Span>>> {
    raw.into_iter()
        .map(|(role, spans)| {
            let spans = spans
                .into_iter()
                .map(|pair| {
                    Span::try_from(pair).map_err(|message| Error::InvalidRecord {
                        id: id.to_string(),
                        message,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((role, spans))
        })
        .collect()
}

fn trigger_span(id: &str, pair: [usize; 2]) -> Result<Span> {
    Span::try_from(pair).map_err(|message| Error::InvalidRecord {
        id: id.to_string(),
        message,
    })
}

/// Reads one record per line. `format_id` is assigned to records of the
/// sentence and document layouts, which carry no format field of their own.
pub fn load_dataset(
    path: impl AsRef<Path>,
    schema: Schema,
    format_id: u8,
) -> Result<Vec<EventInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), schema, format_id).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_dataset(
    reader: impl BufRead,
    schema: Schema,
    format_id: u8,
) -> Result<Vec<EventInstance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        };
        match schema {
            Schema::Unified => {
                let inst: EventInstance = serde_json::from_str(&line).map_err(malformed)?;
                inst.validate()?;
                out.push(inst);
            }
            Schema::SentenceStyle => {
                let rec: SentenceRecord = serde_json::from_str(&line).map_err(malformed)?;
                let id = rec.id.unwrap_or_else(|| format!("line{line_no}"));
                let inst = EventInstance {
                    trigger: trigger_span(&id, rec.trigger)?,
                    gold_args: to_spans(&id, rec.args)?,
                    id,
                    tokens: rec.tokens,
                    event_type: rec.event,
                    roles: rec.roles,
                    format_id,
                };
                inst.validate()?;
                out.push(inst);
            }
            Schema::DocumentStyle => {
                let rec: DocumentRecord = serde_json::from_str(&line).map_err(malformed)?;
                let tokens: Vec<String> = rec.sentences.into_iter().flatten().collect();
                for (k, ev) in rec.events.into_iter().enumerate() {
                    let id = format!("{}#{k}", rec.doc_key);
                    let inst = EventInstance {
                        trigger: trigger_span(&id, ev.trigger)?,
                        gold_args: to_spans(&id, ev.args)?,
                        id,
                        tokens: tokens.clone(),
                        event_type: ev.event_type,
                        roles: ev.roles,
                        format_id,
                    };
                    inst.validate()?;
                    out.push(inst);
                }
            }
        }
    }
    Ok(out)
}

/// Writes instances in the unified JSONL layout.
pub fn save_dataset(path: impl AsRef<Path>, data: &[EventInstance]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, data).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset(w: &mut impl Write, data: &[EventInstance]) -> std::io::Result<()> {
    for inst in data {
        serde_json::to_writer(&mut *w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Trigger-marked token sequence with gold spans moved to marked coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedSentence {
    pub tokens: Vec<String>,
    pub trigger: Span,
    pub gold_args: BTreeMap<String, Vec<Span>>,
}

impl MarkedSentence {
    /// Maps a marked-coordinate span back onto the unmarked tokens. Marker
    /// positions snap inward onto the trigger.
    pub fn to_original(&self, span: Span) -> Span {
        let open = self.trigger.start - 1;
        let close = self.trigger.end + 1;
        let map = |i: usize, is_end: bool| -> usize {
            if i < open {
                i
            } else if i == open {
                if is_end {
                    open.saturating_sub(1)
                } else {
                    open
                }
            } else if i < close {
                i - 1
            } else if i == close {
                if is_end {
                    close - 2
                } else {
                    close - 1
                }
            } else {
                i - 2
            }
        };
        let start = map(span.start, false);
        let end = map(span.end, true).max(start);
        Span::new(start, end)
    }

    /// The original tokens with both markers removed.
    pub fn strip_markers(&self) -> Vec<String> {
        self.tokens
            .iter()
            .filter(|t| *t != TRIGGER_OPEN && *t != TRIGGER_CLOSE)
            .cloned()
            .collect()
    }
}

fn shift_into_marked(span: Span, trigger: Span) -> Span {
    let shift = |i: usize| {
        if i < trigger.start {
            i
        } else if i <= trigger.end {
            i + 1
        } else {
            i + 2
        }
    };
    Span::new(shift(span.start), shift(span.end))
}

/// Surrounds the trigger with `<t>` / `</t>` and re-indexes every gold span.
pub fn insert_trigger_markers(inst: &EventInstance) -> MarkedSentence {
    let t = inst.trigger;
    let mut tokens = Vec::with_capacity(inst.tokens.len() + 2);
    tokens.extend_from_slice(&inst.tokens[..t.start]);
    tokens.push(TRIGGER_OPEN.to_string());
    tokens.extend_from_slice(&inst.tokens[t.start..=t.end]);
    tokens.push(TRIGGER_CLOSE.to_string());
    tokens.extend_from_slice(&inst.tokens[t.end + 1..]);
    let gold_args = inst
        .gold_args
        .iter()
        .map(|(role, spans)| {
            (
                role.clone(),
                spans.iter().map(|s| shift_into_marked(*s, t)).collect(),
            )
        })
        .collect();
    MarkedSentence {
        tokens,
        trigger: Span::new(t.start + 1, t.end + 1),
        gold_args,
    }
}

/// Window of at most `max_tokens` tokens centred on the trigger.
///
/// Returns the cropped instance and the offset of its first token in the
/// original. Gold spans that do not fit entirely inside the window are
/// dropped from the cropped copy.
pub fn window_around_trigger(inst: &EventInstance, max_tokens: usize) -> (EventInstance, usize) {
    let n = inst.tokens.len();
    if n <= max_tokens {
        return (inst.clone(), 0);
    }
    let t = inst.trigger;
    let trig_len = t.width().min(max_tokens);
    let spare = max_tokens - trig_len;
    let mut lo = t.start.saturating_sub(spare / 2);
    let mut hi = lo + max_tokens;
    if hi > n {
        hi = n;
        lo = n - max_tokens;
    }
    let shift = |s: Span| Span::new(s.start - lo, s.end - lo);
    let trigger_end = t.end.min(hi - 1);
    let gold_args = inst
        .gold_args
        .iter()
        .map(|(role, spans)| {
            let kept = spans
                .iter()
                .filter(|s| s.start >= lo && s.end < hi)
                .map(|s| shift(*s))
                .collect();
            (role.clone(), kept)
        })
        .collect();
    let cropped = EventInstance {
        id: inst.id.clone(),
        tokens: inst.tokens[lo..hi].to_vec(),
        event_type: inst.event_type.clone(),
        trigger: Span::new(t.start - lo, trigger_end - lo),
        roles: inst.roles.clone(),
        gold_args,
        format_id: inst.format_id,
    };
    (cropped, lo)
}

/// Uniform sample of `k` instances without replacement, kept in input order.
pub fn subsample(data: &[EventInstance], k: usize, seed: u64) -> Result<Vec<EventInstance>> {
    if k > data.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {k} samples from {} instances",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, data.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| data[i].clone()).collect())
}

/// Documents are counted by distinct id prefix before `#`.
pub fn corpus_stats(data: &[EventInstance]) -> CorpusStats {
    let docs: std::collections::BTreeSet<&str> = data
        .iter()
        .map(|inst| inst.id.split('#').next().unwrap_or(&inst.id))
        .collect();
    CorpusStats {
        n_docs: docs.len(),
        n_events: data.len(),
        n_args: data.iter().map(EventInstance::n_args).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn inst(
        tokens: &[&str],
        trigger: (usize, usize),
        args: &[(&str, (usize, usize))],
    ) -> EventInstance {
        let mut gold_args: BTreeMap<String, Vec<Span>> = BTreeMap::new();
        for (role, (s, e)) in args {
            gold_args
                .entry(role.to_string())
                .or_default()
                .push(Span::new(*s, *e));
        }
        let mut roles: Vec<String> = gold_args.keys().cloned().collect();
        if roles.is_empty() {
            roles.push("R".into());
        }
        EventInstance {
            id: "x".into(),
            tokens: toks(tokens),
            event_type: "E".into(),
            trigger: Span::new(trigger.0, trigger.1),
            roles,
            gold_args,
            format_id: 1,
        }
    }

    #[test]
    fn empty_file_is_empty_list() {
        let data = parse_dataset("".as_bytes(), Schema::SentenceStyle, 1).unwrap();
        assert!(data.is_empty());
    }

    #[test]
    fn sentence_record_maps_fields() {
        let line = r#"{"tokens":["a","b"],"event":"E","trigger":[0,0],"roles":["R1"],"args":{"R1":[[1,1]]}}"#;
        let data = parse_dataset(line.as_bytes(), Schema::SentenceStyle, 1).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].gold_args["R1"], vec![Span::new(1, 1)]);
        assert_eq!(data[0].event_type, "E");
        assert_eq!(data[0].trigger, Span::new(0, 0));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text =
            "{\"tokens\":[\"a\"],\"event\":\"E\",\"trigger\":[0,0],\"roles\":[\"R\"]}\n{oops\n";
        match parse_dataset(text.as_bytes(), Schema::SentenceStyle, 1) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_span_names_record() {
        let line = r#"{"id":"rec7","tokens":["a","b"],"event":"E","trigger":[0,0],"roles":["R1"],"args":{"R1":[[1,4]]}}"#;
        match parse_dataset(line.as_bytes(), Schema::SentenceStyle, 1) {
            Err(Error::InvalidRecord { id, .. }) => assert_eq!(id, "rec7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn document_records_flatten_per_event() {
        let line = r#"{"doc_key":"d1","sentences":[["a","b"],["c","d","e"]],"events":[{"event_type":"E1","trigger":[1,1],"roles":["R"],"args":{"R":[[3,4]]}},{"event_type":"E2","trigger":[2,2],"roles":["S"],"args":{}}]}"#;
        let data = parse_dataset(line.as_bytes(), Schema::DocumentStyle, 2).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].tokens.len(), 5);
        assert_eq!(data[0].id, "d1#0");
        assert_eq!(data[1].event_type, "E2");
        assert_eq!(data[1].format_id, 2);
        assert_eq!(
            corpus_stats(&data),
            CorpusStats {
                n_docs: 1,
                n_events: 2,
                n_args: 1
            }
        );
    }

    #[test]
    fn markers_around_middle_trigger() {
        let m = insert_trigger_markers(&inst(&["w0", "w1", "w2"], (1, 1), &[]));
        assert_eq!(m.tokens, toks(&["w0", "<t>", "w1", "</t>", "w2"]));
    }

    #[test]
    fn markers_on_single_token() {
        let m = insert_trigger_markers(&inst(&["w0"], (0, 0), &[]));
        assert_eq!(m.tokens, toks(&["<t>", "w0", "</t>"]));
    }

    #[test]
    fn gold_span_after_trigger_shifts_by_two() {
        let m = insert_trigger_markers(&inst(&["w0", "w1", "w2"], (0, 0), &[("R", (2, 2))]));
        assert_eq!(m.gold_args["R"], vec![Span::new(4, 4)]);
        assert_eq!(m.to_original(Span::new(4, 4)), Span::new(2, 2));
    }

    #[test]
    fn window_centres_on_trigger() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let long = inst(&refs, (10, 10), &[("R", (9, 9)), ("S", (0, 0))]);
        let (w, off) = window_around_trigger(&long, 6);
        assert_eq!(w.tokens.len(), 6);
        assert_eq!(off, 8);
        assert_eq!(w.tokens[w.trigger.start], "w10");
        assert_eq!(w.gold_args["R"], vec![Span::new(1, 1)]);
        assert!(w.gold_args["S"].is_empty());
    }

    #[test]
    fn subsample_edges() {
        let data: Vec<_> = (0..100)
            .map(|i| {
                let mut x = inst(&["a", "b"], (0, 0), &[]);
                x.id = format!("i{i}");
                x
            })
            .collect();
        assert!(subsample(&data, 0, 3).unwrap().is_empty());
        assert_eq!(subsample(&data, 100, 3).unwrap(), data);
        assert_eq!(
            subsample(&data, 10, 3).unwrap(),
            subsample(&data, 10, 3).unwrap()
        );
        assert!(subsample(&data, 101, 3).is_err());
    }

    #[test]
    fn empty_stats() {
        assert_eq!(corpus_stats(&[]), CorpusStats::default());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn marking_roundtrips_every_span(
                n in 1usize..15,
                t in (0usize..15, 0usize..3),
                a in (0usize..15, 0usize..4),
            ) {
                let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
                let refs: Vec<&str> = words.iter().map(String::as_str).collect();
                let ts = t.0 % n;
                let te = (ts + t.1).min(n - 1);
                let s = a.0 % n;
                let e = (s + a.1).min(n - 1);
                let m = insert_trigger_markers(&inst(&refs, (ts, te), &[("R", (s, e))]));
                let marked = m.gold_args["R"][0];
                let inside: Vec<&String> = m.tokens[marked.start..=marked.end]
                    .iter()
                    .filter(|t| *t != TRIGGER_OPEN && *t != TRIGGER_CLOSE)
                    .collect();
                prop_assert_eq!(inside, words[s..=e].iter().collect::<Vec<_>>());
                prop_assert_eq!(m.to_original(marked), Span::new(s, e));
                prop_assert_eq!(m.strip_markers(), words);
            }
        }
    }
}
