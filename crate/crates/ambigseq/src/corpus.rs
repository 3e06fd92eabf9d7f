//! CoNLL-style corpus ingestion, label alphabets, and synthesis of
//! partially/ambiguously annotated training sets.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pieces::{decompose, tuple_space, LabelTuple, Piece};

/// Dense, insertion-ordered mapping between label names and ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelAlphabet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelAlphabet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, interning it on first sight.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|s| s.as_str())
    }
}

/// A token chain with optional gold label ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub tokens: Vec<String>,
    pub gold: Option<Vec<usize>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Settings used to synthesize an ambiguous corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptSettings {
    pub w: usize,
    pub cl: usize,
    pub p: f64,
    pub seed: u64,
}

/// A partially annotated training set: sequences plus their pieces, each
/// piece carrying a candidate label set that is guaranteed to contain the
/// gold tuple.
#[derive(Clone, Debug)]
pub struct AmbiguousCorpus {
    pub alphabet: LabelAlphabet,
    pub sequences: Vec<Sequence>,
    pub pieces: Vec<Piece>,
    pub settings: CorruptSettings,
    /// Sequences shorter than `w + 1` that produced no pieces.
    pub skipped_short: usize,
}

impl AmbiguousCorpus {
    /// Assembles a corpus from already-built parts, validating the piece
    /// invariants (non-empty candidate sets containing gold, no duplicate
    /// candidates, spans inside their sequences).
    pub fn from_parts(
        alphabet: LabelAlphabet,
        sequences: Vec<Sequence>,
        pieces: Vec<Piece>,
        settings: CorruptSettings,
    ) -> Result<Self> {
        let q = alphabet.len();
        for (pid, piece) in pieces.iter().enumerate() {
            let seq = sequences
                .get(piece.seq_id)
                .ok_or_else(|| Error::data(format!("piece {pid} points at missing sequence")))?;
            if piece.width != settings.w {
                return Err(Error::data(format!(
                    "piece {pid} has width {}, corpus settings say {}",
                    piece.width, settings.w
                )));
            }
            if piece.start + piece.width >= seq.len() {
                return Err(Error::data(format!("piece {pid} extends past its sequence")));
            }
            if !piece.candidates.contains(&piece.gold) {
                return Err(Error::data(format!("piece {pid} candidates do not contain gold")));
            }
            let mut seen = HashSet::new();
            for cand in &piece.candidates {
                if cand.ids().iter().any(|&id| id >= q) {
                    return Err(Error::data(format!("piece {pid} has a label id outside the alphabet")));
                }
                if !seen.insert(cand.code(q)) {
                    return Err(Error::data(format!("piece {pid} has duplicate candidates")));
                }
            }
        }
        Ok(AmbiguousCorpus { alphabet, sequences, pieces, settings, skipped_short: 0 })
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }
}

/// Parses CoNLL-style text: one token per line, whitespace-separated columns,
/// blank line between sequences. The alphabet lists labels in first-occurrence
/// order.
pub fn parse_conll(
    text: &str,
    token_column: usize,
    label_column: usize,
) -> Result<(LabelAlphabet, Vec<Sequence>)> {
    let mut alphabet = LabelAlphabet::new();
    let mut sequences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sequences.push(Sequence {
                    tokens: std::mem::take(&mut tokens),
                    gold: Some(std::mem::take(&mut labels)),
                });
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let needed = token_column.max(label_column);
        if cols.len() <= needed {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected at least {} columns, found {}", needed + 1, cols.len()),
            });
        }
        tokens.push(cols[token_column].to_string());
        labels.push(alphabet.intern(cols[label_column]));
    }
    if !tokens.is_empty() {
        sequences.push(Sequence { tokens, gold: Some(labels) });
    }
    Ok((alphabet, sequences))
}

/// Renders gold-labeled sequences back to two-column CoNLL text.
pub fn to_conll(alphabet: &LabelAlphabet, sequences: &[Sequence]) -> Result<String> {
    let mut out = String::new();
    for seq in sequences {
        let gold = seq
            .gold
            .as_ref()
            .ok_or_else(|| Error::data("cannot render a sequence without gold labels"))?;
        for (tok, &label) in seq.tokens.iter().zip(gold) {
            out.push_str(tok);
            out.push(' ');
            out.push_str(alphabet.name(label));
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

/// Synthesizes an ambiguous corpus from gold sequences.
///
/// Every sequence is decomposed into pieces; `floor(p * #pieces)` pieces are
/// drawn uniformly at random to keep their exact annotation, and each
/// remaining piece receives `cl - 1` decoy tuples drawn uniformly without
/// replacement from the tuple space minus the gold tuple. Candidate order is
/// shuffled. The output is a pure function of the inputs and `seed`.
pub fn corrupt(
    gold: &[Sequence],
    alphabet: &LabelAlphabet,
    w: usize,
    cl: usize,
    p: f64,
    seed: u64,
) -> Result<AmbiguousCorpus> {
    if cl == 0 {
        return Err(Error::config("cl must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("p must lie in [0,1], got {p}")));
    }
    let q = alphabet.len();
    if q == 0 {
        return Err(Error::config("alphabet must contain at least one label"));
    }
    let space = tuple_space(q, w)?;
    if cl as u64 > space {
        return Err(Error::config(format!(
            "cl={cl} exceeds the tuple space {space} for q={q}, w={w}"
        )));
    }

    let mut pieces = Vec::new();
    let mut skipped_short = 0usize;
    for (seq_id, seq) in gold.iter().enumerate() {
        let ps = decompose(seq_id, seq, w)?;
        if ps.is_empty() {
            skipped_short += 1;
        }
        pieces.extend(ps);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pieces.len();
    let n_exact = (p * n as f64).floor() as usize;
    let exact: HashSet<usize> = rand::seq::index::sample(&mut rng, n, n_exact).into_iter().collect();

    let span = w + 1;
    for (pid, piece) in pieces.iter_mut().enumerate() {
        if exact.contains(&pid) || cl == 1 {
            continue;
        }
        let gold_code = piece.gold.code(q);
        // Uniform sample of cl-1 distinct codes from 0..space excluding gold:
        // draw from a space of size space-1 and shift codes at or above gold.
        let decoys = rand::seq::index::sample(&mut rng, (space - 1) as usize, cl - 1);
        let mut candidates = Vec::with_capacity(cl);
        candidates.push(piece.gold.clone());
        for idx in decoys {
            let code = if (idx as u64) < gold_code { idx as u64 } else { idx as u64 + 1 };
            candidates.push(LabelTuple::from_code(code, q, span));
        }
        candidates.shuffle(&mut rng);
        piece.candidates = candidates;
    }

    Ok(AmbiguousCorpus {
        alphabet: alphabet.clone(),
        sequences: gold.to_vec(),
        pieces,
        settings: CorruptSettings { w, cl, p, seed },
        skipped_short,
    })
}

/// Serializes an ambiguous corpus to its line-oriented text format.
///
/// The header records the corruption settings and the alphabet; `S`/`G`
/// lines carry each sequence's tokens and gold labels; every remaining line
/// describes one piece as `seq_id span_start candidates=t1|t2|...` with
/// tuples written as comma-joined label names.
pub fn write_corpus(corpus: &AmbiguousCorpus) -> String {
    let mut out = String::new();
    let s = &corpus.settings;
    out.push_str("# ambigseq-corpus v1\n");
    let _ = writeln!(out, "# w={} cl={} p={} seed={}", s.w, s.cl, s.p, s.seed);
    let _ = writeln!(out, "# labels\t{}", corpus.alphabet.iter().collect::<Vec<_>>().join(" "));
    let _ = writeln!(out, "# sequences={} pieces={}", corpus.sequences.len(), corpus.pieces.len());
    for seq in &corpus.sequences {
        let _ = writeln!(out, "S\t{}", seq.tokens.join(" "));
        if let Some(gold) = &seq.gold {
            let names: Vec<&str> = gold.iter().map(|&id| corpus.alphabet.name(id)).collect();
            let _ = writeln!(out, "G\t{}", names.join(" "));
        }
    }
    for piece in &corpus.pieces {
        let cands: Vec<String> = piece
            .candidates
            .iter()
            .map(|t| {
                t.ids()
                    .iter()
                    .map(|&id| corpus.alphabet.name(id))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        let _ = writeln!(out, "{} {} candidates={}", piece.seq_id, piece.start, cands.join("|"));
    }
    out
}

/// Parses the format produced by [`write_corpus`].
pub fn parse_corpus(text: &str) -> Result<AmbiguousCorpus> {
    let mut alphabet = LabelAlphabet::new();
    let mut settings: Option<CorruptSettings> = None;
    let mut sequences: Vec<Sequence> = Vec::new();
    let mut pieces: Vec<Piece> = Vec::new();
    let mut pending_tokens: Option<Vec<String>> = None;

    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some(kv) = rest.strip_prefix("labels\t") {
                for name in kv.split(' ').filter(|s| !s.is_empty()) {
                    alphabet.intern(name);
                }
            } else if rest.starts_with("w=") {
                let mut w = None;
                let mut cl = None;
                let mut p = None;
                let mut seed = None;
                for part in rest.split(' ') {
                    let (key, value) = part
                        .split_once('=')
                        .ok_or_else(|| parse_err(lineno, format!("malformed header field '{part}'")))?;
                    match key {
                        "w" => w = value.parse::<usize>().ok(),
                        "cl" => cl = value.parse::<usize>().ok(),
                        "p" => p = value.parse::<f64>().ok(),
                        "seed" => seed = value.parse::<u64>().ok(),
                        _ => {}
                    }
                }
                settings = Some(CorruptSettings {
                    w: w.ok_or_else(|| parse_err(lineno, "missing w".into()))?,
                    cl: cl.ok_or_else(|| parse_err(lineno, "missing cl".into()))?,
                    p: p.ok_or_else(|| parse_err(lineno, "missing p".into()))?,
                    seed: seed.ok_or_else(|| parse_err(lineno, "missing seed".into()))?,
                });
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("S\t") {
            if pending_tokens.is_some() {
                return Err(parse_err(lineno, "sequence tokens without gold labels".into()));
            }
            pending_tokens = Some(rest.split(' ').map(str::to_string).collect());
            continue;
        }
        if let Some(rest) = line.strip_prefix("G\t") {
            let tokens = pending_tokens
                .take()
                .ok_or_else(|| parse_err(lineno, "gold labels without tokens".into()))?;
            let mut gold = Vec::new();
            for name in rest.split(' ') {
                let id = alphabet
                    .id(name)
                    .ok_or_else(|| parse_err(lineno, format!("unknown label '{name}'")))?;
                gold.push(id);
            }
            if gold.len() != tokens.len() {
                return Err(parse_err(lineno, "token/label count mismatch".into()));
            }
            sequences.push(Sequence { tokens, gold: Some(gold) });
            continue;
        }
        // Piece line: `seq_id start candidates=a,b|c,d`
        let mut parts = line.splitn(3, ' ');
        let seq_id: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(lineno, "missing piece seq_id".into()))?;
        let start: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(lineno, "missing piece start".into()))?;
        let cands_field = parts
            .next()
            .and_then(|v| v.strip_prefix("candidates="))
            .ok_or_else(|| parse_err(lineno, "missing candidates field".into()))?;
        let settings = settings
            .as_ref()
            .ok_or_else(|| parse_err(lineno, "piece line before settings header".into()))?;
        let mut candidates = Vec::new();
        for tuple_text in cands_field.split('|') {
            let mut ids = Vec::new();
            for name in tuple_text.split(',') {
                let id = alphabet
                    .id(name)
                    .ok_or_else(|| parse_err(lineno, format!("unknown label '{name}'")))?;
                ids.push(id);
            }
            candidates.push(LabelTuple::new(ids));
        }
        let seq = sequences
            .get(seq_id)
            .ok_or_else(|| parse_err(lineno, format!("piece references unknown sequence {seq_id}")))?;
        let gold_ids = seq
            .gold
            .as_ref()
            .ok_or_else(|| parse_err(lineno, "piece references an unlabeled sequence".into()))?;
        if start + settings.w >= gold_ids.len() {
            return Err(parse_err(lineno, "piece extends past its sequence".into()));
        }
        let gold = LabelTuple::new(gold_ids[start..start + settings.w + 1].to_vec());
        pieces.push(Piece::new(seq_id, start, settings.w, candidates, gold)?);
    }

    let settings = settings.ok_or_else(|| Error::data("corpus file has no settings header"))?;
    AmbiguousCorpus::from_parts(alphabet, sequences, pieces, settings)
}
