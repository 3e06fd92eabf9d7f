//! Deterministic sparse feature extraction: per-position state features,
//! label-pair transition features, and per-label bias features, laid out in
//! one dense index space.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{AmbiguousCorpus, LabelAlphabet};
use crate::error::{Error, Result};
use crate::pieces::{LabelTuple, Piece};

/// Sparse feature vector: strictly increasing indices, no stored zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec {
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl SparseVec {
    /// Builds a vector from unsorted (index, value) pairs, accumulating
    /// duplicates additively and dropping zeros.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_unstable_by_key(|&(i, _)| i);
        let mut idx = Vec::with_capacity(pairs.len());
        let mut val = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if let Some(&last) = idx.last() {
                if last == i {
                    *val.last_mut().unwrap() += v;
                    continue;
                }
            }
            idx.push(i);
            val.push(v);
        }
        let mut out = SparseVec { idx, val };
        out.drop_zeros();
        out
    }

    fn drop_zeros(&mut self) {
        let mut keep_idx = Vec::with_capacity(self.idx.len());
        let mut keep_val = Vec::with_capacity(self.val.len());
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            if v != 0.0 {
                keep_idx.push(i);
                keep_val.push(v);
            }
        }
        self.idx = keep_idx;
        self.val = keep_val;
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            acc += dense[i as usize] * v;
        }
        acc
    }

    /// Sparse-sparse dot product by index merge.
    pub fn dot(&self, other: &SparseVec) -> f64 {
        let mut acc = 0.0;
        let (mut a, mut b) = (0usize, 0usize);
        while a < self.idx.len() && b < other.idx.len() {
            match self.idx[a].cmp(&other.idx[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.val[a] * other.val[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum()
    }

    /// `dense += scale * self`.
    pub fn add_scaled_into(&self, scale: f64, dense: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            dense[i as usize] += scale * v;
        }
    }

    pub fn scaled(&self, scale: f64) -> SparseVec {
        let mut out = self.clone();
        for v in &mut out.val {
            *v *= scale;
        }
        out.drop_zeros();
        out
    }

    /// Element-wise `a - b`.
    pub fn sub(a: &SparseVec, b: &SparseVec) -> SparseVec {
        let mut pairs: Vec<(u32, f64)> = a.iter().collect();
        pairs.extend(b.iter().map(|(i, v)| (i, -v)));
        SparseVec::from_pairs(pairs)
    }

    /// Element-wise `a + b`.
    pub fn add(a: &SparseVec, b: &SparseVec) -> SparseVec {
        let mut pairs: Vec<(u32, f64)> = a.iter().collect();
        pairs.extend(b.iter());
        SparseVec::from_pairs(pairs)
    }

    pub fn cosine(&self, other: &SparseVec) -> f64 {
        let na = self.norm_sq();
        let nb = other.norm_sq();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        self.dot(other) / (na.sqrt() * nb.sqrt())
    }
}

/// Which feature families are extracted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureTemplate {
    pub word: bool,
    pub lowercase: bool,
    pub prefixes: bool,
    pub suffixes: bool,
    pub shape: bool,
    pub context: bool,
    pub transitions: bool,
    pub bias: bool,
    /// When set, state patterns are hashed into `1 << bits` buckets instead
    /// of being interned in a dictionary.
    pub hash_bits: Option<u8>,
}

impl Default for FeatureTemplate {
    fn default() -> Self {
        FeatureTemplate {
            word: true,
            lowercase: true,
            prefixes: true,
            suffixes: true,
            shape: true,
            context: true,
            transitions: true,
            bias: true,
            hash_bits: None,
        }
    }
}

impl FeatureTemplate {
    /// Transition-only template, used by tests with hand-set weights.
    pub fn transitions_only() -> Self {
        FeatureTemplate {
            word: false,
            lowercase: false,
            prefixes: false,
            suffixes: false,
            shape: false,
            context: false,
            transitions: true,
            bias: false,
            hash_bits: None,
        }
    }

    fn any_state(&self) -> bool {
        self.word || self.lowercase || self.prefixes || self.suffixes || self.shape || self.context
    }

    pub fn names_joined(&self) -> String {
        self.names().join(",")
    }

    fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.word {
            out.push("word");
        }
        if self.lowercase {
            out.push("lower");
        }
        if self.prefixes {
            out.push("prefix");
        }
        if self.suffixes {
            out.push("suffix");
        }
        if self.shape {
            out.push("shape");
        }
        if self.context {
            out.push("context");
        }
        if self.transitions {
            out.push("transition");
        }
        if self.bias {
            out.push("bias");
        }
        out
    }

    fn from_names(names: &str, hash_bits: Option<u8>) -> Self {
        let mut t = FeatureTemplate {
            word: false,
            lowercase: false,
            prefixes: false,
            suffixes: false,
            shape: false,
            context: false,
            transitions: false,
            bias: false,
            hash_bits,
        };
        for name in names.split(',') {
            match name {
                "word" => t.word = true,
                "lower" => t.lowercase = true,
                "prefix" => t.prefixes = true,
                "suffix" => t.suffixes = true,
                "shape" => t.shape = true,
                "context" => t.context = true,
                "transition" => t.transitions = true,
                "bias" => t.bias = true,
                _ => {}
            }
        }
        t
    }
}

/// Character class map with run-length collapse: `Mr.2` -> `Xxod`.
fn word_shape(word: &str) -> String {
    let mut shape = String::new();
    let mut last = '\0';
    for ch in word.chars() {
        let class = if ch.is_uppercase() {
            'X'
        } else if ch.is_lowercase() {
            'x'
        } else if ch.is_ascii_digit() {
            'd'
        } else {
            'o'
        };
        if class != last {
            shape.push(class);
            last = class;
        }
    }
    shape
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Writes the state pattern strings for `tokens[pos]` into `out`.
fn node_pattern_strings(template: &FeatureTemplate, tokens: &[String], pos: usize, out: &mut Vec<String>) {
    let word = tokens[pos].as_str();
    if template.word {
        out.push(format!("W={word}"));
    }
    if template.lowercase {
        out.push(format!("L={}", word.to_lowercase()));
    }
    if template.prefixes {
        let chars: Vec<char> = word.chars().collect();
        for k in 1..=3usize.min(chars.len()) {
            out.push(format!("P{k}={}", chars[..k].iter().collect::<String>()));
        }
    }
    if template.suffixes {
        let chars: Vec<char> = word.chars().collect();
        for k in 1..=3usize.min(chars.len()) {
            out.push(format!("S{k}={}", chars[chars.len() - k..].iter().collect::<String>()));
        }
    }
    if template.shape {
        out.push(format!("SH={}", word_shape(word)));
    }
    if template.context {
        let prev = if pos == 0 { "<BOS>" } else { tokens[pos - 1].as_str() };
        let next = if pos + 1 == tokens.len() { "<EOS>" } else { tokens[pos + 1].as_str() };
        out.push(format!("C-1={prev}"));
        out.push(format!("C+1={next}"));
    }
}

/// Immutable dictionary from feature patterns to dense indices.
///
/// Layout: state block `[0, P*q)` (pattern-major), then `q*q` transition
/// indices, then `q` bias indices. The alphabet and piece width ride along so
/// models stay self-describing.
#[derive(Clone, Debug)]
pub struct FeatureIndex {
    template: FeatureTemplate,
    alphabet: LabelAlphabet,
    w: usize,
    patterns: Vec<String>,
    lookup: HashMap<String, u32>,
    n_patterns: usize,
    trans_base: usize,
    bias_base: usize,
    dim: usize,
}

impl FeatureIndex {
    /// Builds the index over every position of every sequence in the corpus,
    /// crossing each observed pattern with the full label alphabet.
    pub fn build(corpus: &AmbiguousCorpus, template: FeatureTemplate) -> FeatureIndex {
        let q = corpus.alphabet.len();
        let mut patterns = Vec::new();
        let mut lookup = HashMap::new();
        let n_patterns = if let Some(bits) = template.hash_bits {
            1usize << bits
        } else {
            let mut scratch = Vec::new();
            for seq in &corpus.sequences {
                for pos in 0..seq.len() {
                    scratch.clear();
                    node_pattern_strings(&template, &seq.tokens, pos, &mut scratch);
                    for pattern in &scratch {
                        if !lookup.contains_key(pattern) {
                            lookup.insert(pattern.clone(), patterns.len() as u32);
                            patterns.push(pattern.clone());
                        }
                    }
                }
            }
            patterns.len()
        };
        let state_dim = if template.any_state() { n_patterns * q } else { 0 };
        let trans_base = state_dim;
        let trans_dim = if template.transitions { q * q } else { 0 };
        let bias_base = trans_base + trans_dim;
        let bias_dim = if template.bias { q } else { 0 };
        FeatureIndex {
            template,
            alphabet: corpus.alphabet.clone(),
            w: corpus.settings.w,
            patterns,
            lookup,
            n_patterns: if template.any_state() { n_patterns } else { 0 },
            trans_base,
            bias_base,
            dim: bias_base + bias_dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> usize {
        self.alphabet.len()
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn alphabet(&self) -> &LabelAlphabet {
        &self.alphabet
    }

    pub fn template(&self) -> &FeatureTemplate {
        &self.template
    }

    pub fn n_patterns(&self) -> usize {
        self.n_patterns
    }

    pub fn n_transition_features(&self) -> usize {
        if self.template.transitions { self.q() * self.q() } else { 0 }
    }

    pub fn n_bias_features(&self) -> usize {
        if self.template.bias { self.q() } else { 0 }
    }

    pub fn state_index(&self, pattern: u32, label: usize) -> u32 {
        (pattern as usize * self.q() + label) as u32
    }

    pub fn trans_index(&self, from: usize, to: usize) -> u32 {
        (self.trans_base + from * self.q() + to) as u32
    }

    pub fn bias_index(&self, label: usize) -> u32 {
        (self.bias_base + label) as u32
    }

    pub fn has_transitions(&self) -> bool {
        self.template.transitions
    }

    pub fn has_bias(&self) -> bool {
        self.template.bias
    }

    /// Pattern ids active at `tokens[pos]`; unseen patterns are dropped in
    /// dictionary mode and bucketed in hashing mode.
    pub fn node_patterns(&self, tokens: &[String], pos: usize) -> Vec<u32> {
        if !self.template.any_state() {
            return Vec::new();
        }
        let mut scratch = Vec::new();
        node_pattern_strings(&self.template, tokens, pos, &mut scratch);
        let mut ids = Vec::with_capacity(scratch.len());
        if self.template.hash_bits.is_some() {
            let mask = (self.n_patterns - 1) as u64;
            for pattern in &scratch {
                ids.push((fnv1a(pattern.as_bytes()) & mask) as u32);
            }
        } else {
            for pattern in &scratch {
                if let Some(&id) = self.lookup.get(pattern) {
                    ids.push(id);
                }
            }
        }
        ids
    }

    /// Serializes the index: header lines, then one `id\tpattern` line per
    /// interned pattern.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# ambigseq-features v1\n");
        let _ = writeln!(
            out,
            "# q={} w={} patterns={} dim={} hash_bits={}",
            self.q(),
            self.w,
            self.n_patterns,
            self.dim,
            self.template.hash_bits.map(|b| b as i32).unwrap_or(-1),
        );
        let _ = writeln!(out, "# templates={}", self.template.names().join(","));
        let _ = writeln!(out, "# labels\t{}", self.alphabet.iter().collect::<Vec<_>>().join(" "));
        for (id, pattern) in self.patterns.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{pattern}");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FeatureIndex> {
        let text = std::fs::read_to_string(path)?;
        let mut alphabet = LabelAlphabet::new();
        let mut w = 1usize;
        let mut declared_patterns = 0usize;
        let mut hash_bits: Option<u8> = None;
        let mut template_names = String::new();
        let mut patterns = Vec::new();
        let mut lookup = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some(names) = rest.strip_prefix("labels\t") {
                    for name in names.split(' ').filter(|s| !s.is_empty()) {
                        alphabet.intern(name);
                    }
                } else if let Some(names) = rest.strip_prefix("templates=") {
                    template_names = names.to_string();
                } else if rest.starts_with("q=") {
                    for part in rest.split(' ') {
                        if let Some((key, value)) = part.split_once('=') {
                            match key {
                                "w" => w = value.parse().unwrap_or(1),
                                "patterns" => declared_patterns = value.parse().unwrap_or(0),
                                "hash_bits" => {
                                    let v: i32 = value.parse().unwrap_or(-1);
                                    hash_bits = (v >= 0).then_some(v as u8);
                                }
                                _ => {}
                            }
                        }
                    }
                }
                continue;
            }
            let (id_text, pattern) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: "expected `id\\tpattern`".into(),
            })?;
            let id: u32 = id_text.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad pattern id '{id_text}'"),
            })?;
            if id as usize != patterns.len() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "pattern ids must be dense and in order".into(),
                });
            }
            lookup.insert(pattern.to_string(), id);
            patterns.push(pattern.to_string());
        }
        let template = FeatureTemplate::from_names(&template_names, hash_bits);
        let q = alphabet.len();
        let n_patterns = if hash_bits.is_some() { declared_patterns } else { patterns.len() };
        let state_dim = if template.any_state() { n_patterns * q } else { 0 };
        let trans_dim = if template.transitions { q * q } else { 0 };
        let bias_dim = if template.bias { q } else { 0 };
        Ok(FeatureIndex {
            template,
            alphabet,
            w,
            patterns,
            lookup,
            n_patterns: if template.any_state() { n_patterns } else { 0 },
            trans_base: state_dim,
            bias_base: state_dim + trans_dim,
            dim: state_dim + trans_dim + bias_dim,
        })
    }
}

/// Precomputed, label-independent view of one piece: the pattern ids active
/// at each of its `w + 1` node positions.
#[derive(Clone, Debug)]
pub struct PieceContext {
    pub node_patterns: Vec<Vec<u32>>,
}

/// Builds the context for a piece from its sequence's tokens.
pub fn piece_context(index: &FeatureIndex, tokens: &[String], piece: &Piece) -> PieceContext {
    let node_patterns = (piece.start..piece.start + piece.span())
        .map(|pos| index.node_patterns(tokens, pos))
        .collect();
    PieceContext { node_patterns }
}

/// Joint feature vector of a (piece, tuple) pair: state and bias indicators
/// per node plus transition indicators per edge, all accumulated with value
/// 1.0.
pub fn joint_features(index: &FeatureIndex, ctx: &PieceContext, tuple: &LabelTuple) -> Result<SparseVec> {
    let q = index.q();
    let span = ctx.node_patterns.len();
    if tuple.len() != span {
        return Err(Error::data(format!(
            "tuple length {} does not match piece span {span}",
            tuple.len()
        )));
    }
    if tuple.ids().iter().any(|&id| id >= q) {
        return Err(Error::data("tuple contains a label id outside the alphabet"));
    }
    let mut pairs = Vec::new();
    for (node, &label) in tuple.ids().iter().enumerate() {
        for &pattern in &ctx.node_patterns[node] {
            pairs.push((index.state_index(pattern, label), 1.0));
        }
        if index.has_bias() {
            pairs.push((index.bias_index(label), 1.0));
        }
    }
    if index.has_transitions() {
        for edge in 0..span - 1 {
            pairs.push((index.trans_index(tuple.ids()[edge], tuple.ids()[edge + 1]), 1.0));
        }
    }
    Ok(SparseVec::from_pairs(pairs))
}

/// Label-marginalized token features of a piece, in pattern-id space; used
/// only for neighbor search during confidence initialization.
pub fn input_features(ctx: &PieceContext) -> SparseVec {
    let mut pairs = Vec::new();
    for node in &ctx.node_patterns {
        for &pattern in node {
            pairs.push((pattern, 1.0));
        }
    }
    SparseVec::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corrupt, parse_conll};

    fn tiny_corpus(q: usize, template_q_text: &str) -> AmbiguousCorpus {
        let (alphabet, seqs) = parse_conll(template_q_text, 0, 1).unwrap();
        assert_eq!(alphabet.len(), q);
        corrupt(&seqs, &alphabet, 1, 1, 1.0, 0).unwrap()
    }

    #[test]
    fn transition_block_sizes() {
        let corpus = tiny_corpus(1, "a A\nb A\n\n");
        let index = FeatureIndex::build(&corpus, FeatureTemplate::transitions_only());
        assert_eq!(index.dim(), 1);
        assert_eq!(index.n_transition_features(), 1);

        let corpus3 = tiny_corpus(3, "a A\nb B\nc C\n\n");
        let index3 = FeatureIndex::build(&corpus3, FeatureTemplate::transitions_only());
        assert_eq!(index3.n_transition_features(), 9);
    }

    #[test]
    fn bias_block_size() {
        let corpus = tiny_corpus(3, "a A\nb B\nc C\n\n");
        let mut template = FeatureTemplate::transitions_only();
        template.bias = true;
        let index = FeatureIndex::build(&corpus, template);
        assert_eq!(index.n_bias_features(), 3);
        assert_eq!(index.dim(), 9 + 3);
    }

    #[test]
    fn joint_features_deterministic_and_local() {
        let corpus = tiny_corpus(2, "alpha A\nbeta B\ngamma A\n\n");
        let index = FeatureIndex::build(&corpus, FeatureTemplate::default());
        let piece = &corpus.pieces[0];
        let ctx = piece_context(&index, &corpus.sequences[0].tokens, piece);

        let t_ab = LabelTuple::new(vec![0, 1]);
        let first = joint_features(&index, &ctx, &t_ab).unwrap();
        let second = joint_features(&index, &ctx, &t_ab).unwrap();
        assert_eq!(first, second);

        // Changing only node 1's label leaves node 0's state indices intact.
        let t_aa = LabelTuple::new(vec![0, 0]);
        let other = joint_features(&index, &ctx, &t_aa).unwrap();
        let q = index.q();
        let node0: Vec<u32> = ctx.node_patterns[0].iter().map(|&p| index.state_index(p, 0)).collect();
        for i in node0 {
            assert!(first.iter().any(|(j, _)| j == i));
            assert!(other.iter().any(|(j, _)| j == i));
        }
        assert_ne!(first, other);
        let _ = q;
    }

    #[test]
    fn single_edge_transition_index() {
        let corpus = tiny_corpus(2, "a A\nb B\n\n");
        let index = FeatureIndex::build(&corpus, FeatureTemplate::transitions_only());
        let piece = &corpus.pieces[0];
        let ctx = piece_context(&index, &corpus.sequences[0].tokens, piece);
        let v = joint_features(&index, &ctx, &LabelTuple::new(vec![0, 1])).unwrap();
        assert_eq!(v.nnz(), 1);
        assert_eq!(v.iter().next().unwrap().0, index.trans_index(0, 1));
    }

    #[test]
    fn bias_active_per_node() {
        let corpus = tiny_corpus(2, "a A\nb B\nc A\n\n");
        let index = FeatureIndex::build(&corpus, FeatureTemplate::default());
        for piece in &corpus.pieces {
            let ctx = piece_context(&index, &corpus.sequences[piece.seq_id].tokens, piece);
            let v = joint_features(&index, &ctx, &piece.gold).unwrap();
            let bias_hits = v
                .iter()
                .filter(|&(i, _)| i >= index.bias_index(0) && i < index.bias_index(0) + 2)
                .map(|(_, value)| value)
                .sum::<f64>();
            assert_eq!(bias_hits, piece.span() as f64);
        }
    }

    #[test]
    fn input_features_cosine() {
        let corpus = tiny_corpus(2, "same A\nsame B\n\nother A\nother B\n\n");
        let index = FeatureIndex::build(&corpus, FeatureTemplate::default());
        let ctx0 = piece_context(&index, &corpus.sequences[0].tokens, &corpus.pieces[0]);
        let ctx1 = piece_context(&index, &corpus.sequences[1].tokens, &corpus.pieces[1]);
        let a = input_features(&ctx0);
        let b = input_features(&ctx1);
        assert!((a.cosine(&a) - 1.0).abs() < 1e-12);
        // Same word "same" vs "other": shapes coincide, words differ.
        assert!(a.cosine(&b) < 1.0);
    }

    #[test]
    fn disjoint_vocab_zero_cosine() {
        let mut template = FeatureTemplate::default();
        template.shape = false;
        template.context = false;
        template.prefixes = false;
        template.suffixes = false;
        template.lowercase = false;
        let corpus = tiny_corpus(2, "aa A\nbb B\n\ncc A\ndd B\n\n");
        let index = FeatureIndex::build(&corpus, template);
        let ctx0 = piece_context(&index, &corpus.sequences[0].tokens, &corpus.pieces[0]);
        let ctx1 = piece_context(&index, &corpus.sequences[1].tokens, &corpus.pieces[1]);
        assert_eq!(input_features(&ctx0).cosine(&input_features(&ctx1)), 0.0);
    }

    #[test]
    fn shape_collapses_runs() {
        assert_eq!(word_shape("Mr.2"), "Xxod");
        assert_eq!(word_shape("ABCdef12"), "Xxd");
        assert_eq!(word_shape(""), "");
    }

    #[test]
    fn sparse_vec_merges_duplicates() {
        let v = SparseVec::from_pairs(vec![(3, 1.0), (1, 2.0), (3, 1.0), (2, 0.0)]);
        let collected: Vec<_> = v.iter().collect();
        assert_eq!(collected, vec![(1, 2.0), (3, 2.0)]);
    }

    #[test]
    fn sparse_dot_matches_dense() {
        let a = SparseVec::from_pairs(vec![(0, 1.0), (4, 2.0), (7, -1.0)]);
        let b = SparseVec::from_pairs(vec![(4, 3.0), (7, 5.0), (9, 1.0)]);
        assert_eq!(a.dot(&b), 6.0 - 5.0);
        let mut dense = vec![0.0; 10];
        b.add_scaled_into(1.0, &mut dense);
        assert_eq!(a.dot_dense(&dense), a.dot(&b));
    }

    #[test]
    fn joint_feature_density_bound() {
        // nnz <= (w+1) * (#state templates per node + 1) + w; the default
        // template emits at most 11 state patterns per node plus bias.
        let corpus = tiny_corpus(2, "alpha A\nbeta B\ngamma A\n\n");
        let index = FeatureIndex::build(&corpus, FeatureTemplate::default());
        for piece in &corpus.pieces {
            let ctx = piece_context(&index, &corpus.sequences[piece.seq_id].tokens, piece);
            let v = joint_features(&index, &ctx, &piece.gold).unwrap();
            let per_node = 11 + 1;
            assert!(v.nnz() <= piece.span() * per_node + piece.width);
        }
    }

    #[test]
    fn hashed_mode_matches_dimensions() {
        let corpus = tiny_corpus(2, "alpha A\nbeta B\ngamma A\n\n");
        let mut template = FeatureTemplate::default();
        template.hash_bits = Some(8);
        let index = FeatureIndex::build(&corpus, template);
        let q = index.q();
        assert_eq!(index.dim(), (1 << 8) * q + q * q + q);
        let tokens = &corpus.sequences[0].tokens;
        let ids = index.node_patterns(tokens, 0);
        assert!(!ids.is_empty());
        assert!(ids.iter().all(|&p| (p as usize) < 1 << 8));
        // Deterministic bucketing.
        assert_eq!(ids, index.node_patterns(tokens, 0));
    }

    #[test]
    fn index_save_load_roundtrip() {
        let corpus = tiny_corpus(2, "alpha A\nbeta B\ngamma A\n\n");
        let index = FeatureIndex::build(&corpus, FeatureTemplate::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.txt");
        index.save(&path).unwrap();
        let reread = FeatureIndex::load(&path).unwrap();
        assert_eq!(reread.dim(), index.dim());
        assert_eq!(reread.q(), index.q());
        let tokens = &corpus.sequences[0].tokens;
        assert_eq!(reread.node_patterns(tokens, 1), index.node_patterns(tokens, 1));
    }
}
