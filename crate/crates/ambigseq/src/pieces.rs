//! Decomposition of sequences into fixed-width pieces and enumeration of
//! label tuples over pieces.
//!
//! A piece covers `w + 1` consecutive positions of a sequence and carries a
//! set of candidate label tuples. Pieces are the unit of training: each one
//! is treated as an independent sample.

use crate::corpus::Sequence;
use crate::error::{Error, Result};

/// Tuples per piece above which exhaustive enumeration is refused.
pub const DEFAULT_ENUM_CAP: u64 = 1_000_000;

/// A fixed-length assignment of label ids to the positions of a piece.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelTuple {
    ids: Vec<usize>,
}

impl LabelTuple {
    pub fn new(ids: Vec<usize>) -> Self {
        LabelTuple { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Big-endian base-`q` encoding. Numeric order of codes equals
    /// lexicographic order of tuples.
    pub fn code(&self, q: usize) -> u64 {
        let mut c = 0u64;
        for &id in &self.ids {
            c = c * q as u64 + id as u64;
        }
        c
    }

    /// Inverse of [`LabelTuple::code`] for a tuple of `span` positions.
    pub fn from_code(mut code: u64, q: usize, span: usize) -> Self {
        let mut ids = vec![0usize; span];
        for slot in ids.iter_mut().rev() {
            *slot = (code % q as u64) as usize;
            code /= q as u64;
        }
        LabelTuple { ids }
    }
}

/// A contiguous span of `width + 1` positions with its candidate label set.
///
/// The gold tuple is retained for corruption bookkeeping and evaluation; the
/// trainers never read it.
#[derive(Clone, Debug)]
pub struct Piece {
    pub seq_id: usize,
    pub start: usize,
    pub width: usize,
    pub candidates: Vec<LabelTuple>,
    pub gold: LabelTuple,
}

impl Piece {
    pub fn new(
        seq_id: usize,
        start: usize,
        width: usize,
        candidates: Vec<LabelTuple>,
        gold: LabelTuple,
    ) -> Result<Self> {
        let span = width + 1;
        if gold.len() != span {
            return Err(Error::data(format!(
                "piece gold tuple has length {}, expected {span}",
                gold.len()
            )));
        }
        if candidates.is_empty() {
            return Err(Error::data("piece has an empty candidate set"));
        }
        if candidates.iter().any(|c| c.len() != span) {
            return Err(Error::data("candidate tuple length differs from piece span"));
        }
        if !candidates.contains(&gold) {
            return Err(Error::data("piece candidate set does not contain the gold tuple"));
        }
        Ok(Piece { seq_id, start, width, candidates, gold })
    }

    /// Number of positions covered (`width + 1`).
    pub fn span(&self) -> usize {
        self.width + 1
    }

    /// Candidate count `s`.
    pub fn s(&self) -> usize {
        self.candidates.len()
    }
}

/// Number of label tuples over a piece: `q^(w+1)`, or a configuration error
/// on overflow.
pub fn tuple_space(q: usize, w: usize) -> Result<u64> {
    let span = (w + 1) as u32;
    (q as u64)
        .checked_pow(span)
        .ok_or_else(|| Error::config(format!("label tuple space q^(w+1) overflows for q={q}, w={w}")))
}

/// Splits a gold-labeled sequence into its `L - w` overlapping pieces.
///
/// Each piece starts at positions `0..L-w-1` and initially carries a
/// singleton candidate set holding the gold tuple. Sequences shorter than
/// `w + 1` yield no pieces; callers count them as skipped.
pub fn decompose(seq_id: usize, sequence: &Sequence, w: usize) -> Result<Vec<Piece>> {
    if w == 0 {
        return Err(Error::config("piece width w must be at least 1"));
    }
    let gold = sequence
        .gold
        .as_ref()
        .ok_or_else(|| Error::data(format!("sequence {seq_id} has no gold labels to decompose")))?;
    let len = sequence.len();
    if len < w + 1 {
        return Ok(Vec::new());
    }
    let mut pieces = Vec::with_capacity(len - w);
    for start in 0..len - w {
        let tuple = LabelTuple::new(gold[start..start + w + 1].to_vec());
        pieces.push(Piece::new(seq_id, start, w, vec![tuple.clone()], tuple)?);
    }
    Ok(pieces)
}

/// Iterator over all `q^(w+1)` label tuples in lexicographic order.
pub fn enumerate_tuples(q: usize, w: usize) -> Result<impl Iterator<Item = LabelTuple>> {
    enumerate_tuples_capped(q, w, DEFAULT_ENUM_CAP)
}

pub fn enumerate_tuples_capped(
    q: usize,
    w: usize,
    cap: u64,
) -> Result<impl Iterator<Item = LabelTuple>> {
    if q == 0 {
        return Err(Error::config("alphabet must contain at least one label"));
    }
    let space = tuple_space(q, w)?;
    if space > cap {
        return Err(Error::config(format!(
            "tuple space {space} exceeds the enumeration cap {cap}; reduce w"
        )));
    }
    let span = w + 1;
    Ok((0..space).map(move |code| LabelTuple::from_code(code, q, span)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold_seq(labels: &[usize]) -> Sequence {
        Sequence {
            tokens: labels.iter().map(|i| format!("t{i}")).collect(),
            gold: Some(labels.to_vec()),
        }
    }

    #[test]
    fn decompose_counts_w1() {
        let seq = gold_seq(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0]);
        let pieces = decompose(0, &seq, 1).unwrap();
        assert_eq!(pieces.len(), 9);
        for (t, piece) in pieces.iter().enumerate() {
            assert_eq!(piece.start, t);
            assert_eq!(piece.span(), 2);
        }
    }

    #[test]
    fn decompose_counts_w2() {
        let seq = gold_seq(&[0, 1, 2, 0, 1]);
        let pieces = decompose(0, &seq, 2).unwrap();
        assert_eq!(pieces.len(), 3);
    }

    #[test]
    fn decompose_whole_sequence_boundary() {
        let seq = gold_seq(&[1, 0]);
        let pieces = decompose(3, &seq, 1).unwrap();
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].seq_id, 3);
        assert_eq!(pieces[0].gold.ids(), &[1, 0]);
    }

    #[test]
    fn decompose_short_sequence_yields_nothing() {
        let seq = gold_seq(&[0]);
        assert!(decompose(0, &seq, 1).unwrap().is_empty());
    }

    #[test]
    fn enumerate_is_exhaustive_and_lexicographic() {
        let tuples: Vec<_> = enumerate_tuples(3, 1).unwrap().collect();
        assert_eq!(tuples.len(), 9);
        let mut sorted = tuples.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, tuples);
        assert_eq!(tuples[0].ids(), &[0, 0]);
        assert_eq!(tuples[8].ids(), &[2, 2]);
    }

    #[test]
    fn enumerate_single_label() {
        let tuples: Vec<_> = enumerate_tuples(1, 2).unwrap().collect();
        assert_eq!(tuples.len(), 1);
        assert_eq!(tuples[0].ids(), &[0, 0, 0]);
    }

    #[test]
    fn enumerate_pos_sized_alphabet() {
        let count = enumerate_tuples(43, 1).unwrap().count();
        assert_eq!(count, 1849);
    }

    #[test]
    fn enumerate_cap_refused() {
        match enumerate_tuples_capped(100, 3, 1_000_000) {
            Err(err) => assert!(err.to_string().contains("reduce w")),
            Ok(_) => panic!("expected the enumeration cap to reject q=100, w=3"),
        }
    }

    #[test]
    fn code_roundtrip() {
        for code in 0..27 {
            let t = LabelTuple::from_code(code, 3, 3);
            assert_eq!(t.code(3), code);
        }
    }
}
