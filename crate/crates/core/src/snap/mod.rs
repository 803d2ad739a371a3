//! SNAP: an eight-symbol stack language describing one network block.
//!
//! The stack starts with two tensors (the outputs of the previous two
//! blocks, most recent on top). Layer symbols transform the top tensor,
//! `B` duplicates it, `X` swaps the top two and `M` pops two and pushes
//! their concatenation projected back to block width. Whatever remains on
//! the stack at the end is summed into the block output.

mod graph;

pub use graph::{build_block_graph, export_dot, BlockGraph, BlockNode, NodeKind};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Longest accepted program.
pub const MAX_LEN: usize = 12;
/// Default length range for random programs.
pub const RANDOM_LEN: (usize, usize) = (4, 12);
/// Stack depth before the first symbol.
pub const INITIAL_STACK: usize = 2;
/// Token vocabulary: eight symbols, then end-of-sequence and padding.
pub const VOCAB: usize = 10;
pub const EOS: usize = 8;
pub const PAD: usize = 9;

const RANDOM_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SnapSymbol {
    Conv1,
    Conv3,
    DwConv3,
    DwsConv3,
    MaxPool3,
    Branch,
    Switch,
    Merge,
}

impl SnapSymbol {
    pub const ALL: [SnapSymbol; 8] = [
        SnapSymbol::Conv1,
        SnapSymbol::Conv3,
        SnapSymbol::DwConv3,
        SnapSymbol::DwsConv3,
        SnapSymbol::MaxPool3,
        SnapSymbol::Branch,
        SnapSymbol::Switch,
        SnapSymbol::Merge,
    ];

    pub fn token(self) -> &'static str {
        match self {
            SnapSymbol::Conv1 => "C1",
            SnapSymbol::Conv3 => "C3",
            SnapSymbol::DwConv3 => "D3",
            SnapSymbol::DwsConv3 => "S3",
            SnapSymbol::MaxPool3 => "P3",
            SnapSymbol::Branch => "B",
            SnapSymbol::Switch => "X",
            SnapSymbol::Merge => "M",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            SnapSymbol::Conv1 => "conv1",
            SnapSymbol::Conv3 => "conv3",
            SnapSymbol::DwConv3 => "dwconv3",
            SnapSymbol::DwsConv3 => "dwsconv3",
            SnapSymbol::MaxPool3 => "maxpool3",
            SnapSymbol::Branch => "branch",
            SnapSymbol::Switch => "switch",
            SnapSymbol::Merge => "merge",
        }
    }

    /// Position in the token vocabulary.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_layer(self) -> bool {
        self.index() < 5
    }

    /// Net change in stack depth.
    pub fn stack_effect(self) -> isize {
        match self {
            SnapSymbol::Branch => 1,
            SnapSymbol::Merge => -1,
            _ => 0,
        }
    }

    /// Minimum stack depth required before the symbol executes.
    pub fn required_depth(self) -> usize {
        match self {
            SnapSymbol::Switch | SnapSymbol::Merge => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for SnapSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SnapSymbol {
    type Err = SnapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|sym| sym.token() == s || sym.long_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SnapError::UnknownToken(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapError {
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("empty sequence")]
    Empty,
    #[error("sequence of {0} symbols exceeds the maximum of {MAX_LEN}")]
    TooLong(usize),
    #[error("invalid sequence: {0}")]
    InvalidSequence(ValidationResult),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    UnderflowSwitch,
    UnderflowMerge,
    UnderflowLayer,
    TooLong,
    Empty,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub valid: bool,
    pub failure_index: Option<usize>,
    pub failure_reason: Option<FailureReason>,
    /// Stack depth after the last symbol (or at the failure point).
    pub final_stack: usize,
}

impl fmt::Display for ValidationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.failure_reason, self.failure_index) {
            (None, _) => write!(f, "VALID"),
            (Some(r), Some(i)) => write!(f, "{r}@{i}"),
            (Some(r), None) => write!(f, "{r}"),
        }
    }
}

/// An ordered SNAP program. Construction does not imply stack validity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SnapSequence(Vec<SnapSymbol>);

impl SnapSequence {
    pub fn new(symbols: Vec<SnapSymbol>) -> Self {
        Self(symbols)
    }

    pub fn symbols(&self) -> &[SnapSymbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses whitespace-separated tokens. Only lexical checks are made;
    /// see [`validate`] for stack validity.
    pub fn parse(text: &str) -> Result<Self, SnapError> {
        let symbols = text
            .split_whitespace()
            .map(SnapSymbol::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        if symbols.is_empty() {
            return Err(SnapError::Empty);
        }
        if symbols.len() > MAX_LEN {
            return Err(SnapError::TooLong(symbols.len()));
        }
        Ok(Self(symbols))
    }

    /// Canonical text: tokens joined by single spaces.
    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn validate(&self) -> ValidationResult {
        validate(self)
    }

    /// `{"symbols": [...], "valid": bool}`
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "symbols": self.0.iter().map(|s| s.token()).collect::<Vec<_>>(),
            "valid": self.validate().valid,
        })
    }
}

impl fmt::Display for SnapSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(s.token())?;
        }
        Ok(())
    }
}

impl FromStr for SnapSequence {
    type Err = SnapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

/// Simulates stack depths from [`INITIAL_STACK`] and reports the first
/// violated precondition.
pub fn validate(seq: &SnapSequence) -> ValidationResult {
    let fail = |reason, index, depth| ValidationResult {
        valid: false,
        failure_index: index,
        failure_reason: Some(reason),
        final_stack: depth,
    };
    if seq.is_empty() {
        return fail(FailureReason::Empty, None, INITIAL_STACK);
    }
    if seq.len() > MAX_LEN {
        return fail(FailureReason::TooLong, Some(MAX_LEN), INITIAL_STACK);
    }
    let mut depth = INITIAL_STACK;
    for (i, sym) in seq.symbols().iter().enumerate() {
        if depth < sym.required_depth() {
            let reason = match sym {
                SnapSymbol::Switch => FailureReason::UnderflowSwitch,
                SnapSymbol::Merge => FailureReason::UnderflowMerge,
                _ => FailureReason::UnderflowLayer,
            };
            return fail(reason, Some(i), depth);
        }
        depth = (depth as isize + sym.stack_effect()) as usize;
    }
    ValidationResult {
        valid: true,
        failure_index: None,
        failure_reason: None,
        final_stack: depth,
    }
}

/// Uniform length in `len_range` (inclusive), i.i.d. uniform symbols,
/// rejection-sampled until valid.
pub fn random_snap<R: Rng + ?Sized>(rng: &mut R, len_range: (usize, usize)) -> Result<SnapSequence, SnapError> {
    let (lo, hi) = len_range;
    if lo == 0 || hi < lo || hi > MAX_LEN {
        return Err(SnapError::Internal(format!("bad length range {lo}..={hi}")));
    }
    for _ in 0..RANDOM_ATTEMPTS {
        let len = rng.random_range(lo..=hi);
        let seq = SnapSequence::new(
            (0..len)
                .map(|_| SnapSymbol::ALL[rng.random_range(0..SnapSymbol::ALL.len())])
                .collect(),
        );
        if validate(&seq).valid {
            return Ok(seq);
        }
    }
    Err(SnapError::Internal(format!(
        "no valid sequence after {RANDOM_ATTEMPTS} attempts"
    )))
}

/// Vocabulary indices: symbols, one EOS, then PAD up to `max_len + 1` rows.
pub fn token_indices(seq: &SnapSequence, max_len: usize) -> Result<Vec<usize>, SnapError> {
    if seq.is_empty() {
        return Err(SnapError::Empty);
    }
    if seq.len() > max_len {
        return Err(SnapError::TooLong(seq.len()));
    }
    let mut out: Vec<usize> = seq.symbols().iter().map(|s| s.index()).collect();
    out.push(EOS);
    out.resize(max_len + 1, PAD);
    Ok(out)
}

/// `(max_len + 1) x VOCAB` one-hot matrix of [`token_indices`].
pub fn one_hot_encode<T: Scalar>(seq: &SnapSequence, max_len: usize) -> Result<Tensor<T>, SnapError> {
    let idx = token_indices(seq, max_len)?;
    let mut t = Tensor::zeros(&[max_len + 1, VOCAB]);
    for (r, i) in idx.iter().enumerate() {
        t.data_mut()[r * VOCAB + i] = T::one();
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use SnapSymbol::*;

    #[test]
    fn parses_tokens_and_aliases() {
        assert_eq!(SnapSequence::parse("B C3 M").unwrap().symbols(), &[Branch, Conv3, Merge]);
        assert_eq!(
            SnapSequence::parse("branch  conv3\tmerge").unwrap().symbols(),
            &[Branch, Conv3, Merge]
        );
        assert_eq!(SnapSequence::parse(""), Err(SnapError::Empty));
        assert_eq!(SnapSequence::parse("   "), Err(SnapError::Empty));
        assert_eq!(SnapSequence::parse("C3 Q9"), Err(SnapError::UnknownToken("Q9".into())));
        assert_eq!(
            SnapSequence::parse(&["C1"; 13].join(" ")),
            Err(SnapError::TooLong(13))
        );
    }

    #[test]
    fn alphabet_and_stack_effects() {
        assert_eq!(SnapSymbol::ALL.len(), 8);
        let effects: Vec<isize> = SnapSymbol::ALL.iter().map(|s| s.stack_effect()).collect();
        assert_eq!(effects, vec![0, 0, 0, 0, 0, 1, 0, -1]);
    }

    #[test]
    fn validation_examples() {
        let r = validate(&SnapSequence::new(vec![Switch]));
        assert!(r.valid);
        assert_eq!(r.final_stack, 2);

        let r = validate(&SnapSequence::new(vec![Merge, Merge]));
        assert!(!r.valid);
        assert_eq!(r.failure_index, Some(1));
        assert_eq!(r.failure_reason, Some(FailureReason::UnderflowMerge));

        let r = validate(&SnapSequence::new(vec![Branch, Conv3, Merge, Merge]));
        assert!(r.valid);
        assert_eq!(r.final_stack, 1);

        let r = validate(&SnapSequence::new(vec![Merge, Switch]));
        assert_eq!(r.failure_reason, Some(FailureReason::UnderflowSwitch));
        assert_eq!(validate(&SnapSequence::new(vec![])).failure_reason, Some(FailureReason::Empty));
        assert_eq!(
            validate(&SnapSequence::new(vec![Conv1; 13])).failure_reason,
            Some(FailureReason::TooLong)
        );
    }

    #[test]
    fn one_hot_layout() {
        let m: Tensor<f64> = one_hot_encode(&SnapSequence::new(vec![Conv3]), MAX_LEN).unwrap();
        assert_eq!(m.shape(), &[13, 10]);
        let row = |r: usize| &m.data()[r * VOCAB..(r + 1) * VOCAB];
        assert_eq!(row(0)[Conv3.index()], 1.0);
        assert_eq!(row(1)[EOS], 1.0);
        for r in 2..13 {
            assert_eq!(row(r)[PAD], 1.0);
        }
        for r in 0..13 {
            assert_eq!(row(r).iter().sum::<f64>(), 1.0);
        }
        assert_eq!(
            one_hot_encode::<f64>(&SnapSequence::new(vec![]), MAX_LEN),
            Err(SnapError::Empty)
        );
    }

    #[test]
    fn random_snaps_are_valid_cover_lengths_and_are_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; MAX_LEN + 1];
        for _ in 0..10_000 {
            let s = random_snap(&mut rng, RANDOM_LEN).unwrap();
            assert!(validate(&s).valid);
            counts[s.len()] += 1;
        }
        for (len, c) in counts.iter().enumerate().take(13).skip(4) {
            // expected ~1,111 each; rejection slightly favours short lengths
            assert!(*c >= 900, "length {len} drawn {c} times");
        }
        let a = random_snap(&mut ChaCha8Rng::seed_from_u64(5), RANDOM_LEN).unwrap();
        let b = random_snap(&mut ChaCha8Rng::seed_from_u64(5), RANDOM_LEN).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_export() {
        let s = SnapSequence::parse("M M").unwrap();
        assert_eq!(s.to_json(), serde_json::json!({"symbols": ["M", "M"], "valid": false}));
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(idx in proptest::collection::vec(0usize..8, 1..=MAX_LEN)) {
            let s = SnapSequence::new(idx.iter().map(|i| SnapSymbol::ALL[*i]).collect());
            prop_assert_eq!(SnapSequence::parse(&s.render()).unwrap(), s);
        }

        #[test]
        fn final_depth_is_stack_effect_arithmetic(idx in proptest::collection::vec(0usize..8, 1..=MAX_LEN)) {
            let s = SnapSequence::new(idx.iter().map(|i| SnapSymbol::ALL[*i]).collect());
            let r = validate(&s);
            if r.valid {
                let branches = s.symbols().iter().filter(|x| **x == Branch).count();
                let merges = s.symbols().iter().filter(|x| **x == Merge).count();
                prop_assert_eq!(r.final_stack, 2 + branches - merges);
                prop_assert!(r.final_stack >= 1);
            }
        }
    }
}
