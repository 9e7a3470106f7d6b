use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Phred score outside the supported 0..=93 range.
    PhredOutOfRange(u32),
    /// A quality score fell outside `[0, 1]`.
    QualityOutOfRange(f64),
    /// An aggregation was asked for an empty quality list.
    EmptyQualityList,
    /// Element and quality vectors differ in length.
    LengthMismatch { elements: usize, qualities: usize },
    /// Symbol id at `position` is not part of the base alphabet.
    UnknownSymbol { position: usize, symbol: u32 },
    /// Token id not present in the vocabulary.
    UnknownToken(u32),
    /// Segmentation references a token id beyond the vocabulary.
    InvalidSegmentation { token: u32 },
    /// Event list was empty where at least one group is required.
    EmptyEvents,
    /// Bin configuration with a non-positive bin count or empty range.
    BadBinConfig(&'static str),
    /// Event field violated its invariant.
    BadEvent { index: usize, what: &'static str },
    /// Rolling context statistics missing or non-finite.
    MissingContext(&'static str),
    /// Mid-price must be strictly positive.
    NonPositiveMid(f64),
    /// Weight vector violated its constraint.
    BadWeights(&'static str),
    /// Corpus empty where tokens are required.
    EmptyCorpus,
    /// Exhaustive search would exceed the enumeration guard.
    InstanceTooLarge { nodes: u64, bound: u64 },
    /// A reward component has no matching weight (or appears twice).
    ComponentMismatch(&'static str),
    /// Action index pointed at a padded queue slot.
    PaddedAction { index: usize, live: usize },
    /// Training produced a non-finite loss.
    NonFiniteLoss { step: usize, what: &'static str },
    /// Sampling ratio must satisfy `0 < r <= 1`.
    RatioOutOfRange(f64),
    /// A parameter must be strictly positive.
    NonPositiveParam(&'static str),
    /// Free-form invariant violation.
    Invariant(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::PhredOutOfRange(p) => write!(f, "phred score {p} outside 0..=93"),
            Error::QualityOutOfRange(q) => write!(f, "quality {q} outside [0, 1]"),
            Error::EmptyQualityList => write!(f, "empty quality list"),
            Error::LengthMismatch {
                elements,
                qualities,
            } => write!(
                f,
                "sequence has {elements} elements but {qualities} qualities"
            ),
            Error::UnknownSymbol { position, symbol } => {
                write!(f, "unknown symbol {symbol} at position {position}")
            }
            Error::UnknownToken(t) => write!(f, "unknown token id {t}"),
            Error::InvalidSegmentation { token } => {
                write!(f, "segmentation references unknown token id {token}")
            }
            Error::EmptyEvents => write!(f, "empty event list"),
            Error::BadBinConfig(what) => write!(f, "bad bin config: {what}"),
            Error::BadEvent { index, what } => write!(f, "bad event at index {index}: {what}"),
            Error::MissingContext(what) => write!(f, "missing context statistic: {what}"),
            Error::NonPositiveMid(m) => write!(f, "non-positive mid price {m}"),
            Error::BadWeights(what) => write!(f, "bad weights: {what}"),
            Error::EmptyCorpus => write!(f, "corpus has no tokens"),
            Error::InstanceTooLarge { nodes, bound } => {
                write!(f, "exhaustive search needs > {bound} nodes (hit {nodes})")
            }
            Error::ComponentMismatch(what) => write!(f, "reward component mismatch: {what}"),
            Error::PaddedAction { index, live } => {
                write!(f, "action {index} hit a padded slot ({live} live candidates)")
            }
            Error::NonFiniteLoss { step, what } => {
                write!(f, "non-finite {what} at step {step}")
            }
            Error::RatioOutOfRange(r) => write!(f, "sampling ratio {r} outside (0, 1]"),
            Error::NonPositiveParam(what) => write!(f, "{what} must be > 0"),
            Error::Invariant(msg) => write!(f, "{msg}"),
        }
    }
}

impl core::error::Error for Error {}
