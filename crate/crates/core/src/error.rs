use alloc::string::String;
use core::fmt;

use crate::vector::ClassId;

/// Errors raised by the core engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    DimensionMismatch { expected: usize, found: usize },
    /// A vector whose L2 norm is at or below [`crate::ZERO_NORM_EPS`].
    ZeroVector,
    /// A vector containing NaN or an infinity, or with no components at all.
    InvalidVector(String),
    EmptyInput(String),
    LengthMismatch { left: usize, right: usize },
    InvalidConfig(String),
    EmptyStore,
    EmptyDataset,
    NothingEvictable,
    BudgetUnsatisfiable { budget: usize },
    UnknownClass(ClassId),
    DuplicateId(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::ZeroVector => f.write_str("vector has (near) zero norm"),
            Error::InvalidVector(why) => write!(f, "invalid vector: {why}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::InvalidConfig(why) => write!(f, "invalid configuration: {why}"),
            Error::EmptyStore => f.write_str("prototype store is empty"),
            Error::EmptyDataset => f.write_str("dataset split is empty"),
            Error::NothingEvictable => f.write_str("no evictable prototype in store"),
            Error::BudgetUnsatisfiable { budget } => write!(
                f,
                "budget of {budget} prototypes cannot be met: every other entry is protected"
            ),
            Error::UnknownClass(id) => write!(f, "unknown class {id}"),
            Error::DuplicateId(id) => write!(f, "duplicate record id {id:?}"),
        }
    }
}

impl core::error::Error for Error {}
