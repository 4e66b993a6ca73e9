use std::fmt;

use neft_core::NeftError;

pub const USAGE: i32 = 2;
pub const NUMERIC: i32 = 3;
pub const OTHER: i32 = 1;

/// Bad flags, invalid config or refused overwrite.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Training produced non-finite values; artifacts were still written.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if cause.is::<NumericFailure>() {
            return NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<NeftError>() {
            return match e {
                NeftError::Diverged { .. } | NeftError::NonFiniteGradient { .. } | NeftError::Singularity(_) => NUMERIC,
                NeftError::Io(_) | NeftError::Format(_) | NeftError::Json(_) => OTHER,
                _ => USAGE,
            };
        }
        if cause.is::<std::io::Error>() {
            return OTHER;
        }
    }
    OTHER
}
