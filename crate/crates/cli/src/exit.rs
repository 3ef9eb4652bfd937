//! Process exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | any other failure (I/O, internal) |
//! | 2 | usage: unknown flag, bad flag value, bad config file |
//! | 3 | a referenced input file or directory does not exist |
//! | 4 | model fingerprint mismatch between models and reference set |
//! | 5 | invalid input data (format, validation, too few samples, no leaf) |
//! | 6 | training diverged (non-finite loss) |

use std::io::ErrorKind;

use twoview_core::Error;

pub const FAILURE: u8 = 1;
pub const USAGE: u8 = 2;
pub const MISSING_FILE: u8 = 3;
pub const FINGERPRINT: u8 = 4;
pub const INVALID_DATA: u8 = 5;
pub const TRAINING: u8 = 6;

/// A usage error outside clap's own parsing.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn code_for(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<Usage>().is_some()) {
        return USAGE;
    }
    let missing = err
        .chain()
        .filter_map(|e| e.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == ErrorKind::NotFound);
    if missing {
        return MISSING_FILE;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::FingerprintMismatch(_)) => FINGERPRINT,
        Some(Error::NonFiniteLoss { .. }) => TRAINING,
        Some(Error::InvalidArgument(_)) => USAGE,
        Some(Error::Io { .. } | Error::Image { .. } | Error::Json(_)) | None => FAILURE,
        Some(_) => INVALID_DATA,
    }
}
