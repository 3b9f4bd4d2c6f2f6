//! Command failures and their process exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | invalid input: graph, config, script, run logs, missing initial-prediction cache, bad flags |
//! | 2 | completion backend unreachable or rejecting requests |
//! | 3 | run logs do not share a round/budget grid (or a graph) |
//! | 4 | the serve port is already in use |
//! | 5 | any other runtime failure (I/O, aborted engine run) |

use std::fmt;

pub const INVALID_INPUT: u8 = 1;
pub const BACKEND_UNREACHABLE: u8 = 2;
pub const GRID_MISMATCH: u8 = 3;
pub const PORT_BUSY: u8 = 4;
pub const RUNTIME: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure { code, error: error.into() }
    }

    pub fn invalid_input(message: impl fmt::Display) -> Self {
        Failure::new(INVALID_INPUT, anyhow::anyhow!("{message}"))
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        Failure::new(RUNTIME, anyhow::anyhow!("{message}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Attaches an exit code and context to any error.
pub trait ResultExt<T> {
    fn code(self, code: u8, context: impl fmt::Display) -> Result<T, Failure>;

    fn invalid(self, context: impl fmt::Display) -> Result<T, Failure>
    where
        Self: Sized,
    {
        self.code(INVALID_INPUT, context)
    }

    fn runtime(self, context: impl fmt::Display) -> Result<T, Failure>
    where
        Self: Sized,
    {
        self.code(RUNTIME, context)
    }
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn code(self, code: u8, context: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(code, anyhow::Error::new(e).context(context.to_string())))
    }
}
