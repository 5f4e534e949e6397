use std::fmt;

/// Process exit codes.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_MISSING: u8 = 4;
pub const EXIT_CONTRACT: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(EXIT_MISSING, message)
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONTRACT, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<rnoise::Error> for CliError {
    fn from(e: rnoise::Error) -> Self {
        use rnoise::Error as E;
        let code = match &e {
            E::Numeric(_) | E::Singularity(_) | E::Aborted(_) | E::Tape(_) => EXIT_NUMERIC,
            E::Dimension(_) | E::Label(_) | E::Contract(_) => EXIT_CONTRACT,
            E::Checkpoint(_) | E::Io(_) => EXIT_MISSING,
            E::InvalidArgument(_) | E::Json(_) => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::missing(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
