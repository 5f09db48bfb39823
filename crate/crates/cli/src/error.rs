use std::fmt;
use std::process::ExitCode;

use otoar_core::netspec::Diagnostic;
use otoar_core::nn::NnError;
use otoar_core::synth::SynthError;
use otoar_core::train::TrainError;
use otoar_core::VolumeError;
use otoar_vision::features::FeatureError;
use otoar_vision::frame::FrameError;
use otoar_vision::registration::{RegistrationError, TextError};
use otoar_vision::synthcam::SynthcamError;

/// Failure classes with fixed exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags or configuration values; exit 1.
    Usage,
    /// Missing, unreadable or malformed input; exit 2.
    Data,
    /// Degenerate geometry or diverged training; exit 3.
    Numeric,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self { kind: Kind::Usage, message: m.into() }
    }

    pub fn data(m: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: m.into() }
    }

    pub fn numeric(m: impl Into<String>) -> Self {
        Self { kind: Kind::Numeric, message: m.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.kind {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numeric => 3,
        })
    }
}

/// `error[<kind>]: <message>` on one line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Numeric => "numeric",
        };
        let one_line: Vec<&str> = self.message.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        write!(f, "error[{tag}]: {}", one_line.join(" | "))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Self::numeric(e.to_string()),
            TrainError::Config(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<Diagnostic> for CliError {
    fn from(e: Diagnostic) -> Self {
        Self::data(e.to_string())
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        match e {
            RegistrationError::InsufficientPoints(_) | RegistrationError::NonFinite(_) => Self::data(e.to_string()),
            RegistrationError::Degenerate(_) | RegistrationError::AtInfinity(_) => Self::numeric(e.to_string()),
        }
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<FrameError> for CliError {
    fn from(e: FrameError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<SynthcamError> for CliError {
    fn from(e: SynthcamError) -> Self {
        match e {
            SynthcamError::Io(_) => Self::data(e.to_string()),
            _ => Self::usage(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_is_one_line() {
        let e = CliError::data("line 3: bad\n  at col 4\n");
        assert_eq!(e.to_string(), "error[data]: line 3: bad | at col 4");
        assert_eq!(CliError::numeric("x").exit_code(), ExitCode::from(3));
    }
}
