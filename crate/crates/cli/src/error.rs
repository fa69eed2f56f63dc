use std::fmt;

use emissions_audit::audit_protocol::{CodecError, ProtocolError};
use emissions_audit::commitment::CommitmentError;
use emissions_audit::group::GroupError;
use emissions_audit::measurement::MeasurementError;
use emissions_audit::random_list::PickError;
use emissions_audit::sim_harness::HarnessError;
use serde::Serialize;

/// Machine-readable failure category, printed on stderr.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorClass {
    ConfigInvalid,
    Io,
    Parse,
    Crypto,
    LedgerInvalid,
    Protocol,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        CliError {
            class,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::ConfigInvalid, message)
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error_class": self.class, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.class, self.message)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(ErrorClass::Parse, e.to_string())
    }
}

impl From<GroupError> for CliError {
    fn from(e: GroupError) -> Self {
        Self::new(ErrorClass::Crypto, e.to_string())
    }
}

impl From<CommitmentError> for CliError {
    fn from(e: CommitmentError) -> Self {
        let class = match e {
            CommitmentError::Envelope(_) => ErrorClass::Parse,
            _ => ErrorClass::Crypto,
        };
        Self::new(class, e.to_string())
    }
}

impl From<MeasurementError> for CliError {
    fn from(e: MeasurementError) -> Self {
        let class = match e {
            MeasurementError::Parse { .. } => ErrorClass::Parse,
            MeasurementError::Io(_) => ErrorClass::Io,
            MeasurementError::InvalidCycle(_) | MeasurementError::InvalidKey(_) => ErrorClass::ConfigInvalid,
            _ => ErrorClass::LedgerInvalid,
        };
        Self::new(class, e.to_string())
    }
}

impl From<PickError> for CliError {
    fn from(e: PickError) -> Self {
        Self::new(ErrorClass::Protocol, e.to_string())
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        Self::new(ErrorClass::Parse, e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        let class = match e {
            ProtocolError::ConfigInvalid(_) => ErrorClass::ConfigInvalid,
            _ => ErrorClass::Protocol,
        };
        Self::new(class, e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Protocol(p) => p.into(),
            HarnessError::Measurement(m) => m.into(),
            HarnessError::Io { .. } => Self::new(ErrorClass::Io, e.to_string()),
            _ => Self::new(ErrorClass::ConfigInvalid, e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
