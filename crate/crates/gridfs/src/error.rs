//! Error codes shared by every service and the wire protocol.
//!
//! The names below travel verbatim in the `error` field of wire responses,
//! so client and server agree on them by construction.

use serde::{Deserialize, Serialize};

/// Every error a grid operation can report, by wire name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    NotFound,
    PermissionDenied,
    AlreadyExists,
    DuplicateGuid,
    SizeMismatch,
    DuplicateReplica,
    IsDirectory,
    NoSpace,
    NotAllocated,
    QuotaExceeded,
    BackendFailure,
    RangeError,
    ProducerFailure,
    BadHandle,
    NonSequentialWrite,
    SizeValidationFailed,
    RegistrationFailed,
    TransportError,
    Unreachable,
    AlreadyReplicated,
    UnknownSe,
    TicketInvalid,
    Redirect,
    NoFreshReports,
    BadRequest,
}

impl ErrorCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCode::NotFound => "NotFound",
            ErrorCode::PermissionDenied => "PermissionDenied",
            ErrorCode::AlreadyExists => "AlreadyExists",
            ErrorCode::DuplicateGuid => "DuplicateGuid",
            ErrorCode::SizeMismatch => "SizeMismatch",
            ErrorCode::DuplicateReplica => "DuplicateReplica",
            ErrorCode::IsDirectory => "IsDirectory",
            ErrorCode::NoSpace => "NoSpace",
            ErrorCode::NotAllocated => "NotAllocated",
            ErrorCode::QuotaExceeded => "QuotaExceeded",
            ErrorCode::BackendFailure => "BackendFailure",
            ErrorCode::RangeError => "RangeError",
            ErrorCode::ProducerFailure => "ProducerFailure",
            ErrorCode::BadHandle => "BadHandle",
            ErrorCode::NonSequentialWrite => "NonSequentialWrite",
            ErrorCode::SizeValidationFailed => "SizeValidationFailed",
            ErrorCode::RegistrationFailed => "RegistrationFailed",
            ErrorCode::TransportError => "TransportError",
            ErrorCode::Unreachable => "Unreachable",
            ErrorCode::AlreadyReplicated => "AlreadyReplicated",
            ErrorCode::UnknownSe => "UnknownSe",
            ErrorCode::TicketInvalid => "TicketInvalid",
            ErrorCode::Redirect => "Redirect",
            ErrorCode::NoFreshReports => "NoFreshReports",
            ErrorCode::BadRequest => "BadRequest",
        }
    }

    /// Process exit code for the CLI.  0 is success; 1 and 2 stay free
    /// for generic and usage errors; grid error codes start at 10.
    pub fn exit_code(&self) -> i32 {
        *self as i32 + 10
    }

    pub fn parse(name: &str) -> Option<ErrorCode> {
        use ErrorCode::*;
        let all = [
            NotFound,
            PermissionDenied,
            AlreadyExists,
            DuplicateGuid,
            SizeMismatch,
            DuplicateReplica,
            IsDirectory,
            NoSpace,
            NotAllocated,
            QuotaExceeded,
            BackendFailure,
            RangeError,
            ProducerFailure,
            BadHandle,
            NonSequentialWrite,
            SizeValidationFailed,
            RegistrationFailed,
            TransportError,
            Unreachable,
            AlreadyReplicated,
            UnknownSe,
            TicketInvalid,
            Redirect,
            NoFreshReports,
            BadRequest,
        ];
        all.into_iter().find(|c| c.as_str() == name)
    }
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An operation failure: a wire error code plus a human-readable message.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{code}: {msg}")]
pub struct GridError {
    pub code: ErrorCode,
    pub msg: String,
}

impl GridError {
    pub fn new(code: ErrorCode, msg: impl Into<String>) -> Self {
        GridError { code, msg: msg.into() }
    }

    pub fn code(&self) -> ErrorCode {
        self.code
    }
}

pub type GridResult<T> = Result<T, GridError>;

/// Shorthand constructors, used all over the service code.
macro_rules! ctor {
    ($fn_name:ident, $code:ident) => {
        pub fn $fn_name(msg: impl Into<String>) -> GridError {
            GridError::new(ErrorCode::$code, msg)
        }
    };
}

impl GridError {
    ctor!(not_found, NotFound);
    ctor!(permission_denied, PermissionDenied);
    ctor!(already_exists, AlreadyExists);
    ctor!(duplicate_guid, DuplicateGuid);
    ctor!(size_mismatch, SizeMismatch);
    ctor!(duplicate_replica, DuplicateReplica);
    ctor!(is_directory, IsDirectory);
    ctor!(no_space, NoSpace);
    ctor!(not_allocated, NotAllocated);
    ctor!(quota_exceeded, QuotaExceeded);
    ctor!(backend_failure, BackendFailure);
    ctor!(range_error, RangeError);
    ctor!(producer_failure, ProducerFailure);
    ctor!(bad_handle, BadHandle);
    ctor!(non_sequential_write, NonSequentialWrite);
    ctor!(size_validation_failed, SizeValidationFailed);
    ctor!(registration_failed, RegistrationFailed);
    ctor!(transport_error, TransportError);
    ctor!(unreachable, Unreachable);
    ctor!(already_replicated, AlreadyReplicated);
    ctor!(unknown_se, UnknownSe);
    ctor!(ticket_invalid, TicketInvalid);
    ctor!(no_fresh_reports, NoFreshReports);
    ctor!(bad_request, BadRequest);
}

#[cfg(test)]
impl ErrorCode {
    fn parse_index(i: usize) -> Option<ErrorCode> {
        use ErrorCode::*;
        [
            NotFound,
            PermissionDenied,
            AlreadyExists,
            DuplicateGuid,
            SizeMismatch,
            DuplicateReplica,
            IsDirectory,
            NoSpace,
            NotAllocated,
            QuotaExceeded,
            BackendFailure,
            RangeError,
            ProducerFailure,
            BadHandle,
            NonSequentialWrite,
            SizeValidationFailed,
            RegistrationFailed,
            TransportError,
            Unreachable,
            AlreadyReplicated,
            UnknownSe,
            TicketInvalid,
            Redirect,
            NoFreshReports,
            BadRequest,
        ]
        .get(i)
        .copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for code in [
            ErrorCode::NotFound,
            ErrorCode::NonSequentialWrite,
            ErrorCode::Redirect,
            ErrorCode::BadRequest,
        ] {
            assert_eq!(ErrorCode::parse(code.as_str()), Some(code));
        }
        assert_eq!(ErrorCode::parse("NoSuchError"), None);
    }

    #[test]
    fn exit_codes_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        let mut name = std::collections::BTreeSet::new();
        let mut i = 0;
        while let Some(code) = ErrorCode::parse_index(i) {
            assert!(seen.insert(code.exit_code()));
            assert!(name.insert(code.as_str()));
            i += 1;
        }
        assert!(i >= 25);
    }
}

