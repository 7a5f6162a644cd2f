use crate::auth::AuthError;
use crate::crypto::CryptoError;
use crate::domain::{DeliveryState, FieldErrors};
use crate::notifier::NotifyError;
use crate::store::StoreError;

/// Broad class of a failure; the HTTP layer maps each to one status code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Auth,
    Forbidden,
    NotFound,
    Conflict,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input")]
    Validation(FieldErrors),
    #[error("authentication required")]
    Unauthenticated,
    #[error("access token expired")]
    TokenExpired,
    #[error("token invalid, log in again")]
    TokenInvalid,
    #[error("wrong email or password")]
    InvalidCredentials,
    #[error("account is not active")]
    InactiveAccount,
    #[error("administrator rights required")]
    AdminOnly,
    #[error("courier registration required")]
    NotACourier,
    #[error("delivery is assigned to another courier")]
    NotAssignedCourier,
    #[error("connection may not publish")]
    NotPublisher,
    #[error("cannot move a delivery from {from} to {to}")]
    ForbiddenTransition { from: DeliveryState, to: DeliveryState },
    #[error("delivery is no longer ready")]
    NotReady,
    #[error("operation not allowed while delivery is {0}")]
    WrongState(DeliveryState),
    #[error("unknown delivery")]
    UnknownDelivery,
    #[error("unknown tracking code")]
    UnknownTrackingCode,
    #[error("{0} not found")]
    NotFound(&'static str),
    #[error("email address already registered")]
    EmailTaken,
    #[error("account is already registered as a courier")]
    AlreadyCourier,
    #[error("link expired")]
    LinkExpired,
    #[error("link already used")]
    LinkUsed,
    #[error("invalid link")]
    LinkInvalid,
    #[error("location timestamps must increase")]
    NonMonotonicTimestamp,
    #[error("coordinates out of range")]
    InvalidCoordinates,
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn field(name: &str, message: &str) -> Self {
        Error::Validation(FieldErrors::from([(name.to_owned(), message.to_owned())]))
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation_error",
            Error::Unauthenticated => "unauthenticated",
            Error::TokenExpired => "token_expired",
            Error::TokenInvalid => "token_invalid",
            Error::InvalidCredentials => "invalid_credentials",
            Error::InactiveAccount => "inactive_account",
            Error::AdminOnly => "admin_only",
            Error::NotACourier => "not_a_courier",
            Error::NotAssignedCourier => "not_assigned_courier",
            Error::NotPublisher => "not_publisher",
            Error::ForbiddenTransition { .. } => "forbidden_transition",
            Error::NotReady => "not_ready",
            Error::WrongState(_) => "wrong_state",
            Error::UnknownDelivery => "unknown_delivery",
            Error::UnknownTrackingCode => "unknown_tracking_code",
            Error::NotFound(_) => "not_found",
            Error::EmailTaken => "email_taken",
            Error::AlreadyCourier => "already_courier",
            Error::LinkExpired => "link_expired",
            Error::LinkUsed => "link_used",
            Error::LinkInvalid => "link_invalid",
            Error::NonMonotonicTimestamp => "non_monotonic_timestamp",
            Error::InvalidCoordinates => "invalid_coordinates",
            Error::Internal(_) => "internal",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_)
            | Error::LinkExpired
            | Error::LinkUsed
            | Error::LinkInvalid
            | Error::InvalidCoordinates => ErrorKind::Validation,
            Error::Unauthenticated | Error::TokenExpired | Error::TokenInvalid | Error::InvalidCredentials => {
                ErrorKind::Auth
            }
            Error::InactiveAccount
            | Error::AdminOnly
            | Error::NotACourier
            | Error::NotAssignedCourier
            | Error::NotPublisher => ErrorKind::Forbidden,
            Error::UnknownDelivery | Error::UnknownTrackingCode | Error::NotFound(_) => ErrorKind::NotFound,
            Error::ForbiddenTransition { .. }
            | Error::NotReady
            | Error::WrongState(_)
            | Error::EmailTaken
            | Error::AlreadyCourier
            | Error::NonMonotonicTimestamp => ErrorKind::Conflict,
            Error::Internal(_) => ErrorKind::Internal,
        }
    }

    pub fn fields(&self) -> Option<&FieldErrors> {
        match self {
            Error::Validation(fields) => Some(fields),
            _ => None,
        }
    }
}

impl From<AuthError> for Error {
    fn from(err: AuthError) -> Self {
        match err {
            AuthError::PolicyViolation => Error::field("password", &err.to_string()),
            AuthError::InactiveAccount => Error::InactiveAccount,
            AuthError::Expired => Error::TokenExpired,
            AuthError::InvalidSignature | AuthError::Malformed | AuthError::Consumed | AuthError::UnknownToken => {
                Error::TokenInvalid
            }
            AuthError::WrongPurpose => Error::LinkInvalid,
            AuthError::MalformedHash => Error::Internal(err.to_string()),
            AuthError::Store(e) => e.into(),
        }
    }
}

impl From<StoreError> for Error {
    fn from(err: StoreError) -> Self {
        Error::Internal(err.to_string())
    }
}

impl From<CryptoError> for Error {
    fn from(err: CryptoError) -> Self {
        Error::Internal(err.to_string())
    }
}

impl From<NotifyError> for Error {
    fn from(err: NotifyError) -> Self {
        match err {
            NotifyError::InvalidRecipient => Error::field("email", "invalid email address"),
            other => Error::Internal(other.to_string()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
