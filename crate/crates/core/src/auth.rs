//! Password hashing and the token lifecycle.
//!
//! Login yields an access token and a renew token. The access token rides on
//! every request and is checked statelessly. When it expires the client trades
//! the renew token for a fresh pair; each renew token carries a nonce that is
//! recorded in the store and burned on first use, so a replayed renew token is
//! refused and the client has to log in again.

use std::collections::HashSet;

use argon2::password_hash::{PasswordHash, PasswordHasher as _, PasswordVerifier as _, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use jsonwebtoken::{errors::ErrorKind, DecodingKey, EncodingKey, Header, Validation};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Account, AccountId, Role};
use crate::store::{AccountRow, Batch, Store, StoreError, Tables};

pub const MIN_PASSWORD_LEN: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum AuthError {
    #[error("password must be at least {MIN_PASSWORD_LEN} characters")]
    PolicyViolation,
    #[error("malformed password hash")]
    MalformedHash,
    #[error("account is not active")]
    InactiveAccount,
    #[error("token expired")]
    Expired,
    #[error("token signature is invalid")]
    InvalidSignature,
    #[error("malformed token")]
    Malformed,
    #[error("token already used")]
    Consumed,
    #[error("token issued for a different purpose")]
    WrongPurpose,
    #[error("unknown token")]
    UnknownToken,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Argon2id with configurable cost.
#[derive(Clone)]
pub struct PasswordHasher {
    argon: Argon2<'static>,
}

impl PasswordHasher {
    /// `memory_kib` / `iterations` / `parallelism` as in the Argon2 RFC.
    pub fn new(memory_kib: u32, iterations: u32, parallelism: u32) -> Self {
        let params = Params::new(memory_kib, iterations, parallelism, None).expect("valid argon2 parameters");
        Self {
            argon: Argon2::new(Algorithm::Argon2id, Version::V0x13, params),
        }
    }

    /// Cheap parameters for tests and simulations. Never use in production.
    pub fn fast_insecure() -> Self {
        Self::new(256, 1, 1)
    }

    pub fn hash_password(&self, plain: &str) -> Result<String, AuthError> {
        if plain.chars().count() < MIN_PASSWORD_LEN {
            return Err(AuthError::PolicyViolation);
        }
        let salt = SaltString::generate(&mut OsRng);
        let hash = self
            .argon
            .hash_password(plain.as_bytes(), &salt)
            .map_err(|_| AuthError::MalformedHash)?;
        Ok(hash.to_string())
    }

    /// Parameters are read from the hash string, not from `self`.
    pub fn verify_password(&self, plain: &str, hash: &str) -> Result<bool, AuthError> {
        let parsed = PasswordHash::new(hash).map_err(|_| AuthError::MalformedHash)?;
        match self.argon.verify_password(plain.as_bytes(), &parsed) {
            Ok(()) => Ok(true),
            Err(argon2::password_hash::Error::Password) => Ok(false),
            Err(_) => Err(AuthError::MalformedHash),
        }
    }
}

impl Default for PasswordHasher {
    fn default() -> Self {
        // OWASP baseline for Argon2id.
        Self::new(19 * 1024, 2, 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TokenType {
    Access,
    Renew,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessClaims {
    pub sub: AccountId,
    pub role: Role,
    pub iat: i64,
    pub exp: i64,
    jti: String,
    typ: TokenType,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RenewClaims {
    sub: AccountId,
    iat: i64,
    exp: i64,
    nonce: String,
    typ: TokenType,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub access_token: String,
    pub renew_token: String,
    pub access_expires_at: DateTime<Utc>,
    pub renew_expires_at: DateTime<Utc>,
}

/// Server-side record of an outstanding renew token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenewNonce {
    pub nonce: String,
    pub account_id: AccountId,
    pub expires_at: DateTime<Utc>,
    pub consumed: bool,
}

#[derive(Clone)]
pub struct TokenIssuer {
    encoding: EncodingKey,
    decoding: DecodingKey,
    access_ttl: Duration,
    renew_ttl: Duration,
}

impl TokenIssuer {
    pub const ACCESS_TTL: Duration = Duration::minutes(15);
    pub const RENEW_TTL: Duration = Duration::days(14);

    pub fn new(signing_key: &[u8]) -> Self {
        Self::with_lifetimes(signing_key, Self::ACCESS_TTL, Self::RENEW_TTL)
    }

    pub fn with_lifetimes(signing_key: &[u8], access_ttl: Duration, renew_ttl: Duration) -> Self {
        assert!(access_ttl < renew_ttl, "access tokens must expire before renew tokens");
        Self {
            encoding: EncodingKey::from_secret(signing_key),
            decoding: DecodingKey::from_secret(signing_key),
            access_ttl,
            renew_ttl,
        }
    }

    /// Mints a pair. The returned nonce record must be stored for the renew
    /// token to be redeemable.
    pub fn issue_token_pair(
        &self,
        account: &Account,
        now: DateTime<Utc>,
    ) -> Result<(TokenPair, RenewNonce), AuthError> {
        if !account.is_active {
            return Err(AuthError::InactiveAccount);
        }
        let iat = now.timestamp();
        let access_exp = iat + self.access_ttl.num_seconds();
        let renew_exp = iat + self.renew_ttl.num_seconds();
        let access = AccessClaims {
            sub: account.account_id,
            role: account.role,
            iat,
            exp: access_exp,
            jti: random_token(12),
            typ: TokenType::Access,
        };
        let nonce = random_token(24);
        let renew = RenewClaims {
            sub: account.account_id,
            iat,
            exp: renew_exp,
            nonce: nonce.clone(),
            typ: TokenType::Renew,
        };
        let pair = TokenPair {
            access_token: self.sign(&access),
            renew_token: self.sign(&renew),
            access_expires_at: timestamp(access_exp),
            renew_expires_at: timestamp(renew_exp),
        };
        let record = RenewNonce {
            nonce,
            account_id: account.account_id,
            expires_at: timestamp(renew_exp),
            consumed: false,
        };
        Ok((pair, record))
    }

    /// Stateless check: signature, token type and `now < exp`.
    pub fn verify_access(&self, token: &str, now: DateTime<Utc>) -> Result<AccessClaims, AuthError> {
        let claims: AccessClaims = self.decode(token)?;
        if claims.typ != TokenType::Access {
            return Err(AuthError::Malformed);
        }
        if now.timestamp() >= claims.exp {
            return Err(AuthError::Expired);
        }
        Ok(claims)
    }

    /// Trades a renew token for a new pair, burning its nonce. Of any number
    /// of concurrent attempts with one token, exactly one succeeds.
    pub fn renew_tokens(&self, store: &Store, token: &str, now: DateTime<Utc>) -> Result<TokenPair, AuthError> {
        let claims: RenewClaims = self.decode(token)?;
        if claims.typ != TokenType::Renew {
            return Err(AuthError::Malformed);
        }
        if now.timestamp() >= claims.exp {
            return Err(AuthError::Expired);
        }
        store.transact(|tables, batch| {
            let record = tables.renew_nonces.get(&claims.nonce).ok_or(AuthError::UnknownToken)?;
            if record.consumed {
                return Err(AuthError::Consumed);
            }
            let row = tables.accounts.get(&claims.sub).ok_or(AuthError::UnknownToken)?;
            // Email is not needed to mint tokens, so the row stays sealed.
            let account = Account {
                account_id: row.account_id,
                email: String::new(),
                password_hash: String::new(),
                role: row.role,
                is_admin: row.is_admin,
                is_active: row.is_active,
            };
            let (pair, fresh) = self.issue_token_pair(&account, now)?;
            batch.put(RenewNonce {
                consumed: true,
                ..record.clone()
            });
            batch.put(fresh);
            Ok(pair)
        })
    }

    fn sign(&self, claims: &impl Serialize) -> String {
        jsonwebtoken::encode(&Header::default(), claims, &self.encoding).expect("claims serialize to JSON")
    }

    fn decode<T: serde::de::DeserializeOwned>(&self, token: &str) -> Result<T, AuthError> {
        let mut validation = Validation::default();
        // Expiry is checked against the injected clock instead.
        validation.validate_exp = false;
        validation.required_spec_claims = HashSet::new();
        jsonwebtoken::decode::<T>(token, &self.decoding, &validation)
            .map(|data| data.claims)
            .map_err(|e| match e.kind() {
                ErrorKind::InvalidSignature => AuthError::InvalidSignature,
                _ => AuthError::Malformed,
            })
    }
}

/// Removes expired renew nonces. Returns how many were dropped.
pub fn purge_expired_nonces(store: &Store, now: DateTime<Utc>) -> Result<usize, StoreError> {
    store.transact(|tables, batch| {
        let stale: Vec<String> = tables
            .renew_nonces
            .values()
            .filter(|n| n.expires_at <= now)
            .map(|n| n.nonce.clone())
            .collect();
        for nonce in &stale {
            batch.delete::<RenewNonce>(nonce.clone());
        }
        Ok(stale.len())
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionPurpose {
    VerifyEmail,
    ResetPassword,
}

/// Single-use emailed token. Only a SHA-256 digest of the token is stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTokenRow {
    pub digest: String,
    pub purpose: ActionPurpose,
    pub account_id: AccountId,
    pub expires_at: DateTime<Utc>,
    pub consumed: bool,
}

pub const ACTION_TOKEN_TTL: Duration = Duration::hours(24);

pub struct ActionToken {
    pub token: String,
    pub row: ActionTokenRow,
}

pub fn create_action_token(account_id: AccountId, purpose: ActionPurpose, now: DateTime<Utc>) -> ActionToken {
    let token = random_token(32);
    let row = ActionTokenRow {
        digest: digest(&token),
        purpose,
        account_id,
        expires_at: now + ACTION_TOKEN_TTL,
        consumed: false,
    };
    ActionToken { token, row }
}

/// Validates and burns an action token inside an open transaction, applying
/// `effect` to the owning account in the same commit.
pub fn redeem_action_token(
    tables: &Tables,
    batch: &mut Batch,
    token: &str,
    purpose: ActionPurpose,
    now: DateTime<Utc>,
    effect: impl FnOnce(&mut AccountRow),
) -> Result<AccountId, AuthError> {
    let row = tables
        .action_tokens
        .get(&digest(token))
        .ok_or(AuthError::UnknownToken)?;
    if row.purpose != purpose {
        return Err(AuthError::WrongPurpose);
    }
    if row.consumed {
        return Err(AuthError::Consumed);
    }
    if now >= row.expires_at {
        return Err(AuthError::Expired);
    }
    let mut account = tables
        .accounts
        .get(&row.account_id)
        .ok_or(AuthError::UnknownToken)?
        .clone();
    effect(&mut account);
    batch.put(ActionTokenRow {
        consumed: true,
        ..row.clone()
    });
    batch.put(account);
    Ok(row.account_id)
}

/// Burns an action token. A verify-email token also activates the account.
pub fn consume_action_token(
    store: &Store,
    token: &str,
    purpose: ActionPurpose,
    now: DateTime<Utc>,
) -> Result<AccountId, AuthError> {
    store.transact(|tables, batch| {
        redeem_action_token(tables, batch, token, purpose, now, |account| {
            if purpose == ActionPurpose::VerifyEmail {
                account.is_active = true;
            }
        })
    })
}

fn random_token(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    OsRng.fill_bytes(&mut buf);
    URL_SAFE_NO_PAD.encode(buf)
}

fn digest(token: &str) -> String {
    let hash = Sha256::digest(token.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

fn timestamp(secs: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(secs, 0).expect("timestamp in range")
}
