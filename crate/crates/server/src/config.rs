use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use parcelhub_core::auth::PasswordHasher;
use parcelhub_core::crypto::FieldCipher;
use parcelhub_core::notifier::{FileTransport, SmtpTransport, Transport};
use parcelhub_core::store::Store;
use parcelhub_core::{Platform, PlatformConfig};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: SocketAddr,
    pub public_url: String,
    /// Log file of the embedded store; in-memory when absent.
    pub store_path: Option<PathBuf>,
    /// Base64, at least 32 bytes.
    pub signing_key: String,
    pub encryption: EncryptionConfig,
    pub mail: MailConfig,
    pub password: PasswordConfig,
    pub drain_interval_secs: u64,
    pub sweep_interval_secs: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncryptionConfig {
    pub key_id: String,
    /// Base64 AES-256 key.
    pub field_key: String,
    /// Base64 HMAC key for the blind index.
    pub index_key: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MailTransport {
    File,
    Smtp,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MailConfig {
    pub transport: MailTransport,
    pub dir: PathBuf,
    pub from: String,
    pub smtp_host: String,
    pub smtp_port: u16,
    pub smtp_user: Option<String>,
    pub smtp_password: Option<String>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PasswordConfig {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".parse().expect("valid address"),
            public_url: "http://localhost:8080".to_owned(),
            store_path: None,
            signing_key: String::new(),
            encryption: EncryptionConfig::default(),
            mail: MailConfig::default(),
            password: PasswordConfig::default(),
            drain_interval_secs: 5,
            sweep_interval_secs: 5,
        }
    }
}

impl Default for EncryptionConfig {
    fn default() -> Self {
        Self {
            key_id: "k1".to_owned(),
            field_key: String::new(),
            index_key: String::new(),
        }
    }
}

impl Default for MailConfig {
    fn default() -> Self {
        Self {
            transport: MailTransport::File,
            dir: PathBuf::from("mail"),
            from: "parcelhub <no-reply@localhost>".to_owned(),
            smtp_host: "localhost".to_owned(),
            smtp_port: 25,
            smtp_user: None,
            smtp_password: None,
        }
    }
}

impl Default for PasswordConfig {
    fn default() -> Self {
        // OWASP minimum for Argon2id.
        Self {
            memory_kib: 19_456,
            iterations: 2,
            parallelism: 1,
        }
    }
}

fn decode_key(name: &str, value: &str, min_len: usize) -> Result<Vec<u8>, ConfigError> {
    let bytes = STANDARD
        .decode(value.trim())
        .map_err(|_| ConfigError::Invalid(format!("{name} is not valid base64")))?;
    if bytes.len() < min_len {
        return Err(ConfigError::Invalid(format!(
            "{name} must decode to at least {min_len} bytes"
        )));
    }
    Ok(bytes)
}

impl Config {
    /// Reads `path` if given, then applies `PARCELHUB_*` environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_owned(),
                    source,
                })?;
                toml::from_str(&text)?
            }
            None => Config::default(),
        };
        config.apply_env(|key| std::env::var(key).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let bad = |key: &str| ConfigError::Invalid(format!("{key} has an invalid value"));
        if let Some(v) = var("PARCELHUB_LISTEN") {
            self.listen = v.parse().map_err(|_| bad("PARCELHUB_LISTEN"))?;
        }
        if let Some(v) = var("PARCELHUB_PUBLIC_URL") {
            self.public_url = v;
        }
        if let Some(v) = var("PARCELHUB_STORE_PATH") {
            self.store_path = Some(v.into());
        }
        if let Some(v) = var("PARCELHUB_SIGNING_KEY") {
            self.signing_key = v;
        }
        if let Some(v) = var("PARCELHUB_KEY_ID") {
            self.encryption.key_id = v;
        }
        if let Some(v) = var("PARCELHUB_FIELD_KEY") {
            self.encryption.field_key = v;
        }
        if let Some(v) = var("PARCELHUB_INDEX_KEY") {
            self.encryption.index_key = v;
        }
        if let Some(v) = var("PARCELHUB_MAIL_TRANSPORT") {
            self.mail.transport = match v.as_str() {
                "file" => MailTransport::File,
                "smtp" => MailTransport::Smtp,
                _ => return Err(bad("PARCELHUB_MAIL_TRANSPORT")),
            };
        }
        if let Some(v) = var("PARCELHUB_MAIL_DIR") {
            self.mail.dir = v.into();
        }
        if let Some(v) = var("PARCELHUB_SMTP_HOST") {
            self.mail.smtp_host = v;
        }
        if let Some(v) = var("PARCELHUB_SMTP_PORT") {
            self.mail.smtp_port = v.parse().map_err(|_| bad("PARCELHUB_SMTP_PORT"))?;
        }
        if let Some(v) = var("PARCELHUB_SMTP_USER") {
            self.mail.smtp_user = Some(v);
        }
        if let Some(v) = var("PARCELHUB_SMTP_PASSWORD") {
            self.mail.smtp_password = Some(v);
        }
        Ok(())
    }

    pub fn cipher(&self) -> Result<FieldCipher, ConfigError> {
        let field = decode_key("encryption.field_key", &self.encryption.field_key, 32)?;
        let index = decode_key("encryption.index_key", &self.encryption.index_key, 32)?;
        FieldCipher::new(self.encryption.key_id.clone(), &field, &index)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn open_store(&self) -> Result<Store, ConfigError> {
        match &self.store_path {
            Some(path) => Store::open(path).map_err(|e| ConfigError::Invalid(format!("store: {e}"))),
            None => Ok(Store::in_memory()),
        }
    }

    pub fn platform(&self, store: Arc<Store>) -> Result<Platform, ConfigError> {
        let signing_key = decode_key("signing_key", &self.signing_key, 32)?;
        let p = self.password;
        Ok(Platform::builder(store, self.cipher()?, &signing_key)
            .hasher(PasswordHasher::new(p.memory_kib, p.iterations, p.parallelism))
            .config(PlatformConfig {
                public_url: self.public_url.clone(),
                ..PlatformConfig::default()
            })
            .build())
    }

    pub fn transport(&self) -> Result<Box<dyn Transport>, ConfigError> {
        let m = &self.mail;
        Ok(match m.transport {
            MailTransport::File => Box::new(
                FileTransport::new(&m.dir, &m.from)
                    .map_err(|e| ConfigError::Invalid(format!("mail dir {}: {e}", m.dir.display())))?,
            ),
            MailTransport::Smtp => {
                let credentials = m.smtp_user.clone().zip(m.smtp_password.clone());
                Box::new(
                    SmtpTransport::new(&m.smtp_host, m.smtp_port, &m.from, credentials)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                )
            }
        })
    }

    pub fn drain_interval(&self) -> Duration {
        Duration::from_secs(self.drain_interval_secs.max(1))
    }

    pub fn sweep_interval(&self) -> Duration {
        Duration::from_secs(self.sweep_interval_secs.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_env() {
        let mut config: Config = toml::from_str(
            r#"
            listen = "0.0.0.0:9000"
            signing_key = "c2VjcmV0LXNlY3JldC1zZWNyZXQtc2VjcmV0LXNlY3JldA=="
            [mail]
            transport = "smtp"
            smtp_port = 2525
            "#,
        )
        .unwrap();
        assert_eq!(config.listen.port(), 9000);
        assert_eq!(config.mail.transport, MailTransport::Smtp);
        assert_eq!(config.password.memory_kib, 19_456);

        config
            .apply_env(|k| match k {
                "PARCELHUB_LISTEN" => Some("127.0.0.1:1234".into()),
                "PARCELHUB_MAIL_TRANSPORT" => Some("file".into()),
                _ => None,
            })
            .unwrap();
        assert_eq!(config.listen.port(), 1234);
        assert_eq!(config.mail.transport, MailTransport::File);
        assert!(config
            .apply_env(|k| (k == "PARCELHUB_SMTP_PORT").then(|| "x".into()))
            .is_err());
    }

    #[test]
    fn keys_are_checked() {
        let mut config = Config::default();
        assert!(config.cipher().is_err());
        config.encryption.field_key = STANDARD.encode([1u8; 32]);
        config.encryption.index_key = STANDARD.encode([2u8; 16]);
        assert!(config.cipher().is_err());
        config.encryption.index_key = STANDARD.encode([2u8; 32]);
        assert!(config.cipher().is_ok());
        assert!(toml::from_str::<Config>("unknown = 1").is_err());
    }
}
