//! Reads the messages a file mail transport leaves in a directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::SimError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub file: PathBuf,
    pub to: String,
    pub kind: String,
    pub body: String,
}

impl Message {
    pub fn parse(file: PathBuf, text: &str) -> Option<Self> {
        let (head, body) = text.split_once("\r\n\r\n")?;
        let header = |name: &str| {
            head.split("\r\n")
                .find_map(|line| line.strip_prefix(name)?.strip_prefix(": "))
                .map(str::to_owned)
        };
        Some(Message {
            file,
            to: header("To")?,
            kind: header("X-Parcelhub-Kind")?,
            body: body.replace("\r\n", "\n"),
        })
    }

    /// Value of the `token` query parameter in the first link of the body.
    pub fn token(&self) -> Option<&str> {
        let start = self.body.find("token=")? + "token=".len();
        let rest = &self.body[start..];
        let end = rest.find(|c: char| c.is_whitespace() || c == '&').unwrap_or(rest.len());
        Some(&rest[..end]).filter(|t| !t.is_empty())
    }
}

/// A mail directory shared by every simulated account. Each message is
/// handed out once.
pub struct Mailbox {
    dir: PathBuf,
    taken: Mutex<HashSet<PathBuf>>,
}

impl Mailbox {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            taken: Mutex::new(HashSet::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn scan(&self) -> std::io::Result<Vec<Message>> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut found = Vec::new();
        for entry in entries {
            let path = entry?.path();
            if path.extension().is_some_and(|ext| ext == "eml") {
                if let Some(message) = fs::read_to_string(&path).ok().and_then(|t| Message::parse(path, &t)) {
                    found.push(message);
                }
            }
        }
        Ok(found)
    }

    /// Waits for an unclaimed message of `kind` addressed to `to`.
    pub async fn wait_for(&self, to: &str, kind: &str, timeout: Duration) -> Result<Message, SimError> {
        let deadline = Instant::now() + timeout;
        loop {
            let messages = self.scan().map_err(|e| SimError::Mail(e.to_string()))?;
            {
                let mut taken = self.taken.lock();
                let hit = messages
                    .into_iter()
                    .find(|m| m.to == to && m.kind == kind && !taken.contains(&m.file));
                if let Some(message) = hit {
                    taken.insert(message.file.clone());
                    return Ok(message);
                }
            }
            if Instant::now() >= deadline {
                return Err(SimError::Mail(format!(
                    "no {kind} message for {to} in {} within {timeout:?}",
                    self.dir.display()
                )));
            }
            tokio::time::sleep(Duration::from_millis(100)).await;
        }
    }

    /// Waits for a message and returns the token in its link.
    pub async fn wait_token(&self, to: &str, kind: &str, timeout: Duration) -> Result<String, SimError> {
        let message = self.wait_for(to, kind, timeout).await?;
        message
            .token()
            .map(str::to_owned)
            .ok_or_else(|| SimError::Mail(format!("{kind} message for {to} has no token")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "From: noreply@example.org\r\nTo: ann@example.org\r\nSubject: Confirm\r\n\
        Message-ID: <x@parcelhub>\r\nX-Parcelhub-Kind: verify_email\r\n\
        Content-Type: text/plain; charset=utf-8\r\n\r\nWelcome!\r\n\r\n\
        http://localhost/console/verify?token=abc-DEF_12\r\n";

    #[test]
    fn parses_headers_and_token() {
        let m = Message::parse("a.eml".into(), SAMPLE).unwrap();
        assert_eq!(m.to, "ann@example.org");
        assert_eq!(m.kind, "verify_email");
        assert_eq!(m.token(), Some("abc-DEF_12"));
        assert!(Message::parse("b.eml".into(), "no headers").is_none());
    }

    #[tokio::test]
    async fn messages_are_claimed_once() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("1.eml"), SAMPLE).unwrap();
        fs::write(dir.path().join(".2.tmp"), SAMPLE).unwrap();
        let mailbox = Mailbox::new(dir.path());
        let token = mailbox
            .wait_token("ann@example.org", "verify_email", Duration::from_secs(1))
            .await
            .unwrap();
        assert_eq!(token, "abc-DEF_12");
        let again = mailbox
            .wait_for("ann@example.org", "verify_email", Duration::from_millis(200))
            .await;
        assert!(matches!(again, Err(SimError::Mail(_))));
    }
}
