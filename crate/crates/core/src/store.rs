//! Embedded single-file store.
//!
//! All tables live in memory behind one `RwLock`. Every committed batch of
//! writes is appended to the log file as one JSON line before it is applied,
//! so a crash can lose at most the batch being written, never half of one.
//! Reopening replays the log; a truncated final line is discarded.
//!
//! Personal fields are sealed with [`FieldCipher`] before they reach a table,
//! so neither memory snapshots nor the log hold plaintext names or emails.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::auth::{ActionTokenRow, RenewNonce};
use crate::crypto::{BlindIndex, CryptoError, EncryptedField, FieldCipher};
use crate::domain::{
    Account, AccountId, Courier, CourierId, Delivery, DeliveryId, Person, PersonId, PictureId, Role, Route,
};
use crate::notifier::{EntryId, OutboxEntry};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown {kind} {id}")]
    UnknownEntity { kind: &'static str, id: String },
    #[error("precondition failed")]
    PreconditionFailed,
    #[error("storage i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("store {0} is in use by another process")]
    Locked(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountRow {
    pub account_id: AccountId,
    pub email: EncryptedField,
    pub email_index: BlindIndex,
    pub password_hash: String,
    pub role: Role,
    pub is_admin: bool,
    pub is_active: bool,
}

impl AccountRow {
    pub fn seal(account: &Account, cipher: &FieldCipher) -> Self {
        Self {
            account_id: account.account_id,
            email: cipher.encrypt_str(&account.email),
            email_index: cipher.blind_index(&account.email),
            password_hash: account.password_hash.clone(),
            role: account.role,
            is_admin: account.is_admin,
            is_active: account.is_active,
        }
    }

    pub fn open(&self, cipher: &FieldCipher) -> Result<Account, CryptoError> {
        Ok(Account {
            account_id: self.account_id,
            email: cipher.decrypt_str(&self.email)?,
            password_hash: self.password_hash.clone(),
            role: self.role,
            is_admin: self.is_admin,
            is_active: self.is_active,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRow {
    pub person_id: PersonId,
    pub first_name: EncryptedField,
    pub last_name: EncryptedField,
    pub email: EncryptedField,
    pub email_index: BlindIndex,
    pub phone: Option<EncryptedField>,
    pub account_id: Option<AccountId>,
}

impl PersonRow {
    pub fn seal(person: &Person, cipher: &FieldCipher) -> Self {
        Self {
            person_id: person.person_id,
            first_name: cipher.encrypt_str(&person.first_name),
            last_name: cipher.encrypt_str(&person.last_name),
            email: cipher.encrypt_str(&person.email),
            email_index: cipher.blind_index(&person.email),
            phone: person.phone.as_deref().map(|p| cipher.encrypt_str(p)),
            account_id: person.account_id,
        }
    }

    pub fn open(&self, cipher: &FieldCipher) -> Result<Person, CryptoError> {
        Ok(Person {
            person_id: self.person_id,
            first_name: cipher.decrypt_str(&self.first_name)?,
            last_name: cipher.decrypt_str(&self.last_name)?,
            email: cipher.decrypt_str(&self.email)?,
            phone: self.phone.as_ref().map(|p| cipher.decrypt_str(p)).transpose()?,
            account_id: self.account_id,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PictureRow {
    pub picture_id: PictureId,
    pub content_type: String,
    #[serde(with = "bytes_b64")]
    pub bytes: Vec<u8>,
}

/// Named exclusive lease, e.g. the single outbox drainer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub name: String,
    pub holder: Uuid,
    pub expires_at: DateTime<Utc>,
}

/// An entity kind stored in its own table.
pub trait Entity: Clone + Serialize + DeserializeOwned + Send + Sync + 'static {
    type Id: Ord + Clone + Debug + Send + Sync;
    const KIND: &'static str;

    fn id(&self) -> Self::Id;
    fn table(tables: &Tables) -> &BTreeMap<Self::Id, Self>;
    fn table_mut(tables: &mut Tables) -> &mut BTreeMap<Self::Id, Self>;
    fn into_row(self) -> Row;
    fn key(id: Self::Id) -> RowKey;
}

macro_rules! entities {
    ($($field:ident: $variant:ident($ty:ty, $id:ty) = $kind:literal, |$e:ident| $id_expr:expr;)*) => {
        /// In-memory tables, one per entity kind.
        #[derive(Clone, Debug, Default)]
        pub struct Tables {
            $(pub $field: BTreeMap<$id, $ty>,)*
        }

        /// One stored entity, tagged with its kind. This is also the
        /// line format of `dump` and `load`.
        #[derive(Clone, Debug, Serialize, Deserialize)]
        #[serde(tag = "kind", content = "row", rename_all = "snake_case")]
        pub enum Row {
            $($variant($ty),)*
        }

        #[derive(Clone, Debug, Serialize, Deserialize)]
        #[serde(tag = "kind", content = "id", rename_all = "snake_case")]
        pub enum RowKey {
            $($variant($id),)*
        }

        $(
            impl Entity for $ty {
                type Id = $id;
                const KIND: &'static str = $kind;

                fn id(&self) -> $id {
                    let $e = self;
                    $id_expr
                }
                fn table(tables: &Tables) -> &BTreeMap<$id, Self> {
                    &tables.$field
                }
                fn table_mut(tables: &mut Tables) -> &mut BTreeMap<$id, Self> {
                    &mut tables.$field
                }
                fn into_row(self) -> Row {
                    Row::$variant(self)
                }
                fn key(id: $id) -> RowKey {
                    RowKey::$variant(id)
                }
            }
        )*

        impl Tables {
            fn apply(&mut self, op: Op) {
                match op {
                    $(Op::Put(Row::$variant(row)) => {
                        self.$field.insert(row.id(), row);
                    })*
                    $(Op::Delete(RowKey::$variant(id)) => {
                        self.$field.remove(&id);
                    })*
                }
            }

            fn rows(&self) -> impl Iterator<Item = Row> + '_ {
                std::iter::empty()
                    $(.chain(self.$field.values().cloned().map(Row::$variant)))*
            }

            pub fn counts(&self) -> BTreeMap<&'static str, usize> {
                BTreeMap::from([$(($kind, self.$field.len()),)*])
            }
        }
    };
}

entities! {
    accounts: Account(AccountRow, AccountId) = "account", |r| r.account_id;
    persons: Person(PersonRow, PersonId) = "person", |r| r.person_id;
    couriers: Courier(Courier, CourierId) = "courier", |r| r.courier_id;
    deliveries: Delivery(Delivery, DeliveryId) = "delivery", |r| r.delivery_id;
    routes: Route(Route, DeliveryId) = "route", |r| r.delivery_id;
    outbox: Outbox(OutboxEntry, EntryId) = "outbox", |r| r.entry_id;
    action_tokens: ActionToken(ActionTokenRow, String) = "action_token", |r| r.digest.clone();
    renew_nonces: RenewNonce(RenewNonce, String) = "renew_nonce", |r| r.nonce.clone();
    pictures: Picture(PictureRow, PictureId) = "picture", |r| r.picture_id;
    leases: Lease(Lease, String) = "lease", |r| r.name.clone();
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum Op {
    Put(Row),
    Delete(RowKey),
}

#[derive(Serialize, Deserialize)]
struct Commit {
    ops: Vec<Op>,
}

/// Writes staged by a transaction; applied only if the transaction succeeds.
#[derive(Default)]
pub struct Batch {
    ops: Vec<Op>,
}

impl Batch {
    pub fn put<E: Entity>(&mut self, entity: E) {
        self.ops.push(Op::Put(entity.into_row()));
    }

    pub fn delete<E: Entity>(&mut self, id: E::Id) {
        self.ops.push(Op::Delete(E::key(id)));
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

pub struct Store {
    tables: RwLock<Tables>,
    // Only written while the tables write lock is held.
    log: Option<Mutex<LogFile>>,
    /// Exclusive lock on `<path>.lock`, held while the store is open.
    _lock: Option<File>,
}

struct LogFile {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            tables: RwLock::new(Tables::default()),
            log: None,
            _lock: None,
        }
    }

    /// Opens (or creates) a store file, replays it, then compacts it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut lock_path = path.clone().into_os_string();
        lock_path.push(".lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)?;
        lock.try_lock().map_err(|e| match e {
            std::fs::TryLockError::WouldBlock => StoreError::Locked(path.clone()),
            std::fs::TryLockError::Error(e) => StoreError::Io(e),
        })?;
        let mut tables = Tables::default();
        if path.exists() {
            replay(&path, &mut tables)?;
        }
        write_snapshot(&path, &tables)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Self {
            tables: RwLock::new(tables),
            log: Some(Mutex::new(LogFile {
                path,
                writer: BufWriter::new(file),
            })),
            _lock: Some(lock),
        })
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.log.as_ref().map(|log| log.lock().path.clone())
    }

    pub fn read<T>(&self, f: impl FnOnce(&Tables) -> T) -> T {
        f(&self.tables.read())
    }

    pub fn get<E: Entity>(&self, id: &E::Id) -> Option<E> {
        E::table(&self.tables.read()).get(id).cloned()
    }

    pub fn list<E: Entity>(&self, filter: impl Fn(&E) -> bool) -> Vec<E> {
        E::table(&self.tables.read())
            .values()
            .filter(|e| filter(e))
            .cloned()
            .collect()
    }

    pub fn find<E: Entity>(&self, filter: impl Fn(&E) -> bool) -> Option<E> {
        E::table(&self.tables.read()).values().find(|e| filter(e)).cloned()
    }

    pub fn put<E: Entity>(&self, entity: E) -> Result<(), StoreError> {
        self.transact(|_, batch| {
            batch.put(entity);
            Ok::<_, StoreError>(())
        })
    }

    pub fn delete<E: Entity>(&self, id: E::Id) -> Result<(), StoreError> {
        self.transact(|tables, batch| {
            if !E::table(tables).contains_key(&id) {
                return Err(unknown::<E>(&id));
            }
            batch.delete::<E>(id);
            Ok(())
        })
    }

    /// Applies `mutate` iff `predicate` holds at commit time.
    pub fn conditional_update<E: Entity>(
        &self,
        id: &E::Id,
        predicate: impl FnOnce(&E) -> bool,
        mutate: impl FnOnce(&mut E),
    ) -> Result<E, StoreError> {
        self.transact(|tables, batch| {
            let current = E::table(tables).get(id).ok_or_else(|| unknown::<E>(id))?;
            if !predicate(current) {
                return Err(StoreError::PreconditionFailed);
            }
            let mut next = current.clone();
            mutate(&mut next);
            batch.put(next.clone());
            Ok(next)
        })
    }

    /// Runs `f` under the write lock. The staged batch is logged and applied
    /// as one unit when `f` returns `Ok`, and discarded otherwise.
    pub fn transact<T, Err>(&self, f: impl FnOnce(&Tables, &mut Batch) -> Result<T, Err>) -> Result<T, Err>
    where
        Err: From<StoreError>,
    {
        let mut tables = self.tables.write();
        let mut batch = Batch::default();
        let out = f(&tables, &mut batch)?;
        if batch.is_empty() {
            return Ok(out);
        }
        if let Some(log) = &self.log {
            let commit = Commit { ops: batch.ops };
            let mut log = log.lock();
            write_line(&mut log.writer, &commit).map_err(StoreError::from)?;
            log.writer.flush().map_err(StoreError::from)?;
            batch.ops = commit.ops;
        }
        for op in batch.ops {
            tables.apply(op);
        }
        Ok(out)
    }

    /// Emits every entity as line-delimited JSON.
    pub fn dump(&self, out: &mut impl Write) -> Result<usize, StoreError> {
        let tables = self.tables.read();
        let mut n = 0;
        for row in tables.rows() {
            write_line(out, &row)?;
            n += 1;
        }
        Ok(n)
    }

    /// Inserts rows produced by [`Store::dump`] as a single commit.
    pub fn load(&self, input: impl BufRead) -> Result<usize, StoreError> {
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        let n = rows.len();
        self.transact(|_, batch| {
            batch.ops.extend(rows.into_iter().map(Op::Put));
            Ok::<_, StoreError>(())
        })?;
        Ok(n)
    }

    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        self.tables.read().counts()
    }
}

fn unknown<E: Entity>(id: &E::Id) -> StoreError {
    StoreError::UnknownEntity {
        kind: E::KIND,
        id: format!("{id:?}"),
    }
}

fn write_line(out: &mut impl Write, value: &impl Serialize) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

fn replay(path: &Path, tables: &mut Tables) -> Result<(), StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Commit>(&line) {
            Ok(commit) => commit.ops.into_iter().for_each(|op| tables.apply(op)),
            // A torn final write; everything before it is intact.
            Err(e) if lines.peek().is_none() && e.is_eof() => break,
            Err(e) => {
                return Err(StoreError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(())
}

fn write_snapshot(path: &Path, tables: &Tables) -> Result<(), StoreError> {
    let tmp = path.with_extension("compact");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        let ops: Vec<Op> = tables.rows().map(Op::Put).collect();
        if !ops.is_empty() {
            write_line(&mut out, &Commit { ops })?;
        }
        out.flush()?;
        out.get_ref().sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

mod bytes_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        STANDARD
            .decode(String::deserialize(d)?)
            .map_err(serde::de::Error::custom)
    }
}
