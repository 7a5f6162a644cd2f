//! Administrator surface: list, inspect, patch and delete stored entities.

use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::accounts::check_name;
use crate::dispatch::DeliveryView;
use crate::domain::{
    AccountId, Courier, CourierId, Delivery, FieldErrors, PersonId, Role, StateChange, TrackingCode, VehicleClass,
};
use crate::error::{Error, Result};
use crate::notifier::{EntryId, OutboxEntry, OutboxKind};
use crate::platform::{Caller, Platform};
use crate::store::{AccountRow, PersonRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdminEntity {
    Accounts,
    Persons,
    Couriers,
    Deliveries,
    Outbox,
}

impl AdminEntity {
    pub const ALL: [AdminEntity; 5] = [
        AdminEntity::Accounts,
        AdminEntity::Persons,
        AdminEntity::Couriers,
        AdminEntity::Deliveries,
        AdminEntity::Outbox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdminEntity::Accounts => "accounts",
            AdminEntity::Persons => "persons",
            AdminEntity::Couriers => "couriers",
            AdminEntity::Deliveries => "deliveries",
            AdminEntity::Outbox => "outbox",
        }
    }
}

impl FromStr for AdminEntity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or(Error::NotFound("entity"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountView {
    pub account_id: AccountId,
    pub email: String,
    pub role: Role,
    pub is_admin: bool,
    pub is_active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdminDeliveryView {
    #[serde(flatten)]
    pub delivery: DeliveryView,
    pub history: Vec<StateChange>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutboxView {
    pub entry_id: EntryId,
    pub kind: OutboxKind,
    pub recipient: String,
    pub queued_at: DateTime<Utc>,
    pub sent_at: Option<DateTime<Utc>>,
    pub attempts: u32,
    pub last_error: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccountPatch {
    is_active: Option<bool>,
    is_admin: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonPatch {
    first_name: Option<String>,
    last_name: Option<String>,
    phone: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CourierPatch {
    is_available: Option<bool>,
    vehicle_class: Option<VehicleClass>,
}

fn to_value(v: impl Serialize) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Internal(e.to_string()))
}

fn parse_patch<T: for<'de> Deserialize<'de>>(patch: Value) -> Result<T> {
    serde_json::from_value(patch).map_err(|e| Error::field("body", &e.to_string()))
}

fn parse_id<T: FromStr>(id: &str, what: &'static str) -> Result<T> {
    id.parse().map_err(|_| Error::NotFound(what))
}

impl Platform {
    fn account_view(&self, row: &AccountRow) -> Result<AccountView> {
        let a = self.open_account(row)?;
        Ok(AccountView {
            account_id: a.account_id,
            email: a.email,
            role: a.role,
            is_admin: a.is_admin,
            is_active: a.is_active,
        })
    }

    fn outbox_view(&self, entry: &OutboxEntry) -> Result<OutboxView> {
        Ok(OutboxView {
            entry_id: entry.entry_id,
            kind: entry.kind,
            recipient: self.cipher.decrypt_str(&entry.recipient)?,
            queued_at: entry.queued_at,
            sent_at: entry.sent_at,
            attempts: entry.attempts,
            last_error: entry.last_error.clone(),
        })
    }

    fn admin_delivery(d: &Delivery) -> AdminDeliveryView {
        AdminDeliveryView {
            delivery: DeliveryView::from(d),
            history: d.history.clone(),
        }
    }

    pub fn admin_list(&self, caller: &Caller, entity: AdminEntity) -> Result<Vec<Value>> {
        self.require_admin(caller)?;
        self.store.read(|t| match entity {
            AdminEntity::Accounts => t.accounts.values().map(|r| to_value(self.account_view(r)?)).collect(),
            AdminEntity::Persons => t.persons.values().map(|r| to_value(r.open(&self.cipher)?)).collect(),
            AdminEntity::Couriers => t.couriers.values().map(to_value).collect(),
            AdminEntity::Deliveries => t
                .deliveries
                .values()
                .map(|d| to_value(Self::admin_delivery(d)))
                .collect(),
            AdminEntity::Outbox => t.outbox.values().map(|e| to_value(self.outbox_view(e)?)).collect(),
        })
    }

    pub fn admin_get(&self, caller: &Caller, entity: AdminEntity, id: &str) -> Result<Value> {
        self.require_admin(caller)?;
        match entity {
            AdminEntity::Accounts => {
                let id: AccountId = parse_id(id, "account")?;
                let row = self.store.get::<AccountRow>(&id).ok_or(Error::NotFound("account"))?;
                to_value(self.account_view(&row)?)
            }
            AdminEntity::Persons => {
                let id: PersonId = parse_id(id, "person")?;
                let row = self.store.get::<PersonRow>(&id).ok_or(Error::NotFound("person"))?;
                to_value(row.open(&self.cipher)?)
            }
            AdminEntity::Couriers => {
                let id: CourierId = parse_id(id, "courier")?;
                to_value(self.store.get::<Courier>(&id).ok_or(Error::NotFound("courier"))?)
            }
            AdminEntity::Deliveries => {
                let code = TrackingCode::parse(id).ok_or(Error::UnknownDelivery)?;
                let d = self.find_delivery(&code).ok_or(Error::UnknownDelivery)?;
                to_value(Self::admin_delivery(&d))
            }
            AdminEntity::Outbox => {
                let id = EntryId(parse_id(id, "outbox entry")?);
                let entry = self
                    .store
                    .get::<OutboxEntry>(&id)
                    .ok_or(Error::NotFound("outbox entry"))?;
                to_value(self.outbox_view(&entry)?)
            }
        }
    }

    pub fn admin_patch(&self, caller: &Caller, entity: AdminEntity, id: &str, patch: Value) -> Result<Value> {
        self.require_admin(caller)?;
        match entity {
            AdminEntity::Accounts => {
                let id: AccountId = parse_id(id, "account")?;
                let patch: AccountPatch = parse_patch(patch)?;
                let row = self.store.transact(|t, batch| {
                    let mut row = t.accounts.get(&id).ok_or(Error::NotFound("account"))?.clone();
                    if let Some(active) = patch.is_active {
                        row.is_active = active;
                    }
                    if let Some(admin) = patch.is_admin {
                        row.is_admin = admin;
                    }
                    if row.is_admin && !row.is_active {
                        return Err(Error::field("is_active", "administrators must be active"));
                    }
                    batch.put(row.clone());
                    Ok(row)
                })?;
                to_value(self.account_view(&row)?)
            }
            AdminEntity::Persons => {
                let id: PersonId = parse_id(id, "person")?;
                let patch: PersonPatch = parse_patch(patch)?;
                let mut errors = FieldErrors::new();
                if let Some(name) = &patch.first_name {
                    check_name(&mut errors, "first_name", name);
                }
                if let Some(name) = &patch.last_name {
                    check_name(&mut errors, "last_name", name);
                }
                if !errors.is_empty() {
                    return Err(Error::Validation(errors));
                }
                let person = self.store.transact(|t, batch| {
                    let row = t.persons.get(&id).ok_or(Error::NotFound("person"))?;
                    let mut person = row.open(&self.cipher)?;
                    if let Some(name) = patch.first_name {
                        person.first_name = name.trim().to_owned();
                    }
                    if let Some(name) = patch.last_name {
                        person.last_name = name.trim().to_owned();
                    }
                    if let Some(phone) = patch.phone {
                        person.phone = Some(phone.trim().to_owned()).filter(|p| !p.is_empty());
                    }
                    batch.put(PersonRow::seal(&person, &self.cipher));
                    Ok::<_, Error>(person)
                })?;
                to_value(person)
            }
            AdminEntity::Couriers => {
                let id: CourierId = parse_id(id, "courier")?;
                let patch: CourierPatch = parse_patch(patch)?;
                let courier = self
                    .store
                    .conditional_update::<Courier>(
                        &id,
                        |_| true,
                        |c| {
                            if let Some(available) = patch.is_available {
                                c.is_available = available;
                            }
                            if let Some(class) = patch.vehicle_class {
                                c.vehicle_class = class;
                            }
                        },
                    )
                    .map_err(|_| Error::NotFound("courier"))?;
                to_value(courier)
            }
            AdminEntity::Deliveries | AdminEntity::Outbox => Err(Error::field(
                "entity",
                "read-only; state changes go through the courier flow",
            )),
        }
    }

    /// Deliveries (with their route and picture) and outbox entries can be
    /// removed; people and accounts are deactivated instead.
    pub fn admin_delete(&self, caller: &Caller, entity: AdminEntity, id: &str) -> Result<()> {
        self.require_admin(caller)?;
        match entity {
            AdminEntity::Deliveries => {
                let code = TrackingCode::parse(id).ok_or(Error::UnknownDelivery)?;
                self.store.transact(|t, batch| {
                    let d = t
                        .deliveries
                        .values()
                        .find(|d| d.tracking_code == code)
                        .ok_or(Error::UnknownDelivery)?;
                    batch.delete::<Delivery>(d.delivery_id);
                    if t.routes.contains_key(&d.delivery_id) {
                        batch.delete::<crate::domain::Route>(d.delivery_id);
                    }
                    if let Some(picture) = d.item.picture {
                        batch.delete::<crate::store::PictureRow>(picture);
                    }
                    Ok(())
                })
            }
            AdminEntity::Outbox => {
                let id = EntryId(parse_id(id, "outbox entry")?);
                if self.store.get::<OutboxEntry>(&id).is_none() {
                    return Err(Error::NotFound("outbox entry"));
                }
                Ok(self.store.delete::<OutboxEntry>(id)?)
            }
            _ => Err(Error::field(
                "entity",
                "cannot be deleted; deactivate the account instead",
            )),
        }
    }

    /// Makes an existing account an active administrator. Used by the
    /// operator tooling, not exposed over HTTP.
    pub fn grant_admin(&self, email: &str) -> Result<AccountId> {
        let index = self.cipher.blind_index(email);
        self.store.transact(|t, batch| {
            let mut row = t
                .accounts
                .values()
                .find(|a| a.email_index == index)
                .ok_or(Error::NotFound("account"))?
                .clone();
            row.is_admin = true;
            row.is_active = true;
            batch.put(row.clone());
            Ok(row.account_id)
        })
    }
}
