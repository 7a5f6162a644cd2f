//! Registration, login, profile and password flows.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::auth::{create_action_token, redeem_action_token, ActionPurpose, AuthError, TokenPair};
use crate::domain::{Account, AccountId, Courier, CourierId, FieldErrors, Person, PersonId, Role, VehicleClass};
use crate::error::{Error, Result};
use crate::notifier::{self, is_plausible_email, OutboxKind, Payload};
use crate::platform::{Caller, Platform};
use crate::store::{AccountRow, Batch, PersonRow};

const MAX_NAME_LEN: usize = 100;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Registration {
    pub email: String,
    pub password: String,
    pub first_name: String,
    pub last_name: String,
    pub phone: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProfilePatch {
    pub first_name: Option<String>,
    pub last_name: Option<String>,
    pub phone: Option<String>,
    /// Setting a new password requires the current one.
    pub password: Option<String>,
    pub current_password: Option<String>,
}

/// What an account holder sees about themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub account_id: AccountId,
    pub email: String,
    pub role: Role,
    pub is_admin: bool,
    pub is_active: bool,
    pub first_name: String,
    pub last_name: String,
    pub phone: Option<String>,
    pub courier: Option<Courier>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CourierPatch {
    pub is_available: Option<bool>,
    pub vehicle_class: Option<VehicleClass>,
}

pub(crate) fn check_name(errors: &mut FieldErrors, field: &str, value: &str) {
    let value = value.trim();
    if value.is_empty() {
        errors.insert(field.to_owned(), "required".to_owned());
    } else if value.chars().count() > MAX_NAME_LEN {
        errors.insert(field.to_owned(), format!("at most {MAX_NAME_LEN} characters"));
    }
}

pub(crate) fn check_email(errors: &mut FieldErrors, field: &str, value: &str) {
    if !is_plausible_email(value) {
        errors.insert(field.to_owned(), "invalid email address".to_owned());
    }
}

impl Platform {
    /// Creates an inactive account and queues the verification email.
    pub fn register(&self, form: Registration) -> Result<Profile> {
        let mut errors = FieldErrors::new();
        check_email(&mut errors, "email", &form.email);
        check_name(&mut errors, "first_name", &form.first_name);
        check_name(&mut errors, "last_name", &form.last_name);
        let password_hash = match self.hasher.hash_password(&form.password) {
            Ok(hash) => Some(hash),
            Err(AuthError::PolicyViolation) => {
                errors.insert("password".to_owned(), AuthError::PolicyViolation.to_string());
                None
            }
            Err(e) => return Err(e.into()),
        };
        let Some(password_hash) = password_hash.filter(|_| errors.is_empty()) else {
            return Err(Error::Validation(errors));
        };

        let email = form.email.trim().to_owned();
        let index = self.cipher.blind_index(&email);
        let account = Account {
            account_id: AccountId::random(),
            email: email.clone(),
            password_hash,
            role: Role::User,
            is_admin: false,
            is_active: false,
        };
        self.store.transact(|tables, batch| {
            if tables.accounts.values().any(|a| a.email_index == index) {
                return Err(Error::EmailTaken);
            }
            // A receiver who was sent parcels before registering keeps the
            // same Person record, so those parcels show up in their history.
            let person_id = tables
                .persons
                .values()
                .find(|p| p.account_id.is_none() && p.email_index == index)
                .map(|p| p.person_id)
                .unwrap_or_else(PersonId::random);
            let person = Person {
                person_id,
                first_name: form.first_name.trim().to_owned(),
                last_name: form.last_name.trim().to_owned(),
                email: email.clone(),
                phone: form.phone.clone().filter(|p| !p.trim().is_empty()),
                account_id: Some(account.account_id),
            };
            batch.put(AccountRow::seal(&account, &self.cipher));
            batch.put(PersonRow::seal(&person, &self.cipher));
            self.stage_verification(batch, &account)?;
            Ok(self.profile_from(&account, Some(&person), None))
        })
    }

    fn stage_verification(&self, batch: &mut Batch, account: &Account) -> Result<()> {
        let token = create_action_token(account.account_id, ActionPurpose::VerifyEmail, self.now());
        let payload = Payload::from([("link".to_owned(), self.link("/console/verify", &token.token))]);
        batch.put(token.row);
        batch.put(notifier::queue(
            &self.cipher,
            OutboxKind::VerifyEmail,
            &account.email,
            payload,
            self.now(),
        )?);
        Ok(())
    }

    /// Queues a fresh verification email for an inactive account. Unknown
    /// and already active addresses are ignored without telling the caller.
    pub fn resend_verification(&self, email: &str) -> Result<()> {
        let index = self.cipher.blind_index(email);
        self.store.transact(|tables, batch| {
            if let Some(row) = tables
                .accounts
                .values()
                .find(|a| a.email_index == index && !a.is_active)
            {
                let account = self.open_account(row)?;
                self.stage_verification(batch, &account)?;
            }
            Ok(())
        })
    }

    pub fn verify_email(&self, token: &str) -> Result<AccountId> {
        let now = self.now();
        self.store
            .transact(|tables, batch| {
                redeem_action_token(tables, batch, token, ActionPurpose::VerifyEmail, now, |a| {
                    a.is_active = true
                })
            })
            .map_err(link_error)
    }

    /// Checks credentials and issues an access/renew token pair.
    pub fn login(&self, email: &str, password: &str) -> Result<TokenPair> {
        let index = self.cipher.blind_index(email);
        let row = self
            .store
            .find::<AccountRow>(|a| a.email_index == index)
            .ok_or(Error::InvalidCredentials)?;
        if !self.hasher.verify_password(password, &row.password_hash)? {
            return Err(Error::InvalidCredentials);
        }
        let account = self.open_account(&row)?;
        let (pair, nonce) = self.tokens.issue_token_pair(&account, self.now())?;
        self.store.put(nonce)?;
        Ok(pair)
    }

    /// Any failure means the client must log in again.
    pub fn renew(&self, renew_token: &str) -> Result<TokenPair> {
        self.tokens
            .renew_tokens(&self.store, renew_token, self.now())
            .map_err(|e| match e {
                AuthError::Store(e) => Error::from(e),
                _ => Error::TokenInvalid,
            })
    }

    pub fn profile(&self, caller: &Caller) -> Result<Profile> {
        let account = self.account(caller.account_id)?;
        let person = self.store.read(|t| self.person_of(t, account.account_id))?;
        let courier = self.store.find::<Courier>(|c| c.account_id == account.account_id);
        Ok(self.profile_from(&account, person.as_ref(), courier))
    }

    fn profile_from(&self, account: &Account, person: Option<&Person>, courier: Option<Courier>) -> Profile {
        Profile {
            account_id: account.account_id,
            email: account.email.clone(),
            role: account.role,
            is_admin: account.is_admin,
            is_active: account.is_active,
            first_name: person.map(|p| p.first_name.clone()).unwrap_or_default(),
            last_name: person.map(|p| p.last_name.clone()).unwrap_or_default(),
            phone: person.and_then(|p| p.phone.clone()),
            courier,
        }
    }

    pub fn update_profile(&self, caller: &Caller, patch: ProfilePatch) -> Result<Profile> {
        let mut account = self.active_account(caller)?;
        let mut errors = FieldErrors::new();
        if let Some(name) = &patch.first_name {
            check_name(&mut errors, "first_name", name);
        }
        if let Some(name) = &patch.last_name {
            check_name(&mut errors, "last_name", name);
        }
        let mut new_hash = None;
        if let Some(password) = &patch.password {
            let current = patch.current_password.as_deref().unwrap_or_default();
            if !self.hasher.verify_password(current, &account.password_hash)? {
                errors.insert("current_password".to_owned(), "does not match".to_owned());
            }
            match self.hasher.hash_password(password) {
                Ok(hash) => new_hash = Some(hash),
                Err(AuthError::PolicyViolation) => {
                    errors.insert("password".to_owned(), AuthError::PolicyViolation.to_string());
                }
                Err(e) => return Err(e.into()),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        if let Some(hash) = new_hash {
            account.password_hash = hash;
        }
        self.store.transact(|tables, batch| {
            let mut person = self
                .person_of(tables, account.account_id)?
                .ok_or(Error::NotFound("person"))?;
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
            batch.put(AccountRow::seal(&account, &self.cipher));
            Ok::<_, Error>(())
        })?;
        self.profile(caller)
    }

    /// Emails a reset link if the address belongs to an account.
    pub fn request_password_reset(&self, email: &str) -> Result<()> {
        let index = self.cipher.blind_index(email);
        let now = self.now();
        self.store.transact(|tables, batch| {
            if let Some(row) = tables.accounts.values().find(|a| a.email_index == index) {
                let account = self.open_account(row)?;
                let token = create_action_token(account.account_id, ActionPurpose::ResetPassword, now);
                let payload = Payload::from([("link".to_owned(), self.link("/console/reset", &token.token))]);
                batch.put(token.row);
                batch.put(notifier::queue(
                    &self.cipher,
                    OutboxKind::ResetPassword,
                    &account.email,
                    payload,
                    now,
                )?);
            }
            Ok(())
        })
    }

    /// Burns a reset token and sets the new password in one commit.
    pub fn confirm_password_reset(&self, token: &str, new_password: &str) -> Result<()> {
        let hash = self.hasher.hash_password(new_password)?;
        let now = self.now();
        self.store
            .transact(|tables, batch| {
                redeem_action_token(tables, batch, token, ActionPurpose::ResetPassword, now, |a| {
                    a.password_hash = hash
                })
            })
            .map_err(link_error)?;
        Ok(())
    }

    /// Adds a courier profile to the caller's account and switches its role.
    pub fn register_courier(&self, caller: &Caller, vehicle_class: VehicleClass) -> Result<Courier> {
        self.active_account(caller)?;
        let today: NaiveDate = self.now().date_naive();
        self.store.transact(|tables, batch| {
            if tables.couriers.values().any(|c| c.account_id == caller.account_id) {
                return Err(Error::AlreadyCourier);
            }
            let mut account = tables
                .accounts
                .get(&caller.account_id)
                .ok_or(Error::Unauthenticated)?
                .clone();
            account.role = Role::Courier;
            let courier = Courier {
                courier_id: CourierId::random(),
                account_id: caller.account_id,
                vehicle_class,
                registered_on: today,
                is_available: true,
                last_location: None,
            };
            batch.put(account);
            batch.put(courier.clone());
            Ok(courier)
        })
    }

    pub fn update_courier(&self, caller: &Caller, patch: CourierPatch) -> Result<Courier> {
        let courier = self.courier_of(caller.account_id)?;
        Ok(self.store.conditional_update::<Courier>(
            &courier.courier_id,
            |_| true,
            |c| {
                if let Some(available) = patch.is_available {
                    c.is_available = available;
                }
                if let Some(class) = patch.vehicle_class {
                    c.vehicle_class = class;
                }
            },
        )?)
    }
}

fn link_error(err: AuthError) -> Error {
    match err {
        AuthError::Expired => Error::LinkExpired,
        AuthError::Consumed => Error::LinkUsed,
        AuthError::UnknownToken | AuthError::WrongPurpose => Error::LinkInvalid,
        other => other.into(),
    }
}
