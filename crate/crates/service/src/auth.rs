//! Users, credential hashing and the server-side session store.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use somnoline_pipeline::Clock;

pub const SESSION_TTL_H: i64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Technologist,
    Admin,
}

/// A user entry as stored in the users file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub username: String,
    pub center_id: String,
    pub role: Role,
    /// Hex salt prepended to the secret before hashing.
    pub salt: String,
    /// Hex sha256 of salt bytes followed by the secret.
    pub secret_sha256: String,
}

impl User {
    /// Builds an entry with a fresh random salt.
    pub fn new(username: &str, center_id: &str, role: Role, secret: &str) -> Self {
        let salt = hex::encode(rand::rng().random::<[u8; 16]>());
        let secret_sha256 = hash_secret(&salt, secret);
        User {
            username: username.to_owned(),
            center_id: center_id.to_owned(),
            role,
            salt,
            secret_sha256,
        }
    }

    pub fn verify(&self, secret: &str) -> bool {
        constant_time_eq(hash_secret(&self.salt, secret).as_bytes(), self.secret_sha256.as_bytes())
    }
}

pub fn hash_secret(salt_hex: &str, secret: &str) -> String {
    let mut h = Sha256::new();
    h.update(hex::decode(salt_hex).unwrap_or_else(|_| salt_hex.as_bytes().to_vec()));
    h.update(secret.as_bytes());
    hex::encode(h.finalize())
}

pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("invalid credentials")]
    InvalidCredentials,
    #[error("missing or unknown session token")]
    Unauthenticated,
    #[error("session token expired")]
    ExpiredToken,
    #[error("users file: {0}")]
    UsersFile(String),
}

#[derive(Debug, Clone, Default)]
pub struct UserDirectory {
    users: HashMap<String, User>,
}

impl UserDirectory {
    pub fn new(users: Vec<User>) -> Result<Self, AuthError> {
        let mut map = HashMap::new();
        for u in users {
            if u.center_id.trim().is_empty() {
                return Err(AuthError::UsersFile(format!("user {} has no center", u.username)));
            }
            let name = u.username.clone();
            if map.insert(name.clone(), u).is_some() {
                return Err(AuthError::UsersFile(format!("duplicate user {name}")));
            }
        }
        Ok(UserDirectory { users: map })
    }

    /// Reads a JSON array of [`User`] entries.
    pub fn load(path: &Path) -> Result<Self, AuthError> {
        let text = fs::read_to_string(path).map_err(|e| AuthError::UsersFile(format!("{}: {e}", path.display())))?;
        let users: Vec<User> = serde_json::from_str(&text).map_err(|e| AuthError::UsersFile(e.to_string()))?;
        Self::new(users)
    }

    pub fn save(users: &[User], path: &Path) -> io::Result<()> {
        somnoline_pipeline::storage::write_atomic(path, &serde_json::to_vec_pretty(users).expect("users serialize"))
    }

    pub fn get(&self, username: &str) -> Option<&User> {
        self.users.get(username)
    }

    pub fn authenticate(&self, username: &str, secret: &str) -> Result<&User, AuthError> {
        match self.users.get(username) {
            Some(u) if u.verify(secret) => Ok(u),
            _ => Err(AuthError::InvalidCredentials),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub username: String,
    pub expires_at: DateTime<Utc>,
}

/// Opaque random tokens mapped to sessions that expire after a fixed ttl.
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Session>>,
    ttl: Duration,
    clock: Arc<dyn Clock>,
}

impl SessionStore {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self::with_ttl(clock, Duration::hours(SESSION_TTL_H))
    }

    pub fn with_ttl(clock: Arc<dyn Clock>, ttl: Duration) -> Self {
        SessionStore {
            sessions: Mutex::new(HashMap::new()),
            ttl,
            clock,
        }
    }

    pub fn issue(&self, username: &str) -> (String, Session) {
        let token = hex::encode(rand::rng().random::<[u8; 32]>());
        let session = Session {
            username: username.to_owned(),
            expires_at: self.clock.now() + self.ttl,
        };
        let mut sessions = self.sessions.lock().expect("sessions lock");
        let now = self.clock.now();
        sessions.retain(|_, s| s.expires_at > now);
        sessions.insert(token.clone(), session.clone());
        (token, session)
    }

    pub fn resolve(&self, token: &str) -> Result<Session, AuthError> {
        let sessions = self.sessions.lock().expect("sessions lock");
        let session = sessions.get(token).ok_or(AuthError::Unauthenticated)?;
        if session.expires_at <= self.clock.now() {
            return Err(AuthError::ExpiredToken);
        }
        Ok(session.clone())
    }
}
