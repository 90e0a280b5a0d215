//! Token accounts. A token is `<account_id>.<secret>`; only a salted SHA-256
//! of the secret is stored.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Collector,
    Operator,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Collector => "COLLECTOR",
            Role::Operator => "OPERATOR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: String,
    pub display_name: String,
    pub role: Role,
    pub salt: String,
    pub token_hash: String,
    pub created_ms: i64,
}

fn hash_secret(salt: &str, secret: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(b":");
    h.update(secret.as_bytes());
    hex::encode(h.finalize())
}

/// Creates an account with fresh random id, salt and secret. Returns the
/// account and the plaintext token, which is not retained anywhere.
pub fn issue(display_name: &str, role: Role, now_ms: i64) -> (Account, String) {
    let account_id = hex::encode(rand::random::<[u8; 8]>());
    let salt = hex::encode(rand::random::<[u8; 16]>());
    let secret = hex::encode(rand::random::<[u8; 32]>());
    let account = Account {
        token_hash: hash_secret(&salt, &secret),
        account_id: account_id.clone(),
        display_name: display_name.to_string(),
        role,
        salt,
        created_ms: now_ms,
    };
    (account, format!("{account_id}.{secret}"))
}

/// Splits a token into `(account_id, secret)`.
pub fn split_token(token: &str) -> Option<(&str, &str)> {
    token.split_once('.').filter(|(id, secret)| !id.is_empty() && !secret.is_empty())
}

impl Account {
    pub fn verify(&self, secret: &str) -> bool {
        let candidate = hash_secret(&self.salt, secret);
        // compare without early exit
        candidate.len() == self.token_hash.len()
            && candidate.bytes().zip(self.token_hash.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
    }
}

/// Constant-time equality for shared secrets from configuration.
pub fn secret_eq(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn issued_token_verifies() {
        let (acct, token) = issue("alice", Role::Collector, 0);
        let (id, secret) = split_token(&token).unwrap();
        assert_eq!(id, acct.account_id);
        assert!(acct.verify(secret));
        assert!(!acct.verify("nope"));
        assert!(!token.contains(&acct.token_hash));
    }

    #[test]
    fn salts_differ() {
        let (a, _) = issue("x", Role::Operator, 0);
        let (b, _) = issue("x", Role::Operator, 0);
        assert_ne!(a.salt, b.salt);
        assert_ne!(a.account_id, b.account_id);
    }

    #[test]
    fn malformed_tokens() {
        assert_eq!(split_token("abc"), None);
        assert_eq!(split_token(".x"), None);
        assert_eq!(split_token("a."), None);
    }
}
