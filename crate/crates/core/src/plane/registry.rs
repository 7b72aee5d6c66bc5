use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;

use super::PlaneError;

/// Device and operator credentials, in separate namespaces.
///
/// Token files are TOML:
///
/// ```toml
/// [devices]
/// alive-01 = "device-secret"
///
/// [operators]
/// control-room = "operator-secret"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    #[serde(default)]
    devices: BTreeMap<String, String>,
    /// principal id -> token
    #[serde(default)]
    operators: BTreeMap<String, String>,
}

pub fn valid_device_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.')
}

fn token_eq(a: &str, b: &str) -> bool {
    a.as_bytes().ct_eq(b.as_bytes()).into()
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlaneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlaneError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, PlaneError> {
        let reg: Registry =
            toml::from_str(text).map_err(|e| PlaneError::Config(format!("token file: {e}")))?;
        reg.validate()?;
        Ok(reg)
    }

    fn validate(&self) -> Result<(), PlaneError> {
        for (id, token) in &self.devices {
            if !valid_device_id(id) {
                return Err(PlaneError::Config(format!("invalid device id {id:?}")));
            }
            if token.is_empty() {
                return Err(PlaneError::Config(format!("empty token for device {id}")));
            }
        }
        if self.operators.values().any(String::is_empty) {
            return Err(PlaneError::Config("empty operator token".into()));
        }
        Ok(())
    }

    pub fn with_device(mut self, id: &str, token: &str) -> Self {
        self.add_device(id, token);
        self
    }

    pub fn with_operator(mut self, principal: &str, token: &str) -> Self {
        self.operators.insert(principal.to_string(), token.to_string());
        self
    }

    pub fn add_device(&mut self, id: &str, token: &str) {
        assert!(valid_device_id(id), "invalid device id {id:?}");
        assert!(!token.is_empty(), "empty device token");
        self.devices.insert(id.to_string(), token.to_string());
    }

    pub fn device_ids(&self) -> impl Iterator<Item = &str> {
        self.devices.keys().map(String::as_str)
    }

    pub fn is_device(&self, id: &str) -> bool {
        self.devices.contains_key(id)
    }

    pub fn check_device(&self, id: &str, token: &str) -> bool {
        // compare against a dummy for unknown ids so timing does not reveal membership
        match self.devices.get(id) {
            Some(t) => token_eq(t, token),
            None => {
                let _ = token_eq(token, "\u{0}unregistered");
                false
            }
        }
    }

    /// The operator principal owning `token`.
    pub fn operator(&self, token: &str) -> Option<&str> {
        let mut found = None;
        for (principal, t) in &self.operators {
            if token_eq(t, token) && found.is_none() {
                found = Some(principal.as_str());
            }
        }
        found
    }
}
