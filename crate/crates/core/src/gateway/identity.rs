use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a sensor reveals about itself in reply to `WHO`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SensorIdentity {
    pub uid: String,
    pub model: String,
    pub manufacturer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("uid {0:?} is not 16 hex characters")]
    BadUid(String),
    #[error("identity field {0} is empty")]
    Empty(&'static str),
}

impl SensorIdentity {
    pub fn new(
        uid: impl Into<String>,
        model: impl Into<String>,
        manufacturer: impl Into<String>,
    ) -> Result<Self, IdentityError> {
        let id = SensorIdentity { uid: uid.into(), model: model.into(), manufacturer: manufacturer.into() };
        id.validate()?;
        Ok(id)
    }

    pub fn validate(&self) -> Result<(), IdentityError> {
        if self.uid.len() != 16 || !self.uid.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(IdentityError::BadUid(self.uid.clone()));
        }
        if self.model.is_empty() {
            return Err(IdentityError::Empty("model"));
        }
        if self.manufacturer.is_empty() {
            return Err(IdentityError::Empty("manufacturer"));
        }
        Ok(())
    }
}

impl fmt::Display for SensorIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} by {})", self.uid, self.model, self.manufacturer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_fields() {
        assert!(SensorIdentity::new("a1b2c3d4e5f60708", "WaspTemp3", "libelium").is_ok());
        assert_eq!(
            SensorIdentity::new("a1b2", "WaspTemp3", "libelium"),
            Err(IdentityError::BadUid("a1b2".into()))
        );
        assert_eq!(
            SensorIdentity::new("a1b2c3d4e5f6070z", "m", "x"),
            Err(IdentityError::BadUid("a1b2c3d4e5f6070z".into()))
        );
        assert_eq!(SensorIdentity::new("a1b2c3d4e5f60708", "", "x"), Err(IdentityError::Empty("model")));
        assert_eq!(SensorIdentity::new("a1b2c3d4e5f60708", "m", ""), Err(IdentityError::Empty("manufacturer")));
    }
}
