//! Opaque identifiers handed out instead of personal data.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

/// The only handle to a stored record that ever leaves the store. Carries
/// the type name and a 128-bit random id, never field values. Stable for
/// the record's lifetime, including after erasure.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PdRef {
    pub type_name: String,
    pub id: u128,
}

impl PdRef {
    pub fn fresh(type_name: &str) -> PdRef {
        PdRef {
            type_name: type_name.to_string(),
            id: random_u128(),
        }
    }
}

impl fmt::Display for PdRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:032x}", self.type_name, self.id)
    }
}

impl FromStr for PdRef {
    type Err = String;

    fn from_str(s: &str) -> Result<PdRef, String> {
        let (type_name, id) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("malformed record reference `{s}`"))?;
        if type_name.is_empty() || id.len() != 32 {
            return Err(format!("malformed record reference `{s}`"));
        }
        let id = u128::from_str_radix(id, 16)
            .map_err(|_| format!("malformed record reference `{s}`"))?;
        Ok(PdRef {
            type_name: type_name.to_string(),
            id,
        })
    }
}

/// Identifier shared by every copy of the same piece of personal data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CopyGroupId(pub u128);

impl CopyGroupId {
    pub fn fresh() -> CopyGroupId {
        CopyGroupId(random_u128())
    }
}

impl fmt::Display for CopyGroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl FromStr for CopyGroupId {
    type Err = String;

    fn from_str(s: &str) -> Result<CopyGroupId, String> {
        u128::from_str_radix(s, 16)
            .map(CopyGroupId)
            .map_err(|_| format!("malformed copy group id `{s}`"))
    }
}

fn random_u128() -> u128 {
    let mut bytes = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut bytes);
    u128::from_be_bytes(bytes)
}
