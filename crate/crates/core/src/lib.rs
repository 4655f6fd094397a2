//! A consent-enforcing personal data store.
//!
//! Every record lives in a typed store wrapped in a membrane of
//! consent, retention and sensitivity metadata. All processing is
//! registered through a gateway, executed by a mediated pipeline that
//! filters by consent and minimizes visible fields per purpose, and
//! audited in a hash-chained log. Subjects can export everything held
//! about them and have it crypto-erased under an authority key.

pub mod audit;
pub mod crypto;
pub mod ids;
pub mod membrane;
pub mod pdtype;
pub mod pipeline;
pub mod proclang;
pub mod registry;
pub mod rights;
pub mod runtime;
pub mod store;

pub use ids::{CopyGroupId, PdRef};
