//! PM-Dedup: secure source-based deduplication with edge servers.
//!
//! Clients chunk and encrypt data with server-aided message-locked
//! encryption, prove ownership against pre-computed challenge pools held by
//! an edge server's enclave, and check duplicates against a tiered index
//! (edge LRU, enclave share-index, cloud full index) before uploading only
//! unique ciphertext.

pub mod chunking;
pub mod client;
pub mod cloud;
pub mod edge;
pub mod error;
pub mod mle;
pub mod par;
pub mod pow;
pub mod select;
pub mod sim;
pub mod types;
pub mod wire;

pub use error::{Error, Result};
pub use par::ExecPolicy;
pub use types::{
    fingerprint_of, CipherChunk, ClientId, EdgeId, FileRecipe, Fingerprint, PlainChunk,
    RecipeEntry, VirtualTime, CIPHER_OVERHEAD,
};
