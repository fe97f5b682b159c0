use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::{FieldHasher, Hash32};

/// The five contracts every transaction is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contract {
    Identity,
    ServiceRegistry,
    FederatedLearning,
    Llm,
    Nft,
}

impl Contract {
    pub const ALL: [Contract; 5] =
        [Contract::Identity, Contract::ServiceRegistry, Contract::FederatedLearning, Contract::Llm, Contract::Nft];

    pub fn as_str(self) -> &'static str {
        match self {
            Contract::Identity => "identity",
            Contract::ServiceRegistry => "service_registry",
            Contract::FederatedLearning => "federated_learning",
            Contract::Llm => "llm",
            Contract::Nft => "nft",
        }
    }
}

impl fmt::Display for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Contract {
    type Err = super::TxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Contract::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| super::TxError::UnknownContract(s.to_string()))
    }
}

/// A signed-off unit of work for one contract.
///
/// `tx_id` is SHA-256 over the framed fields
/// `contract ‖ action ‖ payload ‖ submitter ‖ nonce` (see [`FieldHasher`]).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Hash32,
    pub contract: Contract,
    pub action: String,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub submitter: String,
    pub nonce: u64,
}

impl Transaction {
    pub fn new(contract: Contract, action: &str, payload: Vec<u8>, submitter: &str, nonce: u64) -> Self {
        let mut tx = Transaction {
            tx_id: Hash32::ZERO,
            contract,
            action: action.to_string(),
            payload,
            submitter: submitter.to_string(),
            nonce,
        };
        tx.tx_id = tx.compute_id();
        tx
    }

    /// Build with a canonically encoded payload.
    pub fn with_payload<T: Serialize>(contract: Contract, action: &str, payload: &T, submitter: &str, nonce: u64) -> Self {
        let bytes = crate::canonical::to_vec(payload).expect("contract payloads are serializable");
        Self::new(contract, action, bytes, submitter, nonce)
    }

    pub fn compute_id(&self) -> Hash32 {
        let mut h = FieldHasher::new();
        h.str(self.contract.as_str()).str(&self.action).bytes(&self.payload).str(&self.submitter).u64(self.nonce);
        h.finish()
    }

    pub fn id_is_valid(&self) -> bool {
        self.compute_id() == self.tx_id
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
