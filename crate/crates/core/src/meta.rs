use serde::{Deserialize, Serialize};

/// Provenance stamped into every artifact a run writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
}
