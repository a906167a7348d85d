//! Serialized agent state: named 64-bit float arrays plus scalars, written
//! as JSON. serde_json prints floats with shortest round-trip formatting, so
//! save/load is bit-exact for finite values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::AgentError;
use crate::rng::splitmix64;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub agent_kind: String,
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub ints: BTreeMap<String, i64>,
    #[serde(default)]
    pub arrays: BTreeMap<String, Vec<f64>>,
}

impl AgentCheckpoint {
    pub fn new(agent_kind: &str) -> AgentCheckpoint {
        AgentCheckpoint {
            version: CHECKPOINT_VERSION,
            agent_kind: agent_kind.to_string(),
            scalars: BTreeMap::new(),
            ints: BTreeMap::new(),
            arrays: BTreeMap::new(),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), AgentError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.agent_kind != kind {
            return Err(AgentError::Checkpoint(format!(
                "checkpoint is for {:?}, agent is {:?}",
                self.agent_kind, kind
            )));
        }
        Ok(())
    }

    pub fn scalar(&self, name: &str) -> Result<f64, AgentError> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| AgentError::Checkpoint(format!("missing scalar {name:?}")))
    }

    pub fn int(&self, name: &str) -> Result<i64, AgentError> {
        self.ints
            .get(name)
            .copied()
            .ok_or_else(|| AgentError::Checkpoint(format!("missing int {name:?}")))
    }

    pub fn array(&self, name: &str, expected_len: usize) -> Result<&[f64], AgentError> {
        let arr = self
            .arrays
            .get(name)
            .ok_or_else(|| AgentError::Checkpoint(format!("missing array {name:?}")))?;
        if arr.len() != expected_len {
            return Err(AgentError::Checkpoint(format!(
                "array {name:?} has length {}, expected {expected_len}",
                arr.len()
            )));
        }
        Ok(arr)
    }

    /// Variable-length array (length recorded by the writer elsewhere).
    pub fn array_any(&self, name: &str) -> Result<&[f64], AgentError> {
        self.arrays
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| AgentError::Checkpoint(format!("missing array {name:?}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<AgentCheckpoint, AgentError> {
        serde_json::from_str(s).map_err(|e| AgentError::Checkpoint(e.to_string()))
    }
}

/// Order-sensitive stable hash over float slices, for frozen-state checks.
pub fn hash_state(parts: &[&[f64]]) -> u64 {
    let mut h: u64 = 0x9e3779b97f4a7c15;
    for part in parts {
        h = splitmix64(h ^ (part.len() as u64));
        for &x in *part {
            h = splitmix64(h ^ x.to_bits());
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut ck = AgentCheckpoint::new("test");
        ck.scalars.insert("alpha".into(), 0.1 + 0.2);
        ck.arrays.insert(
            "w".into(),
            vec![1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0, 0.30000000000000004],
        );
        ck.ints.insert("steps".into(), -7);
        let back = AgentCheckpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(ck, back);
        for (a, b) in ck.arrays["w"].iter().zip(back.arrays["w"].iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn hash_state_distinguishes_order_and_value() {
        let a = hash_state(&[&[1.0, 2.0]]);
        let b = hash_state(&[&[2.0, 1.0]]);
        let c = hash_state(&[&[1.0], &[2.0]]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, hash_state(&[&[1.0, 2.0]]));
    }
}
