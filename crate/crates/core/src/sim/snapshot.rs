use std::path::Path;

use serde::{Deserialize, Serialize};

use super::world::WorldState;
use super::SimError;

const FORMAT: &str = "warehouse-twin/snapshot";
const VERSION: u32 = 1;

/// Self-contained serialized world, RNG stream positions included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot(Vec<u8>);

#[derive(Serialize)]
struct DocRef<'a> {
    format: &'a str,
    version: u32,
    world: &'a WorldState,
}

#[derive(Deserialize)]
struct Doc {
    format: String,
    version: u32,
    world: WorldState,
}

impl Snapshot {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn write_to(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, &self.0)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, SimError> {
        Ok(Self(std::fs::read(path)?))
    }
}

pub fn snapshot(world: &WorldState) -> Snapshot {
    let doc = DocRef { format: FORMAT, version: VERSION, world };
    Snapshot(serde_json::to_vec(&doc).expect("world state always serializes"))
}

pub fn restore(snap: &Snapshot) -> Result<WorldState, SimError> {
    let corrupt = |m: String| SimError::CorruptSnapshot(m);
    let doc: Doc = serde_json::from_slice(&snap.0).map_err(|e| corrupt(e.to_string()))?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(corrupt(format!("unsupported snapshot {} v{}", doc.format, doc.version)));
    }
    let w = doc.world;
    if !(w.clock.dt > 0.0) {
        return Err(corrupt("non-positive dt".into()));
    }
    let b = w.layout.bounds();
    let inside = |p: super::Vec2| p.x >= 0.0 && p.y >= 0.0 && p.x <= b.x && p.y <= b.y;
    if !w.amrs.iter().map(|a| a.position).chain(w.workers.iter().map(|k| k.position)).all(inside) {
        return Err(corrupt("agent outside layout bounds".into()));
    }
    if w.orders.iter().enumerate().any(|(i, o)| o.id != i || o.slot_id >= w.layout.slots().len()) {
        return Err(corrupt("inconsistent order table".into()));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_world, ScenarioConfig};

    #[test]
    fn round_trip_and_truncation() {
        let mut w = build_world(&ScenarioConfig::default()).unwrap();
        for _ in 0..700 {
            w.step();
        }
        let s = snapshot(&w);
        assert_eq!(restore(&s).unwrap(), w);
        let cut = Snapshot::from_bytes(s.as_bytes()[..s.len() / 2].to_vec());
        assert!(matches!(restore(&cut), Err(SimError::CorruptSnapshot(_))));
        assert!(matches!(restore(&Snapshot::from_bytes(b"{}".to_vec())), Err(SimError::CorruptSnapshot(_))));
    }
}
