use std::collections::{BTreeSet, HashMap};

use super::CorpusManifest;

/// Half-width of the latitude/longitude box, in degrees.
pub const NEIGHBOR_DEGREES: f64 = 1.0;

/// Maps each recording to the other species recorded within the 1° box
/// around it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborIndex {
    map: HashMap<String, BTreeSet<usize>>,
}

impl NeighborIndex {
    /// Neighbour species of a recording; empty for unknown ids and for
    /// recordings without coordinates.
    pub fn neighbors(&self, recording_id: &str) -> &BTreeSet<usize> {
        static EMPTY: BTreeSet<usize> = BTreeSet::new();
        self.map.get(recording_id).unwrap_or(&EMPTY)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn within_box(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 - b.0).abs() <= NEIGHBOR_DEGREES && (a.1 - b.1).abs() <= NEIGHBOR_DEGREES
}

/// Builds the index with a 1° grid so each recording is only compared with
/// the nine surrounding cells.
///
/// The box is axis-aligned and does not wrap at the antimeridian.
pub fn build_neighbor_index(manifest: &CorpusManifest) -> NeighborIndex {
    let cell_of = |(lat, lon): (f64, f64)| {
        (
            (lat / NEIGHBOR_DEGREES).floor() as i64,
            (lon / NEIGHBOR_DEGREES).floor() as i64,
        )
    };

    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        if let Some(c) = e.metadata.coordinates() {
            grid.entry(cell_of(c)).or_default().push(i);
        }
    }

    let mut map = HashMap::with_capacity(manifest.len());
    for e in &manifest.entries {
        let mut set = BTreeSet::new();
        if let Some(here) = e.metadata.coordinates() {
            let (cr, cc) = cell_of(here);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let Some(bucket) = grid.get(&(cr + dr, cc + dc)) else {
                        continue;
                    };
                    for &j in bucket {
                        let other = &manifest.entries[j];
                        if other.species_id() == e.species_id() {
                            continue;
                        }
                        if let Some(there) = other.metadata.coordinates() {
                            if within_box(here, there) {
                                set.insert(other.species_id());
                            }
                        }
                    }
                }
            }
        }
        map.insert(e.recording_id.clone(), set);
    }
    NeighborIndex { map }
}
