//! Set-associative write-back cache with true LRU replacement.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const LINE: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheGeometry {
    #[serde(with = "crate::config::bytes")]
    pub size: u64,
    pub ways: u32,
    pub hit_cycles: u32,
}

impl CacheGeometry {
    pub fn new(size: u64, ways: u32, hit_cycles: u32) -> Self {
        CacheGeometry {
            size,
            ways,
            hit_cycles,
        }
    }

    pub fn sets(&self) -> u64 {
        self.size / (self.ways as u64 * LINE)
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        if !self.size.is_power_of_two() {
            return Err(SimError::validation(
                format!("{key}.size"),
                "must be a power of two",
            ));
        }
        if self.ways == 0 || self.size < self.ways as u64 * LINE {
            return Err(SimError::validation(
                format!("{key}.ways"),
                "must be >= 1 and fit the size",
            ));
        }
        if !self.sets().is_power_of_two() {
            return Err(SimError::validation(
                format!("{key}.ways"),
                "sets must be a power of two",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Victim {
    pub line: u64,
    pub dirty: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss { victim: Option<Victim> },
}

#[derive(Clone, Copy, Debug, Default)]
struct Way {
    line: u64,
    valid: bool,
    dirty: bool,
    stamp: u64,
}

#[derive(Clone, Debug)]
pub struct CacheLevel {
    geom: CacheGeometry,
    set_mask: u64,
    ways: Vec<Way>,
    clock: u64,
}

impl CacheLevel {
    pub fn new(geom: CacheGeometry) -> Self {
        let sets = geom.sets();
        CacheLevel {
            geom,
            set_mask: sets - 1,
            ways: vec![Way::default(); (sets * geom.ways as u64) as usize],
            clock: 0,
        }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geom
    }

    fn set(&self, line: u64) -> std::ops::Range<usize> {
        let s = ((line / LINE) & self.set_mask) as usize * self.geom.ways as usize;
        s..s + self.geom.ways as usize
    }

    fn find(&self, line: u64) -> Option<usize> {
        self.set(line)
            .find(|&i| self.ways[i].valid && self.ways[i].line == line)
    }

    pub fn probe(&self, line: u64) -> bool {
        self.find(line).is_some()
    }

    /// Looks up `line`; on a hit it becomes MRU, on a miss it is installed
    /// at MRU over the LRU way. Writes mark the line dirty.
    pub fn access(&mut self, line: u64, write: bool) -> Outcome {
        self.clock += 1;
        if let Some(i) = self.find(line) {
            let w = &mut self.ways[i];
            w.stamp = self.clock;
            w.dirty |= write;
            return Outcome::Hit;
        }
        Outcome::Miss {
            victim: self.fill(line, write),
        }
    }

    /// Installs or refreshes `line` without counting it as an access.
    pub fn insert(&mut self, line: u64, dirty: bool) -> Option<Victim> {
        self.clock += 1;
        if let Some(i) = self.find(line) {
            let w = &mut self.ways[i];
            w.stamp = self.clock;
            w.dirty |= dirty;
            return None;
        }
        self.fill(line, dirty)
    }

    fn fill(&mut self, line: u64, dirty: bool) -> Option<Victim> {
        let range = self.set(line);
        let slot = range
            .clone()
            .find(|&i| !self.ways[i].valid)
            .unwrap_or_else(|| range.min_by_key(|&i| self.ways[i].stamp).expect("ways > 0"));
        let old = self.ways[slot];
        self.ways[slot] = Way {
            line,
            valid: true,
            dirty,
            stamp: self.clock,
        };
        old.valid.then_some(Victim {
            line: old.line,
            dirty: old.dirty,
        })
    }

    pub fn dirty_lines(&self) -> impl Iterator<Item = u64> + '_ {
        self.ways
            .iter()
            .filter(|w| w.valid && w.dirty)
            .map(|w| w.line)
    }

    pub fn invalidate_all(&mut self) {
        self.ways.iter_mut().for_each(|w| *w = Way::default());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_way_lru_evicts_least_recent() {
        // 2 sets, 2 ways: lines 0, 128, 256 share set 0.
        let mut c = CacheLevel::new(CacheGeometry::new(256, 2, 1));
        let (a, b, cc) = (0, 128, 256);
        assert!(matches!(c.access(a, false), Outcome::Miss { victim: None }));
        assert!(matches!(c.access(b, false), Outcome::Miss { victim: None }));
        assert_eq!(c.access(a, false), Outcome::Hit);
        assert_eq!(
            c.access(cc, false),
            Outcome::Miss {
                victim: Some(Victim {
                    line: b,
                    dirty: false
                })
            }
        );
    }

    #[test]
    fn repeated_access_hits() {
        let mut c = CacheLevel::new(CacheGeometry::new(1024, 4, 1));
        assert!(matches!(c.access(64, false), Outcome::Miss { .. }));
        for _ in 0..10 {
            assert_eq!(c.access(64, false), Outcome::Hit);
        }
    }

    #[test]
    fn dirty_victim_reported() {
        let mut c = CacheLevel::new(CacheGeometry::new(64, 1, 1));
        c.access(0, true);
        assert_eq!(c.dirty_lines().collect::<Vec<_>>(), vec![0]);
        assert_eq!(
            c.access(64, false),
            Outcome::Miss {
                victim: Some(Victim {
                    line: 0,
                    dirty: true
                })
            }
        );
    }

    #[test]
    fn geometry_validation() {
        assert!(CacheGeometry::new(32 << 10, 8, 4).validate("l1d").is_ok());
        assert!(CacheGeometry::new(48 << 10, 8, 4).validate("l1d").is_err());
        assert!(CacheGeometry::new(32 << 10, 3, 4).validate("l1d").is_err());
    }
}
