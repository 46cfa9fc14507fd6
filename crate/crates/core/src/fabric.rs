//! Fabric manager, host page maps, and NUMA-style page placement.
//!
//! Host physical addresses of remote memory equal device physical
//! addresses (identity mapping over fixed per-host ranges). Local DRAM
//! occupies `[0, local_capacity)` of each host's physical space; the device
//! window sits above it at `device.base`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub type HostId = usize;

pub const PAGE_SIZE: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AddrRange {
    pub start: u64,
    pub end: u64,
}

impl AddrRange {
    pub fn new(start: u64, end: u64) -> Result<Self> {
        if start >= end {
            return Err(SimError::InvalidRange(format!(
                "{start:#x}..{end:#x} is empty"
            )));
        }
        if !start.is_multiple_of(PAGE_SIZE) || !end.is_multiple_of(PAGE_SIZE) {
            return Err(SimError::InvalidRange(format!(
                "{start:#x}..{end:#x} is not page aligned"
            )));
        }
        Ok(AddrRange { start, end })
    }

    pub fn with_len(start: u64, len: u64) -> Result<Self> {
        let end = start
            .checked_add(len)
            .ok_or_else(|| SimError::InvalidRange(format!("{start:#x}+{len:#x} overflows")))?;
        Self::new(start, end)
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.end
    }

    pub fn overlaps(&self, other: &AddrRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn covers(&self, other: &AddrRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BindMode {
    Pooled,
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    ReadWrite,
    ReadOnly,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub host: HostId,
    pub hpa: AddrRange,
    pub dpa: AddrRange,
    pub mode: BindMode,
    pub access: Access,
}

/// Control-plane owner of the device address space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricManager {
    device: AddrRange,
    bindings: Vec<Binding>,
}

impl FabricManager {
    pub fn new(base: u64, capacity: u64) -> Result<Self> {
        Ok(FabricManager {
            device: AddrRange::with_len(base, capacity)?,
            bindings: Vec::new(),
        })
    }

    pub fn device_range(&self) -> AddrRange {
        self.device
    }

    pub fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    pub fn bindings_for(&self, host: HostId) -> impl Iterator<Item = &Binding> {
        self.bindings.iter().filter(move |b| b.host == host)
    }

    /// Distinct device ranges that are claimed by some binding, sorted.
    fn claimed(&self) -> Vec<AddrRange> {
        let mut v: Vec<AddrRange> = self.bindings.iter().map(|b| b.dpa).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn free_capacity(&self) -> u64 {
        self.device.len() - self.claimed().iter().map(AddrRange::len).sum::<u64>()
    }

    /// Binds `size` bytes at the lowest free device address.
    pub fn bind_pooled(&mut self, host: HostId, size: u64) -> Result<Binding> {
        if size == 0 || !size.is_multiple_of(PAGE_SIZE) {
            return Err(SimError::InvalidRange(format!(
                "pooled size {size:#x} is not a positive page multiple"
            )));
        }
        let mut cursor = self.device.start;
        let mut largest = 0;
        for r in self.claimed() {
            if r.start >= cursor {
                let gap = r.start - cursor;
                if gap >= size {
                    break;
                }
                largest = largest.max(gap);
            }
            cursor = cursor.max(r.end);
        }
        if self.device.end - cursor < size {
            largest = largest.max(self.device.end - cursor);
            return Err(SimError::CapacityExceeded {
                what: "device".into(),
                requested: size,
                available: largest,
            });
        }
        self.bind_pooled_at(host, AddrRange::with_len(cursor, size)?)
    }

    /// Binds an explicit device range to `host` exclusively.
    pub fn bind_pooled_at(&mut self, host: HostId, dpa: AddrRange) -> Result<Binding> {
        if !self.device.covers(&dpa) {
            return Err(SimError::CapacityExceeded {
                what: "device".into(),
                requested: dpa.len(),
                available: self.free_capacity(),
            });
        }
        if self.bindings.iter().any(|b| b.dpa.overlaps(&dpa)) {
            return Err(SimError::OverlapWithExistingBinding {
                start: dpa.start,
                end: dpa.end,
            });
        }
        let b = Binding {
            host,
            hpa: dpa,
            dpa,
            mode: BindMode::Pooled,
            access: Access::ReadWrite,
        };
        self.bindings.push(b.clone());
        Ok(b)
    }

    /// Maps one segment into every listed host: one writer, many readers.
    pub fn bind_shared(
        &mut self,
        segment: AddrRange,
        writer: HostId,
        readers: &[HostId],
    ) -> Result<Vec<Binding>> {
        if !self.device.covers(&segment) {
            return Err(SimError::CapacityExceeded {
                what: "device".into(),
                requested: segment.len(),
                available: self.device.len(),
            });
        }
        if readers.contains(&writer) {
            return Err(SimError::InvalidRange(format!(
                "writer {writer} also listed as reader"
            )));
        }
        for b in &self.bindings {
            if !b.dpa.overlaps(&segment) {
                continue;
            }
            match b.mode {
                BindMode::Pooled => {
                    return Err(SimError::OverlapWithPooled {
                        start: segment.start,
                        end: segment.end,
                    })
                }
                BindMode::Shared if b.dpa != segment => {
                    return Err(SimError::OverlapWithExistingBinding {
                        start: segment.start,
                        end: segment.end,
                    })
                }
                BindMode::Shared if b.access == Access::ReadWrite => {
                    return Err(SimError::SecondWriterRejected {
                        start: segment.start,
                        end: segment.end,
                    })
                }
                BindMode::Shared => {}
            }
        }
        let mut out = Vec::with_capacity(readers.len() + 1);
        let mk = |host, access| Binding {
            host,
            hpa: segment,
            dpa: segment,
            mode: BindMode::Shared,
            access,
        };
        out.push(mk(writer, Access::ReadWrite));
        for &r in readers {
            out.push(mk(r, Access::ReadOnly));
        }
        self.bindings.extend(out.iter().cloned());
        Ok(out)
    }

    /// Adds read-only mappings of an already-shared segment.
    pub fn add_readers(&mut self, segment: AddrRange, readers: &[HostId]) -> Result<Vec<Binding>> {
        let shared = self
            .bindings
            .iter()
            .any(|b| b.mode == BindMode::Shared && b.dpa == segment);
        if !shared {
            return Err(SimError::InvalidRange(format!(
                "{:#x}..{:#x} is not a shared segment",
                segment.start, segment.end
            )));
        }
        let out: Vec<Binding> = readers
            .iter()
            .map(|&host| Binding {
                host,
                hpa: segment,
                dpa: segment,
                mode: BindMode::Shared,
                access: Access::ReadOnly,
            })
            .collect();
        self.bindings.extend(out.iter().cloned());
        Ok(out)
    }

    /// Removes the binding of `host` on `dpa`; returns whether one existed.
    pub fn unbind(&mut self, host: HostId, dpa: AddrRange) -> bool {
        let before = self.bindings.len();
        self.bindings.retain(|b| !(b.host == host && b.dpa == dpa));
        before != self.bindings.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    Local,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    MemBindLocal,
    MemBindRemote,
    Interleave,
    PreferredLocal,
}

/// Page placement policy, the equivalent of a `numactl` setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PagePolicy {
    pub kind: PolicyKind,
    #[serde(default)]
    pub interleave_set: Vec<Region>,
    /// Probability of spilling a page remotely while local capacity is
    /// still free (soft `preferred`). Zero gives strict fill-then-spill.
    #[serde(default)]
    pub soft_spill: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PagePolicy {
    pub fn local() -> Self {
        Self::of(PolicyKind::MemBindLocal)
    }

    pub fn remote() -> Self {
        Self::of(PolicyKind::MemBindRemote)
    }

    pub fn interleave() -> Self {
        PagePolicy {
            interleave_set: vec![Region::Local, Region::Remote],
            ..Self::of(PolicyKind::Interleave)
        }
    }

    pub fn preferred_local() -> Self {
        Self::of(PolicyKind::PreferredLocal)
    }

    fn of(kind: PolicyKind) -> Self {
        PagePolicy {
            kind,
            interleave_set: Vec::new(),
            soft_spill: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == PolicyKind::Interleave && self.interleave_set.len() < 2 {
            return Err(SimError::InvalidPolicy(
                "interleave requires >= 2 regions".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.soft_spill) {
            return Err(SimError::InvalidPolicy(
                "soft_spill must be within [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn uses_remote(&self) -> bool {
        match self.kind {
            PolicyKind::MemBindLocal => false,
            PolicyKind::MemBindRemote | PolicyKind::PreferredLocal => true,
            PolicyKind::Interleave => self.interleave_set.contains(&Region::Remote),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageEntry {
    pub region: Region,
    /// Physical base address of the page.
    pub frame: u64,
    pub access: Access,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct PoolCursor {
    range: AddrRange,
    next: u64,
}

/// Per-host virtual-to-physical page table plus the frame allocators that
/// back it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageMap {
    host: HostId,
    entries: Vec<Option<PageEntry>>,
    local_capacity: u64,
    local_next: u64,
    pools: Vec<PoolCursor>,
    spill_counter: u64,
}

impl PageMap {
    pub fn new(host: HostId, local_capacity: u64) -> Self {
        PageMap {
            host,
            entries: Vec::new(),
            local_capacity: local_capacity / PAGE_SIZE * PAGE_SIZE,
            local_next: 0,
            pools: Vec::new(),
            spill_counter: 0,
        }
    }

    pub fn host(&self) -> HostId {
        self.host
    }

    /// Makes a pooled binding available to this host's remote allocator.
    pub fn attach_pool(&mut self, binding: &Binding) -> Result<()> {
        if binding.host != self.host || binding.mode != BindMode::Pooled {
            return Err(SimError::InvalidRange(
                "pool binding belongs to another host or is not pooled".into(),
            ));
        }
        self.pools.push(PoolCursor {
            range: binding.hpa,
            next: binding.hpa.start,
        });
        Ok(())
    }

    pub fn local_free(&self) -> u64 {
        self.local_capacity - self.local_next
    }

    pub fn remote_free(&self) -> u64 {
        self.pools.iter().map(|p| p.range.end - p.next).sum()
    }

    pub fn mapped_pages(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// Next unused virtual address.
    pub fn brk(&self) -> u64 {
        self.entries.len() as u64 * PAGE_SIZE
    }

    fn soft_spill_now(&mut self, policy: &PagePolicy) -> bool {
        if policy.soft_spill <= 0.0 {
            return false;
        }
        self.spill_counter += 1;
        let r = splitmix64(policy.seed ^ self.spill_counter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        ((r >> 11) as f64 / (1u64 << 53) as f64) < policy.soft_spill
    }

    /// Places `npages` fresh pages under `policy` and maps them at the next
    /// free virtual pages. Nothing is mapped if placement fails.
    pub fn allocate_pages(
        &mut self,
        policy: &PagePolicy,
        npages: u64,
    ) -> Result<Vec<(Region, u64)>> {
        policy.validate()?;
        let local_free = self.local_free() / PAGE_SIZE;
        let remote_free = self.remote_free() / PAGE_SIZE;
        let mut plan = Vec::with_capacity(npages as usize);
        let (mut nl, mut nr) = (0u64, 0u64);
        for i in 0..npages {
            let region = match policy.kind {
                PolicyKind::MemBindLocal => Region::Local,
                PolicyKind::MemBindRemote => Region::Remote,
                PolicyKind::Interleave => {
                    policy.interleave_set[(i % policy.interleave_set.len() as u64) as usize]
                }
                PolicyKind::PreferredLocal => {
                    if self.local_capacity == 0 {
                        return Err(SimError::InvalidPolicy(
                            "preferred-local needs local capacity".into(),
                        ));
                    }
                    if nl < local_free && !self.soft_spill_now(policy) {
                        Region::Local
                    } else {
                        Region::Remote
                    }
                }
            };
            match region {
                Region::Local => nl += 1,
                Region::Remote => nr += 1,
            }
            plan.push(region);
        }
        if nr > 0 && self.pools.is_empty() {
            return Err(SimError::RemoteUnbound(self.host));
        }
        if nl > local_free {
            return Err(SimError::CapacityExceeded {
                what: format!("host {} local memory", self.host),
                requested: nl * PAGE_SIZE,
                available: local_free * PAGE_SIZE,
            });
        }
        if nr > remote_free {
            return Err(SimError::CapacityExceeded {
                what: format!("host {} remote binding", self.host),
                requested: nr * PAGE_SIZE,
                available: remote_free * PAGE_SIZE,
            });
        }
        let mut out = Vec::with_capacity(plan.len());
        for region in plan {
            let frame = match region {
                Region::Local => {
                    let f = self.local_next;
                    self.local_next += PAGE_SIZE;
                    f
                }
                Region::Remote => {
                    let pool = self
                        .pools
                        .iter_mut()
                        .find(|p| p.next < p.range.end)
                        .expect("capacity checked");
                    let f = pool.next;
                    pool.next += PAGE_SIZE;
                    f
                }
            };
            self.entries.push(Some(PageEntry {
                region,
                frame,
                access: Access::ReadWrite,
            }));
            out.push((region, frame));
        }
        Ok(out)
    }

    /// Allocates enough pages for `bytes` and returns the virtual base.
    pub fn mmap(&mut self, policy: &PagePolicy, bytes: u64) -> Result<u64> {
        let base = self.brk();
        self.allocate_pages(policy, bytes.div_ceil(PAGE_SIZE))?;
        Ok(base)
    }

    /// Maps a whole device binding (e.g. a shared DAX segment) and returns
    /// the virtual base.
    pub fn map_binding(&mut self, binding: &Binding) -> Result<u64> {
        if binding.host != self.host {
            return Err(SimError::InvalidRange(
                "binding belongs to another host".into(),
            ));
        }
        let base = self.brk();
        let mut frame = binding.hpa.start;
        while frame < binding.hpa.end {
            self.entries.push(Some(PageEntry {
                region: Region::Remote,
                frame,
                access: binding.access,
            }));
            frame += PAGE_SIZE;
        }
        Ok(base)
    }

    pub fn entry(&self, vaddr: u64) -> Result<PageEntry> {
        self.entries
            .get((vaddr / PAGE_SIZE) as usize)
            .copied()
            .flatten()
            .ok_or(SimError::UnmappedAddress {
                host: self.host,
                addr: vaddr,
            })
    }

    pub fn translate(&self, vaddr: u64) -> Result<(Region, u64)> {
        let e = self.entry(vaddr)?;
        Ok((e.region, e.frame + vaddr % PAGE_SIZE))
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, PageEntry)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|e| (i as u64 * PAGE_SIZE, e)))
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GIB: u64 = 1 << 30;
    const BASE: u64 = 4 * GIB;

    fn pooled_map(local_pages: u64, remote_pages: u64) -> (FabricManager, PageMap) {
        let mut fm = FabricManager::new(BASE, 16 * GIB).unwrap();
        let mut pm = PageMap::new(0, local_pages * PAGE_SIZE);
        if remote_pages > 0 {
            let b = fm.bind_pooled(0, remote_pages * PAGE_SIZE).unwrap();
            pm.attach_pool(&b).unwrap();
        }
        (fm, pm)
    }

    #[test]
    fn two_pooled_hosts_are_disjoint() {
        let mut fm = FabricManager::new(BASE, 128 * GIB).unwrap();
        let a = fm.bind_pooled(0, 2 * GIB).unwrap();
        let b = fm.bind_pooled(1, 2 * GIB).unwrap();
        assert!(!a.dpa.overlaps(&b.dpa));
        assert_eq!(a.hpa, a.dpa);
        assert_eq!(fm.free_capacity(), 124 * GIB);
    }

    #[test]
    fn explicit_overlap_rejected() {
        let mut fm = FabricManager::new(BASE, 128 * GIB).unwrap();
        fm.bind_pooled_at(0, AddrRange::new(BASE, BASE + 2 * GIB).unwrap())
            .unwrap();
        let err = fm
            .bind_pooled_at(1, AddrRange::new(BASE + GIB, BASE + 3 * GIB).unwrap())
            .unwrap_err();
        assert!(matches!(err, SimError::OverlapWithExistingBinding { .. }));
    }

    #[test]
    fn pool_160_gib_over_seven_hosts() {
        let mut fm = FabricManager::new(BASE, 160 * GIB).unwrap();
        let slice = 160 * GIB / 7 / PAGE_SIZE * PAGE_SIZE;
        let slices: Vec<Binding> = (0..7).map(|h| fm.bind_pooled(h, slice).unwrap()).collect();
        for (i, a) in slices.iter().enumerate() {
            for b in &slices[i + 1..] {
                assert!(!a.dpa.overlaps(&b.dpa));
            }
        }
        assert_eq!(fm.free_capacity(), 160 * GIB - 7 * slice);
        assert!(matches!(
            fm.bind_pooled(7, GIB),
            Err(SimError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn shared_segment_one_writer_five_readers() {
        let mut fm = FabricManager::new(BASE, 16 * GIB).unwrap();
        let seg = AddrRange::new(BASE, BASE + GIB).unwrap();
        let bs = fm.bind_shared(seg, 0, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(bs.len(), 6);
        assert!(bs.iter().all(|b| b.dpa == seg));
        assert_eq!(
            bs.iter().filter(|b| b.access == Access::ReadWrite).count(),
            1
        );
        let err = fm.bind_shared(seg, 6, &[]).unwrap_err();
        assert!(matches!(err, SimError::SecondWriterRejected { .. }));
    }

    #[test]
    fn shared_over_pooled_rejected() {
        let mut fm = FabricManager::new(BASE, 16 * GIB).unwrap();
        fm.bind_pooled(0, 2 * GIB).unwrap();
        let err = fm
            .bind_shared(AddrRange::new(BASE + GIB, BASE + 3 * GIB).unwrap(), 1, &[2])
            .unwrap_err();
        assert!(matches!(err, SimError::OverlapWithPooled { .. }));
    }

    #[test]
    fn interleave_round_robin() {
        let (_, mut pm) = pooled_map(16, 16);
        let got: Vec<Region> = pm
            .allocate_pages(&PagePolicy::interleave(), 6)
            .unwrap()
            .into_iter()
            .map(|p| p.0)
            .collect();
        use Region::*;
        assert_eq!(got, vec![Local, Remote, Local, Remote, Local, Remote]);
    }

    #[test]
    fn preferred_fills_then_spills() {
        let (_, mut pm) = pooled_map(3, 16);
        let got: Vec<Region> = pm
            .allocate_pages(&PagePolicy::preferred_local(), 5)
            .unwrap()
            .into_iter()
            .map(|p| p.0)
            .collect();
        use Region::*;
        assert_eq!(got, vec![Local, Local, Local, Remote, Remote]);
    }

    #[test]
    fn preferred_mg_like_placement_fraction() {
        // 8 GiB local, 27 GiB footprint, scaled by 1/1024.
        let mib = 1 << 20;
        let mut fm = FabricManager::new(BASE, 160 * mib).unwrap();
        let mut pm = PageMap::new(0, 8 * mib);
        pm.attach_pool(&fm.bind_pooled(0, 19 * mib).unwrap())
            .unwrap();
        let pages = pm
            .allocate_pages(&PagePolicy::preferred_local(), 27 * mib / PAGE_SIZE)
            .unwrap();
        let remote = pages.iter().filter(|p| p.0 == Region::Remote).count() as f64;
        assert!((remote / pages.len() as f64 - 19.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn hard_bind_errors() {
        let (_, mut pm) = pooled_map(2, 0);
        assert!(matches!(
            pm.allocate_pages(&PagePolicy::local(), 3),
            Err(SimError::CapacityExceeded { .. })
        ));
        assert_eq!(pm.mapped_pages(), 0);
        assert!(matches!(
            pm.allocate_pages(&PagePolicy::remote(), 1),
            Err(SimError::RemoteUnbound(0))
        ));
        let single = PagePolicy {
            interleave_set: vec![Region::Local],
            ..PagePolicy::interleave()
        };
        assert!(matches!(
            pm.allocate_pages(&single, 1),
            Err(SimError::InvalidPolicy(_))
        ));
    }

    #[test]
    fn translate_local_and_identity_remote() {
        let mut pm = PageMap::new(0, 4 * GIB);
        pm.allocate_pages(&PagePolicy::local(), 2).unwrap();
        assert_eq!(
            pm.translate(PAGE_SIZE + 0x10).unwrap(),
            (Region::Local, 0x1010)
        );

        let mut fm = FabricManager::new(BASE, 16 * GIB).unwrap();
        let b = fm
            .bind_pooled_at(0, AddrRange::new(4294967296, 6442450944).unwrap())
            .unwrap();
        let v = pm.map_binding(&b).unwrap();
        let (region, pa) = pm.translate(v + 0x1234).unwrap();
        assert_eq!(region, Region::Remote);
        assert_eq!(pa, 4294967296 + 0x1234);
        assert!(matches!(
            pm.translate(1 << 40),
            Err(SimError::UnmappedAddress { .. })
        ));
    }

    #[test]
    fn soft_preferred_is_seeded() {
        let pol = PagePolicy {
            soft_spill: 0.2,
            seed: 7,
            ..PagePolicy::preferred_local()
        };
        let run = || {
            let (_, mut pm) = pooled_map(64, 64);
            pm.allocate_pages(&pol, 64).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().any(|p| p.0 == Region::Remote));
    }

    #[derive(Debug, Clone)]
    enum FabOp {
        Pool(usize, u64),
        PoolAt(usize, u64, u64),
        Unbind(usize),
    }

    fn fab_op() -> impl Strategy<Value = FabOp> {
        prop_oneof![
            (0usize..4, 1u64..64).prop_map(|(h, p)| FabOp::Pool(h, p)),
            (0usize..4, 0u64..256, 1u64..64).prop_map(|(h, s, p)| FabOp::PoolAt(h, s, p)),
            (0usize..16).prop_map(FabOp::Unbind),
        ]
    }

    proptest! {
        #[test]
        fn pooled_ranges_stay_disjoint(ops in proptest::collection::vec(fab_op(), 1..60)) {
            let mut fm = FabricManager::new(BASE, 256 * PAGE_SIZE).unwrap();
            for op in ops {
                match op {
                    FabOp::Pool(h, p) => { let _ = fm.bind_pooled(h, p * PAGE_SIZE); }
                    FabOp::PoolAt(h, s, p) => {
                        if let Ok(r) = AddrRange::with_len(BASE + s * PAGE_SIZE, p * PAGE_SIZE) {
                            let _ = fm.bind_pooled_at(h, r);
                        }
                    }
                    FabOp::Unbind(i) => {
                        if let Some(b) = fm.bindings().get(i).cloned() { fm.unbind(b.host, b.dpa); }
                    }
                }
                let bs = fm.bindings();
                for (i, a) in bs.iter().enumerate() {
                    prop_assert!(fm.device_range().covers(&a.dpa));
                    for b in &bs[i + 1..] {
                        prop_assert!(!a.dpa.overlaps(&b.dpa));
                    }
                }
            }
        }

        #[test]
        fn interleave_is_balanced(k in 2usize..5, n in 0u64..200) {
            let (_, mut pm) = pooled_map(1024, 1024);
            let set: Vec<Region> = (0..k).map(|i| if i % 2 == 0 { Region::Local } else { Region::Remote }).collect();
            let pol = PagePolicy { interleave_set: set.clone(), ..PagePolicy::interleave() };
            let got = pm.allocate_pages(&pol, n).unwrap();
            for (i, p) in got.iter().enumerate() {
                prop_assert_eq!(p.0, set[i % k]);
            }
            let slots = (0..k).map(|s| (0..n).filter(|i| (*i as usize) % k == s).count() as u64);
            for c in slots {
                prop_assert!(c == n / k as u64 || c == n.div_ceil(k as u64));
            }
        }

        #[test]
        fn preferred_never_spills_early(local in 0u64..40, n in 1u64..80) {
            let (_, mut pm) = pooled_map(local.max(1), 128);
            let got = pm.allocate_pages(&PagePolicy::preferred_local(), n).unwrap();
            let first_remote = got.iter().position(|p| p.0 == Region::Remote).unwrap_or(got.len());
            prop_assert_eq!(first_remote as u64, n.min(local.max(1)));
            prop_assert!(got[first_remote..].iter().all(|p| p.0 == Region::Remote));
        }

        #[test]
        fn allocate_then_translate_round_trips(policy in 0usize..4, n in 1u64..=48, off in 0u64..PAGE_SIZE) {
            let (fm, mut pm) = pooled_map(48, 48);
            let pol = [PagePolicy::local(), PagePolicy::remote(), PagePolicy::interleave(), PagePolicy::preferred_local()][policy].clone();
            let base = pm.brk();
            let placed = pm.allocate_pages(&pol, n).unwrap();
            for (i, (region, frame)) in placed.into_iter().enumerate() {
                let v = base + i as u64 * PAGE_SIZE + off;
                let (r, pa) = pm.translate(v).unwrap();
                prop_assert_eq!(r, region);
                prop_assert_eq!(pa, frame + off);
                if r == Region::Remote {
                    prop_assert!(fm.bindings_for(0).any(|b| b.hpa.contains(pa)));
                }
            }
        }
    }
}
