//! Functional backing stores and the data port workloads read and write
//! through.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::fabric::{Access, AddrRange, HostId, PageMap, PagePolicy, Region, PAGE_SIZE};

pub type Page = Box<[u8; PAGE_SIZE as usize]>;

fn zero_page() -> Page {
    Box::new([0u8; PAGE_SIZE as usize])
}

/// Sparse physical memory keyed by page frame address. Pages never written
/// read as zero.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct PageStore {
    pages: HashMap<u64, Page>,
}

impl std::fmt::Debug for PageStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PageStore")
            .field("pages", &self.pages.len())
            .finish()
    }
}

impl PageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// Installs a zero-filled frame, discarding previous contents.
    pub fn zero(&mut self, frame: u64) {
        self.pages.insert(frame, zero_page());
    }

    pub fn insert_page(&mut self, frame: u64, page: Page) {
        self.pages.insert(frame, page);
    }

    pub fn page(&self, frame: u64) -> Option<&[u8; PAGE_SIZE as usize]> {
        self.pages.get(&frame).map(|p| &**p)
    }

    pub fn read<const N: usize>(&self, paddr: u64) -> [u8; N] {
        let frame = paddr & !(PAGE_SIZE - 1);
        let off = (paddr - frame) as usize;
        debug_assert!(off + N <= PAGE_SIZE as usize, "access crosses a page");
        let mut out = [0u8; N];
        if let Some(p) = self.pages.get(&frame) {
            out.copy_from_slice(&p[off..off + N]);
        }
        out
    }

    pub fn write<const N: usize>(&mut self, paddr: u64, bytes: [u8; N]) {
        let frame = paddr & !(PAGE_SIZE - 1);
        let off = (paddr - frame) as usize;
        debug_assert!(off + N <= PAGE_SIZE as usize, "access crosses a page");
        let p = self.pages.entry(frame).or_insert_with(zero_page);
        p[off..off + N].copy_from_slice(&bytes);
    }

    /// Frames in ascending order.
    pub fn frames(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.pages.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Moves every frame inside `range` into a new store.
    pub fn split_off(&mut self, range: &AddrRange) -> PageStore {
        let frames: Vec<u64> = self
            .pages
            .keys()
            .copied()
            .filter(|f| range.contains(*f))
            .collect();
        let mut out = PageStore::new();
        for f in frames {
            let p = self.pages.remove(&f).expect("present");
            out.pages.insert(f, p);
        }
        out
    }

    pub fn absorb(&mut self, other: PageStore) {
        self.pages.extend(other.pages);
    }

    /// SHA-256 over the bytes of `range` (absent pages hash as zeros).
    pub fn checksum(&self, range: &AddrRange) -> [u8; 32] {
        let mut h = Sha256::new();
        let zero = [0u8; PAGE_SIZE as usize];
        let mut f = range.start & !(PAGE_SIZE - 1);
        while f < range.end {
            h.update(self.page(f).unwrap_or(&zero));
            f += PAGE_SIZE;
        }
        h.finalize().into()
    }
}

/// Word-level data access by virtual address.
pub trait DataPort {
    /// Which region backs `vaddr`.
    fn region_of(&self, vaddr: u64) -> Result<Region>;
    fn read_u64(&mut self, vaddr: u64) -> Result<u64>;
    fn write_u64(&mut self, vaddr: u64, value: u64) -> Result<()>;
    fn read_u32(&mut self, vaddr: u64) -> Result<u32>;
    fn write_u32(&mut self, vaddr: u64, value: u32) -> Result<()>;

    fn read_f64(&mut self, vaddr: u64) -> Result<f64> {
        self.read_u64(vaddr).map(f64::from_bits)
    }

    fn write_f64(&mut self, vaddr: u64, value: f64) -> Result<()> {
        self.write_u64(vaddr, value.to_bits())
    }
}

/// The memory a single host owns: its page table, local DRAM contents and
/// the contents of its pooled device slices.
#[derive(Clone, Debug)]
pub struct NodeMemory {
    pub host: HostId,
    pub map: PageMap,
    pub local: PageStore,
    pub pooled: PageStore,
    /// Device ranges that are shared segments rather than pooled slices.
    pub shared_ranges: Vec<AddrRange>,
}

impl NodeMemory {
    pub fn new(host: HostId, map: PageMap) -> Self {
        NodeMemory {
            host,
            map,
            local: PageStore::new(),
            pooled: PageStore::new(),
            shared_ranges: Vec::new(),
        }
    }

    /// Allocates and zero-fills pages under `policy`; returns the virtual base.
    pub fn mmap(&mut self, policy: &PagePolicy, bytes: u64) -> Result<u64> {
        let base = self.map.brk();
        let placed = self.map.allocate_pages(policy, bytes.div_ceil(PAGE_SIZE))?;
        for (region, frame) in placed {
            match region {
                Region::Local => self.local.zero(frame),
                Region::Remote => self.pooled.zero(frame),
            }
        }
        Ok(base)
    }

    fn is_shared(&self, paddr: u64) -> bool {
        self.shared_ranges.iter().any(|r| r.contains(paddr))
    }
}

/// How the shared device segments may be touched.
pub enum SharedAccess<'a> {
    /// Functional phase: the writer may populate segments.
    Writable(&'a mut PageStore),
    /// Timing phase: segments are immutable.
    Frozen(&'a PageStore),
}

impl SharedAccess<'_> {
    fn store(&self) -> &PageStore {
        match self {
            SharedAccess::Writable(s) => s,
            SharedAccess::Frozen(s) => s,
        }
    }
}

pub struct MemPort<'a> {
    pub node: &'a mut NodeMemory,
    pub shared: SharedAccess<'a>,
}

impl<'a> MemPort<'a> {
    pub fn new(node: &'a mut NodeMemory, shared: SharedAccess<'a>) -> Self {
        MemPort { node, shared }
    }

    fn load<const N: usize>(&mut self, vaddr: u64) -> Result<[u8; N]> {
        let (region, pa) = self.node.map.translate(vaddr)?;
        Ok(match region {
            Region::Local => self.node.local.read(pa),
            Region::Remote if self.node.is_shared(pa) => self.shared.store().read(pa),
            Region::Remote => self.node.pooled.read(pa),
        })
    }

    fn store<const N: usize>(&mut self, vaddr: u64, bytes: [u8; N]) -> Result<()> {
        let entry = self.node.map.entry(vaddr)?;
        let pa = entry.frame + vaddr % PAGE_SIZE;
        if entry.access == Access::ReadOnly {
            return Err(SimError::ReadOnlyViolation {
                host: self.node.host,
                addr: vaddr,
            });
        }
        match entry.region {
            Region::Local => self.node.local.write(pa, bytes),
            Region::Remote if self.node.is_shared(pa) => match &mut self.shared {
                SharedAccess::Writable(s) => s.write(pa, bytes),
                SharedAccess::Frozen(_) => {
                    return Err(SimError::SharedSegmentFrozen {
                        host: self.node.host,
                        addr: vaddr,
                    })
                }
            },
            Region::Remote => self.node.pooled.write(pa, bytes),
        }
        Ok(())
    }
}

impl DataPort for MemPort<'_> {
    fn region_of(&self, vaddr: u64) -> Result<Region> {
        Ok(self.node.map.entry(vaddr)?.region)
    }

    fn read_u64(&mut self, vaddr: u64) -> Result<u64> {
        self.load::<8>(vaddr).map(u64::from_le_bytes)
    }

    fn write_u64(&mut self, vaddr: u64, value: u64) -> Result<()> {
        self.store(vaddr, value.to_le_bytes())
    }

    fn read_u32(&mut self, vaddr: u64) -> Result<u32> {
        self.load::<4>(vaddr).map(u32::from_le_bytes)
    }

    fn write_u32(&mut self, vaddr: u64, value: u32) -> Result<()> {
        self.store(vaddr, value.to_le_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::FabricManager;

    #[test]
    fn reads_default_to_zero_and_round_trip() {
        let mut s = PageStore::new();
        assert_eq!(u64::from_le_bytes(s.read::<8>(0x2008)), 0);
        s.write(0x2008, 42u64.to_le_bytes());
        assert_eq!(u64::from_le_bytes(s.read::<8>(0x2008)), 42);
        assert_eq!(s.frames(), vec![0x2000]);
    }

    #[test]
    fn read_only_mapping_rejects_store() {
        let base = 1 << 32;
        let mut fm = FabricManager::new(base, 1 << 24).unwrap();
        let seg = AddrRange::new(base, base + 2 * PAGE_SIZE).unwrap();
        let bs = fm.bind_shared(seg, 0, &[1]).unwrap();

        let mut shared = PageStore::new();
        let mut writer = NodeMemory::new(0, PageMap::new(0, 1 << 20));
        writer.shared_ranges.push(seg);
        let wv = writer.map.map_binding(&bs[0]).unwrap();
        MemPort::new(&mut writer, SharedAccess::Writable(&mut shared))
            .write_u64(wv + 8, 99)
            .unwrap();

        let mut reader = NodeMemory::new(1, PageMap::new(1, 1 << 20));
        reader.shared_ranges.push(seg);
        let rv = reader.map.map_binding(&bs[1]).unwrap();
        let mut port = MemPort::new(&mut reader, SharedAccess::Frozen(&shared));
        assert_eq!(port.read_u64(rv + 8).unwrap(), 99);
        assert!(matches!(
            port.write_u64(rv + 8, 1),
            Err(SimError::ReadOnlyViolation { host: 1, .. })
        ));

        let mut port = MemPort::new(&mut writer, SharedAccess::Frozen(&shared));
        assert!(matches!(
            port.write_u64(wv, 1),
            Err(SimError::SharedSegmentFrozen { .. })
        ));
    }

    #[test]
    fn mmap_zero_fills_pooled_pages() {
        let base = 1 << 32;
        let mut fm = FabricManager::new(base, 1 << 24).unwrap();
        let mut node = NodeMemory::new(0, PageMap::new(0, 0));
        node.map
            .attach_pool(&fm.bind_pooled(0, 4 * PAGE_SIZE).unwrap())
            .unwrap();
        node.pooled.write(base, 7u64.to_le_bytes());
        let v = node.mmap(&PagePolicy::remote(), 3 * PAGE_SIZE).unwrap();
        let empty = PageStore::new();
        let mut port = MemPort::new(&mut node, SharedAccess::Frozen(&empty));
        assert_eq!(port.read_u64(v).unwrap(), 0);
    }
}
