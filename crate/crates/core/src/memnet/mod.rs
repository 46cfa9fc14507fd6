//! Memory network timing: DRAM channels, the host-to-device link and the
//! remote memory node behind its crossbar.

pub mod calibrate;
pub mod dram;
pub mod link;
pub mod local;
pub mod remote;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;

pub use calibrate::{calibrate, CalibrationReport};
pub use dram::{
    decode_address, dram_service, peak_bandwidth, ChannelController, ChannelState, DramTiming,
    RowPolicy,
};
pub use link::{link_transmit, LinkConfig, LinkTx};
pub use local::LocalMemory;
pub use remote::{RemoteMemory, RemoteParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReqKind {
    Read,
    Write,
}

/// One 64-byte line transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemReq {
    pub id: u64,
    pub host: u32,
    pub core: u16,
    pub kind: ReqKind,
    /// Physical line address.
    pub addr: u64,
    /// Index of the issuing node's ROI, for attribution.
    pub roi: u16,
    pub issue: SimTime,
    pub prefetch: bool,
}

impl MemReq {
    pub fn read(id: u64, host: u32, core: u16, addr: u64, roi: u16, issue: SimTime) -> Self {
        MemReq {
            id,
            host,
            core,
            kind: ReqKind::Read,
            addr,
            roi,
            issue,
            prefetch: false,
        }
    }

    pub fn write(id: u64, host: u32, addr: u64, roi: u16, issue: SimTime) -> Self {
        MemReq {
            id,
            host,
            core: u16::MAX,
            kind: ReqKind::Write,
            addr,
            roi,
            issue,
            prefetch: false,
        }
    }
}
