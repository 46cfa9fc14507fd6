//! STREAM: copy, scale, add and triad over three equally sized arrays.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::memory::DataPort;
use crate::workloads::program::{Batched, Op, Program, Step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Copy,
    Scale,
    Add,
    Triad,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Kernel::Copy, Kernel::Scale, Kernel::Add, Kernel::Triad];

    pub fn label(self) -> &'static str {
        match self {
            Kernel::Copy => "copy",
            Kernel::Scale => "scale",
            Kernel::Add => "add",
            Kernel::Triad => "triad",
        }
    }

    /// STREAM's counting convention: bytes moved per element.
    pub fn bytes_per_element(self) -> u64 {
        match self {
            Kernel::Copy | Kernel::Scale => 16,
            Kernel::Add | Kernel::Triad => 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    #[serde(with = "crate::config::bytes", default = "default_array_bytes")]
    pub array_bytes: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_kernels")]
    pub kernels: Vec<Kernel>,
}

fn default_array_bytes() -> u64 {
    64 << 20
}

fn default_alpha() -> f64 {
    3.0
}

fn default_kernels() -> Vec<Kernel> {
    Kernel::ALL.to_vec()
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec {
            array_bytes: default_array_bytes(),
            alpha: default_alpha(),
            kernels: default_kernels(),
        }
    }
}

impl StreamSpec {
    pub fn elements(&self) -> u64 {
        self.array_bytes / 8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamArrays {
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

/// Element range `[lo, hi)` owned by `core` out of `cores`.
pub fn chunk(n: u64, core: usize, cores: usize) -> (u64, u64) {
    let per = n.div_ceil(cores as u64);
    let lo = (core as u64 * per).min(n);
    (lo, (lo + per).min(n))
}

struct InitStep {
    arr: StreamArrays,
    i: u64,
    hi: u64,
}

impl Step for InitStep {
    fn step(&mut self, port: &mut dyn DataPort, out: &mut VecDeque<Op>) -> Result<bool> {
        if self.i == self.hi {
            return Ok(false);
        }
        let off = self.i * 8;
        for (base, v) in [(self.arr.a, 1.0), (self.arr.b, 2.0), (self.arr.c, 0.0)] {
            port.write_f64(base + off, v)?;
            out.push_back(Op::Store { vaddr: base + off });
        }
        self.i += 1;
        Ok(true)
    }
}

struct KernelStep {
    kernel: Kernel,
    arr: StreamArrays,
    alpha: f64,
    i: u64,
    hi: u64,
}

impl Step for KernelStep {
    fn step(&mut self, port: &mut dyn DataPort, out: &mut VecDeque<Op>) -> Result<bool> {
        if self.i == self.hi {
            return Ok(false);
        }
        let off = self.i * 8;
        let StreamArrays { a, b, c } = self.arr;
        let load = |v: u64| Op::Load {
            vaddr: v + off,
            blocking: false,
        };
        match self.kernel {
            Kernel::Copy => {
                let x = port.read_f64(a + off)?;
                port.write_f64(c + off, x)?;
                out.extend([load(a), Op::Store { vaddr: c + off }]);
            }
            Kernel::Scale => {
                let x = port.read_f64(c + off)?;
                port.write_f64(b + off, self.alpha * x)?;
                out.extend([load(c), Op::Store { vaddr: b + off }]);
            }
            Kernel::Add => {
                let x = port.read_f64(a + off)?;
                let y = port.read_f64(b + off)?;
                port.write_f64(c + off, x + y)?;
                out.extend([load(a), load(b), Op::Store { vaddr: c + off }]);
            }
            Kernel::Triad => {
                let y = port.read_f64(b + off)?;
                let z = port.read_f64(c + off)?;
                port.write_f64(a + off, y + self.alpha * z)?;
                out.extend([load(b), load(c), Op::Store { vaddr: a + off }]);
            }
        }
        self.i += 1;
        Ok(true)
    }
}

pub fn init_programs(spec: &StreamSpec, arr: StreamArrays, cores: usize) -> Vec<Box<dyn Program>> {
    (0..cores)
        .map(|core| {
            let (lo, hi) = chunk(spec.elements(), core, cores);
            Box::new(Batched::new(InitStep { arr, i: lo, hi })) as Box<dyn Program>
        })
        .collect()
}

pub fn kernel_programs(
    spec: &StreamSpec,
    kernel: Kernel,
    arr: StreamArrays,
    cores: usize,
) -> Vec<Box<dyn Program>> {
    (0..cores)
        .map(|core| {
            let (lo, hi) = chunk(spec.elements(), core, cores);
            Box::new(Batched::new(KernelStep {
                kernel,
                arr,
                alpha: spec.alpha,
                i: lo,
                hi,
            })) as Box<dyn Program>
        })
        .collect()
}

/// Expected array values after running `kernels` in order from the
/// initial state (a=1, b=2, c=0).
pub fn expected_values(alpha: f64, kernels: &[Kernel]) -> (f64, f64, f64) {
    let (mut a, mut b, mut c) = (1.0, 2.0, 0.0);
    for k in kernels {
        match k {
            Kernel::Copy => c = a,
            Kernel::Scale => b = alpha * c,
            Kernel::Add => c = a + b,
            Kernel::Triad => a = b + alpha * c,
        }
    }
    (a, b, c)
}

/// Checks every element of the three arrays against `expected_values`.
pub fn verify(spec: &StreamSpec, arr: StreamArrays, port: &mut dyn DataPort) -> Result<bool> {
    let (ea, eb, ec) = expected_values(spec.alpha, &spec.kernels);
    for i in 0..spec.elements() {
        let off = i * 8;
        if port.read_f64(arr.a + off)? != ea
            || port.read_f64(arr.b + off)? != eb
            || port.read_f64(arr.c + off)? != ec
        {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_once() {
        let mut covered = 0;
        let mut prev = 0;
        for core in 0..3 {
            let (lo, hi) = chunk(10, core, 3);
            assert_eq!(lo, prev);
            covered += hi - lo;
            prev = hi;
        }
        assert_eq!(covered, 10);
        assert_eq!(chunk(2, 3, 8), (2, 2));
    }

    #[test]
    fn full_sequence_values() {
        assert_eq!(expected_values(3.0, &Kernel::ALL), (15.0, 3.0, 4.0));
    }
}
