//! Binary checkpoint for the four CycleGAN networks.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes  "DGPCKPT1"
//! step       u64      optimizer steps taken
//! count      u32      number of network blocks
//! per block:
//!   kind     u8       0 = generator, 1 = discriminator
//!   n_sizes  u32      followed by n_sizes x u32 layer sizes
//!   tap_s    u32      generator only (0 for discriminators)
//!   tap_z    u32      generator only (0 for discriminators)
//!   residual u8       generator only (0 for discriminators)
//!   n_params u64      followed by n_params x f64 parameters
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::{Discriminator, Generator, GeneratorArch};

pub const MAGIC: &[u8; 8] = b"DGPCKPT1";

#[derive(Debug, Clone)]
pub enum Network {
    Generator(Generator),
    Discriminator(Discriminator),
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub networks: Vec<Network>,
}

fn write_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.step.to_le_bytes());
        write_u32(&mut out, self.networks.len());
        for net in &self.networks {
            let (kind, mlp, taps, residual) = match net {
                Network::Generator(g) => {
                    let a = g.arch();
                    (0u8, g.mlp(), (a.tap_s, a.tap_z), a.residual)
                }
                Network::Discriminator(d) => (1u8, d.mlp(), (0, 0), false),
            };
            out.push(kind);
            write_u32(&mut out, mlp.sizes().len());
            for &s in mlp.sizes() {
                write_u32(&mut out, s);
            }
            write_u32(&mut out, taps.0);
            write_u32(&mut out, taps.1);
            out.push(residual as u8);
            out.extend_from_slice(&(mlp.params().len() as u64).to_le_bytes());
            for p in mlp.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(8)? != MAGIC {
            return Err(Error::malformed(origin, "bad magic"));
        }
        let step = r.u64()?;
        let count = r.u32()?;
        let mut networks = Vec::with_capacity(count.min(16));
        for _ in 0..count {
            let kind = r.take(1)?[0];
            let n_sizes = r.u32()?;
            if n_sizes < 2 {
                return Err(Error::malformed(origin, "network needs at least two sizes"));
            }
            let sizes = (0..n_sizes).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let tap_s = r.u32()?;
            let tap_z = r.u32()?;
            let residual = r.take(1)?[0] != 0;
            let n_params = r.u64()? as usize;
            let mut net = match kind {
                0 => {
                    let arch = GeneratorArch {
                        input_len: sizes[0],
                        hidden: sizes[1..sizes.len() - 1].to_vec(),
                        tap_s,
                        tap_z,
                        residual,
                    };
                    Network::Generator(
                        Generator::zeros(arch)
                            .map_err(|e| Error::malformed(origin, e.to_string()))?,
                    )
                }
                1 => Network::Discriminator(
                    Discriminator::zeros(sizes[0], &sizes[1..sizes.len() - 1])
                        .map_err(|e| Error::malformed(origin, e.to_string()))?,
                ),
                k => {
                    return Err(Error::malformed(
                        origin,
                        format!("unknown network kind {k}"),
                    ))
                }
            };
            let mlp = match &mut net {
                Network::Generator(g) => g.mlp_mut(),
                Network::Discriminator(d) => d.mlp_mut(),
            };
            if mlp.params().len() != n_params {
                return Err(Error::malformed(
                    origin,
                    format!(
                        "expected {} parameters, header says {n_params}",
                        mlp.params().len()
                    ),
                ));
            }
            let n_bytes = n_params
                .checked_mul(8)
                .ok_or_else(|| Error::malformed(origin, "parameter count overflows"))?;
            let raw = r.take(n_bytes)?;
            for (p, chunk) in mlp.params_mut().iter_mut().zip(raw.chunks_exact(8)) {
                *p = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
            networks.push(net);
        }
        if r.pos != bytes.len() {
            return Err(Error::malformed(origin, "trailing bytes"));
        }
        Ok(Checkpoint { step, networks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes, path)
    }

    /// `index`-th generator in file order; 0 is the restoration network.
    pub fn generator(&self, index: usize) -> Option<&Generator> {
        self.networks
            .iter()
            .filter_map(|n| match n {
                Network::Generator(g) => Some(g),
                _ => None,
            })
            .nth(index)
    }

    pub fn discriminator(&self, index: usize) -> Option<&Discriminator> {
        self.networks
            .iter()
            .filter_map(|n| match n {
                Network::Discriminator(d) => Some(d),
                _ => None,
            })
            .nth(index)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::malformed(self.origin, "truncated")),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
