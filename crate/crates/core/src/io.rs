//! Binary wavefunction snapshots.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0  | 8 | magic `PTRSNAP1` |
//! | 8  | 8 | `n` (u64) |
//! | 16 | 8 | `x0` (f64) |
//! | 24 | 8 | `dx` (f64) |
//! | 32 | 8 | `t` (f64) |
//! | 40 | 16 n | `re, im` pairs (f64) |

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Grid, WaveFunction, C64};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"PTRSNAP1";
const HEADER_LEN: usize = 40;

pub fn write_snapshot<W: Write>(out: &mut W, t: f64, psi: &WaveFunction) -> Result<()> {
    let g = psi.grid();
    let mut buf = Vec::with_capacity(HEADER_LEN + 16 * g.n());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(g.n() as u64).to_le_bytes());
    buf.extend_from_slice(&g.x0().to_le_bytes());
    buf.extend_from_slice(&g.dx().to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    for a in psi.amps() {
        buf.extend_from_slice(&a.re.to_le_bytes());
        buf.extend_from_slice(&a.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Returns the snapshot time and state.
pub fn read_snapshot<R: Read>(input: &mut R) -> Result<(f64, WaveFunction)> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header)?;
    if &header[..8] != SNAPSHOT_MAGIC {
        return Err(Error::Config("not a snapshot file (bad magic)".into()));
    }
    let word = |i: usize| -> [u8; 8] { header[8 * i..8 * i + 8].try_into().expect("8 bytes") };
    let n = usize::try_from(u64::from_le_bytes(word(1)))
        .map_err(|_| Error::Config("snapshot length does not fit in memory".into()))?;
    let x0 = f64::from_le_bytes(word(2));
    let dx = f64::from_le_bytes(word(3));
    let t = f64::from_le_bytes(word(4));
    let grid = Grid::new(n, x0, dx)?;
    let mut body = vec![0u8; 16 * n];
    input.read_exact(&mut body)?;
    let amps = body
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            )
        })
        .collect();
    Ok((t, WaveFunction::from_raw(grid, amps)?))
}
