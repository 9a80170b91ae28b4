//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `GAMPOL`, format version `u16`, then
//! `hidden`, `input_dim` and `max_gen_len` as `u32`, the parameter count as
//! `u64`, and the flat parameter vector as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PolicyHyper, PolicyParams, INPUT_DIM};
use crate::error::{GamError, Result};

const MAGIC: &[u8; 6] = b"GAMPOL";
const VERSION: u16 = 1;

pub fn write_policy<W: Write>(mut out: W, params: &PolicyParams) -> Result<()> {
    let hyper = params.hyper();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(hyper.hidden as u32).to_le_bytes())?;
    out.write_all(&(INPUT_DIM as u32).to_le_bytes())?;
    out.write_all(&(hyper.max_gen_len as u32).to_le_bytes())?;
    out.write_all(&(params.flat().len() as u64).to_le_bytes())?;
    for v in params.flat() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_policy<R: Read>(mut input: R) -> Result<PolicyParams> {
    let bad = |detail: String| GamError::Format { what: "policy checkpoint", detail };
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut b2 = [0u8; 2];
    input.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut b4 = [0u8; 4];
    let mut read_u32 = |input: &mut R| -> Result<usize> {
        input.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4) as usize)
    };
    let hidden = read_u32(&mut input)?;
    let input_dim = read_u32(&mut input)?;
    let max_gen_len = read_u32(&mut input)?;
    if input_dim != INPUT_DIM {
        return Err(bad(format!("input dimension {input_dim}, expected {INPUT_DIM}")));
    }
    let hyper = PolicyHyper { hidden, max_gen_len };
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    if count != hyper.num_params() || hidden == 0 {
        return Err(bad(format!("{count} parameters do not fit hidden size {hidden}")));
    }
    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut b8)?;
        theta.push(f64::from_le_bytes(b8));
    }
    let params = PolicyParams::from_flat(hyper, theta);
    if !params.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_policy(path: &Path, params: &PolicyParams) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_policy(&mut out, params)?;
    out.flush()?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    read_policy(BufReader::new(File::open(path)?))
}

/// Human-readable companion to a checkpoint.
pub fn write_manifest(path: &Path, params: &PolicyParams, seed: u64, trace: &str) -> Result<()> {
    let hyper = params.hyper();
    let text = format!(
        "format=GAMPOL v{VERSION}\nhidden={}\ninput_dim={INPUT_DIM}\nmax_gen_len={}\nparams={}\nseed={seed}\ntrace={trace}\n",
        hyper.hidden,
        hyper.max_gen_len,
        params.flat().len(),
    );
    std::fs::write(path, text)?;
    Ok(())
}
