//! Binary trajectory format: magic "SPDYTRAJ", u32 version, u64 sample
//! count T, u32 state dimension d, then T*d little-endian 64-bit floats
//! in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use specdyn_core::numerics::Matrix;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"SPDYTRAJ";
pub const VERSION: u32 = 1;

pub fn write_states(path: &Path, states: &Matrix) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(states.rows() as u64)?;
    w.write_u32::<LittleEndian>(states.cols() as u32)?;
    for &v in states.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_states(path: &Path) -> Result<Matrix> {
    let file = File::open(path)
        .map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    if &magic != MAGIC {
        return Err(CliError::io(format!("{} is not a trajectory file", path.display())));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(CliError::io(format!("unsupported trajectory version {version}")));
    }
    let t = r.read_u64::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    if t == 0 || d == 0 {
        return Err(CliError::io("trajectory file declares an empty shape".to_string()));
    }
    let mut data = vec![0.0f64; t * d];
    r.read_f64_into::<LittleEndian>(&mut data)
        .map_err(|e| CliError::io(format!("{}: truncated data: {e}", path.display())))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(CliError::io(format!("{}: trailing bytes after data", path.display())));
    }
    Ok(Matrix::from_vec(t, d, data))
}
