//! Flat binary checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "PPA1"
//! version      u32      1
//! vocab        u32
//! d_model      u32
//! n_heads      u32
//! n_layers     u32
//! max_len      u32
//! flags        u32      bit 0: zero_unembedding
//! rng_seed     u64
//! n_tensors    u32
//! shape table  n_tensors x { name_len u32, name utf8, rows u32, cols u32 }
//! data         every tensor's f64 values, row-major, in table order
//! ```
//!
//! Tensor order is the declaration order of [`ModelParams::tensors`].

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{PpaError, Result};

use super::params::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"PPA1";
pub const VERSION: u32 = 1;

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| PpaError::Checkpoint(format!("{v} does not fit in u32")))
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    let c = &params.config;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    for v in [c.vocab, c.d_model, c.n_heads, c.n_layers, c.max_len] {
        w.write_u32::<LittleEndian>(to_u32(v)?)?;
    }
    w.write_u32::<LittleEndian>(u32::from(c.zero_unembedding))?;
    w.write_u64::<LittleEndian>(params.rng_seed)?;
    let tensors = params.tensors();
    w.write_u32::<LittleEndian>(to_u32(tensors.len())?)?;
    for (name, t) in &tensors {
        w.write_u32::<LittleEndian>(to_u32(name.len())?)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(to_u32(t.rows())?)?;
        w.write_u32::<LittleEndian>(to_u32(t.cols())?)?;
    }
    for (_, t) in &tensors {
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PpaError::Checkpoint("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(PpaError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let flags = r.read_u32::<LittleEndian>()?;
    let rng_seed = r.read_u64::<LittleEndian>()?;
    let config = ModelConfig {
        vocab: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        n_layers: dims[3],
        max_len: dims[4],
        zero_unembedding: flags & 1 == 1,
    };
    config.validate()?;
    // a freshly built model supplies the expected table
    let mut params = ModelParams::init(config, rng_seed)?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut expected = params.tensors_mut();
    if n != expected.len() {
        return Err(PpaError::Checkpoint(format!(
            "{n} tensors in file, model has {}",
            expected.len()
        )));
    }
    for (name, t) in expected.iter() {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let found = String::from_utf8(buf).map_err(|e| PpaError::Checkpoint(e.to_string()))?;
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        if &found != name || (rows, cols) != t.shape() {
            return Err(PpaError::Checkpoint(format!(
                "expected {name} {:?}, found {found} {:?}",
                t.shape(),
                (rows, cols)
            )));
        }
    }
    for (name, t) in expected.iter_mut() {
        for v in t.data_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        if !t.is_finite() {
            return Err(PpaError::Checkpoint(format!(
                "{name} holds non-finite values"
            )));
        }
    }
    drop(expected);
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let cfg = ModelConfig {
            vocab: 9,
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            max_len: 5,
            zero_unembedding: false,
        };
        let p = ModelParams::init(cfg, 42).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"PPA1");
        assert_eq!(read_checkpoint(&bytes[..]).unwrap(), p);
        let expected_len = 4
            + 4 * 7
            + 8
            + 4
            + p.tensors().iter().map(|(n, _)| 12 + n.len()).sum::<usize>()
            + 8 * p.parameter_count();
        assert_eq!(bytes.len(), expected_len);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
