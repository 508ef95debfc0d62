//! Versioned binary checkpoints: config header plus raw little-endian f64
//! parameter blocks. Round-trips are bit-exact.

use std::io::Read;
use std::path::Path;

use super::{IpaModel, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IPACKPT1";

/// Writes the model to `path`.
pub fn save_checkpoint(model: &IpaModel, path: &Path) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    let config = serde_json::to_vec(&model.config)
        .map_err(|e| Error::Data(format!("config serialization: {e}")))?;
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);

    let blocks = model.params.blocks();
    out.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
    for block in blocks {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for &v in block.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_u64(reader: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Reads a model back from `path`, validating the layout against the
/// embedded config.
pub fn load_checkpoint(path: &Path) -> Result<IpaModel> {
    let file = std::fs::File::open(path)?;
    let mut reader = std::io::BufReader::new(file);

    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!(
            "not a model checkpoint: bad magic {magic:?}"
        )));
    }
    let config_len = read_u64(&mut reader)? as usize;
    let mut config_buf = vec![0u8; config_len];
    reader.read_exact(&mut config_buf)?;
    let config: ModelConfig = serde_json::from_slice(&config_buf)
        .map_err(|e| Error::Data(format!("checkpoint config: {e}")))?;

    // Use a freshly shaped model as the layout template, then overwrite
    // every block with the stored values.
    let mut model = IpaModel::new(config, 0)?;
    let n_blocks = read_u64(&mut reader)? as usize;
    let mut blocks = model.params.blocks_mut();
    if n_blocks != blocks.len() {
        return Err(Error::Data(format!(
            "checkpoint has {n_blocks} blocks, config implies {}",
            blocks.len()
        )));
    }
    for (bi, block) in blocks.iter_mut().enumerate() {
        let len = read_u64(&mut reader)? as usize;
        if len != block.len() {
            return Err(Error::Data(format!(
                "checkpoint block {bi} has {len} values, config implies {}",
                block.len()
            )));
        }
        for v in block.iter_mut() {
            let mut buf = [0u8; 8];
            reader.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Data(format!(
            "checkpoint has {} trailing bytes",
            rest.len()
        )));
    }
    Ok(model)
}
