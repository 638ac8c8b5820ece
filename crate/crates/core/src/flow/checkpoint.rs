//! Checkpoint format: magic "UFLW", u32 version, u32 tensor count, then per
//! tensor a u32 name length, the UTF-8 name, u32 rank, u32 dims, and f32
//! data. Little-endian throughout.

use std::io::{Read, Write};

use super::model::{FlowConfig, FlowModel};
use super::FlowError;

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<W: Write>(model: &FlowModel, w: &mut W) -> Result<(), FlowError> {
    let names = model.param_names();
    let mats = model.param_mats();
    w.write_all(b"UFLW")?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(mats.len() as u32).to_le_bytes())?;
    for (name, mat) in names.iter().zip(mats) {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(mat.rows as u32).to_le_bytes())?;
        w.write_all(&(mat.cols as u32).to_le_bytes())?;
        for v in &mat.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Rebuilds a model of the given config and fills its parameters from the
/// checkpoint. Tensor names and shapes must match the config exactly.
pub fn load_checkpoint<R: Read>(config: FlowConfig, r: &mut R) -> Result<FlowModel, FlowError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"UFLW" {
        return Err(FlowError::Format("bad magic, expected UFLW".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(FlowError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(r)? as usize;

    let mut model = FlowModel::init(config, 0);
    let names = model.param_names();
    if count != names.len() {
        return Err(FlowError::Format(format!(
            "checkpoint has {count} tensors, model expects {}",
            names.len()
        )));
    }
    let mut mats = model.param_mats_mut();
    let mut filled = vec![false; names.len()];
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| FlowError::Format(format!("bad tensor name: {e}")))?;
        let idx = names
            .iter()
            .position(|n| n == &name)
            .ok_or_else(|| FlowError::Format(format!("unknown tensor \"{name}\"")))?;
        if filled[idx] {
            return Err(FlowError::Format(format!("duplicate tensor \"{name}\"")));
        }
        let rank = read_u32(r)?;
        if rank != 2 {
            return Err(FlowError::Format(format!(
                "tensor \"{name}\" has rank {rank}, expected 2"
            )));
        }
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let mat = &mut mats[idx];
        if rows != mat.rows || cols != mat.cols {
            return Err(FlowError::Format(format!(
                "tensor \"{name}\" is {rows}x{cols}, model expects {}x{}",
                mat.rows, mat.cols
            )));
        }
        for v in mat.data.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b) as f64;
        }
        filled[idx] = true;
    }
    drop(mats);
    Ok(model)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FlowError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
