//! Model file layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "GTAFLOW\0"
//! version   u32      1
//! k         u32
//! cond_dim  u32
//! hidden    u32
//! seed      u64
//! n_params  u64
//! params    n_params × f64   (w1, b1, w2, b2, w3, b3; weights row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{FlowError, FlowModel, LossPoint};

pub const MAGIC: &[u8; 8] = b"GTAFLOW\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &FlowModel, mut w: W) -> Result<(), FlowError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in [model.k, model.cond_dim, model.hidden] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&model.seed.to_le_bytes())?;
    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for p in &model.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], FlowError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| FlowError::Format("truncated file".into()))?;
    Ok(b)
}

pub fn read_model<R: Read>(mut r: R) -> Result<FlowModel, FlowError> {
    if &take::<8, _>(&mut r)? != MAGIC {
        return Err(FlowError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(FlowError::Format(format!("unsupported version {version}")));
    }
    let k = u32::from_le_bytes(take(&mut r)?) as usize;
    let cond_dim = u32::from_le_bytes(take(&mut r)?) as usize;
    let hidden = u32::from_le_bytes(take(&mut r)?) as usize;
    let seed = u64::from_le_bytes(take(&mut r)?);
    let n = u64::from_le_bytes(take(&mut r)?) as usize;
    let mut model = FlowModel {
        k,
        cond_dim,
        hidden,
        seed,
        params: Vec::new(),
    };
    if k == 0 || hidden == 0 || n != model.param_count() {
        return Err(FlowError::Format(format!(
            "parameter count {n} does not match dims k={k} cond={cond_dim} hidden={hidden}"
        )));
    }
    model.params = (0..n)
        .map(|_| take(&mut r).map(f64::from_le_bytes))
        .collect::<Result<_, _>>()?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(FlowError::Format("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_model(model: &FlowModel, path: &Path) -> Result<(), FlowError> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FlowModel, FlowError> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Writes `step,loss` rows with a header.
pub fn write_loss_csv<W: Write>(curve: &[LossPoint], mut w: W) -> Result<(), FlowError> {
    writeln!(w, "step,loss")?;
    for p in curve {
        writeln!(w, "{},{}", p.step, p.loss)?;
    }
    Ok(())
}
