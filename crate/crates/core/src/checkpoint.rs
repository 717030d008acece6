//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "SBMCKPT\0"
//! version    u32      1 = generative RBM, 2 = classification RBM
//! n_v, n_h   u32, u32
//! grid       u32, u32 (height, width)
//! spec       u32 length + UTF-8 structure spec, e.g. "M(3,2;4,2)"
//! dtype      u8       1 = little-endian f32
//! classes    u32      (version 2 only)
//! a, b, W    f32 arrays of n_v, n_h and nnz values (W in support order)
//! U, c       f32 arrays of C·n_h and C values (version 2 only)
//! ```
//!
//! All integers are little-endian. Values are stored as `f32`, so a loaded
//! model holds the `f32`-rounded parameters and re-saving it reproduces the
//! file byte for byte.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::classifier::ClassRbmParams;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rbm::RbmParams;
use crate::structure::{ConnectivityStructure, Grid, StructureSpec};

pub const MAGIC: &[u8; 8] = b"SBMCKPT\0";
pub const VERSION_GENERATIVE: u32 = 1;
pub const VERSION_CLASSIFIER: u32 = 2;
pub const DTYPE_F32_LE: u8 = 1;

fn write_f32s<W: Write>(out: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        out.write_f32::<LittleEndian>(x as f32)?;
    }
    Ok(())
}

fn read_f32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x = input
            .read_f32::<LittleEndian>()
            .map_err(|_| Error::Corrupted("checkpoint payload truncated".into()))?;
        out.push(f64::from(x));
    }
    Ok(out)
}

pub fn write_model<W: Write>(out: &mut W, model: &Model) -> Result<()> {
    let base = model.base();
    let s = base.structure();
    let version = match model {
        Model::Generative(_) => VERSION_GENERATIVE,
        Model::Classifier(_) => VERSION_CLASSIFIER,
    };
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(version)?;
    out.write_u32::<LittleEndian>(base.n_visible() as u32)?;
    out.write_u32::<LittleEndian>(base.n_hidden() as u32)?;
    out.write_u32::<LittleEndian>(s.grid().height as u32)?;
    out.write_u32::<LittleEndian>(s.grid().width as u32)?;
    let spec = s.spec().to_string();
    out.write_u32::<LittleEndian>(spec.len() as u32)?;
    out.write_all(spec.as_bytes())?;
    out.write_u8(DTYPE_F32_LE)?;
    if let Model::Classifier(c) = model {
        out.write_u32::<LittleEndian>(c.n_classes() as u32)?;
    }
    write_f32s(out, base.visible_bias())?;
    write_f32s(out, base.hidden_bias())?;
    write_f32s(out, base.weights())?;
    if let Model::Classifier(c) = model {
        write_f32s(out, c.class_weights())?;
        write_f32s(out, c.class_bias())?;
    }
    Ok(())
}

pub fn read_model(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor::new(bytes);
    let truncated = |_| Error::Corrupted("checkpoint header truncated".into());
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION_GENERATIVE && version != VERSION_CLASSIFIER {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_v = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let n_h = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let height = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let width = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let spec_len = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut spec = vec![0u8; spec_len];
    cur.read_exact(&mut spec).map_err(truncated)?;
    let spec: StructureSpec = String::from_utf8(spec)
        .map_err(|_| Error::Format("structure spec is not UTF-8".into()))?
        .parse()?;
    let dtype = cur.read_u8().map_err(truncated)?;
    if dtype != DTYPE_F32_LE {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let n_classes = if version == VERSION_CLASSIFIER {
        Some(cur.read_u32::<LittleEndian>().map_err(truncated)? as usize)
    } else {
        None
    };

    let structure = ConnectivityStructure::build(&spec, Grid::new(height, width))?;
    if structure.n_visible() != n_v || structure.n_hidden() != n_h {
        return Err(Error::Format(format!(
            "header says n_v = {n_v}, n_h = {n_h} but {spec} on {height}x{width} gives {} and {}",
            structure.n_visible(),
            structure.n_hidden()
        )));
    }
    let a = read_f32s(&mut cur, n_v)?;
    let b = read_f32s(&mut cur, n_h)?;
    let w = read_f32s(&mut cur, structure.nnz())?;
    let base = RbmParams::from_parts(Arc::new(structure), w, a, b)?;
    let model = match n_classes {
        None => Model::Generative(base),
        Some(c) => {
            let u = read_f32s(&mut cur, c * n_h)?;
            let cb = read_f32s(&mut cur, c)?;
            Model::Classifier(ClassRbmParams::from_parts(base, u, cb)?)
        }
    };
    if (cur.position() as usize) != bytes.len() {
        return Err(Error::Corrupted("trailing bytes after checkpoint payload".into()));
    }
    Ok(model)
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    write_model(&mut out, model).expect("writing to a Vec cannot fail");
    out
}

pub fn save(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    read_model(&fs::read(path)?)
}
