//! DMF1 checkpoint format: a magic tag, a JSON header carrying the model
//! configuration and vocabularies, then named little-endian f32 tensor
//! sections in the fixed visitation order.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{DmfError, Result};
use crate::model::{ModelConfig, ModelParams};

const CKPT_MAGIC: &[u8; 4] = b"DMF1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    item_ids: Vec<u64>,
    user_ids: Vec<u64>,
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let mut scratch = params.clone();
    let header = Header {
        config: params.config.clone(),
        item_ids: params.items.ids().to_vec(),
        user_ids: params.profiles.ids().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(json.len() as u32)?;
    w.write_all(&json)?;

    let shapes = scratch.tensor_shapes();
    w.write_u32::<LittleEndian>(shapes.len() as u32)?;
    let mut shape_iter = shapes.iter();
    let mut io_err: Option<std::io::Error> = None;
    scratch.visit_tensors_mut(|name, data| {
        if io_err.is_some() {
            return;
        }
        let (sname, dims) = shape_iter.next().expect("shape list matches visitation order");
        debug_assert_eq!(sname, name);
        let r = (|| -> std::io::Result<()> {
            let bytes = name.as_bytes();
            w.write_u32::<LittleEndian>(bytes.len() as u32)?;
            w.write_all(bytes)?;
            w.write_u32::<LittleEndian>(dims.len() as u32)?;
            for &d in dims {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &x in data.iter() {
                w.write_f32::<LittleEndian>(x)?;
            }
            Ok(())
        })();
        if let Err(e) = r {
            io_err = Some(e);
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(DmfError::BadFormat("missing DMF1 magic".into()));
    }
    let json_len = r.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    // build a zero-seeded skeleton with the right shapes, then fill tensors
    let mut params = ModelParams::<f32>::init(header.config, header.item_ids, header.user_ids, 0)?;

    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut tensors: Vec<(String, Vec<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| DmfError::BadFormat("tensor name is not UTF-8".into()))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut n = 1usize;
        for _ in 0..rank {
            n *= r.read_u64::<LittleEndian>()? as usize;
        }
        let mut data = vec![0f32; n];
        for x in data.iter_mut() {
            *x = r.read_f32::<LittleEndian>()?;
        }
        tensors.push((name, data));
    }

    let mut i = 0usize;
    let mut err: Option<DmfError> = None;
    params.visit_tensors_mut(|name, dst| {
        if err.is_some() {
            return;
        }
        match tensors.get(i) {
            Some((tname, data)) if tname == name && data.len() == dst.len() => {
                dst.copy_from_slice(data);
            }
            Some((tname, data)) => {
                err = Some(DmfError::BadFormat(format!(
                    "tensor {}: expected '{}' with {} values, found '{}' with {}",
                    i,
                    name,
                    dst.len(),
                    tname,
                    data.len()
                )));
            }
            None => err = Some(DmfError::BadFormat(format!("missing tensor '{}'", name))),
        }
        i += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if i != tensors.len() {
        return Err(DmfError::BadFormat(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            i
        )));
    }
    Ok(params)
}
