use std::collections::HashMap;
use std::io::{Read, Write};

use super::model::Kind;
use super::{Encoder, Model, PolicyError};

const MAGIC: &[u8; 8] = b"TOKRLCKP";
const VERSION: u32 = 1;

fn put_u64<W: Write>(w: &mut W, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64, PolicyError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Writes `model` as: magic, version, backend tag, 16-byte vocabulary hash, dims
/// `(n_obs, vocab, max_len, hidden, out)`, the tabular key table, then the
/// little-endian `f64` parameter vector.
pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &Model,
    vocab_hash: &str,
) -> Result<(), PolicyError> {
    let hash = vocab_hash.as_bytes();
    if hash.len() != 16 {
        return Err(PolicyError::Checkpoint(format!(
            "vocabulary hash must be 16 bytes, got {}",
            hash.len()
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let (tag, hidden) = match model.kind {
        Kind::Tabular { .. } => (0u8, 0),
        Kind::SmallNet { hidden } => (1u8, hidden),
    };
    w.write_all(&[tag])?;
    w.write_all(hash)?;
    let e = &model.encoder;
    for d in [e.n_obs, e.vocab, e.max_len, hidden, model.out_dim] {
        put_u64(&mut w, d as u64)?;
    }
    let keys = model.tabular_keys().unwrap_or(&[]);
    put_u64(&mut w, keys.len() as u64)?;
    for k in keys {
        put_u64(&mut w, k.len() as u64)?;
        for &x in k {
            put_u64(&mut w, x)?;
        }
    }
    put_u64(&mut w, model.params.len() as u64)?;
    for p in &model.params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint, returning the model and its vocabulary hash.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Model, String), PolicyError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PolicyError::Checkpoint("bad magic".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    if u32::from_le_bytes(v) != VERSION {
        return Err(PolicyError::Checkpoint("unsupported version".into()));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let mut hash = [0u8; 16];
    r.read_exact(&mut hash)?;
    let hash = String::from_utf8(hash.to_vec())
        .map_err(|_| PolicyError::Checkpoint("vocabulary hash is not UTF-8".into()))?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = get_u64(&mut r)? as usize;
    }
    let [n_obs, vocab, max_len, hidden, out_dim] = dims;
    let encoder = Encoder::new(n_obs, vocab, max_len);
    let n_keys = get_u64(&mut r)? as usize;
    let mut keys = Vec::with_capacity(n_keys.min(1 << 20));
    for _ in 0..n_keys {
        let len = get_u64(&mut r)? as usize;
        if len > max_len + 1 {
            return Err(PolicyError::Checkpoint("key longer than max_len".into()));
        }
        let k = (0..len).map(|_| get_u64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        keys.push(k);
    }
    let n = get_u64(&mut r)? as usize;
    let mut params = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        params.push(f64::from_le_bytes(b));
    }
    let kind = match tag[0] {
        0 => {
            if n != keys.len() * out_dim {
                return Err(PolicyError::Checkpoint("parameter count mismatch".into()));
            }
            let rows: HashMap<Vec<u64>, usize> =
                keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
            Kind::Tabular { rows, keys }
        }
        1 => {
            let d = encoder.input_dim();
            if n != d * hidden + hidden + out_dim * hidden + out_dim {
                return Err(PolicyError::Checkpoint("parameter count mismatch".into()));
            }
            Kind::SmallNet { hidden }
        }
        t => return Err(PolicyError::Checkpoint(format!("unknown backend tag {t}"))),
    };
    Ok((
        Model {
            encoder,
            out_dim,
            kind,
            params,
        },
        hash,
    ))
}
