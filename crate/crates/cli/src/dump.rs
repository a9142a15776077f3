//! JSON instance dumps. Vectors and matrices are base64 of little-endian `f64`;
//! matrices are stored row-major.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::DMatrix;
use replica_core::simulator::LinearModelInstance;
use serde_json::{json, Value};

fn encode(values: impl IntoIterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str) -> Option<Vec<f64>> {
    let bytes = STANDARD.decode(text).ok()?;
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub fn dump_instance(inst: &LinearModelInstance) -> Value {
    let rows = (0..inst.m).flat_map(|i| (0..inst.n).map(move |j| (i, j))).map(|(i, j)| inst.a[(i, j)]);
    json!({
        "n": inst.n,
        "m": inst.m,
        "seed": inst.seed,
        "index": inst.index,
        "encoding": "base64-f64le",
        "a": { "rows": inst.m, "cols": inst.n, "order": "row-major", "data": encode(rows) },
        "snr": encode(inst.snr.iter().copied()),
        "x": encode(inst.x.iter().copied()),
        "y": encode(inst.y.iter().copied()),
    })
}

pub fn load_instance(v: &Value) -> Option<LinearModelInstance> {
    let n = v["n"].as_u64()? as usize;
    let m = v["m"].as_u64()? as usize;
    let data = decode(v["a"]["data"].as_str()?)?;
    if data.len() != n * m {
        return None;
    }
    let vec = |k: &str, len: usize| decode(v[k].as_str()?).filter(|x| x.len() == len);
    Some(LinearModelInstance {
        n,
        m,
        a: DMatrix::from_row_slice(m, n, &data),
        snr: vec("snr", n)?,
        x: vec("x", n)?,
        y: vec("y", m)?,
        seed: v["seed"].as_u64()?,
        index: v["index"].as_u64()?,
    })
}
