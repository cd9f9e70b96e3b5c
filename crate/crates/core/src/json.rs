//! Wire formats for memory snapshots, injections and check reports.
//!
//! Snapshots use the schema
//! `{"next_block": n, "blocks": [{"id", "lo", "hi", "cells": [{"off","val"}],
//! "perms": [{"off","max","cur"}]}]}` and round-trip bit-exactly. Injections
//! are a list `[{"src", "dst", "delta"}]`.

use crate::mem::{Block, BlockId, MemoryState, Permission, Value};
use serde_json::{json, Map, Value as Json};
use std::collections::BTreeMap;

pub fn value_to_json(v: &Value) -> Json {
    serde_json::to_value(v).expect("value serializes")
}

pub fn value_from_json(j: &Json) -> Result<Value, String> {
    serde_json::from_value(j.clone()).map_err(|e| e.to_string())
}

fn perm_name(p: Permission) -> &'static str {
    match p {
        Permission::Nonempty => "nonempty",
        Permission::Readable => "readable",
        Permission::Writable => "writable",
        Permission::Freeable => "freeable",
    }
}

fn perm_from_name(s: &str) -> Result<Permission, String> {
    match s {
        "nonempty" => Ok(Permission::Nonempty),
        "readable" => Ok(Permission::Readable),
        "writable" => Ok(Permission::Writable),
        "freeable" => Ok(Permission::Freeable),
        other => Err(format!("unknown permission {other:?}")),
    }
}

pub fn memory_to_json(m: &MemoryState) -> Json {
    let blocks: Vec<Json> = m
        .blocks
        .iter()
        .map(|(&id, blk)| {
            let cells: Vec<Json> = blk
                .cells
                .iter()
                .map(|(&off, v)| json!({ "off": off, "val": value_to_json(v) }))
                .collect();
            let perms: Vec<Json> = blk
                .perms
                .iter()
                .map(|(&off, &(max, cur))| {
                    json!({ "off": off, "max": perm_name(max), "cur": perm_name(cur) })
                })
                .collect();
            json!({ "id": id, "lo": blk.lo, "hi": blk.hi, "cells": cells, "perms": perms })
        })
        .collect();
    json!({ "next_block": m.next_block, "blocks": blocks })
}

fn get<'a>(obj: &'a Map<String, Json>, key: &str) -> Result<&'a Json, String> {
    obj.get(key).ok_or_else(|| format!("missing field {key:?}"))
}

fn as_i64(j: &Json) -> Result<i64, String> {
    j.as_i64().ok_or_else(|| format!("expected integer, got {j}"))
}

pub fn memory_from_json(j: &Json) -> Result<MemoryState, String> {
    let obj = j.as_object().ok_or("snapshot must be an object")?;
    let next_block = as_i64(get(obj, "next_block")?)? as BlockId;
    let mut blocks = BTreeMap::new();
    for bj in get(obj, "blocks")?.as_array().ok_or("blocks must be a list")? {
        let bo = bj.as_object().ok_or("block must be an object")?;
        let id = as_i64(get(bo, "id")?)? as BlockId;
        let lo = as_i64(get(bo, "lo")?)?;
        let hi = as_i64(get(bo, "hi")?)?;
        let mut cells = BTreeMap::new();
        for cj in get(bo, "cells")?.as_array().ok_or("cells must be a list")? {
            let co = cj.as_object().ok_or("cell must be an object")?;
            cells.insert(as_i64(get(co, "off")?)?, value_from_json(get(co, "val")?)?);
        }
        let mut perms = BTreeMap::new();
        for pj in get(bo, "perms")?.as_array().ok_or("perms must be a list")? {
            let po = pj.as_object().ok_or("perm must be an object")?;
            let max = perm_from_name(get(po, "max")?.as_str().ok_or("max must be a string")?)?;
            let cur = perm_from_name(get(po, "cur")?.as_str().ok_or("cur must be a string")?)?;
            perms.insert(as_i64(get(po, "off")?)?, (max, cur));
        }
        blocks.insert(id, Block { lo, hi, cells, perms });
    }
    Ok(MemoryState { next_block, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_roundtrip_bit_exact() {
        let (m, b) = MemoryState::empty().alloc(0, 16).unwrap();
        let m = m.store(b, 8, Value::ptr(b, 0)).unwrap();
        let m = m
            .set_perm(b, 0, Some((Permission::Writable, Permission::Readable)))
            .unwrap();
        let m = m.free(b, 2, 4).unwrap();
        let j = memory_to_json(&m);
        let back = memory_from_json(&j).unwrap();
        assert_eq!(m, back);
        assert_eq!(j, memory_to_json(&back));
    }
}
