//! Memory injections: partial functional maps from source blocks to
//! shifted target blocks, the value/memory injection checks, composition,
//! the public/private classification and the read-reachability closure.

use crate::mem::{BlockId, MemoryState, PermKind, Permission, Value};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// A partial map `BlockId -> (BlockId, delta)`. At most one image per
/// source block; deltas are unrestricted integers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Meminj {
    map: BTreeMap<BlockId, (BlockId, i64)>,
}

impl Meminj {
    pub fn empty() -> Meminj {
        Meminj::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (BlockId, (BlockId, i64))>) -> Meminj {
        Meminj { map: pairs.into_iter().collect() }
    }

    /// Identity on the valid blocks of `m`.
    pub fn identity_on(m: &MemoryState) -> Meminj {
        Meminj { map: m.valid_blocks().map(|b| (b, (b, 0))).collect() }
    }

    pub fn get(&self, b: BlockId) -> Option<(BlockId, i64)> {
        self.map.get(&b).copied()
    }

    pub fn insert(&mut self, b: BlockId, target: (BlockId, i64)) {
        self.map.insert(b, target);
    }

    pub fn remove(&mut self, b: BlockId) {
        self.map.remove(&b);
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockId, (BlockId, i64))> + '_ {
        self.map.iter().map(|(&b, &t)| (b, t))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Every mapping of `self` is present in `other`.
    pub fn subset_of(&self, other: &Meminj) -> bool {
        self.iter().all(|(b, t)| other.get(b) == Some(t))
    }

    /// All mappings have the shape `b -> (b, 0)`.
    pub fn is_identity_shaped(&self) -> bool {
        self.iter().all(|(b, (b2, d))| b == b2 && d == 0)
    }

    pub fn to_json(&self) -> Json {
        Json::Array(
            self.iter()
                .map(|(b, (b2, d))| json!({ "src": b, "dst": b2, "delta": d }))
                .collect(),
        )
    }

    pub fn from_json(j: &Json) -> Result<Meminj, String> {
        let arr = j.as_array().ok_or("injection must be a list")?;
        let mut map = BTreeMap::new();
        for e in arr {
            let o = e.as_object().ok_or("mapping must be an object")?;
            let src = o.get("src").and_then(Json::as_i64).ok_or("missing src")? as BlockId;
            let dst = o.get("dst").and_then(Json::as_i64).ok_or("missing dst")? as BlockId;
            let delta = o.get("delta").and_then(Json::as_i64).ok_or("missing delta")?;
            map.insert(src, (dst, delta));
        }
        Ok(Meminj { map })
    }
}

impl fmt::Display for Meminj {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (b, (b2, d))) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{b}->({b2},{d})")?;
        }
        write!(f, "}}")
    }
}

/// `(j23 . j12)(b) = (b3, d12 + d23)` when both legs are defined.
pub fn compose_inj(j12: &Meminj, j23: &Meminj) -> Meminj {
    let mut out = Meminj::empty();
    for (b1, (b2, d12)) in j12.iter() {
        if let Some((b3, d23)) = j23.get(b2) {
            out.insert(b1, (b3, d12 + d23));
        }
    }
    out
}

/// `v2` is the image of `v1` under `j`: undefined sources relate to
/// anything, scalars to themselves, pointers shift by the block delta.
pub fn value_inject_check(j: &Meminj, v1: &Value, v2: &Value) -> bool {
    match v1 {
        Value::Undef => true,
        Value::Int { .. } => v1 == v2,
        Value::Ptr { b, o } => match j.get(*b) {
            Some((b2, d)) => *v2 == Value::ptr(b2, o + d),
            None => false,
        },
    }
}

/// Canonical witness for [`value_inject_check`]: the shifted value, absent
/// when a pointer's block is unmapped.
pub fn value_transport(j: &Meminj, v1: &Value) -> Option<Value> {
    match v1 {
        Value::Undef => Some(Value::Undef),
        Value::Int { .. } => Some(*v1),
        Value::Ptr { b, o } => j.get(*b).map(|(b2, d)| Value::ptr(b2, o + d)),
    }
}

/// One violated clause together with a witness position or description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub clause: String,
    pub witness: String,
}

/// Outcome of a multi-clause check: empty means every clause passed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckReport {
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, clause: impl Into<String>, witness: impl Into<String>) {
        self.violations.push(Violation { clause: clause.into(), witness: witness.into() });
    }

    pub fn merge(&mut self, other: CheckReport) {
        self.violations.extend(other.violations);
    }

    pub fn to_json(&self) -> Json {
        serde_json::to_value(self).expect("report serializes")
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            write!(f, "ok")
        } else {
            for v in &self.violations {
                writeln!(f, "clause {}: {}", v.clause, v.witness)?;
            }
            Ok(())
        }
    }
}

/// Check the six clauses of a memory injection `m1 -[j]-> m2` by
/// enumerating the finite footprints. Violations are data, not errors.
///
/// 1. permissions are preserved for both kinds;
/// 2. values at Cur-Readable mapped positions inject;
/// 3. invalid source blocks are unmapped;
/// 4. the range of `j` contains only valid blocks;
/// 5. distinct Max-Nonempty sources do not overlap in the target;
/// 6. a mapped target permission reflects back to the source unless the
///    source position carries no Max permission at all.
pub fn mem_inj_check(j: &Meminj, m1: &MemoryState, m2: &MemoryState) -> CheckReport {
    let mut report = CheckReport::default();

    for (b1, (b2, d)) in j.iter() {
        if let Some(blk1) = m1.blocks.get(&b1) {
            for (&o1, &(max, cur)) in &blk1.perms {
                let o2 = o1 + d;
                for (kind, p) in [(PermKind::Max, max), (PermKind::Cur, cur)] {
                    if !m2.perm_at(b2, o2, kind, p) {
                        report.push(
                            "1",
                            format!("({b1},{o1}) has {p:?} but ({b2},{o2}) does not"),
                        );
                    }
                }
                if cur >= Permission::Readable {
                    let v1 = m1.value_at(b1, o1);
                    let v2 = m2.value_at(b2, o2);
                    if !value_inject_check(j, &v1, &v2) {
                        report.push(
                            "2",
                            format!("m1[{b1},{o1}]={v1} does not inject to m2[{b2},{o2}]={v2}"),
                        );
                    }
                }
            }
        }
    }

    for (b1, (b2, _)) in j.iter() {
        if !m1.valid_block(b1) {
            report.push("3", format!("invalid source block {b1} is mapped"));
        }
        if !m2.valid_block(b2) {
            report.push("4", format!("target block {b2} is not valid"));
        }
    }

    let sources = m1.max_nonempty_positions();
    for (i, &(b1, o1)) in sources.iter().enumerate() {
        let Some((t1, d1)) = j.get(b1) else { continue };
        for &(b1x, o1x) in &sources[i + 1..] {
            if b1 == b1x {
                continue;
            }
            let Some((t2, d2)) = j.get(b1x) else { continue };
            if t1 == t2 && o1 + d1 == o1x + d2 {
                report.push(
                    "5",
                    format!("({b1},{o1}) and ({b1x},{o1x}) overlap at ({t1},{})", o1 + d1),
                );
            }
        }
    }

    for (b1, (b2, d)) in j.iter() {
        let Some(blk2) = m2.blocks.get(&b2) else { continue };
        for (&o2, &(max2, cur2)) in &blk2.perms {
            let o1 = o2 - d;
            if !m1.perm_at(b1, o1, PermKind::Max, Permission::Nonempty) {
                continue;
            }
            let src_ok = m1.perm_at(b1, o1, PermKind::Max, max2)
                && m1.perm_at(b1, o1, PermKind::Cur, cur2);
            if !src_ok {
                report.push(
                    "6",
                    format!("({b2},{o2}) has perms not reflected at ({b1},{o1})"),
                );
            }
        }
    }

    report
}

/// Side of an injection a position is classified on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Classification of a position with respect to an injection: source
/// positions are `Unmapped` or `MappedPublic`; target positions are
/// `OutOfReach` (no live preimage) or `InReach`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionClass {
    Unmapped,
    MappedPublic,
    OutOfReach,
    InReach,
}

pub fn classify_position(
    j: &Meminj,
    m_src: &MemoryState,
    side: Side,
    b: BlockId,
    o: i64,
) -> PositionClass {
    match side {
        Side::Source => {
            if j.get(b).is_none() {
                PositionClass::Unmapped
            } else {
                PositionClass::MappedPublic
            }
        }
        Side::Target => {
            if out_of_reach(j, m_src, b, o) {
                PositionClass::OutOfReach
            } else {
                PositionClass::InReach
            }
        }
    }
}

/// Target position `(b2, o2)` has no Max-Nonempty source preimage under `j`.
pub fn out_of_reach(j: &Meminj, m_src: &MemoryState, b2: BlockId, o2: i64) -> bool {
    for (b1, (t, d)) in j.iter() {
        if t == b2 && m_src.perm_at(b1, o2 - d, PermKind::Max, Permission::Nonempty) {
            return false;
        }
    }
    true
}

/// Source position is unmapped by `j` (private on the source side).
pub fn unmapped(j: &Meminj, b: BlockId) -> bool {
    j.get(b).is_none()
}

/// Each mapping of `j2` missing from `j` only relates blocks invalid in the
/// respective memories: the injection grew by fresh blocks alone.
pub fn inj_sep_check(j: &Meminj, j2: &Meminj, m1: &MemoryState, m2: &MemoryState) -> bool {
    inj_sep_witness(j, j2, m1, m2).is_none()
}

pub fn inj_sep_witness(
    j: &Meminj,
    j2: &Meminj,
    m1: &MemoryState,
    m2: &MemoryState,
) -> Option<String> {
    for (b1, (b2, _)) in j2.iter() {
        if j.get(b1).is_some() {
            continue;
        }
        if m1.valid_block(b1) {
            return Some(format!("new mapping {b1} is valid in the source"));
        }
        if m2.valid_block(b2) {
            return Some(format!("new mapping target {b2} is valid in the target"));
        }
    }
    None
}

/// Least set of blocks reachable from the root positions by repeatedly
/// loading Cur-Readable cells that hold pointers. Root blocks are always
/// included; of a root block only the given positions are followed, while a
/// block reached through a pointer exposes all of its readable cells.
pub fn reach_closure(m: &MemoryState, roots: &[(BlockId, i64)]) -> BTreeSet<BlockId> {
    let mut reached: BTreeSet<BlockId> = roots.iter().map(|&(b, _)| b).collect();
    let mut scanned: BTreeSet<BlockId> = BTreeSet::new();
    let mut frontier: Vec<(BlockId, i64)> = roots.to_vec();
    while let Some((b, o)) = frontier.pop() {
        if !m.perm_at(b, o, PermKind::Cur, Permission::Readable) {
            continue;
        }
        if let Value::Ptr { b: b2, .. } = m.value_at(b, o) {
            reached.insert(b2);
            if scanned.insert(b2) {
                if let Some(blk) = m.blocks.get(&b2) {
                    for &o2 in blk.cells.keys() {
                        frontier.push((b2, o2));
                    }
                }
            }
        }
    }
    reached
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::MemoryState;

    fn two_block_mem() -> (MemoryState, BlockId, BlockId) {
        let (m, b1) = MemoryState::empty().alloc(0, 16).unwrap();
        let (m, b2) = m.alloc(0, 8).unwrap();
        (m, b1, b2)
    }

    #[test]
    fn value_injection_cases() {
        let j = Meminj::from_pairs([(1, (2, 4))]);
        assert!(value_inject_check(&j, &Value::ptr(1, 8), &Value::ptr(2, 12)));
        assert!(value_inject_check(&j, &Value::Undef, &Value::ptr(9, 3)));
        assert!(!value_inject_check(&j, &Value::int(5), &Value::int(6)));
        assert!(value_inject_check(&j, &Value::int(5), &Value::int(5)));
        assert!(!value_inject_check(&j, &Value::ptr(3, 0), &Value::ptr(3, 0)));
    }

    #[test]
    fn transport_cases() {
        let j = Meminj::from_pairs([(1, (2, 4))]);
        assert_eq!(value_transport(&j, &Value::int(42)), Some(Value::int(42)));
        assert_eq!(value_transport(&j, &Value::ptr(7, 0)), None);
        assert_eq!(value_transport(&j, &Value::ptr(1, 8)), Some(Value::ptr(2, 12)));
        let v = value_transport(&j, &Value::ptr(1, 8)).unwrap();
        assert!(value_inject_check(&j, &Value::ptr(1, 8), &v));
    }

    #[test]
    fn compose_adds_deltas() {
        let j12 = Meminj::from_pairs([(1, (2, 4))]);
        let j23 = Meminj::from_pairs([(2, (3, 6))]);
        assert_eq!(compose_inj(&j12, &j23), Meminj::from_pairs([(1, (3, 10))]));

        let j23_gap = Meminj::empty();
        assert!(compose_inj(&j12, &j23_gap).is_empty());

        let (m, _, _) = two_block_mem();
        let id = Meminj::identity_on(&m);
        let j = Meminj::from_pairs([(1, (2, 0))]);
        assert_eq!(compose_inj(&id, &j), j);
    }

    #[test]
    fn identity_injection_passes_all_clauses() {
        let (m, b1, _) = two_block_mem();
        let m = m.store(b1, 0, Value::int(3)).unwrap();
        let j = Meminj::identity_on(&m);
        let r = mem_inj_check(&j, &m, &m);
        assert!(r.ok(), "{r}");
    }

    #[test]
    fn value_mismatch_violates_clause_2() {
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let m1 = m1.store(b1, 0, Value::int(7)).unwrap();
        let (m2, b2) = MemoryState::empty().alloc(0, 8).unwrap();
        let m2 = m2.store(b2, 0, Value::int(8)).unwrap();
        let j = Meminj::from_pairs([(b1, (b2, 0))]);
        let r = mem_inj_check(&j, &m1, &m2);
        assert!(r.violations.iter().any(|v| v.clause == "2"), "{r}");
    }

    #[test]
    fn overlap_violates_clause_5() {
        let (m1, a) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m1, b) = m1.alloc(0, 8).unwrap();
        let (m2, t) = MemoryState::empty().alloc(0, 8).unwrap();
        let j = Meminj::from_pairs([(a, (t, 0)), (b, (t, 0))]);
        let r = mem_inj_check(&j, &m1, &m2);
        assert!(r.violations.iter().any(|v| v.clause == "5"), "{r}");
    }

    #[test]
    fn classification() {
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let j = Meminj::empty();
        assert_eq!(
            classify_position(&j, &m1, Side::Target, 2, 8),
            PositionClass::OutOfReach
        );
        let j = Meminj::from_pairs([(b1, (2, 8))]);
        assert_eq!(classify_position(&j, &m1, Side::Target, 2, 8), PositionClass::InReach);
        let m_dead = m1.set_perm(b1, 0, None).unwrap();
        assert_eq!(
            classify_position(&j, &m_dead, Side::Target, 2, 8),
            PositionClass::OutOfReach
        );
        assert_eq!(classify_position(&j, &m1, Side::Source, b1, 0), PositionClass::MappedPublic);
        assert_eq!(classify_position(&j, &m1, Side::Source, 9, 0), PositionClass::Unmapped);
    }

    #[test]
    fn separation() {
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m2, t1) = MemoryState::empty().alloc(0, 8).unwrap();
        let j = Meminj::from_pairs([(b1, (t1, 0))]);
        assert!(inj_sep_check(&j, &j, &m1, &m2));

        let mut grown = j.clone();
        grown.insert(b1 + 1, (t1 + 1, 0));
        assert!(inj_sep_check(&j, &grown, &m1, &m2));

        let mut bad = j.clone();
        bad.remove(b1);
        assert!(!inj_sep_check(&bad, &j, &m1, &m2));
    }

    #[test]
    fn closure_follows_readable_pointers() {
        let (m, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m, b2) = m.alloc(0, 8).unwrap();
        let m = m.store(b1, 0, Value::ptr(b2, 0)).unwrap();
        let m = m.store(b2, 0, Value::int(1)).unwrap();
        let r = reach_closure(&m, &[(b1, 0)]);
        assert_eq!(r, BTreeSet::from([b1, b2]));
    }

    #[test]
    fn closure_terminates_on_cycles() {
        let (m, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m, b2) = m.alloc(0, 8).unwrap();
        let m = m.store(b1, 0, Value::ptr(b2, 0)).unwrap();
        let m = m.store(b2, 0, Value::ptr(b1, 0)).unwrap();
        let r = reach_closure(&m, &[(b1, 0)]);
        assert_eq!(r, BTreeSet::from([b1, b2]));
    }

    #[test]
    fn closure_respects_readability() {
        // Independent oracle: a naive BFS over the snapshot that collects
        // pointer targets of readable cells until no new block appears.
        fn bfs_oracle(m: &MemoryState, roots: &[(BlockId, i64)]) -> BTreeSet<BlockId> {
            let mut set: BTreeSet<BlockId> = roots.iter().map(|&(b, _)| b).collect();
            loop {
                let mut grew = false;
                let mut found: Vec<BlockId> = Vec::new();
                for &(b, o) in roots {
                    if set.contains(&b) && m.load(b, o).is_ok() {
                        if let Value::Ptr { b: t, .. } = m.value_at(b, o) {
                            found.push(t);
                        }
                    }
                }
                for &b in &set {
                    if let Some(blk) = m.blocks.get(&b) {
                        for &o in blk.cells.keys() {
                            if m.load(b, o).is_ok() {
                                if let Value::Ptr { b: t, .. } = m.value_at(b, o) {
                                    found.push(t);
                                }
                            }
                        }
                    }
                }
                for t in found {
                    grew |= set.insert(t);
                }
                if !grew {
                    return set;
                }
            }
        }

        let (m, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m, b2) = m.alloc(0, 8).unwrap();
        let m = m.store(b1, 0, Value::ptr(b2, 0)).unwrap();
        let m = m
            .set_perm(b1, 0, Some((Permission::Freeable, Permission::Nonempty)))
            .unwrap();
        let r = reach_closure(&m, &[(b1, 0)]);
        assert_eq!(r, BTreeSet::from([b1]));
        assert_eq!(r, bfs_oracle(&m, &[(b1, 0)]));
    }

    #[test]
    fn meminj_json_roundtrip() {
        let j = Meminj::from_pairs([(1, (2, 4)), (3, (5, -8))]);
        let back = Meminj::from_json(&j.to_json()).unwrap();
        assert_eq!(j, back);
    }
}
