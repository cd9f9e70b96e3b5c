//! Block-based memory model with per-position permissions.
//!
//! A memory state is a disjoint set of blocks identified by positive
//! integers. Every position `(b, o)` inside an allocated block carries an
//! abstract value and a pair of permissions (maximum and current). All
//! mutating operations are functional: they return a fresh state and leave
//! the receiver untouched.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Identifier of an allocated block. Positive; never reused after free.
pub type BlockId = u32;

/// Abstract memory values: undefined, a 64-bit integer, or a pointer
/// `(block, offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum Value {
    Undef,
    Int { v: i64 },
    Ptr { b: BlockId, o: i64 },
}

impl Value {
    pub fn int(v: i64) -> Value {
        Value::Int { v }
    }

    pub fn ptr(b: BlockId, o: i64) -> Value {
        Value::Ptr { b, o }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int { v } => Some(*v),
            _ => None,
        }
    }

    pub fn as_ptr(&self) -> Option<(BlockId, i64)> {
        match self {
            Value::Ptr { b, o } => Some((*b, *o)),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Undef => write!(f, "undef"),
            Value::Int { v } => write!(f, "{v}"),
            Value::Ptr { b, o } => write!(f, "&{b}+{o}"),
        }
    }
}

/// Access permissions, totally ordered from `Nonempty` (lowest) up to
/// `Freeable`. Holding a permission implies holding every lower one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Permission {
    Nonempty,
    Readable,
    Writable,
    Freeable,
}

/// Which permission of a position is consulted: the maximum one (an upper
/// bound that only decreases over time) or the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PermKind {
    Max,
    Cur,
}

/// One allocated block: an offset range `[lo, hi)` plus per-position values
/// and permissions. A position missing from `perms` carries no permission at
/// all (it was freed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub lo: i64,
    pub hi: i64,
    pub cells: BTreeMap<i64, Value>,
    pub perms: BTreeMap<i64, (Permission, Permission)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemError {
    /// The operation's permission gate failed at the given position.
    Permission { b: BlockId, o: i64, needed: Permission },
    /// The block is not allocated.
    InvalidBlock { b: BlockId },
    /// `alloc` was called with `lo > hi`.
    BadRange { lo: i64, hi: i64 },
}

impl fmt::Display for MemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemError::Permission { b, o, needed } => {
                write!(f, "permission error at ({b},{o}): need {needed:?}")
            }
            MemError::InvalidBlock { b } => write!(f, "invalid block {b}"),
            MemError::BadRange { lo, hi } => write!(f, "bad range [{lo},{hi})"),
        }
    }
}

impl std::error::Error for MemError {}

/// An immutable memory state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryState {
    pub next_block: BlockId,
    pub blocks: BTreeMap<BlockId, Block>,
}

impl Default for MemoryState {
    fn default() -> Self {
        MemoryState::empty()
    }
}

impl MemoryState {
    pub fn empty() -> MemoryState {
        MemoryState { next_block: 1, blocks: BTreeMap::new() }
    }

    /// A block counts as valid once allocated, even if fully freed.
    pub fn valid_block(&self, b: BlockId) -> bool {
        self.blocks.contains_key(&b)
    }

    pub fn valid_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks.keys().copied()
    }

    /// Allocate a fresh block covering `[lo, hi)`. Every position starts
    /// `Undef` with max = cur = `Freeable`.
    pub fn alloc(&self, lo: i64, hi: i64) -> Result<(MemoryState, BlockId), MemError> {
        if lo > hi {
            return Err(MemError::BadRange { lo, hi });
        }
        let b = self.next_block;
        let mut cells = BTreeMap::new();
        let mut perms = BTreeMap::new();
        for o in lo..hi {
            cells.insert(o, Value::Undef);
            perms.insert(o, (Permission::Freeable, Permission::Freeable));
        }
        let mut m = self.clone();
        m.next_block = b + 1;
        m.blocks.insert(b, Block { lo, hi, cells, perms });
        Ok((m, b))
    }

    /// Drop all permission and value of positions in `[lo, hi)` of `b`.
    /// Every position in range must hold Cur `Freeable`.
    pub fn free(&self, b: BlockId, lo: i64, hi: i64) -> Result<MemoryState, MemError> {
        for o in lo..hi {
            if !self.perm_at(b, o, PermKind::Cur, Permission::Freeable) {
                return Err(MemError::Permission { b, o, needed: Permission::Freeable });
            }
        }
        let mut m = self.clone();
        let blk = m.blocks.get_mut(&b).ok_or(MemError::InvalidBlock { b })?;
        for o in lo..hi {
            blk.cells.remove(&o);
            blk.perms.remove(&o);
        }
        Ok(m)
    }

    /// Read the value at `(b, o)`; requires Cur `Readable`.
    pub fn load(&self, b: BlockId, o: i64) -> Result<Value, MemError> {
        if !self.perm_at(b, o, PermKind::Cur, Permission::Readable) {
            return Err(MemError::Permission { b, o, needed: Permission::Readable });
        }
        Ok(self.value_at(b, o))
    }

    /// Write `v` at `(b, o)`; requires Cur `Writable`. Permissions and all
    /// other positions are untouched.
    pub fn store(&self, b: BlockId, o: i64, v: Value) -> Result<MemoryState, MemError> {
        if !self.perm_at(b, o, PermKind::Cur, Permission::Writable) {
            return Err(MemError::Permission { b, o, needed: Permission::Writable });
        }
        let mut m = self.clone();
        m.blocks.get_mut(&b).unwrap().cells.insert(o, v);
        Ok(m)
    }

    /// True iff `(b, o)` holds at least permission `p` for kind `k`.
    pub fn perm_at(&self, b: BlockId, o: i64, k: PermKind, p: Permission) -> bool {
        match self.perm_pair(b, o) {
            None => false,
            Some((max, cur)) => match k {
                PermKind::Max => max >= p,
                PermKind::Cur => cur >= p,
            },
        }
    }

    /// The `(max, cur)` pair at a position, if it carries any permission.
    pub fn perm_pair(&self, b: BlockId, o: i64) -> Option<(Permission, Permission)> {
        self.blocks.get(&b).and_then(|blk| blk.perms.get(&o).copied())
    }

    /// The value stored at `(b, o)`, `Undef` when the cell is absent.
    pub fn value_at(&self, b: BlockId, o: i64) -> Value {
        self.blocks
            .get(&b)
            .and_then(|blk| blk.cells.get(&o).copied())
            .unwrap_or(Value::Undef)
    }

    /// Overwrite the permission pair at a position. This is a testing and
    /// instance-generation hook, not part of the language semantics; it is
    /// the only way to obtain permission maps that `alloc` cannot produce.
    /// `None` erases the position's permission and value.
    pub fn set_perm(
        &self,
        b: BlockId,
        o: i64,
        p: Option<(Permission, Permission)>,
    ) -> Result<MemoryState, MemError> {
        let mut m = self.clone();
        let blk = m.blocks.get_mut(&b).ok_or(MemError::InvalidBlock { b })?;
        match p {
            Some((max, cur)) => {
                assert!(cur <= max, "cur permission must not exceed max");
                blk.perms.insert(o, (max, cur));
                blk.cells.entry(o).or_insert(Value::Undef);
            }
            None => {
                blk.perms.remove(&o);
                blk.cells.remove(&o);
            }
        }
        Ok(m)
    }

    /// All positions of `b` worth comparing between two states: the union of
    /// both footprints.
    fn footprint_union(&self, other: &MemoryState, b: BlockId) -> Vec<i64> {
        let mut offs: Vec<i64> = Vec::new();
        for m in [self, other] {
            if let Some(blk) = m.blocks.get(&b) {
                offs.extend(blk.perms.keys().copied());
                offs.extend(blk.cells.keys().copied());
            }
        }
        offs.sort_unstable();
        offs.dedup();
        offs
    }

    /// Positions `(b, o)` of this state with Max `Nonempty`, enumerated.
    pub fn max_nonempty_positions(&self) -> Vec<(BlockId, i64)> {
        let mut out = Vec::new();
        for (&b, blk) in &self.blocks {
            for &o in blk.perms.keys() {
                out.push((b, o));
            }
        }
        out
    }
}

/// True iff every position valid in `m` and selected by `pred` has
/// identical permissions and value in `m` and `m2`. Only positions of
/// blocks valid in the earlier state `m` are constrained.
pub fn unchanged_on_check<P>(pred: P, m: &MemoryState, m2: &MemoryState) -> bool
where
    P: Fn(BlockId, i64) -> bool,
{
    unchanged_on_witness(pred, m, m2).is_none()
}

/// Like [`unchanged_on_check`] but reports the first offending position.
pub fn unchanged_on_witness<P>(
    pred: P,
    m: &MemoryState,
    m2: &MemoryState,
) -> Option<(BlockId, i64)>
where
    P: Fn(BlockId, i64) -> bool,
{
    for &b in m.blocks.keys() {
        for o in m.footprint_union(m2, b) {
            if !pred(b, o) {
                continue;
            }
            if m.perm_pair(b, o) != m2.perm_pair(b, o) || m.value_at(b, o) != m2.value_at(b, o)
            {
                return Some((b, o));
            }
        }
    }
    None
}

/// Monotone memory evolution: valid blocks only grow, maximum permissions
/// only shrink, and read-only data keeps its value.
///
/// The read-only clause constrains positions observable after the step: a
/// position of `m` without Max `Writable` that is Cur `Readable` in `m2`
/// must already have been Cur `Readable` in `m` with the same value.
pub fn mem_acc_check(m: &MemoryState, m2: &MemoryState) -> bool {
    mem_acc_witness(m, m2).is_none()
}

pub fn mem_acc_witness(m: &MemoryState, m2: &MemoryState) -> Option<String> {
    for b in m.valid_blocks() {
        if !m2.valid_block(b) {
            return Some(format!("block {b} valid before but not after"));
        }
    }
    // max-perm-dec over blocks valid in m
    for (&b, blk2) in &m2.blocks {
        if !m.valid_block(b) {
            continue;
        }
        for (&o, &(max2, _)) in &blk2.perms {
            if !m.perm_at(b, o, PermKind::Max, max2) {
                return Some(format!("max permission raised at ({b},{o})"));
            }
        }
    }
    // ro-acc
    for &b in m.blocks.keys() {
        for o in m.footprint_union(m2, b) {
            if m.perm_at(b, o, PermKind::Max, Permission::Writable) {
                continue;
            }
            if m2.perm_at(b, o, PermKind::Cur, Permission::Readable) {
                if !m.perm_at(b, o, PermKind::Cur, Permission::Readable) {
                    return Some(format!("read-only cell ({b},{o}) became readable"));
                }
                if m.value_at(b, o) != m2.value_at(b, o) {
                    return Some(format!("read-only cell ({b},{o}) changed value"));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alloc_grants_freeable_undef() {
        let m0 = MemoryState::empty();
        let (m, b1) = m0.alloc(0, 24).unwrap();
        assert!(m.perm_at(b1, 8, PermKind::Cur, Permission::Freeable));
        assert_eq!(m.value_at(b1, 8), Value::Undef);
        let (m2, b2) = m.alloc(0, 8).unwrap();
        assert_ne!(b1, b2);
        assert!(m2.next_block > b2);
    }

    #[test]
    fn alloc_empty_range_has_no_footprint() {
        let (m, b) = MemoryState::empty().alloc(0, 0).unwrap();
        assert!(!m.perm_at(b, 0, PermKind::Cur, Permission::Nonempty));
        assert!(!m.perm_at(b, 0, PermKind::Max, Permission::Nonempty));
        assert!(m.valid_block(b));
    }

    #[test]
    fn free_full_and_partial() {
        let (m, b) = MemoryState::empty().alloc(0, 24).unwrap();
        let mf = m.free(b, 0, 24).unwrap();
        for o in 0..24 {
            assert!(!mf.perm_at(b, o, PermKind::Max, Permission::Nonempty));
        }
        assert!(mf.valid_block(b));

        let mp = m.free(b, 8, 16).unwrap();
        assert!(mp.perm_at(b, 0, PermKind::Cur, Permission::Freeable));
        assert!(!mp.perm_at(b, 8, PermKind::Cur, Permission::Nonempty));
    }

    #[test]
    fn free_needs_cur_freeable() {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        let m = m
            .set_perm(b, 0, Some((Permission::Readable, Permission::Readable)))
            .unwrap();
        assert!(matches!(m.free(b, 0, 1), Err(MemError::Permission { .. })));
    }

    #[test]
    fn load_store_roundtrip() {
        let (m, b) = MemoryState::empty().alloc(0, 16).unwrap();
        let m = m.store(b, 8, Value::int(7)).unwrap();
        assert_eq!(m.load(b, 8).unwrap(), Value::int(7));
        assert_eq!(m.load(b, 0).unwrap(), Value::Undef);
        let mf = m.free(b, 0, 16).unwrap();
        assert!(mf.load(b, 8).is_err());
    }

    #[test]
    fn store_ptr_then_load() {
        let (m, b) = MemoryState::empty().alloc(0, 16).unwrap();
        let (m, b2) = m.alloc(0, 8).unwrap();
        let m = m.store(b, 8, Value::ptr(b2, 0)).unwrap();
        assert_eq!(m.load(b, 8).unwrap(), Value::ptr(b2, 0));
    }

    #[test]
    fn store_respects_read_only() {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        let m = m
            .set_perm(b, 0, Some((Permission::Readable, Permission::Readable)))
            .unwrap();
        assert!(matches!(m.store(b, 0, Value::int(1)), Err(MemError::Permission { .. })));
    }

    #[test]
    fn disjoint_stores_commute() {
        let (m, b) = MemoryState::empty().alloc(0, 16).unwrap();
        let a = m.store(b, 0, Value::int(1)).unwrap().store(b, 8, Value::int(2)).unwrap();
        let c = m.store(b, 8, Value::int(2)).unwrap().store(b, 0, Value::int(1)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn perm_lattice_and_kinds() {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        assert!(m.perm_at(b, 0, PermKind::Cur, Permission::Nonempty));
        let m = m
            .set_perm(b, 0, Some((Permission::Freeable, Permission::Readable)))
            .unwrap();
        assert!(!m.perm_at(b, 0, PermKind::Cur, Permission::Writable));
        assert!(m.perm_at(b, 0, PermKind::Max, Permission::Writable));
        assert!(!m.perm_at(99, 0, PermKind::Cur, Permission::Nonempty));
    }

    #[test]
    fn unchanged_on_basics() {
        let (m, b) = MemoryState::empty().alloc(0, 16).unwrap();
        assert!(unchanged_on_check(|_, _| true, &m, &m));
        let m2 = m.store(b, 8, Value::int(3)).unwrap();
        assert!(!unchanged_on_check(|bb, oo| bb == b && oo == 8, &m, &m2));
        let m3 = m.store(b, 0, Value::int(3)).unwrap();
        assert!(unchanged_on_check(|bb, oo| bb == b && oo == 8, &m, &m3));
    }

    #[test]
    fn mem_acc_accepts_alloc_and_writes() {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m2, b2) = m.alloc(0, 8).unwrap();
        let m2 = m2.store(b2, 0, Value::int(5)).unwrap();
        let m2 = m2.store(b, 0, Value::int(9)).unwrap();
        assert!(mem_acc_check(&m, &m2));
    }

    #[test]
    fn mem_acc_rejects_raised_max() {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        let m = m
            .set_perm(b, 0, Some((Permission::Readable, Permission::Readable)))
            .unwrap();
        let m2 = m
            .set_perm(b, 0, Some((Permission::Writable, Permission::Writable)))
            .unwrap();
        assert!(!mem_acc_check(&m, &m2));
    }

    #[test]
    fn mem_acc_rejects_read_only_value_change() {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        let m = m.store(b, 0, Value::int(42)).unwrap();
        let m = m
            .set_perm(b, 0, Some((Permission::Readable, Permission::Readable)))
            .unwrap();
        // Forge a state where the read-only cell holds another value.
        let mut m2 = m.clone();
        m2.blocks.get_mut(&b).unwrap().cells.insert(0, Value::int(41));
        assert!(!mem_acc_check(&m, &m2));
    }
}
