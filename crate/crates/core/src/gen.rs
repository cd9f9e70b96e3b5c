//! Seeded random instance generators for injection chains and protected
//! memory evolutions. Instances are constructed so the relevant injection
//! and accessibility checks hold by construction; the checks themselves are
//! re-run as rejection guards so a generator bug cannot silently weaken a
//! property suite.

use crate::inject::{compose_inj, mem_inj_check, value_transport, Meminj};
use crate::kmr::{injp_acc_check, InjpWorld};
use crate::mem::{BlockId, MemoryState, PermKind, Permission, Value};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub max_blocks: usize,
    pub max_cells: usize,
    pub max_mappings: usize,
    pub evolution_steps: usize,
    /// Whether evolutions may lower current permissions. Lowering a public
    /// cell can legally strand a program that later frees it, so
    /// environments driving live runs turn this off.
    pub lower_perms: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_blocks: 4,
            max_cells: 8,
            max_mappings: 3,
            evolution_steps: 6,
            lower_perms: true,
        }
    }
}

pub fn rng_for(seed: u64, instance: u64) -> StdRng {
    StdRng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(instance))
}

/// A chain `m1 -[j12]-> m2 -[j23]-> m3` with both injection checks passing.
#[derive(Debug, Clone)]
pub struct ChainInstance {
    pub j12: Meminj,
    pub j23: Meminj,
    pub m1: MemoryState,
    pub m2: MemoryState,
    pub m3: MemoryState,
}

fn gen_block(rng: &mut StdRng, m: &MemoryState, max_cells: usize) -> (MemoryState, BlockId) {
    let hi = rng.gen_range(1..=max_cells as i64);
    m.alloc(0, hi).expect("valid range")
}

/// Sample a scalar value; pointers target one of the given blocks.
fn gen_value(rng: &mut StdRng, ptr_targets: &[BlockId], m_for_range: &MemoryState) -> Value {
    match rng.gen_range(0..4) {
        0 => Value::Undef,
        1 | 2 => Value::int(rng.gen_range(-99..100)),
        _ if !ptr_targets.is_empty() => {
            let b = ptr_targets[rng.gen_range(0..ptr_targets.len())];
            let hi = m_for_range.blocks.get(&b).map(|blk| blk.hi.max(1)).unwrap_or(1);
            Value::ptr(b, rng.gen_range(0..hi))
        }
        _ => Value::int(rng.gen_range(-99..100)),
    }
}

/// Project the mapped blocks of `src` into the target memory at the ids
/// named by the mapping, preserving permissions and transporting values.
fn project(src: &MemoryState, j: &Meminj, base: MemoryState) -> MemoryState {
    let mut tgt = base;
    for (b1, (b2, d)) in j.iter() {
        let Some(blk1) = src.blocks.get(&b1) else { continue };
        let mut cells = std::collections::BTreeMap::new();
        let mut perms = std::collections::BTreeMap::new();
        for (&o, &p) in &blk1.perms {
            perms.insert(o + d, p);
        }
        for (&o, v) in &blk1.cells {
            cells.insert(o + d, value_transport(j, v).unwrap_or(Value::Undef));
        }
        tgt.blocks.insert(
            b2,
            crate::mem::Block { lo: blk1.lo + d, hi: blk1.hi + d, cells, perms },
        );
        tgt.next_block = tgt.next_block.max(b2 + 1);
    }
    tgt
}

/// One leg `m1 -[j]-> m2`: a source memory with a few mapped blocks
/// projected into a target that also carries private junk.
pub fn gen_single_injection(rng: &mut StdRng, cfg: &GenConfig) -> (Meminj, MemoryState, MemoryState) {
    // Source blocks.
    let nblocks = rng.gen_range(1..=cfg.max_blocks);
    let mut m1 = MemoryState::empty();
    let mut blocks = Vec::new();
    for _ in 0..nblocks {
        let (next, b) = gen_block(rng, &m1, cfg.max_cells);
        m1 = next;
        blocks.push(b);
    }

    // Mapping: a subset of source blocks onto disjoint fresh target ids.
    let nmap = rng.gen_range(1..=cfg.max_mappings.min(nblocks));
    let mut mapped: Vec<BlockId> = blocks.clone();
    while mapped.len() > nmap {
        let i = rng.gen_range(0..mapped.len());
        mapped.remove(i);
    }
    let mut m2 = MemoryState::empty();
    // Leading private junk in the target.
    for _ in 0..rng.gen_range(0..2usize) {
        let (next, b) = gen_block(rng, &m2, cfg.max_cells);
        m2 = next;
        let stored = gen_value(rng, &[], &m2);
        if m2.perm_at(b, 0, PermKind::Cur, Permission::Writable) {
            m2 = m2.store(b, 0, stored).unwrap();
        }
    }
    // Reserve disjoint target ids for each mapped source block.
    let mut j = Meminj::empty();
    for (next_target, &b1) in (m2.next_block..).zip(mapped.iter()) {
        let d = rng.gen_range(-2..=2);
        j.insert(b1, (next_target, d));
    }

    // Fill source contents: pointers only target mapped blocks so that
    // readable cells always transport.
    for &b in &blocks {
        let hi = m1.blocks[&b].hi;
        for o in 0..hi {
            if rng.gen_bool(0.6) {
                let v = gen_value(rng, &mapped, &m1);
                m1 = m1.store(b, o, v).unwrap();
            }
        }
    }
    // Permission variety, mirrored on both sides of the mapping.
    for &b in &blocks {
        let hi = m1.blocks[&b].hi;
        for o in 0..hi {
            match rng.gen_range(0..8) {
                0 => {
                    m1 = m1.set_perm(b, o, None).unwrap();
                }
                1 => {
                    let p = (Permission::Readable, Permission::Readable);
                    m1 = m1.set_perm(b, o, Some(p)).unwrap();
                }
                2 => {
                    let p = (Permission::Freeable, Permission::Readable);
                    m1 = m1.set_perm(b, o, Some(p)).unwrap();
                }
                _ => {}
            }
        }
    }

    let m2 = project(&m1, &j, m2);
    let report = mem_inj_check(&j, &m1, &m2);
    assert!(report.ok(), "generator produced an invalid injection: {report}");
    (j, m1, m2)
}

/// A two-leg chain built by projecting twice. All public blocks of the
/// middle memory stay mapped by the second leg so their pointer contents
/// keep transporting.
pub fn gen_chain(rng: &mut StdRng, cfg: &GenConfig) -> ChainInstance {
    let (j12, m1, m2) = gen_single_injection(rng, cfg);

    // Second leg: map every j12 image plus optionally some junk blocks.
    let mut j23 = Meminj::empty();
    let mut m3 = MemoryState::empty();
    for _ in 0..rng.gen_range(0..2usize) {
        let (next, b) = gen_block(rng, &m3, cfg.max_cells);
        m3 = next;
        let v = Value::int(rng.gen_range(-9..10));
        if m3.perm_at(b, 0, PermKind::Cur, Permission::Writable) {
            m3 = m3.store(b, 0, v).unwrap();
        }
    }
    let mut sources: Vec<BlockId> = j12.iter().map(|(_, (t, _))| t).collect();
    for b in m2.valid_blocks() {
        if !sources.contains(&b) && rng.gen_bool(0.3) {
            // Private middle blocks may be mapped too when their contents
            // are scalar (projection transports them unchanged).
            let scalar_only = m2.blocks[&b]
                .cells
                .values()
                .all(|v| !matches!(v, Value::Ptr { .. }));
            if scalar_only {
                sources.push(b);
            }
        }
    }
    sources.sort_unstable();
    for (next_target, b2) in (m3.next_block..).zip(sources) {
        let d = rng.gen_range(-2..=2);
        j23.insert(b2, (next_target, d));
    }
    let m3 = project(&m2, &j23, m3);

    let report = mem_inj_check(&j23, &m2, &m3);
    assert!(report.ok(), "generator produced an invalid second leg: {report}");
    ChainInstance { j12, j23, m1, m2, m3 }
}

/// Evolve `(j, m_src, m_tgt)` by a random sequence of protected operations:
/// stores to mapped public cells (mirrored through the injection), paired
/// allocations with optional fresh mappings, and lockstep permission
/// lowering. The result is injp-accessible from the input world and the
/// evolved injection still relates the evolved memories.
pub fn gen_protected_evolution(
    rng: &mut StdRng,
    cfg: &GenConfig,
    j: &Meminj,
    m_src: &MemoryState,
    m_tgt: &MemoryState,
) -> (Meminj, MemoryState, MemoryState) {
    let mut jp = j.clone();
    let mut m1 = m_src.clone();
    let mut m2 = m_tgt.clone();
    let steps = rng.gen_range(0..=cfg.evolution_steps);
    for _ in 0..steps {
        match rng.gen_range(0..5) {
            // Store to a mapped, currently writable public cell.
            0 | 1 => {
                let candidates: Vec<(BlockId, i64, BlockId, i64)> = jp
                    .iter()
                    .flat_map(|(b1, (b2, d))| {
                        let m1r = &m1;
                        m1r.blocks
                            .get(&b1)
                            .into_iter()
                            .flat_map(move |blk| {
                                blk.perms
                                    .iter()
                                    .filter(|(_, &(_, cur))| cur >= Permission::Writable)
                                    .map(move |(&o, _)| (b1, o, b2, o + d))
                                    .collect::<Vec<_>>()
                            })
                    })
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let (b1, o1, b2, o2) = candidates[rng.gen_range(0..candidates.len())];
                let mapped: Vec<BlockId> = jp.iter().map(|(b, _)| b).collect();
                let v = gen_value(rng, &mapped, &m1);
                let tv = value_transport(&jp, &v).unwrap_or(Value::Undef);
                if m2.perm_at(b2, o2, PermKind::Cur, Permission::Writable) {
                    m1 = m1.store(b1, o1, v).unwrap();
                    m2 = m2.store(b2, o2, tv).unwrap();
                }
            }
            // Allocate a pair of fresh blocks, sometimes freshly mapped.
            2 => {
                let hi = rng.gen_range(1..=cfg.max_cells as i64);
                let (n1, b1) = m1.alloc(0, hi).unwrap();
                let (n2, b2) = m2.alloc(0, hi).unwrap();
                m1 = n1;
                m2 = n2;
                if rng.gen_bool(0.7) {
                    jp.insert(b1, (b2, 0));
                } else {
                    // Unmapped fresh block: free-form private content.
                    let v = Value::int(rng.gen_range(-9..10));
                    m1 = m1.store(b1, 0, v).unwrap();
                }
            }
            // Lockstep permission lowering on a mapped public cell.
            3 => {
                let candidates: Vec<(BlockId, i64, BlockId, i64)> = jp
                    .iter()
                    .flat_map(|(b1, (b2, d))| {
                        let m1r = &m1;
                        m1r.blocks
                            .get(&b1)
                            .into_iter()
                            .flat_map(move |blk| {
                                blk.perms
                                    .iter()
                                    .map(move |(&o, _)| (b1, o, b2, o + d))
                                    .collect::<Vec<_>>()
                            })
                    })
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let (b1, o1, b2, o2) = candidates[rng.gen_range(0..candidates.len())];
                let Some((max1, cur1)) = m1.perm_pair(b1, o1) else { continue };
                let Some((max2, cur2)) = m2.perm_pair(b2, o2) else { continue };
                // Mirror only when the two sides agree; generated chains
                // start equal and stay equal under lockstep updates.
                if (max1, cur1) != (max2, cur2) {
                    continue;
                }
                let lowered = match cur1 {
                    Permission::Freeable => (max1, Permission::Writable),
                    Permission::Writable => (max1, Permission::Readable),
                    _ => continue,
                };
                m1 = m1.set_perm(b1, o1, Some(lowered)).unwrap();
                m2 = m2.set_perm(b2, o2, Some(lowered)).unwrap();
            }
            // Store into a fresh mapped pair created earlier this run.
            _ => {
                let fresh: Vec<(BlockId, BlockId, i64)> = jp
                    .iter()
                    .filter(|&(b1, _)| !m_src.valid_block(b1))
                    .map(|(b1, (b2, d))| (b1, b2, d))
                    .collect();
                if fresh.is_empty() {
                    continue;
                }
                let (b1, b2, d) = fresh[rng.gen_range(0..fresh.len())];
                let hi = m1.blocks[&b1].hi;
                let o = rng.gen_range(0..hi.max(1));
                let mapped: Vec<BlockId> = jp.iter().map(|(b, _)| b).collect();
                let v = gen_value(rng, &mapped, &m1);
                let tv = value_transport(&jp, &v).unwrap_or(Value::Undef);
                if m1.perm_at(b1, o, PermKind::Cur, Permission::Writable)
                    && m2.perm_at(b2, o + d, PermKind::Cur, Permission::Writable)
                {
                    m1 = m1.store(b1, o, v).unwrap();
                    m2 = m2.store(b2, o + d, tv).unwrap();
                }
            }
        }
    }

    let before = InjpWorld::new(j.clone(), m_src.clone(), m_tgt.clone());
    let after = InjpWorld::new(jp.clone(), m1.clone(), m2.clone());
    let acc = injp_acc_check(&before, &after);
    assert!(acc.ok(), "generator produced an unprotected evolution: {acc}");
    let inj = mem_inj_check(&jp, &m1, &m2);
    assert!(inj.ok(), "generator broke the injection: {inj}");
    (jp, m1, m2)
}

/// Coupled evolution of a decomposed chain `m1 -[id]-> m1 -[j13]-> m3`:
/// the same protected operations applied in triple lockstep, so that both
/// leg accessibilities hold with a shared middle memory.
pub fn gen_decomposed_evolution(
    rng: &mut StdRng,
    cfg: &GenConfig,
    j13: &Meminj,
    m1: &MemoryState,
    m3: &MemoryState,
) -> (Meminj, Meminj, MemoryState, MemoryState, MemoryState) {
    let j12 = Meminj::from_pairs(j13.iter().map(|(b, _)| (b, (b, 0))));
    let mut j12p = j12.clone();
    let mut j23p = j13.clone();
    let mut s1 = m1.clone();
    let mut s2 = m1.clone();
    let mut s3 = m3.clone();
    let steps = rng.gen_range(0..=cfg.evolution_steps);
    for _ in 0..steps {
        match rng.gen_range(0..3) {
            0 => {
                // Store through the whole chain.
                let candidates: Vec<(BlockId, i64, BlockId, i64)> = j23p
                    .iter()
                    .flat_map(|(b2, (b3, d))| {
                        let s = &s2;
                        s.blocks
                            .get(&b2)
                            .into_iter()
                            .flat_map(move |blk| {
                                blk.perms
                                    .iter()
                                    .filter(|(_, &(_, cur))| cur >= Permission::Writable)
                                    .map(move |(&o, _)| (b2, o, b3, o + d))
                                    .collect::<Vec<_>>()
                            })
                    })
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let (b2, o2, b3, o3) = candidates[rng.gen_range(0..candidates.len())];
                if !s1.perm_at(b2, o2, PermKind::Cur, Permission::Writable)
                    || !s3.perm_at(b3, o3, PermKind::Cur, Permission::Writable)
                {
                    continue;
                }
                let mapped: Vec<BlockId> = j23p.iter().map(|(b, _)| b).collect();
                let v = gen_value(rng, &mapped, &s2);
                let tv = value_transport(&j23p, &v).unwrap_or(Value::Undef);
                s1 = s1.store(b2, o2, v).unwrap();
                s2 = s2.store(b2, o2, v).unwrap();
                s3 = s3.store(b3, o3, tv).unwrap();
            }
            1 => {
                // Fresh triple, mapped end to end.
                let hi = rng.gen_range(1..=cfg.max_cells as i64);
                let (n1, b1) = s1.alloc(0, hi).unwrap();
                let (n2, b2) = s2.alloc(0, hi).unwrap();
                let (n3, b3) = s3.alloc(0, hi).unwrap();
                debug_assert_eq!(b1, b2);
                s1 = n1;
                s2 = n2;
                s3 = n3;
                if rng.gen_bool(0.7) {
                    j12p.insert(b1, (b2, 0));
                    j23p.insert(b2, (b3, 0));
                }
            }
            _ => {
                // Lockstep lowering through the chain.
                let candidates: Vec<(BlockId, i64, BlockId, i64)> = j23p
                    .iter()
                    .flat_map(|(b2, (b3, d))| {
                        let s = &s2;
                        s.blocks
                            .get(&b2)
                            .into_iter()
                            .flat_map(move |blk| {
                                blk.perms
                                    .iter()
                                    .map(move |(&o, _)| (b2, o, b3, o + d))
                                    .collect::<Vec<_>>()
                            })
                    })
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let (b2, o2, b3, o3) = candidates[rng.gen_range(0..candidates.len())];
                let p1 = s1.perm_pair(b2, o2);
                let p2 = s2.perm_pair(b2, o2);
                let p3 = s3.perm_pair(b3, o3);
                if p1 != p2 || p2 != p3 {
                    continue;
                }
                let Some((max, cur)) = p2 else { continue };
                let lowered = match cur {
                    Permission::Freeable => (max, Permission::Writable),
                    Permission::Writable => (max, Permission::Readable),
                    _ => continue,
                };
                s1 = s1.set_perm(b2, o2, Some(lowered)).unwrap();
                s2 = s2.set_perm(b2, o2, Some(lowered)).unwrap();
                s3 = s3.set_perm(b3, o3, Some(lowered)).unwrap();
            }
        }
    }

    let acc12 = injp_acc_check(
        &InjpWorld::new(j12, m1.clone(), m1.clone()),
        &InjpWorld::new(j12p.clone(), s1.clone(), s2.clone()),
    );
    assert!(acc12.ok(), "decomposed evolution broke the first leg: {acc12}");
    let acc23 = injp_acc_check(
        &InjpWorld::new(j13.clone(), m1.clone(), m3.clone()),
        &InjpWorld::new(j23p.clone(), s2.clone(), s3.clone()),
    );
    assert!(acc23.ok(), "decomposed evolution broke the second leg: {acc23}");
    (j12p, j23p, s1, s2, s3)
}

/// Generalized lockstep evolution over an n-leg injection chain: stores to
/// cells public through every leg, end-to-end fresh allocations and
/// lockstep permission lowering. Every leg's accessibility holds by
/// construction; with no legs the single memory only grows by fresh
/// blocks.
pub fn gen_chain_evolution(
    rng: &mut StdRng,
    cfg: &GenConfig,
    js: &[Meminj],
    mems: &[MemoryState],
) -> (Vec<Meminj>, Vec<MemoryState>) {
    assert_eq!(mems.len(), js.len() + 1);
    let mut cur_js: Vec<Meminj> = js.to_vec();
    let mut cur: Vec<MemoryState> = mems.to_vec();
    let steps = rng.gen_range(0..=cfg.evolution_steps);

    // Trace a level-0 position through the whole chain.
    let trace =
        |cur_js: &[Meminj], b0: BlockId, o0: i64| -> Option<Vec<(BlockId, i64)>> {
            let mut coords = vec![(b0, o0)];
            let (mut b, mut o) = (b0, o0);
            for j in cur_js {
                let (nb, d) = j.get(b)?;
                b = nb;
                o += d;
                coords.push((b, o));
            }
            Some(coords)
        };

    for _ in 0..steps {
        match rng.gen_range(0..3) {
            0 => {
                // Store through the chain.
                let candidates: Vec<Vec<(BlockId, i64)>> = cur[0]
                    .max_nonempty_positions()
                    .into_iter()
                    .filter_map(|(b, o)| trace(&cur_js, b, o))
                    .filter(|coords| {
                        coords.iter().zip(&cur).all(|(&(b, o), m)| {
                            m.perm_at(b, o, PermKind::Cur, Permission::Writable)
                        })
                    })
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let coords = &candidates[rng.gen_range(0..candidates.len())];
                // Scalars only: cells are abstract values without byte
                // decoding, so writing a pointer into a cell a program
                // reads as an integer would break type preservation.
                let v = Value::int(rng.gen_range(-99..100));
                let mut vv = v;
                for (lvl, &(b, o)) in coords.iter().enumerate() {
                    cur[lvl] = cur[lvl].store(b, o, vv).unwrap();
                    if lvl < cur_js.len() {
                        vv = value_transport(&cur_js[lvl], &vv).unwrap_or(Value::Undef);
                    }
                }
            }
            1 => {
                // Fresh blocks at every level, mapped end to end.
                let hi = rng.gen_range(1..=cfg.max_cells as i64);
                let mut fresh = Vec::new();
                for m in cur.iter_mut() {
                    let (next, b) = m.alloc(0, hi).unwrap();
                    *m = next;
                    fresh.push(b);
                }
                if rng.gen_bool(0.7) {
                    for (lvl, j) in cur_js.iter_mut().enumerate() {
                        j.insert(fresh[lvl], (fresh[lvl + 1], 0));
                    }
                }
            }
            _ => {
                // Lockstep lowering through the chain.
                if !cfg.lower_perms {
                    continue;
                }
                let candidates: Vec<Vec<(BlockId, i64)>> = cur[0]
                    .max_nonempty_positions()
                    .into_iter()
                    .filter_map(|(b, o)| trace(&cur_js, b, o))
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let coords = &candidates[rng.gen_range(0..candidates.len())];
                let pairs: Vec<Option<(Permission, Permission)>> =
                    coords.iter().zip(&cur).map(|(&(b, o), m)| m.perm_pair(b, o)).collect();
                let Some(first) = pairs[0] else { continue };
                if pairs.iter().any(|p| *p != Some(first)) {
                    continue;
                }
                let lowered = match first.1 {
                    Permission::Freeable => (first.0, Permission::Writable),
                    Permission::Writable => (first.0, Permission::Readable),
                    _ => continue,
                };
                for (lvl, &(b, o)) in coords.iter().enumerate() {
                    cur[lvl] = cur[lvl].set_perm(b, o, Some(lowered)).unwrap();
                }
            }
        }
    }

    for (lvl, j) in js.iter().enumerate() {
        let before = InjpWorld::new(j.clone(), mems[lvl].clone(), mems[lvl + 1].clone());
        let after =
            InjpWorld::new(cur_js[lvl].clone(), cur[lvl].clone(), cur[lvl + 1].clone());
        let acc = injp_acc_check(&before, &after);
        assert!(acc.ok(), "chain evolution broke leg {lvl}: {acc}");
        let inj = mem_inj_check(&cur_js[lvl], &cur[lvl], &cur[lvl + 1]);
        assert!(inj.ok(), "chain evolution broke leg {lvl} injection: {inj}");
    }
    (cur_js, cur)
}

/// A full interpolation instance: a chain plus a protected evolution of its
/// endpoints under the composed injection.
pub struct InterpolationInstance {
    pub chain: ChainInstance,
    pub j13p: Meminj,
    pub m1p: MemoryState,
    pub m3p: MemoryState,
}

pub fn gen_interpolation_instance(rng: &mut StdRng, cfg: &GenConfig) -> InterpolationInstance {
    let chain = gen_chain(rng, cfg);
    let j13 = compose_inj(&chain.j12, &chain.j23);
    let (j13p, m1p, m3p) = gen_protected_evolution(rng, cfg, &j13, &chain.m1, &chain.m3);
    InterpolationInstance { chain, j13p, m1p, m3p }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_instances_are_valid() {
        let cfg = GenConfig::default();
        for i in 0..50 {
            let mut rng = rng_for(11, i);
            let c = gen_chain(&mut rng, &cfg);
            assert!(mem_inj_check(&c.j12, &c.m1, &c.m2).ok());
            assert!(mem_inj_check(&c.j23, &c.m2, &c.m3).ok());
            let j13 = compose_inj(&c.j12, &c.j23);
            assert!(mem_inj_check(&j13, &c.m1, &c.m3).ok());
        }
    }

    #[test]
    fn protected_evolutions_are_accessible() {
        let cfg = GenConfig::default();
        for i in 0..50 {
            let mut rng = rng_for(13, i);
            let inst = gen_interpolation_instance(&mut rng, &cfg);
            assert!(mem_inj_check(&inst.j13p, &inst.m1p, &inst.m3p).ok());
        }
    }
}
