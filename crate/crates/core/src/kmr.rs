//! Kripke memory relations: the injp relation with memory protection, its
//! accessibility check, and the two constructions behind its transitivity:
//! the interpolating-state builder for splitting one protected evolution
//! into two stacked ones, and the identity decomposition for merging two
//! stacked evolutions into one.

use crate::inject::{
    compose_inj, inj_sep_witness, mem_inj_check, out_of_reach, unmapped, value_transport,
    CheckReport, Meminj,
};
use crate::mem::{
    mem_acc_witness, unchanged_on_witness, BlockId, MemoryState, PermKind, Permission, Value,
};
use std::fmt;

/// A Kripke world for injection-based relations: an injection together with
/// the pair of memories it relates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjpWorld {
    pub j: Meminj,
    pub m1: MemoryState,
    pub m2: MemoryState,
}

impl InjpWorld {
    pub fn new(j: Meminj, m1: MemoryState, m2: MemoryState) -> InjpWorld {
        InjpWorld { j, m1, m2 }
    }

    /// Memories are related in this world: the injection check passes.
    pub fn well_formed(&self) -> bool {
        mem_inj_check(&self.j, &self.m1, &self.m2).ok()
    }
}

/// The Kripke memory relations distinguished by their accessibility:
/// `Injp` protects unmapped and out-of-reach memory, `Inj` drops the
/// protection clauses, `Ext` is the identity-shaped variant with equal
/// footprints, and `Id` requires equal memories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KmrTag {
    Injp,
    Inj,
    Ext,
    Id,
}

impl fmt::Display for KmrTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KmrTag::Injp => "injp",
            KmrTag::Inj => "inj",
            KmrTag::Ext => "ext",
            KmrTag::Id => "id",
        };
        write!(f, "{s}")
    }
}

/// The accessibility relation of injp. Between `w` and `w2`:
/// the injection only grows, memory unmapped by `w.j` is unchanged on the
/// source side, memory out of reach of `w.j` is unchanged on the target
/// side, both sides evolve monotonically, and the injection growth is
/// separated (relates only fresh blocks).
pub fn injp_acc_check(w: &InjpWorld, w2: &InjpWorld) -> CheckReport {
    let mut report = CheckReport::default();
    if !w.j.subset_of(&w2.j) {
        report.push("j-subset", format!("{} does not extend {}", w2.j, w.j));
    }
    if let Some((b, o)) =
        unchanged_on_witness(|b, _| unmapped(&w.j, b), &w.m1, &w2.m1)
    {
        report.push("unmapped-protected", format!("source position ({b},{o}) changed"));
    }
    if let Some((b, o)) =
        unchanged_on_witness(|b, o| out_of_reach(&w.j, &w.m1, b, o), &w.m2, &w2.m2)
    {
        report.push("out-of-reach-protected", format!("target position ({b},{o}) changed"));
    }
    if let Some(msg) = mem_acc_witness(&w.m1, &w2.m1) {
        report.push("mem-acc-src", msg);
    }
    if let Some(msg) = mem_acc_witness(&w.m2, &w2.m2) {
        report.push("mem-acc-tgt", msg);
    }
    if let Some(msg) = inj_sep_witness(&w.j, &w2.j, &w.m1, &w.m2) {
        report.push("inj-sep", msg);
    }
    report
}

/// Accessibility for the weaker relations. `Inj` keeps monotonicity and
/// separation but no protection; `Ext` additionally demands identity-shaped
/// injections and equal footprints; `Id` demands equal memories.
pub fn kmr_acc_check(tag: KmrTag, w: &InjpWorld, w2: &InjpWorld) -> CheckReport {
    match tag {
        KmrTag::Injp => injp_acc_check(w, w2),
        KmrTag::Inj => {
            let mut report = CheckReport::default();
            if !w.j.subset_of(&w2.j) {
                report.push("j-subset", format!("{} does not extend {}", w2.j, w.j));
            }
            if let Some(msg) = mem_acc_witness(&w.m1, &w2.m1) {
                report.push("mem-acc-src", msg);
            }
            if let Some(msg) = mem_acc_witness(&w.m2, &w2.m2) {
                report.push("mem-acc-tgt", msg);
            }
            if let Some(msg) = inj_sep_witness(&w.j, &w2.j, &w.m1, &w.m2) {
                report.push("inj-sep", msg);
            }
            report
        }
        KmrTag::Ext => {
            let mut report = kmr_acc_check(KmrTag::Inj, w, w2);
            if !w2.j.is_identity_shaped() {
                report.push("ext-identity", format!("{} is not identity shaped", w2.j));
            }
            let same_footprint = w2.m1.valid_blocks().eq(w2.m2.valid_blocks());
            if !same_footprint {
                report.push("ext-footprint", "source and target footprints differ".to_string());
            }
            report
        }
        KmrTag::Id => {
            let mut report = CheckReport::default();
            if w2.m1 != w2.m2 {
                report.push("id-equal", "memories differ".to_string());
            }
            if let Some(msg) = mem_acc_witness(&w.m1, &w2.m1) {
                report.push("mem-acc", msg);
            }
            report
        }
    }
}

/// Membership of a pair of memories in a relation's world.
pub fn kmr_rel_check(tag: KmrTag, w: &InjpWorld) -> CheckReport {
    match tag {
        KmrTag::Injp | KmrTag::Inj => mem_inj_check(&w.j, &w.m1, &w.m2),
        KmrTag::Ext => {
            let mut report = mem_inj_check(&w.j, &w.m1, &w.m2);
            if !w.j.is_identity_shaped() {
                report.push("ext-identity", format!("{} is not identity shaped", w.j));
            }
            if !w.m1.valid_blocks().eq(w.m2.valid_blocks()) {
                report.push("ext-footprint", "source and target footprints differ".to_string());
            }
            report
        }
        KmrTag::Id => {
            let mut report = CheckReport::default();
            if w.m1 != w.m2 {
                report.push("id-equal", "memories differ".to_string());
            }
            report
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreconditionError {
    pub which: String,
    pub report: CheckReport,
}

impl fmt::Display for PreconditionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "precondition {} failed: {}", self.which, self.report)
    }
}

impl std::error::Error for PreconditionError {}

/// Inputs have evolved from `(j23 . j12, m1, m3)` to `(j13', m1', m3')`
/// under injp; build the interpolating memory `m2'` together with the split
/// injections `j12'` and `j23'`.
///
/// Construction steps:
/// 1. for every block fresh in `m1'` that `j13'` maps, allocate a fresh
///    target block in `m2` and split the mapping through it;
/// 2. copy permissions of those fresh blocks from `m1'`, transporting the
///    values of readable cells through the new `j12'`;
/// 3. for old positions that are in reach of `j12` and mapped on by `j23`,
///    copy the permission of their unique source preimage from `m1'` and,
///    when the preimage is readable and the position was writable, the
///    transported value; every other old position keeps its `m2` content.
#[allow(clippy::too_many_arguments)]
pub fn interpolate(
    j12: &Meminj,
    j23: &Meminj,
    m1: &MemoryState,
    m2: &MemoryState,
    m3: &MemoryState,
    j13p: &Meminj,
    m1p: &MemoryState,
    m3p: &MemoryState,
) -> Result<(Meminj, Meminj, MemoryState), PreconditionError> {
    let pre = |which: &str, report: CheckReport| PreconditionError {
        which: which.to_string(),
        report,
    };

    let r = mem_inj_check(j12, m1, m2);
    if !r.ok() {
        return Err(pre("mem-inj(j12,m1,m2)", r));
    }
    let r = mem_inj_check(j23, m2, m3);
    if !r.ok() {
        return Err(pre("mem-inj(j23,m2,m3)", r));
    }
    let j13 = compose_inj(j12, j23);
    let w13 = InjpWorld::new(j13, m1.clone(), m3.clone());
    let w13p = InjpWorld::new(j13p.clone(), m1p.clone(), m3p.clone());
    let r = injp_acc_check(&w13, &w13p);
    if !r.ok() {
        return Err(pre("injp-acc(w13,w13')", r));
    }
    let r = mem_inj_check(j13p, m1p, m3p);
    if !r.ok() {
        return Err(pre("mem-inj(j13',m1',m3')", r));
    }

    let mut j12p = j12.clone();
    let mut j23p = j23.clone();
    let mut m2p = m2.clone();

    // Step 1: fresh mapped blocks of m1', in ascending order for
    // deterministic naming of the interpolating blocks.
    let mut fresh: Vec<(BlockId, BlockId, i64)> = Vec::new();
    for (b1, (b3, delta)) in j13p.iter() {
        if m1.valid_block(b1) {
            continue;
        }
        debug_assert!(m1p.valid_block(b1));
        let (blo, bhi) = match m1p.blocks.get(&b1) {
            Some(blk) => (blk.lo, blk.hi),
            None => (0, 0),
        };
        let (next, b2) = m2p.alloc(blo, bhi).expect("lo <= hi");
        // Allocation pre-populates the footprint; the real permissions and
        // values arrive in step 2, so start from a bare block.
        m2p = next;
        let blk = m2p.blocks.get_mut(&b2).unwrap();
        blk.cells.clear();
        blk.perms.clear();
        j12p.insert(b1, (b2, 0));
        j23p.insert(b2, (b3, delta));
        fresh.push((b1, b2, delta));
    }

    // Step 2: contents of fresh mapped blocks.
    for &(b1, b2, _) in &fresh {
        let Some(blk1) = m1p.blocks.get(&b1) else { continue };
        let perms: Vec<(i64, (Permission, Permission))> =
            blk1.perms.iter().map(|(&o, &p)| (o, p)).collect();
        for (o1, p) in perms {
            let blk2 = m2p.blocks.get_mut(&b2).unwrap();
            blk2.perms.insert(o1, p);
            blk2.cells.entry(o1).or_insert(Value::Undef);
            if m1p.perm_at(b1, o1, PermKind::Cur, Permission::Readable) {
                let v1 = m1p.value_at(b1, o1);
                let v2 = value_transport(&j12p, &v1).unwrap_or(Value::Undef);
                m2p.blocks.get_mut(&b2).unwrap().cells.insert(o1, v2);
            }
        }
    }

    // Step 3: old positions in reach of j12 and mapped on by j23. The
    // preimage is unique by the non-overlap clause of mem-inj(j12,m1,m2).
    let sources = m1.max_nonempty_positions();
    for (b2, blk2) in m2.blocks.clone() {
        if j23.get(b2).is_none() {
            continue;
        }
        for &o2 in blk2.perms.keys() {
            let mut preimage = None;
            for &(b1, o1) in &sources {
                if let Some((t, d)) = j12.get(b1) {
                    if t == b2 && o1 + d == o2 {
                        preimage = Some((b1, o1));
                        break;
                    }
                }
            }
            let Some((b1, o1)) = preimage else { continue };
            // Copy the permission of (b1,o1) in m1'.
            let p1 = m1p.perm_pair(b1, o1);
            {
                let blk = m2p.blocks.get_mut(&b2).unwrap();
                match p1 {
                    Some(p) => {
                        blk.perms.insert(o2, p);
                        blk.cells.entry(o2).or_insert(Value::Undef);
                    }
                    None => {
                        blk.perms.remove(&o2);
                        blk.cells.remove(&o2);
                    }
                }
            }
            // Values are only overwritten where the target was writable:
            // read-only public data keeps its m2 value.
            if m1p.perm_at(b1, o1, PermKind::Cur, Permission::Readable)
                && m2.perm_at(b2, o2, PermKind::Max, Permission::Writable)
            {
                let v1 = m1p.value_at(b1, o1);
                let v2 = value_transport(&j12p, &v1).unwrap_or(Value::Undef);
                if p1.is_some() {
                    m2p.blocks.get_mut(&b2).unwrap().cells.insert(o2, v2);
                }
            }
        }
    }

    Ok((j12p, j23p, m2p))
}

/// The easy split of a single injection into a partial identity followed by
/// the injection itself: `j12 = {b -> (b,0) | j13(b) defined}`, `m2 = m1`,
/// `j23 = j13`.
pub fn decompose_identity(j13: &Meminj, m1: &MemoryState) -> (Meminj, MemoryState, Meminj) {
    let j12 = Meminj::from_pairs(j13.iter().map(|(b, _)| (b, (b, 0))));
    (j12, m1.clone(), j13.clone())
}

/// After two stacked protected evolutions, verify that their composition is
/// a single protected evolution of the composed world: `j13' = j23' . j12'`
/// must be injp-accessible from `(j13, m1, m3)` and relate `m1'` to `m3'`.
#[allow(clippy::too_many_arguments)]
pub fn recompose_check(
    j13: &Meminj,
    m1: &MemoryState,
    m3: &MemoryState,
    j12p: &Meminj,
    j23p: &Meminj,
    m1p: &MemoryState,
    m3p: &MemoryState,
) -> CheckReport {
    let j13p = compose_inj(j12p, j23p);
    let mut report = injp_acc_check(
        &InjpWorld::new(j13.clone(), m1.clone(), m3.clone()),
        &InjpWorld::new(j13p.clone(), m1p.clone(), m3p.clone()),
    );
    let inj = mem_inj_check(&j13p, m1p, m3p);
    if !inj.ok() {
        for v in inj.violations {
            report.push(format!("mem-inj-{}", v.clause), v.witness);
        }
    }
    report
}

/// Outcome of sampling a refinement between two Kripke memory relations.
#[derive(Debug, Clone)]
pub struct RefineSampleReport {
    pub stronger: KmrTag,
    pub weaker: KmrTag,
    pub instances: usize,
    pub counterexamples: Vec<String>,
}

impl RefineSampleReport {
    pub fn ok(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct UnsupportedPair(pub KmrTag, pub KmrTag);

impl fmt::Display for UnsupportedPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no witness or sampler registered for ({}, {})", self.0, self.1)
    }
}

impl std::error::Error for UnsupportedPair {}

/// Sample the refinement `K ⊑ L`: for each sampled `L`-world a constructive
/// `K`-witness is produced, a `K`-evolution is generated, and the transfer
/// back to an `L`-evolution is checked. For the registered failing
/// direction `(Inj, Injp)` the sampler deliberately edits private memory so
/// the report collects counterexamples instead.
pub fn kmr_sample_refine(
    stronger: KmrTag,
    weaker: KmrTag,
    cfg: &crate::gen::GenConfig,
    iters: usize,
    seed: u64,
) -> Result<RefineSampleReport, UnsupportedPair> {
    use crate::gen::{gen_protected_evolution, gen_single_injection, rng_for};
    use rand::Rng;

    let mut report = RefineSampleReport {
        stronger,
        weaker,
        instances: iters,
        counterexamples: Vec::new(),
    };

    match (stronger, weaker) {
        // Every inj-world is an injp-world; protected evolutions satisfy
        // the weaker accessibility.
        (KmrTag::Injp, KmrTag::Inj) => {
            for i in 0..iters {
                let mut rng = rng_for(seed, i as u64);
                let (j, m1, m2) = gen_single_injection(&mut rng, cfg);
                let w = InjpWorld::new(j.clone(), m1.clone(), m2.clone());
                let (jp, m1p, m2p) = gen_protected_evolution(&mut rng, cfg, &j, &m1, &m2);
                let wp = InjpWorld::new(jp, m1p, m2p);
                let transfer = kmr_acc_check(KmrTag::Inj, &w, &wp);
                if !transfer.ok() {
                    report
                        .counterexamples
                        .push(format!("instance {i}: inj transfer failed: {transfer}"));
                }
            }
            Ok(report)
        }
        // Equal memories embed as an identity-shaped extension.
        (KmrTag::Id, KmrTag::Ext) | (KmrTag::Ext, KmrTag::Id) => {
            for i in 0..iters {
                let mut rng = rng_for(seed ^ 0xe7, i as u64);
                let (_, m, _) = gen_single_injection(&mut rng, cfg);
                let w = InjpWorld::new(Meminj::identity_on(&m), m.clone(), m.clone());
                let membership = kmr_rel_check(KmrTag::Ext, &w);
                if !membership.ok() {
                    report.counterexamples.push(format!(
                        "instance {i}: identity embedding not an extension: {membership}"
                    ));
                    continue;
                }
                // An equal-memory evolution: alloc and store, mirrored.
                let (mp, b) = m.alloc(0, 2).unwrap();
                let mp = mp.store(b, 0, Value::int(rng.gen_range(-9..10))).unwrap();
                let wp = InjpWorld::new(Meminj::identity_on(&mp), mp.clone(), mp);
                let transfer = kmr_acc_check(KmrTag::Ext, &w, &wp);
                if !transfer.ok() {
                    report
                        .counterexamples
                        .push(format!("instance {i}: ext transfer failed: {transfer}"));
                }
            }
            Ok(report)
        }
        // The failing direction: an inj evolution may edit unmapped or
        // out-of-reach memory, which injp forbids.
        (KmrTag::Inj, KmrTag::Injp) => {
            for i in 0..iters {
                let mut rng = rng_for(seed ^ 0x11, i as u64);
                let (j, m1, m2) = gen_single_injection(&mut rng, cfg);
                // Ensure a private source cell exists, then edit it: legal
                // for inj, illegal for injp.
                let (m1x, bp) = m1.alloc(0, 1).unwrap();
                let w = InjpWorld::new(j.clone(), m1x.clone(), m2.clone());
                if !w.well_formed() {
                    continue;
                }
                let m1p = m1x.store(bp, 0, Value::int(77)).unwrap();
                let wp = InjpWorld::new(j.clone(), m1p, m2.clone());
                let inj_ok = kmr_acc_check(KmrTag::Inj, &w, &wp).ok();
                let injp_transfer = kmr_acc_check(KmrTag::Injp, &w, &wp);
                if inj_ok && !injp_transfer.ok() {
                    report.counterexamples.push(format!(
                        "instance {i}: inj evolution edits private cell ({bp},0); injp transfer fails: {injp_transfer}"
                    ));
                }
            }
            Ok(report)
        }
        _ => Err(UnsupportedPair(stronger, weaker)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::GenConfig;

    fn world_identity() -> InjpWorld {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        let m = m.store(b, 0, Value::int(7)).unwrap();
        InjpWorld::new(Meminj::identity_on(&m), m.clone(), m)
    }

    #[test]
    fn injp_acc_reflexive() {
        let w = world_identity();
        assert!(injp_acc_check(&w, &w). ok());
    }

    #[test]
    fn injp_acc_protects_unmapped() {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m, b_priv) = m.alloc(0, 8).unwrap();
        let j = Meminj::from_pairs([(b, (b, 0))]);
        let w = InjpWorld::new(j.clone(), m.clone(), m.clone());
        let m1p = m.store(b_priv, 0, Value::int(3)).unwrap();
        let w2 = InjpWorld::new(j, m1p, m.clone());
        let r = injp_acc_check(&w, &w2);
        assert!(r.violations.iter().any(|v| v.clause == "unmapped-protected"), "{r}");
    }

    #[test]
    fn injp_acc_protects_out_of_reach() {
        let (m1, a) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m2, t) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m2, t_priv) = m2.alloc(0, 8).unwrap();
        let j = Meminj::from_pairs([(a, (t, 0))]);
        let w = InjpWorld::new(j.clone(), m1.clone(), m2.clone());
        let m2p = m2.store(t_priv, 0, Value::int(3)).unwrap();
        let w2 = InjpWorld::new(j, m1, m2p);
        let r = injp_acc_check(&w, &w2);
        assert!(r.violations.iter().any(|v| v.clause == "out-of-reach-protected"), "{r}");
    }

    #[test]
    fn decompose_identity_basics() {
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m1, b_un) = m1.alloc(0, 8).unwrap();
        let j13 = Meminj::from_pairs([(b1, (3, 4))]);
        let (j12, m2, j23) = decompose_identity(&j13, &m1);
        assert_eq!(j12, Meminj::from_pairs([(b1, (b1, 0))]));
        assert_eq!(j23, j13);
        assert_eq!(m2, m1);
        assert!(j12.get(b_un).is_none());
        let (j12e, _, _) = decompose_identity(&Meminj::empty(), &m1);
        assert!(j12e.is_empty());
    }

    #[test]
    fn decompose_identity_preserves_injection() {
        let (m1, b1) = MemoryState::empty().alloc(0, 16).unwrap();
        let m1 = m1.store(b1, 8, Value::int(5)).unwrap();
        let (m3, b3) = MemoryState::empty().alloc(4, 20).unwrap();
        let m3 = m3.store(b3, 12, Value::int(5)).unwrap();
        let j13 = Meminj::from_pairs([(b1, (b3, 4))]);
        assert!(mem_inj_check(&j13, &m1, &m3).ok());
        let (j12, m2, j23) = decompose_identity(&j13, &m1);
        assert!(mem_inj_check(&j12, &m1, &m2).ok());
        assert!(mem_inj_check(&j23, &m2, &m3).ok());
    }

    #[test]
    fn interpolate_simple_update() {
        // Identity-style chain with a store performed on both outer legs.
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let m1 = m1.store(b1, 0, Value::int(7)).unwrap();
        let m2 = m1.clone();
        let m3 = m1.clone();
        let j12 = Meminj::from_pairs([(b1, (b1, 0))]);
        let j23 = j12.clone();
        let j13p = compose_inj(&j12, &j23);
        let m1p = m1.store(b1, 0, Value::int(9)).unwrap();
        let m3p = m3.store(b1, 0, Value::int(9)).unwrap();

        let (j12p, j23p, m2p) =
            interpolate(&j12, &j23, &m1, &m2, &m3, &j13p, &m1p, &m3p).unwrap();
        assert_eq!(m2p.value_at(b1, 0), Value::int(9));
        assert!(mem_inj_check(&j12p, &m1p, &m2p).ok());
        assert!(mem_inj_check(&j23p, &m2p, &m3p).ok());
        assert!(injp_acc_check(
            &InjpWorld::new(j12.clone(), m1.clone(), m2.clone()),
            &InjpWorld::new(j12p.clone(), m1p.clone(), m2p.clone())
        )
        .ok());
        assert!(injp_acc_check(
            &InjpWorld::new(j23, m2, m3),
            &InjpWorld::new(j23p.clone(), m2p, m3p)
        )
        .ok());
        assert_eq!(compose_inj(&j12p, &j23p), j13p);
    }

    #[test]
    fn interpolate_keeps_private_cells() {
        // b_priv exists only in m2 and is neither in reach of j12 nor
        // mapped by j23: its contents must survive unchanged.
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m2, t1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m2, b_priv) = m2.alloc(0, 8).unwrap();
        let m2 = m2.store(b_priv, 0, Value::int(55)).unwrap();
        let (m3, u1) = MemoryState::empty().alloc(0, 8).unwrap();
        let j12 = Meminj::from_pairs([(b1, (t1, 0))]);
        let j23 = Meminj::from_pairs([(t1, (u1, 0))]);
        let j13p = compose_inj(&j12, &j23);
        let (_, _, m2p) =
            interpolate(&j12, &j23, &m1, &m2, &m3, &j13p, &m1, &m3).unwrap();
        assert_eq!(m2p.value_at(b_priv, 0), Value::int(55));
        assert_eq!(m2p.perm_pair(b_priv, 0), m2.perm_pair(b_priv, 0));
    }

    #[test]
    fn interpolate_threads_fresh_blocks() {
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m2, t1) = MemoryState::empty().alloc(0, 8).unwrap();
        let (m3, u1) = MemoryState::empty().alloc(0, 8).unwrap();
        let j12 = Meminj::from_pairs([(b1, (t1, 0))]);
        let j23 = Meminj::from_pairs([(t1, (u1, 0))]);

        // Both outer memories allocate one fresh block, mapped by j13'.
        let (m1p, f1) = m1.alloc(0, 8).unwrap();
        let m1p = m1p.store(f1, 0, Value::int(3)).unwrap();
        let (m3p, f3) = m3.alloc(0, 8).unwrap();
        let m3p = m3p.store(f3, 0, Value::int(3)).unwrap();
        let mut j13p = compose_inj(&j12, &j23);
        j13p.insert(f1, (f3, 0));

        let (j12p, j23p, m2p) =
            interpolate(&j12, &j23, &m1, &m2, &m3, &j13p, &m1p, &m3p).unwrap();
        let (f2, d) = j12p.get(f1).unwrap();
        assert_eq!(d, 0);
        assert!(!m2.valid_block(f2));
        assert_eq!(j23p.get(f2), Some((f3, 0)));
        assert_eq!(m2p.value_at(f2, 0), Value::int(3));
        assert!(mem_inj_check(&j12p, &m1p, &m2p).ok());
        assert!(mem_inj_check(&j23p, &m2p, &m3p).ok());
        assert_eq!(compose_inj(&j12p, &j23p), j13p);
    }

    #[test]
    fn interpolate_rejects_bad_inputs() {
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let m1 = m1.store(b1, 0, Value::int(1)).unwrap();
        let (m2, t1) = MemoryState::empty().alloc(0, 8).unwrap();
        let m2 = m2.store(t1, 0, Value::int(2)).unwrap(); // value mismatch
        let j12 = Meminj::from_pairs([(b1, (t1, 0))]);
        let j23 = Meminj::empty();
        let err = interpolate(&j12, &j23, &m1, &m2, &m2, &Meminj::empty(), &m1, &m2);
        assert!(err.is_err());
    }

    #[test]
    fn sample_refine_registered_pairs() {
        let cfg = GenConfig::default();
        let r = kmr_sample_refine(KmrTag::Injp, KmrTag::Inj, &cfg, 40, 3).unwrap();
        assert!(r.ok(), "{:?}", r.counterexamples.first());
        let r = kmr_sample_refine(KmrTag::Id, KmrTag::Ext, &cfg, 40, 3).unwrap();
        assert!(r.ok(), "{:?}", r.counterexamples.first());
    }

    #[test]
    fn sample_refine_finds_protection_gap() {
        let cfg = GenConfig::default();
        let r = kmr_sample_refine(KmrTag::Inj, KmrTag::Injp, &cfg, 40, 3).unwrap();
        assert!(!r.counterexamples.is_empty());
    }

    #[test]
    fn sample_refine_rejects_unknown_pairs() {
        let cfg = GenConfig::default();
        assert!(kmr_sample_refine(KmrTag::Ext, KmrTag::Injp, &cfg, 5, 3).is_err());
    }

    #[test]
    fn read_only_public_cell_keeps_target_value() {
        // A public position whose target is read-only: step 3 copies the
        // permission but must keep the m2 value.
        let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
        let m1 = m1.store(b1, 0, Value::int(42)).unwrap();
        let m1 = m1
            .set_perm(b1, 0, Some((Permission::Readable, Permission::Readable)))
            .unwrap();
        let (m2, t1) = MemoryState::empty().alloc(0, 8).unwrap();
        let m2 = m2.store(t1, 0, Value::int(42)).unwrap();
        let m2 = m2
            .set_perm(t1, 0, Some((Permission::Readable, Permission::Readable)))
            .unwrap();
        let m3 = m2.clone();
        let j12 = Meminj::from_pairs([(b1, (t1, 0))]);
        let j23 = Meminj::from_pairs([(t1, (t1, 0))]);
        let j13p = compose_inj(&j12, &j23);
        let (_, _, m2p) =
            interpolate(&j12, &j23, &m1, &m2, &m3, &j13p, &m1, &m3).unwrap();
        assert_eq!(m2p.value_at(t1, 0), Value::int(42));
        assert_eq!(m2p.perm_pair(t1, 0), Some((Permission::Readable, Permission::Readable)));
    }
}
