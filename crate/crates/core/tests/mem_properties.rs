//! Property tests over the memory model and injection lemma suites.

use proptest::prelude::*;
use refinekit::gen::{gen_chain, gen_single_injection, rng_for, GenConfig};
use refinekit::inject::{
    compose_inj, mem_inj_check, out_of_reach, reach_closure, unmapped, value_inject_check,
    value_transport, Meminj,
};
use refinekit::mem::{
    mem_acc_check, unchanged_on_check, MemoryState, PermKind, Permission, Value,
};
use std::collections::BTreeSet;

proptest! {
    // Permission-lattice monotonicity and cur-below-max on arbitrary
    // single-cell permission maps.
    #[test]
    fn permission_lattice(maxp in 0usize..4, curp in 0usize..4) {
        let perms = [
            Permission::Nonempty,
            Permission::Readable,
            Permission::Writable,
            Permission::Freeable,
        ];
        let max = perms[maxp.max(curp)];
        let cur = perms[maxp.min(curp)];
        let (m, b) = MemoryState::empty().alloc(0, 1).unwrap();
        let m = m.set_perm(b, 0, Some((max, cur))).unwrap();
        let mut prev_cur = true;
        let mut prev_max = true;
        for p in [Permission::Nonempty, Permission::Readable, Permission::Writable, Permission::Freeable] {
            let has_cur = m.perm_at(b, 0, PermKind::Cur, p);
            let has_max = m.perm_at(b, 0, PermKind::Max, p);
            // Monotone: once a level is missing, every higher level is too.
            prop_assert!(prev_cur || !has_cur);
            prop_assert!(prev_max || !has_max);
            // Cur below max.
            prop_assert!(!has_cur || has_max);
            prev_cur = has_cur;
            prev_max = has_max;
        }
    }

    // Operation gates are exactly the documented permission thresholds,
    // exhaustively over the lattice on a one-cell memory.
    #[test]
    fn operation_permission_gates(maxp in 0usize..4, curp in 0usize..4) {
        let perms = [
            Permission::Nonempty,
            Permission::Readable,
            Permission::Writable,
            Permission::Freeable,
        ];
        let max = perms[maxp.max(curp)];
        let cur = perms[maxp.min(curp)];
        let (m, b) = MemoryState::empty().alloc(0, 1).unwrap();
        let m = m.set_perm(b, 0, Some((max, cur))).unwrap();
        prop_assert_eq!(m.load(b, 0).is_ok(), cur >= Permission::Readable);
        prop_assert_eq!(m.store(b, 0, Value::int(1)).is_ok(), cur >= Permission::Writable);
        prop_assert_eq!(m.free(b, 0, 1).is_ok(), cur >= Permission::Freeable);
    }

    // unchanged_on is monotone in the position predicate.
    #[test]
    fn unchanged_on_monotone(off in 0i64..8, val in -5i64..5) {
        let (m, b) = MemoryState::empty().alloc(0, 8).unwrap();
        let m2 = m.store(b, off, Value::int(val)).unwrap();
        // Q selects everything, P a single position.
        let q_holds = unchanged_on_check(|_, _| true, &m, &m2);
        let p_holds = unchanged_on_check(|bb, oo| bb == b && oo == 3, &m, &m2);
        prop_assert!(!q_holds || p_holds);
    }

    // Snapshot serialization round-trips bit-exactly for random small
    // memories produced by the instance generator.
    #[test]
    fn snapshot_roundtrip(seed in 0u64..500) {
        let mut rng = rng_for(seed, 0);
        let (_, m1, m2) = gen_single_injection(&mut rng, &GenConfig::default());
        for m in [m1, m2] {
            let j = refinekit::json::memory_to_json(&m);
            let back = refinekit::json::memory_from_json(&j).unwrap();
            prop_assert_eq!(&m, &back);
        }
    }
}

#[test]
fn mem_acc_is_reflexive_and_transitive_on_operation_chains() {
    for i in 0..100u64 {
        let mut rng = rng_for(0xacce, i);
        let (_, m0, _) = gen_single_injection(&mut rng, &GenConfig::default());
        assert!(mem_acc_check(&m0, &m0));
        // A chain of legal operations.
        let m1 = {
            let (m, b) = m0.alloc(0, 3).unwrap();
            m.store(b, 0, Value::int(5)).unwrap()
        };
        let m2 = {
            let (m, b2) = m1.alloc(0, 2).unwrap();
            m.free(b2, 0, 1).unwrap()
        };
        assert!(mem_acc_check(&m0, &m1));
        assert!(mem_acc_check(&m1, &m2));
        assert!(mem_acc_check(&m0, &m2), "transitivity on instance {i}");
    }
}

/// Composition soundness: two valid injections compose into a valid one.
#[test]
fn injection_composition_is_sound() {
    let cfg = GenConfig::default();
    for i in 0..500u64 {
        let mut rng = rng_for(0xc0de, i);
        let c = gen_chain(&mut rng, &cfg);
        let j13 = compose_inj(&c.j12, &c.j23);
        let r = mem_inj_check(&j13, &c.m1, &c.m3);
        assert!(r.ok(), "instance {i}: {r}");
    }
}

/// Readable mid-value: under a composed injection, every readable mapped
/// source cell has a middle value produced by transport that relates both
/// legs.
#[test]
fn readable_mid_value_exists() {
    let cfg = GenConfig::default();
    for i in 0..500u64 {
        let mut rng = rng_for(0x1217, i);
        let c = gen_chain(&mut rng, &cfg);
        for (b1, (b2, d12)) in c.j12.iter() {
            let Some((b3, d23)) = c.j23.get(b2) else { continue };
            let Some(blk) = c.m1.blocks.get(&b1) else { continue };
            for &o1 in blk.perms.keys() {
                if !c.m1.perm_at(b1, o1, PermKind::Cur, Permission::Readable) {
                    continue;
                }
                let v1 = c.m1.value_at(b1, o1);
                let v2 = value_transport(&c.j12, &v1).expect("readable source transports");
                let v3 = c.m3.value_at(b3, o1 + d12 + d23);
                assert!(
                    value_inject_check(&c.j12, &v1, &v2),
                    "instance {i}: first leg at ({b1},{o1})"
                );
                assert!(
                    value_inject_check(&c.j23, &v2, &v3),
                    "instance {i}: second leg at ({b1},{o1})"
                );
            }
        }
    }
}

/// Out-of-reach positions stay out of reach through composition.
#[test]
fn out_of_reach_reverse() {
    let cfg = GenConfig::default();
    for i in 0..500u64 {
        let mut rng = rng_for(0x00f, i);
        let c = gen_chain(&mut rng, &cfg);
        let j13 = compose_inj(&c.j12, &c.j23);
        for (b2, (b3, d)) in c.j23.iter() {
            let Some(blk) = c.m2.blocks.get(&b2) else { continue };
            for &o2 in blk.perms.keys() {
                if out_of_reach(&c.j12, &c.m1, b2, o2)
                    && c.m2.perm_at(b2, o2, PermKind::Max, Permission::Nonempty)
                {
                    assert!(
                        out_of_reach(&j13, &c.m1, b3, o2 + d),
                        "instance {i}: position ({b2},{o2})"
                    );
                }
            }
        }
    }
}

/// Closure of public memory: reads from readable public positions stay
/// inside the public region.
#[test]
fn public_closure() {
    let cfg = GenConfig::default();
    for i in 0..500u64 {
        let mut rng = rng_for(0xc105, i);
        let (j, m1, m2) = gen_single_injection(&mut rng, &cfg);
        assert!(mem_inj_check(&j, &m1, &m2).ok());
        // Roots: all readable public positions.
        let mut roots = Vec::new();
        for (b, blk) in &m1.blocks {
            if unmapped(&j, *b) {
                continue;
            }
            for &o in blk.perms.keys() {
                if m1.perm_at(*b, o, PermKind::Cur, Permission::Readable) {
                    roots.push((*b, o));
                }
            }
        }
        let reached: BTreeSet<_> = reach_closure(&m1, &roots);
        for b in reached {
            assert!(!unmapped(&j, b), "instance {i}: block {b} escaped the public region");
        }
    }
}

/// Monotone protection: a grown injection leaves fewer source blocks
/// unmapped.
#[test]
fn unmapped_shrinks_under_growth() {
    let cfg = GenConfig::default();
    for i in 0..100u64 {
        let mut rng = rng_for(0x960, i);
        let (j, m1, _) = gen_single_injection(&mut rng, &cfg);
        let mut grown = j.clone();
        grown.insert(m1.next_block + 7, (m1.next_block + 8, 0));
        for b in m1.valid_blocks() {
            if unmapped(&grown, b) {
                assert!(unmapped(&j, b));
            }
        }
        let _ = Meminj::empty();
    }
}
