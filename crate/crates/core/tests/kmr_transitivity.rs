//! Property suites for the transitivity constructions: interpolation of a
//! middle state for one protected evolution over a two-injection chain, and
//! recomposition of two stacked evolutions into one.

use refinekit::gen::{
    gen_decomposed_evolution, gen_interpolation_instance, gen_single_injection, rng_for,
    GenConfig,
};
use refinekit::inject::{compose_inj, mem_inj_check, out_of_reach, Meminj};
use refinekit::kmr::{
    decompose_identity, injp_acc_check, interpolate, recompose_check, InjpWorld,
};
use refinekit::mem::{MemoryState, Permission, Value};

fn check_interpolation_instance(seed: u64, i: u64) -> Result<(), String> {
    let cfg = GenConfig::default();
    let mut rng = rng_for(seed, i);
    let inst = gen_interpolation_instance(&mut rng, &cfg);
    let c = &inst.chain;

    let (j12p, j23p, m2p) = interpolate(
        &c.j12, &c.j23, &c.m1, &c.m2, &c.m3, &inst.j13p, &inst.m1p, &inst.m3p,
    )
    .map_err(|e| format!("instance {i}: {e}"))?;

    let r = mem_inj_check(&j12p, &inst.m1p, &m2p);
    if !r.ok() {
        return Err(format!("instance {i}: first leg injection: {r}"));
    }
    let r = mem_inj_check(&j23p, &m2p, &inst.m3p);
    if !r.ok() {
        return Err(format!("instance {i}: second leg injection: {r}"));
    }
    let r = injp_acc_check(
        &InjpWorld::new(c.j12.clone(), c.m1.clone(), c.m2.clone()),
        &InjpWorld::new(j12p.clone(), inst.m1p.clone(), m2p.clone()),
    );
    if !r.ok() {
        return Err(format!("instance {i}: first leg accessibility: {r}"));
    }
    let r = injp_acc_check(
        &InjpWorld::new(c.j23.clone(), c.m2.clone(), c.m3.clone()),
        &InjpWorld::new(j23p.clone(), m2p, inst.m3p.clone()),
    );
    if !r.ok() {
        return Err(format!("instance {i}: second leg accessibility: {r}"));
    }
    if compose_inj(&j12p, &j23p) != inst.j13p {
        return Err(format!("instance {i}: split injections do not recompose"));
    }
    Ok(())
}

#[test]
fn interpolation_holds_on_random_instances() {
    for i in 0..300 {
        if let Err(e) = check_interpolation_instance(0xa11ce, i) {
            panic!("{e}");
        }
    }
}

#[test]
fn decomposition_recomposes_on_random_instances() {
    let cfg = GenConfig::default();
    for i in 0..300 {
        let mut rng = rng_for(0xb0b, i);
        let (j13, m1, m3) = gen_single_injection(&mut rng, &cfg);
        let (j12, m2, j23) = decompose_identity(&j13, &m1);
        assert!(mem_inj_check(&j12, &m1, &m2).ok(), "instance {i}: identity leg");
        assert!(mem_inj_check(&j23, &m2, &m3).ok(), "instance {i}: carried leg");

        let (j12p, j23p, m1p, m2p, m3p) =
            gen_decomposed_evolution(&mut rng, &cfg, &j13, &m1, &m3);
        let r = recompose_check(&j13, &m1, &m3, &j12p, &j23p, &m1p, &m3p);
        assert!(r.ok(), "instance {i}: recomposition: {r}");
        assert!(mem_inj_check(&j12p, &m1p, &m2p).ok(), "instance {i}");
        assert!(mem_inj_check(&j23p, &m2p, &m3p).ok(), "instance {i}");
    }
}

#[test]
fn accessibility_is_reflexive_and_transitive_on_protected_chains() {
    use refinekit::gen::gen_protected_evolution;
    let cfg = GenConfig::default();
    for i in 0..200 {
        let mut rng = rng_for(0x3c4a, i);
        let (j, m1, m2) = gen_single_injection(&mut rng, &cfg);
        let w0 = InjpWorld::new(j.clone(), m1.clone(), m2.clone());
        assert!(injp_acc_check(&w0, &w0).ok(), "reflexivity at instance {i}");
        let (j1, a1, b1) = gen_protected_evolution(&mut rng, &cfg, &j, &m1, &m2);
        let w1 = InjpWorld::new(j1.clone(), a1.clone(), b1.clone());
        let (j2, a2, b2) = gen_protected_evolution(&mut rng, &cfg, &j1, &a1, &b1);
        let w2 = InjpWorld::new(j2, a2, b2);
        assert!(injp_acc_check(&w0, &w1).ok(), "first hop at instance {i}");
        assert!(injp_acc_check(&w1, &w2).ok(), "second hop at instance {i}");
        let r = injp_acc_check(&w0, &w2);
        assert!(r.ok(), "transitivity at instance {i}: {r}");
    }
}

#[test]
fn recompose_flags_touched_private_region() {
    // Build a chain where a target cell is out of reach of the composed
    // injection, then have the legs free and rewrite it. Each leg on its
    // own cannot justify the change, and the composed accessibility check
    // must report the protected cell.
    let (m1, b1) = MemoryState::empty().alloc(0, 8).unwrap();
    let (m3, t) = MemoryState::empty().alloc(0, 8).unwrap();
    let (m3, t_priv) = m3.alloc(0, 8).unwrap();
    let m3 = m3.store(t_priv, 0, Value::int(5)).unwrap();
    let j13 = Meminj::from_pairs([(b1, (t, 0))]);
    assert!(mem_inj_check(&j13, &m1, &m3).ok());
    assert!(out_of_reach(&j13, &m1, t_priv, 0));

    let (j12p, j23p, _m2) = {
        let (j12, m2, j23) = decompose_identity(&j13, &m1);
        (j12, j23, m2)
    };
    // The second leg mutates the out-of-reach cell.
    let m3p = m3
        .set_perm(t_priv, 0, Some((Permission::Freeable, Permission::Freeable)))
        .unwrap()
        .store(t_priv, 0, Value::int(6))
        .unwrap();
    let r = recompose_check(&j13, &m1, &m3, &j12p, &j23p, &m1, &m3p);
    assert!(
        r.violations.iter().any(|v| v.clause == "out-of-reach-protected"),
        "expected an out-of-reach witness, got: {r}"
    );
}
