//! Negative suite: mutated binaries and adversarial environments must fail
//! at their documented clause, never pass.

use refinekit::conv::scc;
use refinekit::conv::simcheck::{sim_check, PassMatcher, ProtectedEnv, SimPlan};
use refinekit::gen::rng_for;
use refinekit::lang::miniasm::{self, Instr};
use refinekit::mem::Value;
use refinekit::scenarios::matchers::ServerImplMatcher;
use refinekit::scenarios::{scc_item, SERVER_OPT_MA};
use refinekit::sem::{CQuery, Reg, Signature, SymDecl, SymbolTable};
use refinekit::specs::ServerSpec;
use rand::Rng;

fn setup(server_src: &str) -> (miniasm::MiniAsmModule, SymbolTable) {
    let server = miniasm::parse_module(server_src).unwrap();
    let mut decls = server.decls();
    decls.push(SymDecl::extern_func("process"));
    decls.push(SymDecl::extern_func("request"));
    decls.push(SymDecl::var("result", false, vec![Value::int(0)]));
    let se = SymbolTable::build(&decls).unwrap();
    (server, se)
}

fn server_plan(se: &SymbolTable, count: usize, seed: u64) -> SimPlan {
    let mut items = Vec::new();
    for i in 0..count {
        let mut rng = rng_for(seed, i as u64);
        let q = CQuery {
            vf: Value::ptr(se.block_of("encrypt").unwrap(), 0),
            sg: Signature::int_ptr_void(),
            args: vec![
                Value::int(rng.gen_range(0..100)),
                Value::ptr(se.block_of("process").unwrap(), 0),
            ],
            mem: se.initial_memory(),
        };
        items.push(scc_item(se, &q).unwrap());
    }
    SimPlan { items, stutter: 512, fuel: 100_000 }
}

fn check(server: &miniasm::MiniAsmModule, se: &SymbolTable) -> refinekit::conv::simcheck::SimOutcome {
    let spec = ServerSpec::new(se);
    let sem = miniasm::sem_miniasm(server, se).unwrap();
    let plan = server_plan(se, 10, 0xdead);
    sim_check(
        &spec,
        &sem,
        &plan,
        || Box::new(ServerImplMatcher::new(se, server, &scc().flatten())) as Box<dyn PassMatcher>,
        |s| Box::new(ProtectedEnv::new(s)),
    )
}

#[test]
fn correct_server_passes() {
    let (server, se) = setup(SERVER_OPT_MA);
    let outcome = check(&server, &se);
    assert!(outcome.ok(), "{:?}", outcome.first_failure());
}

#[test]
fn wrong_xor_constant_fails_internal_step() {
    let (mut server, se) = setup(SERVER_OPT_MA);
    // Mutate the folded constant: 42 becomes 41.
    for f in &mut server.funcs {
        for i in &mut f.body {
            if let Instr::Pxori { imm, .. } = i {
                *imm = 41;
            }
        }
    }
    let outcome = check(&server, &se);
    assert_eq!(outcome.passes(), 0, "the mutant must never pass");
    let (clause, detail) = outcome.first_failure().expect("expected a failure");
    assert_eq!(clause, 3, "value mismatch surfaces in lockstep execution: {detail}");
}

#[test]
fn clobbered_callee_save_fails_final_replies() {
    let (mut server, se) = setup(SERVER_OPT_MA);
    // Insert a write to RBX without restoring it.
    let body = &mut server.funcs[0].body;
    body.insert(1, Instr::Pconst { imm: 0, dst: Reg::Rbx });
    let outcome = check(&server, &se);
    assert_eq!(outcome.passes(), 0, "the mutant must never pass");
    let fails: Vec<_> = outcome
        .items
        .iter()
        .filter_map(|i| match i {
            refinekit::conv::simcheck::ItemClass::Fail { clause, detail } => {
                Some((*clause, detail.clone()))
            }
            _ => None,
        })
        .collect();
    assert!(!fails.is_empty());
    // The callee-save violation surfaces either at the staged relation
    // or, at the latest, in the final reply relation.
    for (clause, detail) in &fails {
        assert!(
            (*clause == 3 || *clause == 5) && detail.contains("callee-save"),
            "unexpected failure: clause {clause}: {detail}"
        );
    }
}

#[test]
fn key_mutated_in_memory_is_caught_by_ro() {
    // ro-validity is part of the incoming convention: a forged key makes
    // the plan item vacuous rather than provable.
    let (server, se) = setup(SERVER_OPT_MA);
    let spec = ServerSpec::new(&se);
    let sem = miniasm::sem_miniasm(&server, &se).unwrap();
    let mut mem = se.initial_memory();
    let key = se.block_of("key").unwrap();
    mem.blocks.get_mut(&key).unwrap().cells.insert(0, Value::int(41));
    let q = CQuery {
        vf: Value::ptr(se.block_of("encrypt").unwrap(), 0),
        sg: Signature::int_ptr_void(),
        args: vec![Value::int(7), Value::ptr(se.block_of("process").unwrap(), 0)],
        mem,
    };
    let item = scc_item(&se, &q).unwrap();
    let plan = SimPlan { items: vec![item], stutter: 512, fuel: 100_000 };
    let outcome = sim_check(
        &spec,
        &sem,
        &plan,
        || {
            Box::new(ServerImplMatcher::new(&se, &server, &scc().flatten()))
                as Box<dyn PassMatcher>
        },
        |s| Box::new(ProtectedEnv::new(s)),
    );
    assert_eq!(outcome.passes(), 0);
    assert!(
        outcome.items.iter().any(|i| matches!(
            i,
            refinekit::conv::simcheck::ItemClass::Vacuous { detail }
                if detail.contains("ro-valid")
        )),
        "{:?}",
        outcome.items
    );
}
