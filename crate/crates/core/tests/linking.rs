//! Linked-execution tests: the client module composed with the big-step
//! server spec, and the mutual summation pair.

use refinekit::lang::minic;
use refinekit::mem::Value;
use refinekit::sem::{
    link_sem, run_trace, CQuery, EnvStrategy, Query, Reply, Signature, SymDecl, SymbolTable,
    TraceEvent,
};
use refinekit::specs::{ServerSpec, SumAsmSpec};

struct NoCalls;

impl EnvStrategy for NoCalls {
    fn reply(&mut self, q: &Query, _h: &[TraceEvent]) -> Result<Reply, String> {
        Err(format!("unexpected escape to the environment: {:?}", q.target()))
    }
}

const CLIENT: &str = include_str!("../programs/client.mc");
const SUM_F: &str = include_str!("../programs/sum_f.mc");

#[test]
fn client_linked_with_server_spec_encrypts() {
    let client = minic::parse_module(CLIENT).unwrap();
    let mut decls = client.decls();
    decls.push(SymDecl::func("encrypt"));
    decls.push(SymDecl::var("key", true, vec![Value::int(42)]));
    let se = SymbolTable::build(&decls).unwrap();

    let client_sem = Box::new(minic::sem_minic(&client, &se).unwrap());
    let server = Box::new(ServerSpec::new(&se));
    let linked = link_sem(client_sem, server).unwrap();

    let mem = se.initial_memory();
    let q = Query::C(CQuery {
        vf: Value::ptr(se.block_of("request").unwrap(), 0),
        sg: Signature::int_int(),
        args: vec![Value::int(11)],
        mem,
    });
    let trace = run_trace(&linked, &q, &mut NoCalls, 1000).unwrap();
    let Some(Reply::C(r)) = trace.final_reply() else {
        panic!("expected a C reply")
    };
    assert_eq!(r.res, Value::int(11));
    let result_block = se.block_of("result").unwrap();
    assert_eq!(r.mem.value_at(result_block, 0), Value::int(33), "11 XOR 42 = 33");
    // The composite resolves both cross calls internally.
    assert_eq!(trace.outgoing_queries().count(), 0);
}

#[test]
fn query_to_unknown_symbol_escapes() {
    let client = minic::parse_module(CLIENT).unwrap();
    let se = SymbolTable::build(&client.decls()).unwrap();
    let client_sem = minic::sem_minic(&client, &se).unwrap();

    let mem = se.initial_memory();
    let q = Query::C(CQuery {
        vf: Value::ptr(se.block_of("request").unwrap(), 0),
        sg: Signature::int_int(),
        args: vec![Value::int(7)],
        mem,
    });
    // encrypt is defined nowhere: the query escapes as an outgoing event.
    struct AnswerVoid;
    impl EnvStrategy for AnswerVoid {
        fn reply(&mut self, q: &Query, _h: &[TraceEvent]) -> Result<Reply, String> {
            let Query::C(q) = q else { return Err("expected C".to_string()) };
            Ok(Reply::C(refinekit::sem::CReply { res: Value::Undef, mem: q.mem.clone() }))
        }
    }
    let trace = run_trace(&client_sem, &q, &mut AnswerVoid, 1000).unwrap();
    assert_eq!(trace.outgoing_queries().count(), 1);
    let Some(Reply::C(r)) = trace.final_reply() else { panic!() };
    assert_eq!(r.res, Value::int(7));
}

#[test]
fn mutual_sum_through_linked_specs() {
    // The C module linked with the assembly-side spec: f(i) = i(i+1)/2.
    let f_mod = minic::parse_module(SUM_F).unwrap();
    let mut decls = f_mod.decls();
    decls.push(SymDecl::func("g"));
    decls.push(SymDecl::var("s", false, vec![Value::int(0), Value::int(0)]));
    let se = SymbolTable::build(&decls).unwrap();

    let f_sem = Box::new(minic::sem_minic(&f_mod, &se).unwrap());
    let g_spec = Box::new(SumAsmSpec::new(&se));
    let linked = link_sem(f_sem, g_spec).unwrap();

    let mut mem = se.initial_memory();
    for i in [5i64, 20, 5, 20] {
        let q = Query::C(CQuery {
            vf: Value::ptr(se.block_of("f").unwrap(), 0),
            sg: Signature::int_int(),
            args: vec![Value::int(i)],
            mem: mem.clone(),
        });
        let trace = run_trace(&linked, &q, &mut NoCalls, 100_000).unwrap();
        let Some(Reply::C(r)) = trace.final_reply() else { panic!() };
        assert_eq!(r.res, Value::int(i * (i + 1) / 2), "f({i})");
        mem = r.mem.clone();
    }
    // The second f(20) is served from the memo table in one big hop.
    let q = Query::C(CQuery {
        vf: Value::ptr(se.block_of("f").unwrap(), 0),
        sg: Signature::int_int(),
        args: vec![Value::int(20)],
        mem: mem.clone(),
    });
    let trace = run_trace(&linked, &q, &mut NoCalls, 100).unwrap();
    assert!(trace.events.len() == 2, "cached query answers without recursion");
}
