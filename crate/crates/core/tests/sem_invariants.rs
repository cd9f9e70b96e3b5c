//! Invariants of the open-semantics layer: linking is associative up to
//! trace equality, linking preserves query acceptance, the trace runner is
//! deterministic, and constant propagation preserves observable traces on
//! read-only-valid queries.

use refinekit::compiler::{const_prop, local_promotion};
use refinekit::gen::rng_for;
use refinekit::lang::minic::{self, sem_minic};
use refinekit::mem::Value;
use refinekit::sem::{
    link_sem, run_trace, trace_equal, CQuery, CReply, EnvStrategy, ObservableProjection,
    OpenLts, Query, Reply, RetKind, Signature, SymbolTable, TraceEvent,
};
use rand::Rng;

const A_SRC: &str = r#"
global acc = 0
extern beta(int) -> int

func alpha(int x) -> int {
  var t
  t = call beta(x + 1)
  acc = t
  return t
}
"#;

const B_SRC: &str = r#"
extern gamma(int) -> int

func beta(int x) -> int {
  var t
  t = call gamma(x + 10)
  return t
}
"#;

const C_SRC: &str = r#"
func gamma(int x) -> int {
  return x ^ 5
}
"#;

struct SeededEnv {
    seed: u64,
    calls: u64,
}

impl EnvStrategy for SeededEnv {
    fn reply(&mut self, q: &Query, _h: &[TraceEvent]) -> Result<Reply, String> {
        let mut rng = rng_for(self.seed, self.calls);
        self.calls += 1;
        let Query::C(q) = q else { return Err("expected a C query".to_string()) };
        let res = match q.sg.ret {
            RetKind::Void => Value::Undef,
            _ => Value::int(rng.gen_range(-9..10)),
        };
        Ok(Reply::C(CReply { res, mem: q.mem.clone() }))
    }
}

fn three_modules() -> (SymbolTable, minic::MiniCModule, minic::MiniCModule, minic::MiniCModule) {
    let a = minic::parse_module(A_SRC).unwrap();
    let b = minic::parse_module(B_SRC).unwrap();
    let c = minic::parse_module(C_SRC).unwrap();
    let mut decls = a.decls();
    decls.extend(b.decls());
    decls.extend(c.decls());
    let se = SymbolTable::build(&decls).unwrap();
    (se, a, b, c)
}

fn alpha_query(se: &SymbolTable, x: i64) -> Query {
    Query::C(CQuery {
        vf: Value::ptr(se.block_of("alpha").unwrap(), 0),
        sg: Signature::int_int(),
        args: vec![Value::int(x)],
        mem: se.initial_memory(),
    })
}

#[test]
fn linking_is_associative_up_to_traces() {
    let (se, a, b, c) = three_modules();
    let mk = |m: &minic::MiniCModule| Box::new(sem_minic(m, &se).unwrap());
    let left = link_sem(Box::new(link_sem(mk(&a), mk(&b)).unwrap()), mk(&c)).unwrap();
    let right = link_sem(mk(&a), Box::new(link_sem(mk(&b), mk(&c)).unwrap())).unwrap();
    let proj = ObservableProjection::new(&se, &["acc"]);
    for x in 0..20 {
        let q = alpha_query(&se, x);
        let t1 = run_trace(&left, &q, &mut SeededEnv { seed: 3, calls: 0 }, 100_000).unwrap();
        let t2 = run_trace(&right, &q, &mut SeededEnv { seed: 3, calls: 0 }, 100_000).unwrap();
        assert!(trace_equal(&t1, &t2, &proj), "x = {x}");
        // The closed triple resolves every call internally.
        assert_eq!(t1.outgoing_queries().count(), 0);
    }
}

#[test]
fn linking_preserves_acceptance() {
    let (se, a, b, _) = three_modules();
    let sa = sem_minic(&a, &se).unwrap();
    let sb = sem_minic(&b, &se).unwrap();
    let linked = link_sem(
        Box::new(sem_minic(&a, &se).unwrap()),
        Box::new(sem_minic(&b, &se).unwrap()),
    )
    .unwrap();
    for name in ["alpha", "beta", "gamma"] {
        let q = Query::C(CQuery {
            vf: Value::ptr(se.block_of(name).unwrap(), 0),
            sg: Signature::int_int(),
            args: vec![Value::int(1)],
            mem: se.initial_memory(),
        });
        assert_eq!(linked.accepts(&q), sa.accepts(&q) || sb.accepts(&q), "{name}");
    }
}

#[test]
fn run_trace_is_deterministic() {
    let (se, a, b, _) = three_modules();
    let linked = link_sem(
        Box::new(sem_minic(&a, &se).unwrap()),
        Box::new(sem_minic(&b, &se).unwrap()),
    )
    .unwrap();
    let q = alpha_query(&se, 4);
    let t1 = run_trace(&linked, &q, &mut SeededEnv { seed: 9, calls: 0 }, 100_000).unwrap();
    let t2 = run_trace(&linked, &q, &mut SeededEnv { seed: 9, calls: 0 }, 100_000).unwrap();
    assert_eq!(t1.events, t2.events);
}

#[test]
fn fuel_exhaustion_is_reported() {
    let (se, a, b, _) = three_modules();
    let linked = link_sem(
        Box::new(sem_minic(&a, &se).unwrap()),
        Box::new(sem_minic(&b, &se).unwrap()),
    )
    .unwrap();
    let q = alpha_query(&se, 4);
    let err = run_trace(&linked, &q, &mut SeededEnv { seed: 9, calls: 0 }, 0);
    assert!(matches!(err, Err((refinekit::sem::RunError::FuelExhausted, _))));
}

#[test]
fn constprop_preserves_observable_traces() {
    // The optimization soundness oracle: source and optimized modules
    // produce equal observable traces on read-only-valid queries, over 200
    // randomized runs.
    const SRC: &str = r#"
const key = 42
global out = 0
extern foo(ptr) -> void

func work(int x) -> int {
  var a, b
  a = key
  b = x ^ key
  out = b
  call foo(&out)
  a = a + key
  return a + b
}
"#;
    let m = minic::parse_module(SRC).unwrap();
    let se = SymbolTable::build(&m.decls()).unwrap();
    let promoted = local_promotion(&m);
    let (optimized, _) = const_prop(&se, &promoted);
    let src = sem_minic(&promoted, &se).unwrap();
    let tgt = sem_minic(&optimized, &se).unwrap();
    let proj = ObservableProjection::new(&se, &["out", "key"]);
    for i in 0..200u64 {
        let mut rng = rng_for(0xacc, i);
        let q = Query::C(CQuery {
            vf: Value::ptr(se.block_of("work").unwrap(), 0),
            sg: Signature::int_int(),
            args: vec![Value::int(rng.gen_range(-100..100))],
            mem: se.initial_memory(),
        });
        let t1 = run_trace(&src, &q, &mut SeededEnv { seed: i, calls: 0 }, 10_000).unwrap();
        let t2 = run_trace(&tgt, &q, &mut SeededEnv { seed: i, calls: 0 }, 10_000).unwrap();
        assert!(trace_equal(&t1, &t2, &proj), "run {i}");
    }
}
