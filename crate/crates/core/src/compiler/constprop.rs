//! Constant propagation over the C-like language, driven by a forward
//! value analysis that starts from the known initial values of read-only
//! globals.
//!
//! Facts about temporaries survive calls (they are invisible to memory);
//! facts about block-allocated locals die at every call and at every
//! opaque store, since the address of such a local has been taken
//! somewhere and may have escaped into memory the callee can reach.

use crate::lang::minic::{BinOp, Expr, FuncDef, MiniCModule, Stmt};
use crate::sem::{SymKind, SymbolTable};
use std::collections::BTreeMap;

/// Abstract value: a known constant or anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fact {
    Const(i64),
    Top,
}

impl Fact {
    fn join(self, other: Fact) -> Fact {
        match (self, other) {
            (Fact::Const(a), Fact::Const(b)) if a == b => Fact::Const(a),
            _ => Fact::Top,
        }
    }
}

/// Per-point facts about temporaries and locals.
pub type Facts = BTreeMap<String, Fact>;

/// Analysis results per function: the facts holding before each statement.
#[derive(Debug, Clone, Default)]
pub struct ValueAnalysis {
    pub before: BTreeMap<String, Vec<Facts>>,
}

fn fold_binop(op: BinOp, a: i64, b: i64) -> i64 {
    match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Xor => a ^ b,
        BinOp::Eq => (a == b) as i64,
        BinOp::Lt => (a < b) as i64,
    }
}

fn eval_abs(se: &SymbolTable, f: &FuncDef, facts: &Facts, e: &Expr) -> Fact {
    match e {
        Expr::Const(v) => Fact::Const(*v),
        Expr::Var(name) => {
            if f.temps.contains(name) || f.locals.contains(name) {
                return facts.get(name).copied().unwrap_or(Fact::Top);
            }
            match se.lookup(name) {
                Some(info) if info.kind == SymKind::Var && info.read_only => {
                    match info.init.first() {
                        Some(v) => v.as_int().map(Fact::Const).unwrap_or(Fact::Top),
                        None => Fact::Top,
                    }
                }
                _ => Fact::Top,
            }
        }
        Expr::Index(g, idx) => {
            let Fact::Const(i) = eval_abs(se, f, facts, idx) else { return Fact::Top };
            match se.lookup(g) {
                Some(info) if info.kind == SymKind::Var && info.read_only => info
                    .init
                    .get(i as usize)
                    .and_then(|v| v.as_int())
                    .map(Fact::Const)
                    .unwrap_or(Fact::Top),
                _ => Fact::Top,
            }
        }
        Expr::Binop(op, a, b) => {
            match (eval_abs(se, f, facts, a), eval_abs(se, f, facts, b)) {
                (Fact::Const(x), Fact::Const(y)) => Fact::Const(fold_binop(*op, x, y)),
                _ => Fact::Top,
            }
        }
        Expr::AddrOf(_) | Expr::Deref(_) => Fact::Top,
    }
}

fn kill_locals(f: &FuncDef, facts: &mut Facts) {
    for l in &f.locals {
        facts.insert(l.clone(), Fact::Top);
    }
}

/// Forward fixpoint per function, joining at labels.
pub fn analyze(se: &SymbolTable, m: &MiniCModule) -> ValueAnalysis {
    let mut out = ValueAnalysis::default();
    for f in &m.funcs {
        let labels: BTreeMap<&str, usize> = f
            .body
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Stmt::Label(l) => Some((l.as_str(), i)),
                _ => None,
            })
            .collect();
        let n = f.body.len();
        let mut before: Vec<Option<Facts>> = vec![None; n];
        let top_entry: Facts = f
            .locals
            .iter()
            .chain(f.temps.iter())
            .map(|x| (x.clone(), Fact::Top))
            .collect();
        let mut work = vec![(0usize, top_entry)];
        while let Some((pc, facts)) = work.pop() {
            if pc >= n {
                continue;
            }
            let merged = match &before[pc] {
                None => facts.clone(),
                Some(old) => {
                    let mut joined = old.clone();
                    for (k, v) in &facts {
                        let j = joined.get(k).copied().unwrap_or(Fact::Top).join(*v);
                        joined.insert(k.clone(), j);
                    }
                    if joined == *old {
                        continue; // fixpoint at this point
                    }
                    joined
                }
            };
            before[pc] = Some(merged.clone());
            let mut after = merged.clone();
            match &f.body[pc] {
                Stmt::Assign(x, e) => {
                    let v = eval_abs(se, f, &merged, e);
                    if f.temps.contains(x) || f.locals.contains(x) {
                        after.insert(x.clone(), v);
                    }
                    work.push((pc + 1, after));
                }
                Stmt::StoreDeref(_, _) | Stmt::StoreIndex(_, _, _) => {
                    kill_locals(f, &mut after);
                    work.push((pc + 1, after));
                }
                Stmt::If(_, l) => {
                    work.push((pc + 1, after.clone()));
                    work.push((labels[l.as_str()], after));
                }
                Stmt::Goto(l) => {
                    work.push((labels[l.as_str()], after));
                }
                Stmt::Label(_) => {
                    work.push((pc + 1, after));
                }
                Stmt::Call { dst, .. } => {
                    kill_locals(f, &mut after);
                    if let Some(d) = dst {
                        after.insert(d.clone(), Fact::Top);
                    }
                    work.push((pc + 1, after));
                }
                Stmt::Return(_) => {}
            }
        }
        out.before.insert(
            f.name.clone(),
            before.into_iter().map(|o| o.unwrap_or_default()).collect(),
        );
    }
    out
}

fn rewrite_expr(se: &SymbolTable, f: &FuncDef, facts: &Facts, e: &Expr) -> Expr {
    if let Fact::Const(v) = eval_abs(se, f, facts, e) {
        if !matches!(e, Expr::Const(_)) {
            return Expr::Const(v);
        }
    }
    match e {
        Expr::Deref(inner) => Expr::Deref(Box::new(rewrite_expr(se, f, facts, inner))),
        Expr::Index(g, inner) => {
            Expr::Index(g.clone(), Box::new(rewrite_expr(se, f, facts, inner)))
        }
        Expr::Binop(op, a, b) => Expr::Binop(
            *op,
            Box::new(rewrite_expr(se, f, facts, a)),
            Box::new(rewrite_expr(se, f, facts, b)),
        ),
        other => other.clone(),
    }
}

/// Fold constant expressions using the analysis. The statement structure
/// is preserved exactly, so source and target states stay in lockstep.
pub fn const_prop(se: &SymbolTable, m: &MiniCModule) -> (MiniCModule, ValueAnalysis) {
    let analysis = analyze(se, m);
    let mut out = m.clone();
    for f in &mut out.funcs {
        let before = &analysis.before[&f.name];
        let fsnap = f.clone();
        for (pc, stmt) in f.body.iter_mut().enumerate() {
            let facts = &before[pc];
            match stmt {
                Stmt::Assign(_, e) | Stmt::Return(Some(e)) | Stmt::If(e, _) => {
                    *e = rewrite_expr(se, &fsnap, facts, e);
                }
                Stmt::StoreDeref(a, v) => {
                    *a = rewrite_expr(se, &fsnap, facts, a);
                    *v = rewrite_expr(se, &fsnap, facts, v);
                }
                Stmt::StoreIndex(_, i, v) => {
                    *i = rewrite_expr(se, &fsnap, facts, i);
                    *v = rewrite_expr(se, &fsnap, facts, v);
                }
                Stmt::Call { args, .. } => {
                    for a in args {
                        *a = rewrite_expr(se, &fsnap, facts, a);
                    }
                }
                _ => {}
            }
        }
    }
    (out, analysis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::minic::{parse_module, print_module};
    use crate::sem::SymbolTable;

    #[test]
    fn folds_read_only_globals_across_calls() {
        let src = r#"
const key = 42
extern foo(ptr) -> void

func double_key() -> int {
  var a
  a = key
  call foo(&key)
  return a + key
}
"#;
        let m = parse_module(src).unwrap();
        let se = SymbolTable::build(&m.decls()).unwrap();
        // Promote first: `a` is unaddressed and becomes a temporary.
        let m = crate::compiler::promote::local_promotion(&m);
        let (opt, _) = const_prop(&se, &m);
        let printed = print_module(&opt);
        assert!(printed.contains("a = 42"), "{printed}");
        assert!(printed.contains("return 84"), "{printed}");
        // key is still passed by address.
        assert!(printed.contains("call foo(&key)"), "{printed}");
    }

    #[test]
    fn local_fact_killed_by_escape() {
        let src = r#"
extern foo(ptr) -> void

func f() -> int {
  var x
  x = 5
  call foo(&x)
  return x
}
"#;
        let m = parse_module(src).unwrap();
        let se = SymbolTable::build(&m.decls()).unwrap();
        let m = crate::compiler::promote::local_promotion(&m);
        // x stays a block-allocated local (addressed), so its fact dies at
        // the call.
        let (opt, _) = const_prop(&se, &m);
        let printed = print_module(&opt);
        assert!(printed.contains("x = 5"), "{printed}");
        assert!(printed.contains("return x"), "{printed}");
    }

    #[test]
    fn temp_fact_survives_calls() {
        let src = r#"
extern foo(int) -> void

func f() -> int {
  var x
  x = 5
  call foo(1)
  return x
}
"#;
        let m = parse_module(src).unwrap();
        let se = SymbolTable::build(&m.decls()).unwrap();
        let m = crate::compiler::promote::local_promotion(&m);
        let (opt, _) = const_prop(&se, &m);
        let printed = print_module(&opt);
        assert!(printed.contains("return 5"), "{printed}");
    }
}
