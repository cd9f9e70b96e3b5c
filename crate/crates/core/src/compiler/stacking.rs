//! Stack-frame lowering and code generation: each function gets one frame
//! block holding the back link at offset 0, an outgoing-argument area when
//! calls take more than two arguments, one slot per addressed local and per
//! temporary, scratch slots for expression evaluation, the return address
//! and an RBX spill.
//!
//! The emitted code evaluates expressions into RAX with RBX as the
//! secondary register; every statement compiles to a contiguous block and
//! the per-statement start indices are recorded so the simulation matcher
//! can align source statements with target program counters.

use crate::lang::miniasm::{AsmFunc, Instr, MiniAsmModule, Operand};
use crate::lang::minic::{BinOp, Expr, FuncDef, MiniCModule, Stmt};
use crate::lang::GlobalDef;
use crate::sem::{Reg, SymKind, SymbolTable};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone)]
pub struct CompileError(pub String);

impl fmt::Display for CompileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "compile error: {}", self.0)
    }
}

impl std::error::Error for CompileError {}

/// Frame layout of one compiled function.
#[derive(Debug, Clone)]
pub struct FrameLayout {
    pub size: i64,
    pub ra_ofs: i64,
    pub rbx_spill: Option<i64>,
    /// Addressed locals: these slots are the public part of the frame.
    pub local_slots: BTreeMap<String, i64>,
    /// Temporaries: private slots.
    pub temp_slots: BTreeMap<String, i64>,
    pub arg_stage: Vec<i64>,
    pub scratch: Vec<i64>,
    pub out_extra: usize,
}

/// Per-function codegen artifacts.
#[derive(Debug, Clone)]
pub struct FuncMap {
    pub layout: FrameLayout,
    /// Instruction index at which each source statement's block starts.
    pub stmt_starts: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct CodegenMap {
    pub funcs: BTreeMap<String, FuncMap>,
}

fn expr_depth(e: &Expr) -> usize {
    match e {
        Expr::Binop(_, a, b) => 1 + expr_depth(a).max(expr_depth(b)),
        Expr::Deref(i) => expr_depth(i),
        Expr::Index(_, i) => expr_depth(i),
        _ => 0,
    }
}

fn max_expr_depth(f: &FuncDef) -> usize {
    let mut d = 0;
    for s in &f.body {
        let dd = match s {
            Stmt::Assign(_, e) | Stmt::If(e, _) | Stmt::Return(Some(e)) => expr_depth(e),
            Stmt::StoreDeref(a, v) | Stmt::StoreIndex(_, a, v) => {
                expr_depth(a).max(expr_depth(v))
            }
            Stmt::Call { args, .. } => args.iter().map(expr_depth).max().unwrap_or(0),
            _ => 0,
        };
        d = d.max(dd);
    }
    d
}

fn needs_rbx(f: &FuncDef) -> bool {
    fn expr_needs(e: &Expr) -> bool {
        match e {
            Expr::Binop(..) | Expr::Index(..) => true,
            Expr::Deref(i) => expr_needs(i),
            _ => false,
        }
    }
    f.params.len() > 2
        || f.body.iter().any(|s| match s {
            Stmt::StoreDeref(..) | Stmt::StoreIndex(..) => true,
            Stmt::Assign(_, e) | Stmt::If(e, _) | Stmt::Return(Some(e)) => expr_needs(e),
            Stmt::Call { args, .. } => args.iter().any(expr_needs),
            _ => false,
        })
}

pub fn layout_for(f: &FuncDef) -> FrameLayout {
    let out_extra = f
        .body
        .iter()
        .filter_map(|s| match s {
            Stmt::Call { args, .. } => Some(args.len().saturating_sub(2)),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let reserved: Vec<i64> = (0..out_extra as i64).map(|k| 16 + 8 * k).collect();
    let max_args = f
        .body
        .iter()
        .filter_map(|s| match s {
            Stmt::Call { args, .. } => Some(args.len()),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let scratch_count = max_expr_depth(f) + 1;

    let mut next = 8i64;
    let mut take = |reserved: &[i64]| {
        while reserved.contains(&next) {
            next += 8;
        }
        let o = next;
        next += 8;
        o
    };
    let mut local_slots = BTreeMap::new();
    for x in &f.locals {
        local_slots.insert(x.clone(), take(&reserved));
    }
    let mut temp_slots = BTreeMap::new();
    for x in &f.temps {
        temp_slots.insert(x.clone(), take(&reserved));
    }
    let arg_stage: Vec<i64> = (0..max_args).map(|_| take(&reserved)).collect();
    let scratch: Vec<i64> = (0..scratch_count).map(|_| take(&reserved)).collect();
    let ra_ofs = take(&reserved);
    let rbx_spill = if needs_rbx(f) { Some(take(&reserved)) } else { None };
    let size = next.max(16 + 8 * out_extra as i64);
    FrameLayout { size, ra_ofs, rbx_spill, local_slots, temp_slots, arg_stage, scratch, out_extra }
}

struct FnCompiler<'a> {
    se: &'a SymbolTable,
    module: &'a MiniCModule,
    f: &'a FuncDef,
    layout: FrameLayout,
    code: Vec<Instr>,
    label_counter: usize,
}

impl<'a> FnCompiler<'a> {
    fn slot_of(&self, name: &str) -> Option<i64> {
        self.layout
            .local_slots
            .get(name)
            .or_else(|| self.layout.temp_slots.get(name))
            .copied()
    }

    fn fresh_label(&mut self, hint: &str) -> String {
        self.label_counter += 1;
        format!("_{}_{}{}", self.f.name, hint, self.label_counter)
    }

    fn emit(&mut self, i: Instr) {
        self.code.push(i);
    }

    fn mov(&mut self, src: Operand, dst: Operand) {
        self.emit(Instr::Pmov { src, dst });
    }

    /// Evaluate into RAX; scratch slots above `depth` are free.
    fn eval(&mut self, e: &Expr, depth: usize) -> Result<(), CompileError> {
        match e {
            Expr::Const(v) => self.emit(Instr::Pconst { imm: *v, dst: Reg::Rax }),
            Expr::Var(name) => {
                if let Some(ofs) = self.slot_of(name) {
                    self.mov(Operand::Mem(Reg::Rsp, ofs), Operand::Reg(Reg::Rax));
                } else if self.se.lookup(name).is_some() {
                    self.mov(Operand::Sym(name.clone()), Operand::Reg(Reg::Rax));
                } else {
                    return Err(CompileError(format!("unknown name {name}")));
                }
            }
            Expr::AddrOf(name) => {
                if let Some(ofs) = self.layout.local_slots.get(name) {
                    self.emit(Instr::Plea { ofs: *ofs, base: Reg::Rsp, dst: Reg::Rax });
                } else if self.layout.temp_slots.contains_key(name) {
                    return Err(CompileError(format!("address of temporary {name}")));
                } else if self.se.lookup(name).is_some() {
                    self.emit(Instr::PleaSym { sym: name.clone(), dst: Reg::Rax });
                } else {
                    return Err(CompileError(format!("unknown name {name}")));
                }
            }
            Expr::Deref(inner) => {
                self.eval(inner, depth)?;
                self.mov(Operand::Mem(Reg::Rax, 0), Operand::Reg(Reg::Rax));
            }
            Expr::Index(g, idx) => {
                if !matches!(self.se.lookup(g), Some(i) if i.kind == SymKind::Var) {
                    return Err(CompileError(format!("unknown array {g}")));
                }
                self.eval(idx, depth)?;
                // Scale the index by 8 with three doublings.
                for _ in 0..3 {
                    self.emit(Instr::PleaPair { a: Reg::Rax, b: Reg::Rax, dst: Reg::Rax });
                }
                self.mov(Operand::Reg(Reg::Rax), Operand::Reg(Reg::Rbx));
                self.emit(Instr::PleaSym { sym: g.clone(), dst: Reg::Rax });
                self.emit(Instr::PleaPair { a: Reg::Rax, b: Reg::Rbx, dst: Reg::Rax });
                self.mov(Operand::Mem(Reg::Rax, 0), Operand::Reg(Reg::Rax));
            }
            Expr::Binop(BinOp::Sub, a, b) => {
                let Expr::Const(k) = **b else {
                    return Err(CompileError(
                        "subtraction by a non-constant is not supported".to_string(),
                    ));
                };
                self.eval(a, depth)?;
                self.emit(Instr::Plea { ofs: -k, base: Reg::Rax, dst: Reg::Rax });
            }
            Expr::Binop(op, a, b) => {
                let spill = self.layout.scratch[depth];
                self.eval(b, depth + 1)?;
                self.mov(Operand::Reg(Reg::Rax), Operand::Mem(Reg::Rsp, spill));
                self.eval(a, depth + 1)?;
                self.mov(Operand::Mem(Reg::Rsp, spill), Operand::Reg(Reg::Rbx));
                match op {
                    BinOp::Add => {
                        self.emit(Instr::PleaPair { a: Reg::Rax, b: Reg::Rbx, dst: Reg::Rax })
                    }
                    BinOp::Xor => self.emit(Instr::Pxor { src: Reg::Rbx, dst: Reg::Rax }),
                    BinOp::Sub => unreachable!("handled above"),
                    BinOp::Eq | BinOp::Lt => {
                        let t = self.fresh_label("t");
                        let e = self.fresh_label("e");
                        self.emit(Instr::Pcmp { a: Reg::Rax, b: Reg::Rbx });
                        match op {
                            BinOp::Eq => self.emit(Instr::Pje(t.clone())),
                            _ => self.emit(Instr::Pjlt(t.clone())),
                        }
                        self.emit(Instr::Pconst { imm: 0, dst: Reg::Rax });
                        self.emit(Instr::Pjmp(e.clone()));
                        self.emit(Instr::Plabel(t));
                        self.emit(Instr::Pconst { imm: 1, dst: Reg::Rax });
                        self.emit(Instr::Plabel(e));
                    }
                }
            }
        }
        Ok(())
    }

    fn store_rax_to(&mut self, name: &str) -> Result<(), CompileError> {
        if let Some(ofs) = self.slot_of(name) {
            self.mov(Operand::Reg(Reg::Rax), Operand::Mem(Reg::Rsp, ofs));
            return Ok(());
        }
        match self.se.lookup(name) {
            Some(info) if info.kind == SymKind::Var => {
                self.mov(Operand::Reg(Reg::Rax), Operand::Sym(name.to_string()));
                Ok(())
            }
            _ => Err(CompileError(format!("cannot assign to {name}"))),
        }
    }

    fn epilogue(&mut self) {
        if let Some(ofs) = self.layout.rbx_spill {
            self.mov(Operand::Mem(Reg::Rsp, ofs), Operand::Reg(Reg::Rbx));
        }
        self.emit(Instr::Pfreeframe { sz: self.layout.size, ra_ofs: self.layout.ra_ofs, link_ofs: 0 });
        self.emit(Instr::Pret);
    }

    fn compile(mut self) -> Result<(AsmFunc, FuncMap), CompileError> {
        // Prologue: frame, RBX spill, parameter spills.
        self.emit(Instr::Pallocframe {
            sz: self.layout.size,
            ra_ofs: self.layout.ra_ofs,
            link_ofs: 0,
        });
        if let Some(ofs) = self.layout.rbx_spill {
            self.mov(Operand::Reg(Reg::Rbx), Operand::Mem(Reg::Rsp, ofs));
        }
        let params: Vec<(String, usize)> = self
            .f
            .params
            .iter()
            .enumerate()
            .map(|(k, (n, _))| (n.clone(), k))
            .collect();
        for (name, k) in &params {
            let Some(slot) = self.slot_of(name) else {
                return Err(CompileError(format!("parameter {name} has no slot")));
            };
            match k {
                0 => self.mov(Operand::Reg(Reg::Rdi), Operand::Mem(Reg::Rsp, slot)),
                1 => self.mov(Operand::Reg(Reg::Rsi), Operand::Mem(Reg::Rsp, slot)),
                _ => {
                    // Reach into the caller's outgoing-argument area
                    // through the saved back link.
                    self.mov(Operand::Mem(Reg::Rsp, 0), Operand::Reg(Reg::Rbx));
                    self.mov(
                        Operand::Mem(Reg::Rbx, 16 + 8 * (*k as i64 - 2)),
                        Operand::Reg(Reg::Rax),
                    );
                    self.mov(Operand::Reg(Reg::Rax), Operand::Mem(Reg::Rsp, slot));
                }
            }
        }

        let mut stmt_starts = Vec::with_capacity(self.f.body.len());
        let body = self.f.body.clone();
        for stmt in &body {
            stmt_starts.push(self.code.len());
            match stmt {
                Stmt::Label(l) => self.emit(Instr::Plabel(l.clone())),
                Stmt::Assign(x, e) => {
                    self.eval(e, 0)?;
                    self.store_rax_to(x)?;
                }
                Stmt::StoreDeref(addr, v) => {
                    let spill = *self.layout.scratch.last().unwrap();
                    self.eval(v, 0)?;
                    self.mov(Operand::Reg(Reg::Rax), Operand::Mem(Reg::Rsp, spill));
                    self.eval(addr, 0)?;
                    self.mov(Operand::Mem(Reg::Rsp, spill), Operand::Reg(Reg::Rbx));
                    self.mov(Operand::Reg(Reg::Rbx), Operand::Mem(Reg::Rax, 0));
                }
                Stmt::StoreIndex(g, idx, v) => {
                    let spill = *self.layout.scratch.last().unwrap();
                    self.eval(v, 0)?;
                    self.mov(Operand::Reg(Reg::Rax), Operand::Mem(Reg::Rsp, spill));
                    self.eval(idx, 0)?;
                    for _ in 0..3 {
                        self.emit(Instr::PleaPair { a: Reg::Rax, b: Reg::Rax, dst: Reg::Rax });
                    }
                    self.mov(Operand::Reg(Reg::Rax), Operand::Reg(Reg::Rbx));
                    self.emit(Instr::PleaSym { sym: g.clone(), dst: Reg::Rax });
                    self.emit(Instr::PleaPair { a: Reg::Rax, b: Reg::Rbx, dst: Reg::Rax });
                    self.mov(Operand::Mem(Reg::Rsp, spill), Operand::Reg(Reg::Rbx));
                    self.mov(Operand::Reg(Reg::Rbx), Operand::Mem(Reg::Rax, 0));
                }
                Stmt::If(e, l) => {
                    self.eval(e, 0)?;
                    self.emit(Instr::Ptest { a: Reg::Rax, b: Reg::Rax });
                    self.emit(Instr::Pjne(l.clone()));
                }
                Stmt::Goto(l) => self.emit(Instr::Pjmp(l.clone())),
                Stmt::Return(e) => {
                    if let Some(e) = e {
                        self.eval(e, 0)?;
                    }
                    self.epilogue();
                }
                Stmt::Call { dst, target, args } => {
                    for (k, a) in args.iter().enumerate() {
                        self.eval(a, 0)?;
                        self.mov(
                            Operand::Reg(Reg::Rax),
                            Operand::Mem(Reg::Rsp, self.layout.arg_stage[k]),
                        );
                    }
                    // Extra arguments into the outgoing area.
                    for k in 2..args.len() {
                        self.mov(
                            Operand::Mem(Reg::Rsp, self.layout.arg_stage[k]),
                            Operand::Reg(Reg::Rax),
                        );
                        self.mov(
                            Operand::Reg(Reg::Rax),
                            Operand::Mem(Reg::Rsp, 16 + 8 * (k as i64 - 2)),
                        );
                    }
                    if !args.is_empty() {
                        self.mov(
                            Operand::Mem(Reg::Rsp, self.layout.arg_stage[0]),
                            Operand::Reg(Reg::Rdi),
                        );
                    }
                    if args.len() > 1 {
                        self.mov(
                            Operand::Mem(Reg::Rsp, self.layout.arg_stage[1]),
                            Operand::Reg(Reg::Rsi),
                        );
                    }
                    // A name bound to a slot or a data symbol calls
                    // indirectly through its value.
                    let is_var = self.slot_of(target).is_some()
                        || matches!(self.se.lookup(target), Some(i) if i.kind == SymKind::Var);
                    if is_var {
                        self.eval(&Expr::Var(target.clone()), 0)?;
                        self.emit(Instr::PcallReg(Reg::Rax));
                    } else if self.module.func(target).is_some()
                        || self.module.extern_sig(target).is_some()
                    {
                        self.emit(Instr::PcallSym(target.clone()));
                    } else {
                        return Err(CompileError(format!("unknown call target {target}")));
                    }
                    if let Some(d) = dst {
                        self.store_rax_to(d)?;
                    }
                }
            }
        }

        Ok((
            AsmFunc { name: self.f.name.clone(), body: self.code },
            FuncMap { layout: self.layout, stmt_starts },
        ))
    }
}

/// Compile a post-promotion module to the register machine.
pub fn stacking_codegen(
    se: &SymbolTable,
    m: &MiniCModule,
) -> Result<(MiniAsmModule, CodegenMap), CompileError> {
    let mut out = MiniAsmModule {
        globals: m
            .globals
            .iter()
            .map(|g| GlobalDef { name: g.name.clone(), read_only: g.read_only, init: g.init.clone() })
            .collect(),
        externs: m.externs.iter().map(|e| e.name.clone()).collect(),
        funcs: Vec::new(),
    };
    let mut map = CodegenMap::default();
    for f in &m.funcs {
        let layout = layout_for(f);
        let compiler = FnCompiler {
            se,
            module: m,
            f,
            layout,
            code: Vec::new(),
            label_counter: 0,
        };
        let (af, fm) = compiler.compile()?;
        out.funcs.push(af);
        map.funcs.insert(f.name.clone(), fm);
    }
    Ok((out, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::minic::parse_module;
    use crate::sem::SymbolTable;

    #[test]
    fn leaf_function_still_gets_frame_slots() {
        let src = "func f(int x) -> int {\n  return x\n}\n";
        let m = parse_module(src).unwrap();
        let m = crate::compiler::promote::local_promotion(&m);
        let se = SymbolTable::build(&m.decls()).unwrap();
        let (asm, map) = stacking_codegen(&se, &m).unwrap();
        let fm = &map.funcs["f"];
        assert!(fm.layout.size >= 16);
        let body = &asm.func("f").unwrap().body;
        assert!(matches!(body[0], Instr::Pallocframe { .. }));
        assert!(matches!(body.last(), Some(Instr::Pret)));
    }

    #[test]
    fn compiled_module_parses_back() {
        let src = include_str!("../../programs/client_mr.mc");
        let m = parse_module(src).unwrap();
        let m = crate::compiler::promote::local_promotion(&m);
        let se = SymbolTable::build(&m.decls()).unwrap();
        let (asm, _) = stacking_codegen(&se, &m).unwrap();
        let printed = crate::lang::miniasm::print_module(&asm);
        let back = crate::lang::miniasm::parse_module(&printed).unwrap();
        assert_eq!(asm, back);
    }
}
