//! The register-machine toy language: labeled instruction lists over seven
//! registers, pseudo instructions for frame handling, and an open semantics
//! at the Asm interface.
//!
//! Stack frames are fresh memory blocks. `Pallocframe sz ra_ofs link_ofs`
//! allocates a block of `[0, sz)`, saves the caller's RSP at `link_ofs` and
//! the return address at `ra_ofs`, then points RSP at the new block.
//! `Pfreeframe` reloads both and frees the block. Code addresses are
//! pointers `(function block, instruction index)`.

use super::{logical_lines, GlobalDef, ParseError};
use crate::mem::{MemoryState, Value};
use crate::sem::{
    AQuery, AReply, IfaceKind, LinkError, LtsState, Mode, OpenLts, Query, Reg, RegSet, Reply,
    SemError, SymDecl, SymKind, SymbolTable,
};
use std::collections::BTreeMap;
use std::fmt;

/// Instruction operands: registers, immediates, global cells (`sym` or
/// `sym[k]`) and memory through a register (`k(REG)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
    Sym(String),
    SymIndex(String, i64),
    Mem(Reg, i64),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "${v}"),
            Operand::Sym(s) => write!(f, "{s}"),
            Operand::SymIndex(s, k) => write!(f, "{s}[{k}]"),
            Operand::Mem(r, k) => write!(f, "{k}({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    Pallocframe { sz: i64, ra_ofs: i64, link_ofs: i64 },
    Pfreeframe { sz: i64, ra_ofs: i64, link_ofs: i64 },
    Pmov { src: Operand, dst: Operand },
    /// `dst ^= src`
    Pxor { src: Reg, dst: Reg },
    /// `dst ^= imm`
    Pxori { imm: i64, dst: Reg },
    /// `dst = base + ofs`
    Plea { ofs: i64, base: Reg, dst: Reg },
    /// `dst = a + b`
    PleaPair { a: Reg, b: Reg, dst: Reg },
    /// `dst = address of a symbol`
    PleaSym { sym: String, dst: Reg },
    Pconst { imm: i64, dst: Reg },
    /// Sets the flags to `(a & b) == 0` (zero) and `a < b` (less).
    Ptest { a: Reg, b: Reg },
    /// Sets the flags to `a == b` (zero) and `a < b` (less).
    Pcmp { a: Reg, b: Reg },
    Pjmp(String),
    /// Jump when the zero flag is set.
    Pje(String),
    /// Jump when the zero flag is clear.
    Pjne(String),
    /// Jump when the less flag is set.
    Pjlt(String),
    PcallReg(Reg),
    PcallSym(String),
    Pret,
    Plabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmFunc {
    pub name: String,
    pub body: Vec<Instr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MiniAsmModule {
    pub globals: Vec<GlobalDef>,
    pub externs: Vec<String>,
    pub funcs: Vec<AsmFunc>,
}

impl MiniAsmModule {
    pub fn func(&self, name: &str) -> Option<&AsmFunc> {
        self.funcs.iter().find(|f| f.name == name)
    }

    pub fn decls(&self) -> Vec<SymDecl> {
        let mut out = Vec::new();
        for g in &self.globals {
            out.push(SymDecl::var(
                &g.name,
                g.read_only,
                g.init.iter().map(|&v| Value::int(v)).collect(),
            ));
        }
        for e in &self.externs {
            out.push(SymDecl::extern_func(e));
        }
        for f in &self.funcs {
            out.push(SymDecl::func(&f.name));
        }
        out
    }
}

/// The `+` of adequacy: one merged module with disjoint definitions.
pub fn syn_link(a: &MiniAsmModule, b: &MiniAsmModule) -> Result<MiniAsmModule, LinkError> {
    let mut out = a.clone();
    for g in &b.globals {
        if out.globals.iter().any(|x| x.name == g.name) {
            return Err(LinkError::Duplicate(g.name.clone()));
        }
        out.globals.push(g.clone());
    }
    for f in &b.funcs {
        if out.funcs.iter().any(|x| x.name == f.name) {
            return Err(LinkError::Duplicate(f.name.clone()));
        }
        out.funcs.push(f.clone());
    }
    for e in &b.externs {
        if !out.externs.contains(e) {
            out.externs.push(e.clone());
        }
    }
    let defined: Vec<String> = out.funcs.iter().map(|f| f.name.clone()).collect();
    out.externs.retain(|e| !defined.contains(e));
    Ok(out)
}

// ---------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------

pub fn print_module(m: &MiniAsmModule) -> String {
    let mut out = String::new();
    for g in &m.globals {
        let kw = if g.read_only { "const" } else { "global" };
        let vals: Vec<String> = g.init.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{kw} {} = {}\n", g.name, vals.join(" ")));
    }
    for e in &m.externs {
        out.push_str(&format!("extern {e}\n"));
    }
    for f in &m.funcs {
        out.push_str(&format!("\nfunc {}:\n", f.name));
        for i in &f.body {
            match i {
                Instr::Plabel(l) => out.push_str(&format!("{l}:\n")),
                Instr::Pallocframe { sz, ra_ofs, link_ofs } => {
                    out.push_str(&format!("  Pallocframe {sz} {ra_ofs} {link_ofs}\n"))
                }
                Instr::Pfreeframe { sz, ra_ofs, link_ofs } => {
                    out.push_str(&format!("  Pfreeframe {sz} {ra_ofs} {link_ofs}\n"))
                }
                Instr::Pmov { src, dst } => out.push_str(&format!("  Pmov {src} {dst}\n")),
                Instr::Pxor { src, dst } => out.push_str(&format!("  Pxor {src} {dst}\n")),
                Instr::Pxori { imm, dst } => out.push_str(&format!("  Pxori {imm} {dst}\n")),
                Instr::Plea { ofs, base, dst } => {
                    out.push_str(&format!("  Plea {ofs}({base}) {dst}\n"))
                }
                Instr::PleaPair { a, b, dst } => {
                    out.push_str(&format!("  Plea ({a},{b}) {dst}\n"))
                }
                Instr::PleaSym { sym, dst } => out.push_str(&format!("  Plea {sym} {dst}\n")),
                Instr::Pconst { imm, dst } => out.push_str(&format!("  Pconst {imm} {dst}\n")),
                Instr::Ptest { a, b } => out.push_str(&format!("  Ptest {a} {b}\n")),
                Instr::Pcmp { a, b } => out.push_str(&format!("  Pcmp {a} {b}\n")),
                Instr::Pjmp(l) => out.push_str(&format!("  Pjmp {l}\n")),
                Instr::Pje(l) => out.push_str(&format!("  Pje {l}\n")),
                Instr::Pjne(l) => out.push_str(&format!("  Pjne {l}\n")),
                Instr::Pjlt(l) => out.push_str(&format!("  Pjlt {l}\n")),
                Instr::PcallReg(r) => out.push_str(&format!("  Pcall {r}\n")),
                Instr::PcallSym(s) => out.push_str(&format!("  Pcall {s}\n")),
                Instr::Pret => out.push_str("  Pret\n"),
            }
        }
    }
    out
}

// ---------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------

fn perr(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::new(line, 1, msg)
}

fn parse_operand(line: usize, tok: &str) -> Result<Operand, ParseError> {
    if let Some(r) = Reg::parse(tok) {
        return Ok(Operand::Reg(r));
    }
    if let Some(rest) = tok.strip_prefix('$') {
        let v = rest.parse().map_err(|_| perr(line, format!("bad immediate {tok:?}")))?;
        return Ok(Operand::Imm(v));
    }
    if let Ok(v) = tok.parse::<i64>() {
        return Ok(Operand::Imm(v));
    }
    // k(REG)
    if let Some(open) = tok.find('(') {
        if tok.ends_with(')') {
            let k: i64 = if open == 0 {
                0
            } else {
                tok[..open]
                    .parse()
                    .map_err(|_| perr(line, format!("bad offset in {tok:?}")))?
            };
            let rname = &tok[open + 1..tok.len() - 1];
            let r = Reg::parse(rname)
                .ok_or_else(|| perr(line, format!("unknown register {rname:?}")))?;
            return Ok(Operand::Mem(r, k));
        }
    }
    // sym[k]
    if let Some(open) = tok.find('[') {
        if tok.ends_with(']') {
            let name = &tok[..open];
            let k: i64 = tok[open + 1..tok.len() - 1]
                .parse()
                .map_err(|_| perr(line, format!("bad index in {tok:?}")))?;
            return Ok(Operand::SymIndex(name.to_string(), k));
        }
    }
    if tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && tok.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
    {
        // Register-cased names that are not registers are mistakes, not
        // symbols.
        if tok.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()) {
            return Err(perr(line, format!("unknown register {tok:?}")));
        }
        return Ok(Operand::Sym(tok.to_string()));
    }
    Err(perr(line, format!("cannot parse operand {tok:?}")))
}

fn expect_reg(line: usize, op: Operand) -> Result<Reg, ParseError> {
    match op {
        Operand::Reg(r) => Ok(r),
        other => Err(perr(line, format!("expected a register, got {other}"))),
    }
}

fn split_operands(s: &str) -> Vec<String> {
    // Operands are whitespace separated; `(RAX,RBX)` stays one token.
    s.split_whitespace().map(|t| t.to_string()).collect()
}

pub fn parse_module(src: &str) -> Result<MiniAsmModule, ParseError> {
    let lines = logical_lines(src);
    let mut m = MiniAsmModule::default();
    let mut current: Option<AsmFunc> = None;
    for (lineno, text) in lines {
        let words: Vec<&str> = text.split_whitespace().collect();
        match words.first().copied() {
            Some("global") | Some("const") => {
                if let Some(f) = current.take() {
                    m.funcs.push(f);
                }
                let read_only = words[0] == "const";
                if words.len() < 4 || words[2] != "=" {
                    return Err(perr(lineno, "expected `global name = values`"));
                }
                let init: Result<Vec<i64>, _> = words[3..].iter().map(|w| w.parse()).collect();
                let init = init.map_err(|_| perr(lineno, "bad initial value"))?;
                m.globals.push(GlobalDef { name: words[1].to_string(), read_only, init });
            }
            Some("extern") => {
                if let Some(f) = current.take() {
                    m.funcs.push(f);
                }
                if words.len() != 2 {
                    return Err(perr(lineno, "expected `extern name`"));
                }
                m.externs.push(words[1].to_string());
            }
            Some("func") => {
                if let Some(f) = current.take() {
                    m.funcs.push(f);
                }
                let name = words
                    .get(1)
                    .and_then(|w| w.strip_suffix(':'))
                    .ok_or_else(|| perr(lineno, "expected `func name:`"))?;
                current = Some(AsmFunc { name: name.to_string(), body: Vec::new() });
            }
            Some(first) => {
                let f = current
                    .as_mut()
                    .ok_or_else(|| perr(lineno, "instruction outside a function"))?;
                if words.len() == 1 && first.ends_with(':') {
                    f.body.push(Instr::Plabel(first[..first.len() - 1].to_string()));
                    continue;
                }
                let ops = split_operands(&text[first.len()..]);
                let instr = parse_instr(lineno, first, &ops)?;
                f.body.push(instr);
            }
            None => {}
        }
    }
    if let Some(f) = current.take() {
        m.funcs.push(f);
    }
    // Static checks: labels unique, jump targets exist, all paths end in
    // Pret or Pjmp.
    for f in &m.funcs {
        let mut labels = BTreeMap::new();
        for (i, ins) in f.body.iter().enumerate() {
            if let Instr::Plabel(l) = ins {
                if labels.insert(l.clone(), i).is_some() {
                    return Err(perr(0, format!("duplicate label {l} in {}", f.name)));
                }
            }
        }
        for ins in &f.body {
            if let Instr::Pjmp(l) | Instr::Pje(l) | Instr::Pjne(l) | Instr::Pjlt(l) = ins {
                if !labels.contains_key(l) {
                    return Err(perr(0, format!("unknown label {l} in {}", f.name)));
                }
            }
        }
        match f.body.iter().rev().find(|i| !matches!(i, Instr::Plabel(_))) {
            Some(Instr::Pret) | Some(Instr::Pjmp(_)) => {}
            _ => return Err(perr(0, format!("function {} does not end in Pret", f.name))),
        }
    }
    Ok(m)
}

fn parse_instr(line: usize, name: &str, ops: &[String]) -> Result<Instr, ParseError> {
    let int = |i: usize| -> Result<i64, ParseError> {
        ops.get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(line, format!("{name}: expected integer operand {i}")))
    };
    let operand = |i: usize| -> Result<Operand, ParseError> {
        let tok = ops.get(i).ok_or_else(|| perr(line, format!("{name}: missing operand {i}")))?;
        parse_operand(line, tok)
    };
    let reg = |i: usize| -> Result<Reg, ParseError> { expect_reg(line, operand(i)?) };
    let label = |i: usize| -> Result<String, ParseError> {
        ops.get(i)
            .cloned()
            .ok_or_else(|| perr(line, format!("{name}: missing label")))
    };
    match name {
        "Pallocframe" => Ok(Instr::Pallocframe { sz: int(0)?, ra_ofs: int(1)?, link_ofs: int(2)? }),
        "Pfreeframe" => Ok(Instr::Pfreeframe { sz: int(0)?, ra_ofs: int(1)?, link_ofs: int(2)? }),
        "Pmov" => Ok(Instr::Pmov { src: operand(0)?, dst: operand(1)? }),
        "Pxor" => Ok(Instr::Pxor { src: reg(0)?, dst: reg(1)? }),
        "Pxori" => Ok(Instr::Pxori { imm: int(0)?, dst: reg(1)? }),
        "Pconst" => Ok(Instr::Pconst { imm: int(0)?, dst: reg(1)? }),
        "Plea" => {
            let tok = ops.first().ok_or_else(|| perr(line, "Plea: missing operand"))?;
            if let Some(inner) = tok.strip_prefix('(').and_then(|t| t.strip_suffix(')')) {
                let parts: Vec<&str> = inner.split(',').collect();
                if parts.len() == 2 {
                    let a = Reg::parse(parts[0].trim())
                        .ok_or_else(|| perr(line, format!("unknown register {:?}", parts[0])))?;
                    let b = Reg::parse(parts[1].trim())
                        .ok_or_else(|| perr(line, format!("unknown register {:?}", parts[1])))?;
                    return Ok(Instr::PleaPair { a, b, dst: reg(1)? });
                }
            }
            match parse_operand(line, tok)? {
                Operand::Mem(base, ofs) => Ok(Instr::Plea { ofs, base, dst: reg(1)? }),
                Operand::Sym(sym) => Ok(Instr::PleaSym { sym, dst: reg(1)? }),
                other => Err(perr(line, format!("Plea: bad address {other}"))),
            }
        }
        "Ptest" => Ok(Instr::Ptest { a: reg(0)?, b: reg(1)? }),
        "Pcmp" => Ok(Instr::Pcmp { a: reg(0)?, b: reg(1)? }),
        "Pjmp" => Ok(Instr::Pjmp(label(0)?)),
        "Pje" => Ok(Instr::Pje(label(0)?)),
        "Pjne" => Ok(Instr::Pjne(label(0)?)),
        "Pjlt" => Ok(Instr::Pjlt(label(0)?)),
        "Pcall" => match operand(0)? {
            Operand::Reg(r) => Ok(Instr::PcallReg(r)),
            Operand::Sym(s) => Ok(Instr::PcallSym(s)),
            other => Err(perr(line, format!("Pcall: bad target {other}"))),
        },
        "Pret" => Ok(Instr::Pret),
        other => Err(perr(line, format!("unknown instruction {other:?}"))),
    }
}

// ---------------------------------------------------------------------
// Semantics
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AControl {
    Run,
    AtExternal,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AState {
    pub rs: RegSet,
    pub mem: MemoryState,
    /// Internal call depth; returning past the incoming frame finishes.
    pub depth: usize,
    /// Flags of the last compare (zero, less), consumed by conditional
    /// jumps.
    pub flags: Option<(bool, bool)>,
    pub control: AControl,
}

pub struct MiniAsmSem {
    pub module: MiniAsmModule,
    se: SymbolTable,
    labels: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn sem_miniasm(module: &MiniAsmModule, se: &SymbolTable) -> Result<MiniAsmSem, SemError> {
    let mut labels = BTreeMap::new();
    for f in &module.funcs {
        let mut map = BTreeMap::new();
        for (i, ins) in f.body.iter().enumerate() {
            if let Instr::Plabel(l) = ins {
                map.insert(l.clone(), i);
            }
        }
        labels.insert(f.name.clone(), map);
    }
    Ok(MiniAsmSem { module: module.clone(), se: se.clone(), labels })
}

impl MiniAsmSem {
    fn stuck(msg: impl Into<String>) -> SemError {
        SemError::Stuck(msg.into())
    }

    /// The function and instruction index the PC denotes, when it points
    /// into this module.
    fn decode_pc(&self, pc: Value) -> Option<(&AsmFunc, usize)> {
        let (b, o) = pc.as_ptr()?;
        let name = self.se.name_of(b)?;
        let f = self.module.func(name)?;
        usize::try_from(o).ok().map(|i| (f, i))
    }

    fn read(&self, st: &AState, op: &Operand) -> Result<Value, SemError> {
        match op {
            Operand::Reg(r) => Ok(st.rs.get(*r)),
            Operand::Imm(v) => Ok(Value::int(*v)),
            Operand::Sym(s) => {
                let info = self
                    .se
                    .lookup(s)
                    .ok_or_else(|| Self::stuck(format!("unknown symbol {s}")))?;
                match info.kind {
                    SymKind::Var => {
                        st.mem.load(info.block, 0).map_err(|e| Self::stuck(e.to_string()))
                    }
                    SymKind::Func => Ok(Value::ptr(info.block, 0)),
                }
            }
            Operand::SymIndex(s, k) => {
                let info = self
                    .se
                    .lookup(s)
                    .filter(|i| i.kind == SymKind::Var)
                    .ok_or_else(|| Self::stuck(format!("unknown array {s}")))?;
                st.mem
                    .load(info.block, 8 * k)
                    .map_err(|e| Self::stuck(e.to_string()))
            }
            Operand::Mem(r, k) => {
                let Value::Ptr { b, o } = st.rs.get(*r) else {
                    return Err(Self::stuck(format!("memory operand via non-pointer {r}")));
                };
                st.mem.load(b, o + k).map_err(|e| Self::stuck(e.to_string()))
            }
        }
    }

    fn write(&self, st: &mut AState, op: &Operand, v: Value) -> Result<(), SemError> {
        match op {
            Operand::Reg(r) => {
                st.rs.set(*r, v);
                Ok(())
            }
            Operand::Sym(s) => {
                let info = self
                    .se
                    .lookup(s)
                    .filter(|i| i.kind == SymKind::Var)
                    .ok_or_else(|| Self::stuck(format!("unknown variable {s}")))?;
                st.mem =
                    st.mem.store(info.block, 0, v).map_err(|e| Self::stuck(e.to_string()))?;
                Ok(())
            }
            Operand::SymIndex(s, k) => {
                let info = self
                    .se
                    .lookup(s)
                    .filter(|i| i.kind == SymKind::Var)
                    .ok_or_else(|| Self::stuck(format!("unknown array {s}")))?;
                st.mem = st
                    .mem
                    .store(info.block, 8 * k, v)
                    .map_err(|e| Self::stuck(e.to_string()))?;
                Ok(())
            }
            Operand::Mem(r, k) => {
                let Value::Ptr { b, o } = st.rs.get(*r) else {
                    return Err(Self::stuck(format!("memory operand via non-pointer {r}")));
                };
                st.mem = st.mem.store(b, o + k, v).map_err(|e| Self::stuck(e.to_string()))?;
                Ok(())
            }
            Operand::Imm(_) => Err(Self::stuck("immediate is not a destination".to_string())),
        }
    }

    fn set_pc(st: &mut AState, v: Value) {
        st.rs.set(Reg::Pc, v);
    }
}

impl OpenLts for MiniAsmSem {
    fn name(&self) -> String {
        format!(
            "miniasm[{}]",
            self.module.funcs.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join(",")
        )
    }

    fn incoming(&self) -> IfaceKind {
        IfaceKind::Asm
    }

    fn outgoing(&self) -> IfaceKind {
        IfaceKind::Asm
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        let Query::Asm(q) = q else { return false };
        match q.rs.get(Reg::Pc) {
            Value::Ptr { b, o: 0 } => self
                .se
                .name_of(b)
                .map(|n| self.module.func(n).is_some())
                .unwrap_or(false),
            _ => false,
        }
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let Query::Asm(q) = q else {
            return Err(SemError::BadQuery("expected an Asm query".to_string()));
        };
        if !self.accepts(&Query::Asm(q.clone())) {
            return Err(SemError::BadQuery("PC does not enter this module".to_string()));
        }
        Ok(LtsState::MiniAsm(AState {
            rs: q.rs.clone(),
            mem: q.mem.clone(),
            depth: 1,
            flags: None,
            control: AControl::Run,
        }))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::MiniAsm(st) = s else {
            return Mode::Stuck("not a miniasm state".to_string());
        };
        match st.control {
            AControl::Run => match self.decode_pc(st.rs.get(Reg::Pc)) {
                Some((f, i)) if i < f.body.len() => Mode::Step,
                _ => Mode::Stuck(format!("PC {} points nowhere", st.rs.get(Reg::Pc))),
            },
            AControl::AtExternal => Mode::External(Query::Asm(AQuery {
                rs: st.rs.clone(),
                mem: st.mem.clone(),
            })),
            AControl::Done => {
                Mode::Final(Reply::Asm(AReply { rs: st.rs.clone(), mem: st.mem.clone() }))
            }
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::MiniAsm(st) = s else {
            return Err(SemError::Stuck("not a miniasm state".to_string()));
        };
        if st.control != AControl::Run {
            return Err(SemError::Stuck("no internal step available".to_string()));
        }
        let (f, idx) = self
            .decode_pc(st.rs.get(Reg::Pc))
            .ok_or_else(|| Self::stuck("PC points nowhere"))?;
        let fname = f.name.clone();
        let fblock = self.se.block_of(&fname).unwrap();
        let instr = f
            .body
            .get(idx)
            .ok_or_else(|| Self::stuck(format!("PC past the end of {fname}")))?
            .clone();
        let mut st = st.clone();
        let next = Value::ptr(fblock, idx as i64 + 1);
        match instr {
            Instr::Plabel(_) => Self::set_pc(&mut st, next),
            Instr::Pallocframe { sz, ra_ofs, link_ofs } => {
                let (mem, b) = st.mem.alloc(0, sz).map_err(|e| Self::stuck(e.to_string()))?;
                let mem = mem
                    .store(b, link_ofs, st.rs.get(Reg::Rsp))
                    .and_then(|m| m.store(b, ra_ofs, st.rs.get(Reg::Ra)))
                    .map_err(|e| Self::stuck(e.to_string()))?;
                st.mem = mem;
                st.rs.set(Reg::Rsp, Value::ptr(b, 0));
                Self::set_pc(&mut st, next);
            }
            Instr::Pfreeframe { sz, ra_ofs, link_ofs } => {
                let Value::Ptr { b, o: 0 } = st.rs.get(Reg::Rsp) else {
                    return Err(Self::stuck("RSP is not a frame pointer"));
                };
                let link = st.mem.load(b, link_ofs).map_err(|e| Self::stuck(e.to_string()))?;
                let ra = st.mem.load(b, ra_ofs).map_err(|e| Self::stuck(e.to_string()))?;
                st.mem = st.mem.free(b, 0, sz).map_err(|e| Self::stuck(e.to_string()))?;
                st.rs.set(Reg::Rsp, link);
                st.rs.set(Reg::Ra, ra);
                Self::set_pc(&mut st, next);
            }
            Instr::Pmov { src, dst } => {
                let v = self.read(&st, &src)?;
                self.write(&mut st, &dst, v)?;
                Self::set_pc(&mut st, next);
            }
            Instr::Pxor { src, dst } => {
                let (Value::Int { v: a }, Value::Int { v: b }) =
                    (st.rs.get(src), st.rs.get(dst))
                else {
                    return Err(Self::stuck("Pxor needs integer operands"));
                };
                st.rs.set(dst, Value::int(b ^ a));
                Self::set_pc(&mut st, next);
            }
            Instr::Pxori { imm, dst } => {
                let Value::Int { v } = st.rs.get(dst) else {
                    return Err(Self::stuck("Pxori needs an integer operand"));
                };
                st.rs.set(dst, Value::int(v ^ imm));
                Self::set_pc(&mut st, next);
            }
            Instr::Plea { ofs, base, dst } => {
                let v = match st.rs.get(base) {
                    Value::Ptr { b, o } => Value::ptr(b, o + ofs),
                    Value::Int { v } => Value::int(v.wrapping_add(ofs)),
                    Value::Undef => return Err(Self::stuck("Plea on undefined value")),
                };
                st.rs.set(dst, v);
                Self::set_pc(&mut st, next);
            }
            Instr::PleaPair { a, b, dst } => {
                let v = match (st.rs.get(a), st.rs.get(b)) {
                    (Value::Int { v: x }, Value::Int { v: y }) => Value::int(x.wrapping_add(y)),
                    (Value::Ptr { b, o }, Value::Int { v }) => Value::ptr(b, o + v),
                    (Value::Int { v }, Value::Ptr { b, o }) => Value::ptr(b, o + v),
                    _ => return Err(Self::stuck("Plea on bad operand pair")),
                };
                st.rs.set(dst, v);
                Self::set_pc(&mut st, next);
            }
            Instr::PleaSym { sym, dst } => {
                let info = self
                    .se
                    .lookup(&sym)
                    .ok_or_else(|| Self::stuck(format!("unknown symbol {sym}")))?;
                st.rs.set(dst, Value::ptr(info.block, 0));
                Self::set_pc(&mut st, next);
            }
            Instr::Pconst { imm, dst } => {
                st.rs.set(dst, Value::int(imm));
                Self::set_pc(&mut st, next);
            }
            Instr::Ptest { a, b } => {
                let (Value::Int { v: x }, Value::Int { v: y }) = (st.rs.get(a), st.rs.get(b))
                else {
                    return Err(Self::stuck("Ptest needs integer operands"));
                };
                st.flags = Some(((x & y) == 0, x < y));
                Self::set_pc(&mut st, next);
            }
            Instr::Pcmp { a, b } => {
                let flags = match (st.rs.get(a), st.rs.get(b)) {
                    (Value::Int { v: x }, Value::Int { v: y }) => (x == y, x < y),
                    (Value::Ptr { b: b1, o: o1 }, Value::Ptr { b: b2, o: o2 }) => {
                        (b1 == b2 && o1 == o2, false)
                    }
                    _ => return Err(Self::stuck("Pcmp on bad operand pair")),
                };
                st.flags = Some(flags);
                Self::set_pc(&mut st, next);
            }
            Instr::Pjmp(l) => {
                let target = self.labels[&fname][&l];
                Self::set_pc(&mut st, Value::ptr(fblock, target as i64));
            }
            Instr::Pje(ref l) | Instr::Pjne(ref l) | Instr::Pjlt(ref l) => {
                let (zf, lt) =
                    st.flags.ok_or_else(|| Self::stuck("conditional jump without flags"))?;
                let jump = match instr {
                    Instr::Pje(_) => zf,
                    Instr::Pjne(_) => !zf,
                    _ => lt,
                };
                if jump {
                    Self::set_pc(&mut st, Value::ptr(fblock, self.labels[&fname][l] as i64));
                } else {
                    Self::set_pc(&mut st, next);
                }
            }
            Instr::PcallReg(_) | Instr::PcallSym(_) => {
                let target = match &instr {
                    Instr::PcallReg(r) => st.rs.get(*r),
                    Instr::PcallSym(sym) => {
                        let info = self
                            .se
                            .lookup(sym)
                            .filter(|i| i.kind == SymKind::Func)
                            .ok_or_else(|| Self::stuck(format!("unknown function {sym}")))?;
                        Value::ptr(info.block, 0)
                    }
                    _ => unreachable!(),
                };
                let Value::Ptr { b, o: 0 } = target else {
                    return Err(Self::stuck(format!("call through bad value {target}")));
                };
                st.rs.set(Reg::Ra, next);
                st.rs.set(Reg::Pc, target);
                let internal =
                    self.se.name_of(b).map(|n| self.module.func(n).is_some()).unwrap_or(false);
                if internal {
                    st.depth += 1;
                } else {
                    st.control = AControl::AtExternal;
                }
                st.flags = None;
            }
            Instr::Pret => {
                let ra = st.rs.get(Reg::Ra);
                if !matches!(ra, Value::Ptr { .. }) {
                    return Err(Self::stuck(format!("Pret with clobbered RA {ra}")));
                }
                st.rs.set(Reg::Pc, ra);
                st.depth -= 1;
                st.flags = None;
                if st.depth == 0 {
                    st.control = AControl::Done;
                } else if self.decode_pc(ra).is_none() {
                    return Err(Self::stuck(format!("Pret to bad address {ra}")));
                }
            }
        }
        Ok(LtsState::MiniAsm(st))
    }

    fn resume(&self, s: &LtsState, r: &Reply) -> Result<LtsState, SemError> {
        let LtsState::MiniAsm(st) = s else {
            return Err(SemError::Stuck("not a miniasm state".to_string()));
        };
        if st.control != AControl::AtExternal {
            return Err(SemError::Stuck("not at an external call".to_string()));
        }
        let Reply::Asm(r) = r else {
            return Err(SemError::Stuck("expected an Asm reply".to_string()));
        };
        let mut st = st.clone();
        st.rs = r.rs.clone();
        st.mem = r.mem.clone();
        st.control = AControl::Run;
        Ok(LtsState::MiniAsm(st))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::PermKind;
    use crate::mem::Permission;

    pub const SERVER: &str = r#"
const key = 42
func encrypt:
  Pallocframe 24 16 0
  Pmov key RAX
  Pxor RAX RDI
  Pmov RDI 8(RSP)
  Plea 8(RSP) RDI
  Pcall RSI
  Pfreeframe 24 16 0
  Pret
"#;

    fn setup() -> (MiniAsmSem, SymbolTable) {
        let m = parse_module(SERVER).unwrap();
        let mut decls = m.decls();
        decls.push(crate::sem::SymDecl::extern_func("process"));
        let se = SymbolTable::build(&decls).unwrap();
        let sem = sem_miniasm(&m, &se).unwrap();
        (sem, se)
    }

    #[test]
    fn parse_print_roundtrip() {
        let m = parse_module(SERVER).unwrap();
        let printed = print_module(&m);
        assert_eq!(parse_module(&printed).unwrap(), m);
    }

    #[test]
    fn bad_instruction_is_a_parse_error() {
        assert!(parse_module("func f:\n  Pfrob RAX\n  Pret\n").is_err());
        assert!(parse_module("func f:\n  Pmov R13 RAX\n  Pret\n").is_err());
        assert!(parse_module("func f:\n  Pjmp nowhere\n").is_err());
    }

    #[test]
    fn frame_roundtrip_restores_rsp_and_ra() {
        let (sem, se) = setup();
        let mem = se.initial_memory();
        // A dummy caller stack so RSP is a pointer.
        let (mem, caller_sp) = mem.alloc(0, 8).unwrap();
        let rs = RegSet::new()
            .with(Reg::Pc, Value::ptr(se.block_of("encrypt").unwrap(), 0))
            .with(Reg::Rsp, Value::ptr(caller_sp, 0))
            .with(Reg::Ra, Value::ptr(se.block_of("process").unwrap(), 99))
            .with(Reg::Rdi, Value::int(11))
            .with(Reg::Rsi, Value::ptr(se.block_of("process").unwrap(), 0));
        let q = Query::Asm(AQuery { rs: rs.clone(), mem });
        assert!(sem.accepts(&q));
        let mut s = sem.init(&q).unwrap();
        // Run up to the external call.
        loop {
            match sem.mode(&s) {
                Mode::Step => s = sem.step(&s).unwrap(),
                Mode::External(Query::Asm(aq)) => {
                    // The stack holds i XOR key at offset 8 and RDI points at it.
                    let Value::Ptr { b, o: 8 } = aq.rs.get(Reg::Rdi) else {
                        panic!("RDI should point into the frame")
                    };
                    assert_eq!(aq.mem.value_at(b, 8), Value::int(11 ^ 42));
                    assert_eq!(aq.mem.value_at(b, 0), Value::ptr(caller_sp, 0));
                    // Reply: restore callee-saves, return to RA.
                    let mut rrs = aq.rs.clone();
                    rrs.set(Reg::Pc, aq.rs.get(Reg::Ra));
                    s = sem
                        .resume(&s, &Reply::Asm(AReply { rs: rrs, mem: aq.mem.clone() }))
                        .unwrap();
                }
                Mode::Final(Reply::Asm(ar)) => {
                    assert_eq!(ar.rs.get(Reg::Rsp), Value::ptr(caller_sp, 0));
                    assert_eq!(
                        ar.rs.get(Reg::Pc),
                        Value::ptr(se.block_of("process").unwrap(), 99)
                    );
                    // The frame block is fully freed.
                    let fb = caller_sp + 1;
                    assert!(!ar.mem.perm_at(fb, 8, PermKind::Max, Permission::Nonempty));
                    return;
                }
                other => panic!("unexpected mode {other:?}"),
            }
        }
    }

    #[test]
    fn ret_with_clobbered_ra_is_stuck() {
        let (sem, se) = setup();
        let mem = se.initial_memory();
        let (mem, caller_sp) = mem.alloc(0, 8).unwrap();
        let rs = RegSet::new()
            .with(Reg::Pc, Value::ptr(se.block_of("encrypt").unwrap(), 0))
            .with(Reg::Rsp, Value::ptr(caller_sp, 0))
            .with(Reg::Rdi, Value::int(11))
            .with(Reg::Rsi, Value::ptr(se.block_of("process").unwrap(), 0));
        // RA left Undef: Pfreeframe restores it, then Pret jumps nowhere.
        let q = Query::Asm(AQuery { rs, mem });
        let mut s = sem.init(&q).unwrap();
        loop {
            match sem.mode(&s) {
                Mode::Step => match sem.step(&s) {
                    Ok(n) => s = n,
                    Err(e) => {
                        assert!(matches!(e, SemError::Stuck(_)));
                        return;
                    }
                },
                Mode::External(Query::Asm(aq)) => {
                    let mut rrs = aq.rs.clone();
                    rrs.set(Reg::Pc, aq.rs.get(Reg::Ra));
                    s = sem
                        .resume(&s, &Reply::Asm(AReply { rs: rrs, mem: aq.mem.clone() }))
                        .unwrap();
                }
                Mode::Stuck(_) => return,
                other => panic!("expected to get stuck, got {other:?}"),
            }
        }
    }
}
