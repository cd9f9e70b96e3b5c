//! The C-like toy language: globals, functions over statements with gotos,
//! a recursive-descent parser, a canonical printer and an open semantics at
//! the C interface.
//!
//! Variables live in one of two classes. `locals` are block-allocated: the
//! initial transition allocates one block per local and `return` frees
//! them. `temps` are pure temporaries held in an environment and invisible
//! to memory. A freshly parsed function has every parameter and variable in
//! `locals`; the promotion pass moves the unaddressed ones to `temps`.

use super::{logical_lines, GlobalDef, ParseError};
use crate::mem::{BlockId, MemoryState, Value};
use crate::sem::{
    CQuery, CReply, IfaceKind, LinkError, LtsState, Mode, OpenLts, Query, Reply, RetKind,
    SemError, Signature, SymDecl, SymKind, SymbolTable, ValKind,
};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Xor,
    Eq,
    Lt,
}

impl BinOp {
    fn token(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Xor => "^",
            BinOp::Eq => "==",
            BinOp::Lt => "<",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Const(i64),
    Var(String),
    AddrOf(String),
    Deref(Box<Expr>),
    /// `g[e]`: cell `8*e` of a global array.
    Index(String, Box<Expr>),
    Binop(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Assign(String, Expr),
    /// `*e1 = e2`
    StoreDeref(Expr, Expr),
    /// `g[e1] = e2`
    StoreIndex(String, Expr, Expr),
    /// `if e goto L` (taken when `e` is a non-zero integer)
    If(Expr, String),
    Goto(String),
    Label(String),
    Call { dst: Option<String>, target: String, args: Vec<Expr> },
    Return(Option<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternDecl {
    pub name: String,
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<(String, ValKind)>,
    pub ret: RetKind,
    /// Block-allocated variables (parameters included), in allocation order.
    pub locals: Vec<String>,
    /// Environment-held temporaries.
    pub temps: Vec<String>,
    pub body: Vec<Stmt>,
}

impl FuncDef {
    pub fn sig(&self) -> Signature {
        Signature::new(self.params.iter().map(|(_, k)| *k).collect(), self.ret)
    }

    /// Names whose address is taken somewhere in the body.
    pub fn addressed_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn walk_expr(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::AddrOf(n) => out.push(n.clone()),
                Expr::Deref(inner) => walk_expr(inner, out),
                Expr::Index(_, inner) => walk_expr(inner, out),
                Expr::Binop(_, a, b) => {
                    walk_expr(a, out);
                    walk_expr(b, out);
                }
                _ => {}
            }
        }
        for s in &self.body {
            match s {
                Stmt::Assign(_, e) | Stmt::If(e, _) => walk_expr(e, &mut out),
                Stmt::StoreDeref(a, b) | Stmt::StoreIndex(_, a, b) => {
                    walk_expr(a, &mut out);
                    walk_expr(b, &mut out);
                }
                Stmt::Call { args, .. } => {
                    for a in args {
                        walk_expr(a, &mut out);
                    }
                }
                Stmt::Return(Some(e)) => walk_expr(e, &mut out),
                _ => {}
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MiniCModule {
    pub globals: Vec<GlobalDef>,
    pub externs: Vec<ExternDecl>,
    pub funcs: Vec<FuncDef>,
}

impl MiniCModule {
    pub fn func(&self, name: &str) -> Option<&FuncDef> {
        self.funcs.iter().find(|f| f.name == name)
    }

    pub fn extern_sig(&self, name: &str) -> Option<&Signature> {
        self.externs.iter().find(|e| e.name == name).map(|e| &e.sig)
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
            out.push(SymDecl::extern_func(&e.name));
        }
        for f in &self.funcs {
            out.push(SymDecl::func(&f.name));
        }
        out
    }
}

/// Merge two modules; definitions must be disjoint and externs consistent.
pub fn syn_link(a: &MiniCModule, b: &MiniCModule) -> Result<MiniCModule, LinkError> {
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
        match out.extern_sig(&e.name) {
            Some(sig) if *sig != e.sig => return Err(LinkError::Inconsistent(e.name.clone())),
            Some(_) => {}
            None => out.externs.push(e.clone()),
        }
    }
    // Externs satisfied by the other side's definitions stay declared; the
    // semantics resolves them preferentially to definitions.
    let defined: Vec<String> = out.funcs.iter().map(|f| f.name.clone()).collect();
    out.externs.retain(|e| !defined.contains(&e.name));
    Ok(out)
}

// ---------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------

fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::Binop(BinOp::Eq | BinOp::Lt, _, _) => 1,
        Expr::Binop(_, _, _) => 2,
        _ => 3,
    }
}

fn print_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Const(v) => out.push_str(&v.to_string()),
        Expr::Var(n) => out.push_str(n),
        Expr::AddrOf(n) => {
            out.push('&');
            out.push_str(n);
        }
        Expr::Deref(inner) => {
            out.push('*');
            if expr_prec(inner) < 3 {
                out.push('(');
                print_expr(inner, out);
                out.push(')');
            } else {
                print_expr(inner, out);
            }
        }
        Expr::Index(g, inner) => {
            out.push_str(g);
            out.push('[');
            print_expr(inner, out);
            out.push(']');
        }
        Expr::Binop(op, a, b) => {
            // Comparisons are non-associative and lowest; sums associate to
            // the left. Parenthesize exactly where reparsing would differ.
            let prec = expr_prec(e);
            let paren = |side: &Expr, min: u8, out: &mut String| {
                if expr_prec(side) < min {
                    out.push('(');
                    print_expr(side, out);
                    out.push(')');
                } else {
                    print_expr(side, out);
                }
            };
            let left_min = if prec == 1 { prec + 1 } else { prec };
            paren(a, left_min, out);
            out.push(' ');
            out.push_str(op.token());
            out.push(' ');
            paren(b, prec + 1, out);
        }
    }
}

fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    print_expr(e, &mut s);
    s
}

fn kind_name(k: ValKind) -> &'static str {
    match k {
        ValKind::Int => "int",
        ValKind::Ptr => "ptr",
    }
}

fn ret_name(r: RetKind) -> &'static str {
    match r {
        RetKind::Int => "int",
        RetKind::Ptr => "ptr",
        RetKind::Void => "void",
    }
}

pub fn print_module(m: &MiniCModule) -> String {
    let mut out = String::new();
    for g in &m.globals {
        let kw = if g.read_only { "const" } else { "global" };
        let vals: Vec<String> = g.init.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{kw} {} = {}\n", g.name, vals.join(" ")));
    }
    for e in &m.externs {
        let params: Vec<&str> = e.sig.params.iter().map(|&k| kind_name(k)).collect();
        out.push_str(&format!(
            "extern {}({}) -> {}\n",
            e.name,
            params.join(", "),
            ret_name(e.sig.ret)
        ));
    }
    for f in &m.funcs {
        let params: Vec<String> = f
            .params
            .iter()
            .map(|(n, k)| format!("{} {}", kind_name(*k), n))
            .collect();
        out.push_str(&format!(
            "\nfunc {}({}) -> {} {{\n",
            f.name,
            params.join(", "),
            ret_name(f.ret)
        ));
        let param_names: Vec<&str> = f.params.iter().map(|(n, _)| n.as_str()).collect();
        let vars: Vec<&str> = f
            .locals
            .iter()
            .chain(f.temps.iter())
            .map(|s| s.as_str())
            .filter(|n| !param_names.contains(n))
            .collect();
        if !vars.is_empty() {
            out.push_str(&format!("  var {}\n", vars.join(", ")));
        }
        for s in &f.body {
            match s {
                Stmt::Label(l) => out.push_str(&format!("{l}:\n")),
                Stmt::Assign(x, e) => out.push_str(&format!("  {x} = {}\n", expr_to_string(e))),
                Stmt::StoreDeref(a, b) => {
                    let addr = match expr_prec(a) {
                        3 => expr_to_string(a),
                        _ => format!("({})", expr_to_string(a)),
                    };
                    out.push_str(&format!("  *{addr} = {}\n", expr_to_string(b)));
                }
                Stmt::StoreIndex(g, i, v) => out.push_str(&format!(
                    "  {g}[{}] = {}\n",
                    expr_to_string(i),
                    expr_to_string(v)
                )),
                Stmt::If(e, l) => {
                    out.push_str(&format!("  if {} goto {l}\n", expr_to_string(e)))
                }
                Stmt::Goto(l) => out.push_str(&format!("  goto {l}\n")),
                Stmt::Call { dst, target, args } => {
                    let args: Vec<String> = args.iter().map(expr_to_string).collect();
                    match dst {
                        Some(d) => out
                            .push_str(&format!("  {d} = call {target}({})\n", args.join(", "))),
                        None => out.push_str(&format!("  call {target}({})\n", args.join(", "))),
                    }
                }
                Stmt::Return(None) => out.push_str("  return\n"),
                Stmt::Return(Some(e)) => {
                    out.push_str(&format!("  return {}\n", expr_to_string(e)))
                }
            }
        }
        out.push_str("}\n");
    }
    out
}

// ---------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------

struct Tokens<'a> {
    line: usize,
    src: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(line: usize, src: &'a str) -> Tokens<'a> {
        Tokens { line, src, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::new(self.line, self.pos + 1, msg)
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(' ') || self.src[self.pos..].starts_with('\t') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), ParseError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(format!("expected {tok:?}")))
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let mut len = 0;
        for (i, c) in rest.char_indices() {
            let ok = c.is_ascii_alphanumeric() || c == '_';
            let first_ok = c.is_ascii_alphabetic() || c == '_';
            if i == 0 && !first_ok {
                return None;
            }
            if !ok {
                break;
            }
            len = i + c.len_utf8();
        }
        if len == 0 {
            return None;
        }
        let s = rest[..len].to_string();
        self.pos += len;
        Some(s)
    }

    fn int(&mut self) -> Option<i64> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let neg = rest.starts_with('-');
        let digits: &str = &rest[neg as usize..];
        let len = digits.chars().take_while(|c| c.is_ascii_digit()).count();
        if len == 0 {
            return None;
        }
        let text = &rest[..neg as usize + len];
        let v = text.parse().ok()?;
        self.pos += text.len();
        Some(v)
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.src.len()
    }
}

fn parse_expr(t: &mut Tokens) -> Result<Expr, ParseError> {
    parse_cmp(t)
}

fn parse_cmp(t: &mut Tokens) -> Result<Expr, ParseError> {
    let lhs = parse_sum(t)?;
    if t.eat("==") {
        let rhs = parse_sum(t)?;
        return Ok(Expr::Binop(BinOp::Eq, Box::new(lhs), Box::new(rhs)));
    }
    if t.eat("<") {
        let rhs = parse_sum(t)?;
        return Ok(Expr::Binop(BinOp::Lt, Box::new(lhs), Box::new(rhs)));
    }
    Ok(lhs)
}

fn parse_sum(t: &mut Tokens) -> Result<Expr, ParseError> {
    let mut lhs = parse_unary(t)?;
    loop {
        let op = if t.eat("+") {
            BinOp::Add
        } else if t.eat("^") {
            BinOp::Xor
        } else {
            // A minus sign may start a negative literal, so only treat it
            // as an operator when followed by an operand.
            t.skip_ws();
            if t.src[t.pos..].starts_with('-') {
                t.pos += 1;
                BinOp::Sub
            } else {
                break;
            }
        };
        let rhs = parse_unary(t)?;
        lhs = Expr::Binop(op, Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_unary(t: &mut Tokens) -> Result<Expr, ParseError> {
    if t.eat("&") {
        let name = t.ident().ok_or_else(|| t.err("expected name after &"))?;
        return Ok(Expr::AddrOf(name));
    }
    if t.eat("*") {
        let inner = parse_unary(t)?;
        return Ok(Expr::Deref(Box::new(inner)));
    }
    parse_atom(t)
}

fn parse_atom(t: &mut Tokens) -> Result<Expr, ParseError> {
    if t.eat("(") {
        let e = parse_expr(t)?;
        t.expect(")")?;
        return Ok(e);
    }
    if let Some(v) = t.int() {
        return Ok(Expr::Const(v));
    }
    if let Some(name) = t.ident() {
        if t.eat("[") {
            let idx = parse_expr(t)?;
            t.expect("]")?;
            return Ok(Expr::Index(name, Box::new(idx)));
        }
        return Ok(Expr::Var(name));
    }
    Err(t.err("expected expression"))
}

fn parse_args(t: &mut Tokens) -> Result<Vec<Expr>, ParseError> {
    t.expect("(")?;
    let mut args = Vec::new();
    if t.eat(")") {
        return Ok(args);
    }
    loop {
        args.push(parse_expr(t)?);
        if t.eat(")") {
            return Ok(args);
        }
        t.expect(",")?;
    }
}

fn parse_kind(t: &mut Tokens) -> Result<ValKind, ParseError> {
    let k = t.ident().ok_or_else(|| t.err("expected parameter kind"))?;
    match k.as_str() {
        "int" => Ok(ValKind::Int),
        "ptr" => Ok(ValKind::Ptr),
        other => Err(t.err(format!("unknown kind {other:?}"))),
    }
}

fn parse_ret(t: &mut Tokens) -> Result<RetKind, ParseError> {
    let k = t.ident().ok_or_else(|| t.err("expected result kind"))?;
    match k.as_str() {
        "int" => Ok(RetKind::Int),
        "ptr" => Ok(RetKind::Ptr),
        "void" => Ok(RetKind::Void),
        other => Err(t.err(format!("unknown result kind {other:?}"))),
    }
}

pub fn parse_module(src: &str) -> Result<MiniCModule, ParseError> {
    let lines = logical_lines(src);
    let mut m = MiniCModule::default();
    let mut i = 0;
    while i < lines.len() {
        let (lineno, text) = &lines[i];
        let mut t = Tokens::new(*lineno, text);
        if t.eat("global") || text.starts_with("const") {
            let read_only = text.starts_with("const");
            if read_only {
                t = Tokens::new(*lineno, text);
                t.expect("const")?;
            }
            let name = t.ident().ok_or_else(|| t.err("expected global name"))?;
            t.expect("=")?;
            let mut init = Vec::new();
            while let Some(v) = t.int() {
                init.push(v);
            }
            if init.is_empty() {
                return Err(t.err("expected at least one initial value"));
            }
            m.globals.push(GlobalDef { name, read_only, init });
            i += 1;
        } else if t.eat("extern") {
            let name = t.ident().ok_or_else(|| t.err("expected extern name"))?;
            t.expect("(")?;
            let mut params = Vec::new();
            if !t.eat(")") {
                loop {
                    params.push(parse_kind(&mut t)?);
                    if t.eat(")") {
                        break;
                    }
                    t.expect(",")?;
                }
            }
            t.expect("->")?;
            let ret = parse_ret(&mut t)?;
            m.externs.push(ExternDecl { name, sig: Signature::new(params, ret) });
            i += 1;
        } else if t.eat("func") {
            let name = t.ident().ok_or_else(|| t.err("expected function name"))?;
            t.expect("(")?;
            let mut params = Vec::new();
            if !t.eat(")") {
                loop {
                    let k = parse_kind(&mut t)?;
                    let pname = t.ident().ok_or_else(|| t.err("expected parameter name"))?;
                    params.push((pname, k));
                    if t.eat(")") {
                        break;
                    }
                    t.expect(",")?;
                }
            }
            t.expect("->")?;
            let ret = parse_ret(&mut t)?;
            t.expect("{")?;
            let mut locals: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
            let mut body = Vec::new();
            i += 1;
            loop {
                if i >= lines.len() {
                    return Err(ParseError::new(*lineno, 1, "unterminated function"));
                }
                let (ln, lt) = &lines[i];
                if lt == "}" {
                    i += 1;
                    break;
                }
                let mut t = Tokens::new(*ln, lt);
                if t.eat("var") {
                    loop {
                        let v = t.ident().ok_or_else(|| t.err("expected variable name"))?;
                        locals.push(v);
                        if !t.eat(",") {
                            break;
                        }
                    }
                } else {
                    body.push(parse_stmt(&mut t)?);
                    if !t.at_end() {
                        return Err(t.err("trailing input after statement"));
                    }
                }
                i += 1;
            }
            m.funcs.push(FuncDef { name, params, ret, locals, temps: Vec::new(), body });
        } else {
            return Err(ParseError::new(*lineno, 1, format!("unexpected line {text:?}")));
        }
    }
    Ok(m)
}

fn parse_stmt(t: &mut Tokens) -> Result<Stmt, ParseError> {
    // Label lines: `name:`
    let save = t.pos;
    if let Some(name) = t.ident() {
        if t.eat(":") && t.at_end() {
            return Ok(Stmt::Label(name));
        }
        t.pos = save;
    }
    if t.eat("goto") {
        let l = t.ident().ok_or_else(|| t.err("expected label"))?;
        return Ok(Stmt::Goto(l));
    }
    if t.eat("if") {
        let e = parse_expr(t)?;
        t.expect("goto")?;
        let l = t.ident().ok_or_else(|| t.err("expected label"))?;
        return Ok(Stmt::If(e, l));
    }
    if t.eat("return") {
        if t.at_end() {
            return Ok(Stmt::Return(None));
        }
        let e = parse_expr(t)?;
        return Ok(Stmt::Return(Some(e)));
    }
    if t.eat("call") {
        let target = t.ident().ok_or_else(|| t.err("expected call target"))?;
        let args = parse_args(t)?;
        return Ok(Stmt::Call { dst: None, target, args });
    }
    if t.eat("*") {
        let addr = parse_unary(t)?;
        t.expect("=")?;
        let v = parse_expr(t)?;
        return Ok(Stmt::StoreDeref(addr, v));
    }
    let name = t.ident().ok_or_else(|| t.err("expected statement"))?;
    if t.eat("[") {
        let idx = parse_expr(t)?;
        t.expect("]")?;
        t.expect("=")?;
        let v = parse_expr(t)?;
        return Ok(Stmt::StoreIndex(name, idx, v));
    }
    t.expect("=")?;
    if t.eat("call") {
        let target = t.ident().ok_or_else(|| t.err("expected call target"))?;
        let args = parse_args(t)?;
        return Ok(Stmt::Call { dst: Some(name), target, args });
    }
    let e = parse_expr(t)?;
    Ok(Stmt::Assign(name, e))
}

// ---------------------------------------------------------------------
// Semantics
// ---------------------------------------------------------------------

/// One activation record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CFrame {
    pub func: String,
    pub pc: usize,
    pub env: BTreeMap<String, Value>,
    pub local_blocks: BTreeMap<String, BlockId>,
    /// Where the result of an in-flight call lands when this frame resumes.
    pub pending_dst: Option<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CControl {
    Run,
    AtExternal { q: CQuery, dst: Option<String> },
    Done { res: Value },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CState {
    pub frames: Vec<CFrame>,
    pub mem: MemoryState,
    pub control: CControl,
}

/// Open semantics of a module at the C interface, relative to a symbol
/// table that covers at least the module's own declarations.
pub struct MiniCSem {
    pub module: MiniCModule,
    se: SymbolTable,
    labels: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn sem_minic(module: &MiniCModule, se: &SymbolTable) -> Result<MiniCSem, SemError> {
    let mut labels = BTreeMap::new();
    for f in &module.funcs {
        let mut map = BTreeMap::new();
        for (i, s) in f.body.iter().enumerate() {
            if let Stmt::Label(l) = s {
                if map.insert(l.clone(), i).is_some() {
                    return Err(SemError::BadQuery(format!(
                        "duplicate label {l} in {}",
                        f.name
                    )));
                }
            }
        }
        for s in &f.body {
            let target = match s {
                Stmt::Goto(l) | Stmt::If(_, l) => Some(l),
                _ => None,
            };
            if let Some(l) = target {
                if !map.contains_key(l) {
                    return Err(SemError::BadQuery(format!(
                        "unknown label {l} in {}",
                        f.name
                    )));
                }
            }
        }
        match f.body.last() {
            Some(Stmt::Return(_)) | Some(Stmt::Goto(_)) => {}
            _ => {
                return Err(SemError::BadQuery(format!(
                    "function {} does not end in return or goto",
                    f.name
                )))
            }
        }
        labels.insert(f.name.clone(), map);
    }
    Ok(MiniCSem { module: module.clone(), se: se.clone(), labels })
}

enum Place {
    Temp,
    LocalBlock(BlockId),
    GlobalVar(BlockId),
}

impl MiniCSem {
    fn func(&self, name: &str) -> Option<&FuncDef> {
        self.module.func(name)
    }

    fn stuck(msg: impl Into<String>) -> SemError {
        SemError::Stuck(msg.into())
    }

    fn place(&self, frame: &CFrame, name: &str) -> Result<Place, SemError> {
        if frame.env.contains_key(name) {
            return Ok(Place::Temp);
        }
        if let Some(&b) = frame.local_blocks.get(name) {
            return Ok(Place::LocalBlock(b));
        }
        match self.se.lookup(name) {
            Some(info) if info.kind == SymKind::Var => Ok(Place::GlobalVar(info.block)),
            _ => Err(Self::stuck(format!("unknown variable {name}"))),
        }
    }

    fn eval(&self, st: &CState, frame: &CFrame, e: &Expr) -> Result<Value, SemError> {
        match e {
            Expr::Const(v) => Ok(Value::int(*v)),
            Expr::Var(name) => {
                if let Some(v) = frame.env.get(name) {
                    return Ok(*v);
                }
                if let Some(&b) = frame.local_blocks.get(name) {
                    return st.mem.load(b, 0).map_err(|e| Self::stuck(e.to_string()));
                }
                match self.se.lookup(name) {
                    Some(info) if info.kind == SymKind::Var => {
                        st.mem.load(info.block, 0).map_err(|e| Self::stuck(e.to_string()))
                    }
                    Some(info) => Ok(Value::ptr(info.block, 0)),
                    None => Err(Self::stuck(format!("unknown name {name}"))),
                }
            }
            Expr::AddrOf(name) => {
                if let Some(&b) = frame.local_blocks.get(name) {
                    return Ok(Value::ptr(b, 0));
                }
                if frame.env.contains_key(name) {
                    return Err(Self::stuck(format!("address of temporary {name}")));
                }
                match self.se.lookup(name) {
                    Some(info) => Ok(Value::ptr(info.block, 0)),
                    None => Err(Self::stuck(format!("unknown name {name}"))),
                }
            }
            Expr::Deref(inner) => {
                let v = self.eval(st, frame, inner)?;
                match v {
                    Value::Ptr { b, o } => {
                        st.mem.load(b, o).map_err(|e| Self::stuck(e.to_string()))
                    }
                    other => Err(Self::stuck(format!("deref of non-pointer {other}"))),
                }
            }
            Expr::Index(g, inner) => {
                let idx = self.eval(st, frame, inner)?;
                let Some(i) = idx.as_int() else {
                    return Err(Self::stuck(format!("index is not an integer: {idx}")));
                };
                match self.se.lookup(g) {
                    Some(info) if info.kind == SymKind::Var => st
                        .mem
                        .load(info.block, 8 * i)
                        .map_err(|e| Self::stuck(e.to_string())),
                    _ => Err(Self::stuck(format!("unknown array {g}"))),
                }
            }
            Expr::Binop(op, a, b) => {
                let va = self.eval(st, frame, a)?;
                let vb = self.eval(st, frame, b)?;
                self.binop(*op, va, vb)
            }
        }
    }

    fn binop(&self, op: BinOp, a: Value, b: Value) -> Result<Value, SemError> {
        use BinOp::*;
        match (op, a, b) {
            (Add, Value::Int { v: x }, Value::Int { v: y }) => Ok(Value::int(x.wrapping_add(y))),
            (Add, Value::Ptr { b, o }, Value::Int { v }) => Ok(Value::ptr(b, o + v)),
            (Sub, Value::Int { v: x }, Value::Int { v: y }) => Ok(Value::int(x.wrapping_sub(y))),
            (Sub, Value::Ptr { b, o }, Value::Int { v }) => Ok(Value::ptr(b, o - v)),
            (Xor, Value::Int { v: x }, Value::Int { v: y }) => Ok(Value::int(x ^ y)),
            (Eq, Value::Int { v: x }, Value::Int { v: y }) => {
                Ok(Value::int((x == y) as i64))
            }
            (Eq, Value::Ptr { b: b1, o: o1 }, Value::Ptr { b: b2, o: o2 }) => {
                Ok(Value::int((b1 == b2 && o1 == o2) as i64))
            }
            (Lt, Value::Int { v: x }, Value::Int { v: y }) => Ok(Value::int((x < y) as i64)),
            (op, a, b) => Err(Self::stuck(format!("bad operands {a} {} {b}", op.token()))),
        }
    }

    fn assign(&self, st: &mut CState, name: &str, v: Value) -> Result<(), SemError> {
        let frame = st.frames.last().unwrap().clone();
        match self.place(&frame, name)? {
            Place::Temp => {
                st.frames.last_mut().unwrap().env.insert(name.to_string(), v);
                Ok(())
            }
            Place::LocalBlock(b) => {
                st.mem = st.mem.store(b, 0, v).map_err(|e| Self::stuck(e.to_string()))?;
                Ok(())
            }
            Place::GlobalVar(b) => {
                st.mem = st.mem.store(b, 0, v).map_err(|e| Self::stuck(e.to_string()))?;
                Ok(())
            }
        }
    }

    /// Signature for an indirect call, derived from the call shape.
    fn indirect_sig(&self, args: &[Value], dst: &Option<String>) -> Signature {
        let params = args
            .iter()
            .map(|v| match v {
                Value::Ptr { .. } => ValKind::Ptr,
                _ => ValKind::Int,
            })
            .collect();
        let ret = if dst.is_some() { RetKind::Int } else { RetKind::Void };
        Signature::new(params, ret)
    }

    fn enter(&self, f: &FuncDef, args: &[Value], mem: MemoryState) -> Result<CState, SemError> {
        if args.len() != f.params.len() {
            return Err(SemError::BadQuery(format!(
                "{} expects {} arguments",
                f.name,
                f.params.len()
            )));
        }
        let mut mem = mem;
        let mut env = BTreeMap::new();
        let mut local_blocks = BTreeMap::new();
        for name in &f.locals {
            let (next, b) = mem.alloc(0, 8).map_err(|e| Self::stuck(e.to_string()))?;
            mem = next;
            local_blocks.insert(name.clone(), b);
        }
        for name in &f.temps {
            env.insert(name.clone(), Value::Undef);
        }
        for ((name, _), v) in f.params.iter().zip(args) {
            if let Some(&b) = local_blocks.get(name) {
                mem = mem.store(b, 0, *v).map_err(|e| Self::stuck(e.to_string()))?;
            } else {
                env.insert(name.clone(), *v);
            }
        }
        Ok(CState {
            frames: vec![CFrame {
                func: f.name.clone(),
                pc: 0,
                env,
                local_blocks,
                pending_dst: None,
            }],
            mem,
            control: CControl::Run,
        })
    }

    fn do_return(&self, st: &mut CState, v: Value) -> Result<(), SemError> {
        let frame = st.frames.pop().unwrap();
        let mut mem = st.mem.clone();
        for &b in frame.local_blocks.values() {
            mem = mem.free(b, 0, 8).map_err(|e| Self::stuck(e.to_string()))?;
        }
        st.mem = mem;
        match st.frames.last_mut() {
            None => {
                st.control = CControl::Done { res: v };
            }
            Some(caller) => {
                let dst = caller.pending_dst.take().ok_or_else(|| {
                    Self::stuck("return without a pending call".to_string())
                })?;
                caller.pc += 1;
                if let Some(d) = dst {
                    self.assign(st, &d, v)?;
                }
            }
        }
        Ok(())
    }
}

impl OpenLts for MiniCSem {
    fn name(&self) -> String {
        format!("minic[{}]", self.module.funcs.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join(","))
    }

    fn incoming(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn outgoing(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        let Query::C(q) = q else { return false };
        let Some((b, 0)) = q.vf.as_ptr() else { return false };
        let Some(name) = self.se.name_of(b) else { return false };
        match self.func(name) {
            Some(f) => f.sig() == q.sg && q.args.len() == f.params.len(),
            None => false,
        }
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let Query::C(q) = q else {
            return Err(SemError::BadQuery("expected a C query".to_string()));
        };
        let (b, _) = q.vf.as_ptr().ok_or_else(|| {
            SemError::BadQuery("function value is not a pointer".to_string())
        })?;
        let name = self
            .se
            .name_of(b)
            .ok_or_else(|| SemError::BadQuery("unknown function block".to_string()))?;
        let f = self
            .func(name)
            .ok_or_else(|| SemError::BadQuery(format!("{name} is not defined here")))?;
        Ok(LtsState::MiniC(self.enter(f, &q.args, q.mem.clone())?))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::MiniC(st) = s else {
            return Mode::Stuck("not a minic state".to_string());
        };
        match &st.control {
            CControl::Run => match st.frames.last() {
                Some(frame) => match self.func(&frame.func).and_then(|f| f.body.get(frame.pc)) {
                    Some(_) => Mode::Step,
                    None => Mode::Stuck(format!("fell off the end of {}", frame.func)),
                },
                None => Mode::Stuck("no active frame".to_string()),
            },
            CControl::AtExternal { q, .. } => Mode::External(Query::C(q.clone())),
            CControl::Done { res } => {
                Mode::Final(Reply::C(CReply { res: *res, mem: st.mem.clone() }))
            }
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::MiniC(st) = s else {
            return Err(SemError::Stuck("not a minic state".to_string()));
        };
        if !matches!(st.control, CControl::Run) {
            return Err(SemError::Stuck("no internal step available".to_string()));
        }
        let mut st = st.clone();
        let frame = st.frames.last().unwrap().clone();
        let f = self
            .func(&frame.func)
            .ok_or_else(|| Self::stuck(format!("unknown function {}", frame.func)))?;
        let stmt = f
            .body
            .get(frame.pc)
            .ok_or_else(|| Self::stuck(format!("fell off the end of {}", frame.func)))?
            .clone();
        match stmt {
            Stmt::Label(_) => {
                st.frames.last_mut().unwrap().pc += 1;
            }
            Stmt::Assign(x, e) => {
                let v = self.eval(&st, &frame, &e)?;
                self.assign(&mut st, &x, v)?;
                st.frames.last_mut().unwrap().pc += 1;
            }
            Stmt::StoreDeref(a, b) => {
                let addr = self.eval(&st, &frame, &a)?;
                let v = self.eval(&st, &frame, &b)?;
                let Value::Ptr { b: bb, o } = addr else {
                    return Err(Self::stuck(format!("store through non-pointer {addr}")));
                };
                st.mem = st.mem.store(bb, o, v).map_err(|e| Self::stuck(e.to_string()))?;
                st.frames.last_mut().unwrap().pc += 1;
            }
            Stmt::StoreIndex(g, i, e) => {
                let idx = self.eval(&st, &frame, &i)?;
                let v = self.eval(&st, &frame, &e)?;
                let Some(ix) = idx.as_int() else {
                    return Err(Self::stuck("index is not an integer".to_string()));
                };
                let info = self
                    .se
                    .lookup(&g)
                    .filter(|s| s.kind == SymKind::Var)
                    .ok_or_else(|| Self::stuck(format!("unknown array {g}")))?;
                st.mem = st
                    .mem
                    .store(info.block, 8 * ix, v)
                    .map_err(|e| Self::stuck(e.to_string()))?;
                st.frames.last_mut().unwrap().pc += 1;
            }
            Stmt::If(e, l) => {
                let v = self.eval(&st, &frame, &e)?;
                let Some(x) = v.as_int() else {
                    return Err(Self::stuck(format!("branch on non-integer {v}")));
                };
                let pc = if x != 0 { self.labels[&frame.func][&l] } else { frame.pc + 1 };
                st.frames.last_mut().unwrap().pc = pc;
            }
            Stmt::Goto(l) => {
                st.frames.last_mut().unwrap().pc = self.labels[&frame.func][&l];
            }
            Stmt::Return(e) => {
                let v = match e {
                    Some(e) => self.eval(&st, &frame, &e)?,
                    None => Value::Undef,
                };
                self.do_return(&mut st, v)?;
            }
            Stmt::Call { dst, target, args } => {
                let argv: Result<Vec<Value>, SemError> =
                    args.iter().map(|a| self.eval(&st, &frame, a)).collect();
                let argv = argv?;
                // A name bound to a variable calls indirectly through its
                // value; otherwise the name must denote a function symbol.
                let is_var = frame.env.contains_key(&target)
                    || frame.local_blocks.contains_key(&target)
                    || matches!(self.se.lookup(&target), Some(i) if i.kind == SymKind::Var);
                let (vf, sg) = if is_var {
                    let v = self.eval(&st, &frame, &Expr::Var(target.clone()))?;
                    (v, self.indirect_sig(&argv, &dst))
                } else {
                    let info = self
                        .se
                        .lookup(&target)
                        .filter(|i| i.kind == SymKind::Func)
                        .ok_or_else(|| Self::stuck(format!("unknown function {target}")))?;
                    let sg = match self.func(&target) {
                        Some(f) => f.sig(),
                        None => self
                            .module
                            .extern_sig(&target)
                            .cloned()
                            .ok_or_else(|| Self::stuck(format!("no signature for {target}")))?,
                    };
                    (Value::ptr(info.block, 0), sg)
                };
                let Value::Ptr { b, o: 0 } = vf else {
                    return Err(Self::stuck(format!("call through bad value {vf}")));
                };
                let callee = self.se.name_of(b).and_then(|n| self.func(n));
                match callee {
                    Some(fdef) => {
                        let entered = self.enter(fdef, &argv, st.mem.clone())?;
                        st.frames.last_mut().unwrap().pending_dst = Some(dst);
                        st.mem = entered.mem;
                        st.frames.extend(entered.frames);
                    }
                    None => {
                        let q = CQuery { vf, sg, args: argv, mem: st.mem.clone() };
                        st.control = CControl::AtExternal { q, dst };
                    }
                }
            }
        }
        Ok(LtsState::MiniC(st))
    }

    fn resume(&self, s: &LtsState, r: &Reply) -> Result<LtsState, SemError> {
        let LtsState::MiniC(st) = s else {
            return Err(SemError::Stuck("not a minic state".to_string()));
        };
        let CControl::AtExternal { dst, .. } = &st.control else {
            return Err(SemError::Stuck("not at an external call".to_string()));
        };
        let Reply::C(r) = r else {
            return Err(SemError::Stuck("expected a C reply".to_string()));
        };
        let mut st = st.clone();
        let dst = dst.clone();
        st.mem = r.mem.clone();
        st.control = CControl::Run;
        st.frames.last_mut().unwrap().pc += 1;
        if let Some(d) = dst {
            self.assign(&mut st, &d, r.res)?;
        }
        Ok(LtsState::MiniC(st))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOUBLE_KEY: &str = r#"
; constant propagation showcase
const key = 42
extern foo(ptr) -> void

func double_key() -> int {
  var a
  a = key
  call foo(&key)
  return a + key
}
"#;

    #[test]
    fn parse_print_roundtrip() {
        let m = parse_module(DOUBLE_KEY).unwrap();
        let printed = print_module(&m);
        let again = parse_module(&printed).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_module("func f( -> int {\n}\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_module("global x\n").unwrap_err();
        assert!(err.msg.contains("expected"));
    }

    #[test]
    fn deref_of_integer_is_stuck() {
        let src = "func f(int x) -> int {\n  x = *x\n  return x\n}\n";
        let m = parse_module(src).unwrap();
        let se = SymbolTable::build(&m.decls()).unwrap();
        let sem = sem_minic(&m, &se).unwrap();
        let mem = se.initial_memory();
        let q = Query::C(CQuery {
            vf: Value::ptr(se.block_of("f").unwrap(), 0),
            sg: Signature::int_int(),
            args: vec![Value::int(5)],
            mem,
        });
        assert!(sem.accepts(&q));
        let s = sem.init(&q).unwrap();
        let err = sem.step(&s).unwrap_err();
        assert!(matches!(err, SemError::Stuck(_)), "{err}");
    }
}
