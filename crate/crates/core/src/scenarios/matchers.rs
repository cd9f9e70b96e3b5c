//! Matchers relating the hand-coded big-step specs to their
//! implementations. Each relation is staged: entry, before the external
//! call, after it, and before returning; between stages the implementation
//! stutters through its instruction or statement blocks.

use crate::conv::simcheck::PassMatcher;
use crate::conv::{ChainInstance, ConvAtom, ConvWorld, ReplyWitness};
use crate::inject::{mem_inj_check, value_inject_check, Meminj};
use crate::kmr::InjpWorld;
use crate::lang::miniasm::{AControl, AState, Instr, MiniAsmModule};
use crate::mem::{BlockId, Value};
use crate::sem::{LtsState, Query, Reg, Reply, Signature, SymbolTable};
use crate::specs::{ServerState, SpecState, SumAsmState};

fn witness_for(atoms: &[ConvAtom], world: InjpWorld) -> Vec<ReplyWitness> {
    atoms
        .iter()
        .map(|a| match a {
            ConvAtom::Kmr(..) => ReplyWitness::Kmr(world.clone()),
            ConvAtom::CAinjp => ReplyWitness::CAinjp(world.clone()),
            _ => ReplyWitness::Trivial,
        })
        .collect()
}

fn bridging_world(inst: &ChainInstance) -> Result<InjpWorld, String> {
    inst.worlds
        .iter()
        .find_map(|w| match w {
            ConvWorld::Kmr(_, w) => Some(w.clone()),
            ConvWorld::CAinjp { w, .. } => Some(w.clone()),
            _ => None,
        })
        .ok_or_else(|| "incoming convention carries no injection world".to_string())
}

/// Worlds for an outgoing chain whose bridging atom carries the given
/// injection world.
fn outgoing_instance(
    atoms: &[ConvAtom],
    se: &SymbolTable,
    world: InjpWorld,
    q1: &Query,
    q2: &Query,
) -> Result<ChainInstance, String> {
    let sg = match q1 {
        Query::C(q) => q.sg.clone(),
        Query::Asm(_) => Signature::int_int(),
    };
    let rs = match q2 {
        Query::Asm(q) => q.rs.clone(),
        Query::C(_) => Default::default(),
    };
    let worlds = atoms
        .iter()
        .map(|a| match a {
            ConvAtom::Ro => Ok(ConvWorld::Ro { se: se.clone(), mem: q1.mem().clone() }),
            ConvAtom::Wt => Ok(ConvWorld::Wt(sg.clone())),
            ConvAtom::Kmr(_, tag) => Ok(ConvWorld::Kmr(*tag, world.clone())),
            ConvAtom::CAinjp => Ok(ConvWorld::CAinjp {
                w: world.clone(),
                sg: sg.clone(),
                rs: rs.clone(),
            }),
            other => Err(format!("unsupported outgoing atom {other}")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let queries = crate::conv::synthesize_query_chain(atoms, q1, q2)?;
    Ok(ChainInstance { atoms: atoms.to_vec(), worlds, queries })
}

/// The instruction index right after the call in a hand-written function,
/// and the index right after the frame release.
fn call_and_release(m: &MiniAsmModule, func: &str) -> Result<(usize, usize), String> {
    let f = m.func(func).ok_or_else(|| format!("no function {func}"))?;
    let call = f
        .body
        .iter()
        .position(|i| matches!(i, Instr::PcallReg(_) | Instr::PcallSym(_)))
        .ok_or_else(|| format!("{func} never calls out"))?;
    let release = f
        .body
        .iter()
        .position(|i| matches!(i, Instr::Pfreeframe { .. }))
        .ok_or_else(|| format!("{func} never releases its frame"))?;
    Ok((call, release))
}

// ---------------------------------------------------------------------
// The encryption-server spec against its machine implementation.
// ---------------------------------------------------------------------

pub struct ServerImplMatcher {
    se: SymbolTable,
    module: MiniAsmModule,
    atoms: Vec<ConvAtom>,
    j_env: Meminj,
    init_rs: Option<crate::sem::RegSet>,
    frame: Option<BlockId>,
    floor: BlockId,
}

impl ServerImplMatcher {
    pub fn new(se: &SymbolTable, module: &MiniAsmModule, atoms: &[ConvAtom]) -> ServerImplMatcher {
        ServerImplMatcher {
            se: se.clone(),
            module: module.clone(),
            atoms: atoms.to_vec(),
            j_env: Meminj::empty(),
            init_rs: None,
            frame: None,
            floor: 0,
        }
    }

    fn total_injection(&self, st: &ServerState) -> Meminj {
        let mut j = self.j_env.clone();
        if let (Some(frame), ServerState::Callp { sp, .. } | ServerState::Retp { sp, .. }) =
            (self.frame, st)
        {
            j.insert(*sp, (frame, 8));
        }
        j
    }
}

impl PassMatcher for ServerImplMatcher {
    fn init(&mut self, inst: &ChainInstance, _s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        self.j_env = bridging_world(inst)?.j;
        let LtsState::MiniAsm(a) = s2 else {
            return Err("expected a machine state".to_string());
        };
        self.init_rs = Some(a.rs.clone());
        self.floor = a.mem.next_block;
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let (LtsState::Spec(SpecState::Server(st)), LtsState::MiniAsm(a)) = (s1, s2) else {
            return Err("expected the server spec against a machine state".to_string());
        };
        let init_rs = self.init_rs.clone().ok_or("matcher not initialized")?;
        let encrypt = self.se.block_of("encrypt").ok_or("no encrypt symbol")?;
        let (call_idx, release_idx) = call_and_release(&self.module, "encrypt")?;
        match st {
            ServerState::Calle { i, vf, mem } => {
                if a.control != AControl::Run || a.rs.get(Reg::Pc) != Value::ptr(encrypt, 0) {
                    return Err("not at the entry point".to_string());
                }
                let j = self.total_injection(st);
                if !value_inject_check(&j, &Value::int(*i), &a.rs.get(Reg::Rdi)) {
                    return Err(format!("argument {} not in RDI", i));
                }
                if !value_inject_check(&j, vf, &a.rs.get(Reg::Rsi)) {
                    return Err("callback not in RSI".to_string());
                }
                let inj = mem_inj_check(&j, mem, &a.mem);
                if !inj.ok() {
                    return Err(format!("memories unrelated: {inj}"));
                }
                Ok(())
            }
            ServerState::Callp { sp: _, vf, mem } => {
                if a.control != AControl::AtExternal {
                    return Err("implementation not at the external call".to_string());
                }
                let Value::Ptr { b: frame, o: 0 } = a.rs.get(Reg::Rsp) else {
                    return Err("stack register is not a frame pointer".to_string());
                };
                if frame < self.floor {
                    return Err("frame not yet allocated".to_string());
                }
                self.frame = Some(frame);
                let j = self.total_injection(st);
                if a.rs.get(Reg::Rdi) != Value::ptr(frame, 8) {
                    return Err("argument register does not point at the result slot".to_string());
                }
                if !value_inject_check(&j, vf, &a.rs.get(Reg::Pc)) {
                    return Err("callback does not match the program counter".to_string());
                }
                if a.rs.get(Reg::Ra) != Value::ptr(encrypt, call_idx as i64 + 1) {
                    return Err("return address not set past the call".to_string());
                }
                if a.mem.value_at(frame, 0) != init_rs.get(Reg::Rsp)
                    || a.mem.value_at(frame, 16) != init_rs.get(Reg::Ra)
                {
                    return Err("saved stack pointer or return address clobbered".to_string());
                }
                let inj = mem_inj_check(&j, mem, &a.mem);
                if !inj.ok() {
                    return Err(format!("memories unrelated: {inj}"));
                }
                // Callee-save discipline relative to the query.
                if a.rs.get(Reg::Rbx) != init_rs.get(Reg::Rbx) {
                    return Err("callee-save register modified".to_string());
                }
                Ok(())
            }
            ServerState::Retp { mem, .. } => {
                let frame = self.frame.ok_or("no frame observed")?;
                if a.control != AControl::Run
                    || a.rs.get(Reg::Pc) != Value::ptr(encrypt, call_idx as i64 + 1)
                {
                    return Err("not back at the return point".to_string());
                }
                if a.mem.value_at(frame, 0) != init_rs.get(Reg::Rsp)
                    || a.mem.value_at(frame, 16) != init_rs.get(Reg::Ra)
                {
                    return Err("private frame slots changed across the call".to_string());
                }
                let j = self.total_injection(st);
                let inj = mem_inj_check(&j, mem, &a.mem);
                if !inj.ok() {
                    return Err(format!("memories unrelated: {inj}"));
                }
                Ok(())
            }
            ServerState::Rete { mem } => {
                if a.control != AControl::Run
                    || a.rs.get(Reg::Pc) != Value::ptr(encrypt, release_idx as i64 + 1)
                {
                    return Err("not past the frame release".to_string());
                }
                if a.rs.get(Reg::Rsp) != init_rs.get(Reg::Rsp)
                    || a.rs.get(Reg::Rbx) != init_rs.get(Reg::Rbx)
                {
                    return Err("stack or callee-save register not restored".to_string());
                }
                let j = self.total_injection(st);
                let inj = mem_inj_check(&j, mem, &a.mem);
                if !inj.ok() {
                    return Err(format!("memories unrelated: {inj}"));
                }
                Ok(())
            }
        }
    }

    fn outgoing(
        &mut self,
        s1: &LtsState,
        _s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let LtsState::Spec(SpecState::Server(st)) = s1 else {
            return Err("expected the server spec".to_string());
        };
        let j = self.total_injection(st);
        let world = InjpWorld::new(j, q1.mem().clone(), q2.mem().clone());
        outgoing_instance(&self.atoms, &self.se, world, q1, q2)
    }

    fn after_external(
        &mut self,
        evolved: &[InjpWorld],
        _replies: &[Reply],
        _s1: &LtsState,
        _s2: &LtsState,
    ) -> Result<(), String> {
        if let Some(w) = evolved.first() {
            // The evolved injection already contains the result-slot
            // mapping; the per-phase re-insertion is idempotent.
            self.j_env = w.j.clone();
        }
        Ok(())
    }

    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String> {
        let world = InjpWorld::new(self.j_env.clone(), r1.mem().clone(), r2.mem().clone());
        let replies = crate::conv::synthesize_reply_chain(&self.atoms, r1, r2)?;
        Ok((witness_for(&self.atoms, world), replies))
    }
}

// ---------------------------------------------------------------------
// The summation-server spec against its machine implementation.
// ---------------------------------------------------------------------

pub struct SumAsmImplMatcher {
    se: SymbolTable,
    module: MiniAsmModule,
    atoms: Vec<ConvAtom>,
    j_env: Meminj,
    init_rs: Option<crate::sem::RegSet>,
    frame: Option<BlockId>,
    floor: BlockId,
}

impl SumAsmImplMatcher {
    pub fn new(se: &SymbolTable, module: &MiniAsmModule, atoms: &[ConvAtom]) -> SumAsmImplMatcher {
        SumAsmImplMatcher {
            se: se.clone(),
            module: module.clone(),
            atoms: atoms.to_vec(),
            j_env: Meminj::empty(),
            init_rs: None,
            frame: None,
            floor: 0,
        }
    }
}

impl PassMatcher for SumAsmImplMatcher {
    fn init(&mut self, inst: &ChainInstance, _s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        self.j_env = bridging_world(inst)?.j;
        let LtsState::MiniAsm(a) = s2 else {
            return Err("expected a machine state".to_string());
        };
        self.init_rs = Some(a.rs.clone());
        self.floor = a.mem.next_block;
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let (LtsState::Spec(SpecState::SumAsm(st)), LtsState::MiniAsm(a)) = (s1, s2) else {
            return Err("expected the summation spec against a machine state".to_string());
        };
        let init_rs = self.init_rs.clone().ok_or("matcher not initialized")?;
        let g = self.se.block_of("g").ok_or("no g symbol")?;
        let (call_idx, release_idx) = call_and_release(&self.module, "g")?;
        let j = self.j_env.clone();
        let mem_ok = |mem: &crate::mem::MemoryState, tm: &crate::mem::MemoryState| {
            let inj = mem_inj_check(&j, mem, tm);
            if inj.ok() {
                Ok(())
            } else {
                Err(format!("memories unrelated: {inj}"))
            }
        };
        match st {
            SumAsmState::Callg { i, mem } => {
                if a.control != AControl::Run || a.rs.get(Reg::Pc) != Value::ptr(g, 0) {
                    return Err("not at the entry point".to_string());
                }
                if a.rs.get(Reg::Rdi) != Value::int(*i) {
                    return Err("argument not in RDI".to_string());
                }
                mem_ok(mem, &a.mem)
            }
            SumAsmState::Callf { i, vf, mem } => {
                if a.control != AControl::AtExternal {
                    return Err("implementation not at the external call".to_string());
                }
                let Value::Ptr { b: frame, o: 0 } = a.rs.get(Reg::Rsp) else {
                    return Err("stack register is not a frame pointer".to_string());
                };
                if frame < self.floor {
                    return Err("frame not yet allocated".to_string());
                }
                self.frame = Some(frame);
                if a.rs.get(Reg::Rbx) != Value::int(*i) {
                    return Err("argument not preserved in RBX".to_string());
                }
                if !value_inject_check(&j, vf, &a.rs.get(Reg::Pc)) {
                    return Err("callee does not match the program counter".to_string());
                }
                if a.rs.get(Reg::Rdi) != Value::int(i - 1) {
                    return Err("decremented argument not in RDI".to_string());
                }
                if a.rs.get(Reg::Ra) != Value::ptr(g, call_idx as i64 + 1) {
                    return Err("return address not set past the call".to_string());
                }
                if a.mem.value_at(frame, 0) != init_rs.get(Reg::Rsp)
                    || a.mem.value_at(frame, 8) != init_rs.get(Reg::Rbx)
                    || a.mem.value_at(frame, 16) != init_rs.get(Reg::Ra)
                {
                    return Err("saved registers clobbered".to_string());
                }
                mem_ok(mem, &a.mem)
            }
            SumAsmState::Returnf { i, res, mem } => {
                let frame = self.frame.ok_or("no frame observed")?;
                if a.control != AControl::Run
                    || a.rs.get(Reg::Pc) != Value::ptr(g, call_idx as i64 + 1)
                {
                    return Err("not back at the return point".to_string());
                }
                if a.rs.get(Reg::Rax) != Value::int(*res) {
                    return Err("result register does not carry the reply".to_string());
                }
                if a.rs.get(Reg::Rbx) != Value::int(*i) {
                    return Err("callee-save discipline lost across the call".to_string());
                }
                if a.mem.value_at(frame, 0) != init_rs.get(Reg::Rsp)
                    || a.mem.value_at(frame, 8) != init_rs.get(Reg::Rbx)
                    || a.mem.value_at(frame, 16) != init_rs.get(Reg::Ra)
                {
                    return Err("private frame slots changed across the call".to_string());
                }
                mem_ok(mem, &a.mem)
            }
            SumAsmState::Returng { res, mem } => {
                if a.control != AControl::Run
                    || a.rs.get(Reg::Pc) != Value::ptr(g, release_idx as i64 + 1)
                {
                    return Err("not past the frame release".to_string());
                }
                if a.rs.get(Reg::Rax) != Value::int(*res) {
                    return Err("result register does not carry the sum".to_string());
                }
                if a.rs.get(Reg::Rsp) != init_rs.get(Reg::Rsp)
                    || a.rs.get(Reg::Rbx) != init_rs.get(Reg::Rbx)
                {
                    return Err("stack or callee-save register not restored".to_string());
                }
                mem_ok(mem, &a.mem)
            }
        }
    }

    fn outgoing(
        &mut self,
        _s1: &LtsState,
        _s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let world = InjpWorld::new(self.j_env.clone(), q1.mem().clone(), q2.mem().clone());
        outgoing_instance(&self.atoms, &self.se, world, q1, q2)
    }

    fn after_external(
        &mut self,
        evolved: &[InjpWorld],
        _replies: &[Reply],
        _s1: &LtsState,
        _s2: &LtsState,
    ) -> Result<(), String> {
        if let Some(w) = evolved.first() {
            self.j_env = w.j.clone();
        }
        Ok(())
    }

    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String> {
        let world = InjpWorld::new(self.j_env.clone(), r1.mem().clone(), r2.mem().clone());
        let replies = crate::conv::synthesize_reply_chain(&self.atoms, r1, r2)?;
        Ok((witness_for(&self.atoms, world), replies))
    }
}

// ---------------------------------------------------------------------
// Top-level specs against the syntactically linked machine module. The
// relation is phase-based: call states align at function entries and
// external-call points; return states align as soon as the memories
// relate, and the final convention check carries the rest.
// ---------------------------------------------------------------------

pub struct TopSpecMatcher {
    se: SymbolTable,
    atoms: Vec<ConvAtom>,
    j_env: Meminj,
    init_rs: Option<crate::sem::RegSet>,
    floor: BlockId,
    /// Spec frame blocks paired with implementation frame blocks.
    frames: Vec<(BlockId, BlockId)>,
}

impl TopSpecMatcher {
    pub fn new(se: &SymbolTable, atoms: &[ConvAtom]) -> TopSpecMatcher {
        TopSpecMatcher {
            se: se.clone(),
            atoms: atoms.to_vec(),
            j_env: Meminj::empty(),
            init_rs: None,
            floor: 0,
            frames: Vec::new(),
        }
    }

    fn entry_at(&self, a: &AState, func: &str) -> bool {
        match self.se.block_of(func) {
            Some(b) => a.control == AControl::Run && a.rs.get(Reg::Pc) == Value::ptr(b, 0),
            None => false,
        }
    }

    fn with_frames(&self) -> Meminj {
        let mut j = self.j_env.clone();
        for &(sp, frame) in &self.frames {
            j.insert(sp, (frame, 8));
        }
        j
    }

    fn expect_spec_frames(&mut self, live: &[BlockId], a: &AState) -> Result<(), String> {
        // Pair newly allocated spec frames with the implementation frame
        // the stack register points at.
        if live.len() == self.frames.len() + 1 {
            let Value::Ptr { b: frame, o: 0 } = a.rs.get(Reg::Rsp) else {
                return Err("stack register is not a frame pointer".to_string());
            };
            if frame < self.floor {
                return Err("frame not yet allocated".to_string());
            }
            if self.frames.iter().any(|&(_, f)| f == frame) {
                return Err("stack register points at a stale frame".to_string());
            }
            self.frames.push((*live.last().unwrap(), frame));
        }
        while self.frames.len() > live.len() {
            self.frames.pop();
        }
        if self.frames.len() != live.len() {
            return Err("frame tracking out of sync".to_string());
        }
        Ok(())
    }

    fn mem_related(
        &self,
        mem: &crate::mem::MemoryState,
        a: &AState,
    ) -> Result<(), String> {
        // Cheap gate: global data cells must agree before the full
        // injection check runs; candidate states during stuttering mostly
        // fail here.
        for (_, info) in self.se.iter() {
            if info.kind != crate::sem::SymKind::Var {
                continue;
            }
            for k in 0..info.init.len().max(1) {
                let o = 8 * k as i64;
                if mem.value_at(info.block, o) != a.mem.value_at(info.block, o) {
                    return Err(format!("global cell ({}, {o}) differs", info.block));
                }
            }
        }
        let j = self.with_frames();
        let inj = mem_inj_check(&j, mem, &a.mem);
        if inj.ok() {
            Ok(())
        } else {
            Err(format!("memories unrelated: {inj}"))
        }
    }
}

impl PassMatcher for TopSpecMatcher {
    fn init(&mut self, inst: &ChainInstance, _s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        self.j_env = bridging_world(inst)?.j;
        let LtsState::MiniAsm(a) = s2 else {
            return Err("expected a machine state".to_string());
        };
        self.init_rs = Some(a.rs.clone());
        self.floor = a.mem.next_block;
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let LtsState::MiniAsm(a) = s2 else {
            return Err("expected a machine state".to_string());
        };
        let LtsState::Spec(spec) = s1 else {
            return Err("expected a spec state".to_string());
        };
        match spec {
            SpecState::TopCs(st) => {
                use crate::specs::TopCsState as T;
                match st {
                    T::Callr { i, mem } => {
                        if !self.entry_at(a, "request") {
                            return Err("not at the request entry".to_string());
                        }
                        if a.rs.get(Reg::Rdi) != Value::int(*i) {
                            return Err("argument not in RDI".to_string());
                        }
                        self.mem_related(mem, a)
                    }
                    T::Calle { i, mem, .. } => {
                        if !self.entry_at(a, "encrypt") {
                            return Err("not at the encrypt entry".to_string());
                        }
                        if a.rs.get(Reg::Rdi) != Value::int(*i) {
                            return Err("argument not in RDI".to_string());
                        }
                        self.mem_related(mem, a)
                    }
                    T::Callp { sp, mem, .. } => {
                        if !self.entry_at(a, "process") {
                            return Err("not at the process entry".to_string());
                        }
                        self.expect_spec_frames(&[*sp], a)?;
                        self.mem_related(mem, a)
                    }
                    T::Return { mem, .. } => {
                        if a.control != AControl::Run {
                            return Err("implementation already finished".to_string());
                        }
                        self.mem_related(mem, a)
                    }
                }
            }
            SpecState::TopMr(st) => {
                use crate::specs::TopMrState as T;
                match st {
                    T::Callr { frames, mem, .. } => {
                        if !self.entry_at(a, "request") {
                            return Err("not at the request entry".to_string());
                        }
                        self.expect_spec_frames(frames, a)?;
                        self.mem_related(mem, a)
                    }
                    T::Calle { i, frames, mem, .. } => {
                        if !self.entry_at(a, "encrypt") {
                            return Err("not at the encrypt entry".to_string());
                        }
                        if a.rs.get(Reg::Rdi) != Value::int(*i) {
                            return Err("argument not in RDI".to_string());
                        }
                        self.expect_spec_frames(frames, a)?;
                        self.mem_related(mem, a)
                    }
                    T::Return { mem } => {
                        if a.control != AControl::Run {
                            return Err("implementation already finished".to_string());
                        }
                        while !self.frames.is_empty() {
                            self.frames.pop();
                        }
                        self.mem_related(mem, a)
                    }
                }
            }
            SpecState::SumTop(st) => {
                use crate::specs::SumTopState as T;
                match st {
                    T::Callf { i, mem } => {
                        if !self.entry_at(a, "f") {
                            return Err("not at the f entry".to_string());
                        }
                        if a.rs.get(Reg::Rdi) != Value::int(*i) {
                            return Err("argument not in RDI".to_string());
                        }
                        self.mem_related(mem, a)
                    }
                    T::Callg { i, mem } => {
                        if !self.entry_at(a, "g") {
                            return Err("not at the g entry".to_string());
                        }
                        if a.rs.get(Reg::Rdi) != Value::int(*i) {
                            return Err("argument not in RDI".to_string());
                        }
                        self.mem_related(mem, a)
                    }
                    T::Return { mem, .. } => {
                        if a.control != AControl::Run {
                            return Err("implementation already finished".to_string());
                        }
                        self.mem_related(mem, a)
                    }
                }
            }
            other => Err(format!("unsupported spec state {other:?}")),
        }
    }

    fn outgoing(
        &mut self,
        _s1: &LtsState,
        _s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let world =
            InjpWorld::new(self.with_frames(), q1.mem().clone(), q2.mem().clone());
        outgoing_instance(&self.atoms, &self.se, world, q1, q2)
    }

    fn after_external(
        &mut self,
        evolved: &[InjpWorld],
        _replies: &[Reply],
        _s1: &LtsState,
        _s2: &LtsState,
    ) -> Result<(), String> {
        if let Some(w) = evolved.first() {
            self.j_env = w.j.clone();
        }
        Ok(())
    }

    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String> {
        let world = InjpWorld::new(self.with_frames(), r1.mem().clone(), r2.mem().clone());
        let replies = crate::conv::synthesize_reply_chain(&self.atoms, r1, r2)?;
        Ok((witness_for(&self.atoms, world), replies))
    }
}
