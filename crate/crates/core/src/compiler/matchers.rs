//! Per-pass simulation matchers. Each matcher derives the current block
//! correspondence structurally from the paired states, so the convention
//! checks the driver runs against it stay independent oracles.

use crate::compiler::stacking::CodegenMap;
use crate::conv::simcheck::PassMatcher;
use crate::conv::{ChainInstance, ConvAtom, ConvWorld, ReplyWitness};
use crate::inject::{mem_inj_check, value_inject_check, Meminj};
use crate::kmr::InjpWorld;
use crate::lang::minic::{CControl, CState};
use crate::mem::Value;
use crate::sem::{LtsState, Query, Reg, Reply, SymbolTable};

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

// ---------------------------------------------------------------------
// Promotion matcher.
// ---------------------------------------------------------------------

/// Relates the pre-promotion module (every variable in a block) to the
/// promoted one (unaddressed variables in temporaries). Blocks of promoted
/// variables stay unmapped; everything else corresponds by variable name.
pub struct PromoteMatcher {
    in_atoms: Vec<ConvAtom>,
    out_atoms: Vec<ConvAtom>,
    j_env: Meminj,
    set: bool,
}

impl PromoteMatcher {
    pub fn new(in_atoms: &[ConvAtom], out_atoms: &[ConvAtom]) -> PromoteMatcher {
        PromoteMatcher {
            in_atoms: in_atoms.to_vec(),
            out_atoms: out_atoms.to_vec(),
            j_env: Meminj::empty(),
            set: false,
        }
    }

    fn total_injection(&self, s1: &CState, s2: &CState) -> Result<Meminj, String> {
        let mut j = self.j_env.clone();
        if s1.frames.len() != s2.frames.len() {
            return Err(format!(
                "frame depth differs: {} vs {}",
                s1.frames.len(),
                s2.frames.len()
            ));
        }
        for (f1, f2) in s1.frames.iter().zip(&s2.frames) {
            for (name, &b1) in &f1.local_blocks {
                if let Some(&b2) = f2.local_blocks.get(name) {
                    j.insert(b1, (b2, 0));
                }
                // Promoted variables keep their source block unmapped.
            }
        }
        Ok(j)
    }
}

impl PassMatcher for PromoteMatcher {
    fn init(&mut self, inst: &ChainInstance, _s1: &LtsState, _s2: &LtsState) -> Result<(), String> {
        self.j_env = bridging_world(inst)?.j;
        self.set = true;
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let (LtsState::MiniC(s1), LtsState::MiniC(s2)) = (s1, s2) else {
            return Err("expected two C-level states".to_string());
        };
        match (&s1.control, &s2.control) {
            (CControl::Run, CControl::Run)
            | (CControl::AtExternal { .. }, CControl::AtExternal { .. })
            | (CControl::Done { .. }, CControl::Done { .. }) => {}
            _ => return Err("control modes differ".to_string()),
        }
        let j = self.total_injection(s1, s2)?;
        for (i, (f1, f2)) in s1.frames.iter().zip(&s2.frames).enumerate() {
            if f1.func != f2.func || f1.pc != f2.pc {
                return Err(format!("frame {i} misaligned: {}@{} vs {}@{}",
                    f1.func, f1.pc, f2.func, f2.pc));
            }
            if f1.pending_dst != f2.pending_dst {
                return Err(format!("frame {i}: pending destinations differ"));
            }
            // Promoted variables: the source cell injects into the target
            // temporary.
            for (name, v2) in &f2.env {
                if f1.env.contains_key(name) {
                    continue;
                }
                let Some(&b1) = f1.local_blocks.get(name) else {
                    return Err(format!("frame {i}: {name} missing on the source side"));
                };
                let v1 = s1.mem.value_at(b1, 0);
                if !value_inject_check(&j, &v1, v2) {
                    return Err(format!(
                        "frame {i}: promoted {name}: {v1} does not inject to {v2}"
                    ));
                }
            }
        }
        let inj = mem_inj_check(&j, &s1.mem, &s2.mem);
        if !inj.ok() {
            return Err(format!("memory injection fails: {inj}"));
        }
        Ok(())
    }

    fn outgoing(
        &mut self,
        s1: &LtsState,
        s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let (LtsState::MiniC(c1), LtsState::MiniC(c2)) = (s1, s2) else {
            return Err("expected two C-level states".to_string());
        };
        let j = self.total_injection(c1, c2)?;
        let world = InjpWorld::new(j, q1.mem().clone(), q2.mem().clone());
        let worlds = self
            .out_atoms
            .iter()
            .map(|a| match a {
                ConvAtom::Kmr(_, tag) => Ok(ConvWorld::Kmr(*tag, world.clone())),
                other => Err(format!("unsupported outgoing atom {other}")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ChainInstance {
            atoms: self.out_atoms.clone(),
            worlds,
            queries: vec![q1.clone(), q2.clone()],
        })
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
        let replies = crate::conv::synthesize_reply_chain(&self.in_atoms, r1, r2)?;
        Ok((witness_for(&self.in_atoms, world), replies))
    }
}

// ---------------------------------------------------------------------
// Stacking matcher.
// ---------------------------------------------------------------------

/// The staged relation between the C-level module and its compiled code:
/// statement boundaries align with recorded instruction starts, addressed
/// locals map into their frame slots, temporaries live in private slots,
/// and every frame's back link and return-address slot stay intact.
pub struct StackingMatcher {
    se: SymbolTable,
    map: CodegenMap,
    in_atoms: Vec<ConvAtom>,
    j_env: Meminj,
    frames: Vec<crate::mem::BlockId>,
    init_rs: Option<crate::sem::RegSet>,
    /// Blocks below this id existed at query time and cannot be frames.
    frame_floor: crate::mem::BlockId,
}

impl StackingMatcher {
    pub fn new(se: &SymbolTable, map: &CodegenMap, in_atoms: &[ConvAtom]) -> StackingMatcher {
        StackingMatcher {
            se: se.clone(),
            map: map.clone(),
            in_atoms: in_atoms.to_vec(),
            j_env: Meminj::empty(),
            frames: Vec::new(),
            init_rs: None,
            frame_floor: 0,
        }
    }

    fn total_injection(&self, s1: &CState) -> Result<Meminj, String> {
        let mut j = self.j_env.clone();
        for (f1, &asm_block) in s1.frames.iter().zip(&self.frames) {
            let fm = self
                .map
                .funcs
                .get(&f1.func)
                .ok_or_else(|| format!("no codegen map for {}", f1.func))?;
            for (name, &b1) in &f1.local_blocks {
                let Some(&slot) = fm.layout.local_slots.get(name) else {
                    return Err(format!("{}: no slot for addressed local {name}", f1.func));
                };
                j.insert(b1, (asm_block, slot));
            }
        }
        Ok(j)
    }
}

impl PassMatcher for StackingMatcher {
    fn init(&mut self, inst: &ChainInstance, _s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        self.j_env = bridging_world(inst)?.j;
        let LtsState::MiniAsm(a) = s2 else {
            return Err("expected a machine state".to_string());
        };
        self.init_rs = Some(a.rs.clone());
        self.frame_floor = a.mem.next_block;
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let (LtsState::MiniC(s1), LtsState::MiniAsm(s2)) = (s1, s2) else {
            return Err("expected a C state against a machine state".to_string());
        };
        use crate::lang::miniasm::AControl;
        match (&s1.control, &s2.control) {
            (CControl::Run, AControl::Run)
            | (CControl::AtExternal { .. }, AControl::AtExternal)
            | (CControl::Done { .. }, AControl::Done) => {}
            _ => return Err("control modes differ".to_string()),
        }
        if s2.depth != s1.frames.len() {
            return Err(format!("call depth {} vs {} frames", s2.depth, s1.frames.len()));
        }

        // Track pushed and popped frames.
        while self.frames.len() > s1.frames.len() {
            self.frames.pop();
        }
        if self.frames.len() + 1 == s1.frames.len() {
            let Value::Ptr { b, o: 0 } = s2.rs.get(Reg::Rsp) else {
                return Err("stack register does not point at a frame".to_string());
            };
            if b < self.frame_floor {
                return Err("frame not yet allocated".to_string());
            }
            if self.frames.contains(&b) {
                return Err("stack register points at a stale frame".to_string());
            }
            self.frames.push(b);
        }
        if self.frames.len() != s1.frames.len() {
            return Err("frame tracking out of sync".to_string());
        }

        // Program-counter alignment for the running frame.
        if let (CControl::Run, Some(f1)) = (&s1.control, s1.frames.last()) {
            let fm = self
                .map
                .funcs
                .get(&f1.func)
                .ok_or_else(|| format!("no codegen map for {}", f1.func))?;
            let fb = self
                .se
                .block_of(&f1.func)
                .ok_or_else(|| format!("no block for {}", f1.func))?;
            let want = Value::ptr(fb, fm.stmt_starts[f1.pc] as i64);
            if s2.rs.get(Reg::Pc) != want {
                return Err(format!(
                    "PC {} not at the start of statement {} of {}",
                    s2.rs.get(Reg::Pc),
                    f1.pc,
                    f1.func
                ));
            }
            let Value::Ptr { b, o: 0 } = s2.rs.get(Reg::Rsp) else {
                return Err("stack register does not point at a frame".to_string());
            };
            if Some(&b) != self.frames.last() {
                return Err("stack register left the tracked frame".to_string());
            }
        }

        let j = self.total_injection(s1)?;
        let inj = mem_inj_check(&j, &s1.mem, &s2.mem);
        if !inj.ok() {
            return Err(format!("memory injection fails: {inj}"));
        }

        // Temporaries against their private slots; frame discipline for
        // every live frame.
        let init_rs = self.init_rs.as_ref().ok_or("matcher not initialized")?;
        for (i, (f1, &asm_block)) in s1.frames.iter().zip(&self.frames).enumerate() {
            let fm = &self.map.funcs[&f1.func];
            for (name, &slot) in &fm.layout.temp_slots {
                let Some(v1) = f1.env.get(name) else {
                    return Err(format!("frame {i}: temporary {name} missing"));
                };
                let v2 = s2.mem.value_at(asm_block, slot);
                if !value_inject_check(&j, v1, &v2) {
                    return Err(format!(
                        "frame {i}: temporary {name}: {v1} does not inject to {v2}"
                    ));
                }
            }
            let link = s2.mem.value_at(asm_block, 0);
            let expected_link = if i == 0 {
                init_rs.get(Reg::Rsp)
            } else {
                Value::ptr(self.frames[i - 1], 0)
            };
            if link != expected_link {
                return Err(format!("frame {i}: back link {link} != {expected_link}"));
            }
            let ra = s2.mem.value_at(asm_block, fm.layout.ra_ofs);
            if i == 0 {
                if ra != init_rs.get(Reg::Ra) {
                    return Err(format!("frame 0: saved return address changed to {ra}"));
                }
            } else if !matches!(ra, Value::Ptr { .. }) {
                return Err(format!("frame {i}: saved return address clobbered: {ra}"));
            }
        }
        Ok(())
    }

    fn outgoing(
        &mut self,
        s1: &LtsState,
        _s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let LtsState::MiniC(c1) = s1 else {
            return Err("expected a C-level source state".to_string());
        };
        let (Query::C(qc), Query::Asm(qa)) = (q1, q2) else {
            return Err("expected a C query against a machine query".to_string());
        };
        let j = self.total_injection(c1)?;
        let world = InjpWorld::new(j, qc.mem.clone(), qa.mem.clone());
        Ok(ChainInstance {
            atoms: vec![ConvAtom::CAinjp],
            worlds: vec![ConvWorld::CAinjp {
                w: world,
                sg: qc.sg.clone(),
                rs: qa.rs.clone(),
            }],
            queries: vec![q1.clone(), q2.clone()],
        })
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
        let replies = crate::conv::synthesize_reply_chain(&self.in_atoms, r1, r2)?;
        Ok((witness_for(&self.in_atoms, world), replies))
    }
}
