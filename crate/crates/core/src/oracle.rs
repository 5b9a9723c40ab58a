//! Concrete interpreter for the analyzed EVM subset, plus the checkers
//! that compare recorded traces against the static analysis results.
//!
//! The interpreter executes bytecode with stubbed external calls and
//! records, per step, the memory ranges read and written and the value of
//! the free memory pointer. Traces are lifted onto the cloned CFG to
//! compare concrete slots and accesses with their abstractions.

use crate::access::AccessState;
use crate::cfg::{Cfg, NodeId, ProgramPoint};
use crate::fixpoint::Solution;
use crate::needless::Finding;
use crate::opcode::Opcode;
use crate::slot::{AbstractSlotTable, PointSet};
use primitive_types::U256;
use std::collections::BTreeMap;
use tiny_keccak::Hasher;

const MEM_LIMIT: u64 = 1 << 20;
const FMP_ADDR: u64 = 0x40;

/// Return behavior of one stubbed external call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallStub {
    pub success: bool,
    pub return_data: Vec<u8>,
}

impl Default for CallStub {
    fn default() -> Self {
        CallStub { success: true, return_data: vec![0u8; 32] }
    }
}

/// Stubs keyed by callee address, with a default for unknown callees.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StubTable {
    pub by_callee: BTreeMap<U256, CallStub>,
    pub default: CallStub,
}

impl StubTable {
    pub fn lookup(&self, callee: U256) -> &CallStub {
        self.by_callee.get(&callee).unwrap_or(&self.default)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ExecLimits {
    pub max_steps: u64,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits { max_steps: 100_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbortReason {
    StackUnderflow,
    StackOverflow,
    BadJump,
    InvalidInstruction,
    UnsupportedOpcode(u8),
    MemoryLimit,
    ReturnDataOutOfBounds,
    FreePtrDecreased,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Stopped,
    Returned(Vec<u8>),
    Reverted(Vec<u8>),
    SelfDestructed,
    Aborted(AbortReason),
    OutOfSteps,
}

impl Outcome {
    /// Traces ending this way satisfy the allocation idiom (every open
    /// slot was closed by an instruction the analysis also treats as
    /// closing), so the checkers can use them.
    pub fn checkable(&self) -> bool {
        matches!(
            self,
            Outcome::Stopped
                | Outcome::Returned(_)
                | Outcome::Reverted(_)
                | Outcome::SelfDestructed
                | Outcome::Aborted(AbortReason::InvalidInstruction)
        )
    }
}

/// One executed instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub pc: u32,
    pub op: Opcode,
    pub height_before: u32,
    /// Memory ranges (addr, len) read by this step.
    pub mem_reads: Vec<(u64, u64)>,
    /// Memory ranges (addr, len) written by this step.
    pub mem_writes: Vec<(u64, u64)>,
    /// The word loaded, for MLOAD steps.
    pub mload_value: Option<U256>,
    /// Free memory pointer after the step; None once execution halted.
    pub freeptr_after: Option<U256>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub steps: Vec<Step>,
    pub outcome: Outcome,
}

struct Machine<'a> {
    code: &'a [u8],
    calldata: &'a [u8],
    stubs: &'a StubTable,
    stack: Vec<U256>,
    memory: Vec<u8>,
    storage: BTreeMap<U256, U256>,
    return_data: Vec<u8>,
    jumpdests: Vec<bool>,
}

enum Ctl {
    Next(u32),
    Jump(u32),
    Halt(Outcome),
}

impl<'a> Machine<'a> {
    fn new(code: &'a [u8], calldata: &'a [u8], stubs: &'a StubTable) -> Self {
        let dis = crate::asm::disassemble(code);
        let mut jumpdests = vec![false; code.len()];
        for i in &dis.instrs {
            if i.op == Opcode::JUMPDEST && !i.truncated {
                jumpdests[i.pc as usize] = true;
            }
        }
        Machine {
            code,
            calldata,
            stubs,
            stack: Vec::new(),
            memory: Vec::new(),
            storage: BTreeMap::new(),
            return_data: Vec::new(),
            jumpdests,
        }
    }

    fn expand(&mut self, addr: u64, len: u64) -> Result<(), AbortReason> {
        if len == 0 {
            return Ok(());
        }
        let end = addr.checked_add(len).ok_or(AbortReason::MemoryLimit)?;
        if end > MEM_LIMIT {
            return Err(AbortReason::MemoryLimit);
        }
        let word_end = end.div_ceil(32) * 32;
        if (self.memory.len() as u64) < word_end {
            self.memory.resize(word_end as usize, 0);
        }
        Ok(())
    }

    fn read_word(&mut self, addr: u64) -> Result<U256, AbortReason> {
        self.expand(addr, 32)?;
        Ok(U256::from_big_endian(&self.memory[addr as usize..addr as usize + 32]))
    }

    /// Read without growing memory (used for observing the free pointer).
    fn peek_word(&self, addr: u64) -> U256 {
        let mut buf = [0u8; 32];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = self.memory.get(addr as usize + i).copied().unwrap_or(0);
        }
        U256::from_big_endian(&buf)
    }

    fn write_word(&mut self, addr: u64, v: U256) -> Result<(), AbortReason> {
        self.expand(addr, 32)?;
        self.memory[addr as usize..addr as usize + 32].copy_from_slice(&v.to_big_endian());
        Ok(())
    }

    fn write_bytes(&mut self, addr: u64, data: &[u8]) -> Result<(), AbortReason> {
        if data.is_empty() {
            return Ok(());
        }
        self.expand(addr, data.len() as u64)?;
        self.memory[addr as usize..addr as usize + data.len()].copy_from_slice(data);
        Ok(())
    }

    fn pop(&mut self) -> Result<U256, AbortReason> {
        self.stack.pop().ok_or(AbortReason::StackUnderflow)
    }

    fn push(&mut self, v: U256) -> Result<(), AbortReason> {
        if self.stack.len() >= 1024 {
            return Err(AbortReason::StackOverflow);
        }
        self.stack.push(v);
        Ok(())
    }

    fn as_addr(v: U256) -> Result<u64, AbortReason> {
        if v > U256::from(MEM_LIMIT) {
            return Err(AbortReason::MemoryLimit);
        }
        Ok(v.low_u64())
    }
}

fn bool_word(b: bool) -> U256 {
    if b {
        U256::one()
    } else {
        U256::zero()
    }
}

/// Execute `code` from pc 0 until a halting instruction, an abort, or the
/// step budget. Deterministic for a given (code, calldata, stubs).
pub fn execute(code: &[u8], calldata: &[u8], stubs: &StubTable, limits: &ExecLimits) -> Trace {
    let mut m = Machine::new(code, calldata, stubs);
    let mut steps: Vec<Step> = Vec::new();
    let mut pc: u32 = 0;
    let mut prev_fmp = U256::zero();

    loop {
        if steps.len() as u64 >= limits.max_steps {
            return Trace { steps, outcome: Outcome::OutOfSteps };
        }
        if pc as usize >= m.code.len() {
            // Running off the end of code stops execution.
            return Trace { steps, outcome: Outcome::Stopped };
        }
        let op = Opcode(m.code[pc as usize]);
        let mut step = Step {
            pc,
            op,
            height_before: m.stack.len() as u32,
            mem_reads: Vec::new(),
            mem_writes: Vec::new(),
            mload_value: None,
            freeptr_after: None,
        };
        let ctl = exec_one(&mut m, pc, op, &mut step);
        match ctl {
            Err(reason) => {
                // The faulting instruction is not recorded: it never
                // completed.
                return Trace { steps, outcome: Outcome::Aborted(reason) };
            }
            Ok(Ctl::Halt(outcome)) => {
                step.freeptr_after = None;
                steps.push(step);
                return Trace { steps, outcome };
            }
            Ok(next) => {
                let fmp = m.peek_word(FMP_ADDR);
                if fmp < prev_fmp {
                    steps.push(step);
                    return Trace { steps, outcome: Outcome::Aborted(AbortReason::FreePtrDecreased) };
                }
                prev_fmp = fmp;
                step.freeptr_after = Some(fmp);
                steps.push(step);
                pc = match next {
                    Ctl::Next(n) => n,
                    Ctl::Jump(t) => t,
                    Ctl::Halt(_) => unreachable!(),
                };
            }
        }
    }
}

fn exec_one(m: &mut Machine, pc: u32, op: Opcode, step: &mut Step) -> Result<Ctl, AbortReason> {
    let next = |size: u32| Ctl::Next(pc + size);
    match op.0 {
        0x00 => return Ok(Ctl::Halt(Outcome::Stopped)), // STOP
        0x01 => bin_op(m, |a, b| a.overflowing_add(b).0)?,
        0x02 => bin_op(m, |a, b| a.overflowing_mul(b).0)?,
        0x03 => bin_op(m, |a, b| a.overflowing_sub(b).0)?,
        0x04 => bin_op(m, |a, b| a.checked_div(b).unwrap_or_default())?,
        0x06 => bin_op(m, |a, b| a.checked_rem(b).unwrap_or_default())?,
        0x0A => bin_op(m, |a, b| a.overflowing_pow(b).0)?,
        0x10 => bin_op(m, |a, b| bool_word(a < b))?,
        0x11 => bin_op(m, |a, b| bool_word(a > b))?,
        0x14 => bin_op(m, |a, b| bool_word(a == b))?,
        0x15 => {
            let a = m.pop()?;
            m.push(bool_word(a.is_zero()))?;
        }
        0x16 => bin_op(m, |a, b| a & b)?,
        0x17 => bin_op(m, |a, b| a | b)?,
        0x18 => bin_op(m, |a, b| a ^ b)?,
        0x19 => {
            let a = m.pop()?;
            m.push(!a)?;
        }
        0x1A => bin_op(m, |i, x| {
            if i < U256::from(32) {
                U256::from(x.byte(31 - i.as_usize()))
            } else {
                U256::zero()
            }
        })?,
        0x1B => bin_op(m, |s, v| if s >= U256::from(256) { U256::zero() } else { v << s.as_usize() })?,
        0x1C => bin_op(m, |s, v| if s >= U256::from(256) { U256::zero() } else { v >> s.as_usize() })?,
        0x20 => {
            // KECCAK256
            let off = Machine::as_addr(m.pop()?)?;
            let len = Machine::as_addr(m.pop()?)?;
            m.expand(off, len)?;
            step.mem_reads.push((off, len));
            let mut out = [0u8; 32];
            let mut k = tiny_keccak::Keccak::v256();
            if len > 0 {
                k.update(&m.memory[off as usize..(off + len) as usize]);
            }
            k.finalize(&mut out);
            m.push(U256::from_big_endian(&out))?;
        }
        0x30 => m.push(U256::from(0xC0DEu64))?,            // ADDRESS
        0x33 => m.push(U256::from(0xCA11E2u64))?,          // CALLER
        0x34 => m.push(U256::zero())?,                     // CALLVALUE
        0x35 => {
            // CALLDATALOAD
            let off = m.pop()?;
            let mut buf = [0u8; 32];
            if off <= U256::from(u32::MAX) {
                let off = off.low_u64() as usize;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = m.calldata.get(off + i).copied().unwrap_or(0);
                }
            }
            m.push(U256::from_big_endian(&buf))?;
        }
        0x36 => m.push(U256::from(m.calldata.len()))?, // CALLDATASIZE
        0x37 => {
            // CALLDATACOPY
            let dest = Machine::as_addr(m.pop()?)?;
            let off = m.pop()?;
            let len = Machine::as_addr(m.pop()?)?;
            let data = padded_slice(m.calldata, off, len);
            m.write_bytes(dest, &data)?;
            step.mem_writes.push((dest, len));
        }
        0x38 => m.push(U256::from(m.code.len()))?, // CODESIZE
        0x39 => {
            // CODECOPY
            let dest = Machine::as_addr(m.pop()?)?;
            let off = m.pop()?;
            let len = Machine::as_addr(m.pop()?)?;
            let data = padded_slice(m.code, off, len);
            m.write_bytes(dest, &data)?;
            step.mem_writes.push((dest, len));
        }
        0x3D => m.push(U256::from(m.return_data.len()))?, // RETURNDATASIZE
        0x3E => {
            // RETURNDATACOPY aborts on out-of-bounds source ranges.
            let dest = Machine::as_addr(m.pop()?)?;
            let off = m.pop()?;
            let len = Machine::as_addr(m.pop()?)?;
            let end = off.checked_add(U256::from(len)).ok_or(AbortReason::ReturnDataOutOfBounds)?;
            if end > U256::from(m.return_data.len()) {
                return Err(AbortReason::ReturnDataOutOfBounds);
            }
            let off = off.low_u64() as usize;
            let data = m.return_data[off..off + len as usize].to_vec();
            m.write_bytes(dest, &data)?;
            step.mem_writes.push((dest, len));
        }
        0x50 => {
            m.pop()?;
        }
        0x51 => {
            // MLOAD
            let addr = Machine::as_addr(m.pop()?)?;
            let v = m.read_word(addr)?;
            step.mem_reads.push((addr, 32));
            step.mload_value = Some(v);
            m.push(v)?;
        }
        0x52 => {
            // MSTORE
            let addr = Machine::as_addr(m.pop()?)?;
            let v = m.pop()?;
            m.write_word(addr, v)?;
            step.mem_writes.push((addr, 32));
        }
        0x53 => {
            // MSTORE8
            let addr = Machine::as_addr(m.pop()?)?;
            let v = m.pop()?;
            m.expand(addr, 1)?;
            m.memory[addr as usize] = v.byte(0);
            step.mem_writes.push((addr, 1));
        }
        0x54 => {
            let k = m.pop()?;
            let v = m.storage.get(&k).copied().unwrap_or_default();
            m.push(v)?;
        }
        0x55 => {
            let k = m.pop()?;
            let v = m.pop()?;
            m.storage.insert(k, v);
        }
        0x56 => {
            // JUMP
            let t = m.pop()?;
            return jump_to(m, t);
        }
        0x57 => {
            // JUMPI
            let t = m.pop()?;
            let cond = m.pop()?;
            if !cond.is_zero() {
                return jump_to(m, t);
            }
            return Ok(next(1));
        }
        0x58 => m.push(U256::from(pc))?,                       // PC
        0x59 => m.push(U256::from(m.memory.len()))?,           // MSIZE
        0x5A => m.push(U256::from(0xFFFF_FFFFu64))?,           // GAS (not modeled)
        0x5B => {}                                             // JUMPDEST
        0x60..=0x7F => {
            let n = (op.0 - 0x5F) as usize;
            let start = pc as usize + 1;
            if start + n > m.code.len() {
                // Truncated PUSH executes as INVALID.
                return Ok(Ctl::Halt(Outcome::Aborted(AbortReason::InvalidInstruction)));
            }
            let v = U256::from_big_endian(&m.code[start..start + n]);
            m.push(v)?;
            return Ok(next(1 + n as u32));
        }
        0x80..=0x8F => {
            let n = (op.0 - 0x7F) as usize;
            if m.stack.len() < n {
                return Err(AbortReason::StackUnderflow);
            }
            let v = m.stack[m.stack.len() - n];
            m.push(v)?;
        }
        0x90..=0x9F => {
            let n = (op.0 - 0x8F) as usize;
            if m.stack.len() < n + 1 {
                return Err(AbortReason::StackUnderflow);
            }
            let len = m.stack.len();
            m.stack.swap(len - 1, len - 1 - n);
        }
        0xA0..=0xA4 => {
            // LOGn: reads the payload range, topics are popped.
            let topics = (op.0 - 0xA0) as usize;
            let off = Machine::as_addr(m.pop()?)?;
            let len = Machine::as_addr(m.pop()?)?;
            for _ in 0..topics {
                m.pop()?;
            }
            m.expand(off, len)?;
            step.mem_reads.push((off, len));
        }
        0xF1 | 0xF2 | 0xF4 | 0xFA => return call_family(m, pc, op, step),
        0xF3 | 0xFD => {
            // RETURN / REVERT
            let off = Machine::as_addr(m.pop()?)?;
            let len = Machine::as_addr(m.pop()?)?;
            m.expand(off, len)?;
            step.mem_reads.push((off, len));
            let data = if len == 0 {
                Vec::new()
            } else {
                m.memory[off as usize..(off + len) as usize].to_vec()
            };
            let outcome =
                if op.0 == 0xF3 { Outcome::Returned(data) } else { Outcome::Reverted(data) };
            return Ok(Ctl::Halt(outcome));
        }
        0xFF => {
            // SELFDESTRUCT
            m.pop()?;
            return Ok(Ctl::Halt(Outcome::SelfDestructed));
        }
        0xFE => return Ok(Ctl::Halt(Outcome::Aborted(AbortReason::InvalidInstruction))),
        b if !Opcode(b).is_assigned() => {
            return Ok(Ctl::Halt(Outcome::Aborted(AbortReason::InvalidInstruction)))
        }
        b => return Err(AbortReason::UnsupportedOpcode(b)),
    }
    Ok(next(1))
}

fn bin_op(m: &mut Machine, f: impl Fn(U256, U256) -> U256) -> Result<(), AbortReason> {
    let a = m.pop()?;
    let b = m.pop()?;
    m.push(f(a, b))
}

fn jump_to(m: &Machine, t: U256) -> Result<Ctl, AbortReason> {
    if t >= U256::from(m.code.len()) {
        return Err(AbortReason::BadJump);
    }
    let t = t.low_u64() as u32;
    if !m.jumpdests[t as usize] {
        return Err(AbortReason::BadJump);
    }
    Ok(Ctl::Jump(t))
}

fn call_family(m: &mut Machine, pc: u32, op: Opcode, step: &mut Step) -> Result<Ctl, AbortReason> {
    let _gas = m.pop()?;
    let callee = m.pop()?;
    if matches!(op, Opcode::CALL | Opcode::CALLCODE) {
        let _value = m.pop()?;
    }
    let in_off = Machine::as_addr(m.pop()?)?;
    let in_len = Machine::as_addr(m.pop()?)?;
    let out_off = Machine::as_addr(m.pop()?)?;
    let out_len = Machine::as_addr(m.pop()?)?;
    m.expand(in_off, in_len)?;
    step.mem_reads.push((in_off, in_len));
    let stub = m.stubs.lookup(callee).clone();
    m.return_data = stub.return_data.clone();
    let copy = stub.return_data.len().min(out_len as usize);
    m.write_bytes(out_off, &stub.return_data[..copy])?;
    step.mem_writes.push((out_off, copy as u64));
    m.push(bool_word(stub.success))?;
    Ok(Ctl::Next(pc + 1))
}

fn padded_slice(src: &[u8], off: U256, len: u64) -> Vec<u8> {
    let mut out = vec![0u8; len as usize];
    if off <= U256::from(u32::MAX) {
        let off = off.low_u64() as usize;
        for (i, b) in out.iter_mut().enumerate() {
            if let Some(v) = src.get(off + i) {
                *b = *v;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------
// Trace lifting and concrete slots
// ---------------------------------------------------------------------

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EmbedError {
    #[error("step {step}: pc 0x{pc:X} does not continue any CFG path")]
    PcMismatch { step: usize, pc: u32 },
    #[error("step {step}: concrete stack height {concrete} differs from analyzed height {analyzed} at pc 0x{pc:X}")]
    HeightMismatch { step: usize, pc: u32, concrete: u32, analyzed: u32 },
    #[error("empty CFG cannot embed a non-empty trace")]
    EmptyCfg,
}

/// Lift a trace onto the cloned CFG: returns the (pc, clone) point of
/// every step. Fails when the trace leaves the graph (a completeness bug)
/// or when a recorded stack height disagrees with the analyzed one.
pub fn embed_trace(trace: &Trace, cfg: &Cfg) -> Result<Vec<ProgramPoint>, EmbedError> {
    let mut out = Vec::with_capacity(trace.steps.len());
    if trace.steps.is_empty() {
        return Ok(out);
    }
    if cfg.nodes.is_empty() {
        return Err(EmbedError::EmptyCfg);
    }
    let mut node: NodeId = cfg.entry;
    let mut idx: usize = 0;
    for (k, step) in trace.steps.iter().enumerate() {
        if idx >= cfg.nodes[node].instrs.len() {
            let succ = cfg.nodes[node]
                .successors
                .iter()
                .copied()
                .find(|&s| cfg.nodes[s].instrs.first().map(|i| i.pc) == Some(step.pc));
            match succ {
                Some(s) => {
                    node = s;
                    idx = 0;
                }
                None => return Err(EmbedError::PcMismatch { step: k, pc: step.pc }),
            }
        }
        let at = cfg.nodes[node].instrs[idx];
        if at.pc != step.pc {
            return Err(EmbedError::PcMismatch { step: k, pc: step.pc });
        }
        if at.height != step.height_before {
            return Err(EmbedError::HeightMismatch {
                step: k,
                pc: step.pc,
                concrete: step.height_before,
                analyzed: at.height,
            });
        }
        out.push(ProgramPoint::new(step.pc, cfg.nodes[node].clone));
        idx += 1;
    }
    Ok(out)
}

/// A concrete slot: the distinct value loaded from the free memory
/// pointer, with the (cloned) points of every load observing it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcreteSlot {
    pub baseref: U256,
    /// Multiset: one entry per load step, in trace order.
    pub loading_points: Vec<ProgramPoint>,
    pub loading_steps: Vec<usize>,
}

impl ConcreteSlot {
    /// The abstraction of this slot: its loading points, de-duplicated.
    pub fn abstraction(&self) -> PointSet {
        self.loading_points.iter().copied().collect()
    }
}

/// True when a step concretely reads the free memory pointer: an MLOAD
/// whose address operand is 0x40.
pub fn is_fmp_load(step: &Step) -> bool {
    step.op == Opcode::MLOAD && step.mem_reads.first().map(|r| r.0) == Some(FMP_ADDR)
}

fn is_fmp_store(step: &Step) -> bool {
    step.op == Opcode::MSTORE && step.mem_writes.first().map(|w| w.0) == Some(FMP_ADDR)
}

/// Group the free-memory-pointer loads of a trace by loaded value; each
/// distinct value is one concrete slot. `embedding` must come from
/// `embed_trace` on the same trace.
pub fn concrete_slots(trace: &Trace, embedding: &[ProgramPoint]) -> Vec<ConcreteSlot> {
    let mut by_value: BTreeMap<U256, ConcreteSlot> = BTreeMap::new();
    for (k, step) in trace.steps.iter().enumerate() {
        if !is_fmp_load(step) {
            continue;
        }
        let v = step.mload_value.expect("MLOAD records its value");
        let slot = by_value.entry(v).or_insert_with(|| ConcreteSlot {
            baseref: v,
            loading_points: Vec::new(),
            loading_steps: Vec::new(),
        });
        slot.loading_points.push(embedding[k]);
        slot.loading_steps.push(k);
    }
    by_value.into_values().collect()
}

/// Attributes memory addresses to concrete slots as the trace unfolds. A
/// slot owns an address from the moment its baseref is first loaded; a
/// later allocation at a higher baseref takes over the tail of the
/// region (the transient call-argument bytes it physically reuses), so
/// attribution is by the greatest baseref loaded so far.
struct SlotTimeline<'s> {
    slots: &'s [ConcreteSlot],
    /// baseref -> (slot index, written end so far)
    live: BTreeMap<u64, (usize, u64)>,
}

impl<'s> SlotTimeline<'s> {
    fn new(slots: &'s [ConcreteSlot]) -> Self {
        SlotTimeline { slots, live: BTreeMap::new() }
    }

    /// Process the loads of step `k` before its checks and writes.
    fn observe_load(&mut self, step: &Step) {
        if !is_fmp_load(step) {
            return;
        }
        let v = step.mload_value.expect("MLOAD value");
        if v > U256::from(MEM_LIMIT) {
            return;
        }
        let base = v.low_u64();
        if let Some(idx) = self.slots.iter().position(|s| s.baseref == v) {
            self.live.entry(base).or_insert((idx, base));
        }
    }

    fn observe_writes(&mut self, step: &Step) {
        for &(a, l) in &step.mem_writes {
            if l == 0 {
                continue;
            }
            if let Some((_, entry)) = self.live.range_mut(..=a).next_back() {
                entry.1 = entry.1.max(a + l);
            }
        }
    }

    /// The slot owning `addr` right now: the greatest loaded baseref at
    /// or below it, when `addr` is its baseref or inside its written
    /// extent.
    fn covering(&self, addr: u64) -> Option<&'s ConcreteSlot> {
        let (&base, &(idx, end)) = self.live.range(..=addr).next_back()?;
        (addr == base || addr < end).then(|| &self.slots[idx])
    }
}

// ---------------------------------------------------------------------
// Checkers
// ---------------------------------------------------------------------

/// Outcome of one checker run over one or more traces.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub violations: Vec<String>,
}

impl CheckReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn violation(&mut self, msg: String) {
        self.violations.push(msg);
    }
}

/// Every concrete slot of the trace must be covered by some allocated
/// abstract slot: its loading points are a subset of the slot's set.
pub fn check_slot_soundness(trace: &Trace, cfg: &Cfg, table: &AbstractSlotTable) -> CheckReport {
    let mut report = CheckReport::default();
    if !trace.outcome.checkable() {
        report.skipped += 1;
        return report;
    }
    let embedding = match embed_trace(trace, cfg) {
        Ok(e) => e,
        Err(e) => {
            report.violation(format!("trace does not embed into the CFG: {e}"));
            return report;
        }
    };
    for slot in concrete_slots(trace, &embedding) {
        report.checked += 1;
        let alpha = slot.abstraction();
        let covered = table.iter().any(|(_, points)| alpha.is_subset(points));
        if !covered {
            report.violation(format!(
                "concrete slot {:#x} loaded at {:?} is covered by no abstract slot",
                slot.baseref, alpha
            ));
        }
    }
    report
}

/// Every concrete memory access through a slot must be predicted by the
/// access analysis at the operand's stack position, and every concrete
/// free-memory-pointer load must be predicted by the slot table at its
/// point.
pub fn check_access_soundness(
    trace: &Trace,
    cfg: &Cfg,
    table: &AbstractSlotTable,
    sol: &Solution<AccessState>,
) -> CheckReport {
    let mut report = CheckReport::default();
    if !trace.outcome.checkable() {
        report.skipped += 1;
        return report;
    }
    let embedding = match embed_trace(trace, cfg) {
        Ok(e) => e,
        Err(e) => {
            report.violation(format!("trace does not embed into the CFG: {e}"));
            return report;
        }
    };
    let slots = concrete_slots(trace, &embedding);
    let mut timeline = SlotTimeline::new(&slots);

    for (k, step) in trace.steps.iter().enumerate() {
        let pp = embedding[k];
        timeline.observe_load(step);
        if is_fmp_load(step) {
            // The loaded baseref must be predicted at this very point.
            report.checked += 1;
            let v = step.mload_value.expect("MLOAD value");
            let slot = slots.iter().find(|s| s.baseref == v).expect("slot exists");
            let alpha = slot.abstraction();
            let predicted =
                table.get_slots(pp).iter().any(|id| alpha.is_subset(table.points(*id)));
            if !predicted {
                report.violation(format!(
                    "free-pointer load at {pp} observes slot {:#x} not in get_slots",
                    v
                ));
            }
            continue;
        }
        if !is_fmp_store(step) {
            if let Some(pre) = sol.pre(pp) {
                let t = step.height_before;
                let checks = [
                    step.op.mem_read_pos().zip(step.mem_reads.first().copied()),
                    step.op.mem_write_pos().zip(step.mem_writes.first().copied()),
                ];
                for (depth, (addr, _len)) in checks.into_iter().flatten() {
                    let Some(slot) = timeline.covering(addr) else { continue };
                    report.checked += 1;
                    let alpha = slot.abstraction();
                    let pos = t - depth as u32;
                    let predicted =
                        pre.stack(pos).iter().any(|id| alpha.is_subset(table.points(*id)));
                    if !predicted {
                        report.violation(format!(
                            "{} at {pp} touches slot {:#x} via position {pos}, not predicted by {:?}",
                            step.op,
                            slot.baseref,
                            pre.stack(pos)
                        ));
                    }
                }
            }
        }
        timeline.observe_writes(step);
    }
    report
}

/// Memory effects of a trace with each range attributed to the concrete
/// slot owning its start address at the time it happened.
struct AttributedEffects {
    /// Per step: (addr, len, owning slot index).
    reads: Vec<Vec<(u64, u64, Option<usize>)>>,
    writes: Vec<Vec<(u64, u64, Option<usize>)>>,
}

fn attribute_effects(trace: &Trace, slots: &[ConcreteSlot]) -> AttributedEffects {
    let mut timeline = SlotTimeline::new(slots);
    let mut out = AttributedEffects {
        reads: Vec::with_capacity(trace.steps.len()),
        writes: Vec::with_capacity(trace.steps.len()),
    };
    let idx_of = |s: Option<&ConcreteSlot>, slots: &[ConcreteSlot]| {
        s.map(|s| slots.iter().position(|t| t.baseref == s.baseref).expect("slot present"))
    };
    for step in &trace.steps {
        timeline.observe_load(step);
        out.reads.push(
            step.mem_reads
                .iter()
                .map(|&(a, l)| (a, l, idx_of(timeline.covering(a), slots)))
                .collect(),
        );
        out.writes.push(
            step.mem_writes
                .iter()
                .map(|&(a, l)| (a, l, idx_of(timeline.covering(a), slots)))
                .collect(),
        );
        timeline.observe_writes(step);
    }
    out
}

/// For every reported needless write, no execution may read, through the
/// same slot, any byte of the written range after the write executed.
/// (A later allocation may physically reuse transient bytes; reads of
/// that new slot are not reads of the old one.)
pub fn check_needless_soundness(
    traces: &[Trace],
    cfg: &Cfg,
    table: &AbstractSlotTable,
    findings: &[Finding],
) -> CheckReport {
    let mut report = CheckReport::default();
    for trace in traces {
        if !trace.outcome.checkable() {
            report.skipped += 1;
            continue;
        }
        let embedding = match embed_trace(trace, cfg) {
            Ok(e) => e,
            Err(e) => {
                report.violation(format!("trace does not embed into the CFG: {e}"));
                continue;
            }
        };
        let slots = concrete_slots(trace, &embedding);
        let effects = attribute_effects(trace, &slots);
        for finding in findings {
            for (k, pp) in embedding.iter().enumerate() {
                if *pp != finding.point {
                    continue;
                }
                for &(a, l, owner) in &effects.writes[k] {
                    let Some(owner) = owner else { continue };
                    if l == 0 {
                        continue;
                    }
                    // Only writes landing in a concretization of the
                    // flagged slot are claims of this finding.
                    if !slots[owner].abstraction().is_subset(table.points(finding.slot)) {
                        continue;
                    }
                    report.checked += 1;
                    for (j, later) in effects.reads.iter().enumerate().skip(k + 1) {
                        for &(ra, rl, rowner) in later {
                            if rowner == Some(owner) && ranges_overlap(a, l, ra, rl) {
                                report.violation(format!(
                                    "write {} at step {k} ({}) is read at step {j} (pc 0x{:X})",
                                    finding.slot, finding.point, trace.steps[j].pc
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    report
}

fn ranges_overlap(a: u64, al: u64, b: u64, bl: u64) -> bool {
    a < b.saturating_add(bl) && b < a.saturating_add(al)
}
