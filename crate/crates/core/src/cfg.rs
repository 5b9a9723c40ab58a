//! Context-sensitive control-flow graph reconstruction.
//!
//! Basic blocks are found with the usual leader rules, jump targets are
//! resolved by per-block symbolic execution of the operand stack (exact
//! constants from PUSH, permutation through DUP/SWAP, everything else
//! loses constants), and a block reached under different contexts is
//! cloned per context. A context is the pair (entry stack height, entry
//! constants restricted to values that are JUMPDEST pcs or 0x40); the
//! restriction separates clones that matter for jump resolution and
//! free-memory-pointer recognition while keeping clone counts bounded.

use crate::asm::{Disassembly, FmpAccess, Instruction};
use crate::opcode::Opcode;
use primitive_types::U256;
use std::collections::{BTreeMap, VecDeque};
use std::sync::OnceLock;
use std::time::Instant;

pub type NodeId = usize;

/// An instruction occurrence in the cloned CFG: byte offset plus the
/// clone index of the surrounding block (0 for the first context).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProgramPoint {
    pub pc: u32,
    pub clone: u32,
}

impl ProgramPoint {
    pub fn new(pc: u32, clone: u32) -> Self {
        ProgramPoint { pc, clone }
    }
}

impl std::fmt::Display for ProgramPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.clone == 0 {
            write!(f, "0x{:X}", self.pc)
        } else {
            write!(f, "0x{:X}_{}", self.pc, self.clone)
        }
    }
}

impl std::fmt::Debug for ProgramPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self}")
    }
}

/// A basic block of the (uncloned) disassembly: a leader pc plus the
/// half-open range of instruction indices it spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub leader: u32,
    pub start: usize,
    pub end: usize,
}

/// Compute basic blocks. Leaders are pc 0, every JUMPDEST, and every
/// instruction following a JUMP/JUMPI or halting instruction.
pub fn build_blocks(dis: &Disassembly) -> Vec<Block> {
    let n = dis.instrs.len();
    if n == 0 {
        return Vec::new();
    }
    let mut leader = vec![false; n];
    leader[0] = true;
    for (i, ins) in dis.instrs.iter().enumerate() {
        if ins.op == Opcode::JUMPDEST && !ins.truncated {
            leader[i] = true;
        }
        if (ins.is_terminator() || ins.op == Opcode::JUMPI) && i + 1 < n {
            leader[i + 1] = true;
        }
    }
    let mut blocks = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || leader[i] {
            blocks.push(Block { leader: dis.instrs[start].pc, start, end: i });
            start = i;
        }
    }
    blocks
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct InstrAt {
    pub pc: u32,
    pub dis_idx: u32,
    /// Stack height (element count) before executing this instruction.
    pub height: u32,
    /// Free-memory-pointer access proven for this clone.
    pub fused: Option<FmpAccess>,
}

#[derive(Clone, Debug)]
pub struct CfgNode {
    pub entry_pc: u32,
    pub clone: u32,
    pub instrs: Vec<InstrAt>,
    pub successors: Vec<NodeId>,
    pub entry_height: u32,
    /// Constants known at block entry, keyed by 0-based stack index from
    /// the bottom; restricted to jump targets and 0x40.
    pub entry_constants: BTreeMap<u32, U256>,
}

impl CfgNode {
    pub fn point(&self, idx: usize) -> ProgramPoint {
        ProgramPoint::new(self.instrs[idx].pc, self.clone)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CfgError {
    #[error("unresolved jump target at pc 0x{pc:X}")]
    UnresolvedJump { pc: u32 },
    #[error("clone budget ({budget}) exceeded for block at pc 0x{pc:X}")]
    CloneBudgetExceeded { pc: u32, budget: u32 },
    #[error("analysis deadline exceeded during CFG construction")]
    Timeout,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown program point {0}")]
pub struct UnknownProgramPoint(pub ProgramPoint);

#[derive(Clone, Copy, Debug)]
pub struct CfgLimits {
    pub max_clones: u32,
    pub deadline: Option<Instant>,
}

impl Default for CfgLimits {
    fn default() -> Self {
        CfgLimits { max_clones: 64, deadline: None }
    }
}

pub struct Cfg {
    dis: Disassembly,
    pub nodes: Vec<CfgNode>,
    pub entry: NodeId,
    block_count: usize,
    index: BTreeMap<ProgramPoint, (NodeId, u32)>,
    reach: OnceLock<Vec<BitSet>>,
}

impl std::fmt::Debug for Cfg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cfg")
            .field("blocks", &self.block_count)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

impl Cfg {
    /// Build the context-sensitive CFG from a fused disassembly.
    pub fn build(dis: Disassembly, limits: &CfgLimits) -> Result<Cfg, CfgError> {
        Builder::new(dis, limits).run()
    }

    pub fn dis(&self) -> &Disassembly {
        &self.dis
    }

    /// Number of basic blocks before cloning.
    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn locate(&self, pp: ProgramPoint) -> Result<(NodeId, usize), UnknownProgramPoint> {
        self.index
            .get(&pp)
            .map(|&(n, i)| (n, i as usize))
            .ok_or(UnknownProgramPoint(pp))
    }

    pub fn instr(&self, pp: ProgramPoint) -> Result<(&Instruction, InstrAt), UnknownProgramPoint> {
        let (n, i) = self.locate(pp)?;
        let at = self.nodes[n].instrs[i];
        Ok((&self.dis.instrs[at.dis_idx as usize], at))
    }

    /// Stack height before executing `pp`. This is also the 1-based
    /// position of the topmost stack element used by the access analysis.
    pub fn top(&self, pp: ProgramPoint) -> Result<u32, UnknownProgramPoint> {
        Ok(self.instr(pp)?.1.height)
    }

    pub fn fused(&self, pp: ProgramPoint) -> Result<Option<FmpAccess>, UnknownProgramPoint> {
        Ok(self.instr(pp)?.1.fused)
    }

    /// All program points in deterministic order (node id, then position).
    pub fn program_points(&self) -> impl Iterator<Item = ProgramPoint> + '_ {
        self.nodes
            .iter()
            .flat_map(|n| n.instrs.iter().map(move |i| ProgramPoint::new(i.pc, n.clone)))
    }

    /// True when `q` strictly follows `p` inside the same node, or `q`'s
    /// node can be reached from `p`'s node through one or more edges.
    /// `reachable(p, p)` holds only through a cycle.
    pub fn reachable(&self, p: ProgramPoint, q: ProgramPoint) -> Result<bool, UnknownProgramPoint> {
        let (np, ip) = self.locate(p)?;
        let (nq, iq) = self.locate(q)?;
        if np == nq && iq > ip {
            return Ok(true);
        }
        Ok(self.node_reach()[np].get(nq))
    }

    /// Transitive successor sets at node granularity (>= 1 edge).
    fn node_reach(&self) -> &[BitSet] {
        self.reach.get_or_init(|| {
            let n = self.nodes.len();
            let mut preds: Vec<Vec<NodeId>> = vec![Vec::new(); n];
            for (id, node) in self.nodes.iter().enumerate() {
                for &s in &node.successors {
                    preds[s].push(id);
                }
            }
            let mut reach: Vec<BitSet> = (0..n)
                .map(|id| {
                    let mut b = BitSet::new(n);
                    for &s in &self.nodes[id].successors {
                        b.set(s);
                    }
                    b
                })
                .collect();
            let mut queue: VecDeque<NodeId> = (0..n).collect();
            let mut queued = vec![true; n];
            while let Some(id) = queue.pop_front() {
                queued[id] = false;
                let mut acc = reach[id].clone();
                for &s in &self.nodes[id].successors {
                    acc.union_with(&reach[s]);
                }
                if acc != reach[id] {
                    reach[id] = acc;
                    for &p in &preds[id] {
                        if !queued[p] {
                            queued[p] = true;
                            queue.push_back(p);
                        }
                    }
                }
            }
            reach
        })
    }

    /// DOT rendering of the cloned graph, for debugging.
    pub fn to_dot(&self) -> String {
        use std::fmt::Write;
        let mut s = String::from("digraph cfg {\n  node [shape=box fontname=monospace];\n");
        for (id, n) in self.nodes.iter().enumerate() {
            let label = ProgramPoint::new(n.entry_pc, n.clone);
            let _ = writeln!(s, "  n{id} [label=\"{label} h={}\"];", n.entry_height);
        }
        for (id, n) in self.nodes.iter().enumerate() {
            for &t in &n.successors {
                let _ = writeln!(s, "  n{id} -> n{t};");
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Dense bit set over node ids.
#[derive(Clone, PartialEq, Eq)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn new(bits: usize) -> Self {
        BitSet { words: vec![0; bits.div_ceil(64)] }
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn union_with(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }
}

type CtxKey = (usize, u32, Vec<(u32, U256)>);

struct Builder<'l> {
    dis: Disassembly,
    blocks: Vec<Block>,
    block_at: BTreeMap<u32, usize>,
    jumpdest_block: BTreeMap<u32, usize>,
    limits: &'l CfgLimits,
    nodes: Vec<CfgNode>,
    visited: BTreeMap<CtxKey, NodeId>,
    clone_counts: Vec<u32>,
    pending: VecDeque<(NodeId, usize, Vec<Option<U256>>)>,
}

const FMP: u64 = 0x40;
const MAX_STACK: usize = 1024;

impl<'l> Builder<'l> {
    fn new(dis: Disassembly, limits: &'l CfgLimits) -> Self {
        let blocks = build_blocks(&dis);
        let mut block_at = BTreeMap::new();
        let mut jumpdest_block = BTreeMap::new();
        for (i, b) in blocks.iter().enumerate() {
            block_at.insert(b.leader, i);
            let first = &dis.instrs[b.start];
            if first.op == Opcode::JUMPDEST && !first.truncated {
                jumpdest_block.insert(b.leader, i);
            }
        }
        let clone_counts = vec![0; blocks.len()];
        Builder {
            dis,
            blocks,
            block_at,
            jumpdest_block,
            limits,
            nodes: Vec::new(),
            visited: BTreeMap::new(),
            clone_counts,
            pending: VecDeque::new(),
        }
    }

    fn run(mut self) -> Result<Cfg, CfgError> {
        if !self.blocks.is_empty() {
            self.intern(0, &[])?;
        }
        while let Some((id, block_idx, stack)) = self.pending.pop_front() {
            if let Some(dl) = self.limits.deadline {
                if Instant::now() >= dl {
                    return Err(CfgError::Timeout);
                }
            }
            self.expand(id, block_idx, stack)?;
        }
        let mut index = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            for (i, at) in node.instrs.iter().enumerate() {
                index.insert(ProgramPoint::new(at.pc, node.clone), (id, i as u32));
            }
        }
        Ok(Cfg {
            dis: self.dis,
            nodes: self.nodes,
            entry: 0,
            block_count: self.blocks.len(),
            index,
            reach: OnceLock::new(),
        })
    }

    /// Restrict a symbolic stack to the context-relevant constants.
    fn restrict(&self, stack: &[Option<U256>]) -> Vec<(u32, U256)> {
        stack
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                let keep = v == U256::from(FMP)
                    || (v < U256::from(u32::MAX)
                        && self.jumpdest_block.contains_key(&(v.low_u64() as u32)));
                keep.then_some((i as u32, v))
            })
            .collect()
    }

    fn intern(&mut self, block_idx: usize, stack: &[Option<U256>]) -> Result<NodeId, CfgError> {
        let consts = self.restrict(stack);
        let key = (block_idx, stack.len() as u32, consts.clone());
        if let Some(&id) = self.visited.get(&key) {
            return Ok(id);
        }
        let clone = self.clone_counts[block_idx];
        if clone >= self.limits.max_clones {
            return Err(CfgError::CloneBudgetExceeded {
                pc: self.blocks[block_idx].leader,
                budget: self.limits.max_clones,
            });
        }
        self.clone_counts[block_idx] += 1;
        let id = self.nodes.len();
        // The node body is expanded from the restricted stack so that all
        // contexts merged into this clone agree on what it sees.
        let mut entry_stack = vec![None; stack.len()];
        for &(pos, v) in &consts {
            entry_stack[pos as usize] = Some(v);
        }
        self.nodes.push(CfgNode {
            entry_pc: self.blocks[block_idx].leader,
            clone,
            instrs: Vec::new(),
            successors: Vec::new(),
            entry_height: stack.len() as u32,
            entry_constants: consts.iter().copied().collect(),
        });
        self.visited.insert(key, id);
        self.pending.push_back((id, block_idx, entry_stack));
        Ok(id)
    }

    fn expand(
        &mut self,
        id: NodeId,
        block_idx: usize,
        mut stack: Vec<Option<U256>>,
    ) -> Result<(), CfgError> {
        let block = self.blocks[block_idx];
        let fmp = U256::from(FMP);
        let mut instrs = Vec::with_capacity(block.end - block.start);
        let mut succs: Vec<NodeId> = Vec::new();
        for idx in block.start..block.end {
            let ins = self.dis.instrs[idx].clone();
            let height = stack.len() as u32;
            if stack.len() < ins.min_depth() {
                // The EVM aborts on underflow; the faulting instruction
                // never executes, so it gets no program point.
                succs.clear();
                self.finish(id, instrs, succs);
                return Ok(());
            }
            let fused = match ins.op {
                Opcode::MLOAD if !ins.truncated && stack.last() == Some(&Some(fmp)) => {
                    Some(FmpAccess::Load)
                }
                Opcode::MSTORE if !ins.truncated && stack.last() == Some(&Some(fmp)) => {
                    Some(FmpAccess::Store)
                }
                _ => ins.fused,
            };
            instrs.push(InstrAt { pc: ins.pc, dis_idx: idx as u32, height, fused });

            if ins.op == Opcode::JUMP && !ins.truncated {
                let target = stack.pop().flatten();
                let Some(t) = target else {
                    return Err(CfgError::UnresolvedJump { pc: ins.pc });
                };
                if let Some(b) = self.lookup_jumpdest(t) {
                    succs.push(self.intern(b, &stack)?);
                }
                // A jump to a non-JUMPDEST aborts at runtime: no successor.
                self.finish(id, instrs, succs);
                return Ok(());
            }
            if ins.op == Opcode::JUMPI && !ins.truncated {
                let target = stack.pop().flatten();
                stack.pop();
                let Some(t) = target else {
                    return Err(CfgError::UnresolvedJump { pc: ins.pc });
                };
                if let Some(b) = self.lookup_jumpdest(t) {
                    succs.push(self.intern(b, &stack)?);
                }
                let next_pc = ins.pc + ins.size() as u32;
                if let Some(&b) = self.block_at.get(&next_pc) {
                    let s = self.intern(b, &stack)?;
                    if !succs.contains(&s) {
                        succs.push(s);
                    }
                }
                self.finish(id, instrs, succs);
                return Ok(());
            }
            if ins.is_halt() {
                self.finish(id, instrs, succs);
                return Ok(());
            }

            // Ordinary symbolic effect.
            if let Some(v) = ins.push_value() {
                stack.push(Some(v));
            } else if let Some(n) = ins.op.dup_depth() {
                let v = stack[stack.len() - n];
                stack.push(v);
            } else if let Some(n) = ins.op.swap_depth() {
                let len = stack.len();
                stack.swap(len - 1, len - 1 - n);
            } else {
                for _ in 0..ins.pops() {
                    stack.pop();
                }
                for _ in 0..ins.pushes() {
                    stack.push(None);
                }
            }
            if stack.len() > MAX_STACK {
                succs.clear();
                self.finish(id, instrs, succs);
                return Ok(());
            }
        }
        // Fell off the block: fall through to the next leader, or stop at
        // the end of code.
        let last = self.dis.instrs[block.end - 1].clone();
        let next_pc = last.pc + last.size() as u32;
        if let Some(&b) = self.block_at.get(&next_pc) {
            succs.push(self.intern(b, &stack)?);
        }
        self.finish(id, instrs, succs);
        Ok(())
    }

    fn lookup_jumpdest(&self, t: U256) -> Option<usize> {
        if t >= U256::from(u32::MAX) {
            return None;
        }
        self.jumpdest_block.get(&(t.low_u64() as u32)).copied()
    }

    fn finish(&mut self, id: NodeId, instrs: Vec<InstrAt>, succs: Vec<NodeId>) {
        self.nodes[id].instrs = instrs;
        self.nodes[id].successors = succs;
    }
}
