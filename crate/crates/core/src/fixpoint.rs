//! Generic worklist solver for forward dataflow equation systems over the
//! cloned CFG, parameterized by an abstract domain.

use crate::asm::{FmpAccess, Instruction};
use crate::cfg::{Cfg, ProgramPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

/// An abstract domain: a bounded join-semilattice with a monotone
/// transfer function. `bottom` doubles as the entry state.
pub trait Domain {
    type Value: Clone + PartialEq + std::fmt::Debug;

    fn bottom(&self) -> Self::Value;
    fn join(&self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn leq(&self, a: &Self::Value, b: &Self::Value) -> bool;
    fn transfer(&self, instr: &InstrCtx<'_>, state: &Self::Value) -> Self::Value;
}

/// What a transfer function gets to see about one instruction occurrence.
pub struct InstrCtx<'a> {
    pub pp: ProgramPoint,
    pub instr: &'a Instruction,
    /// Stack height before the instruction (the access analysis' top(pp)).
    pub height: u32,
    /// Free-memory-pointer access proven at this clone.
    pub fused: Option<FmpAccess>,
}

/// Per-program-point solution: `pre` is the state before the instruction,
/// `post` the state after it.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution<V> {
    pub pre: BTreeMap<ProgramPoint, V>,
    pub post: BTreeMap<ProgramPoint, V>,
    pub stats: SolveStats,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub node_visits: u64,
}

impl<V> Solution<V> {
    pub fn pre(&self, pp: ProgramPoint) -> Option<&V> {
        self.pre.get(&pp)
    }

    pub fn post(&self, pp: ProgramPoint) -> Option<&V> {
        self.post.get(&pp)
    }
}

/// Worklist scheduling. The least fixpoint is unique, so any order yields
/// the same solution; `Shuffled` exists to assert exactly that in tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveOrder {
    Fifo,
    Shuffled(u64),
}

#[derive(Clone, Copy, Debug)]
pub struct SolveLimits {
    pub max_node_visits: u64,
    pub deadline: Option<Instant>,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits { max_node_visits: 1_000_000, deadline: None }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("iteration budget exceeded after {0} node visits")]
    IterationBudgetExceeded(u64),
    #[error("non-monotone transfer function detected at node {0}")]
    NonMonotoneTransfer(usize),
    #[error("analysis deadline exceeded during fixpoint solving")]
    Timeout,
}

pub fn solve<D: Domain>(cfg: &Cfg, domain: &D) -> Result<Solution<D::Value>, SolveError> {
    solve_with(cfg, domain, SolveOrder::Fifo, &SolveLimits::default())
}

pub fn solve_with<D: Domain>(
    cfg: &Cfg,
    domain: &D,
    order: SolveOrder,
    limits: &SolveLimits,
) -> Result<Solution<D::Value>, SolveError> {
    let n = cfg.nodes.len();
    let mut entry: Vec<D::Value> = (0..n).map(|_| domain.bottom()).collect();
    let mut exits: Vec<Option<D::Value>> = vec![None; n];
    let mut list: std::collections::VecDeque<usize> = (0..n).collect();
    let mut queued = vec![true; n];
    let mut rng = match order {
        SolveOrder::Fifo => None,
        SolveOrder::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut visits = 0u64;

    while !list.is_empty() {
        let id = match rng.as_mut() {
            None => list.pop_front().unwrap(),
            Some(r) => {
                let k = r.gen_range(0..list.len());
                list.swap_remove_back(k).unwrap()
            }
        };
        queued[id] = false;
        visits += 1;
        if visits > limits.max_node_visits {
            return Err(SolveError::IterationBudgetExceeded(visits));
        }
        if visits % 1024 == 0 {
            if let Some(dl) = limits.deadline {
                if Instant::now() >= dl {
                    return Err(SolveError::Timeout);
                }
            }
        }

        let out = eval_node(cfg, domain, id, entry[id].clone(), None);
        if cfg!(debug_assertions) {
            if let Some(prev) = &exits[id] {
                if !domain.leq(prev, &out) {
                    return Err(SolveError::NonMonotoneTransfer(id));
                }
            }
            exits[id] = Some(out.clone());
        }
        for &s in &cfg.nodes[id].successors {
            let joined = domain.join(&entry[s], &out);
            if !domain.leq(&joined, &entry[s]) {
                entry[s] = joined;
                if !queued[s] {
                    queued[s] = true;
                    list.push_back(s);
                }
            }
        }
    }

    // Expand per-instruction states from the converged block entries.
    let mut pre = BTreeMap::new();
    let mut post = BTreeMap::new();
    for id in 0..n {
        eval_node(cfg, domain, id, entry[id].clone(), Some((&mut pre, &mut post)));
    }
    Ok(Solution { pre, post, stats: SolveStats { node_visits: visits } })
}

type StateSink<'a, V> = (&'a mut BTreeMap<ProgramPoint, V>, &'a mut BTreeMap<ProgramPoint, V>);

fn eval_node<D: Domain>(
    cfg: &Cfg,
    domain: &D,
    id: usize,
    entry: D::Value,
    mut record: Option<StateSink<'_, D::Value>>,
) -> D::Value {
    let node = &cfg.nodes[id];
    let dis = cfg.dis();
    let mut state = entry;
    for at in &node.instrs {
        let pp = ProgramPoint::new(at.pc, node.clone);
        let ctx = InstrCtx {
            pp,
            instr: &dis.instrs[at.dis_idx as usize],
            height: at.height,
            fused: at.fused,
        };
        let next = domain.transfer(&ctx, &state);
        if let Some((pre, post)) = record.as_mut() {
            pre.insert(pp, state.clone());
            post.insert(pp, next.clone());
        }
        state = next;
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{disassemble, fuse_fmp_accesses};
    use crate::cfg::CfgLimits;
    use crate::opcode::Opcode;

    /// Counts instructions seen on some path: value = max over paths of
    /// instructions executed (capped). A tiny monotone domain.
    struct CountDomain {
        cap: u32,
    }

    impl Domain for CountDomain {
        type Value = u32;

        fn bottom(&self) -> u32 {
            0
        }

        fn join(&self, a: &u32, b: &u32) -> u32 {
            *a.max(b)
        }

        fn leq(&self, a: &u32, b: &u32) -> bool {
            a <= b
        }

        fn transfer(&self, _i: &InstrCtx<'_>, s: &u32) -> u32 {
            (*s + 1).min(self.cap)
        }
    }

    fn cfg_of(code: &[u8]) -> Cfg {
        let dis = fuse_fmp_accesses(disassemble(code));
        Cfg::build(dis, &CfgLimits::default()).unwrap()
    }

    #[test]
    fn single_block_one_pass() {
        // PUSH1 1; POP; STOP
        let cfg = cfg_of(&[0x60, 0x01, 0x50, 0x00]);
        let sol = solve(&cfg, &CountDomain { cap: 100 }).unwrap();
        assert_eq!(sol.pre[&ProgramPoint::new(0, 0)], 0);
        assert_eq!(sol.post[&ProgramPoint::new(0, 0)], 1);
        assert_eq!(sol.post[&ProgramPoint::new(3, 0)], 3);
    }

    #[test]
    fn loop_reaches_fixpoint_and_orders_agree() {
        // entry: PUSH1 0; loop: JUMPDEST; PUSH1 1; ADD; DUP1; PUSH loop; JUMPI; STOP
        let mut b = crate::builder::ProgramBuilder::new();
        let head = b.label();
        b.push(0u64);
        b.dest(head);
        b.push(1u64).op(Opcode::ADD).op(Opcode::DUP1);
        b.jumpi(head);
        b.op(Opcode::STOP);
        let cfg = cfg_of(&b.build());
        let d = CountDomain { cap: 7 };
        let fifo = solve(&cfg, &d).unwrap();
        // The loop head sees the capped count eventually.
        for seed in 0..5 {
            let shuffled =
                solve_with(&cfg, &d, SolveOrder::Shuffled(seed), &SolveLimits::default()).unwrap();
            assert_eq!(fifo.pre, shuffled.pre);
            assert_eq!(fifo.post, shuffled.post);
        }
        // Fixpoint: re-applying the transfer to every pre state gives the
        // recorded post state.
        for (pp, pre) in &fifo.pre {
            let (instr, at) = cfg.instr(*pp).unwrap();
            let ctx = InstrCtx { pp: *pp, instr, height: at.height, fused: at.fused };
            assert_eq!(d.transfer(&ctx, pre), fifo.post[pp]);
        }
    }

    #[test]
    fn iteration_budget_trips() {
        let mut b = crate::builder::ProgramBuilder::new();
        let head = b.label();
        b.push(0u64);
        b.dest(head);
        b.push(1u64).op(Opcode::ADD).op(Opcode::DUP1);
        b.jumpi(head);
        b.op(Opcode::STOP);
        let cfg = cfg_of(&b.build());
        let d = CountDomain { cap: u32::MAX };
        let err = solve_with(
            &cfg,
            &d,
            SolveOrder::Fifo,
            &SolveLimits { max_node_visits: 16, deadline: None },
        )
        .unwrap_err();
        assert!(matches!(err, SolveError::IterationBudgetExceeded(_)));
    }

    #[test]
    fn empty_cfg_yields_empty_solution() {
        let cfg = cfg_of(&[]);
        let sol = solve(&cfg, &CountDomain { cap: 1 }).unwrap();
        assert!(sol.pre.is_empty());
        assert!(sol.post.is_empty());
    }
}
