//! Random generator of small contracts following the compiler's
//! allocation idiom: slots are reserved by reading the free memory
//! pointer, optionally kept transient across an external call, written
//! and read through baseref plus constant offsets, and closed by pushing
//! the pointer forward or by ending execution. Used to drive the
//! differential soundness suite.

use crate::builder::ProgramBuilder;
use crate::opcode::Opcode;
use crate::oracle::{CallStub, StubTable};
use primitive_types::U256;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Generated {
    pub seed: u64,
    pub code: Vec<u8>,
    pub calldata: Vec<u8>,
    pub stubs: StubTable,
}

/// Stub callees available to generated programs. Return data is at least
/// one word so that closing a slot with RETURNDATASIZE strictly advances
/// the free memory pointer.
fn gen_stubs() -> StubTable {
    let mut stubs = StubTable {
        default: CallStub { success: true, return_data: vec![0x33; 32] },
        ..StubTable::default()
    };
    stubs.by_callee.insert(U256::from(0xCA11u64), CallStub { success: true, return_data: vec![0x44; 32] });
    stubs.by_callee.insert(U256::from(0xCA12u64), CallStub { success: true, return_data: vec![0x55; 64] });
    stubs
}

const CALLEES: [u64; 3] = [0xCA11, 0xCA12, 0xC0FFEE];

/// What the generator knows about one stack entry.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Entry {
    /// Baseref of allocation `usize`.
    Ref(usize),
    /// Anything else.
    Junk,
}

#[derive(Clone, Copy, Debug)]
struct Alloc {
    size_words: u64,
    permanent: bool,
}

struct Gen {
    b: ProgramBuilder,
    rng: ChaCha8Rng,
    stack: Vec<Entry>,
    allocs: Vec<Alloc>,
    /// Allocation whose baseref has been read but whose reservation has
    /// not been made permanent yet.
    open_transient: Option<usize>,
}

impl Gen {
    /// 1-based depth from the top for DUPn, if reachable.
    fn depth_of(&self, alloc: usize) -> Option<usize> {
        self.stack
            .iter()
            .rev()
            .position(|e| *e == Entry::Ref(alloc))
            .map(|d| d + 1)
            .filter(|d| *d <= 16)
    }

    fn reachable_allocs(&self) -> Vec<usize> {
        (0..self.allocs.len()).filter(|a| self.depth_of(*a).is_some()).collect()
    }

    fn dup_ref(&mut self, alloc: usize) {
        let d = self.depth_of(alloc).expect("caller checked reachability");
        self.b.op(Opcode(0x80 + (d as u8 - 1)));
        self.stack.push(Entry::Ref(alloc));
    }

    fn push_junk(&mut self, v: u64) {
        self.b.push(v);
        self.stack.push(Entry::Junk);
    }

    /// Reserve a slot. While some slot is transient, reading the pointer
    /// again observes the same baseref, so the read joins that slot.
    fn alloc(&mut self, size_words: u64, permanent: bool) {
        self.b.push(0x40u64).op(Opcode::MLOAD);
        let idx = match self.open_transient {
            Some(t) => t,
            None => {
                self.allocs.push(Alloc { size_words, permanent: false });
                self.allocs.len() - 1
            }
        };
        self.stack.push(Entry::Ref(idx));
        if permanent {
            self.b.op(Opcode::DUP1);
            self.b.push(self.allocs[idx].size_words.max(size_words) * 32);
            self.b.op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
            self.allocs[idx].permanent = true;
            self.open_transient = None;
        } else {
            self.open_transient = Some(idx);
        }
    }

    /// Close the open transient slot by adding the actual return data
    /// size to its baseref (the external-call pattern). The stubs return
    /// at least one word, so the reservation covers exactly one word that
    /// later accesses may rely on; anything written deeper was scratch.
    fn close_transient_with_rds(&mut self, alloc: usize) {
        self.dup_ref(alloc);
        self.b.op(Opcode::RETURNDATASIZE).op(Opcode::ADD);
        self.b.push(0x40u64).op(Opcode::MSTORE);
        self.stack.pop();
        self.allocs[alloc].permanent = true;
        self.allocs[alloc].size_words = 1;
        self.open_transient = None;
    }

    /// base[off] = value, where value is a constant or another baseref.
    fn write_field(&mut self, alloc: usize, off_words: u64, value: Option<usize>) {
        match value {
            Some(src) if self.depth_of(src).is_some() => self.dup_ref(src),
            _ => {
                let v = self.rng.gen_range(0..0x1_0000);
                self.push_junk(v);
            }
        }
        self.dup_ref(alloc);
        if off_words > 0 {
            self.b.push(off_words * 32).op(Opcode::ADD);
        }
        self.b.op(Opcode::MSTORE);
        self.stack.pop();
        self.stack.pop();
    }

    fn read_field(&mut self, alloc: usize, off_words: u64) {
        self.dup_ref(alloc);
        if off_words > 0 {
            self.b.push(off_words * 32).op(Opcode::ADD);
        }
        self.b.op(Opcode::MLOAD).op(Opcode::POP);
        self.stack.pop();
    }

    /// STATICCALL with a slot as both argument and return buffer.
    fn call(&mut self, buffer: usize) {
        self.push_junk(0x20); // retSize
        self.dup_ref(buffer); // retOffset
        self.push_junk(0x04); // argsSize
        self.dup_ref(buffer); // argsOffset
        let callee = CALLEES[self.rng.gen_range(0..CALLEES.len())];
        self.push_junk(callee);
        self.b.op(Opcode::GAS);
        self.stack.push(Entry::Junk);
        self.b.op(Opcode::STATICCALL);
        for _ in 0..6 {
            self.stack.pop();
        }
        self.b.op(Opcode::POP); // success flag
    }

    fn pop_ref(&mut self, alloc: usize) {
        // Only pop when the ref is on top; used to drop loop-local refs.
        assert_eq!(self.stack.last(), Some(&Entry::Ref(alloc)));
        self.b.op(Opcode::POP);
        self.stack.pop();
    }
}

/// Generate one program. Bounded: a handful of allocations, at most one
/// loop with at most three iterations, and call stubs returning fixed
/// data. All jumps are static and every free-memory-pointer access is a
/// direct `PUSH 0x40` pattern or a tracked constant.
pub fn generate(seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calldata_len = rng.gen_range(0..6) * 8;
    let calldata: Vec<u8> = (0..calldata_len).map(|_| rng.gen()).collect();
    let mut g = Gen {
        b: ProgramBuilder::new(),
        rng,
        stack: Vec::new(),
        allocs: Vec::new(),
        open_transient: None,
    };
    g.b.init_fmp(0x80);

    let n_actions = g.rng.gen_range(2..6);
    let mut loop_used = false;
    for _ in 0..n_actions {
        let reachable = g.reachable_allocs();
        match g.rng.gen_range(0..10) {
            // Allocate, mostly permanent.
            0..=2 => {
                let size = g.rng.gen_range(1..4);
                let permanent = g.rng.gen_bool(0.7);
                g.alloc(size, permanent);
            }
            // Write a field: constant or pointer to another slot.
            3..=4 if !reachable.is_empty() => {
                let a = reachable[g.rng.gen_range(0..reachable.len())];
                let off = g.rng.gen_range(0..g.allocs[a].size_words);
                let src = if g.rng.gen_bool(0.3) && reachable.len() > 1 {
                    Some(reachable[g.rng.gen_range(0..reachable.len())])
                } else {
                    None
                };
                g.write_field(a, off, src);
            }
            // Read a field back.
            5 if !reachable.is_empty() => {
                let a = reachable[g.rng.gen_range(0..reachable.len())];
                let off = g.rng.gen_range(0..g.allocs[a].size_words);
                g.read_field(a, off);
            }
            // External call through a fresh transient slot, then close it
            // with the observed return size.
            6..=7 => {
                g.alloc(1, false);
                let buf = g.open_transient.expect("just opened");
                g.write_field(buf, 0, None); // selector-style argument
                g.call(buf);
                g.close_transient_with_rds(buf);
                g.pop_ref(buf);
            }
            // Branch on calldata: one arm writes, the other reads.
            8 => {
                let else_l = g.b.label();
                let end_l = g.b.label();
                g.b.op(Opcode::CALLDATASIZE);
                g.b.jumpi(else_l);
                if let Some(&a) = reachable.first() {
                    g.write_field(a, 0, None);
                }
                g.b.jump(end_l);
                g.b.dest(else_l);
                if let Some(&a) = reachable.last() {
                    let off = g.rng.gen_range(0..g.allocs[a].size_words);
                    g.read_field(a, off);
                }
                g.b.dest(end_l);
            }
            // A bounded loop allocating per iteration and linking the
            // fresh slot into an outer one.
            9 if !loop_used => {
                loop_used = true;
                let outer = reachable.first().copied();
                let iters = g.rng.gen_range(1..4u64);
                let head = g.b.label();
                g.push_junk(iters); // countdown on top
                g.b.dest(head);
                g.alloc(1, true);
                let inner = *g.stack.last().and_then(|e| match e {
                    Entry::Ref(i) => Some(i),
                    Entry::Junk => None,
                }).expect("alloc pushes a ref");
                g.write_field(inner, 0, None);
                if let Some(o) = outer {
                    if g.depth_of(o).is_some() {
                        g.write_field(o, 0, Some(inner));
                    }
                }
                if g.rng.gen_bool(0.5) {
                    g.read_field(inner, 0);
                }
                g.pop_ref(inner);
                // countdown -= 1; loop while != 0
                g.b.push(1u64).op(Opcode::SWAP1).op(Opcode::SUB);
                g.b.op(Opcode::DUP1);
                g.b.jumpi(head);
                g.b.op(Opcode::POP);
                g.stack.pop(); // countdown gone
            }
            _ => {
                // No-op filler keeps action counts comparable.
                g.push_junk(7);
                g.b.op(Opcode::POP);
                g.stack.pop();
            }
        }
    }

    // Ending: return a slot's contents, return scratch, stop, or revert.
    let reachable = g.reachable_allocs();
    match g.rng.gen_range(0..4) {
        0 if !reachable.is_empty() => {
            let a = reachable[g.rng.gen_range(0..reachable.len())];
            let size = g.allocs[a].size_words * 32;
            g.push_junk(size);
            g.dup_ref(a);
            g.b.op(Opcode::RETURN);
        }
        1 => {
            g.b.push(0x20u64).push(0u64).op(Opcode::RETURN);
        }
        2 => {
            g.b.push(0u64).push(0u64).op(Opcode::REVERT);
        }
        _ => {
            g.b.op(Opcode::STOP);
        }
    }

    Generated { seed, code: g.b.build(), calldata, stubs: gen_stubs() }
}
