//! Small bytecode assembler: emit opcodes, bind labels, and backpatch
//! PUSH2 jump targets. Used by the shipped fixtures, the random program
//! generator and tests.

use crate::opcode::Opcode;
use primitive_types::U256;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Label(usize);

#[derive(Default)]
pub struct ProgramBuilder {
    bytes: Vec<u8>,
    bound: Vec<Option<u32>>,
    patches: Vec<(usize, Label)>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pc(&self) -> u32 {
        self.bytes.len() as u32
    }

    pub fn label(&mut self) -> Label {
        self.bound.push(None);
        Label(self.bound.len() - 1)
    }

    /// Bind `l` to the current pc and emit a JUMPDEST there.
    pub fn dest(&mut self, l: Label) -> u32 {
        let pc = self.pc();
        assert!(self.bound[l.0].is_none(), "label bound twice");
        self.bound[l.0] = Some(pc);
        self.op(Opcode::JUMPDEST);
        pc
    }

    pub fn op(&mut self, op: Opcode) -> &mut Self {
        self.bytes.push(op.byte());
        self
    }

    /// PUSH with the smallest width that fits `v`.
    pub fn push(&mut self, v: impl Into<U256>) -> &mut Self {
        let v: U256 = v.into();
        let be = v.to_big_endian();
        let skip = be.iter().take_while(|b| **b == 0).count().min(31);
        let imm = &be[skip..];
        self.bytes.push(0x60 + (imm.len() - 1) as u8);
        self.bytes.extend_from_slice(imm);
        self
    }

    /// PUSH2 of a label, patched at build time.
    pub fn push_label(&mut self, l: Label) -> &mut Self {
        self.bytes.push(Opcode::PUSH2.byte());
        self.patches.push((self.bytes.len(), l));
        self.bytes.extend_from_slice(&[0, 0]);
        self
    }

    pub fn jump(&mut self, l: Label) -> &mut Self {
        self.push_label(l).op(Opcode::JUMP)
    }

    pub fn jumpi(&mut self, l: Label) -> &mut Self {
        self.push_label(l).op(Opcode::JUMPI)
    }

    /// The solc prologue: initialize the free memory pointer to `base`.
    pub fn init_fmp(&mut self, base: u64) -> &mut Self {
        self.push(base).push(0x40u64).op(Opcode::MSTORE)
    }

    pub fn build(mut self) -> Vec<u8> {
        for (at, l) in std::mem::take(&mut self.patches) {
            let pc = self.bound[l.0].expect("unbound label");
            assert!(pc <= u16::MAX as u32, "code too large for PUSH2 targets");
            self.bytes[at..at + 2].copy_from_slice(&(pc as u16).to_be_bytes());
        }
        self.bytes
    }
}
