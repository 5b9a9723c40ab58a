//! Static EVM opcode metadata: mnemonics, stack arities, terminator
//! classification, and the memory-operand position tables.
//!
//! The instruction set is pinned to the pre-Shanghai opcodes (no PUSH0,
//! TLOAD/TSTORE or MCOPY); bytes outside it decode with INVALID semantics.

/// A raw opcode byte. Every byte value is an `Opcode`; unassigned bytes
/// behave as INVALID (they halt execution) but keep their byte identity so
/// a disassembly can be re-encoded losslessly.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Opcode(pub u8);

#[derive(Clone, Copy)]
struct OpInfo {
    mnemonic: &'static str,
    pops: u8,
    pushes: u8,
    terminator: bool,
    assigned: bool,
}

const INVALID_INFO: OpInfo = OpInfo {
    mnemonic: "INVALID",
    pops: 0,
    pushes: 0,
    terminator: true,
    assigned: false,
};

const fn op(mnemonic: &'static str, pops: u8, pushes: u8) -> OpInfo {
    OpInfo { mnemonic, pops, pushes, terminator: false, assigned: true }
}

const fn halt(mnemonic: &'static str, pops: u8) -> OpInfo {
    OpInfo { mnemonic, pops, pushes: 0, terminator: true, assigned: true }
}

static TABLE: [OpInfo; 256] = build_table();

const fn build_table() -> [OpInfo; 256] {
    let mut t = [INVALID_INFO; 256];
    t[0x00] = OpInfo { mnemonic: "STOP", pops: 0, pushes: 0, terminator: true, assigned: true };
    t[0x01] = op("ADD", 2, 1);
    t[0x02] = op("MUL", 2, 1);
    t[0x03] = op("SUB", 2, 1);
    t[0x04] = op("DIV", 2, 1);
    t[0x05] = op("SDIV", 2, 1);
    t[0x06] = op("MOD", 2, 1);
    t[0x07] = op("SMOD", 2, 1);
    t[0x08] = op("ADDMOD", 3, 1);
    t[0x09] = op("MULMOD", 3, 1);
    t[0x0A] = op("EXP", 2, 1);
    t[0x0B] = op("SIGNEXTEND", 2, 1);
    t[0x10] = op("LT", 2, 1);
    t[0x11] = op("GT", 2, 1);
    t[0x12] = op("SLT", 2, 1);
    t[0x13] = op("SGT", 2, 1);
    t[0x14] = op("EQ", 2, 1);
    t[0x15] = op("ISZERO", 1, 1);
    t[0x16] = op("AND", 2, 1);
    t[0x17] = op("OR", 2, 1);
    t[0x18] = op("XOR", 2, 1);
    t[0x19] = op("NOT", 1, 1);
    t[0x1A] = op("BYTE", 2, 1);
    t[0x1B] = op("SHL", 2, 1);
    t[0x1C] = op("SHR", 2, 1);
    t[0x1D] = op("SAR", 2, 1);
    t[0x20] = op("KECCAK256", 2, 1);
    t[0x30] = op("ADDRESS", 0, 1);
    t[0x31] = op("BALANCE", 1, 1);
    t[0x32] = op("ORIGIN", 0, 1);
    t[0x33] = op("CALLER", 0, 1);
    t[0x34] = op("CALLVALUE", 0, 1);
    t[0x35] = op("CALLDATALOAD", 1, 1);
    t[0x36] = op("CALLDATASIZE", 0, 1);
    t[0x37] = op("CALLDATACOPY", 3, 0);
    t[0x38] = op("CODESIZE", 0, 1);
    t[0x39] = op("CODECOPY", 3, 0);
    t[0x3A] = op("GASPRICE", 0, 1);
    t[0x3B] = op("EXTCODESIZE", 1, 1);
    t[0x3C] = op("EXTCODECOPY", 4, 0);
    t[0x3D] = op("RETURNDATASIZE", 0, 1);
    t[0x3E] = op("RETURNDATACOPY", 3, 0);
    t[0x3F] = op("EXTCODEHASH", 1, 1);
    t[0x40] = op("BLOCKHASH", 1, 1);
    t[0x41] = op("COINBASE", 0, 1);
    t[0x42] = op("TIMESTAMP", 0, 1);
    t[0x43] = op("NUMBER", 0, 1);
    t[0x44] = op("DIFFICULTY", 0, 1);
    t[0x45] = op("GASLIMIT", 0, 1);
    t[0x46] = op("CHAINID", 0, 1);
    t[0x47] = op("SELFBALANCE", 0, 1);
    t[0x48] = op("BASEFEE", 0, 1);
    t[0x50] = op("POP", 1, 0);
    t[0x51] = op("MLOAD", 1, 1);
    t[0x52] = op("MSTORE", 2, 0);
    t[0x53] = op("MSTORE8", 2, 0);
    t[0x54] = op("SLOAD", 1, 1);
    t[0x55] = op("SSTORE", 2, 0);
    // JUMP unconditionally transfers control, so it terminates its block.
    t[0x56] = OpInfo { mnemonic: "JUMP", pops: 1, pushes: 0, terminator: true, assigned: true };
    t[0x57] = op("JUMPI", 2, 0);
    t[0x58] = op("PC", 0, 1);
    t[0x59] = op("MSIZE", 0, 1);
    t[0x5A] = op("GAS", 0, 1);
    t[0x5B] = op("JUMPDEST", 0, 0);
    // PUSH1..PUSH32
    let mut i = 0x60;
    while i <= 0x7F {
        t[i] = OpInfo { mnemonic: push_name(i), pops: 0, pushes: 1, terminator: false, assigned: true };
        i += 1;
    }
    // DUPn and SWAPn are modeled by their net stack effect; the positional
    // depth they require is exposed through `min_depth`.
    i = 0x80;
    while i <= 0x8F {
        t[i] = OpInfo { mnemonic: dup_name(i), pops: 0, pushes: 1, terminator: false, assigned: true };
        i += 1;
    }
    i = 0x90;
    while i <= 0x9F {
        t[i] = OpInfo { mnemonic: swap_name(i), pops: 0, pushes: 0, terminator: false, assigned: true };
        i += 1;
    }
    t[0xA0] = op("LOG0", 2, 0);
    t[0xA1] = op("LOG1", 3, 0);
    t[0xA2] = op("LOG2", 4, 0);
    t[0xA3] = op("LOG3", 5, 0);
    t[0xA4] = op("LOG4", 6, 0);
    t[0xF0] = op("CREATE", 3, 1);
    t[0xF1] = op("CALL", 7, 1);
    t[0xF2] = op("CALLCODE", 7, 1);
    t[0xF3] = halt("RETURN", 2);
    t[0xF4] = op("DELEGATECALL", 6, 1);
    t[0xF5] = op("CREATE2", 4, 1);
    t[0xFA] = op("STATICCALL", 6, 1);
    t[0xFD] = halt("REVERT", 2);
    t[0xFE] = OpInfo { mnemonic: "INVALID", pops: 0, pushes: 0, terminator: true, assigned: true };
    t[0xFF] = halt("SELFDESTRUCT", 1);
    t
}

const fn push_name(b: usize) -> &'static str {
    const NAMES: [&str; 32] = [
        "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9",
        "PUSH10", "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17",
        "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24", "PUSH25",
        "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32",
    ];
    NAMES[b - 0x60]
}

const fn dup_name(b: usize) -> &'static str {
    const NAMES: [&str; 16] = [
        "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10",
        "DUP11", "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
    ];
    NAMES[b - 0x80]
}

const fn swap_name(b: usize) -> &'static str {
    const NAMES: [&str; 16] = [
        "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9",
        "SWAP10", "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
    ];
    NAMES[b - 0x90]
}

impl Opcode {
    pub const STOP: Opcode = Opcode(0x00);
    pub const ADD: Opcode = Opcode(0x01);
    pub const MUL: Opcode = Opcode(0x02);
    pub const SUB: Opcode = Opcode(0x03);
    pub const DIV: Opcode = Opcode(0x04);
    pub const MOD: Opcode = Opcode(0x06);
    pub const EXP: Opcode = Opcode(0x0A);
    pub const LT: Opcode = Opcode(0x10);
    pub const GT: Opcode = Opcode(0x11);
    pub const EQ: Opcode = Opcode(0x14);
    pub const ISZERO: Opcode = Opcode(0x15);
    pub const AND: Opcode = Opcode(0x16);
    pub const OR: Opcode = Opcode(0x17);
    pub const XOR: Opcode = Opcode(0x18);
    pub const NOT: Opcode = Opcode(0x19);
    pub const SHL: Opcode = Opcode(0x1B);
    pub const SHR: Opcode = Opcode(0x1C);
    pub const KECCAK256: Opcode = Opcode(0x20);
    pub const CALLER: Opcode = Opcode(0x33);
    pub const CALLVALUE: Opcode = Opcode(0x34);
    pub const CALLDATALOAD: Opcode = Opcode(0x35);
    pub const CALLDATASIZE: Opcode = Opcode(0x36);
    pub const CALLDATACOPY: Opcode = Opcode(0x37);
    pub const CODESIZE: Opcode = Opcode(0x38);
    pub const CODECOPY: Opcode = Opcode(0x39);
    pub const EXTCODECOPY: Opcode = Opcode(0x3C);
    pub const RETURNDATASIZE: Opcode = Opcode(0x3D);
    pub const RETURNDATACOPY: Opcode = Opcode(0x3E);
    pub const POP: Opcode = Opcode(0x50);
    pub const MLOAD: Opcode = Opcode(0x51);
    pub const MSTORE: Opcode = Opcode(0x52);
    pub const MSTORE8: Opcode = Opcode(0x53);
    pub const JUMP: Opcode = Opcode(0x56);
    pub const JUMPI: Opcode = Opcode(0x57);
    pub const PC: Opcode = Opcode(0x58);
    pub const MSIZE: Opcode = Opcode(0x59);
    pub const GAS: Opcode = Opcode(0x5A);
    pub const JUMPDEST: Opcode = Opcode(0x5B);
    pub const PUSH1: Opcode = Opcode(0x60);
    pub const PUSH2: Opcode = Opcode(0x61);
    pub const PUSH4: Opcode = Opcode(0x63);
    pub const PUSH32: Opcode = Opcode(0x7F);
    pub const DUP1: Opcode = Opcode(0x80);
    pub const DUP2: Opcode = Opcode(0x81);
    pub const DUP3: Opcode = Opcode(0x82);
    pub const DUP4: Opcode = Opcode(0x83);
    pub const DUP5: Opcode = Opcode(0x84);
    pub const DUP6: Opcode = Opcode(0x85);
    pub const SWAP1: Opcode = Opcode(0x90);
    pub const SWAP2: Opcode = Opcode(0x91);
    pub const SWAP3: Opcode = Opcode(0x92);
    pub const LOG0: Opcode = Opcode(0xA0);
    pub const CREATE: Opcode = Opcode(0xF0);
    pub const CALL: Opcode = Opcode(0xF1);
    pub const CALLCODE: Opcode = Opcode(0xF2);
    pub const RETURN: Opcode = Opcode(0xF3);
    pub const DELEGATECALL: Opcode = Opcode(0xF4);
    pub const CREATE2: Opcode = Opcode(0xF5);
    pub const STATICCALL: Opcode = Opcode(0xFA);
    pub const REVERT: Opcode = Opcode(0xFD);
    pub const INVALID: Opcode = Opcode(0xFE);
    pub const SELFDESTRUCT: Opcode = Opcode(0xFF);

    #[inline]
    fn info(self) -> &'static OpInfo {
        &TABLE[self.0 as usize]
    }

    pub fn byte(self) -> u8 {
        self.0
    }

    pub fn mnemonic(self) -> &'static str {
        self.info().mnemonic
    }

    /// Number of stack operands consumed. DUPn/SWAPn report their net
    /// effect (0); use `min_depth` for the depth they need.
    pub fn pops(self) -> usize {
        self.info().pops as usize
    }

    /// Number of stack results produced (0 or 1).
    pub fn pushes(self) -> usize {
        self.info().pushes as usize
    }

    /// True for instructions that halt execution or unconditionally
    /// transfer control (STOP, RETURN, REVERT, INVALID, SELFDESTRUCT,
    /// JUMP, and every unassigned byte).
    pub fn is_terminator(self) -> bool {
        self.info().terminator
    }

    /// True for instructions that end the execution of the contract:
    /// STOP, RETURN, REVERT, SELFDESTRUCT, INVALID and unassigned bytes.
    pub fn is_halt(self) -> bool {
        self.info().terminator && self != Opcode::JUMP
    }

    pub fn is_assigned(self) -> bool {
        self.info().assigned
    }

    /// Immediate size for PUSH1..PUSH32.
    pub fn push_size(self) -> Option<usize> {
        if (0x60..=0x7F).contains(&self.0) {
            Some((self.0 - 0x5F) as usize)
        } else {
            None
        }
    }

    /// n for DUPn.
    pub fn dup_depth(self) -> Option<usize> {
        if (0x80..=0x8F).contains(&self.0) {
            Some((self.0 - 0x7F) as usize)
        } else {
            None
        }
    }

    /// n for SWAPn.
    pub fn swap_depth(self) -> Option<usize> {
        if (0x90..=0x9F).contains(&self.0) {
            Some((self.0 - 0x8F) as usize)
        } else {
            None
        }
    }

    /// Minimum stack height required to execute this instruction.
    pub fn min_depth(self) -> usize {
        if let Some(n) = self.dup_depth() {
            n
        } else if let Some(n) = self.swap_depth() {
            n + 1
        } else {
            self.pops()
        }
    }

    /// Stack position (depth from the top, 0 = topmost operand) of the
    /// memory address this instruction reads, if any.
    pub fn mem_read_pos(self) -> Option<usize> {
        match self.0 {
            0x51 | 0x20 | 0xF3 | 0xFD => Some(0), // MLOAD KECCAK256 RETURN REVERT
            0xA0..=0xA4 => Some(0),               // LOG0..LOG4
            0xF0 | 0xF5 => Some(1),               // CREATE CREATE2
            0xF1 | 0xF2 => Some(3),               // CALL CALLCODE
            0xF4 | 0xFA => Some(2),               // DELEGATECALL STATICCALL
            _ => None,
        }
    }

    /// Stack position (depth from the top) of the memory address this
    /// instruction writes, if any.
    pub fn mem_write_pos(self) -> Option<usize> {
        match self {
            Opcode::MSTORE | Opcode::MSTORE8 => Some(0),
            Opcode::CALLDATACOPY | Opcode::CODECOPY | Opcode::RETURNDATACOPY => Some(0),
            Opcode::EXTCODECOPY => Some(1),
            Opcode::CALL | Opcode::CALLCODE => Some(5),
            Opcode::DELEGATECALL | Opcode::STATICCALL => Some(4),
            _ => None,
        }
    }
}

impl std::fmt::Debug for Opcode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.mnemonic())
    }
}

impl std::fmt::Display for Opcode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.mnemonic())
    }
}
