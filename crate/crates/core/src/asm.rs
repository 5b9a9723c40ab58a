//! Bytecode decoding: hex/raw input handling, metadata stripping, the
//! disassembler, and syntactic marking of free-memory-pointer accesses.

use crate::opcode::Opcode;
use primitive_types::U256;

/// Marks an MLOAD/MSTORE whose address operand is statically the constant
/// 0x40, i.e. an access to the free memory pointer. Those are treated as
/// dedicated instructions by the analyses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FmpAccess {
    /// `MLOAD 0x40`: loads the base reference of a slot.
    Load,
    /// `MSTORE 0x40`: pushes the free memory pointer forward.
    Store,
}

/// One decoded instruction. `op` keeps the raw byte so re-encoding is
/// lossless; a PUSH whose immediate runs past end-of-code keeps its bytes
/// but executes as INVALID (`truncated`).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Instruction {
    pub pc: u32,
    pub op: Opcode,
    pub push_bytes: Vec<u8>,
    pub truncated: bool,
    pub fused: Option<FmpAccess>,
}

impl Instruction {
    /// Opcode metadata accessors below account for truncation: a truncated
    /// PUSH behaves exactly like INVALID.
    fn effective(&self) -> Opcode {
        if self.truncated {
            Opcode::INVALID
        } else {
            self.op
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        self.effective().mnemonic()
    }

    pub fn pops(&self) -> usize {
        self.effective().pops()
    }

    pub fn pushes(&self) -> usize {
        self.effective().pushes()
    }

    pub fn min_depth(&self) -> usize {
        self.effective().min_depth()
    }

    pub fn is_halt(&self) -> bool {
        self.effective().is_halt()
    }

    pub fn is_terminator(&self) -> bool {
        self.effective().is_terminator()
    }

    /// The immediate of a (non-truncated) PUSH as a 256-bit word.
    pub fn push_value(&self) -> Option<U256> {
        if self.truncated || self.op.push_size().is_none() {
            return None;
        }
        Some(U256::from_big_endian(&self.push_bytes))
    }

    /// Total encoded size in bytes.
    pub fn size(&self) -> usize {
        1 + self.push_bytes.len()
    }
}

/// A decoded instruction stream. Instructions cover every byte of the
/// input exactly once, with strictly increasing `pc`.
#[derive(Clone, Debug, Default)]
pub struct Disassembly {
    pub instrs: Vec<Instruction>,
    code_len: usize,
}

impl Disassembly {
    pub fn code_len(&self) -> usize {
        self.code_len
    }

    /// Index of the instruction starting at `pc`, if any.
    pub fn instr_at(&self, pc: u32) -> Option<&Instruction> {
        self.instrs
            .binary_search_by_key(&pc, |i| i.pc)
            .ok()
            .map(|idx| &self.instrs[idx])
    }

    pub fn index_of(&self, pc: u32) -> Option<usize> {
        self.instrs.binary_search_by_key(&pc, |i| i.pc).ok()
    }

    /// Re-encode the instruction stream into bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.code_len);
        for i in &self.instrs {
            out.push(i.op.byte());
            out.extend_from_slice(&i.push_bytes);
        }
        out
    }
}

/// Decode raw bytecode. Never fails: unknown opcodes become INVALID
/// instructions and a PUSH running past end-of-code absorbs the remaining
/// bytes and executes as INVALID.
pub fn disassemble(code: &[u8]) -> Disassembly {
    let mut instrs = Vec::new();
    let mut pc = 0usize;
    while pc < code.len() {
        let op = Opcode(code[pc]);
        let (push_bytes, truncated) = match op.push_size() {
            Some(n) if pc + 1 + n <= code.len() => (code[pc + 1..pc + 1 + n].to_vec(), false),
            Some(_) => (code[pc + 1..].to_vec(), true),
            None => (Vec::new(), false),
        };
        let size = 1 + push_bytes.len();
        instrs.push(Instruction { pc: pc as u32, op, push_bytes, truncated, fused: None });
        pc += size;
    }
    Disassembly { instrs, code_len: code.len() }
}

/// Mark MLOAD/MSTORE instructions whose address operand is statically
/// 0x40. This pass catches the immediate `PUSH 0x40` pattern; the CFG
/// construction extends the markers with constants proven by per-block
/// symbolic tracking (DUP/SWAP chains and cross-block constants).
/// MSTORE8 is never fused.
pub fn fuse_fmp_accesses(mut dis: Disassembly) -> Disassembly {
    let fmp = U256::from(0x40u64);
    for i in 1..dis.instrs.len() {
        let is_target = matches!(dis.instrs[i].op, Opcode::MLOAD | Opcode::MSTORE)
            && !dis.instrs[i].truncated;
        if !is_target {
            continue;
        }
        // A preceding PUSH leaves 0x40 on top of the stack and no jump can
        // land between the two (any JUMPDEST would be its own instruction).
        if dis.instrs[i - 1].push_value() == Some(fmp) {
            dis.instrs[i].fused = Some(match dis.instrs[i].op {
                Opcode::MLOAD => FmpAccess::Load,
                _ => FmpAccess::Store,
            });
        }
    }
    dis
}

/// Drop a trailing solc metadata blob: the final two bytes encode the
/// length of a CBOR map sitting right before them. Best effort; returns
/// the input unchanged when no well-formed trailer is present.
pub fn strip_metadata(code: &[u8]) -> &[u8] {
    if code.len() < 2 {
        return code;
    }
    let n = code.len();
    let decl = ((code[n - 2] as usize) << 8) | code[n - 1] as usize;
    if decl == 0 || decl + 2 > n {
        return code;
    }
    let blob = &code[n - 2 - decl..n - 2];
    if cbor_map_exact(blob) {
        &code[..n - 2 - decl]
    } else {
        code
    }
}

/// True when `buf` is exactly one well-formed, definite-length CBOR map
/// (the shape solc emits).
fn cbor_map_exact(buf: &[u8]) -> bool {
    if buf.first().map(|b| b >> 5) != Some(5) {
        return false;
    }
    matches!(cbor_item(buf, 0, 0), Some(end) if end == buf.len())
}

fn cbor_item(buf: &[u8], pos: usize, depth: u32) -> Option<usize> {
    if depth > 8 {
        return None;
    }
    let head = *buf.get(pos)?;
    let major = head >> 5;
    let addl = head & 0x1F;
    let mut pos = pos + 1;
    let arg: u64 = match addl {
        0..=23 => addl as u64,
        24 => {
            let v = *buf.get(pos)? as u64;
            pos += 1;
            v
        }
        25 => {
            let b = buf.get(pos..pos + 2)?;
            pos += 2;
            u16::from_be_bytes([b[0], b[1]]) as u64
        }
        26 => {
            let b = buf.get(pos..pos + 4)?;
            pos += 4;
            u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as u64
        }
        27 => {
            let b = buf.get(pos..pos + 8)?;
            pos += 8;
            u64::from_be_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]])
        }
        // Indefinite lengths and reserved values never appear in solc
        // metadata; reject them.
        _ => return None,
    };
    match major {
        // The argument decoding above already consumed any payload bytes
        // of integers and simple/float values.
        0 | 1 | 7 => Some(pos),
        2 | 3 => {
            let end = pos.checked_add(usize::try_from(arg).ok()?)?;
            (end <= buf.len()).then_some(end)
        }
        4 => {
            let mut p = pos;
            for _ in 0..arg {
                p = cbor_item(buf, p, depth + 1)?;
            }
            Some(p)
        }
        5 => {
            let mut p = pos;
            for _ in 0..arg.checked_mul(2)? {
                p = cbor_item(buf, p, depth + 1)?;
            }
            Some(p)
        }
        6 => cbor_item(buf, pos, depth + 1),
        _ => unreachable!("major type is three bits"),
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum InputError {
    #[error("input is not valid hex: {0}")]
    BadHex(String),
}

/// Accept raw binary or hex (optional 0x prefix, whitespace tolerated).
/// Content that consists only of hex digits and whitespace is decoded;
/// anything else is taken as raw bytecode.
pub fn parse_input(data: &[u8]) -> Result<Vec<u8>, InputError> {
    let looks_hex = !data.is_empty()
        && data
            .iter()
            .all(|b| b.is_ascii_hexdigit() || b.is_ascii_whitespace() || *b == b'x' || *b == b'X');
    if !looks_hex {
        return Ok(data.to_vec());
    }
    let cleaned: String = data
        .iter()
        .filter(|b| !b.is_ascii_whitespace())
        .map(|&b| b as char)
        .collect();
    let cleaned = cleaned
        .strip_prefix("0x")
        .or_else(|| cleaned.strip_prefix("0X"))
        .unwrap_or(&cleaned);
    hex::decode(cleaned).map_err(|e| InputError::BadHex(e.to_string()))
}
