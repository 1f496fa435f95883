//! Instruction set: opcodes, variable-length encoding and the hexdump text format.
//!
//! Every instruction is a single opcode byte, optionally followed by a 32-bit
//! little-endian immediate. Only `push`, `br_if`, `jump` and `call` carry an
//! immediate, so encoded instructions are always 1 or 5 bytes long.

use std::fmt;

use thiserror::Error;

/// Flash addresses are 24 bits wide.
pub const ADDRESS_BITS: u32 = 24;

/// Largest image the 24-bit program counter can address.
pub const MAX_IMAGE_LEN: usize = 1 << ADDRESS_BITS;

/// Size in bytes of an immediate operand.
pub const IMMEDIATE_LEN: usize = 4;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    Stack,
    Arithmetic,
    Comparison,
    Control,
    MemoryIo,
}

macro_rules! opcodes {
    ($( $variant:ident = $byte:literal, $mnemonic:literal, $imm:literal, $cat:ident; )*) => {
        /// One of the 23 defined operations.
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum Opcode {
            $( $variant = $byte, )*
        }

        impl Opcode {
            /// Every defined opcode, in table order.
            pub const ALL: &'static [Opcode] = &[ $( Opcode::$variant, )* ];

            pub const fn from_byte(byte: u8) -> Option<Opcode> {
                match byte {
                    $( $byte => Some(Opcode::$variant), )*
                    _ => None,
                }
            }

            /// Lower-case assembler mnemonic.
            pub const fn mnemonic(self) -> &'static str {
                match self {
                    $( Opcode::$variant => $mnemonic, )*
                }
            }

            pub const fn has_immediate(self) -> bool {
                match self {
                    $( Opcode::$variant => $imm, )*
                }
            }

            pub const fn category(self) -> Category {
                match self {
                    $( Opcode::$variant => Category::$cat, )*
                }
            }
        }
    };
}

opcodes! {
    Push  = 0x01, "push",  true,  Stack;
    Drop  = 0x05, "drop",  false, Stack;
    Dup   = 0x12, "dup",   false, Stack;
    Swap  = 0x13, "swap",  false, Stack;
    Over  = 0x14, "over",  false, Stack;

    Add   = 0x02, "add",   false, Arithmetic;
    Sub   = 0x03, "sub",   false, Arithmetic;
    Mul   = 0x04, "mul",   false, Arithmetic;
    And   = 0x16, "and",   false, Arithmetic;
    Or    = 0x17, "or",    false, Arithmetic;
    Not   = 0x19, "not",   false, Arithmetic;

    Eq    = 0x09, "eq",    false, Comparison;
    LtS   = 0x0A, "lt_s",  false, Comparison;
    GtS   = 0x0B, "gt_s",  false, Comparison;
    Eqz   = 0x35, "eqz",   false, Comparison;

    BrIf  = 0x0E, "br_if", true,  Control;
    Jump  = 0x0F, "jump",  true,  Control;
    Call  = 0x10, "call",  true,  Control;
    Ret   = 0x11, "ret",   false, Control;

    Load  = 0x1D, "load",  false, MemoryIo;
    Store = 0x1E, "store", false, MemoryIo;
    Print = 0x08, "print", false, MemoryIo;
    Key   = 0x1F, "key",   false, MemoryIo;
}

impl Opcode {
    pub const fn byte(self) -> u8 {
        self as u8
    }

    /// Case-insensitive mnemonic lookup.
    pub fn from_mnemonic(text: &str) -> Option<Opcode> {
        Opcode::ALL
            .iter()
            .copied()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(text))
    }

    pub const fn is_comparison(self) -> bool {
        matches!(self.category(), Category::Comparison)
    }

    /// True for instructions whose immediate is a flash address.
    pub const fn is_branch(self) -> bool {
        matches!(self, Opcode::BrIf | Opcode::Jump | Opcode::Call)
    }

    /// Encoded size of an instruction with this opcode.
    pub const fn encoded_len(self) -> usize {
        if self.has_immediate() {
            1 + IMMEDIATE_LEN
        } else {
            1
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown opcode 0x{byte:02x} at offset 0x{offset:06x}")]
    UnknownOpcode { offset: usize, byte: u8 },
    #[error("truncated immediate for `{opcode}` at offset 0x{offset:06x}")]
    TruncatedImmediate { offset: usize, opcode: Opcode },
    #[error("offset 0x{offset:06x} is past the end of a {len}-byte image")]
    OffsetOutOfRange { offset: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstructionError {
    #[error("`{0}` requires an immediate operand")]
    MissingImmediate(Opcode),
    #[error("`{0}` does not take an immediate operand")]
    UnexpectedImmediate(Opcode),
}

/// An opcode together with its immediate, if it has one.
///
/// The immediate is kept as a raw 32-bit word; signed operations reinterpret it.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    opcode: Opcode,
    immediate: Option<u32>,
}

impl Instruction {
    pub fn new(opcode: Opcode, immediate: Option<u32>) -> Result<Self, InstructionError> {
        match (opcode.has_immediate(), immediate) {
            (true, None) => Err(InstructionError::MissingImmediate(opcode)),
            (false, Some(_)) => Err(InstructionError::UnexpectedImmediate(opcode)),
            _ => Ok(Self { opcode, immediate }),
        }
    }

    /// Builds an immediate-free instruction.
    ///
    /// Panics if `opcode` requires an immediate.
    pub fn simple(opcode: Opcode) -> Self {
        Self::new(opcode, None).expect("opcode requires an immediate")
    }

    /// Builds an instruction carrying `imm`.
    ///
    /// Panics if `opcode` takes no immediate.
    pub fn with_immediate(opcode: Opcode, imm: u32) -> Self {
        Self::new(opcode, Some(imm)).expect("opcode takes no immediate")
    }

    pub fn opcode(&self) -> Opcode {
        self.opcode
    }

    pub fn immediate(&self) -> Option<u32> {
        self.immediate
    }

    pub fn encoded_len(&self) -> usize {
        self.opcode.encoded_len()
    }

    /// Appends the encoding: opcode byte, then the immediate LSB first.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.opcode.byte());
        if let Some(imm) = self.immediate {
            out.extend_from_slice(&imm.to_le_bytes());
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Decodes the instruction at `offset`, returning it and the offset of the
    /// next instruction.
    pub fn decode(bytes: &[u8], offset: usize) -> Result<(Instruction, usize), DecodeError> {
        let byte = *bytes.get(offset).ok_or(DecodeError::OffsetOutOfRange {
            offset,
            len: bytes.len(),
        })?;
        let opcode = Opcode::from_byte(byte).ok_or(DecodeError::UnknownOpcode { offset, byte })?;
        if !opcode.has_immediate() {
            return Ok((Instruction { opcode, immediate: None }, offset + 1));
        }
        let start = offset + 1;
        let imm = bytes
            .get(start..start + IMMEDIATE_LEN)
            .ok_or(DecodeError::TruncatedImmediate { offset, opcode })?;
        let imm = u32::from_le_bytes(imm.try_into().unwrap());
        Ok((
            Instruction {
                opcode,
                immediate: Some(imm),
            },
            start + IMMEDIATE_LEN,
        ))
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.immediate {
            Some(imm) => write!(f, "{} {}", self.opcode, imm),
            None => write!(f, "{}", self.opcode),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("image of {0} bytes exceeds the 24-bit address space")]
    TooLarge(usize),
    #[error("malformed hexdump token `{token}` (token {index})")]
    MalformedToken { index: usize, token: String },
}

/// Raw bytes as burned into flash: no header, no padding.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct FlashImage(Vec<u8>);

impl FlashImage {
    pub fn new(bytes: Vec<u8>) -> Result<Self, ImageError> {
        if bytes.len() > MAX_IMAGE_LEN {
            return Err(ImageError::TooLarge(bytes.len()));
        }
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, addr: u32) -> Option<u8> {
        self.0.get(addr as usize).copied()
    }

    /// Iterates over the decoded instructions with their offsets, stopping
    /// at the first decode error.
    pub fn instructions(&self) -> Instructions<'_> {
        Instructions {
            bytes: &self.0,
            offset: 0,
            failed: false,
        }
    }

    pub fn to_hexdump(&self) -> String {
        emit_hexdump(self)
    }

    pub fn from_hexdump(text: &str) -> Result<Self, ImageError> {
        parse_hexdump(text)
    }
}

impl fmt::Debug for FlashImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FlashImage({} bytes)", self.0.len())
    }
}

impl TryFrom<Vec<u8>> for FlashImage {
    type Error = ImageError;

    fn try_from(bytes: Vec<u8>) -> Result<Self, ImageError> {
        FlashImage::new(bytes)
    }
}

impl AsRef<[u8]> for FlashImage {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub struct Instructions<'a> {
    bytes: &'a [u8],
    offset: usize,
    failed: bool,
}

impl Iterator for Instructions<'_> {
    type Item = Result<(usize, Instruction), DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.offset >= self.bytes.len() {
            return None;
        }
        match Instruction::decode(self.bytes, self.offset) {
            Ok((instr, next)) => {
                let at = self.offset;
                self.offset = next;
                Some(Ok((at, instr)))
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

const BYTES_PER_LINE: usize = 16;

/// Lower-case hex bytes, space separated, 16 per line, every line
/// newline-terminated.
pub fn emit_hexdump(image: &FlashImage) -> String {
    let mut out = String::with_capacity(image.len() * 3);
    for line in image.as_bytes().chunks(BYTES_PER_LINE) {
        for (i, byte) in line.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{byte:02x}"));
        }
        out.push('\n');
    }
    out
}

/// Parses whitespace-separated two-digit hex tokens; line length is free.
pub fn parse_hexdump(text: &str) -> Result<FlashImage, ImageError> {
    let bytes = text
        .split_ascii_whitespace()
        .enumerate()
        .map(|(index, token)| {
            let malformed = || ImageError::MalformedToken {
                index,
                token: token.to_string(),
            };
            if token.len() != 2 || !token.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(malformed());
            }
            u8::from_str_radix(token, 16).map_err(|_| malformed())
        })
        .collect::<Result<Vec<u8>, _>>()?;
    FlashImage::new(bytes)
}
