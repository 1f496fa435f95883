//! Two-pass assembler and the matching disassembler.
//!
//! Source syntax, one statement per line:
//!
//! ```text
//! :loop               ; a label stands alone on its line
//!     push 0x2a       ; decimal, negative decimal or 0x-hex literal
//!     br_if :loop     ; label references carry the leading colon
//! ```
//!
//! Pass 1 walks the lines computing byte offsets (1 or 5 bytes per
//! instruction) and records labels; pass 2 emits bytes, resolving label
//! operands to absolute offsets from the start of the image.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::isa::{DecodeError, FlashImage, Instruction, Opcode, MAX_IMAGE_LEN};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("label `{name}` already defined on line {first_line}")]
    DuplicateLabel { name: String, first_line: usize },
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("`{0}` requires an operand")]
    MissingOperand(Opcode),
    #[error("`{0}` takes no operand")]
    UnexpectedOperand(Opcode),
    #[error("literal `{0}` does not fit in 32 bits")]
    LiteralOutOfRange(String),
    #[error("program exceeds the 24-bit flash address space")]
    ImageTooLarge,
}

impl AsmError {
    fn new(line: usize, kind: AsmErrorKind) -> Self {
        Self { line, kind }
    }

    fn syntax(line: usize, reason: impl Into<String>) -> Self {
        Self::new(line, AsmErrorKind::Syntax(reason.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    /// Raw 32-bit word; negative decimals are stored two's-complement.
    Literal(u32),
    Label(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Literal(v) => write!(f, "{v}"),
            Operand::Label(name) => write!(f, ":{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineKind {
    Blank,
    Label(String),
    Instruction {
        opcode: Opcode,
        operand: Option<Operand>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceLine {
    /// 1-based.
    pub number: usize,
    pub kind: LineKind,
    pub comment: Option<String>,
}

fn is_identifier(text: &str) -> bool {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_literal(line: usize, text: &str) -> Result<u32, AsmError> {
    let out_of_range = || AsmError::new(line, AsmErrorKind::LiteralOutOfRange(text.to_string()));
    let invalid = || AsmError::syntax(line, format!("invalid operand `{text}`"));

    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        if hex.is_empty() || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(invalid());
        }
        let digits = hex.trim_start_matches('0');
        if digits.len() > 8 {
            return Err(out_of_range());
        }
        if digits.is_empty() {
            return Ok(0);
        }
        return u32::from_str_radix(digits, 16).map_err(|_| invalid());
    }

    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(invalid());
    }
    let magnitude: u64 = digits.parse().map_err(|_| out_of_range())?;
    if negative {
        if magnitude > 1 << 31 {
            return Err(out_of_range());
        }
        Ok((magnitude as u32).wrapping_neg())
    } else {
        u32::try_from(magnitude).map_err(|_| out_of_range())
    }
}

fn parse_operand(line: usize, text: &str) -> Result<Operand, AsmError> {
    if let Some(name) = text.strip_prefix(':') {
        if !is_identifier(name) {
            return Err(AsmError::syntax(line, format!("invalid label reference `{text}`")));
        }
        return Ok(Operand::Label(name.to_string()));
    }
    parse_literal(line, text).map(Operand::Literal)
}

/// Parses a single source line. `number` is 1-based and only used for
/// diagnostics.
pub fn parse_line(number: usize, text: &str) -> Result<SourceLine, AsmError> {
    let (code, comment) = match text.find(';') {
        Some(at) => (&text[..at], Some(text[at + 1..].trim().to_string())),
        None => (text, None),
    };
    let mut tokens = code.split_whitespace();
    let kind = match tokens.next() {
        None => LineKind::Blank,
        Some(first) if first.starts_with(':') => {
            let name = &first[1..];
            if !is_identifier(name) {
                return Err(AsmError::syntax(number, format!("invalid label name `{first}`")));
            }
            if let Some(extra) = tokens.next() {
                return Err(AsmError::syntax(
                    number,
                    format!("unexpected `{extra}` after label definition"),
                ));
            }
            LineKind::Label(name.to_string())
        }
        Some(mnemonic) => {
            let opcode = Opcode::from_mnemonic(mnemonic).ok_or_else(|| {
                AsmError::new(number, AsmErrorKind::UnknownMnemonic(mnemonic.to_string()))
            })?;
            let operand = tokens.next().map(|t| parse_operand(number, t)).transpose()?;
            if let Some(extra) = tokens.next() {
                return Err(AsmError::syntax(number, format!("unexpected `{extra}`")));
            }
            match (opcode.has_immediate(), &operand) {
                (true, None) => return Err(AsmError::new(number, AsmErrorKind::MissingOperand(opcode))),
                (false, Some(_)) => {
                    return Err(AsmError::new(number, AsmErrorKind::UnexpectedOperand(opcode)))
                }
                _ => {}
            }
            LineKind::Instruction { opcode, operand }
        }
    };
    Ok(SourceLine {
        number,
        kind,
        comment,
    })
}

/// Label name to absolute byte offset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    entries: BTreeMap<String, Symbol>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Symbol {
    offset: u32,
    line: usize,
}

impl SymbolTable {
    pub fn get(&self, name: &str) -> Option<u32> {
        self.entries.get(name).map(|s| s.offset)
    }

    /// Line on which `name` was defined.
    pub fn line_of(&self, name: &str) -> Option<usize> {
        self.entries.get(name).map(|s| s.line)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.entries.iter().map(|(k, s)| (k.as_str(), s.offset))
    }

    fn define(&mut self, name: &str, offset: u32, line: usize) -> Result<(), AsmError> {
        if let Some(prev) = self.entries.get(name) {
            return Err(AsmError::new(
                line,
                AsmErrorKind::DuplicateLabel {
                    name: name.to_string(),
                    first_line: prev.line,
                },
            ));
        }
        self.entries.insert(name.to_string(), Symbol { offset, line });
        Ok(())
    }
}

/// Parsed source after pass 1: every line, its offset, and the symbol table.
#[derive(Debug, Clone)]
pub struct AssemblyProgram {
    lines: Vec<(SourceLine, u32)>,
    symbols: SymbolTable,
    len: usize,
}

impl AssemblyProgram {
    /// Pass 1: parse every line and compute offsets. No code is generated.
    pub fn parse(source: &str) -> Result<Self, AsmError> {
        let mut symbols = SymbolTable::default();
        let mut lines = Vec::new();
        let mut offset: usize = 0;
        for (idx, text) in source.lines().enumerate() {
            let line = parse_line(idx + 1, text)?;
            match &line.kind {
                LineKind::Blank => {}
                LineKind::Label(name) => symbols.define(name, offset as u32, line.number)?,
                LineKind::Instruction { opcode, .. } => {
                    let at = offset;
                    offset += opcode.encoded_len();
                    if offset > MAX_IMAGE_LEN {
                        return Err(AsmError::new(line.number, AsmErrorKind::ImageTooLarge));
                    }
                    lines.push((line, at as u32));
                    continue;
                }
            }
            lines.push((line, offset as u32));
        }
        Ok(Self {
            lines,
            symbols,
            len: offset,
        })
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    /// Lines paired with the offset at which they sit.
    pub fn lines(&self) -> impl Iterator<Item = (&SourceLine, u32)> {
        self.lines.iter().map(|(l, o)| (l, *o))
    }

    /// Size in bytes of the image pass 2 will produce.
    pub fn image_len(&self) -> usize {
        self.len
    }

    /// Pass 2: emit bytes, resolving label operands through the symbol table.
    pub fn emit(&self) -> Result<FlashImage, AsmError> {
        let mut out = Vec::with_capacity(self.len);
        for (line, offset) in &self.lines {
            let LineKind::Instruction { opcode, operand } = &line.kind else {
                continue;
            };
            assert_eq!(
                out.len(),
                *offset as usize,
                "pass 2 offset diverged from pass 1 on line {}",
                line.number
            );
            let imm = match operand {
                None => None,
                Some(Operand::Literal(v)) => Some(*v),
                Some(Operand::Label(name)) => Some(self.symbols.get(name).ok_or_else(|| {
                    AsmError::new(line.number, AsmErrorKind::UndefinedLabel(name.clone()))
                })?),
            };
            // parse_line already checked operand presence against the opcode
            Instruction::new(*opcode, imm)
                .expect("operand arity validated during parsing")
                .encode_into(&mut out);
        }
        debug_assert_eq!(out.len(), self.len);
        Ok(FlashImage::new(out).expect("length bounded in pass 1"))
    }
}

/// Pass 1 only.
pub fn scan_labels(source: &str) -> Result<SymbolTable, AsmError> {
    AssemblyProgram::parse(source).map(|p| p.symbols)
}

/// Both passes.
pub fn assemble(source: &str) -> Result<FlashImage, AsmError> {
    AssemblyProgram::parse(source)?.emit()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DisasmError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(
        "branch at 0x{branch:06x} targets 0x{target:06x}, inside the instruction at 0x{instruction:06x}"
    )]
    TargetInsideInstruction {
        branch: usize,
        target: u32,
        instruction: usize,
    },
}

/// Synthetic label name used for branch targets.
pub fn synthetic_label(offset: u32) -> String {
    format!("L_{offset:06x}")
}

/// Renders `image` as source that reassembles to the same bytes.
///
/// Each address targeted by `br_if`, `jump` or `call` gets a `L_<hex>` label.
/// Targets beyond the end of the image stay numeric.
pub fn disassemble(image: &FlashImage) -> Result<String, DisasmError> {
    let decoded: Vec<(usize, Instruction)> = image.instructions().collect::<Result<_, _>>()?;
    let starts: BTreeSet<usize> = decoded.iter().map(|(at, _)| *at).collect();
    let len = image.len();

    let mut labels = BTreeSet::new();
    for (at, instr) in &decoded {
        if !instr.opcode().is_branch() {
            continue;
        }
        let target = instr.immediate().unwrap_or_default();
        let t = target as usize;
        if t == len || starts.contains(&t) {
            labels.insert(target);
        } else if t < len {
            let instruction = *starts.range(..t).next_back().unwrap_or(&0);
            return Err(DisasmError::TargetInsideInstruction {
                branch: *at,
                target,
                instruction,
            });
        }
    }

    let mut out = String::new();
    for (at, instr) in &decoded {
        let at = *at as u32;
        if labels.contains(&at) {
            out.push_str(&format!(":{}\n", synthetic_label(at)));
        }
        out.push_str("    ");
        out.push_str(instr.opcode().mnemonic());
        if let Some(imm) = instr.immediate() {
            if instr.opcode().is_branch() {
                if labels.contains(&imm) {
                    out.push_str(&format!(" :{}", synthetic_label(imm)));
                } else {
                    out.push_str(&format!(" 0x{imm:08x}"));
                }
            } else {
                out.push_str(&format!(" {imm}"));
            }
        }
        out.push('\n');
    }
    if labels.contains(&(len as u32)) && !decoded.is_empty() {
        out.push_str(&format!(":{}\n", synthetic_label(len as u32)));
    }
    Ok(out)
}
