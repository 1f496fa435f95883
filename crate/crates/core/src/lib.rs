//! Toolchain for a 32-bit dual-stack soft core with a WebAssembly-flavoured
//! instruction set: assembler, disassembler and a cycle-accurate emulator
//! with flash and UART timing models.

pub mod assembler;
pub mod devices;
pub mod emulator;
pub mod isa;
pub mod programs;

pub use assembler::{assemble, disassemble, scan_labels, AsmError, AssemblyProgram, SymbolTable};
pub use devices::{DeviceBus, FlashModel, RxScript, UartModel};
pub use emulator::{
    report_mips, run, trace_line, Machine, MachineConfig, MachineState, RunLimits, RunOutcome,
    StopReason,
};
pub use isa::{FlashImage, Instruction, Opcode};
