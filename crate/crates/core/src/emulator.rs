//! Cycle-accurate model of the core's control FSM.
//!
//! Each call to [`Machine::step`] advances one FSM transition. With the default
//! 3-cycle flash latency a simple instruction takes 5 cycles
//! (FETCH, FETCH_WAIT_LOW, FETCH_WAIT_HIGH, DECODE, EXECUTE), an instruction
//! with an immediate takes 17 (four more 3-cycle flash reads in FETCH_IMM), and
//! comparisons spend one extra cycle in ALU_WAIT writing back the result that
//! EXECUTE latched into `temp_alu`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::devices::DeviceBus;
use crate::isa::{Instruction, Opcode, IMMEDIATE_LEN};

pub const STACK_DEPTH: usize = 8;
pub const RAM_SIZE: usize = 1024;

const SP_MASK: u8 = (STACK_DEPTH - 1) as u8;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum StackMode {
    /// Hardware behaviour: the 3-bit pointer wraps silently.
    #[default]
    Faithful,
    /// Overflow and underflow trap.
    Strict,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum StackKind {
    Data,
    Return,
}

impl fmt::Display for StackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StackKind::Data => "data",
            StackKind::Return => "return",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Error)]
pub enum StackError {
    #[error("stack overflow")]
    Overflow,
    #[error("stack underflow")]
    Underflow,
}

/// Eight 32-bit slots addressed by a 3-bit pointer.
///
/// `sp` indexes the current top element and starts at 7, so the first push
/// lands in slot 0. `depth` is bookkeeping only; the hardware has no notion of
/// an empty or full stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackBank {
    slots: [u32; STACK_DEPTH],
    sp: u8,
    depth: i64,
}

impl Default for StackBank {
    fn default() -> Self {
        Self {
            slots: [0; STACK_DEPTH],
            sp: SP_MASK,
            depth: 0,
        }
    }
}

impl StackBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sp(&self) -> u8 {
        self.sp
    }

    /// Pushes minus pops since reset. Outside `0..=8` the stack has wrapped.
    pub fn depth(&self) -> i64 {
        self.depth
    }

    pub fn slots(&self) -> &[u32; STACK_DEPTH] {
        &self.slots
    }

    /// Value in the slot under the pointer, whatever the depth.
    pub fn top(&self) -> u32 {
        self.slots[self.sp as usize]
    }

    /// `n`-th value below the top; `peek(0)` is the top.
    pub fn peek(&self, n: u8) -> u32 {
        self.slots[(self.sp.wrapping_sub(n) & SP_MASK) as usize]
    }

    pub fn push(&mut self, value: u32, mode: StackMode) -> Result<(), StackError> {
        if mode == StackMode::Strict && self.depth >= STACK_DEPTH as i64 {
            return Err(StackError::Overflow);
        }
        self.sp = (self.sp + 1) & SP_MASK;
        self.slots[self.sp as usize] = value;
        self.depth += 1;
        Ok(())
    }

    pub fn pop(&mut self, mode: StackMode) -> Result<u32, StackError> {
        if mode == StackMode::Strict && self.depth <= 0 {
            return Err(StackError::Underflow);
        }
        let value = self.top();
        self.retreat();
        Ok(value)
    }

    fn retreat(&mut self) {
        self.sp = self.sp.wrapping_sub(1) & SP_MASK;
        self.depth -= 1;
    }

    fn set_top(&mut self, value: u32) {
        self.slots[self.sp as usize] = value;
    }

    fn swap_top(&mut self) {
        let below = (self.sp.wrapping_sub(1) & SP_MASK) as usize;
        self.slots.swap(self.sp as usize, below);
    }

    /// Whether consuming `pops` and then producing `pushes` stays within the
    /// physical depth.
    fn check(&self, pops: i64, pushes: i64) -> Result<(), StackError> {
        if self.depth < pops {
            Err(StackError::Underflow)
        } else if self.depth - pops + pushes > STACK_DEPTH as i64 {
            Err(StackError::Overflow)
        } else {
            Ok(())
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum FsmState {
    Fetch,
    FetchWaitLow,
    FetchWaitHigh,
    Decode,
    FetchImm,
    Execute,
    AluWait,
    UartWait,
    KeyWait,
    Halted,
    Trapped,
}

impl FsmState {
    pub fn name(self) -> &'static str {
        match self {
            FsmState::Fetch => "FETCH",
            FsmState::FetchWaitLow => "FETCH_WAIT_LOW",
            FsmState::FetchWaitHigh => "FETCH_WAIT_HIGH",
            FsmState::Decode => "DECODE",
            FsmState::FetchImm => "FETCH_IMM",
            FsmState::Execute => "EXECUTE",
            FsmState::AluWait => "ALU_WAIT",
            FsmState::UartWait => "UART_WAIT",
            FsmState::KeyWait => "KEY_WAIT",
            FsmState::Halted => "HALTED",
            FsmState::Trapped => "TRAPPED",
        }
    }

    pub fn is_stopped(self) -> bool {
        matches!(self, FsmState::Halted | FsmState::Trapped)
    }
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// In-flight instruction registers.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct Pending {
    /// Address of the instruction being processed.
    pub pc: u32,
    /// Cycle at which its opcode fetch began.
    pub start_cycle: u64,
    pub opcode_byte: u8,
    pub opcode: Option<Opcode>,
    pub immediate: u32,
    /// Immediate bytes assembled so far (0..=4).
    pub imm_index: u8,
    /// Byte returned by the flash read in progress.
    latch: u8,
    /// Remaining cycles of the current wait, `None` while blocked on input
    /// that will never come.
    wait: Option<u64>,
    /// Received byte to push when KEY_WAIT completes.
    key: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineState {
    pub pc: u32,
    pub data: StackBank,
    pub ret: StackBank,
    pub ram: [u8; RAM_SIZE],
    pub fsm: FsmState,
    pub cycle: u64,
    pub retired: u64,
    pub pending: Pending,
    pub temp_alu: u32,
}

impl Default for MachineState {
    fn default() -> Self {
        Self {
            pc: 0,
            data: StackBank::new(),
            ret: StackBank::new(),
            ram: [0; RAM_SIZE],
            fsm: FsmState::Fetch,
            cycle: 0,
            retired: 0,
            pending: Pending::default(),
            temp_alu: 0,
        }
    }
}

impl MachineState {
    /// Little-endian word at a RAM address, if in range.
    pub fn ram_word(&self, addr: usize) -> Option<u32> {
        self.ram
            .get(addr..addr + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TrapKind {
    #[error("unknown opcode 0x{0:02x}")]
    UnknownOpcode(u8),
    #[error("fetch from 0x{addr:06x} is outside the flash image")]
    FetchOutOfImage { addr: u32 },
    #[error("ram access at 0x{addr:08x} is out of bounds")]
    RamOutOfBounds { addr: u32 },
    #[error("ram access at 0x{addr:08x} is not word aligned")]
    RamMisaligned { addr: u32 },
    #[error("control transfer to 0x{target:08x} is outside the flash image")]
    JumpOutOfImage { target: u32 },
    #[error("{0} stack overflow")]
    StackOverflow(StackKind),
    #[error("{0} stack underflow")]
    StackUnderflow(StackKind),
    #[error("input exhausted")]
    InputExhausted,
}

impl TrapKind {
    fn stack(kind: StackKind, err: StackError) -> Self {
        match err {
            StackError::Overflow => TrapKind::StackOverflow(kind),
            StackError::Underflow => TrapKind::StackUnderflow(kind),
        }
    }
}

/// A fault together with where it happened.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} (pc=0x{pc:06x}, opcode={}, cycle={cycle})", opcode_text(*.opcode))]
pub struct Trap {
    pub kind: TrapKind,
    /// Address of the faulting instruction.
    pub pc: u32,
    pub opcode: Option<u8>,
    pub cycle: u64,
}

fn opcode_text(byte: Option<u8>) -> String {
    match byte {
        Some(b) => match Opcode::from_byte(b) {
            Some(op) => format!("{op}"),
            None => format!("0x{b:02x}"),
        },
        None => "-".to_string(),
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum UnknownOpcodePolicy {
    #[default]
    Trap,
    Halt,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum InputExhaustedPolicy {
    /// Stop with [`TrapKind::InputExhausted`].
    #[default]
    Trap,
    /// Stay in KEY_WAIT, as the hardware would, until the cycle limit.
    Block,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct MachineConfig {
    pub stack_mode: StackMode,
    pub unknown_opcode: UnknownOpcodePolicy,
    pub input_exhausted: InputExhaustedPolicy,
    /// Collapse multi-cycle waits into a single step. Cycle counts are the
    /// same either way.
    pub fast_wait: bool,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            stack_mode: StackMode::Faithful,
            unknown_opcode: UnknownOpcodePolicy::Trap,
            input_exhausted: InputExhaustedPolicy::Trap,
            fast_wait: true,
        }
    }
}

/// How an instruction finishes after its EXECUTE cycle.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Completion {
    Done,
    /// Comparison result latched in `temp_alu`, to be written next cycle.
    AluWait,
    /// Transmitter still busy with the previous frame.
    UartWait(u64),
    /// Received byte arrives after `wait` more cycles.
    KeyWait { byte: u8, wait: u64 },
    /// No input will ever arrive.
    KeyBlocked,
}

/// Per-opcode stack effects as `(data pops, data pushes, return pops, return pushes)`.
fn stack_effect(op: Opcode) -> (i64, i64, i64, i64) {
    use Opcode::*;
    match op {
        Push | Key => (0, 1, 0, 0),
        Drop | BrIf | Print => (1, 0, 0, 0),
        Dup => (1, 2, 0, 0),
        Swap => (2, 2, 0, 0),
        Over => (2, 3, 0, 0),
        Add | Sub | Mul | And | Or | Eq | LtS | GtS => (2, 1, 0, 0),
        Not | Eqz | Load => (1, 1, 0, 0),
        Store => (2, 0, 0, 0),
        Jump => (0, 0, 0, 0),
        Call => (0, 0, 0, 1),
        Ret => (0, 0, 1, 0),
    }
}

fn ram_address(addr: u32) -> Result<usize, TrapKind> {
    if addr as u64 + 3 >= RAM_SIZE as u64 {
        return Err(TrapKind::RamOutOfBounds { addr });
    }
    if !addr.is_multiple_of(4) {
        return Err(TrapKind::RamMisaligned { addr });
    }
    Ok(addr as usize)
}

fn jump_target(target: u32, bus: &DeviceBus) -> Result<u32, TrapKind> {
    if target as usize >= bus.flash.image().len() {
        return Err(TrapKind::JumpOutOfImage { target });
    }
    Ok(target)
}

/// Performs the EXECUTE cycle of `instr` at `state.pc`.
///
/// All checks run before any state is modified, so a trap leaves the machine
/// as it was at EXECUTE entry. On success `state.pc` holds the address of the
/// next instruction to fetch. Comparisons only latch their result and move the
/// stack pointer; [`write_back_comparison`] finishes them.
pub fn exec_instruction(
    state: &mut MachineState,
    instr: Instruction,
    bus: &mut DeviceBus,
    config: &MachineConfig,
) -> Result<Completion, TrapKind> {
    use Opcode::*;

    let op = instr.opcode();
    let imm = instr.immediate().unwrap_or(0);
    let mode = config.stack_mode;
    let next_pc = state.pc.wrapping_add(instr.encoded_len() as u32);

    if mode == StackMode::Strict {
        let (dpop, dpush, rpop, rpush) = stack_effect(op);
        state
            .data
            .check(dpop, dpush)
            .map_err(|e| TrapKind::stack(StackKind::Data, e))?;
        state
            .ret
            .check(rpop, rpush)
            .map_err(|e| TrapKind::stack(StackKind::Return, e))?;
    }

    // Strict-mode bounds were validated above, so stack operations below
    // cannot fail.
    let data = &mut state.data;
    let f = StackMode::Faithful;
    let binary = |data: &mut StackBank, apply: fn(u32, u32) -> u32| {
        let b = data.pop(f).unwrap();
        let a = data.pop(f).unwrap();
        data.push(apply(a, b), f).unwrap();
    };

    let mut pc = next_pc;
    let completion = match op {
        Push => {
            data.push(imm, f).unwrap();
            Completion::Done
        }
        Drop => {
            data.pop(f).unwrap();
            Completion::Done
        }
        Dup => {
            data.push(data.top(), f).unwrap();
            Completion::Done
        }
        Swap => {
            data.swap_top();
            Completion::Done
        }
        Over => {
            data.push(data.peek(1), f).unwrap();
            Completion::Done
        }
        Add => {
            binary(data, u32::wrapping_add);
            Completion::Done
        }
        Sub => {
            binary(data, u32::wrapping_sub);
            Completion::Done
        }
        Mul => {
            binary(data, u32::wrapping_mul);
            Completion::Done
        }
        And => {
            binary(data, |a, b| a & b);
            Completion::Done
        }
        Or => {
            binary(data, |a, b| a | b);
            Completion::Done
        }
        Not => {
            data.set_top(!data.top());
            Completion::Done
        }
        Eq | LtS | GtS => {
            let (a, b) = (data.peek(1), data.peek(0));
            let result = match op {
                Eq => a == b,
                LtS => (a as i32) < (b as i32),
                _ => (a as i32) > (b as i32),
            };
            state.temp_alu = result as u32;
            data.retreat();
            Completion::AluWait
        }
        Eqz => {
            state.temp_alu = (data.top() == 0) as u32;
            Completion::AluWait
        }
        BrIf => {
            if data.top() != 0 {
                pc = jump_target(imm, bus)?;
            }
            data.pop(f).unwrap();
            Completion::Done
        }
        Jump => {
            pc = jump_target(imm, bus)?;
            Completion::Done
        }
        Call => {
            pc = jump_target(imm, bus)?;
            state.ret.push(next_pc, f).unwrap();
            Completion::Done
        }
        Ret => {
            pc = jump_target(state.ret.top(), bus)?;
            state.ret.pop(f).unwrap();
            Completion::Done
        }
        Load => {
            let addr = ram_address(data.top())?;
            let word = u32::from_le_bytes(state.ram[addr..addr + 4].try_into().unwrap());
            data.set_top(word);
            Completion::Done
        }
        Store => {
            let addr = ram_address(data.peek(0))?;
            let value = data.peek(1);
            data.pop(f).unwrap();
            data.pop(f).unwrap();
            state.ram[addr..addr + 4].copy_from_slice(&value.to_le_bytes());
            Completion::Done
        }
        Print => {
            let byte = data.top() as u8;
            data.pop(f).unwrap();
            match bus.uart.tx(byte, state.cycle) {
                0 => Completion::Done,
                stall => Completion::UartWait(stall),
            }
        }
        Key => match bus.uart.rx_next(state.cycle) {
            Some((byte, 0)) => {
                data.push(byte as u32, f).unwrap();
                Completion::Done
            }
            Some((byte, wait)) => Completion::KeyWait { byte, wait },
            None => match config.input_exhausted {
                InputExhaustedPolicy::Trap => return Err(TrapKind::InputExhausted),
                InputExhaustedPolicy::Block => Completion::KeyBlocked,
            },
        },
    };
    state.pc = pc;
    Ok(completion)
}

/// The ALU_WAIT cycle: the pointer has settled, store `temp_alu` at the top.
pub fn write_back_comparison(state: &mut MachineState) {
    state.data.set_top(state.temp_alu);
}

/// An instruction that completed during a step.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Retired {
    pub pc: u32,
    pub instr: Instruction,
    pub start_cycle: u64,
    /// Cycle count after the instruction's last cycle.
    pub end_cycle: u64,
}

impl Retired {
    pub fn cycles(&self) -> u64 {
        self.end_cycle - self.start_cycle
    }
}

/// One trace line per retired instruction:
/// `cycle=<dec> pc=<6-hex> op=<mnemonic> imm=<8-hex or -> sp=<0-7> tos=<8-hex> rsp=<0-7>`.
///
/// `pc` is the instruction's own address; every other field is read from
/// the state after it retired.
pub fn trace_line(retired: &Retired, after: &MachineState) -> String {
    let imm = match retired.instr.immediate() {
        Some(v) => format!("{v:08x}"),
        None => "-".to_string(),
    };
    format!(
        "cycle={} pc={:06x} op={} imm={} sp={} tos={:08x} rsp={}",
        after.cycle,
        retired.pc,
        retired.instr.opcode().mnemonic(),
        imm,
        after.data.sp(),
        after.data.top(),
        after.ret.sp()
    )
}

/// Why a run ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopReason {
    CycleLimit,
    /// Reached a breakpoint before fetching the instruction at this address.
    Breakpoint(u32),
    Trapped(Trap),
    Halted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::CycleLimit => f.write_str("cycle-limit"),
            StopReason::Breakpoint(pc) => write!(f, "breakpoint at 0x{pc:06x}"),
            StopReason::Trapped(trap) => write!(f, "trap: {trap}"),
            StopReason::Halted => f.write_str("halted"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunLimits {
    pub max_cycles: u64,
    pub breakpoints: BTreeSet<u32>,
}

impl RunLimits {
    pub fn cycles(max_cycles: u64) -> Self {
        Self {
            max_cycles,
            breakpoints: BTreeSet::new(),
        }
    }

    pub fn with_breakpoint(mut self, addr: u32) -> Self {
        self.breakpoints.insert(addr);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub state: MachineState,
    pub stop: StopReason,
}

impl RunOutcome {
    pub fn trap(&self) -> Option<&Trap> {
        match &self.stop {
            StopReason::Trapped(t) => Some(t),
            _ => None,
        }
    }
}

/// Retired instructions per second, in millions.
pub fn report_mips(outcome: &RunOutcome, clock_hz: f64) -> f64 {
    mips(outcome.state.retired, outcome.state.cycle, clock_hz)
}

pub fn mips(retired: u64, cycles: u64, clock_hz: f64) -> f64 {
    if cycles == 0 {
        return 0.0;
    }
    retired as f64 / (cycles as f64 / clock_hz) / 1e6
}

/// A core with its registers. Devices are passed in on every call.
#[derive(Clone, Debug, Default)]
pub struct Machine {
    state: MachineState,
    config: MachineConfig,
    trap: Option<Trap>,
}

impl Machine {
    pub fn new(config: MachineConfig) -> Self {
        Self {
            state: MachineState::default(),
            config,
            trap: None,
        }
    }

    pub fn from_state(state: MachineState, config: MachineConfig) -> Self {
        Self {
            state,
            config,
            trap: None,
        }
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    pub fn into_state(self) -> MachineState {
        self.state
    }

    pub fn trap(&self) -> Option<&Trap> {
        self.trap.as_ref()
    }

    /// True while stuck in KEY_WAIT with no input left to receive.
    pub fn is_blocked(&self) -> bool {
        self.state.fsm == FsmState::KeyWait && self.state.pending.wait.is_none()
    }

    fn raise(&mut self, kind: TrapKind) {
        let p = &self.state.pending;
        let opcode = match self.state.fsm {
            FsmState::Fetch | FsmState::FetchWaitLow | FsmState::FetchWaitHigh => None,
            _ => Some(p.opcode_byte),
        };
        self.trap = Some(Trap {
            kind,
            pc: p.pc,
            opcode,
            cycle: self.state.cycle,
        });
        self.state.fsm = FsmState::Trapped;
    }

    fn retire(&mut self) -> Retired {
        let p = &self.state.pending;
        let opcode = p.opcode.expect("retiring a decoded instruction");
        let instr = Instruction::new(opcode, opcode.has_immediate().then_some(p.immediate))
            .expect("immediate presence follows opcode");
        self.state.retired += 1;
        self.state.fsm = FsmState::Fetch;
        Retired {
            pc: p.pc,
            instr,
            start_cycle: p.start_cycle,
            end_cycle: self.state.cycle,
        }
    }

    /// Cycles a wait state consumes in this step.
    fn wait_slice(&self, remaining: u64, budget: u64) -> u64 {
        if self.config.fast_wait {
            remaining.min(budget).max(1)
        } else {
            1
        }
    }

    /// Advances one FSM transition. Returns the instruction that retired in
    /// this step, if any. Faults move the machine to TRAPPED without
    /// consuming a cycle.
    pub fn step(&mut self, bus: &mut DeviceBus) -> Option<Retired> {
        self.advance(bus, u64::MAX)
    }

    fn advance(&mut self, bus: &mut DeviceBus, budget: u64) -> Option<Retired> {
        let s = &mut self.state;
        match s.fsm {
            FsmState::Halted | FsmState::Trapped => None,
            FsmState::Fetch => {
                s.pending = Pending {
                    pc: s.pc,
                    start_cycle: s.cycle,
                    ..Pending::default()
                };
                let (byte, latency) = match bus.flash.fetch(s.pc) {
                    Ok(r) => r,
                    Err(_) => {
                        let addr = s.pc;
                        self.raise(TrapKind::FetchOutOfImage { addr });
                        return None;
                    }
                };
                s.pending.latch = byte;
                s.cycle += 1;
                s.fsm = match latency {
                    1 => {
                        s.pending.opcode_byte = byte;
                        FsmState::Decode
                    }
                    2 => FsmState::FetchWaitHigh,
                    n => {
                        s.pending.wait = Some(n as u64 - 2);
                        FsmState::FetchWaitLow
                    }
                };
                None
            }
            FsmState::FetchWaitLow => {
                let remaining = s.pending.wait.unwrap_or(1);
                let slice = self.wait_slice(remaining, budget);
                let s = &mut self.state;
                s.cycle += slice;
                s.pending.wait = Some(remaining - slice);
                if remaining == slice {
                    s.fsm = FsmState::FetchWaitHigh;
                }
                None
            }
            FsmState::FetchWaitHigh => {
                s.cycle += 1;
                s.pending.opcode_byte = s.pending.latch;
                s.fsm = FsmState::Decode;
                None
            }
            FsmState::Decode => {
                let byte = s.pending.opcode_byte;
                let Some(op) = Opcode::from_byte(byte) else {
                    match self.config.unknown_opcode {
                        UnknownOpcodePolicy::Trap => self.raise(TrapKind::UnknownOpcode(byte)),
                        UnknownOpcodePolicy::Halt => self.state.fsm = FsmState::Halted,
                    }
                    return None;
                };
                s.cycle += 1;
                s.pending.opcode = Some(op);
                s.pending.wait = None;
                s.fsm = if op.has_immediate() {
                    FsmState::FetchImm
                } else {
                    FsmState::Execute
                };
                None
            }
            FsmState::FetchImm => {
                if s.pending.wait.is_none() {
                    let addr = s.pending.pc + 1 + s.pending.imm_index as u32;
                    match bus.flash.fetch(addr) {
                        Ok((byte, latency)) => {
                            s.pending.latch = byte;
                            s.pending.wait = Some(latency as u64);
                        }
                        Err(_) => {
                            self.raise(TrapKind::FetchOutOfImage { addr });
                            return None;
                        }
                    }
                }
                s.cycle += 1;
                let left = s.pending.wait.unwrap() - 1;
                if left > 0 {
                    s.pending.wait = Some(left);
                    return None;
                }
                let p = &mut s.pending;
                p.immediate |= (p.latch as u32) << (8 * p.imm_index as u32);
                p.imm_index += 1;
                p.wait = None;
                if p.imm_index as usize == IMMEDIATE_LEN {
                    s.fsm = FsmState::Execute;
                }
                None
            }
            FsmState::Execute => {
                let p = s.pending;
                let op = p.opcode.expect("decoded before execute");
                let instr = Instruction::new(op, op.has_immediate().then_some(p.immediate))
                    .expect("immediate presence follows opcode");
                match exec_instruction(s, instr, bus, &self.config) {
                    Err(kind) => {
                        self.raise(kind);
                        None
                    }
                    Ok(completion) => {
                        let s = &mut self.state;
                        s.cycle += 1;
                        match completion {
                            Completion::Done => return Some(self.retire()),
                            Completion::AluWait => s.fsm = FsmState::AluWait,
                            Completion::UartWait(n) => {
                                s.pending.wait = Some(n);
                                s.fsm = FsmState::UartWait;
                            }
                            Completion::KeyWait { byte, wait } => {
                                s.pending.key = byte;
                                s.pending.wait = Some(wait);
                                s.fsm = FsmState::KeyWait;
                            }
                            Completion::KeyBlocked => {
                                s.pending.wait = None;
                                s.fsm = FsmState::KeyWait;
                            }
                        }
                        None
                    }
                }
            }
            FsmState::AluWait => {
                write_back_comparison(s);
                s.cycle += 1;
                Some(self.retire())
            }
            FsmState::UartWait | FsmState::KeyWait => {
                let Some(remaining) = s.pending.wait else {
                    // blocked on input that will never arrive
                    s.cycle += 1;
                    return None;
                };
                let slice = self.wait_slice(remaining, budget);
                let s = &mut self.state;
                s.cycle += slice;
                s.pending.wait = Some(remaining - slice);
                if remaining > slice {
                    return None;
                }
                if s.fsm == FsmState::KeyWait {
                    let key = s.pending.key as u32;
                    // capacity was checked at EXECUTE
                    s.data.push(key, StackMode::Faithful).unwrap();
                }
                Some(self.retire())
            }
        }
    }

    /// Steps until a stop condition.
    ///
    /// Breakpoints are checked at FETCH entry; the instruction the run starts
    /// on is never reported as a breakpoint, so a stopped run can be resumed.
    pub fn run(
        &mut self,
        bus: &mut DeviceBus,
        limits: &RunLimits,
        mut on_retire: impl FnMut(&Retired, &MachineState),
    ) -> StopReason {
        let mut resumed = false;
        loop {
            match self.state.fsm {
                FsmState::Halted => return StopReason::Halted,
                FsmState::Trapped => {
                    return StopReason::Trapped(self.trap.clone().expect("trap recorded"))
                }
                FsmState::Fetch if resumed && limits.breakpoints.contains(&self.state.pc) => {
                    return StopReason::Breakpoint(self.state.pc)
                }
                _ => {}
            }
            if self.state.cycle >= limits.max_cycles {
                return StopReason::CycleLimit;
            }
            let budget = limits.max_cycles - self.state.cycle;
            if self.is_blocked() && self.config.fast_wait {
                self.state.cycle = limits.max_cycles;
                continue;
            }
            if let Some(retired) = self.advance(bus, budget) {
                resumed = true;
                on_retire(&retired, &self.state);
            }
        }
    }
}

/// Runs a fresh machine from address 0 against `bus`.
pub fn run(bus: &mut DeviceBus, limits: &RunLimits, config: MachineConfig) -> RunOutcome {
    let mut machine = Machine::new(config);
    let stop = machine.run(bus, limits, |_, _| {});
    RunOutcome {
        state: machine.into_state(),
        stop,
    }
}
