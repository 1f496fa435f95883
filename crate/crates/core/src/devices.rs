//! Peripheral timing models: execute-in-place flash and the UART.

use std::collections::VecDeque;
use std::fmt;
use std::io::Read;

use thiserror::Error;

use crate::isa::FlashImage;

/// Core clock of the reference board.
pub const DEFAULT_CLOCK_HZ: u64 = 27_000_000;
pub const DEFAULT_BAUD: u64 = 115_200;
/// Cycles to read one byte from flash. With DECODE and EXECUTE this gives the
/// 5-cycle cost of a simple instruction.
pub const DEFAULT_FLASH_LATENCY: u32 = 3;
/// `round(27 MHz / 115200)`.
pub const DEFAULT_UART_DIVISOR: u32 = 234;
/// Start bit, 8 data bits, stop bit.
pub const FRAME_BITS: u32 = 10;

/// Nearest integer clock divisor for `baud`.
pub fn uart_divisor(clock_hz: u64, baud: u64) -> u32 {
    ((clock_hz + baud / 2) / baud) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("flash address 0x{addr:06x} is outside the {len}-byte image")]
    OutOfImage { addr: u32, len: usize },
    #[error("flash latency must be at least 1 cycle")]
    ZeroLatency,
    #[error("uart divisor must be at least 1")]
    ZeroDivisor,
}

#[derive(Debug, Clone)]
pub struct FlashModel {
    image: FlashImage,
    latency: u32,
}

impl FlashModel {
    pub fn new(image: FlashImage) -> Self {
        Self {
            image,
            latency: DEFAULT_FLASH_LATENCY,
        }
    }

    pub fn with_latency(image: FlashImage, latency: u32) -> Result<Self, DeviceError> {
        if latency == 0 {
            return Err(DeviceError::ZeroLatency);
        }
        Ok(Self { image, latency })
    }

    pub fn image(&self) -> &FlashImage {
        &self.image
    }

    pub fn latency(&self) -> u32 {
        self.latency
    }

    /// Reads one byte, returning it with the cycles the read takes.
    pub fn fetch(&self, addr: u32) -> Result<(u8, u32), DeviceError> {
        self.image
            .get(addr)
            .map(|b| (b, self.latency))
            .ok_or(DeviceError::OutOfImage {
                addr,
                len: self.image.len(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RxEntry {
    /// Cycle at which the byte appears on the receiver.
    pub available_at: u64,
    pub byte: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rx script line {line}: {reason}")]
pub struct ScriptError {
    pub line: usize,
    pub reason: String,
}

/// Timed receive data, one `<cycle>:<byte>` entry per line.
///
/// The byte is either a quoted character (`'3'`, `'\n'`) or hex (`0x33` or
/// `33`). Blank lines and lines starting with `#` are ignored. Cycles must not
/// decrease.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RxScript {
    entries: Vec<RxEntry>,
}

impl RxScript {
    pub fn new(entries: Vec<RxEntry>) -> Self {
        Self { entries }
    }

    /// All bytes available from cycle 0.
    pub fn immediate(bytes: &[u8]) -> Self {
        Self {
            entries: bytes
                .iter()
                .map(|&byte| RxEntry {
                    available_at: 0,
                    byte,
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[RxEntry] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut entries = Vec::new();
        let mut last = 0u64;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |reason: String| ScriptError { line, reason };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (cycle, byte) = trimmed
                .split_once(':')
                .ok_or_else(|| err("expected `<cycle>:<byte>`".into()))?;
            let cycle: u64 = cycle
                .trim()
                .parse()
                .map_err(|_| err(format!("invalid cycle `{}`", cycle.trim())))?;
            if cycle < last {
                return Err(err(format!("cycle {cycle} is earlier than {last}")));
            }
            last = cycle;
            let byte = parse_script_byte(byte.trim()).ok_or_else(|| err(format!("invalid byte `{}`", byte.trim())))?;
            entries.push(RxEntry {
                available_at: cycle,
                byte,
            });
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let b = e.byte;
            if b.is_ascii_graphic() && b != b'\'' && b != b'\\' || b == b' ' {
                out.push_str(&format!("{}:'{}'\n", e.available_at, b as char));
            } else {
                out.push_str(&format!("{}:0x{:02x}\n", e.available_at, b));
            }
        }
        out
    }
}

fn parse_script_byte(text: &str) -> Option<u8> {
    if let Some(inner) = text.strip_prefix('\'').and_then(|t| t.strip_suffix('\'')) {
        return match inner.as_bytes() {
            [b'\\', esc] => match esc {
                b'n' => Some(b'\n'),
                b'r' => Some(b'\r'),
                b't' => Some(b'\t'),
                b'0' => Some(0),
                b'\\' => Some(b'\\'),
                b'\'' => Some(b'\''),
                _ => None,
            },
            [c] if c.is_ascii() => Some(*c),
            _ => None,
        };
    }
    let hex = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .unwrap_or(text);
    if hex.is_empty() || hex.len() > 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

/// Where received bytes come from.
pub enum RxInput {
    Script(VecDeque<RxEntry>),
    /// Live console input; each byte costs one cycle once it arrives.
    Live(Box<dyn Read + Send>),
}

impl fmt::Debug for RxInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RxInput::Script(q) => f.debug_tuple("Script").field(q).finish(),
            RxInput::Live(_) => f.write_str("Live(..)"),
        }
    }
}

/// A byte sent by the transmitter and the cycle its start bit went out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxRecord {
    pub byte: u8,
    pub start_cycle: u64,
}

#[derive(Debug)]
pub struct UartModel {
    divisor: u32,
    tx_busy_until: u64,
    tx_log: Vec<TxRecord>,
    rx: RxInput,
}

impl UartModel {
    pub fn new(divisor: u32, script: RxScript) -> Result<Self, DeviceError> {
        Self::with_input(divisor, RxInput::Script(script.entries.into()))
    }

    pub fn with_input(divisor: u32, rx: RxInput) -> Result<Self, DeviceError> {
        if divisor == 0 {
            return Err(DeviceError::ZeroDivisor);
        }
        Ok(Self {
            divisor,
            tx_busy_until: 0,
            tx_log: Vec::new(),
            rx,
        })
    }

    pub fn divisor(&self) -> u32 {
        self.divisor
    }

    /// Transmitter busy time for one byte.
    pub fn frame_cycles(&self) -> u64 {
        FRAME_BITS as u64 * self.divisor as u64
    }

    pub fn tx_busy_until(&self) -> u64 {
        self.tx_busy_until
    }

    /// Queues `byte` for transmission at cycle `now`.
    ///
    /// Returns the cycles the caller must stall until the previous frame has
    /// finished shifting out; zero when the transmitter is idle.
    pub fn tx(&mut self, byte: u8, now: u64) -> u64 {
        let stall = self.tx_busy_until.saturating_sub(now);
        let start_cycle = now + stall;
        self.tx_busy_until = start_cycle + self.frame_cycles();
        self.tx_log.push(TxRecord { byte, start_cycle });
        stall
    }

    /// Next received byte and the cycles until it is available, or `None`
    /// when no more input will arrive.
    pub fn rx_next(&mut self, now: u64) -> Option<(u8, u64)> {
        match &mut self.rx {
            RxInput::Script(queue) => queue
                .pop_front()
                .map(|e| (e.byte, e.available_at.saturating_sub(now))),
            RxInput::Live(reader) => {
                let mut buf = [0u8; 1];
                loop {
                    match reader.read(&mut buf) {
                        Ok(0) => return None,
                        Ok(_) => return Some((buf[0], 1)),
                        Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                        Err(_) => return None,
                    }
                }
            }
        }
    }

    /// Remaining scripted input, if the receiver is script-driven.
    pub fn pending_rx(&self) -> Option<usize> {
        match &self.rx {
            RxInput::Script(q) => Some(q.len()),
            RxInput::Live(_) => None,
        }
    }

    pub fn tx_log(&self) -> &[TxRecord] {
        &self.tx_log
    }

    /// Transmitted bytes in order.
    pub fn output(&self) -> Vec<u8> {
        self.tx_log.iter().map(|r| r.byte).collect()
    }
}

/// Line levels of one transmitted frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    /// Start bit, data LSB first, stop bit.
    pub levels: [u8; FRAME_BITS as usize],
    pub bit_period_s: f64,
}

pub fn uart_waveform(byte: u8, clock_hz: f64, divisor: u32) -> Waveform {
    let mut levels = [0u8; FRAME_BITS as usize];
    for (i, level) in levels[1..9].iter_mut().enumerate() {
        *level = (byte >> i) & 1;
    }
    levels[9] = 1;
    Waveform {
        levels,
        bit_period_s: divisor as f64 / clock_hz,
    }
}

impl Waveform {
    /// CSV with header `bit_index,level,start_time_us`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bit_index,level,start_time_us\n");
        for (i, level) in self.levels.iter().enumerate() {
            let start_us = i as f64 * self.bit_period_s * 1e6;
            out.push_str(&format!("{i},{level},{start_us:.3}\n"));
        }
        out
    }

    /// Line level sampled `per_bit` times per bit period.
    pub fn samples(&self, per_bit: usize) -> Vec<u8> {
        self.levels
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, per_bit))
            .collect()
    }
}

/// Recovers a byte from an oversampled frame by sampling each bit at its
/// midpoint. Returns `None` on a framing error.
pub fn decode_frame(samples: &[u8], per_bit: usize) -> Option<u8> {
    if per_bit == 0 || samples.len() < FRAME_BITS as usize * per_bit {
        return None;
    }
    let bit = |i: usize| samples[i * per_bit + per_bit / 2];
    if bit(0) != 0 || bit(9) != 1 {
        return None;
    }
    Some((0..8).fold(0u8, |acc, i| acc | (bit(i + 1) & 1) << i))
}

/// Devices reachable from the core.
#[derive(Debug)]
pub struct DeviceBus {
    pub flash: FlashModel,
    pub uart: UartModel,
}

impl DeviceBus {
    pub fn new(flash: FlashModel, uart: UartModel) -> Self {
        Self { flash, uart }
    }

    /// Default flash latency and UART divisor with scripted input.
    pub fn with_script(image: FlashImage, script: RxScript) -> Self {
        Self {
            flash: FlashModel::new(image),
            uart: UartModel::new(DEFAULT_UART_DIVISOR, script).expect("nonzero default divisor"),
        }
    }
}
