//! Reference interpreter used as a test oracle.
//!
//! Written straight from the instruction table with growable stacks, its own
//! byte decoding and no timing model. It shares no code with the emulator.

#![allow(dead_code)]

use std::collections::VecDeque;

pub struct Oracle {
    pub code: Vec<u8>,
    pub pc: usize,
    pub data: Vec<u32>,
    pub ret: Vec<u32>,
    pub ram: Vec<u8>,
    pub input: VecDeque<u8>,
    pub output: Vec<u8>,
    pub retired: u64,
}

#[derive(Debug, PartialEq, Eq)]
pub enum OracleStop {
    InputExhausted,
    StepLimit,
    /// Anything the simple model does not handle (bad opcode, bad address,
    /// stack underflow).
    Fault(String),
}

impl Oracle {
    pub fn new(code: &[u8], input: &[u8]) -> Self {
        Self {
            code: code.to_vec(),
            pc: 0,
            data: Vec::new(),
            ret: Vec::new(),
            ram: vec![0; 1024],
            input: input.iter().copied().collect(),
            output: Vec::new(),
            retired: 0,
        }
    }

    fn imm(&self) -> Result<u32, OracleStop> {
        let b = self
            .code
            .get(self.pc + 1..self.pc + 5)
            .ok_or_else(|| OracleStop::Fault("truncated".into()))?;
        Ok(b[0] as u32 | (b[1] as u32) << 8 | (b[2] as u32) << 16 | (b[3] as u32) << 24)
    }

    fn pop(&mut self) -> Result<u32, OracleStop> {
        self.data.pop().ok_or_else(|| OracleStop::Fault("underflow".into()))
    }

    fn target(&self, t: u32) -> Result<usize, OracleStop> {
        if (t as usize) < self.code.len() {
            Ok(t as usize)
        } else {
            Err(OracleStop::Fault(format!("jump to {t}")))
        }
    }

    fn ram_addr(&self, a: u32) -> Result<usize, OracleStop> {
        if a.is_multiple_of(4) && (a as u64) + 4 <= 1024 {
            Ok(a as usize)
        } else {
            Err(OracleStop::Fault(format!("ram {a}")))
        }
    }

    pub fn run(&mut self, max_steps: u64) -> OracleStop {
        for _ in 0..max_steps {
            if let Err(stop) = self.step() {
                return stop;
            }
        }
        OracleStop::StepLimit
    }

    pub fn step(&mut self) -> Result<(), OracleStop> {
        let op = *self
            .code
            .get(self.pc)
            .ok_or_else(|| OracleStop::Fault("pc out of image".into()))?;
        let mut next = self.pc + 1;
        match op {
            0x01 => {
                let v = self.imm()?;
                self.data.push(v);
                next += 4;
            }
            0x05 => {
                self.pop()?;
            }
            0x12 => {
                let v = self.pop()?;
                self.data.extend([v, v]);
            }
            0x13 => {
                let b = self.pop()?;
                let a = self.pop()?;
                self.data.extend([b, a]);
            }
            0x14 => {
                let b = self.pop()?;
                let a = self.pop()?;
                self.data.extend([a, b, a]);
            }
            0x02 | 0x03 | 0x04 | 0x16 | 0x17 | 0x09 | 0x0A | 0x0B => {
                let b = self.pop()?;
                let a = self.pop()?;
                let r = match op {
                    0x02 => a.wrapping_add(b),
                    0x03 => a.wrapping_sub(b),
                    0x04 => a.wrapping_mul(b),
                    0x16 => a & b,
                    0x17 => a | b,
                    0x09 => (a == b) as u32,
                    0x0A => ((a as i32) < (b as i32)) as u32,
                    _ => ((a as i32) > (b as i32)) as u32,
                };
                self.data.push(r);
            }
            0x19 => {
                let v = self.pop()?;
                self.data.push(!v);
            }
            0x35 => {
                let v = self.pop()?;
                self.data.push((v == 0) as u32);
            }
            0x0E => {
                let t = self.imm()?;
                next += 4;
                if self.pop()? != 0 {
                    next = self.target(t)?;
                }
            }
            0x0F => {
                next = self.target(self.imm()?)?;
            }
            0x10 => {
                self.ret.push((self.pc + 5) as u32);
                next = self.target(self.imm()?)?;
            }
            0x11 => {
                let t = self.ret.pop().ok_or_else(|| OracleStop::Fault("ret underflow".into()))?;
                next = self.target(t)?;
            }
            0x1D => {
                let raw = self.pop()?;
                let a = self.ram_addr(raw)?;
                let w = u32::from_le_bytes(self.ram[a..a + 4].try_into().unwrap());
                self.data.push(w);
            }
            0x1E => {
                let raw = self.pop()?;
                let a = self.ram_addr(raw)?;
                let v = self.pop()?;
                self.ram[a..a + 4].copy_from_slice(&v.to_le_bytes());
            }
            0x08 => {
                let v = self.pop()?;
                self.output.push(v as u8);
            }
            0x1F => {
                let c = self.input.pop_front().ok_or(OracleStop::InputExhausted)?;
                self.data.push(c as u32);
            }
            other => return Err(OracleStop::Fault(format!("opcode {other:#04x}"))),
        }
        self.pc = next;
        self.retired += 1;
        Ok(())
    }
}
