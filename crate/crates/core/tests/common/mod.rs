#![allow(dead_code)]

pub mod gen;
pub mod oracle;

use dualstack::devices::{DeviceBus, RxScript};
use dualstack::emulator::{Machine, MachineConfig, Retired, RunLimits, StopReason};
use dualstack::isa::FlashImage;

pub const GOLDEN_CALC_HEX: &str = include_str!("../golden/calc.hex");

/// Runs `image` with `input` available from cycle 0, recording every retired
/// instruction.
pub fn run_logged(
    image: &FlashImage,
    input: &[u8],
    limits: &RunLimits,
    config: MachineConfig,
) -> (Machine, DeviceBus, StopReason, Vec<Retired>) {
    let mut bus = DeviceBus::with_script(image.clone(), RxScript::immediate(input));
    let mut machine = Machine::new(config);
    let mut log = Vec::new();
    let stop = machine.run(&mut bus, limits, |r, _| log.push(*r));
    (machine, bus, stop, log)
}
