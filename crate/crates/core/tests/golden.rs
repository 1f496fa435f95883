//! Calculator firmware: golden binary, symbol table, and behaviour.

mod common;

use common::oracle::{Oracle, OracleStop};
use common::{run_logged, GOLDEN_CALC_HEX};
use dualstack::assembler::{assemble, disassemble, scan_labels};
use dualstack::devices::{DeviceBus, RxScript};
use dualstack::emulator::{
    run, trace_line, InputExhaustedPolicy, MachineConfig, RunLimits, StopReason, TrapKind,
};
use dualstack::isa::{emit_hexdump, parse_hexdump};
use dualstack::programs::{self, divide_layout};
use rand::{Rng, SeedableRng};

#[test]
fn calculator_assembles_to_golden_hexdump() {
    let image = assemble(programs::CALCULATOR).unwrap();
    assert_eq!(image.len(), 168);
    assert_eq!(emit_hexdump(&image), GOLDEN_CALC_HEX);
    assert_eq!(parse_hexdump(GOLDEN_CALC_HEX).unwrap(), image);
}

#[test]
fn golden_hexdump_has_168_bytes() {
    // 10 full rows plus one row of 8
    let rows: Vec<usize> = GOLDEN_CALC_HEX.lines().map(|l| l.split(' ').count()).collect();
    assert_eq!(rows.len(), 11);
    assert!(rows[..10].iter().all(|&n| n == 16));
    assert_eq!(rows[10], 8);
    assert_eq!(parse_hexdump(GOLDEN_CALC_HEX).unwrap().len(), 168);
}

#[test]
fn calculator_symbols() {
    let syms = scan_labels(programs::CALCULATOR).unwrap();
    let table: Vec<(&str, u32)> = syms.iter().collect();
    assert_eq!(
        table,
        [("add_op", 0x5A), ("main", 0x00), ("mul_op", 0x8E), ("sub_op", 0x74)]
    );
}

#[test]
fn golden_image_disassembles_and_reassembles() {
    let image = parse_hexdump(GOLDEN_CALC_HEX).unwrap();
    let listing = disassemble(&image).unwrap();
    let mut lines = listing.lines().map(str::trim).filter(|l| !l.starts_with(':'));
    assert_eq!(lines.next(), Some("push 62"));
    assert_eq!(lines.next(), Some("print"));
    assert!(listing.contains(":L_00005a\n"));
    assert!(listing.contains("br_if :L_00008e"));
    assert_eq!(assemble(&listing).unwrap(), image);
}

fn calculator_session(input: &str) -> (String, StopReason) {
    let image = assemble(programs::CALCULATOR).unwrap();
    let mut bus = DeviceBus::with_script(image, RxScript::immediate(input.as_bytes()));
    let out = run(&mut bus, &RunLimits::cycles(10_000_000), MachineConfig::default());
    (String::from_utf8(bus.uart.output()).unwrap(), out.stop)
}

fn oracle_session(input: &str) -> String {
    let image = parse_hexdump(GOLDEN_CALC_HEX).unwrap();
    let mut oracle = Oracle::new(image.as_bytes(), input.as_bytes());
    assert_eq!(oracle.run(1_000_000), OracleStop::InputExhausted);
    String::from_utf8(oracle.output).unwrap()
}

#[test]
fn calculator_results() {
    for (input, result) in [("3+4", '7'), ("8-3", '5'), ("2*3", '6'), ("1+1", '2'), ("9*1", '9')] {
        let (out, stop) = calculator_session(input);
        assert_eq!(out, format!("> {input}\r\n{result}\r\n> "));
        assert_eq!(out, oracle_session(input));
        let StopReason::Trapped(trap) = stop else {
            panic!("expected input exhaustion, got {stop:?}");
        };
        assert_eq!(trap.kind, TrapKind::InputExhausted);
    }
}

#[test]
fn calculator_unknown_operator_reprompts() {
    let (out, _) = calculator_session("3?4");
    assert_eq!(out, "> 3?4\r\n> ");
    assert_eq!(out, oracle_session("3?4"));
}

#[test]
fn calculator_session_of_several_expressions() {
    let input = "3+48-32*3";
    let (out, _) = calculator_session(input);
    assert_eq!(out, "> 3+4\r\n7\r\n> 8-3\r\n5\r\n> 2*3\r\n6\r\n> ");
    assert_eq!(out, oracle_session(input));
}

#[test]
fn calculator_blocks_until_cycle_limit() {
    let image = assemble(programs::CALCULATOR).unwrap();
    let mut bus = DeviceBus::with_script(image, RxScript::immediate(b"3+4"));
    let config = MachineConfig {
        input_exhausted: InputExhaustedPolicy::Block,
        ..MachineConfig::default()
    };
    let out = run(&mut bus, &RunLimits::cycles(1_000_000), config);
    assert_eq!(out.stop, StopReason::CycleLimit);
    assert_eq!(out.state.cycle, 1_000_000);
    assert_eq!(bus.uart.output(), b"> 3+4\r\n7\r\n> ");
}

#[test]
fn breakpoint_on_add_branch() {
    let image = assemble(programs::CALCULATOR).unwrap();
    let limits = RunLimits::cycles(1_000_000).with_breakpoint(0x5A);
    let (machine, bus, stop, log) = run_logged(&image, b"1+1", &limits, MachineConfig::default());
    assert_eq!(stop, StopReason::Breakpoint(0x5A));
    assert_eq!(machine.state().pc, 0x5A);
    assert_eq!(log.last().unwrap().pc, 0x35, "taken br_if :add_op");
    assert_eq!(bus.uart.output(), b"> 1+1\r\n");
}

#[test]
fn first_trace_line() {
    let image = assemble(programs::CALCULATOR).unwrap();
    let mut bus = DeviceBus::with_script(image, RxScript::default());
    let mut machine = dualstack::Machine::new(MachineConfig::default());
    let mut first = None;
    machine.run(&mut bus, &RunLimits::cycles(17), |r, s| {
        first.get_or_insert_with(|| trace_line(r, s));
    });
    assert_eq!(
        first.unwrap(),
        "cycle=17 pc=000000 op=push imm=0000003e sp=0 tos=0000003e rsp=7"
    );
}

#[test]
fn calculator_reassembly_is_comment_insensitive() {
    let stripped: String = programs::CALCULATOR
        .lines()
        .map(|l| l.split(';').next().unwrap().trim_end())
        .filter(|l| !l.trim().is_empty())
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(assemble(&stripped).unwrap(), assemble(programs::CALCULATOR).unwrap());
}

fn run_divide(dividend: i32, divisor: i32) -> (dualstack::MachineState, Vec<u8>) {
    let image = assemble(&programs::divide_source(dividend, divisor)).unwrap();
    let mut bus = DeviceBus::with_script(image, RxScript::default());
    let out = run(&mut bus, &RunLimits::cycles(60_000), MachineConfig::default());
    assert_eq!(out.stop, StopReason::CycleLimit);
    (out.state, bus.uart.output())
}

#[test]
fn divide_prints_quotient() {
    let (state, out) = run_divide(35, 7);
    assert_eq!(out, b"5\r\n");
    assert_eq!(state.ram_word(divide_layout::QUOTIENT), Some(5));
    assert_eq!(state.ram_word(divide_layout::REMAINDER), Some(0));
    assert_eq!(state.ram_word(divide_layout::DIVISOR), Some(7));
}

#[test]
fn divide_matches_integer_division() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed);
    for _ in 0..40 {
        let divisor = rng.gen_range(1..=50);
        let dividend = rng.gen_range(0..=divisor * 9 + divisor - 1);
        let (state, out) = run_divide(dividend, divisor);
        let q = (dividend / divisor) as u32;
        let r = (dividend % divisor) as u32;
        assert_eq!(state.ram_word(divide_layout::QUOTIENT), Some(q), "{dividend}/{divisor}");
        assert_eq!(state.ram_word(divide_layout::REMAINDER), Some(r), "{dividend}%{divisor}");
        assert_eq!(out, [b'0' + q as u8, b'\r', b'\n']);
    }
}

#[test]
fn multidigit_accumulates() {
    let image = assemble(programs::MULTI_DIGIT).unwrap();
    let limits = RunLimits::cycles(200_000);
    let mut bus = DeviceBus::with_script(image, RxScript::immediate(b"123#"));
    let mut machine = dualstack::Machine::new(MachineConfig::default());
    let mut trace = Vec::new();
    let stop = machine.run(&mut bus, &limits, |r, s| trace.push(trace_line(r, s)));
    assert_eq!(stop, StopReason::CycleLimit);
    assert!(trace.iter().any(|l| l.contains("op=drop") && l.ends_with("tos=0000007b rsp=7")));
    assert_eq!(machine.state().data.top(), 123);
    assert_eq!(machine.state().ram_word(0), Some(123));
    assert_eq!(bus.uart.output(), b"123#\r\n");
}

#[test]
fn multidigit_wraps_modulo_2_32() {
    let image = assemble(programs::MULTI_DIGIT).unwrap();
    let mut bus = DeviceBus::with_script(image, RxScript::immediate(b"4294967297#"));
    let out = run(&mut bus, &RunLimits::cycles(500_000), MachineConfig::default());
    assert_eq!(out.state.ram_word(0), Some(1));
}
