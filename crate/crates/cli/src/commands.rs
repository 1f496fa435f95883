use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

use dualstack::assembler::{assemble, disassemble};
use dualstack::devices::{
    uart_waveform, DeviceBus, FlashModel, RxInput, RxScript, UartModel, DEFAULT_CLOCK_HZ,
    DEFAULT_FLASH_LATENCY, DEFAULT_UART_DIVISOR,
};
use dualstack::emulator::{
    report_mips, trace_line, InputExhaustedPolicy, Machine, MachineConfig, RunLimits, RunOutcome,
    StackMode, StopReason, TrapKind,
};
use dualstack::isa::{emit_hexdump, parse_hexdump, FlashImage};
use dualstack::programs;

use crate::{ImageFormat, InputFormat};

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Image to run (raw, hexdump, or assembly source).
    pub image: PathBuf,
    #[arg(short, long, value_enum, default_value_t = InputFormat::Auto)]
    pub format: InputFormat,
    #[arg(long, default_value_t = 100_000_000)]
    pub max_cycles: u64,
    #[arg(long, default_value_t = DEFAULT_CLOCK_HZ, value_parser = clap::value_parser!(u64).range(1..))]
    pub clock_hz: u64,
    /// Cycles per flash byte read.
    #[arg(long, default_value_t = DEFAULT_FLASH_LATENCY)]
    pub flash_latency: u32,
    /// Clock cycles per UART bit.
    #[arg(long, default_value_t = DEFAULT_UART_DIVISOR)]
    pub uart_divisor: u32,
    /// Timed receive script, one `<cycle>:<byte>` per line.
    #[arg(long, conflicts_with_all = ["input", "interactive"])]
    pub script: Option<PathBuf>,
    /// Receive data available from cycle 0.
    #[arg(long, conflicts_with = "interactive")]
    pub input: Option<String>,
    /// Feed standard input to KEY and stream UART output live.
    #[arg(long)]
    pub interactive: bool,
    /// Trap on stack overflow and underflow instead of wrapping.
    #[arg(long)]
    pub strict_stacks: bool,
    /// Keep waiting in KEY once the input runs out, until the cycle limit.
    #[arg(long)]
    pub block_on_eof: bool,
    /// Print one trace line per retired instruction to standard error.
    #[arg(long)]
    pub trace: bool,
    /// Stop before fetching this address (decimal or 0x-hex); repeatable.
    #[arg(long = "break", value_parser = parse_address)]
    pub breakpoints: Vec<u32>,
}

fn parse_address(text: &str) -> Result<u32, String> {
    let value = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => text.parse(),
    }
    .map_err(|e| format!("invalid address `{text}`: {e}"))?;
    if value >= 1 << dualstack::isa::ADDRESS_BITS {
        return Err(format!("address `{text}` exceeds 24 bits"));
    }
    Ok(value)
}

fn read_source(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn assemble_file(path: &Path) -> Result<FlashImage> {
    let source = read_source(path)?;
    assemble(&source).map_err(|e| anyhow!("{}:{}: {}", path.display(), e.line, e.kind))
}

fn load_image(path: &Path, format: InputFormat) -> Result<FlashImage> {
    let format = match format {
        InputFormat::Auto => match path.extension().and_then(|e| e.to_str()) {
            Some("asm") => InputFormat::Asm,
            Some("hex") => InputFormat::Hexdump,
            _ => InputFormat::Raw,
        },
        other => other,
    };
    match format {
        InputFormat::Asm => assemble_file(path),
        InputFormat::Hexdump => parse_hexdump(&read_source(path)?)
            .with_context(|| format!("parsing {}", path.display())),
        _ => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            FlashImage::new(bytes).with_context(|| path.display().to_string())
        }
    }
}

pub fn cmd_asm(source: &Path, output: Option<&Path>, format: ImageFormat) -> Result<()> {
    let image = assemble_file(source)?;
    let bytes = match format {
        ImageFormat::Raw => image.into_bytes(),
        ImageFormat::Hexdump => emit_hexdump(&image).into_bytes(),
    };
    match output {
        Some(path) => {
            fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?
        }
        None => io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

pub fn cmd_disasm(path: &Path, format: InputFormat) -> Result<()> {
    let image = load_image(path, format)?;
    let listing = disassemble(&image).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    io::stdout().write_all(listing.as_bytes())?;
    Ok(())
}

pub fn cmd_examples(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, source) in programs::ALL {
        let path = dir.join(name);
        fs::write(&path, source).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn parse_byte(text: &str) -> Result<u8> {
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        return u8::from_str_radix(hex, 16).with_context(|| format!("invalid byte `{text}`"));
    }
    if let Ok(v) = text.parse::<u8>() {
        return Ok(v);
    }
    match text.as_bytes() {
        [c] => Ok(*c),
        _ => bail!("invalid byte `{text}`: expected 0-255, 0x-hex, or one character"),
    }
}

pub fn cmd_waveform(byte: &str, clock_hz: u64, divisor: u32) -> Result<()> {
    if clock_hz == 0 || divisor == 0 {
        bail!("clock and divisor must be nonzero");
    }
    let wave = uart_waveform(parse_byte(byte)?, clock_hz as f64, divisor);
    print!("{}", wave.to_csv());
    Ok(())
}

fn summary(outcome: &RunOutcome, clock_hz: u64) -> String {
    let state = &outcome.state;
    format!(
        "--- run summary ---\ncycles: {}\nretired: {}\nmips: {:.3} @ {} Hz\nstop: {}\n",
        state.cycle,
        state.retired,
        report_mips(outcome, clock_hz as f64),
        clock_hz,
        outcome.stop
    )
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let image = load_image(&args.image, args.format)?;
    let flash = FlashModel::with_latency(image, args.flash_latency)?;
    let rx = if args.interactive {
        RxInput::Live(Box::new(io::stdin()))
    } else {
        let script = match (&args.script, &args.input) {
            (Some(path), _) => RxScript::parse(&read_source(path)?)
                .with_context(|| format!("parsing {}", path.display()))?,
            (None, Some(text)) => RxScript::immediate(text.as_bytes()),
            (None, None) => RxScript::default(),
        };
        RxInput::Script(script.entries().iter().copied().collect())
    };
    let mut bus = DeviceBus::new(flash, UartModel::with_input(args.uart_divisor, rx)?);

    let config = MachineConfig {
        stack_mode: if args.strict_stacks {
            StackMode::Strict
        } else {
            StackMode::Faithful
        },
        input_exhausted: if args.block_on_eof {
            InputExhaustedPolicy::Block
        } else {
            InputExhaustedPolicy::Trap
        },
        ..MachineConfig::default()
    };
    let limits = RunLimits {
        max_cycles: args.max_cycles,
        breakpoints: args.breakpoints.iter().copied().collect(),
    };
    let mut machine = Machine::new(config);
    let mut stdout = io::stdout().lock();
    let mut stderr = io::stderr().lock();
    let trace = args.trace;

    let stop = if args.interactive {
        // step by hand so output reaches the console before KEY blocks
        let mut sent = 0;
        let mut resumed = false;
        loop {
            let state = machine.state();
            if let Some(trap) = machine.trap() {
                break StopReason::Trapped(trap.clone());
            }
            if state.fsm == dualstack::emulator::FsmState::Halted {
                break StopReason::Halted;
            }
            if resumed
                && state.fsm == dualstack::emulator::FsmState::Fetch
                && limits.breakpoints.contains(&state.pc)
            {
                break StopReason::Breakpoint(state.pc);
            }
            if state.cycle >= limits.max_cycles {
                break StopReason::CycleLimit;
            }
            if let Some(r) = machine.step(&mut bus) {
                resumed = true;
                if trace {
                    writeln!(stderr, "{}", trace_line(&r, machine.state()))?;
                }
                let log = bus.uart.tx_log();
                if log.len() > sent {
                    let bytes: Vec<u8> = log[sent..].iter().map(|t| t.byte).collect();
                    stdout.write_all(&bytes)?;
                    stdout.flush()?;
                    sent = log.len();
                }
            }
        }
    } else {
        let mut trace_err = None;
        let stop = machine.run(&mut bus, &limits, |r, s| {
            if trace && trace_err.is_none() {
                trace_err = writeln!(stderr, "{}", trace_line(r, s)).err();
            }
        });
        if let Some(e) = trace_err {
            return Err(e.into());
        }
        stdout.write_all(&bus.uart.output())?;
        stop
    };

    let outcome = RunOutcome {
        state: machine.into_state(),
        stop,
    };
    write!(stdout, "\n{}", summary(&outcome, args.clock_hz))?;
    stdout.flush()?;

    match outcome.trap() {
        Some(trap) if trap.kind != TrapKind::InputExhausted => Err(anyhow!("trap: {trap}")),
        _ => Ok(()),
    }
}
