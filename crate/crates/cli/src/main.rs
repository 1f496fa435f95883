use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "dstack", version, about = "Dual-stack soft-core toolchain: assembler, disassembler and emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    /// Raw bytes, no header.
    Raw,
    /// Whitespace-separated hex bytes.
    Hexdump,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// Pick from the extension: `.asm` source, `.hex` hexdump, anything else raw.
    Auto,
    Raw,
    Hexdump,
    Asm,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble a source file into a flash image.
    Asm {
        source: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(short, long, value_enum, default_value_t = ImageFormat::Raw)]
        format: ImageFormat,
    },
    /// Print the assembly listing of an image.
    Disasm {
        image: PathBuf,
        #[arg(short, long, value_enum, default_value_t = InputFormat::Auto)]
        format: InputFormat,
    },
    /// Execute an image on the emulator.
    Run(commands::RunArgs),
    /// Write the bundled example programs.
    Examples {
        /// Destination directory.
        #[arg(short, long, default_value = ".")]
        dir: PathBuf,
    },
    /// Print the UART line levels for one byte as CSV.
    Waveform {
        /// Byte value: decimal, 0x-hex, or a single character.
        byte: String,
        #[arg(long, default_value_t = dualstack::devices::DEFAULT_CLOCK_HZ)]
        clock_hz: u64,
        #[arg(long, default_value_t = dualstack::devices::DEFAULT_UART_DIVISOR)]
        uart_divisor: u32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Asm {
            source,
            output,
            format,
        } => commands::cmd_asm(&source, output.as_deref(), format),
        Command::Disasm { image, format } => commands::cmd_disasm(&image, format),
        Command::Run(args) => commands::cmd_run(&args),
        Command::Examples { dir } => commands::cmd_examples(&dir),
        Command::Waveform {
            byte,
            clock_hz,
            uart_divisor,
        } => commands::cmd_waveform(&byte, clock_hz, uart_divisor),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
