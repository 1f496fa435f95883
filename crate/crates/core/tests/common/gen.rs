//! Random program generators for property tests.

#![allow(dead_code)]

use dualstack::isa::{FlashImage, Instruction, Opcode};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random image that decodes cleanly, with every branch target landing on an
/// instruction start or the end of the image.
pub fn random_image<R: Rng>(rng: &mut R, max_instrs: usize) -> FlashImage {
    let n = rng.gen_range(0..=max_instrs);
    let ops: Vec<Opcode> = (0..n).map(|_| *Opcode::ALL.choose(rng).unwrap()).collect();
    let mut starts = Vec::with_capacity(n + 1);
    let mut at = 0u32;
    for op in &ops {
        starts.push(at);
        at += op.encoded_len() as u32;
    }
    starts.push(at);
    let mut bytes = Vec::new();
    for op in ops {
        let imm = if op.is_branch() {
            Some(*starts.choose(rng).unwrap())
        } else if op.has_immediate() {
            Some(rng.gen())
        } else {
            None
        };
        Instruction::new(op, imm).unwrap().encode_into(&mut bytes);
    }
    FlashImage::new(bytes).unwrap()
}

/// A straight-line program (plus forward `br_if` skips) that keeps the data
/// stack between 0 and 8 entries and only touches aligned in-range RAM, so the
/// emulator and the reference interpreter must agree exactly.
///
/// Returns the source and how many `key` instructions it executes at most.
pub fn random_program<R: Rng>(rng: &mut R, chunks: usize) -> (String, usize) {
    let mut src = String::new();
    let mut depth = 0usize;
    let mut keys = 0;
    let mut skip = 0;
    let word = |rng: &mut R| -> i64 {
        match rng.gen_range(0..4) {
            0 => rng.gen_range(-3..=3),
            1 => i32::MIN as i64,
            _ => rng.gen::<u32>() as i64,
        }
    };
    for _ in 0..chunks {
        let choice = rng.gen_range(0..12);
        match choice {
            0 if depth < 8 => {
                src += &format!("push {}\n", word(rng));
                depth += 1;
            }
            1 if depth >= 1 => {
                let op = ["not", "eqz"].choose(rng).unwrap();
                src += &format!("{op}\n");
            }
            2 if (1..8).contains(&depth) => {
                src += "dup\n";
                depth += 1;
            }
            3 if depth >= 2 => {
                let op = ["add", "sub", "mul", "and", "or", "eq", "lt_s", "gt_s"]
                    .choose(rng)
                    .unwrap();
                src += &format!("{op}\n");
                depth -= 1;
            }
            4 if depth >= 2 => src += "swap\n",
            5 if (2..8).contains(&depth) => {
                src += "over\n";
                depth += 1;
            }
            6 if depth >= 1 => {
                src += ["drop\n", "print\n"].choose(rng).unwrap();
                depth -= 1;
            }
            7 if depth <= 6 => {
                let addr = rng.gen_range(0..256) * 4;
                src += &format!("push {}\npush {addr}\nstore\n", word(rng));
            }
            8 if depth <= 7 => {
                let addr = rng.gen_range(0..256) * 4;
                src += &format!("push {addr}\nload\n");
                depth += 1;
            }
            9 if depth < 8 => {
                src += "key\n";
                keys += 1;
                depth += 1;
            }
            10 if depth <= 7 => {
                let cond = rng.gen_range(0..2);
                src += &format!("push {cond}\nbr_if :skip{skip}\npush 7\nprint\n:skip{skip}\n");
                skip += 1;
            }
            11 if depth < 8 => {
                src += &format!("push {}\nprint\n", rng.gen_range(0..256));
            }
            _ => {}
        }
    }
    // stack-neutral tail so a trailing skip label still has an instruction
    src += if depth == 0 { "push 0\ndrop\n" } else { "not\nnot\n" };
    (src, keys)
}
