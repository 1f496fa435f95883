//! Example programs shipped with the toolchain.

/// Single-digit infix calculator (`+`, `-`, `*`).
pub const CALCULATOR: &str = include_str!("../programs/calc.asm");

/// Reads digits up to `#` and accumulates them into one number.
pub const MULTI_DIGIT: &str = include_str!("../programs/multidigit.asm");

/// 35 / 7 by repeated subtraction, using `lt_s` and `br_if`.
pub const DIVIDE: &str = include_str!("../programs/divide.asm");

/// RAM addresses used by [`DIVIDE`].
pub mod divide_layout {
    pub const REMAINDER: usize = 0;
    pub const DIVISOR: usize = 4;
    pub const QUOTIENT: usize = 8;
}

/// `(file name, source)` for every bundled program.
pub const ALL: &[(&str, &str)] = &[
    ("calc.asm", CALCULATOR),
    ("multidigit.asm", MULTI_DIGIT),
    ("divide.asm", DIVIDE),
];

/// [`DIVIDE`] with different operands baked in.
pub fn divide_source(dividend: i32, divisor: i32) -> String {
    DIVIDE
        .replacen("push 35         ; dividend", &format!("push {dividend} ; dividend"), 1)
        .replacen("push 7          ; divisor", &format!("push {divisor} ; divisor"), 1)
}
