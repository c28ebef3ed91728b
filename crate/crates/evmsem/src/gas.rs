//! Gas schedule and cost functions.
//!
//! Every cost is computed in 512-bit precision ([`Gas`]) and compared with the
//! available gas before anything is subtracted, so no formula can wrap.

use crate::words::{Word256, Word512};

/// Wide integer used for gas costs.
pub type Gas = Word512;

/// The fixed cost table. There is exactly one instance, [`SCHEDULE`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GasSchedule {
    pub very_low: u64,
    pub low: u64,
    pub base: u64,
    pub exp: u64,
    pub exp_byte: u64,
    pub sha3: u64,
    pub sha3_word: u64,
    pub copy_word: u64,
    pub balance: u64,
    pub ext_code: u64,
    pub blockhash: u64,
    pub sload: u64,
    pub sstore_set: u64,
    pub sstore_reset: u64,
    pub sstore_refund: u64,
    pub jump: u64,
    pub jumpi: u64,
    pub jumpdest: u64,
    pub addmod: u64,
    pub log: u64,
    pub log_data: u64,
    pub log_topic: u64,
    pub selfdestruct: u64,
    pub selfdestruct_new_account: u64,
    pub selfdestruct_refund: u64,
    pub create: u64,
    pub code_deposit: u64,
    pub call: u64,
    pub call_value_base: u64,
    pub call_value_cap: u64,
    pub call_new_account: u64,
    pub call_stipend: u64,
    pub memory_word: u64,
    pub quad_divisor: u64,
    pub tx_call: u64,
    pub tx_create: u64,
}

pub const SCHEDULE: GasSchedule = GasSchedule {
    very_low: 3,
    low: 5,
    base: 2,
    exp: 10,
    exp_byte: 10,
    sha3: 30,
    sha3_word: 6,
    copy_word: 3,
    balance: 400,
    ext_code: 700,
    blockhash: 20,
    sload: 200,
    sstore_set: 20000,
    sstore_reset: 5000,
    sstore_refund: 15000,
    jump: 8,
    jumpi: 10,
    jumpdest: 1,
    addmod: 8,
    log: 375,
    log_data: 8,
    log_topic: 375,
    selfdestruct: 5000,
    selfdestruct_new_account: 37000,
    selfdestruct_refund: 24000,
    create: 32000,
    code_deposit: 200,
    call: 700,
    call_value_base: 6500,
    call_value_cap: 9000,
    call_new_account: 25000,
    call_stipend: 2300,
    memory_word: 3,
    quad_divisor: 512,
    tx_call: 21000,
    tx_create: 53000,
};

pub fn gas(v: u64) -> Gas {
    Gas::from_u64(v)
}

pub fn wide(w: &Word256) -> Gas {
    w.resize()
}

/// Active words after touching `size` bytes at `offset`.
pub fn mem_ext(i: &Word256, offset: &Word256, size: &Word256) -> Gas {
    let i = wide(i);
    if size.is_zero() {
        return i;
    }
    let end = wide(offset).wrapping_add(wide(size));
    i.max(end.div_ceil_u64(32))
}

fn mem_total(a: &Gas) -> Gas {
    // a is at most 2^257, so a*a fits in 512 bits
    let (q, _) = a.wrapping_mul(*a).div_rem_u64(SCHEDULE.quad_divisor);
    a.wrapping_mul(gas(SCHEDULE.memory_word)).wrapping_add(q)
}

/// Cost of growing memory from `aw` to `aw2` active words (`aw2 >= aw`).
pub fn c_mem(aw: &Gas, aw2: &Gas) -> Gas {
    mem_total(aw2).saturating_sub(mem_total(aw))
}

/// Fixed part of a call's cost: the base fee plus value-transfer and new-account surcharges.
pub fn c_base(va: &Word256, flag: bool) -> Gas {
    let mut c = SCHEDULE.call;
    if !va.is_zero() {
        c += SCHEDULE.call_value_base;
    }
    if !flag {
        c += SCHEDULE.call_new_account;
    }
    gas(c)
}

/// Gas handed to a callee. `flag` is false when the target account does not exist.
pub fn c_gascap(va: &Word256, flag: bool, g: &Word256, available: &Word256) -> Gas {
    let mut c_ex = SCHEDULE.call;
    if !va.is_zero() {
        c_ex += SCHEDULE.call_value_cap;
    }
    if !flag {
        c_ex += SCHEDULE.call_new_account;
    }
    let c_ex = Word256::from_u64(c_ex);
    let g = wide(g);
    let capped = if c_ex > *available { g } else { g.min(wide(&all_but_one_64th(&available.wrapping_sub(c_ex)))) };
    let stipend = if va.is_zero() { 0 } else { SCHEDULE.call_stipend };
    capped.wrapping_add(gas(stipend))
}

/// `g - floor(g / 64)`.
pub fn all_but_one_64th(g: &Word256) -> Word256 {
    g.wrapping_sub(g.div_rem_u64(64).0)
}

/// Cost of `EXP`: a fixed part plus a per-byte part for the exponent.
pub fn exp_cost(exponent: &Word256) -> Gas {
    let bytes = exponent.to_be_minimal().len() as u64;
    if bytes == 0 {
        gas(SCHEDULE.exp)
    } else {
        gas(SCHEDULE.exp + SCHEDULE.exp_byte * bytes)
    }
}

/// `per_word * ceil(size / 32)`.
pub fn word_cost(per_word: u64, size: &Word256) -> Gas {
    wide(size).div_ceil_u64(32).wrapping_mul(gas(per_word))
}

/// Whether a step with cost `c` may run: enough gas, and the machine stack
/// stays below 1024 entries after the step.
pub fn valid(available: &Word256, c: &Gas, stack_after: usize) -> bool {
    wide(available) >= *c && stack_after < 1024
}
