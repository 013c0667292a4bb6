//! Maximal-length linear-feedback shift registers.
//!
//! A Fibonacci LFSR of width `w` holds a nonzero `w`-bit state. Each step
//! XORs the tapped stage bits into a feedback bit, shifts the register right,
//! and inserts the feedback at the top. Taps are written as exponents of the
//! feedback polynomial, so tap `t` reads stage bit `w - t` and the degree tap
//! `w` reads bit 0, the stage about to fall out. When the polynomial is
//! primitive the register walks through all `2^w - 1` nonzero states before
//! repeating, which makes a single integer seed enough to reproduce a long
//! pseudo-random index sequence.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Narrowest supported register.
pub const MIN_WIDTH: u32 = 4;
/// Widest supported register. States fit in a `u32` with room to spare.
pub const MAX_WIDTH: u32 = 24;

/// Feedback taps giving a maximal-length sequence for each supported width.
///
/// One entry per width in `MIN_WIDTH..=MAX_WIDTH`; every tap set is verified
/// maximal by the test suite by walking the full period.
const DEFAULT_TAPS: [&[u32]; (MAX_WIDTH - MIN_WIDTH + 1) as usize] = [
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 6, 4, 1],
    &[13, 4, 3, 1],
    &[14, 5, 3, 1],
    &[15, 14],
    &[16, 15, 13, 4],
    &[17, 14],
    &[18, 11],
    &[19, 6, 2, 1],
    &[20, 17],
    &[21, 19],
    &[22, 21],
    &[23, 18],
    &[24, 23, 22, 17],
];

/// Errors from building, validating, stepping, or parsing register specs.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LfsrError {
    #[error("register width {0} outside supported range {MIN_WIDTH}..={MAX_WIDTH}")]
    WidthOutOfRange(u32),
    #[error("tap {tap} outside 1..={width}")]
    TapOutOfRange { tap: u32, width: u32 },
    #[error("tap set must contain the degree tap {0}")]
    MissingDegreeTap(u32),
    #[error("tap set is empty")]
    EmptyTaps,
    #[error("seed 0 is a fixed point; the register would never leave the all-zero state")]
    ZeroSeed,
    #[error("seed {seed:#x} does not fit in {width} bits")]
    SeedTooWide { seed: u32, width: u32 },
    #[error("taps {taps:?} reach only {period} of {expected} states; polynomial is not primitive")]
    NonMaximal {
        taps: Vec<u32>,
        period: u64,
        expected: u64,
    },
    #[error("cannot parse register spec {input:?}: {reason}")]
    Parse { input: String, reason: String },
}

/// A register configuration: width, feedback taps, and starting state.
///
/// The text form is `w=<width>,taps=<t1>+<t2>+...,seed=<hex>`, for example
/// `w=4,taps=4+3,seed=0x1`. The seed is always hexadecimal; the `0x` prefix
/// is optional on input and printed on output.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LfsrSpec {
    width: u32,
    taps: Vec<u32>,
    seed: u32,
}

impl LfsrSpec {
    /// Builds a spec after structural checks: width in range, taps in
    /// `1..=width` including the degree tap, seed nonzero and within width.
    ///
    /// Taps are stored sorted descending with duplicates removed. This does
    /// not verify the period; call [`validate`](Self::validate) for that.
    pub fn new(width: u32, taps: &[u32], seed: u32) -> Result<Self, LfsrError> {
        if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
            return Err(LfsrError::WidthOutOfRange(width));
        }
        if taps.is_empty() {
            return Err(LfsrError::EmptyTaps);
        }
        let mut taps: Vec<u32> = taps.to_vec();
        taps.sort_unstable_by(|a, b| b.cmp(a));
        taps.dedup();
        for &tap in &taps {
            if tap == 0 || tap > width {
                return Err(LfsrError::TapOutOfRange { tap, width });
            }
        }
        if taps[0] != width {
            return Err(LfsrError::MissingDegreeTap(width));
        }
        if seed == 0 {
            return Err(LfsrError::ZeroSeed);
        }
        if seed >> width != 0 {
            return Err(LfsrError::SeedTooWide { seed, width });
        }
        Ok(LfsrSpec { width, taps, seed })
    }

    /// Builds a spec with the verified maximal tap set for `width`.
    pub fn with_default_taps(width: u32, seed: u32) -> Result<Self, LfsrError> {
        Self::new(width, default_taps(width)?, seed)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Taps sorted descending, degree tap first.
    pub fn taps(&self) -> &[u32] {
        &self.taps
    }

    pub fn seed(&self) -> u32 {
        self.seed
    }

    /// Bit mask with a 1 at stage bit `width - t` for each tap `t`.
    pub fn feedback_mask(&self) -> u32 {
        self.taps
            .iter()
            .fold(0u32, |m, &t| m | 1 << (self.width - t))
    }

    /// Number of distinct nonzero states, `2^width - 1`.
    pub fn max_period(&self) -> u64 {
        (1u64 << self.width) - 1
    }

    /// Steps until the register first returns to the seed state.
    ///
    /// Stepping is a bijection on nonzero states, so the walk from the seed
    /// is a pure cycle and this terminates within `2^width - 1` steps.
    pub fn period(&self) -> u64 {
        let mut lfsr = Lfsr::from_spec(self);
        loop {
            if lfsr.step() == self.seed {
                return lfsr.steps();
            }
        }
    }

    /// Checks that the tap set is primitive: the period from the seed must
    /// cover every nonzero state.
    pub fn validate(&self) -> Result<(), LfsrError> {
        let period = self.period();
        let expected = self.max_period();
        if period == expected {
            Ok(())
        } else {
            Err(LfsrError::NonMaximal {
                taps: self.taps.clone(),
                period,
                expected,
            })
        }
    }
}

impl fmt::Display for LfsrSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w={},taps=", self.width)?;
        for (i, tap) in self.taps.iter().enumerate() {
            if i > 0 {
                write!(f, "+")?;
            }
            write!(f, "{tap}")?;
        }
        write!(f, ",seed={:#x}", self.seed)
    }
}

/// Serializes as the canonical text form, e.g. `"w=4,taps=4+3,seed=0x1"`.
impl serde::Serialize for LfsrSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl FromStr for LfsrSpec {
    type Err = LfsrError;

    /// Parses the text form `w=<int>,taps=<int>+<int>...,seed=<hex>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| LfsrError::Parse {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let mut parts = s.split(',');
        let width_part = parts.next().ok_or_else(|| err("empty spec"))?;
        let taps_part = parts.next().ok_or_else(|| err("missing taps field"))?;
        let seed_part = parts.next().ok_or_else(|| err("missing seed field"))?;
        if parts.next().is_some() {
            return Err(err("trailing fields after seed"));
        }

        let width_str = width_part
            .strip_prefix("w=")
            .ok_or_else(|| err("expected w=<int> first"))?;
        let width: u32 = width_str
            .trim()
            .parse()
            .map_err(|_| err("width is not an integer"))?;

        let taps_str = taps_part
            .strip_prefix("taps=")
            .ok_or_else(|| err("expected taps=<int>+<int>... second"))?;
        let mut taps = Vec::new();
        for t in taps_str.split('+') {
            let tap: u32 = t
                .trim()
                .parse()
                .map_err(|_| err("tap is not an integer"))?;
            taps.push(tap);
        }

        let seed_str = seed_part
            .strip_prefix("seed=")
            .ok_or_else(|| err("expected seed=<hex> last"))?;
        let seed_str = seed_str.trim();
        let digits = seed_str
            .strip_prefix("0x")
            .or_else(|| seed_str.strip_prefix("0X"))
            .unwrap_or(seed_str);
        let seed =
            u32::from_str_radix(digits, 16).map_err(|_| err("seed is not a hex integer"))?;

        LfsrSpec::new(width, &taps, seed)
    }
}

/// The verified maximal tap set for `width`.
pub fn default_taps(width: u32) -> Result<&'static [u32], LfsrError> {
    if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
        return Err(LfsrError::WidthOutOfRange(width));
    }
    Ok(DEFAULT_TAPS[(width - MIN_WIDTH) as usize])
}

/// A running register: current state plus a step counter.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u32,
    mask: u32,
    width: u32,
    steps: u64,
}

impl Lfsr {
    pub fn from_spec(spec: &LfsrSpec) -> Self {
        Lfsr {
            state: spec.seed(),
            mask: spec.feedback_mask(),
            width: spec.width(),
            steps: 0,
        }
    }

    /// Advances one step and returns the new state.
    ///
    /// Because every tap set contains the degree tap, stepping is invertible
    /// and a nonzero state can never reach zero.
    #[inline]
    pub fn step(&mut self) -> u32 {
        debug_assert!(self.state != 0, "all-zero state is a lockup");
        let feedback = (self.state & self.mask).count_ones() & 1;
        self.state = (self.state >> 1) | (feedback << (self.width - 1));
        self.steps += 1;
        self.state
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    /// Steps taken since construction.
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Maps a register state to an index in `0..n_items`.
///
/// Uses the top of the state: `floor(state * n_items / 2^width)`. The map is
/// monotone in `state`, and because states span `1..2^width` it reaches every
/// index as long as `n_items <= 2^width - 1`.
#[inline]
pub fn map_to_index(state: u32, width: u32, n_items: usize) -> usize {
    debug_assert!(n_items >= 1);
    debug_assert!((n_items as u64) < (1u64 << width) || width >= 32);
    ((state as u64 * n_items as u64) >> width) as usize
}
