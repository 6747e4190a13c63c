//! 16-bit ROFM control words and periodic schedule tables.
//!
//! ```text
//!  15    11 10   7 6   5 4    1  0
//! | Rx Ctrl |  Sum | Buf | Tx Ctrl | 0 |  C-type
//! | Rx Ctrl |    Func    | Tx Ctrl | 1 |  M-type
//! ```
//!
//! Field meanings:
//! * Rx: accept bits N, E, S, W (bits 15..12) and local PE (bit 11).
//! * Tx: send bits N, E, S, W (bits 4..1).
//! * Sum: accumulate-enable, operand from buffer, buffer push, buffer pop (bits 10..7).
//! * Buffer: 00 none, 01 read, 10 write, 11 read-then-write.
//! * Func: 3-bit opcode (Add, Act, Cmp, Mul, Bp; 5..=7 reserved) and a
//!   3-bit parameter. Parameters are opcode specific, see [`FuncCode`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::IsaError;

pub const OPC_CTYPE: u16 = 0;
pub const OPC_MTYPE: u16 = 1;

/// Entries a schedule table can hold.
pub const SCHEDULE_CAPACITY: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    pub fn opposite(self) -> Dir {
        match self {
            Dir::North => Dir::South,
            Dir::East => Dir::West,
            Dir::South => Dir::North,
            Dir::West => Dir::East,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dir::North => "N",
            Dir::East => "E",
            Dir::South => "S",
            Dir::West => "W",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn tx_bit(self) -> u8 {
        0b1000 >> (self as u8)
    }

    fn rx_bit(self) -> u8 {
        0b10000 >> (self as u8)
    }
}

/// Receive control: four direction-accept bits plus local-PE accept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RxCtrl(pub u8);

impl RxCtrl {
    pub const LOCAL: u8 = 0b00001;

    pub fn none() -> Self {
        Self(0)
    }

    pub fn with(self, d: Dir) -> Self {
        Self(self.0 | d.rx_bit())
    }

    pub fn with_local(self) -> Self {
        Self(self.0 | Self::LOCAL)
    }

    pub fn accepts(&self, d: Dir) -> bool {
        self.0 & d.rx_bit() != 0
    }

    pub fn local(&self) -> bool {
        self.0 & Self::LOCAL != 0
    }
}

/// Transmit control: four direction-send bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TxCtrl(pub u8);

impl TxCtrl {
    pub fn none() -> Self {
        Self(0)
    }

    pub fn with(self, d: Dir) -> Self {
        Self(self.0 | d.tx_bit())
    }

    pub fn sends(&self, d: Dir) -> bool {
        self.0 & d.tx_bit() != 0
    }

    pub fn any(&self) -> bool {
        self.0 != 0
    }

    pub fn dirs(&self) -> impl Iterator<Item = Dir> + '_ {
        Dir::ALL.into_iter().filter(|d| self.sends(*d))
    }
}

/// Sum control for C-type words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SumCtrl(pub u8);

impl SumCtrl {
    pub const ACCUMULATE: u8 = 0b1000;
    pub const FROM_BUFFER: u8 = 0b0100;
    pub const PUSH: u8 = 0b0010;
    pub const POP: u8 = 0b0001;

    pub fn has(&self, bit: u8) -> bool {
        self.0 & bit != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum BufferOp {
    #[default]
    None,
    Read,
    Write,
    ReadWrite,
}

impl BufferOp {
    fn bits(self) -> u16 {
        self as u16
    }

    fn from_bits(b: u16) -> Self {
        match b & 0b11 {
            0 => BufferOp::None,
            1 => BufferOp::Read,
            2 => BufferOp::Write,
            _ => BufferOp::ReadWrite,
        }
    }
}

/// ROFM computing function with its 3-bit parameter.
///
/// Parameter bits:
/// * `Act`: bit 0 ReLU, bit 1 apply the requantization shift.
/// * `Cmp` / `Mul`: bit 0 opens a pooling window, bit 1 closes it along
///   the row, bit 2 closes it along the column (emit).
/// * `Add`: bit 0 saturating residual add.
/// * `Bp`: bit 0 source is the RIFM shortcut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FuncCode {
    Add(u8),
    Act(u8),
    Cmp(u8),
    Mul(u8),
    Bp(u8),
    /// Reserved opcode; raw 6-bit field preserved.
    Invalid(u8),
}

impl FuncCode {
    pub const WINDOW_OPEN: u8 = 0b001;
    pub const WINDOW_ROW_END: u8 = 0b010;
    pub const WINDOW_EMIT: u8 = 0b100;
    pub const ACT_RELU: u8 = 0b001;
    pub const ACT_SHIFT: u8 = 0b010;
    pub const ADD_RESIDUAL: u8 = 0b001;
    pub const BP_SHORTCUT: u8 = 0b001;

    pub fn param(&self) -> u8 {
        match *self {
            FuncCode::Add(p)
            | FuncCode::Act(p)
            | FuncCode::Cmp(p)
            | FuncCode::Mul(p)
            | FuncCode::Bp(p) => p,
            FuncCode::Invalid(raw) => raw & 0b111,
        }
    }

    fn to_bits(self) -> Result<u16, IsaError> {
        let (op, p) = match self {
            FuncCode::Add(p) => (0u8, p),
            FuncCode::Act(p) => (1, p),
            FuncCode::Cmp(p) => (2, p),
            FuncCode::Mul(p) => (3, p),
            FuncCode::Bp(p) => (4, p),
            FuncCode::Invalid(raw) => return Err(IsaError::InvalidFunc(raw)),
        };
        check("func.param", p as u16, 3)?;
        Ok(((op as u16) << 3) | p as u16)
    }

    fn from_bits(bits: u8) -> Self {
        let p = bits & 0b111;
        match bits >> 3 {
            0 => FuncCode::Add(p),
            1 => FuncCode::Act(p),
            2 => FuncCode::Cmp(p),
            3 => FuncCode::Mul(p),
            4 => FuncCode::Bp(p),
            _ => FuncCode::Invalid(bits & 0b111111),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    CType {
        rx: RxCtrl,
        sum: SumCtrl,
        buffer: BufferOp,
        tx: TxCtrl,
    },
    MType {
        rx: RxCtrl,
        func: FuncCode,
        tx: TxCtrl,
    },
}

impl Instruction {
    /// C-type word with every field cleared.
    pub const NOP: Instruction = Instruction::CType {
        rx: RxCtrl(0),
        sum: SumCtrl(0),
        buffer: BufferOp::None,
        tx: TxCtrl(0),
    };

    pub fn rx(&self) -> RxCtrl {
        match *self {
            Instruction::CType { rx, .. } | Instruction::MType { rx, .. } => rx,
        }
    }

    pub fn tx(&self) -> TxCtrl {
        match *self {
            Instruction::CType { tx, .. } | Instruction::MType { tx, .. } => tx,
        }
    }

    pub fn is_mtype(&self) -> bool {
        matches!(self, Instruction::MType { .. })
    }
}

fn check(field: &'static str, value: u16, width: u32) -> Result<(), IsaError> {
    if value >> width != 0 {
        Err(IsaError::FieldOverflow {
            field,
            value,
            width,
        })
    } else {
        Ok(())
    }
}

pub fn encode(instr: &Instruction) -> Result<u16, IsaError> {
    match *instr {
        Instruction::CType {
            rx,
            sum,
            buffer,
            tx,
        } => {
            check("rx_ctrl", rx.0 as u16, 5)?;
            check("sum", sum.0 as u16, 4)?;
            check("tx_ctrl", tx.0 as u16, 4)?;
            Ok(((rx.0 as u16) << 11)
                | ((sum.0 as u16) << 7)
                | (buffer.bits() << 5)
                | ((tx.0 as u16) << 1)
                | OPC_CTYPE)
        }
        Instruction::MType { rx, func, tx } => {
            check("rx_ctrl", rx.0 as u16, 5)?;
            check("tx_ctrl", tx.0 as u16, 4)?;
            let f = func.to_bits()?;
            Ok(((rx.0 as u16) << 11) | (f << 5) | ((tx.0 as u16) << 1) | OPC_MTYPE)
        }
    }
}

/// Total: every word decodes. Reserved opcodes become [`FuncCode::Invalid`].
pub fn decode(word: u16) -> Instruction {
    let rx = RxCtrl((word >> 11) as u8 & 0x1f);
    let tx = TxCtrl((word >> 1) as u8 & 0xf);
    if word & 1 == OPC_CTYPE {
        Instruction::CType {
            rx,
            sum: SumCtrl((word >> 7) as u8 & 0xf),
            buffer: BufferOp::from_bits(word >> 5),
            tx,
        }
    } else {
        Instruction::MType {
            rx,
            func: FuncCode::from_bits((word >> 5) as u8 & 0x3f),
            tx,
        }
    }
}

/// Periodic instruction table indexed by a free-running counter.
///
/// Stored as runs of `(word, repeat)`. A table with no repeats is the
/// plain layout; periods longer than [`SCHEDULE_CAPACITY`] are accepted
/// as long as the run count fits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleTable {
    runs: Vec<(Instruction, u32)>,
    starts: Vec<u32>,
    period: u32,
}

impl ScheduleTable {
    /// Uncompressed table; one stored entry per cycle of the period.
    pub fn plain(entries: Vec<Instruction>) -> Result<Self, IsaError> {
        if entries.is_empty() {
            return Err(IsaError::EmptyTable);
        }
        if entries.len() > SCHEDULE_CAPACITY {
            return Err(IsaError::Capacity {
                needed: entries.len(),
                capacity: SCHEDULE_CAPACITY,
            });
        }
        Ok(Self::from_runs_unchecked(
            entries.into_iter().map(|e| (e, 1)).collect(),
        ))
    }

    /// Plain layout when it fits, run-length compressed otherwise.
    pub fn build(entries: Vec<Instruction>) -> Result<Self, IsaError> {
        if entries.len() <= SCHEDULE_CAPACITY {
            return Self::plain(entries);
        }
        let mut runs: Vec<(Instruction, u32)> = Vec::new();
        for e in entries {
            match runs.last_mut() {
                Some((last, n)) if *last == e => *n += 1,
                _ => runs.push((e, 1)),
            }
        }
        Self::from_runs(runs)
    }

    pub fn from_runs(runs: Vec<(Instruction, u32)>) -> Result<Self, IsaError> {
        if runs.is_empty() || runs.iter().any(|r| r.1 == 0) {
            return Err(IsaError::EmptyTable);
        }
        if runs.len() > SCHEDULE_CAPACITY {
            return Err(IsaError::Capacity {
                needed: runs.len(),
                capacity: SCHEDULE_CAPACITY,
            });
        }
        Ok(Self::from_runs_unchecked(runs))
    }

    fn from_runs_unchecked(runs: Vec<(Instruction, u32)>) -> Self {
        let mut starts = Vec::with_capacity(runs.len());
        let mut acc = 0;
        for r in &runs {
            starts.push(acc);
            acc += r.1;
        }
        Self {
            runs,
            starts,
            period: acc,
        }
    }

    pub fn period(&self) -> u32 {
        self.period
    }

    pub fn runs(&self) -> &[(Instruction, u32)] {
        &self.runs
    }

    pub fn stored_entries(&self) -> usize {
        self.runs.len()
    }

    pub fn is_compressed(&self) -> bool {
        self.runs.iter().any(|r| r.1 > 1)
    }

    /// Entry at `cycle mod period`.
    pub fn fetch(&self, cycle: u64) -> Result<Instruction, IsaError> {
        if self.period == 0 {
            return Err(IsaError::EmptyTable);
        }
        let phase = (cycle % self.period as u64) as u32;
        let i = match self.starts.binary_search(&phase) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Ok(self.runs[i].0)
    }

    /// Expands to one instruction per cycle of the period.
    pub fn expanded(&self) -> Vec<Instruction> {
        self.runs
            .iter()
            .flat_map(|(w, n)| std::iter::repeat(*w).take(*n as usize))
            .collect()
    }

    /// Dump lines: `chip:x,y index word[*repeat]`.
    pub fn dump(&self, chip: usize, x: usize, y: usize) -> Result<String, IsaError> {
        let mut s = String::new();
        for (i, (w, n)) in self.runs.iter().enumerate() {
            let word = encode(w)?;
            if *n == 1 {
                s.push_str(&format!("{chip}:{x},{y} {i:03} {word:04x}\n"));
            } else {
                s.push_str(&format!("{chip}:{x},{y} {i:03} {word:04x}*{n}\n"));
            }
        }
        Ok(s)
    }
}

/// Parses dump lines into `((chip, x, y), table)` groups in file order.
/// A table ends when the location changes or the index restarts at 0.
pub fn parse_dump(text: &str) -> Result<Vec<((usize, usize, usize), ScheduleTable)>, IsaError> {
    let mut out: Vec<((usize, usize, usize), Vec<(Instruction, u32)>)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: &str| IsaError::Dump {
            line: ln + 1,
            message: message.to_string(),
        };
        let mut parts = line.split_whitespace();
        let loc = parts.next().ok_or_else(|| bad("missing location"))?;
        let idx: usize = parts
            .next()
            .ok_or_else(|| bad("missing index"))?
            .parse()
            .map_err(|_| bad("bad index"))?;
        let word = parts.next().ok_or_else(|| bad("missing word"))?;
        let (chip, xy) = loc.split_once(':').ok_or_else(|| bad("location needs chip:x,y"))?;
        let (x, y) = xy.split_once(',').ok_or_else(|| bad("location needs chip:x,y"))?;
        let key = (
            chip.parse().map_err(|_| bad("bad chip"))?,
            x.parse().map_err(|_| bad("bad x"))?,
            y.parse().map_err(|_| bad("bad y"))?,
        );
        let (w, n) = match word.split_once('*') {
            Some((w, n)) => (w, n.parse::<u32>().map_err(|_| bad("bad repeat"))?),
            None => (word, 1),
        };
        if w.len() != 4 {
            return Err(bad("word must be 4 hex digits"));
        }
        let w = u16::from_str_radix(w, 16).map_err(|_| bad("bad hex word"))?;
        match out.last_mut() {
            Some((k, runs)) if *k == key && idx != 0 => runs.push((decode(w), n)),
            _ => out.push((key, vec![(decode(w), n)])),
        }
    }
    out.into_iter()
        .map(|(k, runs)| Ok((k, ScheduleTable::from_runs(runs)?)))
        .collect()
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match encode(self) {
            Ok(w) => write!(f, "{w:04x}"),
            Err(_) => write!(f, "????"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_words() {
        assert_eq!(encode(&Instruction::NOP).unwrap(), 0x0000);
        let m = Instruction::MType {
            rx: RxCtrl(0),
            func: FuncCode::Add(0),
            tx: TxCtrl(0),
        };
        assert_eq!(encode(&m).unwrap(), 0x0001);
        assert_eq!(decode(0x0000), Instruction::NOP);
    }

    #[test]
    fn rx_field_extraction() {
        for low in [0u16, 0x07ff, 0x0001, 0x0555] {
            let w = (0b10101 << 11) | low;
            assert_eq!(decode(w).rx(), RxCtrl(0b10101));
        }
    }

    #[test]
    fn field_overflow_rejected() {
        let bad = Instruction::CType {
            rx: RxCtrl(0x20),
            sum: SumCtrl(0),
            buffer: BufferOp::None,
            tx: TxCtrl(0),
        };
        assert!(matches!(encode(&bad), Err(IsaError::FieldOverflow { field: "rx_ctrl", .. })));
        let bad = Instruction::MType {
            rx: RxCtrl(0),
            func: FuncCode::Cmp(8),
            tx: TxCtrl(0),
        };
        assert!(encode(&bad).is_err());
    }

    #[test]
    fn reserved_opcode_is_visible() {
        let w = (0b110_101u16 << 5) | 1;
        assert_eq!(
            decode(w),
            Instruction::MType {
                rx: RxCtrl(0),
                func: FuncCode::Invalid(0b110101),
                tx: TxCtrl(0)
            }
        );
        assert!(encode(&decode(w)).is_err());
    }

    #[test]
    fn direction_bits() {
        let rx = RxCtrl::none().with(Dir::North).with_local();
        assert_eq!(rx.0, 0b10001);
        let tx = TxCtrl::none().with(Dir::West);
        assert_eq!(tx.0, 0b0001);
        assert!(tx.sends(Dir::West) && !tx.sends(Dir::East));
    }

    fn nth(i: u16) -> Instruction {
        decode(i << 1)
    }

    #[test]
    fn fetch_periodicity() {
        let t = ScheduleTable::plain((0..4).map(nth).collect()).unwrap();
        assert_eq!(t.fetch(0).unwrap(), t.fetch(4).unwrap());
        let one = ScheduleTable::plain(vec![nth(3)]).unwrap();
        for c in 0..10 {
            assert_eq!(one.fetch(c).unwrap(), nth(3));
        }
    }

    #[test]
    fn compressed_fetch_matches_expansion() {
        let mut entries = vec![nth(1); 224];
        entries.extend(vec![nth(2); 226]);
        let t = ScheduleTable::build(entries.clone()).unwrap();
        assert_eq!(t.period(), 450);
        assert!(t.is_compressed());
        assert_eq!(t.stored_entries(), 2);
        for c in 0..900u64 {
            assert_eq!(t.fetch(c).unwrap(), entries[(c % 450) as usize]);
        }
        assert!(ScheduleTable::plain(entries).is_err());
    }

    #[test]
    fn dump_roundtrip() {
        let t = ScheduleTable::build(vec![nth(5); 300]).unwrap();
        let u = ScheduleTable::plain((0..7).map(nth).collect()).unwrap();
        let text = format!("{}{}", t.dump(1, 2, 3).unwrap(), u.dump(0, 4, 5).unwrap());
        let back = parse_dump(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, (1, 2, 3));
        assert_eq!(back[0].1.expanded(), t.expanded());
        assert_eq!(back[1].1.expanded(), u.expanded());
    }

    #[test]
    fn empty_table_rejected() {
        assert!(matches!(ScheduleTable::plain(vec![]), Err(IsaError::EmptyTable)));
    }
}
