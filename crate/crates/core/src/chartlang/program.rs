//! ChartLang abstract syntax, the parser, and the serializers.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::vocab::{self, Token};
use super::ExecError;

pub const MAX_DIM: u8 = 3;
pub const MAX_INDEX: u8 = 8;
pub const MAX_DATA_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartType {
    Bar,
    Line,
    Scatter,
    Pie,
}

impl ChartType {
    pub const ALL: [ChartType; 4] = [ChartType::Bar, ChartType::Line, ChartType::Scatter, ChartType::Pie];

    pub fn token(self) -> Token {
        Token(vocab::TYPE_BASE + self as u16)
    }

    pub fn from_token(t: Token) -> Option<Self> {
        let off = t.0.checked_sub(vocab::TYPE_BASE)?;
        Self::ALL.get(off as usize).copied()
    }

    pub fn name(self) -> &'static str {
        self.token().as_str()
    }
}

/// The fixed twelve-colour palette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaletteColor {
    Red,
    Green,
    Blue,
    Orange,
    Purple,
    Cyan,
    Magenta,
    Yellow,
    Black,
    Gray,
    Brown,
    Navy,
}

impl PaletteColor {
    pub const ALL: [PaletteColor; 12] = [
        PaletteColor::Red,
        PaletteColor::Green,
        PaletteColor::Blue,
        PaletteColor::Orange,
        PaletteColor::Purple,
        PaletteColor::Cyan,
        PaletteColor::Magenta,
        PaletteColor::Yellow,
        PaletteColor::Black,
        PaletteColor::Gray,
        PaletteColor::Brown,
        PaletteColor::Navy,
    ];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            PaletteColor::Red => [255, 0, 0],
            PaletteColor::Green => [0, 128, 0],
            PaletteColor::Blue => [0, 0, 255],
            PaletteColor::Orange => [255, 165, 0],
            PaletteColor::Purple => [128, 0, 128],
            PaletteColor::Cyan => [0, 255, 255],
            PaletteColor::Magenta => [255, 0, 255],
            PaletteColor::Yellow => [255, 255, 0],
            PaletteColor::Black => [0, 0, 0],
            PaletteColor::Gray => [128, 128, 128],
            PaletteColor::Brown => [165, 42, 42],
            PaletteColor::Navy => [0, 0, 128],
        }
    }

    pub fn token(self) -> Token {
        Token(vocab::COLOR_BASE + self as u16)
    }

    pub fn from_token(t: Token) -> Option<Self> {
        let off = t.0.checked_sub(vocab::COLOR_BASE)?;
        Self::ALL.get(off as usize).copied()
    }

    pub fn name(self) -> &'static str {
        self.token().as_str()
    }
}

/// A title word (one of sixteen).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word(u8);

impl Word {
    pub fn new(i: u8) -> Option<Self> {
        ((i as u16) < vocab::NUM_WORDS).then_some(Word(i))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn token(self) -> Token {
        Token(vocab::WORD_BASE + self.0 as u16)
    }

    pub fn from_token(t: Token) -> Option<Self> {
        let off = t.0.checked_sub(vocab::WORD_BASE)?;
        Word::new(u8::try_from(off).ok()?)
    }

    pub fn as_str(self) -> &'static str {
        self.token().as_str()
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        vocab::Vocabulary::get()
            .lookup(&s)
            .and_then(Word::from_token)
            .ok_or_else(|| serde::de::Error::custom(format!("not a title word: {s}")))
    }
}

/// A data value on the half-unit grid `0.0, 0.5, …, 9.5`, stored as its step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value(u8);

impl Value {
    pub const MAX: f64 = 9.5;

    pub fn from_steps(steps: u8) -> Option<Self> {
        ((steps as u16) < vocab::NUM_VALUES).then_some(Value(steps))
    }

    pub fn steps(self) -> u8 {
        self.0
    }

    pub fn get(self) -> f64 {
        self.0 as f64 * 0.5
    }

    pub fn token(self) -> Token {
        Token(vocab::VALUE_BASE + self.0 as u16)
    }

    pub fn from_token(t: Token) -> Option<Self> {
        let off = t.0.checked_sub(vocab::VALUE_BASE)?;
        Value::from_steps(u8::try_from(off).ok()?)
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.get())
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        let steps = v * 2.0;
        if steps.fract() != 0.0 || !(0.0..20.0).contains(&steps) {
            return Err(serde::de::Error::custom(format!("not a quantized value: {v}")));
        }
        Ok(Value(steps as u8))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubplotSpec {
    pub index: u8,
    pub chart_type: ChartType,
    pub color: PaletteColor,
    pub title: Option<Word>,
    pub grid: bool,
    pub legend: bool,
    pub data: Vec<Value>,
}

/// A parsed ChartLang program. May still fail at execution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChartProgram {
    pub rows: u8,
    pub cols: u8,
    pub subplots: Vec<SubplotSpec>,
}

impl ChartProgram {
    /// Tokens in listed subplot order.
    pub fn serialize(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(3 + self.subplots.len() * 16);
        out.extend([vocab::LAYOUT, vocab::digit(self.rows), vocab::digit(self.cols)]);
        for sp in &self.subplots {
            write_subplot(&mut out, sp);
        }
        out
    }

    /// Tokens with subplots sorted by index and flags in `TITLE GRID LEGEND` order.
    pub fn canonicalize(&self) -> Vec<Token> {
        let mut sorted = self.clone();
        sorted.subplots.sort_by_key(|s| s.index);
        sorted.serialize()
    }
}

impl fmt::Display for ChartProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&vocab::detokenize(&self.serialize()))
    }
}

pub(crate) fn write_subplot(out: &mut Vec<Token>, sp: &SubplotSpec) {
    out.extend([
        vocab::SUBPLOT,
        vocab::digit(sp.index),
        vocab::TYPE,
        sp.chart_type.token(),
        vocab::COLOR,
        sp.color.token(),
    ]);
    if let Some(w) = sp.title {
        out.extend([vocab::TITLE, w.token()]);
    }
    if sp.grid {
        out.push(vocab::GRID);
    }
    if sp.legend {
        out.push(vocab::LEGEND);
    }
    out.push(vocab::DATA);
    out.extend(sp.data.iter().map(|v| v.token()));
    out.push(vocab::END);
}

/// Parses a token sequence into a program.
///
/// The optional `TITLE w`, `GRID` and `LEGEND` clauses may appear in any order,
/// each at most once. `DATA` may be followed by zero to eight values; an empty
/// series is a runtime error, not a syntax error.
pub fn parse(tokens: &[Token]) -> Result<ChartProgram, ExecError> {
    Parser { tokens, pos: 0 }.program()
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn fail<T>(&self) -> Result<T, ExecError> {
        Err(ExecError::parse(self.pos))
    }

    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn expect(&mut self, t: Token) -> Result<(), ExecError> {
        if self.peek() == Some(t) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail()
        }
    }

    fn take<T>(&mut self, f: impl Fn(Token) -> Option<T>) -> Result<T, ExecError> {
        match self.peek().and_then(f) {
            Some(v) => {
                self.pos += 1;
                Ok(v)
            }
            None => self.fail(),
        }
    }

    fn program(mut self) -> Result<ChartProgram, ExecError> {
        self.expect(vocab::LAYOUT)?;
        let dim = |t| vocab::as_digit(t).filter(|d| (1..=MAX_DIM).contains(d));
        let rows = self.take(dim)?;
        let cols = self.take(dim)?;
        let mut subplots = vec![self.subplot()?];
        while self.pos < self.tokens.len() {
            subplots.push(self.subplot()?);
        }
        Ok(ChartProgram { rows, cols, subplots })
    }

    fn subplot(&mut self) -> Result<SubplotSpec, ExecError> {
        self.expect(vocab::SUBPLOT)?;
        let index = self.take(vocab::as_digit)?;
        self.expect(vocab::TYPE)?;
        let chart_type = self.take(ChartType::from_token)?;
        self.expect(vocab::COLOR)?;
        let color = self.take(PaletteColor::from_token)?;
        let (mut title, mut grid, mut legend) = (None, false, false);
        loop {
            match self.peek() {
                Some(vocab::TITLE) if title.is_none() => {
                    self.pos += 1;
                    title = Some(self.take(Word::from_token)?);
                }
                Some(vocab::GRID) if !grid => {
                    self.pos += 1;
                    grid = true;
                }
                Some(vocab::LEGEND) if !legend => {
                    self.pos += 1;
                    legend = true;
                }
                Some(vocab::DATA) => {
                    self.pos += 1;
                    break;
                }
                _ => return self.fail(),
            }
        }
        let mut data = Vec::new();
        while let Some(v) = self.peek().and_then(Value::from_token) {
            if data.len() == MAX_DATA_LEN {
                return self.fail();
            }
            data.push(v);
            self.pos += 1;
        }
        self.expect(vocab::END)?;
        Ok(SubplotSpec {
            index,
            chart_type,
            color,
            title,
            grid,
            legend,
            data,
        })
    }
}
