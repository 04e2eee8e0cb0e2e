//! The ChartLang interpreter: validates a program and extracts its visual elements.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::program::{write_subplot, ChartProgram, ChartType, PaletteColor, SubplotSpec, Value, Word};
use super::vocab::{self, Token};
use super::ExecError;

/// One rendered subplot, keyed by its grid cell in [`ElementSet::subplots`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedSubplot {
    pub chart_type: ChartType,
    pub color: PaletteColor,
    pub title: Option<Word>,
    pub grid: bool,
    pub legend: bool,
    pub data: Vec<Value>,
}

/// Everything the renderer would have drawn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementSet {
    pub layout: (u8, u8),
    pub subplots: BTreeMap<u8, RenderedSubplot>,
    pub overlap_count: u32,
}

impl ElementSet {
    /// Chart types, sorted (a multiset).
    pub fn types(&self) -> Vec<ChartType> {
        let mut v: Vec<_> = self.subplots.values().map(|s| s.chart_type).collect();
        v.sort();
        v
    }

    /// Title words, sorted (a multiset).
    pub fn texts(&self) -> Vec<Word> {
        let mut v: Vec<_> = self.subplots.values().filter_map(|s| s.title).collect();
        v.sort();
        v
    }

    /// sRGB colours, one per subplot in index order.
    pub fn colors(&self) -> Vec<[u8; 3]> {
        self.subplots.values().map(|s| s.color.rgb()).collect()
    }

    pub fn data_by_index(&self) -> BTreeMap<u8, Vec<f64>> {
        self.subplots
            .iter()
            .map(|(i, s)| (*i, s.data.iter().map(|v| v.get()).collect()))
            .collect()
    }

    pub fn style_flags(&self) -> BTreeMap<u8, (bool, bool)> {
        self.subplots.iter().map(|(i, s)| (*i, (s.grid, s.legend))).collect()
    }

    /// Token form used for task prompts and rendered-chart feedback:
    /// the layout, then every subplot in index order.
    pub fn to_tokens(&self) -> Vec<Token> {
        let mut out = vec![vocab::LAYOUT, vocab::digit(self.layout.0), vocab::digit(self.layout.1)];
        for (&index, s) in &self.subplots {
            write_subplot(
                &mut out,
                &SubplotSpec {
                    index,
                    chart_type: s.chart_type,
                    color: s.color,
                    title: s.title,
                    grid: s.grid,
                    legend: s.legend,
                    data: s.data.clone(),
                },
            );
        }
        out
    }

    /// Rebuilds the (canonical) program that renders this element set.
    pub fn to_program(&self) -> ChartProgram {
        ChartProgram {
            rows: self.layout.0,
            cols: self.layout.1,
            subplots: self
                .subplots
                .iter()
                .map(|(&index, s)| SubplotSpec {
                    index,
                    chart_type: s.chart_type,
                    color: s.color,
                    title: s.title,
                    grid: s.grid,
                    legend: s.legend,
                    data: s.data.clone(),
                })
                .collect(),
        }
    }
}

/// Runs a program. Subplots are checked in listed order and the first
/// violation wins; within one subplot the order is bounds, duplicate, data.
pub fn execute(program: &ChartProgram) -> Result<ElementSet, ExecError> {
    let cells = program.rows * program.cols;
    let mut subplots = BTreeMap::new();
    for sp in &program.subplots {
        if sp.index >= cells {
            return Err(ExecError::index(sp.index, program.rows, program.cols));
        }
        if subplots.contains_key(&sp.index) {
            return Err(ExecError::duplicate(sp.index));
        }
        if sp.data.is_empty() {
            return Err(ExecError::no_data(sp.index));
        }
        subplots.insert(
            sp.index,
            RenderedSubplot {
                chart_type: sp.chart_type,
                color: sp.color,
                title: sp.title,
                grid: sp.grid,
                legend: sp.legend,
                data: sp.data.clone(),
            },
        );
    }
    let overlap_count = overlap_count(program);
    Ok(ElementSet {
        layout: (program.rows, program.cols),
        subplots,
        overlap_count,
    })
}

/// Title collisions: pairs of titled subplots in one cell, plus every titled
/// subplot drawing a legend in a 1×1 layout (the legend lands on the title).
pub fn overlap_count(program: &ChartProgram) -> u32 {
    let mut titled_per_cell: HashMap<u8, u32> = HashMap::new();
    for sp in program.subplots.iter().filter(|s| s.title.is_some()) {
        *titled_per_cell.entry(sp.index).or_default() += 1;
    }
    let pairs: u32 = titled_per_cell.values().map(|&n| n * n.saturating_sub(1) / 2).sum();
    let single_cell = program.rows == 1 && program.cols == 1;
    let legend_hits = if single_cell {
        program.subplots.iter().filter(|s| s.title.is_some() && s.legend).count() as u32
    } else {
        0
    };
    pairs + legend_hits
}
