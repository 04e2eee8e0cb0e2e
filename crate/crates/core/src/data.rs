//! Synthetic reference charts, the corruption operator, and dataset files.
//!
//! All sampling here uses integer draws from a ChaCha stream, so generated
//! corpora are identical on every platform.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::chartlang::{
    self, detokenize, execute, tokenize, ChartProgram, ChartType, ElementSet, PaletteColor, SubplotSpec, Value,
    Word, MAX_DIM,
};
use crate::error::{Error, Result};
use crate::seed::{self, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    fn subplot_range(self) -> (u8, u8) {
        match self {
            Difficulty::Easy => (1, 1),
            Difficulty::Medium => (1, 2),
            Difficulty::Hard => (2, 4),
        }
    }

    /// Probability (in quarters) that GRID / LEGEND is set.
    fn flag_quarters(self) -> u32 {
        match self {
            Difficulty::Easy => 1,
            Difficulty::Medium => 1,
            Difficulty::Hard => 2,
        }
    }

    fn data_len_range(self) -> (usize, usize) {
        match self {
            Difficulty::Easy => (2, 3),
            Difficulty::Medium => (2, 4),
            Difficulty::Hard => (2, 5),
        }
    }
}

/// Relative weights of the three difficulties in a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyMix {
    pub easy: u32,
    pub medium: u32,
    pub hard: u32,
}

impl Default for DifficultyMix {
    fn default() -> Self {
        DifficultyMix {
            easy: 6,
            medium: 3,
            hard: 1,
        }
    }
}

impl DifficultyMix {
    fn pick(&self, rng: &mut Rng) -> Difficulty {
        let total = self.easy + self.medium + self.hard;
        assert!(total > 0, "difficulty mix must have positive weight");
        let x = rng.gen_range(0..total);
        if x < self.easy {
            Difficulty::Easy
        } else if x < self.easy + self.medium {
            Difficulty::Medium
        } else {
            Difficulty::Hard
        }
    }
}

/// A reference chart to reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// Generator seed; doubles as the task id.
    pub seed: u64,
    pub difficulty: Difficulty,
    pub program: ChartProgram,
    pub reference: ElementSet,
}

impl Task {
    pub fn id(&self) -> u64 {
        self.seed
    }

    pub fn generate(seed: u64, difficulty: Difficulty) -> Task {
        let (program, reference) = gen_reference(seed, difficulty);
        Task {
            seed,
            difficulty,
            program,
            reference,
        }
    }
}

fn random_value(rng: &mut Rng) -> Value {
    Value::from_steps(rng.gen_range(0..20)).expect("in range")
}

fn random_word(rng: &mut Rng) -> Word {
    Word::new(rng.gen_range(0..16)).expect("in range")
}

/// Draws an always-executable reference chart.
///
/// Subplot count follows the difficulty (1 / 1–2 / 2–4); layouts are uniform
/// over all grids with enough cells; subplots are listed in index order. A
/// 1×1 chart never carries both a title and a legend, so references are
/// overlap-free.
pub fn gen_reference(seed: u64, difficulty: Difficulty) -> (ChartProgram, ElementSet) {
    let mut rng = seed::stream(&[tag::GENERATE, seed]);
    let (lo, hi) = difficulty.subplot_range();
    let n = rng.gen_range(lo..=hi);
    let (rows, cols) = loop {
        let r = rng.gen_range(1..=MAX_DIM);
        let c = rng.gen_range(1..=MAX_DIM);
        if r * c >= n {
            break (r, c);
        }
    };
    let mut cells: Vec<u8> = (0..rows * cols).collect();
    cells.shuffle(&mut rng);
    let mut indices = cells[..n as usize].to_vec();
    indices.sort_unstable();

    let q = difficulty.flag_quarters();
    let (dlo, dhi) = difficulty.data_len_range();
    let subplots = indices
        .into_iter()
        .map(|index| {
            let chart_type = ChartType::ALL[rng.gen_range(0..4)];
            let color = PaletteColor::ALL[rng.gen_range(0..12)];
            let title = (rng.gen_range(0..2) == 0).then(|| random_word(&mut rng));
            let grid = rng.gen_range(0..4) < q;
            let mut legend = rng.gen_range(0..4) < q;
            if rows * cols == 1 && title.is_some() {
                legend = false;
            }
            let len = rng.gen_range(dlo..=dhi);
            let data = (0..len).map(|_| random_value(&mut rng)).collect();
            SubplotSpec {
                index,
                chart_type,
                color,
                title,
                grid,
                legend,
                data,
            }
        })
        .collect();
    let program = ChartProgram { rows, cols, subplots };
    let elements = execute(&program).expect("generated references execute");
    (program, elements)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edit {
    Color,
    Type,
    DataValue,
    Title,
    Flag,
    Layout,
}

const EDITS: [Edit; 6] = [Edit::Color, Edit::Type, Edit::DataValue, Edit::Title, Edit::Flag, Edit::Layout];

fn other<T: Copy + PartialEq>(all: &[T], current: T, rng: &mut Rng) -> T {
    loop {
        let x = all[rng.gen_range(0..all.len())];
        if x != current {
            return x;
        }
    }
}

/// Applies `n_edits` seeded edits. Each edit changes exactly one field:
/// a colour, a chart type, one data value, a title (dropped, replaced, or
/// added), a GRID/LEGEND flag, or one layout dimension (kept within 1..=3,
/// which may push an index out of range).
pub fn corrupt(program: &ChartProgram, n_edits: usize, seed: u64) -> ChartProgram {
    let mut rng = seed::stream(&[tag::CORRUPT, seed]);
    let mut p = program.clone();
    if p.subplots.is_empty() {
        return p;
    }
    for _ in 0..n_edits {
        let edit = EDITS[rng.gen_range(0..EDITS.len())];
        let k = rng.gen_range(0..p.subplots.len());
        let sp = &mut p.subplots[k];
        match edit {
            Edit::Color => sp.color = other(&PaletteColor::ALL, sp.color, &mut rng),
            Edit::Type => sp.chart_type = other(&ChartType::ALL, sp.chart_type, &mut rng),
            Edit::DataValue => {
                if sp.data.is_empty() {
                    sp.data.push(random_value(&mut rng));
                } else {
                    let i = rng.gen_range(0..sp.data.len());
                    let cur = sp.data[i];
                    let all: Vec<Value> = (0..20).filter_map(Value::from_steps).collect();
                    sp.data[i] = other(&all, cur, &mut rng);
                }
            }
            Edit::Title => {
                sp.title = match sp.title {
                    Some(w) if rng.gen_range(0..2) == 0 => {
                        let all: Vec<Word> = (0..16).filter_map(Word::new).collect();
                        Some(other(&all, w, &mut rng))
                    }
                    Some(_) => None,
                    None => Some(random_word(&mut rng)),
                }
            }
            Edit::Flag => {
                if rng.gen_range(0..2) == 0 {
                    sp.grid = !sp.grid;
                } else {
                    sp.legend = !sp.legend;
                }
            }
            Edit::Layout => {
                let dims: Vec<u8> = (1..=MAX_DIM).collect();
                if rng.gen_range(0..2) == 0 {
                    p.rows = other(&dims, p.rows, &mut rng);
                } else {
                    p.cols = other(&dims, p.cols, &mut rng);
                }
            }
        }
    }
    p
}

/// Seed layout of the default splits: train and eval use disjoint ranges.
pub fn split_seed(master: u64, split: Split, i: u64) -> u64 {
    let base = master.wrapping_mul(1 << 33);
    match split {
        Split::Train => base.wrapping_add(i),
        Split::Eval => base.wrapping_add((1 << 32) + i),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

pub fn generate_split(master: u64, split: Split, n: usize, mix: &DifficultyMix) -> Vec<Task> {
    (0..n as u64)
        .map(|i| {
            let s = split_seed(master, split, i);
            let difficulty = mix.pick(&mut seed::stream(&[tag::GENERATE, s, 1]));
            Task::generate(s, difficulty)
        })
        .collect()
}

pub const DEFAULT_TRAIN_SIZE: usize = 2000;
pub const DEFAULT_EVAL_SIZE: usize = 200;

#[derive(Debug, Serialize, Deserialize)]
struct TaskRecord {
    seed: u64,
    difficulty: Difficulty,
    program: String,
    elements: ElementSet,
}

pub fn write_tasks(path: &Path, tasks: &[Task]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for t in tasks {
        let rec = TaskRecord {
            seed: t.seed,
            difficulty: t.difficulty,
            program: detokenize(&t.program.serialize()),
            elements: t.reference.clone(),
        };
        let line = serde_json::to_string(&rec).expect("task record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a task file, re-executing every program and checking it against the
/// stored element set.
pub fn read_tasks(path: &Path) -> Result<Vec<Task>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tasks = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let tokens = tokenize(&rec.program).map_err(|e| malformed(e.to_string()))?;
        let program = chartlang::parse(&tokens).map_err(|e| malformed(e.to_string()))?;
        let elements = execute(&program).map_err(|e| malformed(e.to_string()))?;
        if elements != rec.elements {
            return Err(malformed("element set does not match program".into()));
        }
        tasks.push(Task {
            seed: rec.seed,
            difficulty: rec.difficulty,
            program,
            reference: elements,
        });
    }
    Ok(tasks)
}
