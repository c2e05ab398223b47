//! 3x3 grid discretization of normalized surface positions.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowBand {
    Top,
    Center,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColBand {
    Left,
    Center,
    Right,
}

/// One of the nine grid cells. Displays as "row column" ("top left",
/// "bottom center", ...) with the doubly-centered cell collapsed to
/// "center".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub row: RowBand,
    pub col: ColBand,
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = match self.row {
            RowBand::Top => "top",
            RowBand::Center => "center",
            RowBand::Bottom => "bottom",
        };
        let col = match self.col {
            ColBand::Left => "left",
            ColBand::Center => "center",
            ColBand::Right => "right",
        };
        if self.row == RowBand::Center && self.col == ColBand::Center {
            write!(f, "center")
        } else {
            write!(f, "{row} {col}")
        }
    }
}

impl GridCell {
    pub const ALL: [&'static str; 9] = [
        "top left",
        "top center",
        "top right",
        "center left",
        "center",
        "center right",
        "bottom left",
        "bottom center",
        "bottom right",
    ];

    pub fn parse(s: &str) -> Option<GridCell> {
        let (row, col) = match s {
            "center" => (RowBand::Center, ColBand::Center),
            other => {
                let (r, c) = other.split_once(' ')?;
                let row = match r {
                    "top" => RowBand::Top,
                    "center" => RowBand::Center,
                    "bottom" => RowBand::Bottom,
                    _ => return None,
                };
                let col = match c {
                    "left" => ColBand::Left,
                    "center" => ColBand::Center,
                    "right" => ColBand::Right,
                    _ => return None,
                };
                (row, col)
            }
        };
        Some(GridCell { row, col })
    }
}

/// Maps a normalized point to its grid cell. Inputs are clamped to
/// `[0, 1]^2` first; values exactly on a third boundary belong to the
/// higher-index band.
pub fn grid_cell(p: [f64; 2]) -> GridCell {
    let x = p[0].clamp(0.0, 1.0);
    let y = p[1].clamp(0.0, 1.0);
    let col = if x < 1.0 / 3.0 {
        ColBand::Left
    } else if x < 2.0 / 3.0 {
        ColBand::Center
    } else {
        ColBand::Right
    };
    let row = if y < 1.0 / 3.0 {
        RowBand::Top
    } else if y < 2.0 / 3.0 {
        RowBand::Center
    } else {
        RowBand::Bottom
    };
    GridCell { row, col }
}
