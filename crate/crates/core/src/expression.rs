use std::fmt;
use std::str::FromStr;

/// The six basic expressions, in the fixed class order used everywhere
/// (score-matrix columns, confusion-matrix rows, argmax tie-breaking).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expression {
    Anger,
    Disgust,
    Fear,
    Happiness,
    Sadness,
    Surprise,
}

pub const NUM_CLASSES: usize = 6;

impl Expression {
    pub const ALL: [Expression; NUM_CLASSES] = [
        Expression::Anger,
        Expression::Disgust,
        Expression::Fear,
        Expression::Happiness,
        Expression::Sadness,
        Expression::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Expression> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Expression::Anger => "AN",
            Expression::Disgust => "DI",
            Expression::Fear => "FE",
            Expression::Happiness => "HA",
            Expression::Sadness => "SA",
            Expression::Surprise => "SU",
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown expression label {0:?} (expected one of AN, DI, FE, HA, SA, SU)")]
pub struct UnknownExpression(pub String);

impl FromStr for Expression {
    type Err = UnknownExpression;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownExpression(s.to_string()))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
