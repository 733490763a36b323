use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Heartbeat class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    /// Normal beat.
    N,
    /// Ventricular premature beat.
    V,
    /// Supraventricular premature beat.
    S,
    /// Atrial fibrillation.
    A,
    /// Electromagnetic interference.
    E,
    /// Motion interference.
    Q,
}

impl Label {
    pub const ALL: [Label; 6] = [Label::N, Label::V, Label::S, Label::A, Label::E, Label::Q];

    pub fn code(self) -> char {
        match self {
            Label::N => 'N',
            Label::V => 'V',
            Label::S => 'S',
            Label::A => 'A',
            Label::E => 'E',
            Label::Q => 'Q',
        }
    }

    pub fn from_code(c: char) -> Option<Label> {
        Label::ALL.into_iter().find(|l| l.code() == c)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Label::from_code(c).ok_or_else(|| Error::data(format!("unknown label `{s}`"))),
            _ => Err(Error::data(format!("unknown label `{s}`"))),
        }
    }
}

/// Ordered label set; class index `i` of a model corresponds to `labels()[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taxonomy {
    /// N, V, S, A, E, Q.
    Full,
    /// N, V, S, A, Q with E folded into Q.
    Merged,
}

const MERGED: [Label; 5] = [Label::N, Label::V, Label::S, Label::A, Label::Q];

impl Taxonomy {
    pub fn labels(self) -> &'static [Label] {
        match self {
            Taxonomy::Full => &Label::ALL,
            Taxonomy::Merged => &MERGED,
        }
    }

    pub fn len(self) -> usize {
        self.labels().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn index_of(self, label: Label) -> Result<usize> {
        self.labels()
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| Error::data(format!("label {label} is not in the {self:?} taxonomy")))
    }

    pub fn label(self, index: usize) -> Result<Label> {
        self.labels()
            .get(index)
            .copied()
            .ok_or_else(|| Error::data(format!("class index {index} outside {self:?} taxonomy")))
    }

    /// Maps a full-view label into this view.
    pub fn project(self, label: Label) -> Label {
        match self {
            Taxonomy::Full => label,
            Taxonomy::Merged => merge_interference(label),
        }
    }
}

/// Folds electromagnetic interference into the motion-interference class.
pub fn merge_interference(label: Label) -> Label {
    match label {
        Label::E => Label::Q,
        other => other,
    }
}

/// String form of [`merge_interference`]; unknown codes are a data error.
pub fn merge_interference_code(code: &str) -> Result<Label> {
    code.parse::<Label>().map(merge_interference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_examples() {
        assert_eq!(merge_interference(Label::E), Label::Q);
        assert_eq!(merge_interference(Label::N), Label::N);
        assert_eq!(merge_interference(Label::Q), Label::Q);
        assert!(matches!(merge_interference_code("X"), Err(Error::Data(_))));
        assert_eq!(merge_interference_code("E").unwrap(), Label::Q);
    }

    #[test]
    fn taxonomy_sizes() {
        assert_eq!(Taxonomy::Full.len(), 6);
        assert_eq!(Taxonomy::Merged.len(), 5);
        assert!(Taxonomy::Merged.index_of(Label::E).is_err());
        for (i, &l) in Taxonomy::Full.labels().iter().enumerate() {
            assert_eq!(Taxonomy::Full.index_of(l).unwrap(), i);
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
        }
    }
}
