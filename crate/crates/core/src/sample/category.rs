use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the ten driver-behaviour classes, `C0` through `C9`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Category(u8);

pub const NUM_CATEGORIES: usize = 10;

const DESCRIPTIONS: [&str; NUM_CATEGORIES] = [
    "Normal driving",
    "Texting with right hand",
    "Holding phone to right ear",
    "Texting with left hand",
    "Holding phone to left ear",
    "Adjusting multimedia",
    "Drinking water",
    "Reaching toward back seat",
    "Applying makeup",
    "Talking to passenger",
];

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category(0),
        Category(1),
        Category(2),
        Category(3),
        Category(4),
        Category(5),
        Category(6),
        Category(7),
        Category(8),
        Category(9),
    ];

    pub fn from_id(id: i64) -> Result<Self> {
        if (0..NUM_CATEGORIES as i64).contains(&id) {
            Ok(Category(id as u8))
        } else {
            Err(Error::UnknownCategory(id))
        }
    }

    /// Parses a code such as `"C3"`.
    pub fn from_code(code: &str) -> Result<Self> {
        code.strip_prefix('C')
            .filter(|d| d.len() == 1)
            .and_then(|d| d.parse::<i64>().ok())
            .ok_or_else(|| Error::Invalid(format!("not a category code: {code:?}")))
            .and_then(Self::from_id)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn code(self) -> String {
        format!("C{}", self.0)
    }

    pub fn description(self) -> &'static str {
        DESCRIPTIONS[self.id()]
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

impl TryFrom<i64> for Category {
    type Error = Error;
    fn try_from(id: i64) -> Result<Self> {
        Self::from_id(id)
    }
}

impl From<Category> for i64 {
    fn from(c: Category) -> i64 {
        c.0 as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_and_codes_are_bijective() {
        for (i, c) in Category::ALL.iter().enumerate() {
            assert_eq!(c.id(), i);
            assert_eq!(Category::from_code(&c.code()).unwrap(), *c);
            assert_eq!(Category::from_id(i as i64).unwrap(), *c);
        }
        let codes: std::collections::HashSet<_> = Category::ALL.iter().map(|c| c.code()).collect();
        assert_eq!(codes.len(), 10);
    }

    #[test]
    fn lookup_fails_outside_range() {
        assert!(matches!(Category::from_id(10), Err(Error::UnknownCategory(10))));
        assert!(matches!(Category::from_id(-1), Err(Error::UnknownCategory(-1))));
        assert!(Category::from_code("C10").is_err());
        assert!(Category::from_code("X1").is_err());
    }

    #[test]
    fn descriptions_follow_category_table() {
        assert_eq!(Category::ALL[0].description(), "Normal driving");
        assert_eq!(Category::ALL[2].description(), "Holding phone to right ear");
        assert_eq!(Category::ALL[7].description(), "Reaching toward back seat");
        assert_eq!(Category::ALL[9].description(), "Talking to passenger");
    }
}
